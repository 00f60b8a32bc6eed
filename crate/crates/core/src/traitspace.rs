//! Traits, demographic kernels and the standing model assumptions.
//!
//! A trait chain is declared by the user in fitness-rank order and then
//! validated; the order is never inferred. Competition and migration act only
//! between a trait and its immediate neighbours in the chain, so the
//! competition coefficient between two traits is decided structurally by
//! their rank distance, never by comparing trait values.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::diploid::Genotype;
use crate::error::{Error, Result};

/// Opaque trait identifier.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TraitId(pub String);

impl TraitId {
    pub fn new(id: impl Into<String>) -> Self {
        TraitId(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for TraitId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for TraitId {
    fn from(s: &str) -> Self {
        TraitId(s.to_owned())
    }
}

/// Per-capita demographic rates of one trait.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraitSpec {
    pub id: TraitId,
    /// Birth rate.
    pub b: f64,
    /// Death rate from aging.
    pub d: f64,
    /// Mutation intensity.
    pub mu: f64,
    /// Allele pair, when the trait is the image of a diploid genotype.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub genotype: Option<Genotype>,
}

impl TraitSpec {
    /// Builds a trait and checks that `b > 0`, `d >= 0`, `b - d > 0` and `mu >= 0`.
    pub fn new(id: impl Into<TraitId>, b: f64, d: f64, mu: f64) -> Result<Self> {
        let spec = TraitSpec {
            id: id.into(),
            b,
            d,
            mu,
            genotype: None,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn with_genotype(mut self, genotype: Genotype) -> Self {
        self.genotype = Some(genotype);
        self
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |reason: &str| {
            Err(Error::InvalidTrait {
                id: self.id.0.clone(),
                reason: reason.to_owned(),
            })
        };
        if !(self.b.is_finite() && self.d.is_finite() && self.mu.is_finite()) {
            return fail("rates must be finite");
        }
        if self.b <= 0.0 {
            return fail("birth rate must be positive");
        }
        if self.d < 0.0 {
            return fail("death rate must be nonnegative");
        }
        if self.b - self.d <= 0.0 {
            return fail("birth rate must exceed death rate");
        }
        if self.mu < 0.0 {
            return fail("mutation intensity must be nonnegative");
        }
        Ok(())
    }

    /// Intrinsic growth rate `b - d`.
    #[inline]
    pub fn growth(&self) -> f64 {
        self.b - self.d
    }
}

impl From<String> for TraitId {
    fn from(s: String) -> Self {
        TraitId(s)
    }
}

/// Nearest-neighbour competition and migration kernels.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    /// Competition felt from the trait's own type.
    pub alpha_self: f64,
    /// Competition felt from each fitness-adjacent type.
    pub alpha_neighbor: f64,
    /// Migration rate towards each fitness-adjacent type.
    pub m_neighbor: f64,
}

impl KernelSpec {
    pub fn new(alpha_self: f64, alpha_neighbor: f64, m_neighbor: f64) -> Result<Self> {
        let k = KernelSpec {
            alpha_self,
            alpha_neighbor,
            m_neighbor,
        };
        k.validate()?;
        Ok(k)
    }

    /// Unit competition everywhere, migration rate `m`.
    pub fn uniform(m_neighbor: f64) -> Self {
        KernelSpec {
            alpha_self: 1.0,
            alpha_neighbor: 1.0,
            m_neighbor,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let vals = [self.alpha_self, self.alpha_neighbor, self.m_neighbor];
        if vals.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidKernel("kernel values must be finite".into()));
        }
        if self.alpha_self <= 0.0 {
            return Err(Error::InvalidKernel("alpha_self must be positive".into()));
        }
        if self.alpha_neighbor < 0.0 || self.m_neighbor < 0.0 {
            return Err(Error::InvalidKernel(
                "alpha_neighbor and m_neighbor must be nonnegative".into(),
            ));
        }
        Ok(())
    }

    /// Smallest and largest nonzero competition coefficient.
    pub fn alpha_bounds(&self) -> (f64, f64) {
        let nz = [self.alpha_self, self.alpha_neighbor]
            .into_iter()
            .filter(|a| *a > 0.0);
        let (lo, hi) = nz.fold((f64::INFINITY, 0.0_f64), |(lo, hi), a| (lo.min(a), hi.max(a)));
        (lo, hi)
    }

    /// Competition coefficient for a given structural relation.
    #[inline]
    pub fn alpha(&self, relation: Relation) -> f64 {
        match relation {
            Relation::Same => self.alpha_self,
            Relation::Adjacent => self.alpha_neighbor,
            Relation::Distant => 0.0,
        }
    }
}

/// Structural relation between two traits of a chain.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Relation {
    Same,
    Adjacent,
    Distant,
}

impl Relation {
    pub fn between(i: usize, j: usize) -> Self {
        match i.abs_diff(j) {
            0 => Relation::Same,
            1 => Relation::Adjacent,
            _ => Relation::Distant,
        }
    }
}

/// Monomorphic equilibrium density `(b - d) / alpha_self`.
pub fn n_bar(t: &TraitSpec, k: &KernelSpec) -> Result<f64> {
    if !(t.b - t.d > 0.0) {
        return Err(Error::InvalidTrait {
            id: t.id.0.clone(),
            reason: "birth rate must exceed death rate".into(),
        });
    }
    if !(k.alpha_self > 0.0) {
        return Err(Error::InvalidKernel("alpha_self must be positive".into()));
    }
    Ok((t.b - t.d) / k.alpha_self)
}

/// Invasion fitness of `invader` in a resident population at equilibrium.
///
/// Returns `b(y) - d(y) - alpha(y, x) * n_bar(x)` with the competition
/// coefficient fixed by `relation`.
pub fn fitness(invader: &TraitSpec, resident: &TraitSpec, k: &KernelSpec, relation: Relation) -> f64 {
    let resident_eq = resident.growth() / k.alpha_self;
    invader.growth() - k.alpha(relation) * resident_eq
}

/// Outcome of the (B3) inequality at one chain index.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct B3Check {
    pub index: usize,
    /// `i / (b(x_i) - d(x_i))`
    pub lhs: f64,
    /// `sum_{j=1..i} 1 / f(x_j, x_{j-1})`
    pub rhs: f64,
    pub holds: bool,
}

/// A trait chain `x_0 < x_1 < ...` in increasing fitness rank.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OrderedTraitSpace {
    traits: Vec<TraitSpec>,
    kernels: KernelSpec,
}

impl OrderedTraitSpace {
    /// Builds a chain and validates the declared fitness order.
    pub fn new(traits: Vec<TraitSpec>, kernels: KernelSpec) -> Result<Self> {
        let ts = Self::unchecked_order(traits, kernels)?;
        ts.validate_order()?;
        Ok(ts)
    }

    /// Builds a chain, validating traits and kernels but not the order.
    pub fn unchecked_order(traits: Vec<TraitSpec>, kernels: KernelSpec) -> Result<Self> {
        if traits.is_empty() {
            return Err(Error::EmptyChain);
        }
        kernels.validate()?;
        for (i, t) in traits.iter().enumerate() {
            t.validate()?;
            if traits[..i].iter().any(|o| o.id == t.id) {
                return Err(Error::DuplicateTrait(t.id.0.clone()));
            }
        }
        Ok(OrderedTraitSpace { traits, kernels })
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.traits.len()
    }

    /// Always false; a chain holds at least one trait.
    pub fn is_empty(&self) -> bool {
        self.traits.is_empty()
    }

    pub fn traits(&self) -> &[TraitSpec] {
        &self.traits
    }

    #[inline]
    pub fn get(&self, rank: usize) -> &TraitSpec {
        &self.traits[rank]
    }

    pub fn kernels(&self) -> &KernelSpec {
        &self.kernels
    }

    pub fn top(&self) -> &TraitSpec {
        self.traits.last().expect("nonempty chain")
    }

    pub fn rank_of(&self, id: &TraitId) -> Option<usize> {
        self.traits.iter().position(|t| &t.id == id)
    }

    pub fn ids(&self) -> impl Iterator<Item = &TraitId> {
        self.traits.iter().map(|t| &t.id)
    }

    /// Equilibrium density of the trait at `rank`.
    #[inline]
    pub fn n_bar(&self, rank: usize) -> f64 {
        self.traits[rank].growth() / self.kernels.alpha_self
    }

    /// Invasion fitness of the trait at rank `invader` against rank `resident`.
    pub fn fitness(&self, invader: usize, resident: usize) -> f64 {
        fitness(
            &self.traits[invader],
            &self.traits[resident],
            &self.kernels,
            Relation::between(invader, resident),
        )
    }

    /// Checks strict increase of fitness along every adjacent pair.
    pub fn validate_order(&self) -> Result<()> {
        for i in 0..self.traits.len().saturating_sub(1) {
            let up = self.fitness(i + 1, i);
            let down = self.fitness(i, i + 1);
            if !(up > 0.0 && down < 0.0) {
                return Err(Error::OrderViolation {
                    lower: i,
                    upper: i + 1,
                    lower_id: self.traits[i].id.0.clone(),
                    upper_id: self.traits[i + 1].id.0.clone(),
                    up_fitness: up,
                    down_fitness: down,
                });
            }
        }
        Ok(())
    }

    /// Evaluates `i / (b_i - d_i) >= sum_{j=1..i} 1 / f(x_j, x_{j-1})` for every `i >= 2`.
    pub fn check_b3(&self) -> Vec<B3Check> {
        let mut out = Vec::new();
        let mut cumulative = 0.0;
        for i in 1..self.traits.len() {
            cumulative += 1.0 / self.fitness(i, i - 1);
            if i >= 2 {
                let lhs = i as f64 / self.traits[i].growth();
                out.push(B3Check {
                    index: i,
                    lhs,
                    rhs: cumulative,
                    holds: lhs >= cumulative,
                });
            }
        }
        out
    }

    /// Returns a chain with `spec` spliced in at `rank`; higher ranks shift up.
    pub fn inserted(&self, rank: usize, spec: TraitSpec) -> Result<Self> {
        if rank > self.traits.len() {
            return Err(Error::RankOutOfRange {
                rank,
                len: self.traits.len(),
            });
        }
        let mut traits = self.traits.clone();
        traits.insert(rank, spec);
        Self::new(traits, self.kernels)
    }

    /// A fresh identifier `x{n}` that does not collide with the chain.
    pub fn fresh_id(&self) -> TraitId {
        let mut n = self.traits.len();
        loop {
            let id = TraitId(format!("x{n}"));
            if self.rank_of(&id).is_none() {
                return id;
            }
            n += 1;
        }
    }
}

/// Verdicts of the standing assumptions for a chain.
#[derive(Clone, Debug, Serialize)]
pub struct AssumptionReport {
    /// (A1): every trait has `0 < b`, `0 <= d` and `b > d`; kernels bounded.
    pub a1: bool,
    /// (A2) on every interacting (adjacent) pair: opposite fitness signs.
    pub a2: Vec<PairVerdict>,
    /// (B1)/(C1): the declared order is a valid fitness order.
    pub b1: Result<(), String>,
    /// (B3) per index `i >= 2`.
    pub b3: Vec<B3Verdict>,
    pub alpha_bounds: (f64, f64),
    pub b_max: f64,
    pub d_max: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct PairVerdict {
    pub lower: usize,
    pub upper: usize,
    pub up_fitness: f64,
    pub down_fitness: f64,
    pub holds: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct B3Verdict {
    pub index: usize,
    pub lhs: f64,
    pub rhs: f64,
    pub holds: bool,
}

impl AssumptionReport {
    pub fn for_space(ts: &OrderedTraitSpace) -> Self {
        let a1 = ts.traits.iter().all(|t| t.validate().is_ok()) && ts.kernels.validate().is_ok();
        let a2 = (0..ts.len().saturating_sub(1))
            .map(|i| {
                let up = ts.fitness(i + 1, i);
                let down = ts.fitness(i, i + 1);
                PairVerdict {
                    lower: i,
                    upper: i + 1,
                    up_fitness: up,
                    down_fitness: down,
                    holds: up * down < 0.0,
                }
            })
            .collect();
        let b3 = ts
            .check_b3()
            .into_iter()
            .map(|c| B3Verdict {
                index: c.index,
                lhs: c.lhs,
                rhs: c.rhs,
                holds: c.holds,
            })
            .collect();
        AssumptionReport {
            a1,
            a2,
            b1: ts.validate_order().map_err(|e| e.to_string()),
            b3,
            alpha_bounds: ts.kernels.alpha_bounds(),
            b_max: ts.traits.iter().map(|t| t.b).fold(0.0, f64::max),
            d_max: ts.traits.iter().map(|t| t.d).fold(0.0, f64::max),
        }
    }
}
