//! Diploid single-locus layer: alleles, genotypes, the map Φ from genotypes to
//! traits, and the genotype substitution tree.
//!
//! Genotypes are embedded in an ordinary [`OrderedTraitSpace`] (each trait
//! carries its allele pair), so the microscopic engine and the equilibrium
//! rule are reused unchanged on the induced chain.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::equilibria::{equilibrium_configuration, Configuration, TstState};
use crate::error::{Error, Result};
use crate::rng::{categorical, exp_wait, SimRng};
use crate::traitspace::{KernelSpec, OrderedTraitSpace, TraitSpec};

/// Unordered allele pair `(A_i, A_j)`, stored with `i <= j`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(from = "(u32, u32)", into = "(u32, u32)")]
pub struct Genotype(u32, u32);

impl Genotype {
    pub fn new(i: u32, j: u32) -> Self {
        Genotype(i.min(j), i.max(j))
    }

    pub fn alleles(&self) -> (u32, u32) {
        (self.0, self.1)
    }

    pub fn is_homozygous(&self) -> bool {
        self.0 == self.1
    }

    pub fn contains(&self, allele: u32) -> bool {
        self.0 == allele || self.1 == allele
    }

    pub fn shares_allele(&self, other: &Genotype) -> bool {
        self.contains(other.0) || self.contains(other.1)
    }

    /// Copies of `allele` carried (0, 1 or 2).
    pub fn copies(&self, allele: u32) -> u32 {
        (self.0 == allele) as u32 + (self.1 == allele) as u32
    }
}

impl From<(u32, u32)> for Genotype {
    fn from((i, j): (u32, u32)) -> Self {
        Genotype::new(i, j)
    }
}

impl From<Genotype> for (u32, u32) {
    fn from(g: Genotype) -> Self {
        (g.0, g.1)
    }
}

impl fmt::Display for Genotype {
    /// Alleles are numbered from 1 in labels.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "A{}A{}", self.0 + 1, self.1 + 1)
    }
}

/// Number of unordered allele pairs over `n` alleles.
pub fn h(n: usize) -> usize {
    n * (n + 1) / 2
}

/// Every genotype over `n` alleles, lexicographic.
pub fn all_genotypes(n: usize) -> impl Iterator<Item = Genotype> {
    let n = n as u32;
    (0..n).flat_map(move |i| (i..n).map(move |j| Genotype(i, j)))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlleleSpace {
    names: Vec<String>,
}

impl AlleleSpace {
    pub fn new(names: Vec<String>) -> Result<Self> {
        if names.is_empty() {
            return Err(Error::InvalidParameter("allele space is empty".into()));
        }
        let mut seen = BTreeSet::new();
        for n in &names {
            if !seen.insert(n) {
                return Err(Error::DuplicateTrait(n.clone()));
            }
        }
        Ok(AlleleSpace { names })
    }

    /// `A1 .. An`.
    pub fn numbered(n: usize) -> Self {
        AlleleSpace {
            names: (1..=n).map(|i| format!("A{i}")).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    fn push_fresh(&mut self) {
        let mut k = self.names.len() + 1;
        while self.names.iter().any(|n| *n == format!("A{k}")) {
            k += 1;
        }
        self.names.push(format!("A{k}"));
    }
}

/// Image of one genotype under Φ.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhiEntry {
    pub b: f64,
    pub d: f64,
    pub mu: f64,
    /// Declared fitness rank among all genotypes.
    pub rank: usize,
}

/// Genotypes of an allele space, ordered by their Φ-ranks.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenotypeSpace {
    pub alleles: AlleleSpace,
    /// Induced chain; every trait carries its genotype.
    pub chain: OrderedTraitSpace,
}

impl GenotypeSpace {
    pub fn len(&self) -> usize {
        self.chain.len()
    }

    pub fn is_empty(&self) -> bool {
        self.chain.is_empty()
    }

    pub fn genotype_at(&self, rank: usize) -> Genotype {
        self.chain.get(rank).genotype.expect("genotype chain")
    }

    pub fn rank_of(&self, g: Genotype) -> Option<usize> {
        self.chain.traits().iter().position(|t| t.genotype == Some(g))
    }

    pub fn genotypes(&self) -> impl Iterator<Item = Genotype> + '_ {
        self.chain.traits().iter().map(|t| t.genotype.expect("genotype chain"))
    }

    pub fn label(&self, g: Genotype) -> String {
        let (i, j) = g.alleles();
        format!("{}{}", self.alleles.names[i as usize], self.alleles.names[j as usize])
    }
}

/// Builds the genotype space and validates the fitness order of the induced chain.
pub fn build_genotype_space(
    alleles: AlleleSpace,
    phi: &BTreeMap<Genotype, PhiEntry>,
    kernels: KernelSpec,
) -> Result<GenotypeSpace> {
    let n = alleles.len();
    let mut slots: Vec<Option<TraitSpec>> = vec![None; h(n)];
    for g in all_genotypes(n) {
        let e = phi
            .get(&g)
            .ok_or_else(|| Error::InvalidParameter(format!("phi undefined for {g}")))?;
        if e.rank >= slots.len() {
            return Err(Error::RankOutOfRange {
                rank: e.rank,
                len: slots.len(),
            });
        }
        if slots[e.rank].is_some() {
            return Err(Error::InvalidParameter(format!("rank collision at {} ({g})", e.rank)));
        }
        let (i, j) = g.alleles();
        let id = format!("{}{}", alleles.names[i as usize], alleles.names[j as usize]);
        slots[e.rank] = Some(TraitSpec::new(id, e.b, e.d, e.mu)?.with_genotype(g));
    }
    if let Some(g) = phi.keys().find(|g| g.1 as usize >= n) {
        return Err(Error::InvalidParameter(format!("phi defined for unknown genotype {g}")));
    }
    let traits = slots.into_iter().map(|s| s.expect("all ranks filled")).collect();
    let chain = OrderedTraitSpace::new(traits, kernels)?;
    Ok(GenotypeSpace { alleles, chain })
}

/// A directed gamete-replacement edge with its migration kernel.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Edge {
    pub from: Genotype,
    pub to: Genotype,
    pub m: f64,
}

/// Edges between fitness-adjacent genotypes that share an allele and are both
/// in `support`.
pub fn replacement_edges(gs: &GenotypeSpace, support: &BTreeSet<Genotype>) -> Vec<Edge> {
    let m = gs.chain.kernels().m_neighbor;
    let mut out = Vec::new();
    for r in 0..gs.len() {
        let from = gs.genotype_at(r);
        if !support.contains(&from) {
            continue;
        }
        for s in [r.wrapping_sub(1), r + 1] {
            if s >= gs.len() {
                continue;
            }
            let to = gs.genotype_at(s);
            if to != from && support.contains(&to) && from.shares_allele(&to) {
                out.push(Edge { from, to, m });
            }
        }
    }
    out
}

/// Allele-effect law: allele `k` contributes `scale * base^k` to the growth
/// rate and genotypes add their two effects.
///
/// With `base > 2` every allele pair has a distinct sum, so Φ is injective and
/// the Φ-ranks follow the sums. A mutation appends the next allele, whose
/// homozygote becomes the new fittest genotype.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdditiveAlleles {
    pub scale: f64,
    pub base: f64,
    #[serde(default)]
    pub d: f64,
    /// Per-genotype mutation intensity.
    pub mu: f64,
}

impl AdditiveAlleles {
    pub fn effect(&self, allele: u32) -> f64 {
        self.scale * self.base.powi(allele as i32)
    }

    pub fn phi(&self, n: usize) -> Result<BTreeMap<Genotype, PhiEntry>> {
        if !(self.base > 2.0) || !(self.scale > 0.0) {
            return Err(Error::MutationLaw("additive alleles need base > 2 and scale > 0".into()));
        }
        let mut gs: Vec<(Genotype, f64)> = all_genotypes(n)
            .map(|g| (g, self.effect(g.0) + self.effect(g.1)))
            .collect();
        gs.sort_by(|a, b| a.1.total_cmp(&b.1));
        Ok(gs
            .into_iter()
            .enumerate()
            .map(|(rank, (g, growth))| {
                (
                    g,
                    PhiEntry {
                        b: growth + self.d,
                        d: self.d,
                        mu: self.mu,
                        rank,
                    },
                )
            })
            .collect())
    }

    pub fn space(&self, alleles: AlleleSpace, kernels: KernelSpec) -> Result<GenotypeSpace> {
        let phi = self.phi(alleles.len())?;
        build_genotype_space(alleles, &phi, kernels)
    }
}

/// Genotype substitution tree state.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GstState {
    pub space: GenotypeSpace,
    pub config: Configuration,
    pub time: f64,
}

impl GstState {
    pub fn at_equilibrium(space: GenotypeSpace, time: f64) -> Result<Self> {
        let config = equilibrium_configuration(&space.chain)?;
        Ok(GstState { space, config, time })
    }

    pub fn occupied(&self) -> Vec<(usize, Genotype, f64)> {
        (0..self.space.len())
            .filter_map(|r| {
                let t = self.space.chain.get(r);
                let m = self.config.mass(&t.id);
                (m > 0.0).then(|| (r, t.genotype.expect("genotype chain"), m))
            })
            .collect()
    }

    /// TST state on the induced chain whose mutation intensities are doubled,
    /// so its per-trait rates equal the per-genotype totals of this state.
    pub fn induced_tst(&self) -> Result<TstState> {
        let traits = self
            .space
            .chain
            .traits()
            .iter()
            .map(|t| TraitSpec {
                mu: 2.0 * t.mu,
                ..t.clone()
            })
            .collect();
        let space = OrderedTraitSpace::new(traits, *self.space.chain.kernels())?;
        Ok(TstState {
            space,
            config: self.config.clone(),
            time: self.time,
        })
    }
}

/// Mutation rates of a GST state.
#[derive(Clone, Debug, PartialEq)]
pub struct GstRates {
    /// Rate at which allele `j` mutates, by allele index.
    pub per_allele: Vec<f64>,
    /// `(rank, n_bar * mu * sum over alleles of (1 + homozygote indicator))`
    /// for every occupied genotype, in rank order.
    pub per_genotype: Vec<(usize, f64)>,
    pub total: f64,
}

impl GstRates {
    pub fn is_absorbing(&self) -> bool {
        !(self.total > 0.0)
    }
}

/// Per-allele rates: each occupied genotype containing `A_j` contributes
/// `n_bar * mu`, doubled when it is homozygous in `A_j`.
pub fn gst_jump_rates(state: &GstState) -> GstRates {
    let mut per_allele = vec![0.0; state.space.alleles.len()];
    let mut per_genotype = Vec::new();
    for (r, g, mass) in state.occupied() {
        let base = mass * state.space.chain.get(r).mu;
        let (i, j) = g.alleles();
        if g.is_homozygous() {
            per_allele[i as usize] += base * 2.0;
        } else {
            per_allele[i as usize] += base;
            per_allele[j as usize] += base;
        }
        per_genotype.push((r, base * 2.0));
    }
    let total = per_genotype.iter().map(|p| p.1).sum();
    GstRates {
        per_allele,
        per_genotype,
        total,
    }
}

/// One record of a GST path.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GstJump {
    pub time: f64,
    /// Index of the mutating allele; `None` for the initial record.
    pub allele: Option<u32>,
    pub state: GstState,
}

/// Samples a GST path on `[init.time, init.time + horizon]` under an additive
/// allele law, stopping after `max_jumps` jumps. The first record is the
/// initial state.
pub fn sample_gst_path(
    init: &GstState,
    horizon: f64,
    max_jumps: usize,
    law: &AdditiveAlleles,
    rng: &mut SimRng,
) -> Result<Vec<GstJump>> {
    if !(horizon >= 0.0) {
        return Err(Error::InvalidParameter("horizon must be nonnegative".into()));
    }
    let end = init.time + horizon;
    let kernels = *init.space.chain.kernels();
    let mut path = vec![GstJump {
        time: init.time,
        allele: None,
        state: init.clone(),
    }];
    let mut state = init.clone();
    while path.len() <= max_jumps {
        let rates = gst_jump_rates(&state);
        if rates.is_absorbing() {
            break;
        }
        let t = state.time + exp_wait(rng, rates.total);
        if t > end {
            break;
        }
        let allele = categorical(rng, &rates.per_allele, rates.total) as u32;
        let mut alleles = state.space.alleles.clone();
        alleles.push_fresh();
        let n = alleles.len();
        let space = law.space(alleles, kernels).map_err(|e| match e {
            Error::OrderViolation { .. } => {
                Error::MutationLaw(format!("allele effects exceed floating-point resolution at {n} alleles"))
            }
            e => e,
        })?;
        let next = GstState::at_equilibrium(space, t)?;
        path.push(GstJump {
            time: t,
            allele: Some(allele),
            state: next.clone(),
        });
        state = next;
    }
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::equilibria::{occupied_count_for, tst_jump_rates};
    use crate::rng::replica_rng;

    fn law() -> AdditiveAlleles {
        AdditiveAlleles {
            scale: 1.5,
            base: 3.0,
            d: 0.0,
            mu: 1.0,
        }
    }

    fn space(n: usize) -> GenotypeSpace {
        law().space(AlleleSpace::numbered(n), KernelSpec::uniform(0.5)).unwrap()
    }

    #[test]
    fn genotype_counts() {
        assert_eq!(space(1).len(), 1);
        assert_eq!(space(2).len(), 3);
        assert_eq!(space(3).len(), 6);
        assert!(space(1).genotype_at(0).is_homozygous());
    }

    #[test]
    fn genotype_normalization() {
        assert_eq!(Genotype::new(2, 0), Genotype::new(0, 2));
        assert_eq!(Genotype::new(2, 0).to_string(), "A1A3");
        let json = serde_json::to_string(&Genotype::new(1, 0)).unwrap();
        assert_eq!(json, "[0,1]");
        let back: Genotype = serde_json::from_str("[3,1]").unwrap();
        assert_eq!(back, Genotype::new(1, 3));
    }

    #[test]
    fn rank_collision_rejected() {
        let mut phi = law().phi(2).unwrap();
        phi.get_mut(&Genotype::new(0, 1)).unwrap().rank = 0;
        assert!(build_genotype_space(AlleleSpace::numbered(2), &phi, KernelSpec::uniform(0.5)).is_err());
        let mut phi = law().phi(2).unwrap();
        phi.remove(&Genotype::new(1, 1));
        assert!(build_genotype_space(AlleleSpace::numbered(2), &phi, KernelSpec::uniform(0.5)).is_err());
    }

    #[test]
    fn replacement_edge_examples() {
        let gs = space(1);
        let sup: BTreeSet<_> = gs.genotypes().collect();
        assert!(replacement_edges(&gs, &sup).is_empty());

        let gs = space(2);
        let (a11, a12, a22) = (Genotype::new(0, 0), Genotype::new(0, 1), Genotype::new(1, 1));
        assert_eq!(gs.genotypes().collect::<Vec<_>>(), vec![a11, a12, a22]);
        let sup: BTreeSet<_> = gs.genotypes().collect();
        let edges = replacement_edges(&gs, &sup);
        assert!(edges.iter().any(|e| e.from == a11 && e.to == a12));
        assert!(!edges.iter().any(|e| e.from == a11 && e.to == a22));
        let sup: BTreeSet<_> = [a11, a22].into_iter().collect();
        assert!(replacement_edges(&gs, &sup).is_empty());
    }

    #[test]
    fn replacement_edges_symmetric_over_full_support() {
        for n in 1..=4 {
            let gs = space(n);
            let sup: BTreeSet<_> = gs.genotypes().collect();
            let edges = replacement_edges(&gs, &sup);
            for e in &edges {
                assert!(edges.iter().any(|f| f.from == e.to && f.to == e.from));
            }
        }
    }

    #[test]
    fn gst_rate_examples() {
        // A1A1 at n_bar 3 and a heterozygote at n_bar 8.
        let traits = vec![
            TraitSpec::new("A1A1", 3.0, 0.0, 1.0).unwrap().with_genotype(Genotype::new(0, 0)),
            TraitSpec::new("A1A2", 6.0, 0.0, 1.0).unwrap().with_genotype(Genotype::new(0, 1)),
            TraitSpec::new("A1A3", 8.0, 0.0, 1.0).unwrap().with_genotype(Genotype::new(0, 2)),
        ];
        let chain = OrderedTraitSpace::new(traits, KernelSpec::uniform(0.5)).unwrap();
        let st = GstState::at_equilibrium(
            GenotypeSpace {
                alleles: AlleleSpace::numbered(3),
                chain,
            },
            0.0,
        )
        .unwrap();
        let r = gst_jump_rates(&st);
        assert_eq!(r.per_allele, vec![6.0 + 8.0, 0.0, 8.0]);
        assert_eq!(r.per_genotype, vec![(0, 6.0), (2, 16.0)]);
        assert_eq!(r.total, 22.0);
    }

    #[test]
    fn zero_mu_is_absorbing() {
        let l = AdditiveAlleles { mu: 0.0, ..law() };
        let st = GstState::at_equilibrium(l.space(AlleleSpace::numbered(1), KernelSpec::uniform(0.5)).unwrap(), 0.0).unwrap();
        assert!(gst_jump_rates(&st).is_absorbing());
        let path = sample_gst_path(&st, 100.0, 10, &l, &mut replica_rng(0, 0)).unwrap();
        assert_eq!(path.len(), 1);
    }

    #[test]
    fn path_growth() {
        let st = GstState::at_equilibrium(space(1), 0.0).unwrap();
        let path = sample_gst_path(&st, f64::INFINITY, 5, &law(), &mut replica_rng(5, 0)).unwrap();
        assert_eq!(path.len(), 6);
        assert!(path.windows(2).all(|w| w[0].time < w[1].time));
        for (j, rec) in path.iter().enumerate() {
            assert_eq!(rec.state.space.alleles.len(), 1 + j);
            assert_eq!(rec.state.space.len(), h(1 + j));
            assert_eq!(rec.state.config.occupied_count(), occupied_count_for(h(1 + j)));
        }
        assert_eq!(path[1].state.config.occupied_count(), 2);
    }

    #[test]
    fn reduction_rates_match_tst() {
        for n in 1..=3 {
            let st = GstState::at_equilibrium(space(n), 0.0).unwrap();
            let g = gst_jump_rates(&st);
            let t = tst_jump_rates(&st.induced_tst().unwrap());
            assert_eq!(g.per_genotype, t.per_source);
            assert_eq!(g.total.to_bits(), t.total.to_bits());
            let by_allele: f64 = g.per_allele.iter().sum();
            assert!((by_allele - g.total).abs() <= 1e-12 * g.total);
        }
    }
}
