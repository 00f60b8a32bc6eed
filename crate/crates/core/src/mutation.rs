//! Mutation laws: where a mutant lands in the fitness order and what rates it
//! carries. The law declares the rank; chain validation rejects declarations
//! that break the order.

use std::fmt::Debug;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::SimRng;
use crate::traitspace::{OrderedTraitSpace, TraitSpec};

/// A mutant trait and its declared rank in the enlarged chain.
#[derive(Clone, Debug, PartialEq)]
pub struct Mutant {
    pub spec: TraitSpec,
    pub rank: usize,
}

pub trait MutationLaw: Debug + Send + Sync {
    fn sample(&self, chain: &OrderedTraitSpace, source_rank: usize, rng: &mut SimRng) -> Result<Mutant>;
}

/// Every mutant is fitter than the whole chain and lands on top.
///
/// The mutant birth rate is the smallest `schedule` entry above the current
/// top birth rate, or the top birth rate plus `increment` once the schedule
/// is exhausted.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlwaysFitter {
    pub increment: f64,
    #[serde(default)]
    pub schedule: Vec<f64>,
    /// Mutation intensity of mutants; inherited from the source when absent.
    #[serde(default)]
    pub mu: Option<f64>,
}

impl AlwaysFitter {
    pub fn new(increment: f64) -> Self {
        AlwaysFitter {
            increment,
            schedule: Vec::new(),
            mu: None,
        }
    }
}

impl MutationLaw for AlwaysFitter {
    fn sample(&self, chain: &OrderedTraitSpace, source_rank: usize, _rng: &mut SimRng) -> Result<Mutant> {
        if !(self.increment > 0.0) {
            return Err(Error::MutationLaw("increment must be positive".into()));
        }
        let top = chain.top();
        let b = self
            .schedule
            .iter()
            .copied()
            .filter(|&b| b > top.b)
            .fold(None, |acc: Option<f64>, b| Some(acc.map_or(b, |a| a.min(b))))
            .unwrap_or(top.b + self.increment);
        let mu = self.mu.unwrap_or(chain.get(source_rank).mu);
        let spec = TraitSpec::new(chain.fresh_id(), b, top.d, mu)?;
        Ok(Mutant {
            spec,
            rank: chain.len(),
        })
    }
}

/// Rank uniform over the insertion slots compatible with the birth-rate
/// range; growth rate uniform over the slot's admissible interval.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UniformRank {
    pub b_min: f64,
    pub b_max: f64,
    #[serde(default)]
    pub d: f64,
    pub mu: f64,
}

impl UniformRank {
    /// Open interval of admissible growth rates for a mutant at `slot`.
    fn admissible(&self, chain: &OrderedTraitSpace, slot: usize) -> Option<(f64, f64)> {
        let k = chain.kernels();
        let c = k.alpha_neighbor / k.alpha_self;
        if !(c > 0.0) {
            return None;
        }
        let factor_lo = c.max(1.0 / c);
        let factor_hi = c.min(1.0 / c);
        let mut lo = self.b_min - self.d;
        let mut hi = self.b_max - self.d;
        if slot > 0 {
            lo = lo.max(chain.get(slot - 1).growth() * factor_lo);
        }
        if slot < chain.len() {
            hi = hi.min(chain.get(slot).growth() * factor_hi);
        }
        lo = lo.max(0.0);
        (hi > lo).then_some((lo, hi))
    }
}

impl MutationLaw for UniformRank {
    fn sample(&self, chain: &OrderedTraitSpace, _source_rank: usize, rng: &mut SimRng) -> Result<Mutant> {
        let slots: Vec<(usize, (f64, f64))> = (0..=chain.len())
            .filter_map(|s| self.admissible(chain, s).map(|iv| (s, iv)))
            .collect();
        if slots.is_empty() {
            return Err(Error::MutationLaw(
                "no insertion slot is compatible with the birth-rate range".into(),
            ));
        }
        let (rank, (lo, hi)) = slots[rng.random_range(0..slots.len())];
        let growth = loop {
            let g = lo + (hi - lo) * rng.random::<f64>();
            if g > lo && g < hi {
                break g;
            }
        };
        let spec = TraitSpec::new(chain.fresh_id(), growth + self.d, self.d, self.mu)?;
        Ok(Mutant { spec, rank })
    }
}

/// Serializable selection of a built-in law.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case")]
pub enum MutationLawSpec {
    AlwaysFitter(AlwaysFitter),
    UniformRank(UniformRank),
}

impl MutationLawSpec {
    pub fn as_law(&self) -> &dyn MutationLaw {
        match self {
            MutationLawSpec::AlwaysFitter(l) => l,
            MutationLawSpec::UniformRank(l) => l,
        }
    }
}

impl MutationLaw for MutationLawSpec {
    fn sample(&self, chain: &OrderedTraitSpace, source_rank: usize, rng: &mut SimRng) -> Result<Mutant> {
        self.as_law().sample(chain, source_rank, rng)
    }
}
