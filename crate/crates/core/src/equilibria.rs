//! Equilibrium configurations and the trait substitution tree (TST).
//!
//! On an ordered chain `x_0 < ... < x_L` the stable configuration occupies
//! every second trait looking down from the fittest one: ranks `L, L-2, ...`,
//! each at its monomorphic density. Inserting a mutant anywhere in the chain
//! and recomputing this parity configuration on the relabelled chain covers
//! every insertion case of the TST jump rule at once.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mutation::MutationLaw;
use crate::rng::{categorical, exp_wait, SimRng};
use crate::traitspace::{OrderedTraitSpace, TraitId, TraitSpec};

/// Finite point measure: trait id to nonnegative mass.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Configuration {
    atoms: BTreeMap<TraitId, f64>,
}

impl Configuration {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_atoms<I: IntoIterator<Item = (TraitId, f64)>>(atoms: I) -> Result<Self> {
        let mut c = Configuration::new();
        for (id, m) in atoms {
            c.set(id, m)?;
        }
        Ok(c)
    }

    pub fn set(&mut self, id: TraitId, mass: f64) -> Result<()> {
        if !(mass >= 0.0) || !mass.is_finite() {
            return Err(Error::InvalidParameter(format!("mass of `{id}` must be finite and >= 0")));
        }
        self.atoms.insert(id, mass);
        Ok(())
    }

    pub fn mass(&self, id: &TraitId) -> f64 {
        self.atoms.get(id).copied().unwrap_or(0.0)
    }

    pub fn atoms(&self) -> impl Iterator<Item = (&TraitId, f64)> {
        self.atoms.iter().map(|(k, v)| (k, *v))
    }

    /// Atoms with strictly positive mass.
    pub fn support(&self) -> impl Iterator<Item = &TraitId> {
        self.atoms.iter().filter(|(_, m)| **m > 0.0).map(|(k, _)| k)
    }

    pub fn occupied_count(&self) -> usize {
        self.support().count()
    }

    pub fn total_mass(&self) -> f64 {
        self.atoms.values().sum()
    }

    /// Sum of absolute mass differences over the union of supports.
    pub fn tv_distance(&self, other: &Configuration) -> f64 {
        let mut d = 0.0;
        for (id, m) in &self.atoms {
            d += (m - other.mass(id)).abs();
        }
        for (id, m) in &other.atoms {
            if !self.atoms.contains_key(id) {
                d += m.abs();
            }
        }
        d
    }
}

/// Ranks occupied at equilibrium on a chain of `len` traits: `L, L-2, ...`.
pub fn occupied_ranks(len: usize) -> impl DoubleEndedIterator<Item = usize> {
    let top = len.saturating_sub(1);
    (0..len).filter(move |r| (top - r).is_multiple_of(2))
}

/// Number of atoms of the equilibrium on `len` traits, `floor((L + 2) / 2)`.
pub fn occupied_count_for(len: usize) -> usize {
    len.div_ceil(2)
}

/// The stable configuration of an ordered chain.
pub fn equilibrium_configuration(ts: &OrderedTraitSpace) -> Result<Configuration> {
    ts.validate_order()?;
    Ok(parity_configuration(ts))
}

fn parity_configuration(ts: &OrderedTraitSpace) -> Configuration {
    let mut c = Configuration::new();
    for r in occupied_ranks(ts.len()) {
        c.atoms.insert(ts.get(r).id.clone(), ts.n_bar(r));
    }
    c
}

/// State of the TST process: current chain and its equilibrium.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TstState {
    pub space: OrderedTraitSpace,
    pub config: Configuration,
    /// Time in mutation-scale units (microscopic time is `t / (K sigma)`).
    pub time: f64,
}

impl TstState {
    /// The process started at the equilibrium of `space`.
    pub fn at_equilibrium(space: OrderedTraitSpace, time: f64) -> Result<Self> {
        let config = equilibrium_configuration(&space)?;
        Ok(TstState { space, config, time })
    }

    pub fn is_occupied(&self, rank: usize) -> bool {
        rank < self.space.len() && self.config.mass(&self.space.get(rank).id) > 0.0
    }

    pub fn occupied_ranks(&self) -> Vec<usize> {
        (0..self.space.len()).filter(|&r| self.is_occupied(r)).collect()
    }
}

/// Splices `mutant` at `mutant_rank` and re-equilibrates the enlarged chain.
pub fn tst_insert(state: &TstState, source_rank: usize, mutant: TraitSpec, mutant_rank: usize) -> Result<TstState> {
    if !state.is_occupied(source_rank) {
        return Err(Error::UnoccupiedSource { rank: source_rank });
    }
    let space = state.space.inserted(mutant_rank, mutant)?;
    let config = parity_configuration(&space);
    Ok(TstState {
        space,
        config,
        time: state.time,
    })
}

/// Mutation rates out of the current configuration.
#[derive(Clone, Debug, PartialEq)]
pub struct JumpRates {
    /// `(source rank, n_bar * mu)` for every occupied rank, in rank order.
    pub per_source: Vec<(usize, f64)>,
    pub total: f64,
}

impl JumpRates {
    pub fn is_absorbing(&self) -> bool {
        !(self.total > 0.0)
    }

    /// Draws a source rank proportionally to its rate.
    pub fn sample_source(&self, rng: &mut SimRng) -> Option<usize> {
        if self.is_absorbing() {
            return None;
        }
        let w: Vec<f64> = self.per_source.iter().map(|p| p.1).collect();
        Some(self.per_source[categorical(rng, &w, self.total)].0)
    }
}

pub fn tst_jump_rates(state: &TstState) -> JumpRates {
    let per_source: Vec<(usize, f64)> = state
        .occupied_ranks()
        .into_iter()
        .map(|r| {
            let t = state.space.get(r);
            (r, state.config.mass(&t.id) * t.mu)
        })
        .collect();
    let total = per_source.iter().map(|p| p.1).sum();
    JumpRates { per_source, total }
}

/// One record of a TST path: the state holding from `time` until the next jump.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TstJump {
    pub time: f64,
    /// Rank of the mutating trait before the jump; `None` for the initial record.
    pub source_rank: Option<usize>,
    pub state: TstState,
}

/// Paths with more jumps than this are reported as explosive. Each record
/// holds the whole chain, so path memory grows with the square of its length.
pub const MAX_PATH_JUMPS: usize = 2_000;

/// Samples a TST path on `[init.time, init.time + horizon]`.
///
/// The first record is the initial state; each further record is a jump.
/// Laws whose rates grow along the chain can explode in finite time; such
/// paths fail once they exceed [`MAX_PATH_JUMPS`].
pub fn sample_tst_path(
    init: &TstState,
    horizon: f64,
    law: &dyn MutationLaw,
    rng: &mut SimRng,
) -> Result<Vec<TstJump>> {
    let path = sample_tst_jumps(init, horizon, MAX_PATH_JUMPS + 1, law, rng)?;
    if path.len() > MAX_PATH_JUMPS + 1 {
        return Err(Error::InvalidParameter(format!(
            "path exceeded {MAX_PATH_JUMPS} jumps before the horizon"
        )));
    }
    Ok(path)
}

/// Like [`sample_tst_path`] but stops silently after `max_jumps` jumps.
pub fn sample_tst_jumps(
    init: &TstState,
    horizon: f64,
    max_jumps: usize,
    law: &dyn MutationLaw,
    rng: &mut SimRng,
) -> Result<Vec<TstJump>> {
    if !(horizon >= 0.0) {
        return Err(Error::InvalidParameter("horizon must be nonnegative".into()));
    }
    let end = init.time + horizon;
    let mut path = vec![TstJump {
        time: init.time,
        source_rank: None,
        state: init.clone(),
    }];
    let mut state = init.clone();
    while path.len() <= max_jumps {
        let rates = tst_jump_rates(&state);
        if rates.is_absorbing() {
            break;
        }
        let t = state.time + exp_wait(rng, rates.total);
        if t > end {
            break;
        }
        let source = rates.sample_source(rng).expect("positive total rate");
        let mutant = law.sample(&state.space, source, rng)?;
        let mut next = tst_insert(&state, source, mutant.spec, mutant.rank)?;
        next.time = t;
        path.push(TstJump {
            time: t,
            source_rank: Some(source),
            state: next.clone(),
        });
        state = next;
    }
    Ok(path)
}

/// State of a path at time `t` (right-continuous).
pub fn state_at(path: &[TstJump], t: f64) -> &TstState {
    let idx = path.partition_point(|j| j.time <= t);
    &path[idx.saturating_sub(1)].state
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mutation::AlwaysFitter;
    use crate::rng::replica_rng;
    use crate::traitspace::KernelSpec;

    fn chain_mu(bs: &[f64], mu: f64) -> OrderedTraitSpace {
        let traits = bs
            .iter()
            .enumerate()
            .map(|(i, &b)| TraitSpec::new(format!("x{i}"), b, 0.0, mu).unwrap())
            .collect();
        OrderedTraitSpace::new(traits, KernelSpec::uniform(0.5)).unwrap()
    }

    fn masses(ts: &OrderedTraitSpace, c: &Configuration) -> Vec<f64> {
        ts.ids().map(|id| c.mass(id)).collect()
    }

    #[test]
    fn equilibrium_examples() {
        let ts = chain_mu(&[3.0, 6.0, 8.0], 0.0);
        assert_eq!(masses(&ts, &equilibrium_configuration(&ts).unwrap()), vec![3.0, 0.0, 8.0]);
        let ts = chain_mu(&[3.0, 6.0, 8.0, 10.0], 0.0);
        assert_eq!(
            masses(&ts, &equilibrium_configuration(&ts).unwrap()),
            vec![0.0, 6.0, 0.0, 10.0]
        );
        let ts = chain_mu(&[3.0], 0.0);
        assert_eq!(masses(&ts, &equilibrium_configuration(&ts).unwrap()), vec![3.0]);
    }

    #[test]
    fn insert_examples() {
        let s = TstState::at_equilibrium(chain_mu(&[3.0, 6.0, 8.0], 1.0), 0.0).unwrap();
        let top = TraitSpec::new("x3", 10.0, 0.0, 1.0).unwrap();
        let s3 = tst_insert(&s, 2, top, 3).unwrap();
        assert_eq!(masses(&s3.space, &s3.config), vec![0.0, 6.0, 0.0, 10.0]);

        let mid = TraitSpec::new("m", 7.0, 0.0, 1.0).unwrap();
        let s3 = tst_insert(&s, 0, mid, 2).unwrap();
        let bs: Vec<f64> = s3.space.traits().iter().map(|t| t.b).collect();
        assert_eq!(bs, vec![3.0, 6.0, 7.0, 8.0]);
        assert_eq!(masses(&s3.space, &s3.config), vec![0.0, 6.0, 0.0, 8.0]);

        let s0 = TstState::at_equilibrium(chain_mu(&[3.0], 1.0), 0.0).unwrap();
        let s1 = tst_insert(&s0, 0, TraitSpec::new("y", 5.0, 0.0, 1.0).unwrap(), 1).unwrap();
        assert_eq!(masses(&s1.space, &s1.config), vec![0.0, 5.0]);
    }

    #[test]
    fn insert_errors() {
        let s = TstState::at_equilibrium(chain_mu(&[3.0, 6.0, 8.0], 1.0), 0.0).unwrap();
        let m = TraitSpec::new("m", 10.0, 0.0, 1.0).unwrap();
        assert_eq!(
            tst_insert(&s, 1, m.clone(), 3),
            Err(Error::UnoccupiedSource { rank: 1 })
        );
        // b = 10 declared between 3 and 6 breaks the order.
        assert!(matches!(tst_insert(&s, 0, m, 1), Err(Error::OrderViolation { .. })));
    }

    #[test]
    fn jump_rates() {
        let s = TstState::at_equilibrium(chain_mu(&[3.0, 6.0, 8.0], 1.0), 0.0).unwrap();
        let r = tst_jump_rates(&s);
        assert_eq!(r.per_source, vec![(0, 3.0), (2, 8.0)]);
        assert_eq!(r.total, 11.0);
        let s = TstState::at_equilibrium(chain_mu(&[3.0, 6.0, 8.0], 0.0), 0.0).unwrap();
        assert!(tst_jump_rates(&s).is_absorbing());
    }

    #[test]
    fn source_frequency() {
        let s = TstState::at_equilibrium(chain_mu(&[3.0, 6.0, 8.0], 1.0), 0.0).unwrap();
        let r = tst_jump_rates(&s);
        let mut rng = replica_rng(11, 0);
        let n = 40_000;
        let hits = (0..n).filter(|_| r.sample_source(&mut rng) == Some(2)).count();
        let p = 8.0 / 11.0;
        let se = (p * (1.0 - p) / n as f64).sqrt();
        assert!((hits as f64 / n as f64 - p).abs() < 3.0 * se);
    }

    #[test]
    fn absorbing_path_has_no_jumps() {
        let s = TstState::at_equilibrium(chain_mu(&[3.0, 6.0, 8.0], 0.0), 0.0).unwrap();
        let mut rng = replica_rng(0, 0);
        let p = sample_tst_path(&s, 1e9, &AlwaysFitter::new(2.0), &mut rng).unwrap();
        assert_eq!(p.len(), 1);
    }

    #[test]
    fn mean_first_jump_time() {
        let s = TstState::at_equilibrium(chain_mu(&[3.0, 6.0, 8.0], 1.0), 0.0).unwrap();
        let law = AlwaysFitter::new(2.0);
        let n = 10_000;
        let times: Vec<f64> = (0..n)
            .map(|i| {
                let mut rng = replica_rng(5, i);
                let p = sample_tst_jumps(&s, f64::INFINITY, 1, &law, &mut rng).unwrap();
                p[1].time
            })
            .collect();
        let mean = times.iter().sum::<f64>() / n as f64;
        let var = times.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        let se = (var / n as f64).sqrt();
        assert!((mean - 1.0 / 11.0).abs() < 3.0 * se, "{mean} +- {se}");
    }

    #[test]
    fn always_fitter_occupancy_grows_by_parity() {
        let s = TstState::at_equilibrium(chain_mu(&[3.0], 1.0), 0.0).unwrap();
        let mut rng = replica_rng(2, 0);
        let p = sample_tst_jumps(&s, f64::INFINITY, 12, &AlwaysFitter::new(2.0), &mut rng).unwrap();
        assert_eq!(p.len(), 13);
        for (j, rec) in p.iter().enumerate() {
            assert_eq!(rec.state.space.len(), j + 1);
            assert_eq!(rec.state.config.occupied_count(), (j + 2) / 2);
        }
        assert_eq!(state_at(&p, 0.0).space.len(), 1);
        assert_eq!(state_at(&p, p[2].time).space.len(), 3);
    }

    #[test]
    fn tv_distance() {
        let a = Configuration::from_atoms([("a".into(), 3.0), ("b".into(), 1.0)]).unwrap();
        let b = Configuration::from_atoms([("b".into(), 2.0), ("c".into(), 0.5)]).unwrap();
        assert_eq!(a.tv_distance(&b), 3.0 + 1.0 + 0.5);
        assert_eq!(a.tv_distance(&a), 0.0);
        assert!(Configuration::from_atoms([("a".into(), -1.0)]).is_err());
    }

    #[test]
    fn occupancy_formula() {
        for len in 1..20 {
            let ranks: Vec<usize> = occupied_ranks(len).collect();
            assert_eq!(ranks.len(), occupied_count_for(len));
            assert_eq!(*ranks.last().unwrap(), len - 1);
            assert_eq!(ranks.len(), (len - 1 + 2) / 2);
        }
    }
}
