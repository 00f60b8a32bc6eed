//! Oracles shared by the property suites and the acceptance target.
#![allow(dead_code)]

use std::collections::BTreeSet;

/// Occupied old ranks (and whether the mutant is occupied) after inserting a
/// mutant at new rank `p` into a chain of `n` traits, read branch by branch
/// from the two cases of the substitution tree's transition rule.
pub fn branch_oracle(n: usize, p: usize) -> (BTreeSet<usize>, bool) {
    let odd = |lo: usize, hi: usize| (lo..=hi).map(|i| 2 * i - 1).collect::<Vec<_>>();
    let even = |lo: usize, hi: usize| (lo..=hi).map(|i| 2 * i).collect::<Vec<_>>();
    let mut set = BTreeSet::new();
    let mutant;
    if n % 2 == 1 {
        // Case (i): ranks 0..=2l, evens occupied.
        let l = (n - 1) / 2;
        if p % 2 == 1 {
            // x_{2j} < mutant < x_{2j+1}: mutant fixes, odds below it, evens above.
            let j = (p - 1) / 2;
            if j >= 1 {
                set.extend(odd(1, j));
            }
            if j < l {
                set.extend(even(j + 1, l));
            }
            mutant = true;
        } else {
            // x_{2j-1} < mutant < x_{2j}: mutant is outcompeted.
            let j = p / 2;
            if j >= 1 {
                set.extend(odd(1, j));
            }
            set.extend(even(j, l));
            mutant = false;
        }
    } else {
        // Case (ii): ranks 0..=2l+1, odds occupied.
        let l = (n - 2) / 2;
        if p.is_multiple_of(2) {
            // x_{2j-1} < mutant < x_{2j}; p = 0 extends the rule below x_0.
            let j = p / 2;
            set.extend((1..=j).map(|i| 2 * (i - 1)));
            if j < l + 1 {
                set.extend(odd(j + 1, l + 1));
            }
            mutant = true;
        } else {
            // x_{2j-2} < mutant < x_{2j-1}.
            let j = p.div_ceil(2);
            set.extend((1..=j).map(|i| 2 * (i - 1)));
            set.extend(odd(j, l + 1));
            mutant = false;
        }
    }
    (set, mutant)
}

use rand::Rng;

use tstsim::diploid::{gst_jump_rates, AdditiveAlleles, AlleleSpace, GstState};
use tstsim::equilibria::{tst_insert, tst_jump_rates, TstState};
use tstsim::microsim::{compute_rates, run, GridSampler, MigrationMode, Scenario, SimState, Simulation, StepOutcome};
use tstsim::mutation::{MutationLawSpec, UniformRank};
use tstsim::odelimit::OdeSystem;
use tstsim::rng::replica_rng;
use tstsim::scenario::parse_any;
use tstsim::trajectory::write_micro;
use tstsim::{KernelSpec, OrderedTraitSpace, TraitId, TraitSpec};

pub fn scenario_path(name: &str) -> String {
    format!("{}/../../scenarios/{name}", env!("CARGO_MANIFEST_DIR"))
}

pub fn chain(bs: &[f64], kernels: KernelSpec) -> OrderedTraitSpace {
    let traits = bs
        .iter()
        .enumerate()
        .map(|(i, &b)| TraitSpec::new(format!("x{i}"), b, 0.0, 1.0).unwrap())
        .collect();
    OrderedTraitSpace::new(traits, kernels).unwrap()
}

/// Every insertion position into every equilibrium chain of up to `max_len`
/// traits. Returns the number of insertions checked.
pub fn check_parity(max_len: usize) -> Result<usize, String> {
    let kernels = KernelSpec::uniform(0.5);
    let mut checked = 0;
    for n in 1..=max_len {
        let bs: Vec<f64> = (0..n).map(|i| 3.0 + 2.0 * i as f64).collect();
        let state = TstState::at_equilibrium(chain(&bs, kernels), 0.0).map_err(|e| e.to_string())?;
        for source in state.occupied_ranks() {
            for p in 0..=n {
                let b = match p {
                    0 => bs[0] - 1.0,
                    p if p == n => bs[n - 1] + 1.0,
                    p => 0.5 * (bs[p - 1] + bs[p]),
                };
                let mutant = TraitSpec::new("m", b, 0.0, 1.0).unwrap();
                let next = tst_insert(&state, source, mutant, p).map_err(|e| e.to_string())?;
                let got: BTreeSet<TraitId> = next.config.support().cloned().collect();
                let (old, with_mutant) = branch_oracle(n, p);
                let mut want: BTreeSet<TraitId> = old.iter().map(|&r| state.space.get(r).id.clone()).collect();
                if with_mutant {
                    want.insert("m".into());
                }
                if got != want {
                    return Err(format!("n = {n}, insertion at {p}: {got:?} != {want:?}"));
                }
                for id in &got {
                    let r = next.space.rank_of(id).unwrap();
                    if next.config.mass(id) != next.space.n_bar(r) {
                        return Err(format!("n = {n}, insertion at {p}: mass of {id} is not n_bar"));
                    }
                }
                checked += 1;
            }
        }
    }
    Ok(checked)
}

/// Largest relative gap between the microscopic drift and the ODE vector
/// field over `cases` random states.
pub fn check_drift(cases: usize, seed: u64) -> Result<f64, String> {
    let mut rng = replica_rng(seed, 0);
    let mut worst: f64 = 0.0;
    for _ in 0..cases {
        let n = rng.random_range(1..7usize);
        let mut b = 0.0;
        let bs: Vec<f64> = (0..n).map(|_| { b += rng.random_range(0.5..4.0); b }).collect();
        let alpha = rng.random_range(0.2..2.0);
        let kernels = KernelSpec::new(alpha, alpha * rng.random_range(0.0..1.0), rng.random_range(0.0..1.0)).unwrap();
        let space = OrderedTraitSpace::unchecked_order(
            bs.iter().enumerate().map(|(i, &b)| TraitSpec::new(format!("x{i}"), b, 0.1, 0.0).unwrap()).collect(),
            kernels,
        )
        .map_err(|e| e.to_string())?;
        let k = rng.random_range(1..5_000u64);
        let counts: Vec<u64> = (0..n).map(|_| if rng.random_bool(0.3) { 0 } else { rng.random_range(0..5_000) }).collect();
        let eps = rng.random_range(0.0..1.0);
        let mode = if rng.random_bool(0.5) { MigrationMode::OccupiedOnly } else { MigrationMode::AllNeighbors };
        let sc = Scenario {
            space: space.clone(),
            k,
            epsilon: eps,
            sigma: 0.0,
            initial: counts.clone(),
            horizon: 1.0,
            mode,
            seed: 0,
            mutation: None,
        };
        let state = SimState { chain: space.clone(), counts: counts.clone(), t: 0.0, events: 0 };
        let micro = compute_rates(&state, &sc).drift(k);
        let xi: Vec<f64> = counts.iter().map(|&c| c as f64 / k as f64).collect();
        let ode = OdeSystem::new(space, eps, mode).rhs(&xi).map_err(|e| e.to_string())?;
        let scale = micro.iter().chain(&ode).fold(1.0f64, |m, v| m.max(v.abs()));
        for (a, b) in micro.iter().zip(&ode) {
            worst = worst.max((a - b).abs() / scale);
        }
    }
    Ok(worst)
}

/// Steps a mutating three-trait system and checks that every event moves
/// exactly one individual. Returns the number of mutations seen.
pub fn check_conservation(events: usize) -> Result<usize, String> {
    let sc = Scenario {
        space: chain(&[3.0, 6.0, 8.0], KernelSpec::uniform(0.5)),
        k: 200,
        epsilon: 0.05,
        sigma: 1e-4,
        initial: vec![600, 0, 0],
        horizon: 1e12,
        mode: MigrationMode::AllNeighbors,
        seed: 0,
        mutation: Some(MutationLawSpec::UniformRank(UniformRank {
            b_min: 2.0,
            b_max: 12.0,
            d: 0.0,
            mu: 1.0,
        })),
    };
    let mut sim = Simulation::new(&sc, replica_rng(17, 0)).map_err(|e| e.to_string())?;
    let mut mutations = 0;
    for i in 0..events {
        let before = sim.state().clone();
        if let StepOutcome::Absorbed = sim.step().map_err(|e| e.to_string())? {
            return Err(format!("absorbed after {i} events"));
        }
        let after = sim.state();
        if after.events != before.events + 1 {
            return Err(format!("event counter skipped at {i}"));
        }
        let (mut net, mut moved) = (0i64, 0u64);
        for (r, t) in after.chain.traits().iter().enumerate() {
            let d = after.counts[r] as i64 - before.count_of(&t.id).unwrap_or(0) as i64;
            net += d;
            moved += d.unsigned_abs();
        }
        let grown = after.chain.len() - before.chain.len();
        mutations += grown;
        let single = matches!((net, moved), (1, 1) | (-1, 1) | (0, 2));
        if !single || grown > 1 {
            return Err(format!("event {i} changed counts by net {net}, moved {moved}, new traits {grown}"));
        }
    }
    Ok(mutations)
}

/// Genotype rates against the rates of the induced chain, bit for bit.
pub fn check_reduction(max_alleles: usize) -> Result<(), String> {
    let law = AdditiveAlleles {
        scale: 0.7,
        base: 3.5,
        d: 0.2,
        mu: 0.3,
    };
    for n in 1..=max_alleles {
        let gs = law.space(AlleleSpace::numbered(n), KernelSpec::uniform(0.5)).map_err(|e| e.to_string())?;
        let st = GstState::at_equilibrium(gs, 0.0).map_err(|e| e.to_string())?;
        let g = gst_jump_rates(&st);
        let t = tst_jump_rates(&st.induced_tst().map_err(|e| e.to_string())?);
        let same = g.per_genotype.len() == t.per_source.len()
            && g.per_genotype.iter().zip(&t.per_source).all(|(a, b)| a.0 == b.0 && a.1.to_bits() == b.1.to_bits())
            && g.total.to_bits() == t.total.to_bits();
        if !same {
            return Err(format!("{n} alleles: {:?} vs {:?}", g.per_genotype, t.per_source));
        }
    }
    Ok(())
}

/// Runs a scenario, replays it from a manifest carrying its canonical
/// source, and compares the trajectory bytes.
pub fn check_replay() -> Result<usize, String> {
    let src = std::fs::read_to_string(scenario_path("three_traits.toml")).map_err(|e| e.to_string())?;
    let first = parse_any(&src, &[("seed".into(), "99".into()), ("horizon.value".into(), "0.5".into())])
        .map_err(|e| e.to_string())?;
    let manifest = serde_json::json!({ "tool": "tstsim", "scenario": first.source }).to_string();
    let second = parse_any(&manifest, &[]).map_err(|e| e.to_string())?;
    let bytes = |r: &tstsim::scenario::Resolved| -> Result<Vec<u8>, String> {
        let mut g = GridSampler::uniform(r.horizon, 51);
        run(&r.scenario, replica_rng(r.file.seed, 0), &mut g).map_err(|e| e.to_string())?;
        write_micro(Vec::new(), &g, r.k).map_err(|e| e.to_string())
    };
    let (a, b) = (bytes(&first)?, bytes(&second)?);
    if a != b {
        return Err("replayed trajectory differs".into());
    }
    Ok(a.len())
}
