//! Browser bindings. Every entry point takes and returns JSON strings; the
//! `*_json` functions hold the logic and also run natively.

use serde::{Deserialize, Serialize};
use wasm_bindgen::prelude::*;

use tstsim::equilibria::{sample_tst_jumps, TstState};
use tstsim::microsim::{run, GridSampler, MigrationMode, Scenario};
use tstsim::mutation::AlwaysFitter;
use tstsim::odelimit::{integrate, phase_predictions, OdeSystem, StepControl};
use tstsim::rng::replica_rng;
use tstsim::{KernelSpec, OrderedTraitSpace, TraitSpec};

/// Keeps a page responsive: K times the largest density bounds the population.
const MAX_POPULATION: f64 = 2e5;
const MAX_TST_JUMPS: usize = 200;

#[derive(Clone, Debug, Deserialize)]
#[serde(default)]
pub struct ChainParams {
    pub b: Vec<f64>,
    pub d: f64,
    pub alpha_self: f64,
    pub alpha_neighbor: f64,
    pub m: f64,
    pub k: u64,
    /// `epsilon = K^-eps_exponent`.
    pub eps_exponent: f64,
    /// In units of `ln(1/epsilon)`.
    pub horizon: f64,
    pub seed: u64,
    pub points: usize,
}

impl Default for ChainParams {
    fn default() -> Self {
        ChainParams {
            b: vec![3.0, 6.0, 8.0],
            d: 0.0,
            alpha_self: 1.0,
            alpha_neighbor: 1.0,
            m: 0.5,
            k: 1000,
            eps_exponent: 0.8,
            horizon: 7.0 / 3.0,
            seed: 1,
            points: 201,
        }
    }
}

impl ChainParams {
    fn chain(&self) -> Result<OrderedTraitSpace, String> {
        let kernels = KernelSpec::new(self.alpha_self, self.alpha_neighbor, self.m).map_err(|e| e.to_string())?;
        let traits = self
            .b
            .iter()
            .enumerate()
            .map(|(i, &b)| TraitSpec::new(format!("x{i}"), b, self.d, 0.0))
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| e.to_string())?;
        OrderedTraitSpace::new(traits, kernels).map_err(|e| e.to_string())
    }

    fn epsilon(&self) -> f64 {
        (self.k as f64).powf(-self.eps_exponent)
    }

    fn natural_horizon(&self) -> f64 {
        self.horizon * (1.0 / self.epsilon()).ln()
    }

    fn grid(&self) -> Vec<f64> {
        let n = self.points.clamp(2, 2000);
        let h = self.natural_horizon();
        (0..n).map(|i| h * i as f64 / (n - 1) as f64).collect()
    }
}

fn parse<T: for<'de> Deserialize<'de> + Default>(params: &str) -> Result<T, String> {
    if params.trim().is_empty() {
        return Ok(T::default());
    }
    serde_json::from_str(params).map_err(|e| e.to_string())
}

fn to_json<T: Serialize>(v: &T) -> Result<String, String> {
    serde_json::to_string(v).map_err(|e| e.to_string())
}

#[derive(Serialize)]
struct Curves {
    ids: Vec<String>,
    /// Time in units of `ln(1/epsilon)`.
    t: Vec<f64>,
    /// `mass[i][j]`: trait `i` at time `t[j]`.
    mass: Vec<Vec<f64>>,
    epsilon: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    events: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    t_bar: Option<f64>,
}

fn columns(rows: &[Vec<f64>], n: usize) -> Vec<Vec<f64>> {
    (0..n).map(|i| rows.iter().map(|r| r[i]).collect()).collect()
}

/// One exact stochastic trajectory of the chain, started from `x0` at its
/// monomorphic density.
pub fn simulate_json(params: &str) -> Result<String, String> {
    let p: ChainParams = parse(params)?;
    let space = p.chain()?;
    let n = space.len();
    let biggest = (0..n).map(|r| space.n_bar(r)).fold(0.0, f64::max) * p.k as f64;
    if biggest > MAX_POPULATION {
        return Err(format!("K too large for the browser: about {biggest:.0} individuals"));
    }
    let mut initial = vec![0; n];
    initial[0] = (space.n_bar(0) * p.k as f64).floor() as u64;
    let sc = Scenario {
        space,
        k: p.k,
        epsilon: p.epsilon(),
        sigma: 0.0,
        initial,
        horizon: p.natural_horizon(),
        mode: MigrationMode::AllNeighbors,
        seed: p.seed,
        mutation: None,
    };
    let grid = p.grid();
    let mut sampler = GridSampler::new(grid.clone());
    let out = run(&sc, replica_rng(p.seed, 0), &mut sampler).map_err(|e| e.to_string())?;
    let rows: Vec<Vec<f64>> = sampler.snapshots.iter().map(|s| s.counts.iter().map(|&c| c as f64 / p.k as f64).collect()).collect();
    let ln = (1.0 / p.epsilon()).ln();
    to_json(&Curves {
        ids: sc.space.ids().map(|i| i.to_string()).collect(),
        t: sampler.snapshots.iter().map(|s| s.t / ln).collect(),
        mass: columns(&rows, n),
        epsilon: p.epsilon(),
        events: Some(out.state.events),
        t_bar: None,
    })
}

/// The deterministic limit on the same grid, with its predicted time to equilibrium.
pub fn ode_json(params: &str) -> Result<String, String> {
    let p: ChainParams = parse(params)?;
    let space = p.chain()?;
    let n = space.len();
    let mut xi0 = vec![0.0; n];
    xi0[0] = (space.n_bar(0) * p.k as f64).floor() / p.k as f64;
    let sys = OdeSystem::new(space, p.epsilon(), MigrationMode::AllNeighbors);
    let traj = integrate(&sys, &xi0, p.natural_horizon(), StepControl::default()).map_err(|e| e.to_string())?;
    let grid = p.grid();
    let rows: Vec<Vec<f64>> = grid.iter().map(|&t| traj.at(t)).collect();
    let ln = (1.0 / p.epsilon()).ln();
    to_json(&Curves {
        ids: (0..n).map(|i| format!("x{i}")).collect(),
        t: grid.iter().map(|t| t / ln).collect(),
        mass: columns(&rows, n),
        epsilon: p.epsilon(),
        events: None,
        t_bar: phase_predictions(&sys, None).ok().map(|p| p.t_bar),
    })
}

#[derive(Clone, Debug, Deserialize)]
#[serde(default)]
pub struct TstParams {
    pub b0: f64,
    pub increment: f64,
    pub mu: f64,
    pub m: f64,
    pub horizon: f64,
    pub seed: u64,
}

impl Default for TstParams {
    fn default() -> Self {
        TstParams {
            b0: 3.0,
            increment: 2.0,
            mu: 0.1,
            m: 0.5,
            horizon: 5.0,
            seed: 1,
        }
    }
}

#[derive(Serialize)]
struct TstRecord {
    time: f64,
    /// Birth rates along the chain, lowest rank first.
    b: Vec<f64>,
    /// Mass per rank; zero off the support.
    mass: Vec<f64>,
}

#[derive(Serialize)]
struct TstPath {
    records: Vec<TstRecord>,
    /// The path hit the jump cap before the horizon (the law explodes).
    truncated: bool,
}

/// A trait substitution tree path under the always-fitter law.
pub fn tst_json(params: &str) -> Result<String, String> {
    let p: TstParams = parse(params)?;
    let x0 = TraitSpec::new("x0", p.b0, 0.0, p.mu).map_err(|e| e.to_string())?;
    let space = OrderedTraitSpace::new(vec![x0], KernelSpec::uniform(p.m)).map_err(|e| e.to_string())?;
    let init = TstState::at_equilibrium(space, 0.0).map_err(|e| e.to_string())?;
    let mut law = AlwaysFitter::new(p.increment);
    law.mu = Some(p.mu);
    let path = sample_tst_jumps(&init, p.horizon, MAX_TST_JUMPS, &law, &mut replica_rng(p.seed, 0))
        .map_err(|e| e.to_string())?;
    let records: Vec<TstRecord> = path
        .iter()
        .map(|j| TstRecord {
            time: j.time,
            b: j.state.space.traits().iter().map(|t| t.b).collect(),
            mass: j.state.space.traits().iter().map(|t| j.state.config.mass(&t.id)).collect(),
        })
        .collect();
    to_json(&TstPath {
        truncated: path.len() > MAX_TST_JUMPS,
        records,
    })
}

#[wasm_bindgen]
pub fn simulate(params: &str) -> Result<String, JsError> {
    simulate_json(params).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn ode(params: &str) -> Result<String, JsError> {
    ode_json(params).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn tst(params: &str) -> Result<String, JsError> {
    tst_json(params).map_err(|e| JsError::new(&e))
}
