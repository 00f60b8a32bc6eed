//! Exact event-driven simulation of the rescaled individual-based process.
//!
//! Individuals of one trait are exchangeable, so rates are aggregated per
//! trait. Every event is drawn with the direct method: an exponential
//! waiting time with the total rate, then a categorical choice scanning the
//! channels in a fixed order: births by rank, deaths by rank, migration
//! edges by source rank (downward edge first), mutations by rank.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mutation::{MutationLaw, MutationLawSpec};
use crate::rng::{categorical, exp_wait, SimRng};
use crate::traitspace::{OrderedTraitSpace, TraitId};

/// Which neighbours a migrant may move to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MigrationMode {
    /// Any fitness-adjacent trait of the chain, occupied or not.
    AllNeighbors,
    /// Only fitness-adjacent traits currently carrying individuals.
    OccupiedOnly,
}

/// Everything needed to run one replica.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub space: OrderedTraitSpace,
    /// Population scale.
    pub k: u64,
    pub epsilon: f64,
    pub sigma: f64,
    /// Initial individual counts, indexed by rank in `space`.
    pub initial: Vec<u64>,
    /// End time in natural units.
    pub horizon: f64,
    pub mode: MigrationMode,
    pub seed: u64,
    #[serde(default)]
    pub mutation: Option<MutationLawSpec>,
}

impl Scenario {
    pub fn validate(&self) -> Result<()> {
        self.space.validate_order()?;
        if self.k == 0 {
            return Err(Error::InvalidParameter("K must be a positive integer".into()));
        }
        if !(0.0..=1.0).contains(&self.epsilon) {
            return Err(Error::InvalidParameter(format!("epsilon = {} outside [0, 1]", self.epsilon)));
        }
        if !(0.0..=1.0).contains(&self.sigma) {
            return Err(Error::InvalidParameter(format!("sigma = {} outside [0, 1]", self.sigma)));
        }
        if self.initial.len() != self.space.len() {
            return Err(Error::InvalidParameter(format!(
                "{} initial counts for {} traits",
                self.initial.len(),
                self.space.len()
            )));
        }
        if !(self.horizon >= 0.0) || !self.horizon.is_finite() {
            return Err(Error::InvalidParameter("horizon must be finite and >= 0".into()));
        }
        // Genotype chains mutate through their allele law, which only the GST path uses.
        let diploid = self.space.traits().iter().all(|t| t.genotype.is_some());
        if self.sigma > 0.0 && self.mutation.is_none() && !diploid && self.space.traits().iter().any(|t| t.mu > 0.0) {
            return Err(Error::InvalidParameter("sigma > 0 requires a mutation law".into()));
        }
        // Guard the rate arithmetic: counts must stay far from f64 integer precision.
        let max_count = self.space.traits().iter().map(|t| t.b / self.space.kernels().alpha_self).fold(0.0, f64::max)
            * self.k as f64;
        if max_count > 1e15 || self.initial.iter().any(|&c| c > (1u64 << 52)) {
            return Err(Error::InvalidParameter("population scale too large".into()));
        }
        Ok(())
    }

    /// Advisory regime checks; never fatal.
    pub fn regime_warnings(&self) -> Vec<String> {
        let mut w = Vec::new();
        let k = self.k as f64;
        let ke = k * self.epsilon;
        if self.epsilon > 0.0 && !(ke > 10.0 && ke < k / 10.0) {
            w.push(format!("K*epsilon = {ke:.3} is not well inside 1 << K*epsilon << K"));
        }
        if self.sigma > 0.0 && self.epsilon > 0.0 {
            let sep = k * self.sigma * (1.0 / self.epsilon).ln();
            if sep > 0.1 {
                w.push(format!("K*sigma*ln(1/epsilon) = {sep:.3} is not << 1"));
            }
        }
        w
    }

    pub fn initial_state(&self) -> SimState {
        SimState {
            chain: self.space.clone(),
            counts: self.initial.clone(),
            t: 0.0,
            events: 0,
        }
    }
}

/// Individual counts on the current chain.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimState {
    pub chain: OrderedTraitSpace,
    /// Counts by rank.
    pub counts: Vec<u64>,
    pub t: f64,
    pub events: u64,
}

impl SimState {
    pub fn mass(&self, rank: usize, k: u64) -> f64 {
        self.counts[rank] as f64 / k as f64
    }

    pub fn masses(&self, k: u64) -> Vec<f64> {
        self.counts.iter().map(|&c| c as f64 / k as f64).collect()
    }

    pub fn count_of(&self, id: &TraitId) -> Option<u64> {
        self.chain.rank_of(id).map(|r| self.counts[r])
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }
}

/// Absolute event rates of every channel.
#[derive(Clone, Debug, PartialEq)]
pub struct EventRates {
    pub birth: Vec<f64>,
    pub death: Vec<f64>,
    /// `[towards rank - 1, towards rank + 1]` per source rank.
    pub migration: Vec<[f64; 2]>,
    pub mutation: Vec<f64>,
    pub total: f64,
}

impl EventRates {
    /// Expected instantaneous change of every rescaled mass `N_i / K`,
    /// excluding mutant creation.
    pub fn drift(&self, k: u64) -> Vec<f64> {
        let n = self.birth.len();
        let mut out: Vec<f64> = (0..n).map(|i| self.birth[i] - self.death[i]).collect();
        for i in 0..n {
            let [down, up] = self.migration[i];
            out[i] -= down + up;
            if i > 0 {
                out[i - 1] += down;
            }
            if i + 1 < n {
                out[i + 1] += up;
            }
        }
        out.iter().map(|v| v / k as f64).collect()
    }
}

/// One simulated event.
#[derive(Clone, Debug, PartialEq)]
pub enum Event {
    Birth(usize),
    Death(usize),
    Migration { from: usize, to: usize },
    /// A mutant spliced at `mutant_rank`; ranks above it shifted up by one.
    Mutation { source: usize, mutant_rank: usize },
}

/// Outcome of `step`.
#[derive(Clone, Debug, PartialEq)]
pub enum StepOutcome {
    Jumped { time: f64, event: Event },
    /// Total rate is zero; the state never changes again.
    Absorbed,
}

/// Returned by observers after each jump.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Flow {
    Continue,
    Stop,
}

/// Streaming observer of a run.
pub trait Observer {
    fn start(&mut self, _state: &SimState) {}
    /// `state` held on `[state.t, t_next)` and is about to change.
    fn hold(&mut self, _state: &SimState, _t_next: f64) {}
    fn jumped(&mut self, _state: &SimState, _event: &Event) -> Flow {
        Flow::Continue
    }
    /// The run ended at `t_end` with `state` still in force.
    fn finish(&mut self, _state: &SimState, _t_end: f64) {}
}

impl Observer for () {}

impl<O: Observer + ?Sized> Observer for &mut O {
    fn start(&mut self, state: &SimState) {
        (**self).start(state)
    }
    fn hold(&mut self, state: &SimState, t_next: f64) {
        (**self).hold(state, t_next)
    }
    fn jumped(&mut self, state: &SimState, event: &Event) -> Flow {
        (**self).jumped(state, event)
    }
    fn finish(&mut self, state: &SimState, t_end: f64) {
        (**self).finish(state, t_end)
    }
}

impl<A: Observer, B: Observer> Observer for (A, B) {
    fn start(&mut self, state: &SimState) {
        self.0.start(state);
        self.1.start(state);
    }
    fn hold(&mut self, state: &SimState, t_next: f64) {
        self.0.hold(state, t_next);
        self.1.hold(state, t_next);
    }
    fn jumped(&mut self, state: &SimState, event: &Event) -> Flow {
        let a = self.0.jumped(state, event);
        let b = self.1.jumped(state, event);
        if a == Flow::Stop || b == Flow::Stop {
            Flow::Stop
        } else {
            Flow::Continue
        }
    }
    fn finish(&mut self, state: &SimState, t_end: f64) {
        self.0.finish(state, t_end);
        self.1.finish(state, t_end);
    }
}

/// Whether a migration edge can ever carry individuals on this chain.
pub(crate) fn structural_edges(chain: &OrderedTraitSpace) -> Vec<[bool; 2]> {
    let n = chain.len();
    let m = chain.kernels().m_neighbor;
    (0..n)
        .map(|i| {
            let edge = |j: usize| {
                let (a, b) = (chain.get(i), chain.get(j));
                let shares = match (&a.genotype, &b.genotype) {
                    (Some(ga), Some(gb)) => ga.shares_allele(gb),
                    _ => true,
                };
                m > 0.0 && shares
            };
            [i > 0 && edge(i - 1), i + 1 < n && edge(i + 1)]
        })
        .collect()
}

/// Computes every channel rate of `s` under `sc`.
pub fn compute_rates(s: &SimState, sc: &Scenario) -> EventRates {
    let mut engine = RateBuffer::new(&s.chain);
    engine.fill(s, sc.k as f64, sc.epsilon, sc.sigma, sc.mode);
    let n = s.chain.len();
    EventRates {
        birth: engine.w[..n].to_vec(),
        death: engine.w[n..2 * n].to_vec(),
        migration: (0..n).map(|i| [engine.w[2 * n + 2 * i], engine.w[2 * n + 2 * i + 1]]).collect(),
        mutation: engine.w[4 * n..5 * n].to_vec(),
        total: engine.total,
    }
}

/// Flat channel weights `[birth n | death n | migration 2n | mutation n]`.
#[derive(Clone, Debug)]
struct RateBuffer {
    w: Vec<f64>,
    edges: Vec<[bool; 2]>,
    total: f64,
}

impl RateBuffer {
    fn new(chain: &OrderedTraitSpace) -> Self {
        RateBuffer {
            w: vec![0.0; 5 * chain.len()],
            edges: structural_edges(chain),
            total: 0.0,
        }
    }

    fn rebuild(&mut self, chain: &OrderedTraitSpace) {
        self.w.resize(5 * chain.len(), 0.0);
        self.edges = structural_edges(chain);
    }

    #[inline]
    fn fill(&mut self, s: &SimState, k: f64, eps: f64, sigma: f64, mode: MigrationMode) {
        let n = s.counts.len();
        let kern = s.chain.kernels();
        let (a_self, a_nb, m) = (kern.alpha_self, kern.alpha_neighbor, kern.m_neighbor);
        let inv_k = 1.0 / k;
        let occupied_only = mode == MigrationMode::OccupiedOnly;
        let (birth, rest) = self.w.split_at_mut(n);
        let (death, rest) = rest.split_at_mut(n);
        let (mig, mutation) = rest.split_at_mut(2 * n);
        let mut total = 0.0;
        for i in 0..n {
            let c = s.counts[i];
            if c == 0 {
                birth[i] = 0.0;
                death[i] = 0.0;
                mig[2 * i] = 0.0;
                mig[2 * i + 1] = 0.0;
                mutation[i] = 0.0;
                continue;
            }
            let x = c as f64;
            let t = s.chain.get(i);
            let below = if i > 0 { s.counts[i - 1] } else { 0 };
            let above = if i + 1 < n { s.counts[i + 1] } else { 0 };
            let comp = a_self * x + a_nb * (below + above) as f64;
            let b = t.b * x;
            let d = (t.d + comp * inv_k) * x;
            let [down_ok, up_ok] = self.edges[i];
            let mig_rate = eps * m * x;
            let down = if down_ok && !(occupied_only && below == 0) { mig_rate } else { 0.0 };
            let up = if up_ok && !(occupied_only && above == 0) { mig_rate } else { 0.0 };
            let mu = sigma * t.mu * x;
            birth[i] = b;
            death[i] = d;
            mig[2 * i] = down;
            mig[2 * i + 1] = up;
            mutation[i] = mu;
            total += b + d + down + up + mu;
        }
        self.total = total;
    }
}

/// A running replica: state, generator and rate buffers.
pub struct Simulation<'a> {
    sc: &'a Scenario,
    state: SimState,
    rng: SimRng,
    rates: RateBuffer,
}

impl<'a> Simulation<'a> {
    pub fn new(sc: &'a Scenario, rng: SimRng) -> Result<Self> {
        sc.validate()?;
        let state = sc.initial_state();
        let rates = RateBuffer::new(&state.chain);
        Ok(Simulation { sc, state, rng, rates })
    }

    /// Starts from an explicit state instead of the scenario's initial counts.
    pub fn from_state(sc: &'a Scenario, state: SimState, rng: SimRng) -> Result<Self> {
        sc.validate()?;
        if state.counts.len() != state.chain.len() {
            return Err(Error::InvalidParameter("counts do not match the chain".into()));
        }
        let rates = RateBuffer::new(&state.chain);
        Ok(Simulation { sc, state, rng, rates })
    }

    pub fn state(&self) -> &SimState {
        &self.state
    }

    pub fn into_state(self) -> SimState {
        self.state
    }

    /// Performs one event.
    pub fn step(&mut self) -> Result<StepOutcome> {
        let sc = self.sc;
        self.rates
            .fill(&self.state, sc.k as f64, sc.epsilon, sc.sigma, sc.mode);
        let total = self.rates.total;
        if !(total > 0.0) {
            return Ok(StepOutcome::Absorbed);
        }
        let time = self.state.t + exp_wait(&mut self.rng, total);
        let channel = self.select(total);
        let event = self.apply(channel)?;
        self.state.t = time;
        self.state.events += 1;
        Ok(StepOutcome::Jumped { time, event })
    }

    /// Peeks the next event time and channel without applying it.
    fn draw(&mut self) -> Option<(f64, usize)> {
        let sc = self.sc;
        self.rates
            .fill(&self.state, sc.k as f64, sc.epsilon, sc.sigma, sc.mode);
        let total = self.rates.total;
        if !(total > 0.0) {
            return None;
        }
        let time = self.state.t + exp_wait(&mut self.rng, total);
        Some((time, self.select(total)))
    }

    #[inline]
    fn select(&mut self, total: f64) -> usize {
        categorical(&mut self.rng, &self.rates.w, total)
    }

    fn apply(&mut self, channel: usize) -> Result<Event> {
        let n = self.state.counts.len();
        let counts = &mut self.state.counts;
        let ev = match channel / n {
            0 => {
                counts[channel] += 1;
                Event::Birth(channel)
            }
            1 => {
                let i = channel - n;
                counts[i] -= 1;
                Event::Death(i)
            }
            2 | 3 => {
                let e = channel - 2 * n;
                let from = e / 2;
                let to = if e.is_multiple_of(2) { from - 1 } else { from + 1 };
                counts[from] -= 1;
                counts[to] += 1;
                Event::Migration { from, to }
            }
            _ => {
                let source = channel - 4 * n;
                let law: &dyn MutationLaw = match &self.sc.mutation {
                    Some(l) => l.as_law(),
                    None => return Err(Error::MutationLaw("no mutation law configured".into())),
                };
                let mutant = law.sample(&self.state.chain, source, &mut self.rng)?;
                let rank = mutant.rank;
                self.state.chain = self.state.chain.inserted(rank, mutant.spec)?;
                self.state.counts.insert(rank, 1);
                self.rates.rebuild(&self.state.chain);
                Event::Mutation {
                    source: if source >= rank { source + 1 } else { source },
                    mutant_rank: rank,
                }
            }
        };
        Ok(ev)
    }
}

/// How a run ended.
#[derive(Clone, Debug, PartialEq)]
pub struct RunOutcome {
    pub state: SimState,
    /// Time the run stopped: the horizon, or the stop event time.
    pub end_time: f64,
    pub absorbed: bool,
    pub stopped_by_observer: bool,
}

/// Runs one replica until the horizon, absorption, or an observer stop.
pub fn run<O: Observer>(sc: &Scenario, rng: SimRng, mut observer: O) -> Result<RunOutcome> {
    let mut sim = Simulation::new(sc, rng)?;
    run_simulation(&mut sim, sc.horizon, &mut observer)
}

/// Continues a simulation until absolute time `until`.
pub fn run_simulation<O: Observer>(sim: &mut Simulation<'_>, until: f64, observer: &mut O) -> Result<RunOutcome> {
    observer.start(&sim.state);
    loop {
        let Some((time, channel)) = sim.draw() else {
            observer.finish(&sim.state, until);
            return Ok(RunOutcome {
                state: sim.state.clone(),
                end_time: until,
                absorbed: true,
                stopped_by_observer: false,
            });
        };
        if time > until {
            observer.finish(&sim.state, until);
            return Ok(RunOutcome {
                state: sim.state.clone(),
                end_time: until,
                absorbed: false,
                stopped_by_observer: false,
            });
        }
        observer.hold(&sim.state, time);
        let event = sim.apply(channel)?;
        sim.state.t = time;
        sim.state.events += 1;
        if observer.jumped(&sim.state, &event) == Flow::Stop {
            observer.finish(&sim.state, time);
            return Ok(RunOutcome {
                state: sim.state.clone(),
                end_time: time,
                absorbed: false,
                stopped_by_observer: true,
            });
        }
    }
}

/// Snapshot of a path at one observation time.
#[derive(Clone, Debug, PartialEq)]
pub struct Snapshot {
    pub t: f64,
    /// Index into `GridSampler::chains` of the chain in force.
    pub chain: usize,
    pub counts: Vec<u64>,
}

/// Records the state on a fixed time grid (the state in force at each grid time).
#[derive(Clone, Debug, Default)]
pub struct GridSampler {
    grid: Vec<f64>,
    next: usize,
    pub chains: Vec<OrderedTraitSpace>,
    pub snapshots: Vec<Snapshot>,
}

impl GridSampler {
    pub fn new(grid: Vec<f64>) -> Self {
        GridSampler {
            grid,
            ..Default::default()
        }
    }

    /// `points` equispaced times on `[0, horizon]`, both ends included.
    pub fn uniform(horizon: f64, points: usize) -> Self {
        let grid = if points <= 1 {
            vec![0.0]
        } else {
            (0..points).map(|i| horizon * i as f64 / (points - 1) as f64).collect()
        };
        Self::new(grid)
    }

    fn record_until(&mut self, state: &SimState, t_excl: f64, inclusive: bool) {
        while self.next < self.grid.len() {
            let g = self.grid[self.next];
            if g < t_excl || (inclusive && g <= t_excl) {
                if self.chains.last() != Some(&state.chain) {
                    self.chains.push(state.chain.clone());
                }
                self.snapshots.push(Snapshot {
                    t: g,
                    chain: self.chains.len() - 1,
                    counts: state.counts.clone(),
                });
                self.next += 1;
            } else {
                break;
            }
        }
    }

    pub fn chain_of(&self, s: &Snapshot) -> &OrderedTraitSpace {
        &self.chains[s.chain]
    }
}

impl Observer for GridSampler {
    fn start(&mut self, _state: &SimState) {
        self.next = 0;
        self.snapshots.clear();
        self.chains.clear();
    }
    fn hold(&mut self, state: &SimState, t_next: f64) {
        if self.next < self.grid.len() && self.grid[self.next] < t_next {
            self.record_until(state, t_next, false);
        }
    }
    fn finish(&mut self, state: &SimState, t_end: f64) {
        self.record_until(state, t_end, true);
    }
}

/// Time-weighted integral of each trait's rescaled mass, by initial trait id.
#[derive(Clone, Debug, Default)]
pub struct MassIntegrator {
    pub k: u64,
    last_t: f64,
    pub integral: Vec<(TraitId, f64)>,
    pub elapsed: f64,
}

impl MassIntegrator {
    pub fn new(k: u64) -> Self {
        MassIntegrator {
            k,
            ..Default::default()
        }
    }

    fn accumulate(&mut self, state: &SimState, until: f64) {
        let dt = until - self.last_t;
        if dt <= 0.0 {
            return;
        }
        for (r, t) in state.chain.traits().iter().enumerate() {
            let m = state.counts[r] as f64 / self.k as f64 * dt;
            match self.integral.iter_mut().find(|(id, _)| *id == t.id) {
                Some(slot) => slot.1 += m,
                None => self.integral.push((t.id.clone(), m)),
            }
        }
        self.elapsed += dt;
        self.last_t = until;
    }

    pub fn mean(&self, id: &TraitId) -> f64 {
        self.integral
            .iter()
            .find(|(i, _)| i == id)
            .map_or(0.0, |(_, v)| v / self.elapsed)
    }
}

impl Observer for MassIntegrator {
    fn start(&mut self, state: &SimState) {
        self.last_t = state.t;
    }
    fn hold(&mut self, state: &SimState, t_next: f64) {
        self.accumulate(state, t_next);
    }
    fn finish(&mut self, state: &SimState, t_end: f64) {
        self.accumulate(state, t_end);
    }
}
