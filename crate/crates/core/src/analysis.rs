//! Hitting-time probes, ensemble statistics, time-scale regression and the
//! microscopic-versus-TST comparison.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::equilibria::{occupied_count_for, TstState};
use crate::error::{Error, Result};
use crate::microsim::{Event, Flow, Observer, SimState};
use crate::odelimit::DenseTrajectory;
use crate::traitspace::{OrderedTraitSpace, TraitId};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    /// First time the mass is at least the level.
    Up,
    /// First time the count is at most `floor(level * K)`.
    Down,
}

/// A first-passage probe on one trait.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeSpec {
    pub id: String,
    pub trait_id: TraitId,
    /// Threshold mass.
    pub level: f64,
    pub direction: Direction,
    /// Indices of probes that must all have fired before this one is watched.
    #[serde(default)]
    pub armed_by: Vec<usize>,
}

impl ProbeSpec {
    pub fn up(id: &str, trait_id: &str, level: f64) -> Self {
        ProbeSpec {
            id: id.into(),
            trait_id: trait_id.into(),
            level,
            direction: Direction::Up,
            armed_by: Vec::new(),
        }
    }

    pub fn down(id: &str, trait_id: &str, level: f64) -> Self {
        ProbeSpec {
            direction: Direction::Down,
            ..Self::up(id, trait_id, level)
        }
    }

    pub fn armed_by(mut self, probes: &[usize]) -> Self {
        self.armed_by = probes.to_vec();
        self
    }
}

fn check_arming(probes: &[ProbeSpec]) -> Result<()> {
    for (i, p) in probes.iter().enumerate() {
        if let Some(&a) = p.armed_by.iter().find(|&&a| a >= i) {
            return Err(Error::InvalidParameter(format!(
                "probe {} is armed by probe {a}, which does not precede it",
                p.id
            )));
        }
    }
    Ok(())
}

/// Streams microscopic states and records first-crossing times.
#[derive(Clone, Debug)]
pub struct ProbeObserver {
    k: f64,
    pub probes: Vec<ProbeSpec>,
    pub times: Vec<Option<f64>>,
    ranks: Vec<Option<usize>>,
    remaining: usize,
    /// End the run as soon as every probe has fired.
    pub stop_when_filled: bool,
}

impl ProbeObserver {
    pub fn new(k: u64, probes: Vec<ProbeSpec>) -> Result<Self> {
        check_arming(&probes)?;
        let n = probes.len();
        Ok(ProbeObserver {
            k: k as f64,
            probes,
            times: vec![None; n],
            ranks: vec![None; n],
            remaining: n,
            stop_when_filled: true,
        })
    }

    fn resolve(&mut self, chain: &OrderedTraitSpace) {
        for (p, r) in self.probes.iter().zip(self.ranks.iter_mut()) {
            *r = chain.rank_of(&p.trait_id);
        }
    }

    fn check(&mut self, state: &SimState) {
        // A probe firing can arm later probes at the same instant.
        for i in 0..self.probes.len() {
            if self.times[i].is_some() {
                continue;
            }
            let p = &self.probes[i];
            if p.armed_by.iter().any(|&a| self.times[a].is_none()) {
                continue;
            }
            let count = self.ranks[i].map_or(0, |r| state.counts[r]);
            let fired = match p.direction {
                Direction::Up => count as f64 / self.k >= p.level,
                Direction::Down => count as f64 <= (p.level * self.k).floor(),
            };
            if fired {
                self.times[i] = Some(state.t);
                self.remaining -= 1;
            }
        }
    }
}

impl Observer for ProbeObserver {
    fn start(&mut self, state: &SimState) {
        self.times.iter_mut().for_each(|t| *t = None);
        self.remaining = self.probes.len();
        self.resolve(&state.chain);
        self.check(state);
    }

    fn jumped(&mut self, state: &SimState, event: &Event) -> Flow {
        if let Event::Mutation { .. } = event {
            self.resolve(&state.chain);
        }
        if self.remaining > 0 {
            self.check(state);
        }
        if self.stop_when_filled && self.remaining == 0 {
            Flow::Stop
        } else {
            Flow::Continue
        }
    }
}

/// Probe times on a deterministic trajectory, from its dense output.
pub fn ode_probe_times(traj: &DenseTrajectory, chain: &OrderedTraitSpace, probes: &[ProbeSpec]) -> Result<Vec<Option<f64>>> {
    check_arming(probes)?;
    let mut times: Vec<Option<f64>> = Vec::with_capacity(probes.len());
    for p in probes {
        let comp = chain
            .rank_of(&p.trait_id)
            .ok_or_else(|| Error::UnknownTrait(p.trait_id.to_string()))?;
        let mut from = traj.ts[0];
        let mut armed = true;
        for &a in &p.armed_by {
            match times[a] {
                Some(t) => from = from.max(t),
                None => armed = false,
            }
        }
        let t = if armed {
            traj.first_crossing_after(comp, p.level, p.direction == Direction::Up, from)
        } else {
            None
        };
        times.push(t);
    }
    Ok(times)
}

/// Stops a run at its first mutation and records when and where it happened.
#[derive(Clone, Debug, Default)]
pub struct FirstMutation {
    pub time: Option<f64>,
    pub source: Option<TraitId>,
}

impl Observer for FirstMutation {
    fn jumped(&mut self, state: &SimState, event: &Event) -> Flow {
        if let Event::Mutation { source, .. } = event {
            self.time = Some(state.t);
            self.source = Some(state.chain.get(*source).id.clone());
            return Flow::Stop;
        }
        Flow::Continue
    }
}

/// Sample statistics of one probe over an ensemble.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeStats {
    pub id: String,
    pub replicas: usize,
    /// Replicas in which the probe never fired; excluded from the moments.
    pub censored: usize,
    pub mean: f64,
    pub variance: f64,
    pub stderr: f64,
}

impl ProbeStats {
    pub fn from_samples(id: &str, samples: &[Option<f64>]) -> Self {
        let obs: Vec<f64> = samples.iter().flatten().copied().collect();
        let n = obs.len();
        let mean = if n > 0 { obs.iter().sum::<f64>() / n as f64 } else { f64::NAN };
        let variance = if n > 1 {
            obs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64
        } else {
            f64::NAN
        };
        ProbeStats {
            id: id.into(),
            replicas: samples.len(),
            censored: samples.len() - n,
            mean,
            variance,
            stderr: (variance / n as f64).sqrt(),
        }
    }

    pub fn observed(&self) -> usize {
        self.replicas - self.censored
    }
}

/// Per-replica differences `b - a`, censored when either side is.
pub fn differences(a: &[Option<f64>], b: &[Option<f64>]) -> Vec<Option<f64>> {
    a.iter()
        .zip(b)
        .map(|(x, y)| match (x, y) {
            (Some(x), Some(y)) => Some(y - x),
            _ => None,
        })
        .collect()
}

/// Probe statistics of one ensemble cell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnsembleSummary {
    pub replicas: usize,
    pub probes: Vec<ProbeStats>,
}

impl EnsembleSummary {
    /// `per_replica[r][p]` is the time of probe `p` in replica `r`.
    pub fn new(ids: &[String], per_replica: &[Vec<Option<f64>>]) -> Result<Self> {
        if per_replica.len() < 2 {
            return Err(Error::InvalidParameter("statistics need at least 2 replicas".into()));
        }
        let probes = ids
            .iter()
            .enumerate()
            .map(|(p, id)| {
                let col: Vec<Option<f64>> = per_replica.iter().map(|r| r[p]).collect();
                ProbeStats::from_samples(id, &col)
            })
            .collect();
        Ok(EnsembleSummary {
            replicas: per_replica.len(),
            probes,
        })
    }

    pub fn get(&self, id: &str) -> Option<&ProbeStats> {
        self.probes.iter().find(|p| p.id == id)
    }
}

/// Mean hitting time at one value of epsilon.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitPoint {
    pub epsilon: f64,
    pub mean: f64,
}

/// Least-squares line of mean hitting time against `ln(1/epsilon)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimescaleFit {
    pub slope: f64,
    pub intercept: f64,
    pub slope_stderr: f64,
    /// 95% confidence interval of the slope.
    pub slope_ci: (f64, f64),
    /// Residual sum of squares.
    pub residual: f64,
    pub points: usize,
}

/// Fits `mean = slope * ln(1/epsilon) + intercept`.
///
/// Needs at least three finite points whose epsilons span `min_decades`
/// decades.
pub fn timescale_fit(points: &[FitPoint], min_decades: f64) -> Result<TimescaleFit> {
    if points.len() < 3 {
        return Err(Error::DegenerateGrid(format!("{} points; at least 3 needed", points.len())));
    }
    if let Some(p) = points.iter().find(|p| !(p.epsilon > 0.0) || !p.mean.is_finite()) {
        return Err(Error::DegenerateGrid(format!("unusable point {p:?}")));
    }
    let (lo, hi) = points
        .iter()
        .fold((f64::INFINITY, 0.0f64), |(lo, hi), p| (lo.min(p.epsilon), hi.max(p.epsilon)));
    let span = (hi / lo).log10();
    if span + 1e-12 < min_decades {
        return Err(Error::DegenerateGrid(format!(
            "epsilon grid spans {span:.3} decades; {min_decades} required"
        )));
    }
    let n = points.len() as f64;
    let xs: Vec<f64> = points.iter().map(|p| (1.0 / p.epsilon).ln()).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.mean).collect();
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    if !(sxx > 0.0) {
        return Err(Error::DegenerateGrid("all epsilons equal".into()));
    }
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let residual: f64 = xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| (y - intercept - slope * x).powi(2))
        .sum();
    let df = n - 2.0;
    let slope_stderr = (residual / df / sxx).sqrt();
    let t = StudentsT::new(0.0, 1.0, df)
        .map_err(|e| Error::DegenerateGrid(e.to_string()))?
        .inverse_cdf(0.975);
    Ok(TimescaleFit {
        slope,
        intercept,
        slope_stderr,
        slope_ci: (slope - t * slope_stderr, slope + t * slope_stderr),
        residual,
        points: points.len(),
    })
}

/// Functionals of one configuration compared between the two processes.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    /// Number of traits in the chain, `L + 1`.
    pub chain_len: usize,
    /// Number of atoms carrying mass at least eta.
    pub occupied: usize,
    /// Total mass of those atoms.
    pub occupied_mass: f64,
}

impl Observation {
    pub fn from_masses(masses: &[f64], eta: f64) -> Self {
        let occ: Vec<f64> = masses.iter().copied().filter(|&m| m >= eta).collect();
        Observation {
            chain_len: masses.len(),
            occupied: occ.len(),
            occupied_mass: occ.iter().sum(),
        }
    }

    pub fn from_tst(state: &TstState) -> Self {
        Observation {
            chain_len: state.space.len(),
            occupied: state.config.occupied_count(),
            occupied_mass: state.config.total_mass(),
        }
    }

    pub fn parity_holds(&self) -> bool {
        self.occupied == occupied_count_for(self.chain_len)
    }
}

/// Frequency of one occupied-count value in both samples.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BinComparison {
    pub occupied: usize,
    pub p_micro: f64,
    pub p_tst: f64,
    /// Standard error of the difference.
    pub stderr: f64,
    pub within: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimeComparison {
    pub t: f64,
    pub bins: Vec<BinComparison>,
    /// Total variation distance between the occupied-count distributions.
    pub tv_distance: f64,
    pub mean_jumps_micro: f64,
    pub stderr_jumps_micro: f64,
    pub mean_jumps_tst: f64,
    pub stderr_jumps_tst: f64,
    pub jumps_within: bool,
    pub mean_mass_micro: f64,
    pub mean_mass_tst: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompareReport {
    pub bands: f64,
    pub times: Vec<TimeComparison>,
    /// Microscopic observations whose occupied count differs from the parity count.
    pub parity_violations: usize,
    pub micro_observations: usize,
    pub bins_within: bool,
    pub jumps_within: bool,
}

fn mean_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let v = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
    (m, (v / n).sqrt())
}

fn within(diff: f64, se: f64, bands: f64) -> bool {
    if se > 0.0 {
        diff.abs() <= bands * se
    } else {
        diff.abs() <= 1e-12
    }
}

/// Compares occupied-count distributions and jump counts time by time.
///
/// `micro[r][i]` and `tst[r][i]` are replica `r` observed at `times[i]`.
pub fn compare_micro_to_tst(
    times: &[f64],
    micro: &[Vec<Observation>],
    tst: &[Vec<Observation>],
    initial_len: usize,
    bands: f64,
) -> Result<CompareReport> {
    if micro.len() < 2 || tst.len() < 2 {
        return Err(Error::InvalidParameter("comparison needs at least 2 replicas per process".into()));
    }
    if micro.iter().chain(tst).any(|r| r.len() != times.len()) {
        return Err(Error::InvalidParameter("every replica needs one observation per time".into()));
    }
    let mut out = Vec::with_capacity(times.len());
    let mut parity_violations = 0;
    for (i, &t) in times.iter().enumerate() {
        let a: Vec<Observation> = micro.iter().map(|r| r[i]).collect();
        let b: Vec<Observation> = tst.iter().map(|r| r[i]).collect();
        parity_violations += a.iter().filter(|o| !o.parity_holds()).count();
        let max_occ = a.iter().chain(&b).map(|o| o.occupied).max().unwrap_or(0);
        let (na, nb) = (a.len() as f64, b.len() as f64);
        let mut bins = Vec::new();
        let mut tv = 0.0;
        for v in 0..=max_occ {
            let pa = a.iter().filter(|o| o.occupied == v).count() as f64 / na;
            let pb = b.iter().filter(|o| o.occupied == v).count() as f64 / nb;
            if pa == 0.0 && pb == 0.0 {
                continue;
            }
            let se = (pa * (1.0 - pa) / na + pb * (1.0 - pb) / nb).sqrt();
            tv += 0.5 * (pa - pb).abs();
            bins.push(BinComparison {
                occupied: v,
                p_micro: pa,
                p_tst: pb,
                stderr: se,
                within: within(pa - pb, se, bands),
            });
        }
        let ja: Vec<f64> = a.iter().map(|o| (o.chain_len - initial_len) as f64).collect();
        let jb: Vec<f64> = b.iter().map(|o| (o.chain_len - initial_len) as f64).collect();
        let (ma, sa) = mean_se(&ja);
        let (mb, sb) = mean_se(&jb);
        let mass_a = a.iter().map(|o| o.occupied_mass).sum::<f64>() / na;
        let mass_b = b.iter().map(|o| o.occupied_mass).sum::<f64>() / nb;
        out.push(TimeComparison {
            t,
            bins,
            tv_distance: tv,
            mean_jumps_micro: ma,
            stderr_jumps_micro: sa,
            mean_jumps_tst: mb,
            stderr_jumps_tst: sb,
            jumps_within: within(ma - mb, (sa * sa + sb * sb).sqrt(), bands),
            mean_mass_micro: mass_a,
            mean_mass_tst: mass_b,
        });
    }
    Ok(CompareReport {
        bands,
        bins_within: out.iter().all(|t| t.bins.iter().all(|b| b.within)),
        jumps_within: out.iter().all(|t| t.jumps_within),
        times: out,
        parity_violations,
        micro_observations: micro.len() * times.len(),
    })
}
