//! Deterministic large-population limit: Lotka–Volterra competition between
//! fitness-adjacent traits with nearest-neighbour migration, an adaptive
//! integrator for it, and the closed-form phase time constants.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::microsim::{structural_edges, MigrationMode};
use crate::traitspace::OrderedTraitSpace;

#[derive(Clone, Debug, PartialEq)]
pub struct OdeSystem {
    pub chain: OrderedTraitSpace,
    pub epsilon: f64,
    pub mode: MigrationMode,
    edges: Vec<[bool; 2]>,
}

impl OdeSystem {
    pub fn new(chain: OrderedTraitSpace, epsilon: f64, mode: MigrationMode) -> Self {
        let edges = structural_edges(&chain);
        OdeSystem {
            chain,
            epsilon,
            mode,
            edges,
        }
    }

    pub fn dim(&self) -> usize {
        self.chain.len()
    }

    /// Right-hand side at a nonnegative state.
    pub fn rhs(&self, xi: &[f64]) -> Result<Vec<f64>> {
        if xi.len() != self.dim() {
            return Err(Error::InvalidParameter(format!("state of length {} for {} traits", xi.len(), self.dim())));
        }
        if let Some((index, &value)) = xi.iter().enumerate().find(|(_, v)| !(**v >= 0.0)) {
            return Err(Error::NegativeState { index, value });
        }
        let mut out = vec![0.0; xi.len()];
        self.rhs_into(xi, &mut out);
        Ok(out)
    }

    fn rhs_into(&self, xi: &[f64], out: &mut [f64]) {
        let n = xi.len();
        let k = self.chain.kernels();
        let em = self.epsilon * k.m_neighbor;
        let occupied_only = self.mode == MigrationMode::OccupiedOnly;
        out.fill(0.0);
        for i in 0..n {
            let x = xi[i];
            if x == 0.0 {
                continue;
            }
            let t = self.chain.get(i);
            let below = if i > 0 { xi[i - 1] } else { 0.0 };
            let above = if i + 1 < n { xi[i + 1] } else { 0.0 };
            out[i] += (t.b - t.d - k.alpha_self * x - k.alpha_neighbor * (below + above)) * x;
            let [down_ok, up_ok] = self.edges[i];
            if down_ok && !(occupied_only && below == 0.0) {
                out[i] -= em * x;
                out[i - 1] += em * x;
            }
            if up_ok && !(occupied_only && above == 0.0) {
                out[i] -= em * x;
                out[i + 1] += em * x;
            }
        }
    }
}

/// Integrator settings.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepControl {
    pub rtol: f64,
    pub atol: f64,
    pub h_init: f64,
    pub h_max: f64,
}

impl Default for StepControl {
    fn default() -> Self {
        StepControl {
            rtol: 1e-8,
            atol: 1e-12,
            h_init: 1e-3,
            h_max: f64::INFINITY,
        }
    }
}

/// Accepted steps with states and derivatives, for cubic Hermite dense output.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseTrajectory {
    pub ts: Vec<f64>,
    pub ys: Vec<Vec<f64>>,
    pub fs: Vec<Vec<f64>>,
    pub rejected: usize,
}

impl DenseTrajectory {
    pub fn final_state(&self) -> &[f64] {
        self.ys.last().expect("nonempty trajectory")
    }

    pub fn end_time(&self) -> f64 {
        *self.ts.last().expect("nonempty trajectory")
    }

    fn segment(&self, t: f64) -> usize {
        let i = self.ts.partition_point(|&s| s <= t);
        i.saturating_sub(1).min(self.ts.len().saturating_sub(2))
    }

    fn hermite(&self, seg: usize, comp: usize, t: f64) -> f64 {
        if self.ts.len() == 1 {
            return self.ys[0][comp];
        }
        let (t0, t1) = (self.ts[seg], self.ts[seg + 1]);
        let h = t1 - t0;
        let s = (t - t0) / h;
        let (y0, y1) = (self.ys[seg][comp], self.ys[seg + 1][comp]);
        let (f0, f1) = (self.fs[seg][comp], self.fs[seg + 1][comp]);
        let s2 = s * s;
        let s3 = s2 * s;
        (2.0 * s3 - 3.0 * s2 + 1.0) * y0 + (s3 - 2.0 * s2 + s) * h * f0 + (-2.0 * s3 + 3.0 * s2) * y1 + (s3 - s2) * h * f1
    }

    /// Interpolated state at `t`, clamped to the integration interval.
    pub fn at(&self, t: f64) -> Vec<f64> {
        let t = t.clamp(self.ts[0], self.end_time());
        let seg = self.segment(t);
        (0..self.ys[0].len()).map(|c| self.hermite(seg, c, t)).collect()
    }

    /// First time component `comp` reaches `level` from below (`upward`) or
    /// from above, located on the dense output by bisection.
    pub fn first_crossing(&self, comp: usize, level: f64, upward: bool) -> Option<f64> {
        self.first_crossing_after(comp, level, upward, self.ts[0])
    }

    /// As [`first_crossing`](Self::first_crossing), searching only from `t_from` on.
    pub fn first_crossing_after(&self, comp: usize, level: f64, upward: bool, t_from: f64) -> Option<f64> {
        let hit = |v: f64| if upward { v >= level } else { v <= level };
        if t_from > self.end_time() {
            return None;
        }
        let first = self.segment(t_from);
        if hit(self.hermite(first, comp, t_from)) {
            return Some(t_from);
        }
        for seg in first..self.ts.len().saturating_sub(1) {
            let t0 = self.ts[seg].max(t_from);
            let t1 = self.ts[seg + 1];
            if t1 <= t0 {
                continue;
            }
            // Hermite cubics can cross inside a segment whose end values do not;
            // sample a few interior points before trusting the endpoints.
            let probes = 8;
            let mut lo = t0;
            let mut found = None;
            for k in 1..=probes {
                let t = t0 + (t1 - t0) * k as f64 / probes as f64;
                if hit(self.hermite(seg, comp, t)) {
                    found = Some((lo, t));
                    break;
                }
                lo = t;
            }
            if let Some((mut a, mut b)) = found {
                for _ in 0..200 {
                    let mid = 0.5 * (a + b);
                    if mid <= a || mid >= b {
                        break;
                    }
                    if hit(self.hermite(seg, comp, mid)) {
                        b = mid;
                    } else {
                        a = mid;
                    }
                }
                return Some(b);
            }
        }
        None
    }
}

fn rk4_step(sys: &OdeSystem, y: &[f64], f0: &[f64], h: f64, buf: &mut [Vec<f64>; 4]) -> Vec<f64> {
    let n = y.len();
    let [k2, k3, k4, tmp] = buf;
    for i in 0..n {
        tmp[i] = (y[i] + 0.5 * h * f0[i]).max(0.0);
    }
    sys.rhs_into(tmp, k2);
    for i in 0..n {
        tmp[i] = (y[i] + 0.5 * h * k2[i]).max(0.0);
    }
    sys.rhs_into(tmp, k3);
    for i in 0..n {
        tmp[i] = (y[i] + h * k3[i]).max(0.0);
    }
    sys.rhs_into(tmp, k4);
    (0..n)
        .map(|i| y[i] + h / 6.0 * (f0[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
        .collect()
}

/// Integrates on `[0, horizon]` with classical RK4, step doubling for the
/// error estimate and proportional–integral step adaptation. A step that
/// produces a negative component is rejected and retried smaller.
pub fn integrate(sys: &OdeSystem, xi0: &[f64], horizon: f64, ctl: StepControl) -> Result<DenseTrajectory> {
    let f0 = sys.rhs(xi0)?;
    if !(horizon >= 0.0) || !horizon.is_finite() {
        return Err(Error::InvalidParameter("horizon must be finite and >= 0".into()));
    }
    let n = xi0.len();
    let mut traj = DenseTrajectory {
        ts: vec![0.0],
        ys: vec![xi0.to_vec()],
        fs: vec![f0],
        rejected: 0,
    };
    let mut buf = [vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]];
    let mut t = 0.0;
    let mut h = ctl.h_init.min(ctl.h_max).min(horizon);
    let mut err_prev: f64 = 1.0;
    let (alpha, beta) = (0.7 / 5.0, 0.4 / 5.0);
    while t < horizon {
        h = h.min(horizon - t);
        if h <= 1e-14 * t.abs().max(1.0) {
            return Err(Error::StepUnderflow { t, h });
        }
        let y = traj.ys.last().unwrap().clone();
        let f = traj.fs.last().unwrap().clone();
        let full = rk4_step(sys, &y, &f, h, &mut buf);
        let half = rk4_step(sys, &y, &f, 0.5 * h, &mut buf);
        let fh = {
            let mut v = vec![0.0; n];
            sys.rhs_into(&half, &mut v);
            v
        };
        let two = rk4_step(sys, &half, &fh, 0.5 * h, &mut buf);
        let mut err: f64 = 0.0;
        for i in 0..n {
            let sc = ctl.atol + ctl.rtol * y[i].abs().max(two[i].abs());
            err = err.max(((two[i] - full[i]) / 15.0).abs() / sc);
        }
        let negative = two.iter().any(|v| *v < 0.0) || half.iter().any(|v| *v < 0.0);
        if negative || !(err <= 1.0) {
            traj.rejected += 1;
            let shrink = if negative || !err.is_finite() {
                0.5
            } else {
                (0.9 * err.powf(-0.25)).clamp(0.2, 0.9)
            };
            h *= shrink;
            continue;
        }
        t += h;
        let mut fn_ = vec![0.0; n];
        sys.rhs_into(&two, &mut fn_);
        traj.ts.push(if horizon - t < 1e-12 * horizon.max(1.0) { horizon } else { t });
        if horizon - t < 1e-12 * horizon.max(1.0) {
            t = horizon;
        }
        traj.ys.push(two);
        traj.fs.push(fn_);
        let e = err.max(1e-10);
        let factor = (0.9 * e.powf(-alpha) * err_prev.powf(beta)).clamp(0.2, 5.0);
        err_prev = e;
        h = (h * factor).min(ctl.h_max);
    }
    Ok(traj)
}

/// Closed-form phase constants of sequential fixation, as coefficients of
/// `ln(1/epsilon)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhasePredictions {
    /// `(rank i, 1 / f(x_i, x_{i-1}))` for each invasion step up the chain.
    pub growth: Vec<(usize, f64)>,
    /// `min(|f(x0,x1)| / f(x2,x1), 1)`; needs three traits.
    pub c1: Option<f64>,
    /// `c1 * |f(x1,x2)| / (b0 - d0)`.
    pub c2: Option<f64>,
    /// Continuation of the `c1, c2` pattern along longer chains. Bounds only.
    pub recovery_extrapolated: Vec<f64>,
    /// Time constant after which the equilibrium is reached: the sharp three-
    /// trait constant, or the doubled growth sum on longer chains.
    pub t_bar: f64,
    pub eta: f64,
}

/// Default macroscopic threshold: a tenth of the smallest monomorphic density.
pub fn default_eta(chain: &OrderedTraitSpace) -> f64 {
    0.1 * (0..chain.len()).map(|r| chain.n_bar(r)).fold(f64::INFINITY, f64::min)
}

pub fn phase_predictions(sys: &OdeSystem, eta: Option<f64>) -> Result<PhasePredictions> {
    let ch = &sys.chain;
    ch.validate_order()?;
    let eta = eta.unwrap_or_else(|| default_eta(ch));
    let n = ch.len();
    let growth: Vec<(usize, f64)> = (1..n).map(|i| (i, 1.0 / ch.fitness(i, i - 1))).collect();
    let sum_growth: f64 = growth.iter().map(|g| g.1).sum();
    let (mut c1, mut c2, mut extra) = (None, None, Vec::new());
    let t_bar = if n >= 3 {
        let g0 = ch.get(0).growth();
        let a = (ch.fitness(0, 1).abs() / ch.fitness(2, 1)).min(1.0);
        c1 = Some(a);
        let b = a * ch.fitness(1, 2).abs() / g0;
        c2 = Some(b);
        let mut prev = b;
        for k in 3..n {
            prev *= ch.fitness(k - 1, k).abs() / ch.get(k - 2).growth();
            extra.push(prev);
        }
        if n == 3 {
            growth[0].1 + growth[1].1 + a / g0
        } else {
            2.0 * sum_growth
        }
    } else {
        sum_growth
    };
    Ok(PhasePredictions {
        growth,
        c1,
        c2,
        recovery_extrapolated: extra,
        t_bar,
        eta,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::traitspace::{KernelSpec, TraitSpec};

    fn chain_with(bs: &[f64], d: f64, alpha: f64) -> OrderedTraitSpace {
        let traits = bs
            .iter()
            .enumerate()
            .map(|(i, &b)| TraitSpec::new(format!("x{i}"), b, d, 0.0).unwrap())
            .collect();
        OrderedTraitSpace::new(traits, KernelSpec::new(alpha, alpha, 0.5).unwrap()).unwrap()
    }

    fn sys(bs: &[f64], eps: f64) -> OdeSystem {
        OdeSystem::new(chain_with(bs, 0.0, 1.0), eps, MigrationMode::AllNeighbors)
    }

    #[test]
    fn rhs_examples() {
        assert_eq!(sys(&[3.0], 0.1).rhs(&[3.0]).unwrap(), vec![0.0]);
        let r = sys(&[3.0, 6.0], 1e-3).rhs(&[3.0, 0.0]).unwrap();
        assert_eq!(r[1], 1e-3 * 0.5 * 3.0);
        assert_eq!(sys(&[3.0, 6.0], 0.0).rhs(&[0.0, 6.0]).unwrap(), vec![0.0, 0.0]);
        assert!(matches!(sys(&[3.0], 0.0).rhs(&[-1.0]), Err(Error::NegativeState { .. })));
    }

    #[test]
    fn fixed_point_stays_put() {
        let s = sys(&[3.0], 0.0);
        let tr = integrate(&s, &[3.0], 100.0, StepControl::default()).unwrap();
        for y in &tr.ys {
            assert!((y[0] - 3.0).abs() < 1e-10);
        }
    }

    #[test]
    fn two_trait_convergence() {
        let s = sys(&[3.0, 6.0], 0.0);
        let mut prev = f64::INFINITY;
        for horizon in [10.0, 25.0, 50.0] {
            let tr = integrate(&s, &[3.0, 0.3], horizon, StepControl::default()).unwrap();
            let y = tr.final_state();
            let dist = (y[0].powi(2) + (y[1] - 6.0).powi(2)).sqrt();
            assert!(dist < prev);
            prev = dist;
            assert!(y.iter().all(|v| *v >= 0.0));
        }
        assert!(prev < 1e-4, "{prev}");
    }

    #[test]
    fn exponential_phase_crossing() {
        let eps = 1e-3;
        let s = sys(&[3.0, 6.0, 8.0], eps);
        let tr = integrate(&s, &[3.0, eps, 0.0], 10.0, StepControl::default()).unwrap();
        let hit = tr.first_crossing(1, 0.6, true).unwrap();
        let pred = (0.6f64 / eps).ln() / 3.0;
        assert!((hit - pred).abs() < 0.1 * pred, "{hit} vs {pred}");
    }

    #[test]
    fn dense_output_matches_logistic_solution() {
        // xi' = (3 - xi) xi has xi(t) = 3 / (1 + (3/xi0 - 1) e^{-3t}).
        let s = sys(&[3.0], 0.0);
        let (x0, level) = (1e-3, 0.3);
        let tr = integrate(&s, &[x0], 5.0, StepControl::default()).unwrap();
        let hit = tr.first_crossing(0, level, true).unwrap();
        let exact = ((3.0 / x0 - 1.0) / (3.0 / level - 1.0)).ln() / 3.0;
        assert!((hit - exact).abs() < 1e-6, "{hit} vs {exact}");
        let mid = tr.at(1.0)[0];
        let exact_mid = 3.0 / (1.0 + (3.0 / x0 - 1.0) * (-3.0f64).exp());
        assert!((mid - exact_mid).abs() < 1e-6 * exact_mid);
    }

    #[test]
    fn predictions() {
        let p = phase_predictions(&sys(&[3.0, 6.0, 8.0], 0.01), None).unwrap();
        assert_eq!(p.c1, Some(1.0));
        assert!((p.t_bar - 7.0 / 6.0).abs() < 1e-12);
        assert!((p.eta - 0.3).abs() < 1e-12);
        assert_eq!(p.growth, vec![(1, 1.0 / 3.0), (2, 0.5)]);
        assert!((p.c2.unwrap() - 2.0 / 3.0).abs() < 1e-12);

        let p = phase_predictions(&sys(&[3.0, 6.0, 8.0, 10.0], 0.01), None).unwrap();
        assert!((p.t_bar - 8.0 / 3.0).abs() < 1e-12);
        assert_eq!(p.recovery_extrapolated.len(), 1);
    }

    #[test]
    fn predictions_scale_inversely() {
        let base = phase_predictions(&sys(&[3.0, 6.0, 8.0, 10.0], 0.01), None).unwrap();
        let lam = 2.5;
        let scaled = OdeSystem::new(
            chain_with(&[3.0 * lam + 0.5 * lam, 6.0 * lam + 0.5 * lam, 8.0 * lam + 0.5 * lam, 10.0 * lam + 0.5 * lam], 0.5 * lam, lam),
            0.01,
            MigrationMode::AllNeighbors,
        );
        let s = phase_predictions(&scaled, None).unwrap();
        let unshifted = phase_predictions(
            &OdeSystem::new(chain_with(&[3.5, 6.5, 8.5, 10.5], 0.5, 1.0), 0.01, MigrationMode::AllNeighbors),
            None,
        )
        .unwrap();
        assert!((base.t_bar - unshifted.t_bar).abs() < 1e-12);
        assert!((s.t_bar - base.t_bar / lam).abs() < 1e-12);
        for (a, b) in s.growth.iter().zip(&base.growth) {
            assert!((a.1 - b.1 / lam).abs() < 1e-12);
        }
        // Ratio constants are scale-free.
        assert!((s.c1.unwrap() - base.c1.unwrap()).abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_order() {
        let traits = vec![
            TraitSpec::new("a", 6.0, 0.0, 0.0).unwrap(),
            TraitSpec::new("b", 3.0, 0.0, 0.0).unwrap(),
        ];
        let ch = OrderedTraitSpace::unchecked_order(traits, KernelSpec::uniform(0.5)).unwrap();
        assert!(phase_predictions(&OdeSystem::new(ch, 0.0, MigrationMode::AllNeighbors), None).is_err());
    }
}
