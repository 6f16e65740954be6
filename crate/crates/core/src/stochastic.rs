//! Monte Carlo layer: Euler-Maruyama paths of `dX = U(X, s) ds + √(2ε) dW`
//! on the circle, capped exit times from a tube around an orbit, and the
//! stochastic-control (Lax) representation of viscous solutions.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::PeriodicOrbit;
use crate::error::{Error, Result};
use crate::model::Hamiltonian;
use crate::scalar::Real;
use crate::variational::BarrierField;
use crate::viscous::ViscousSolution;

/// Feedback control `U(x, t)` driving the paths.
#[derive(Clone, Copy, Debug)]
pub enum DriftSource<'a, T: Real> {
    Zero,
    Constant(T),
    /// `U = H_p(x, φ_x, t)` with `φ_x` interpolated from a viscous solution.
    OptimalFromViscous(&'a ViscousSolution<T>),
    /// `U = H_p(x, -h_x, t)` for an anchored barrier `h`, differentiated over
    /// `stencil` cells. Only trusted within `radius` of `orbit`; paths that
    /// leave that band are flagged.
    BarrierDrift { field: &'a BarrierField<T>, orbit: &'a PeriodicOrbit<T>, radius: T, stencil: usize },
}

impl<'a, T: Real> DriftSource<'a, T> {
    pub fn eval<H: Hamiltonian<T> + ?Sized>(&self, model: &H, x: T, t: T) -> T {
        match self {
            Self::Zero => T::zero(),
            Self::Constant(v) => *v,
            Self::OptimalFromViscous(sol) => model.jet(x, sol.gradient_interp(x, t), t).h_p,
            Self::BarrierDrift { field, stencil, .. } => {
                model.jet(x, -barrier_gradient(field, *stencil, x, t), t).h_p
            }
        }
    }

    /// Distance beyond which the drift is not trusted, with its centre.
    fn trust(&self) -> Option<(&'a PeriodicOrbit<T>, T)> {
        match self {
            Self::BarrierDrift { orbit, radius, .. } => Some((*orbit, *radius)),
            _ => None,
        }
    }
}

/// Bilinear interpolation of the nodal differences
/// `(h(a + s) - h(a - s)) / (2 s dx)`.
fn barrier_gradient<T: Real>(field: &BarrierField<T>, stencil: usize, x: T, t: T) -> T {
    let g = field.grid;
    let (nx, nt) = (g.nx, g.nt);
    let s = stencil.max(1);
    let width = T::from_usize_lossy(2 * s) * g.dx::<T>();
    let d = |a: usize, l: usize| (field.h_at((a + s) % nx, l) - field.h_at((a + nx - s) % nx, l)) / width;
    let sx = x.wrap_unit() * T::from_usize_lossy(nx);
    let st = t.wrap_unit() * T::from_usize_lossy(nt);
    let (ix, it) = (sx.floor(), st.floor());
    let (fx, ft) = (sx - ix, st - it);
    let a = ix.to_usize().unwrap_or(0) % nx;
    let l = it.to_usize().unwrap_or(0) % nt;
    let (b, m) = ((a + 1) % nx, (l + 1) % nt);
    let one = T::one();
    (one - ft) * ((one - fx) * d(a, l) + fx * d(b, l)) + ft * ((one - fx) * d(a, m) + fx * d(b, m))
}

/// Moving centre of an exit tube.
#[derive(Clone, Copy, Debug)]
pub enum TubeCentre<'a, T: Real> {
    Fixed(T),
    Orbit(&'a PeriodicOrbit<T>),
}

impl<'a, T: Real> TubeCentre<'a, T> {
    fn at(&self, s: T) -> T {
        match self {
            Self::Fixed(x) => *x,
            Self::Orbit(o) => o.position_at(s),
        }
    }
}

/// Exit from `{ |x - centre(t)| < radius }`, distances taken on the circle.
#[derive(Clone, Copy, Debug)]
pub struct Tube<'a, T: Real> {
    pub centre: TubeCentre<'a, T>,
    pub radius: T,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct SdeConfig<T: Real> {
    pub n_paths: usize,
    /// Largest time step; the horizon is split into equal steps.
    pub dt: T,
    pub seed: u64,
    /// Horizon `κ`; exit times are reported as `τ ∧ κ`.
    pub t_cap: T,
    pub start_x: T,
    pub start_t: T,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct SdeEnsemble<T: Real> {
    pub epsilon: T,
    pub n_paths: usize,
    /// Step actually used (`t_cap / steps`).
    pub dt: T,
    pub seed: u64,
    pub t_cap: T,
    pub exit_radius: Option<T>,
    pub tau_samples: Vec<T>,
    pub capped: Vec<bool>,
    /// Paths that left the band where the drift is trusted.
    pub flagged: Vec<bool>,
    /// Lifted end positions.
    pub final_x: Vec<T>,
    /// `∫ L(X, U, s) ds` along each path when requested.
    pub running_cost: Option<Vec<T>>,
}

impl<T: Real> SdeEnsemble<T> {
    pub fn capped_fraction(&self) -> T {
        let n = self.capped.iter().filter(|c| **c).count();
        T::from_usize_lossy(n) / T::from_usize_lossy(self.n_paths.max(1))
    }
}

struct PathOutcome<T> {
    tau: T,
    capped: bool,
    flagged: bool,
    x_end: T,
    cost: T,
}

/// Sample mean and standard error.
pub fn mean_se<T: Real>(v: &[T]) -> (T, T) {
    let n = T::from_usize_lossy(v.len());
    let mean = v.iter().copied().sum::<T>() / n;
    if v.len() < 2 {
        return (mean, T::zero());
    }
    let var = v.iter().map(|x| (*x - mean) * (*x - mean)).sum::<T>() / (n - T::one());
    (mean, (var / n).sqrt())
}

/// Euler-Maruyama ensemble. Path `i` draws from its own ChaCha stream `i`
/// under `seed`, so it does not depend on `n_paths` or on scheduling.
/// Tube exits are checked at every step and, in between, through the
/// Brownian-bridge crossing probability.
pub fn simulate_paths<T: Real, H: Hamiltonian<T> + ?Sized>(
    model: &H,
    drift: &DriftSource<'_, T>,
    epsilon: T,
    cfg: &SdeConfig<T>,
    tube: Option<&Tube<'_, T>>,
    track_cost: bool,
) -> Result<SdeEnsemble<T>> {
    if cfg.n_paths == 0 {
        return Err(Error::Config("stochastic.n_paths must be positive".into()));
    }
    if !(cfg.dt > T::zero()) || !(cfg.t_cap > T::zero()) {
        return Err(Error::Config("stochastic.dt and stochastic.kappa must be positive".into()));
    }
    if !(epsilon >= T::zero()) {
        return Err(Error::Config(format!("epsilon must be non-negative, got {epsilon}")));
    }
    if let Some(tube) = tube {
        if !(tube.radius > T::zero()) {
            return Err(Error::Config("stochastic.delta must be positive".into()));
        }
        let limit = tube.radius * tube.radius / (T::lit(8.0) * epsilon);
        if epsilon > T::zero() && cfg.dt > limit {
            return Err(Error::Config(format!("stochastic.dt = {} exceeds delta^2/(8 eps) = {limit}", cfg.dt)));
        }
    }
    let steps = (cfg.t_cap / cfg.dt).ceil().to_usize().unwrap_or(usize::MAX).max(1);
    let dt = cfg.t_cap / T::from_usize_lossy(steps);
    let sigma = (T::lit(2.0) * epsilon * dt).sqrt();
    let trust = drift.trust();

    let run = |i: usize| -> PathOutcome<T> {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(i as u64);
        let mut x = cfg.start_x;
        let mut flagged = false;
        let mut cost = T::zero();
        let mut u = drift.eval(model, x, cfg.start_t);
        let mut l_prev = if track_cost { model.lagrangian_value(x, u, cfg.start_t) } else { T::zero() };
        let rel = |x: T, s: T, c: &TubeCentre<'_, T>| (x - c.at(s)).torus_delta();
        let mut y_prev = tube.map(|tb| rel(x, cfg.start_t, &tb.centre));
        for n in 0..steps {
            let s_next = dt * T::from_usize_lossy(n + 1);
            let z: f64 = rng.sample(StandardNormal);
            x = x + u * dt + sigma * T::lit(z);
            let t_next = cfg.start_t + s_next;
            u = drift.eval(model, x, t_next);
            if track_cost {
                let l = model.lagrangian_value(x, u, t_next);
                cost = cost + (l_prev + l) * dt / T::lit(2.0);
                l_prev = l;
            }
            if let Some((orbit, radius)) = trust {
                flagged |= (x - orbit.position_at(t_next)).torus_delta().abs() > radius;
            }
            if let (Some(tb), Some(y0)) = (tube, y_prev) {
                let y1 = rel(x, t_next, &tb.centre);
                let r = tb.radius;
                let mut exited = y1.abs() >= r;
                if !exited && epsilon > T::zero() {
                    let denom = epsilon * dt;
                    let p = (-(r - y0) * (r - y1) / denom).exp() + (-(r + y0) * (r + y1) / denom).exp();
                    if p > T::lit(1e-12) {
                        let v: f64 = rng.gen();
                        exited = T::lit(v) < p;
                    }
                }
                if exited {
                    return PathOutcome { tau: s_next, capped: false, flagged, x_end: x, cost };
                }
                y_prev = Some(y1);
            }
        }
        PathOutcome { tau: cfg.t_cap, capped: tube.is_some(), flagged, x_end: x, cost }
    };
    let outcomes: Vec<PathOutcome<T>> = (0..cfg.n_paths).into_par_iter().map(run).collect();
    Ok(SdeEnsemble {
        epsilon,
        n_paths: cfg.n_paths,
        dt,
        seed: cfg.seed,
        t_cap: cfg.t_cap,
        exit_radius: tube.map(|t| t.radius),
        tau_samples: outcomes.iter().map(|o| o.tau).collect(),
        capped: outcomes.iter().map(|o| o.capped).collect(),
        flagged: outcomes.iter().map(|o| o.flagged).collect(),
        final_x: outcomes.iter().map(|o| o.x_end).collect(),
        running_cost: track_cost.then(|| outcomes.iter().map(|o| o.cost).collect()),
    })
}

/// One row of the exit-time table.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct ExitRecord<T: Real> {
    pub epsilon: T,
    pub n_paths: usize,
    pub mean_tau: T,
    pub ci_low: T,
    pub ci_high: T,
    pub eps_log_mean_tau: T,
    pub capped_fraction: T,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct ExitReport<T: Real> {
    pub delta: T,
    pub records: Vec<ExitRecord<T>>,
    pub all_positive: bool,
    /// `ε log Ê` does not decrease as ε decreases, up to CI overlap.
    pub nondecreasing: bool,
    pub pass: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct ExitOptions<T: Real> {
    pub delta: T,
    pub n_paths: usize,
    /// Cap `κ` on the exit time.
    pub t_cap: T,
    /// Step ceiling; each ε also respects `δ²/(8ε)`.
    pub dt: T,
    pub seed: u64,
}

/// `Ê(τ ∧ κ)` with a 95% interval for each ε in decreasing order, started
/// on the tube centre at time 0. Paths of level `k` use seed `seed + k`.
pub fn exit_time_scaling<T: Real, H: Hamiltonian<T> + ?Sized>(
    model: &H,
    drift: &DriftSource<'_, T>,
    centre: TubeCentre<'_, T>,
    eps_list: &[T],
    opts: &ExitOptions<T>,
) -> Result<ExitReport<T>> {
    if eps_list.is_empty() || eps_list.iter().any(|e| !(*e > T::zero())) || eps_list.windows(2).any(|w| !(w[1] < w[0])) {
        return Err(Error::Config("exit eps_list must be positive and strictly decreasing".into()));
    }
    let tube = Tube { centre, radius: opts.delta };
    let z = T::lit(1.96);
    let mut records = Vec::with_capacity(eps_list.len());
    for (k, &eps) in eps_list.iter().enumerate() {
        let dt = opts.dt.min(opts.delta * opts.delta / (T::lit(8.0) * eps));
        let cfg = SdeConfig {
            n_paths: opts.n_paths,
            dt,
            seed: opts.seed.wrapping_add(k as u64),
            t_cap: opts.t_cap,
            start_x: centre.at(T::zero()),
            start_t: T::zero(),
        };
        let ens = simulate_paths(model, drift, eps, &cfg, Some(&tube), false)?;
        let capped_fraction = ens.capped_fraction();
        if k == 0 && capped_fraction > T::lit(0.5) {
            return Err(Error::Config(format!(
                "stochastic.kappa = {} caps {capped_fraction} of the paths at the largest epsilon",
                opts.t_cap
            )));
        }
        let (mean, se) = mean_se(&ens.tau_samples);
        records.push(ExitRecord {
            epsilon: eps,
            n_paths: opts.n_paths,
            mean_tau: mean,
            ci_low: mean - z * se,
            ci_high: mean + z * se,
            eps_log_mean_tau: eps * mean.ln(),
            capped_fraction,
        });
    }
    let all_positive = records.iter().all(|r| r.eps_log_mean_tau > T::zero());
    let nondecreasing = records.windows(2).all(|w| {
        let hi_next = w[1].epsilon * w[1].ci_high.ln();
        let lo_prev = w[0].epsilon * w[0].ci_low.max(T::min_positive_value()).ln();
        hi_next >= lo_prev
    });
    Ok(ExitReport { delta: opts.delta, records, all_positive, nondecreasing, pass: all_positive && nondecreasing })
}

/// Monte Carlo value of the control `drift` from `(x, t)` over the horizon
/// `κ`: mean and standard error of
/// `φ(X_κ, t + κ) - ∫ L(X, U, s) ds - c κ`.
pub fn lax_estimate<T: Real, H: Hamiltonian<T> + ?Sized>(
    model: &H,
    sol: &ViscousSolution<T>,
    drift: &DriftSource<'_, T>,
    x: T,
    t: T,
    cfg: &SdeConfig<T>,
) -> Result<(T, T)> {
    let cfg = SdeConfig { start_x: x, start_t: t, ..*cfg };
    let ens = simulate_paths(model, drift, sol.epsilon, &cfg, None, true)?;
    let costs = ens.running_cost.expect("cost tracked");
    let end_t = t + cfg.t_cap;
    let values: Vec<T> = ens
        .final_x
        .iter()
        .zip(&costs)
        .map(|(xe, l)| sol.phi_interp(*xe, end_t) - *l - sol.c_eps * cfg.t_cap)
        .collect();
    Ok(mean_se(&values))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct LaxProbe<T: Real> {
    pub x: T,
    pub t: T,
    pub lhs: T,
    pub rhs: T,
    pub std_error: T,
    pub residual: T,
    pub tol: T,
    pub pass: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct LaxReport<T: Real> {
    pub probes: Vec<LaxProbe<T>>,
    /// Set when a standard error exceeds half the tolerance.
    pub advisory: Option<String>,
    pub pass: bool,
}

/// `|φ_ε(x, t) - RHS|` under the optimal drift `H_p(x, φ_x, t)` at each probe,
/// with tolerance `max(abs_tol, 2 SE)`. Probe `k` uses seed `seed + k`.
pub fn lax_residual<T: Real, H: Hamiltonian<T> + ?Sized>(
    model: &H,
    sol: &ViscousSolution<T>,
    probes: &[(T, T)],
    cfg: &SdeConfig<T>,
    abs_tol: T,
) -> Result<LaxReport<T>> {
    let drift = DriftSource::OptimalFromViscous(sol);
    let mut out = Vec::with_capacity(probes.len());
    let mut advisory = None;
    for (k, &(x, t)) in probes.iter().enumerate() {
        let c = SdeConfig { seed: cfg.seed.wrapping_add(k as u64), ..*cfg };
        let (rhs, se) = lax_estimate(model, sol, &drift, x, t, &c)?;
        let lhs = sol.phi_interp(x, t);
        let tol = abs_tol.max(se + se);
        let residual = (lhs - rhs).abs();
        if se > abs_tol / T::lit(2.0) {
            advisory = Some(format!("standard error {se} at x = {x} exceeds half the tolerance; increase n_paths"));
        }
        out.push(LaxProbe { x, t, lhs, rhs, std_error: se, residual, tol, pass: residual <= tol });
    }
    let pass = out.iter().all(|p| p.pass);
    Ok(LaxReport { probes: out, advisory, pass })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{HamiltonianModel, PotentialSpec};
    use crate::variational::GridSpec;
    use crate::viscous::{solve_cell, ViscousOptions};

    fn cfg(n_paths: usize, dt: f64, t_cap: f64) -> SdeConfig<f64> {
        SdeConfig { n_paths, dt, seed: 7, t_cap, start_x: 0.3, start_t: 0.0 }
    }

    #[test]
    fn noiseless_zero_drift_is_constant() {
        let m = HamiltonianModel::<f64>::mechanical(PotentialSpec::benchmark());
        let e = simulate_paths(&m, &DriftSource::Zero, 0.0, &cfg(5, 0.01, 1.0), None, false).unwrap();
        assert!(e.final_x.iter().all(|x| *x == 0.3));
        assert!(e.tau_samples.iter().all(|t| *t == 1.0) && e.capped.iter().all(|c| !c));
    }

    #[test]
    fn zero_drift_mean_displacement() {
        let m = HamiltonianModel::<f64>::mechanical(PotentialSpec::zero());
        let (eps, t, n) = (0.02, 1.0, 4000);
        let e = simulate_paths(&m, &DriftSource::Zero, eps, &cfg(n, 0.01, t), None, false).unwrap();
        let (mean, _) = mean_se(&e.final_x);
        assert!((mean - 0.3).abs() <= 3.0 * (2.0 * eps * t / n as f64).sqrt());
    }

    #[test]
    fn streams_independent_of_ensemble_size() {
        let m = HamiltonianModel::<f64>::mechanical(PotentialSpec::benchmark());
        let a = simulate_paths(&m, &DriftSource::Zero, 0.01, &cfg(10, 0.01, 0.5), None, false).unwrap();
        let b = simulate_paths(&m, &DriftSource::Zero, 0.01, &cfg(20, 0.01, 0.5), None, false).unwrap();
        assert_eq!(a.final_x[..], b.final_x[..10]);
        let c = simulate_paths(&m, &DriftSource::Zero, 0.01, &cfg(10, 0.01, 0.5), None, false).unwrap();
        assert_eq!(a, c);
    }

    #[test]
    fn flat_exit_time_matches_oracle() {
        // ε u'' = -1 on (-δ, δ) with u(±δ) = 0 gives E τ = δ²/(2ε).
        let m = HamiltonianModel::<f64>::mechanical(PotentialSpec::zero());
        let (eps, delta) = (0.01, 0.1);
        let tube = Tube { centre: TubeCentre::Fixed(0.3), radius: delta };
        let e = simulate_paths(&m, &DriftSource::Zero, eps, &cfg(4000, 1e-3, 20.0), Some(&tube), false).unwrap();
        let (mean, se) = mean_se(&e.tau_samples);
        let exact = delta * delta / (2.0 * eps);
        assert!((mean - exact).abs() <= 3.0 * 1.96 * se, "{mean} vs {exact} (se {se})");
        assert_eq!(e.capped_fraction(), 0.0);
        assert!(e.tau_samples.iter().all(|t| *t > 0.0 && *t <= 20.0));
        let wide = Tube { radius: 2.0 * delta, ..tube };
        let w = simulate_paths(&m, &DriftSource::Zero, eps, &cfg(4000, 1e-3, 20.0), Some(&wide), false).unwrap();
        assert!(mean_se(&w.tau_samples).0 > mean);
    }

    #[test]
    fn coarse_step_rejected() {
        let m = HamiltonianModel::<f64>::mechanical(PotentialSpec::zero());
        let tube = Tube { centre: TubeCentre::Fixed(0.3), radius: 0.1 };
        let r = simulate_paths(&m, &DriftSource::Zero, 0.01, &cfg(10, 0.5, 1.0), Some(&tube), false);
        assert!(matches!(r, Err(Error::Config(_))));
    }

    #[test]
    fn noiseless_optimal_paths_follow_the_drift() {
        let m = HamiltonianModel::<f64>::traveling_wave(PotentialSpec::from_terms(&[(0, -0.5, 0.0), (2, 0.5, 0.0)]), 2);
        let sol = solve_cell(&m, 0.05, GridSpec::new(64, 16), 0.0, &ViscousOptions::default()).unwrap();
        let drift = DriftSource::OptimalFromViscous(&sol);
        let c = SdeConfig { n_paths: 1, dt: 1e-4, seed: 1, t_cap: 1.0, start_x: 0.02, start_t: 0.0 };
        let e = simulate_paths(&m, &drift, 0.0, &c, None, false).unwrap();
        // RK4 on the same interpolated field.
        let f = |x: f64, t: f64| drift.eval(&m, x, t);
        let (mut x, h) = (0.02, 1e-3);
        for k in 0..1000 {
            let t = k as f64 * h;
            let k1 = f(x, t);
            let k2 = f(x + h * k1 / 2.0, t + h / 2.0);
            let k3 = f(x + h * k2 / 2.0, t + h / 2.0);
            let k4 = f(x + h * k3, t + h);
            x += h * (k1 + 2.0 * k2 + 2.0 * k3 + k4) / 6.0;
        }
        assert!((e.final_x[0] - x).abs() < 1e-3, "{} vs {x}", e.final_x[0]);
        // The wave carries the path left at speed 1/k, towards the orbit.
        assert!((e.final_x[0] - (0.0 - 0.5)).abs() < 0.05);
    }

    #[test]
    fn lax_trivial_case() {
        let m = HamiltonianModel::<f64>::mechanical(PotentialSpec::zero());
        let sol = solve_cell(&m, 0.02, GridSpec::new(32, 8), 0.0, &ViscousOptions::default()).unwrap();
        let c = SdeConfig { n_paths: 200, dt: 0.01, seed: 3, t_cap: 1.0, start_x: 0.0, start_t: 0.0 };
        let r = lax_residual(&m, &sol, &[(0.1, 0.0), (0.6, 0.5)], &c, 0.02).unwrap();
        assert!(r.pass);
        assert!(r.probes.iter().all(|p| p.residual <= 2.0 * p.std_error + 1e-12));
        // Any other control does worse.
        let (rhs, se) = lax_estimate(&m, &sol, &DriftSource::Constant(0.4), 0.1, 0.0, &c).unwrap();
        assert!(rhs <= sol.phi_interp(0.1, 0.0) + 2.0 * se);
    }
}
