//! Spatial Hessian of the anchored barrier along a hyperbolic orbit, read
//! off the invariant subspace of the linearized flow, and its period
//! averages.

use serde::{Deserialize, Serialize};

use crate::dynamics::{rk4_step, PeriodicOrbit};
use crate::error::{Error, Result};
use crate::linalg::Mat2;
use crate::model::Hamiltonian;
use crate::scalar::Real;
use crate::variational::BarrierField;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct HessianCurve<T: Real> {
    pub anchor_x: T,
    pub period: u32,
    pub times: Vec<T>,
    /// `D²h_i` along the orbit at `times`.
    pub p: Vec<T>,
    pub lambda: T,
    pub periodicity_residual: T,
    pub riccati_residual: T,
}

fn step_maps<T: Real, H: Hamiltonian<T> + ?Sized>(model: &H, orbit: &PeriodicOrbit<T>) -> Vec<Mat2<T>> {
    if orbit.step_maps.len() == orbit.steps() {
        return orbit.step_maps.clone();
    }
    let h = orbit.step_size();
    orbit.samples[..orbit.steps()]
        .iter()
        .map(|z| rk4_step(model, *z, h, true).1.expect("variational requested"))
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Subspace {
    Stable,
    Unstable,
}

fn subspace_curve<T: Real, H: Hamiltonian<T> + ?Sized>(
    model: &H,
    orbit: &PeriodicOrbit<T>,
    which: Subspace,
) -> Result<HessianCurve<T>> {
    if !orbit.hyperbolic {
        return Err(Error::Precondition(format!("orbit at x = {} is not hyperbolic", orbit.anchor.x)));
    }
    let maps = step_maps(model, orbit);
    let m = orbit.monodromy_matrix();
    let mus = m.eigenvalues_with_det(orbit.monodromy_det);
    let by_norm = |a: &&num_complex::Complex<T>, b: &&num_complex::Complex<T>| {
        a.norm().partial_cmp(&b.norm()).unwrap_or(std::cmp::Ordering::Equal)
    };
    let real = mus.iter().filter(|mu| mu.im == T::zero());
    let mu = match which {
        Subspace::Stable => real.min_by(by_norm),
        Subspace::Unstable => real.max_by(by_norm),
    }
    .ok_or_else(|| Error::Precondition("monodromy has no real multipliers".into()))?;
    let e = m.eigenvector(mu.re);

    // Each subspace is carried in the direction where it dominates.
    let n = maps.len();
    let mut xi = vec![[T::zero(); 2]; n + 1];
    let normalize = |v: [T; 2]| {
        let norm = v[0].hypot(v[1]);
        [v[0] / norm, v[1] / norm]
    };
    match which {
        Subspace::Stable => {
            xi[n] = e;
            for k in (0..n).rev() {
                let inv = maps[k].inverse().ok_or_else(|| Error::NumericalQuality("singular step map".into()))?;
                xi[k] = normalize(inv.apply(xi[k + 1]));
            }
        }
        Subspace::Unstable => {
            xi[0] = e;
            for k in 0..n {
                xi[k + 1] = normalize(maps[k].apply(xi[k]));
            }
        }
    }
    let sign = if which == Subspace::Stable { -T::one() } else { T::one() };
    let floor = T::lit(1e-8);
    let mut p = Vec::with_capacity(n + 1);
    for v in &xi {
        if v[0].abs() < floor {
            return Err(Error::DegenerateGraph(v[0].to_f64_lossy()));
        }
        p.push(sign * v[1] / v[0]);
    }
    let h = orbit.step_size();
    let times: Vec<T> = (0..=n).map(|k| h * T::from_usize_lossy(k)).collect();

    // Any invariant graph δp = S δx obeys S' + H_xx + 2 H_xp S + H_pp S² = 0;
    // here S = sign · P.
    let mut riccati = T::zero();
    for k in 0..n {
        let prev = if k == 0 { p[n - 1] } else { p[k - 1] };
        let ds = sign * (p[k + 1] - prev) / (h + h);
        let sk = sign * p[k];
        let z = orbit.samples[k];
        let j = model.jet(z.x, z.p, z.t);
        let r = ds + j.h_xx + T::lit(2.0) * j.h_xp * sk + j.h_pp * sk * sk;
        riccati = riccati.max(r.abs());
    }
    let mut integral = T::zero();
    for k in 0..n {
        integral = integral + (p[k] + p[k + 1]) * h / T::lit(2.0);
    }
    let lambda = integral / T::lit(orbit.period as f64);
    Ok(HessianCurve {
        anchor_x: orbit.anchor.x,
        period: orbit.period,
        periodicity_residual: (p[n] - p[0]).abs(),
        riccati_residual: riccati,
        times,
        p,
        lambda,
    })
}

/// `P(t) = D²_x h_i(γ_i(t), [t])` along the orbit.
///
/// The barrier is a cost-to-go towards the orbit, so its gradient graph is
/// the stable manifold with `p = -D h_i`. The stable eigenvector of the
/// monodromy is carried backward in time and `P = -δp/δx` is read off at
/// every step.
pub fn hessian_curve<T: Real, H: Hamiltonian<T> + ?Sized>(model: &H, orbit: &PeriodicOrbit<T>) -> Result<HessianCurve<T>> {
    subspace_curve(model, orbit, Subspace::Stable)
}

/// Slope `δp = P δx` of the unstable subspace carried forward along the
/// orbit. For Hamiltonians even in `p` about the orbit momentum (all built-in
/// families) it coincides with [`hessian_curve`].
pub fn unstable_hessian_curve<T: Real, H: Hamiltonian<T> + ?Sized>(
    model: &H,
    orbit: &PeriodicOrbit<T>,
) -> Result<HessianCurve<T>> {
    subspace_curve(model, orbit, Subspace::Unstable)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct LambdaSummary<T: Real> {
    pub lambdas: Vec<T>,
    pub lambda_bar: T,
    pub argmin: Vec<usize>,
}

/// `λ̄ = min λ_i` and the indices within `tie_rel · λ̄` of it.
pub fn lambda_averages<T: Real>(curves: &[HessianCurve<T>], tie_rel: T) -> Result<LambdaSummary<T>> {
    if curves.is_empty() {
        return Err(Error::Empty("no Hessian curves".into()));
    }
    let lambdas: Vec<T> = curves.iter().map(|c| c.lambda).collect();
    let lambda_bar = lambdas.iter().copied().fold(T::infinity(), T::min);
    let tie = tie_rel * lambda_bar.abs();
    let argmin = (0..lambdas.len()).filter(|&i| lambdas[i] <= lambda_bar + tie).collect();
    Ok(LambdaSummary { lambdas, lambda_bar, argmin })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct FdCheck<T: Real> {
    pub fd_average: T,
    pub deviation: T,
    pub stencil_cells: usize,
}

/// Second central differences of `h` (step `stencil_cells` nodes) at the
/// grid points nearest the orbit, averaged over its period and compared
/// with `λ_i`.
pub fn fd_crosscheck<T: Real>(
    field: &BarrierField<T>,
    orbit: &PeriodicOrbit<T>,
    lambda: T,
    stencil_cells: usize,
) -> Result<FdCheck<T>> {
    let g = field.grid;
    let s = stencil_cells.max(1);
    if 2 * s >= g.nx {
        return Err(Error::Config("stencil wider than the grid".into()));
    }
    let step = T::from_usize_lossy(s) / T::from_usize_lossy(g.nx);
    let samples = g.nt * orbit.period as usize;
    let mut sum = T::zero();
    for l in 0..samples {
        let t = T::from_usize_lossy(l) / T::from_usize_lossy(g.nt);
        let (a, _) = g.nearest_node(orbit.position_at(t));
        let layer = l % g.nt;
        let plus = field.h_at((a + s) % g.nx, layer);
        let minus = field.h_at((a + g.nx - s) % g.nx, layer);
        sum = sum + (plus - T::lit(2.0) * field.h_at(a, layer) + minus) / (step * step);
    }
    let fd = sum / T::from_usize_lossy(samples);
    Ok(FdCheck { fd_average: fd, deviation: ((fd - lambda) / lambda).abs(), stencil_cells: s })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{find_periodic_orbit, DynamicsOptions, PhasePoint};
    use crate::model::{HamiltonianModel, PotentialSpec};
    use crate::variational::{GridAnchor, GridSpec};
    use std::f64::consts::PI;

    #[test]
    fn benchmark_lambdas() {
        let m = HamiltonianModel::<f64>::mechanical(PotentialSpec::benchmark());
        let opts = DynamicsOptions::default();
        let mut curves = vec![];
        for (x, want) in [(0.0, 2.0 * PI * 3f64.sqrt()), (0.5, 2.0 * PI)] {
            let o = find_periodic_orbit(&m, PhasePoint::new(x, 0.0, 0.0), 1, 0, &opts).unwrap();
            let c = hessian_curve(&m, &o).unwrap();
            assert!((c.lambda - want).abs() < 1e-6, "{} vs {want}", c.lambda);
            assert!(c.p.iter().all(|p| (p - want).abs() < 1e-6));
            assert!(c.periodicity_residual < 1e-8 && c.riccati_residual < 1e-6);
            let u = unstable_hessian_curve(&m, &o).unwrap();
            assert!((u.lambda - c.lambda).abs() < 1e-8 && u.riccati_residual < 1e-6);
            curves.push(c);
        }
        let s = lambda_averages(&curves, 1e-4).unwrap();
        assert_eq!(s.argmin, vec![1]);
        assert!((s.lambda_bar - 2.0 * PI).abs() < 1e-6);
    }

    #[test]
    fn symmetric_well_ties() {
        let m = HamiltonianModel::<f64>::mechanical(PotentialSpec::from_terms(&[(0, -0.5, 0.0), (2, 0.5, 0.0)]));
        let opts = DynamicsOptions::default();
        let curves: Vec<_> = [0.0, 0.5]
            .iter()
            .map(|&x| hessian_curve(&m, &find_periodic_orbit(&m, PhasePoint::new(x, 0.0, 0.0), 1, 0, &opts).unwrap()).unwrap())
            .collect();
        let s = lambda_averages(&curves, 1e-4).unwrap();
        assert_eq!(s.argmin, vec![0, 1]);
        assert!((s.lambda_bar - 2.0 * 2f64.sqrt() * PI).abs() < 1e-6);
    }

    #[test]
    fn empty_curves_rejected() {
        assert!(lambda_averages::<f64>(&[], 1e-4).is_err());
    }

    #[test]
    fn fd_on_injected_quadratic() {
        let g = GridSpec::new(200, 4);
        let (a, x0) = (3.7, 0.5);
        let h: Vec<f64> = (0..4).flat_map(|_| (0..200).map(move |i| a * (i as f64 / 200.0 - x0).powi(2))).collect();
        let field = BarrierField {
            anchor: GridAnchor::node(g, 100, 0),
            grid: g,
            phi_pot: h.clone(),
            h,
            c_used: 0.0,
            window: 1,
            window_osc: 0.0,
            sweeps: 0,
            osc_trace: vec![],
        };
        let m = HamiltonianModel::<f64>::mechanical(PotentialSpec::benchmark());
        let o = find_periodic_orbit(&m, PhasePoint::new(0.5, 0.0, 0.0), 1, 0, &DynamicsOptions::default()).unwrap();
        let chk = fd_crosscheck(&field, &o, 2.0 * a, 2).unwrap();
        assert!((chk.fd_average - 2.0 * a).abs() < 1e-6);
    }
}
