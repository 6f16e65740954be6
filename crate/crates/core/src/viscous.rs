//! Viscous cell problem `φ_t + εφ_xx + H(x, φ_x, t) = c(ε)` by long-time
//! integration of a monotone explicit scheme.
//!
//! With `s = -t` the equation becomes the forward parabolic problem
//! `ψ_s = εψ_xx + H(x, ψ_x, -s) - c`, integrated from `ψ = 0` until one
//! period adds the same constant `c(ε)` at every node.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Hamiltonian;
use crate::scalar::Real;
use crate::variational::GridSpec;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct ViscousOptions<T: Real> {
    /// Largest allowed spread of the one-period increment.
    pub cell_tol: T,
    pub max_periods: usize,
    /// Fraction of the monotonicity limit used for the time step.
    pub safety: T,
    /// A priori bound on `|φ_x|` used in the time-step limit.
    pub lip_cap: T,
    /// Slack on the bracket `inf H(x, 0, t) ≤ c(ε) ≤ sup H(x, 0, t)`.
    pub c_tol: T,
}

impl<T: Real> Default for ViscousOptions<T> {
    fn default() -> Self {
        Self { cell_tol: T::lit(1e-8), max_periods: 4000, safety: T::lit(0.9), lip_cap: T::lit(4.0), c_tol: T::lit(1e-6) }
    }
}

/// `(c(ε), φ_ε)` with `φ_ε` on the space-time grid, indexed
/// `[layer * nx + node]` and normalized by `φ_ε(anchor, 0) = 0`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct ViscousSolution<T: Real> {
    pub epsilon: T,
    pub c_eps: T,
    pub grid: GridSpec,
    pub anchor: usize,
    pub phi: Vec<T>,
    pub lip_x: T,
    pub semiconvexity_const: T,
    pub periodicity_residual: T,
    pub c_bracket: (T, T),
    pub periods: usize,
    pub steps_per_substep: usize,
    /// Spread of the one-period increment after each period.
    pub history: Vec<T>,
}

impl<T: Real> ViscousSolution<T> {
    #[inline]
    pub fn phi_at(&self, node: usize, layer: usize) -> T {
        self.phi[layer * self.grid.nx + node]
    }

    /// Central-difference `φ_x` at a grid point.
    pub fn gradient_at(&self, node: usize, layer: usize) -> T {
        let nx = self.grid.nx;
        let dx = self.grid.dx::<T>();
        (self.phi_at((node + 1) % nx, layer) - self.phi_at((node + nx - 1) % nx, layer)) / (dx + dx)
    }

    /// Bilinear interpolation of `φ_ε` in `(x, t)` on the torus.
    pub fn phi_interp(&self, x: T, t: T) -> T {
        self.bilinear(x, t, |a, l| self.phi_at(a, l))
    }

    /// Bilinear interpolation of the nodal central gradients.
    pub fn gradient_interp(&self, x: T, t: T) -> T {
        self.bilinear(x, t, |a, l| self.gradient_at(a, l))
    }

    fn bilinear(&self, x: T, t: T, f: impl Fn(usize, usize) -> T) -> T {
        let (nx, nt) = (self.grid.nx, self.grid.nt);
        let sx = x.wrap_unit() * T::from_usize_lossy(nx);
        let st = t.wrap_unit() * T::from_usize_lossy(nt);
        let (ix, it) = (sx.floor(), st.floor());
        let (fx, ft) = (sx - ix, st - it);
        let a = ix.to_usize().unwrap_or(0) % nx;
        let l = it.to_usize().unwrap_or(0) % nt;
        let (b, m) = ((a + 1) % nx, (l + 1) % nt);
        let one = T::one();
        (one - ft) * ((one - fx) * f(a, l) + fx * f(b, l)) + ft * ((one - fx) * f(a, m) + fx * f(b, m))
    }
}

/// `H(x, q, t)` at one node, either from the model or from a cached
/// `H(x, 0, t)` plus the exact kinetic part.
enum Flux<'a, T: Real, H: Hamiltonian<T> + ?Sized> {
    Model(&'a H),
    /// `H(x, p, t) = H(x, 0, t) + p²/(2m) + b p`; `base[step * nx + node]`.
    Cached { half_inv_mass: T, b: T, base: Vec<T> },
}

struct Stepper<'a, T: Real, H: Hamiltonian<T> + ?Sized> {
    grid: GridSpec,
    eps: T,
    sub: usize,
    ds: T,
    xs: Vec<T>,
    flux: Flux<'a, T, H>,
}

impl<'a, T: Real, H: Hamiltonian<T> + ?Sized> Stepper<'a, T, H> {
    fn new(model: &'a H, grid: GridSpec, eps: T, sub: usize) -> Self {
        let nx = grid.nx;
        let steps = grid.nt * sub;
        let ds = T::one() / T::from_usize_lossy(steps);
        let xs: Vec<T> = (0..nx).map(|i| grid.x(i)).collect();
        let flux = match model.quadratic_frame() {
            Some(frame) => {
                let base = (0..steps)
                    .into_par_iter()
                    .flat_map_iter(|n| {
                        let t = step_time::<T>(n, ds);
                        xs.iter().map(move |&x| model.value(x, T::zero(), t)).collect::<Vec<_>>()
                    })
                    .collect();
                Flux::Cached { half_inv_mass: T::lit(0.5) / frame.mass, b: frame.momentum_slope(), base }
            }
            None => Flux::Model(model),
        };
        Self { grid, eps, sub, ds, xs, flux }
    }

    /// Explicit step `n` of the period, from `cur` into `next`.
    fn step(&self, n: usize, cur: &[T], next: &mut [T]) {
        let nx = self.grid.nx;
        let dx = self.grid.dx::<T>();
        let diff = self.eps / (dx * dx);
        let t = step_time::<T>(n, self.ds);
        next.par_iter_mut().with_min_len(256).enumerate().for_each(|(i, out)| {
            let l = cur[(i + nx - 1) % nx];
            let r = cur[(i + 1) % nx];
            let c = cur[i];
            let pp = (r - c) / dx;
            let pm = (c - l) / dx;
            // Godunov flux of a convex H: upwind towards the minimizing momentum.
            let hn = match &self.flux {
                Flux::Cached { half_inv_mass, b, base } => {
                    let g = base[n * nx + i];
                    let k = |q: T| g + q * (q * *half_inv_mass + *b);
                    let pmin = -*b / (*half_inv_mass + *half_inv_mass);
                    k(pp.max(pmin)).max(k(pm.min(pmin)))
                }
                Flux::Model(m) => {
                    let x = self.xs[i];
                    let pmin = m.min_momentum(x, t);
                    m.value(x, pp.max(pmin), t).max(m.value(x, pm.min(pmin), t))
                }
            };
            *out = c + self.ds * (diff * (l - (c + c) + r) + hn);
        });
    }

    /// Advances one period from an integer `s`; `snaps[l]` receives the state
    /// at `s + l/nt` for `l < nt`.
    fn period(&self, psi: &mut Vec<T>, mut snaps: Option<&mut Vec<Vec<T>>>) {
        let mut next = vec![T::zero(); self.grid.nx];
        for n in 0..self.grid.nt * self.sub {
            if n % self.sub == 0 {
                if let Some(s) = snaps.as_deref_mut() {
                    s[n / self.sub].clone_from(psi);
                }
            }
            self.step(n, psi, &mut next);
            std::mem::swap(psi, &mut next);
        }
    }
}

/// Forward time `t = -s` of step `n` within a period, wrapped to `[0, 1)`.
fn step_time<T: Real>(n: usize, ds: T) -> T {
    (-(T::from_usize_lossy(n) * ds)).wrap_unit()
}

/// `[inf, sup]` of `H(x, 0, t)` over a dense sample.
pub fn rest_energy_bracket<T: Real, H: Hamiltonian<T> + ?Sized>(model: &H, grid: GridSpec) -> (T, T) {
    let nx = (4 * grid.nx).max(4096);
    let nt = 4 * grid.nt;
    (0..nt)
        .into_par_iter()
        .map(|j| {
            let t = T::from_usize_lossy(j) / T::from_usize_lossy(nt);
            (0..nx).fold((T::infinity(), T::neg_infinity()), |(lo, hi), i| {
                let h = model.value(T::from_usize_lossy(i) / T::from_usize_lossy(nx), T::zero(), t);
                (lo.min(h), hi.max(h))
            })
        })
        .collect::<Vec<_>>()
        .into_iter()
        .fold((T::infinity(), T::neg_infinity()), |(a, b), (c, d)| (a.min(c), b.max(d)))
}

/// Substeps of the explicit scheme per grid substep, from the monotonicity
/// limit `Δs (2ε/Δx² + A/Δx) ≤ safety` with `A = max |H_p|` over
/// `|p| ≤ lip_cap`.
fn steps_per_substep<T: Real, H: Hamiltonian<T> + ?Sized>(
    model: &H,
    grid: GridSpec,
    eps: T,
    opts: &ViscousOptions<T>,
) -> Result<usize> {
    if !(eps > T::zero()) {
        return Err(Error::Config(format!("viscosity must be positive, got {eps}")));
    }
    if grid.nx < 3 || grid.nt < 1 {
        return Err(Error::Config(format!("viscous grid {}x{} too small", grid.nx, grid.nt)));
    }
    let mut a = T::zero();
    for j in 0..grid.nt {
        let t = grid.t::<T>(j);
        for i in 0..grid.nx {
            let x = grid.x::<T>(i);
            for p in [-opts.lip_cap, opts.lip_cap] {
                a = a.max(model.jet(x, p, t).h_p.abs());
            }
        }
    }
    let dx = grid.dx::<T>();
    let rate = (eps + eps) / (dx * dx) + a / dx;
    let ds = opts.safety / rate;
    let sub = (T::one() / (T::from_usize_lossy(grid.nt) * ds)).ceil();
    match sub.to_usize() {
        Some(s) if s <= 1_000_000 => Ok(s.max(1)),
        _ => Err(Error::Config(format!(
            "CFL limit needs {sub} steps per substep on a {}x{} grid at epsilon = {eps}",
            grid.nx, grid.nt
        ))),
    }
}

/// Largest one-cell difference quotient and largest one-sided curvature
/// deficit `max(0, -(φ(x+dx) - 2φ(x) + φ(x-dx))/dx²)` of a grid field.
pub fn field_regularity<T: Real>(grid: GridSpec, phi: &[T]) -> (T, T) {
    let nx = grid.nx;
    let dx = grid.dx::<T>();
    let mut lip = T::zero();
    let mut semi = T::zero();
    for layer in 0..grid.nt {
        let row = &phi[layer * nx..(layer + 1) * nx];
        for i in 0..nx {
            let l = row[(i + nx - 1) % nx];
            let r = row[(i + 1) % nx];
            lip = lip.max((r - row[i]).abs() / dx);
            semi = semi.max(-(l - (row[i] + row[i]) + r) / (dx * dx));
        }
    }
    (lip, semi)
}

/// Solves the cell problem on `grid`, normalizing at the node nearest
/// `anchor_x` on layer 0.
pub fn solve_cell<T: Real, H: Hamiltonian<T> + ?Sized>(
    model: &H,
    epsilon: T,
    grid: GridSpec,
    anchor_x: T,
    opts: &ViscousOptions<T>,
) -> Result<ViscousSolution<T>> {
    let sub = steps_per_substep(model, grid, epsilon, opts)?;
    let stepper = Stepper::new(model, grid, epsilon, sub);
    let (nx, nt) = (grid.nx, grid.nt);
    let anchor = grid.nearest_node(anchor_x).0;
    let bracket = rest_energy_bracket(model, grid);

    let mut psi = vec![T::zero(); nx];
    let mut snaps = vec![vec![T::zero(); nx]; nt];
    let mut history = Vec::new();
    for period in 1..=opts.max_periods {
        stepper.period(&mut psi, Some(&mut snaps));
        let start = &snaps[0];
        let (mut lo, mut hi, mut sum) = (T::infinity(), T::neg_infinity(), T::zero());
        for (a, b) in psi.iter().zip(start) {
            let d = *a - *b;
            lo = lo.min(d);
            hi = hi.max(d);
            sum = sum + d;
        }
        if !(hi.is_finite() && lo.is_finite()) {
            return Err(Error::NumericalQuality(format!("viscous iterate blew up at period {period}")));
        }
        let osc = hi - lo;
        history.push(osc);
        let (lip, _) = field_regularity(GridSpec::new(nx, 1), &psi);
        if lip > opts.lip_cap {
            return Err(Error::NumericalQuality(format!(
                "|phi_x| reached {lip}, above lip_cap = {}; the time step is no longer monotone",
                opts.lip_cap
            )));
        }
        if osc <= opts.cell_tol {
            let c = sum / T::from_usize_lossy(nx);
            let (lo_b, hi_b) = (bracket.0 - opts.c_tol, bracket.1 + opts.c_tol);
            if c < lo_b || c > hi_b {
                return Err(Error::Bracket { c: c.to_f64_lossy(), lo: lo_b.to_f64_lossy(), hi: hi_b.to_f64_lossy() });
            }
            let phi = profile(grid, &snaps, c, anchor);
            let (lip_x, semiconvexity_const) = field_regularity(grid, &phi);
            return Ok(ViscousSolution {
                epsilon,
                c_eps: c,
                grid,
                anchor,
                phi,
                lip_x,
                semiconvexity_const,
                periodicity_residual: osc,
                c_bracket: bracket,
                periods: period,
                steps_per_substep: sub,
                history,
            });
        }
        // Keep values bounded; only differences matter.
        let shift = psi[anchor];
        psi.iter_mut().for_each(|v| *v = *v - shift);
    }
    Err(Error::Convergence {
        iterations: opts.max_periods,
        residual: history.last().map_or(f64::INFINITY, |v| v.to_f64_lossy()),
        history: history.iter().map(|v| v.to_f64_lossy()).collect(),
    })
}

/// `φ(x, j/nt) = ψ(x, s_l) - c s_l` with `s_l = l/nt`, `l = -j mod nt`,
/// shifted so that `φ(anchor, 0) = 0`.
fn profile<T: Real>(grid: GridSpec, snaps: &[Vec<T>], c: T, anchor: usize) -> Vec<T> {
    let (nx, nt) = (grid.nx, grid.nt);
    let mut phi = vec![T::zero(); nx * nt];
    for j in 0..nt {
        let l = (nt - j) % nt;
        let drift = c * T::from_usize_lossy(l) / T::from_usize_lossy(nt);
        for i in 0..nx {
            phi[j * nx + i] = snaps[l][i] - drift;
        }
    }
    let base = phi[anchor];
    phi.iter_mut().for_each(|v| *v = *v - base);
    phi
}

/// `(lip_x, semiconvexity_const)` of the solution.
pub fn regularity_report<T: Real>(sol: &ViscousSolution<T>) -> (T, T) {
    field_regularity(sol.grid, &sol.phi)
}

/// Sup-norm defect of one more period of the discrete evolution started
/// from `φ_ε(·, 0)`: at every substep the iterate minus `c(ε)·s` is compared
/// with the stored profile.
pub fn residual_check<T: Real, H: Hamiltonian<T> + ?Sized>(model: &H, sol: &ViscousSolution<T>) -> T {
    let (nx, nt) = (sol.grid.nx, sol.grid.nt);
    let stepper = Stepper::new(model, sol.grid, sol.epsilon, sol.steps_per_substep);
    let mut psi: Vec<T> = (0..nx).map(|i| sol.phi_at(i, 0)).collect();
    let mut snaps = vec![vec![T::zero(); nx]; nt];
    stepper.period(&mut psi, Some(&mut snaps));
    let ntf = T::from_usize_lossy(nt);
    let mut worst = T::zero();
    for (l, snap) in snaps.iter().enumerate() {
        let j = (nt - l) % nt;
        let drift = sol.c_eps * T::from_usize_lossy(l) / ntf;
        for i in 0..nx {
            worst = worst.max((snap[i] - drift - sol.phi_at(i, j)).abs());
        }
    }
    for i in 0..nx {
        worst = worst.max((psi[i] - sol.c_eps - sol.phi_at(i, 0)).abs());
    }
    worst
}
