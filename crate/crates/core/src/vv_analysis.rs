//! Vanishing-viscosity analysis: the inviscid pipeline up to `λ̄`, the
//! ε-sweep against the predicted limit, the slope law for `c(ε)`, the time
//! rescaling by the orbit periods, and the traveling-wave example.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::{aubry_candidates, find_periodic_orbit, period_lcm, potential_maxima, DynamicsOptions, PeriodicOrbit, PhasePoint};
use crate::error::{Error, Result};
use crate::model::{Hamiltonian, HamiltonianModel, Jet, PotentialSpec, QuadraticFrame};
use crate::orbit_hessian::{fd_crosscheck, hessian_curve, lambda_averages, FdCheck, HessianCurve, LambdaSummary};
use crate::scalar::Real;
use crate::variational::{
    action_potential_pair, anchored_barrier, build_kernels, confirm_aubry, critical_value, critical_value_power,
    ActionKernelSet, AubryCheck, BarrierField, BarrierOptions, CriticalValue, GridAnchor, GridSpec, KernelOptions,
    PowerOptions,
};
use crate::viscous::{rest_energy_bracket, solve_cell, ViscousOptions, ViscousSolution};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct AnalysisOptions<T: Real> {
    pub kernel: KernelOptions<T>,
    pub dynamics: DynamicsOptions<T>,
    pub barrier: BarrierOptions<T>,
    pub power: PowerOptions<T>,
    pub viscous: ViscousOptions<T>,
    /// Largest `nx` for which Karp runs on the dense period matrix.
    pub karp_limit: usize,
    pub aubry_tol: T,
    pub grid_tol: T,
    pub tie_rel: T,
    pub fd_stencil: usize,
    pub slope_tol: T,
    /// Relative slack allowed when checking that limit errors decrease.
    pub trend_slack: T,
    /// Half-width in cells of the band around the selected orbit where
    /// gradients are compared.
    pub grad_band: usize,
}

impl<T: Real> Default for AnalysisOptions<T> {
    fn default() -> Self {
        Self {
            kernel: KernelOptions::default(),
            dynamics: DynamicsOptions::default(),
            barrier: BarrierOptions::default(),
            power: PowerOptions::default(),
            viscous: ViscousOptions::default(),
            karp_limit: 512,
            aubry_tol: T::lit(0.01),
            grid_tol: T::lit(0.01),
            tie_rel: T::lit(1e-4),
            fd_stencil: 2,
            slope_tol: T::lit(0.15),
            trend_slack: T::lit(0.1),
            grad_band: 5,
        }
    }
}

/// Everything the inviscid side contributes: `c(0)`, the confirmed Aubry
/// orbits with their barriers, the Hessian averages and `λ̄`.
///
/// When `H(x, 0, t)` is constant the whole torus is static, no orbit is
/// singled out and the vectors are empty.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct InviscidData<T: Real> {
    pub grid: GridSpec,
    pub critical: CriticalValue<T>,
    pub orbits: Vec<PeriodicOrbit<T>>,
    pub fields: Vec<BarrierField<T>>,
    pub checks: Vec<AubryCheck<T>>,
    pub rejected: Vec<String>,
    pub window: usize,
    pub curves: Vec<HessianCurve<T>>,
    pub summary: LambdaSummary<T>,
    pub fd: Vec<FdCheck<T>>,
    /// `h(x̄_i, x̄_j)`.
    pub h_pair: Vec<Vec<T>>,
    /// `Φ(x̄_i, x̄_j)`.
    pub phi_pair: Vec<Vec<T>>,
}

impl<T: Real> InviscidData<T> {
    pub fn c0(&self) -> T {
        self.critical.c
    }

    pub fn is_flat(&self) -> bool {
        self.orbits.is_empty()
    }

    pub fn selected(&self) -> &[usize] {
        &self.summary.argmin
    }

    /// Position of the first selected orbit, or `0` on a flat problem.
    pub fn selected_x(&self) -> T {
        self.summary.argmin.first().map_or(T::zero(), |&i| self.orbits[i].anchor.x)
    }
}

/// Critical value, barrier-confirmed hyperbolic orbits, their anchored
/// barriers, `λ_i`, `λ̄` and the finite-difference cross-check.
pub fn inviscid_analysis<T: Real>(
    model: &HamiltonianModel<T>,
    kernels: &ActionKernelSet<T>,
    opts: &AnalysisOptions<T>,
) -> Result<InviscidData<T>> {
    let grid = kernels.grid;
    let critical = if grid.nx <= opts.karp_limit {
        critical_value(kernels)?
    } else {
        critical_value_power(kernels, &opts.power)?
    };
    let (lo, hi) = rest_energy_bracket(model, grid);
    if hi - lo <= T::lit(1e-12) {
        return Ok(InviscidData {
            grid,
            critical,
            orbits: vec![],
            fields: vec![],
            checks: vec![],
            rejected: vec![],
            window: 1,
            curves: vec![],
            summary: LambdaSummary { lambdas: vec![], lambda_bar: T::zero(), argmin: vec![] },
            fd: vec![],
            h_pair: vec![],
            phi_pair: vec![],
        });
    }
    let (hyperbolic, elliptic): (Vec<_>, Vec<_>) =
        aubry_candidates(model, &opts.dynamics)?.into_iter().partition(|o| o.hyperbolic);
    let mut confirmed = confirm_aubry(kernels, critical.c, hyperbolic, opts.aubry_tol, &opts.barrier)?;
    confirmed
        .rejected
        .extend(elliptic.iter().map(|o| format!("orbit at x = {} is not hyperbolic", o.anchor.x)));
    let curves = confirmed.orbits.iter().map(|o| hessian_curve(model, o)).collect::<Result<Vec<_>>>()?;
    let summary = lambda_averages(&curves, opts.tie_rel)?;
    let fd = confirmed
        .fields
        .iter()
        .zip(&confirmed.orbits)
        .zip(&curves)
        .map(|((f, o), c)| fd_crosscheck(f, o, c.lambda, opts.fd_stencil))
        .collect::<Result<Vec<_>>>()?;
    let (h_pair, phi_pair) = action_potential_pair(&confirmed.fields)?;
    Ok(InviscidData {
        grid,
        critical,
        orbits: confirmed.orbits,
        fields: confirmed.fields,
        checks: confirmed.checks,
        rejected: confirmed.rejected,
        window: confirmed.window,
        curves,
        summary,
        fd,
        h_pair,
        phi_pair,
    })
}

fn argmin_set<T: Real>(lambdas: &[T], tie_rel: T) -> Vec<usize> {
    let bar = lambdas.iter().copied().fold(T::infinity(), T::min);
    let tie = tie_rel * bar.abs();
    (0..lambdas.len()).filter(|&i| lambdas[i] <= bar + tie).collect()
}

/// `max_{i ∈ set} (values_i - h_i)` on the grid.
pub fn represent<T: Real>(values: &[T], fields: &[BarrierField<T>], set: &[usize]) -> Vec<T> {
    let cells = fields.first().map_or(0, |f| f.h.len());
    (0..cells)
        .map(|c| set.iter().map(|&i| values[i] - fields[i].h[c]).fold(T::neg_infinity(), T::max))
        .collect()
}

/// Anchors that are not dominated by another one:
/// `values_i > values_j - h(x̄_i, x̄_j) + margin` for every `j ≠ i`.
/// Falls back to every anchor if none qualifies.
pub fn representation_set<T: Real>(values: &[T], h_pair: &[Vec<T>], margin: T) -> Vec<usize> {
    let m = values.len();
    let set: Vec<usize> =
        (0..m).filter(|&i| (0..m).all(|j| j == i || values[i] > values[j] - h_pair[i][j] + margin)).collect();
    if set.is_empty() {
        (0..m).collect()
    } else {
        set
    }
}

/// `φ₀ = max{φ₀(x̄_i) - h_i : λ_i = λ̄}` after checking
/// `φ₀(x̄_j) - φ₀(x̄_i) ≤ h(x̄_i, x̄_j) + grid_tol` inside the argmin set.
pub fn predicted_limit<T: Real>(
    anchor_values: &[T],
    fields: &[BarrierField<T>],
    lambdas: &[T],
    tie_rel: T,
    grid_tol: T,
) -> Result<Vec<T>> {
    if fields.is_empty() {
        return Err(Error::Empty("no barrier fields for the predicted limit".into()));
    }
    if anchor_values.len() != fields.len() || lambdas.len() != fields.len() {
        return Err(Error::Config(format!(
            "{} anchor values and {} lambdas for {} fields",
            anchor_values.len(),
            lambdas.len(),
            fields.len()
        )));
    }
    let set = argmin_set(lambdas, tie_rel);
    let (h, _) = action_potential_pair(fields)?;
    for &i in &set {
        for &j in &set {
            let excess = anchor_values[j] - anchor_values[i] - h[i][j];
            if i != j && excess > grid_tol {
                return Err(Error::Compatibility { i, j, excess: excess.to_f64_lossy() });
            }
        }
    }
    Ok(represent(anchor_values, fields, &set))
}

/// One viscosity level of a sweep.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct EpsRecord<T: Real> {
    pub epsilon: T,
    pub c_eps: T,
    pub secant: T,
    pub limit_error: T,
    pub grad_error: T,
    pub lip_x: T,
    pub semiconvexity_const: T,
    pub periods: usize,
    pub steps_per_substep: usize,
    pub periodicity_residual: T,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct SweepReport<T: Real> {
    pub eps_list: Vec<T>,
    pub c_records: Vec<T>,
    pub c0: T,
    pub slope_secants: Vec<T>,
    /// Least-squares slope of `c(ε)` over the smaller half of `eps_list`.
    pub slope_fit: Option<T>,
    pub lambda_bar: T,
    pub selected: Vec<usize>,
    /// `φ₀(x̄_i)`: zero at the first selected orbit, the rest read off the
    /// smallest-ε solution.
    pub anchor_values: Vec<T>,
    pub limit_errors: Vec<T>,
    pub grad_errors: Vec<T>,
    pub records: Vec<EpsRecord<T>>,
}

impl<T: Real> SweepReport<T> {
    /// Limit errors never grow by more than `slack` relative.
    pub fn limit_trend_ok(&self, slack: T) -> bool {
        self.limit_errors.windows(2).all(|w| w[1] <= w[0] * (T::one() + slack))
    }

    pub fn limit_strictly_decreasing(&self) -> bool {
        self.limit_errors.windows(2).all(|w| w[1] < w[0])
    }

    /// `max / min` of `lip_x` and of the semiconvexity constant across ε.
    pub fn regularity_spread(&self) -> (T, T) {
        let spread = |f: &dyn Fn(&EpsRecord<T>) -> T| {
            let (lo, hi) = self
                .records
                .iter()
                .map(f)
                .fold((T::infinity(), T::neg_infinity()), |(lo, hi), v| (lo.min(v), hi.max(v)));
            hi / lo
        };
        (spread(&|r| r.lip_x), spread(&|r| r.semiconvexity_const))
    }
}

/// Slope of the least-squares line through `(x, y)`.
fn ls_slope<T: Real>(x: &[T], y: &[T]) -> Option<T> {
    if x.len() < 2 {
        return None;
    }
    let n = T::from_usize_lossy(x.len());
    let mx = x.iter().copied().sum::<T>() / n;
    let my = y.iter().copied().sum::<T>() / n;
    let sxx: T = x.iter().map(|&a| (a - mx) * (a - mx)).sum();
    let sxy: T = x.iter().zip(y).map(|(&a, &b)| (a - mx) * (b - my)).sum();
    (sxx > T::zero()).then(|| sxy / sxx)
}

fn smallest_half_slope<T: Real>(eps: &[T], c: &[T]) -> Option<T> {
    let k = ((eps.len() + 1) / 2).max(2).min(eps.len());
    let start = eps.len() - k;
    ls_slope(&eps[start..], &c[start..])
}

fn check_eps_list<T: Real>(eps_list: &[T]) -> Result<()> {
    if eps_list.is_empty() {
        return Err(Error::Config("sweep.eps_list is empty".into()));
    }
    if eps_list.iter().any(|e| !(*e > T::zero())) || eps_list.windows(2).any(|w| !(w[1] < w[0])) {
        return Err(Error::Config("sweep.eps_list must be positive and strictly decreasing".into()));
    }
    Ok(())
}

/// Solves the cell problem for every ε (in parallel) and compares each
/// `φ_ε`, normalized at the first selected orbit, with the predicted limit.
/// Also returns the solutions in `eps_list` order.
pub fn sweep<T: Real, H: Hamiltonian<T> + ?Sized>(
    model: &H,
    data: &InviscidData<T>,
    eps_list: &[T],
    opts: &AnalysisOptions<T>,
) -> Result<(SweepReport<T>, Vec<ViscousSolution<T>>)> {
    check_eps_list(eps_list)?;
    let grid = data.grid;
    let anchor_x = data.selected_x();
    let solutions = eps_list
        .par_iter()
        .map(|&eps| {
            solve_cell(model, eps, grid, anchor_x, &opts.viscous)
                .map_err(|e| Error::AtEpsilon { epsilon: eps.to_f64_lossy(), source: Box::new(e) })
        })
        .collect::<Result<Vec<_>>>()?;

    let finest = solutions.last().expect("eps_list is not empty");
    let (anchor_values, limit) = if data.is_flat() {
        (vec![], vec![T::zero(); grid.nx * grid.nt])
    } else {
        let i0 = data.selected()[0];
        let a0 = data.fields[i0].anchor;
        let base = finest.phi_at(a0.node, a0.layer);
        let mut values: Vec<T> =
            data.fields.iter().map(|f| finest.phi_at(f.anchor.node, f.anchor.layer) - base).collect();
        values[i0] = T::zero();
        let limit = predicted_limit(&values, &data.fields, &data.summary.lambdas, opts.tie_rel, opts.grid_tol)?;
        (values, limit)
    };

    let band = band_nodes(data, opts.grad_band);
    let c0 = data.c0();
    let records: Vec<EpsRecord<T>> = solutions
        .iter()
        .map(|s| {
            let limit_error = s.phi.iter().zip(&limit).fold(T::zero(), |m, (a, b)| m.max((*a - *b).abs()));
            let grad_error = band
                .iter()
                .map(|&(a, l)| (s.gradient_at(a, l) - central_gradient(grid, &limit, a, l)).abs())
                .fold(T::zero(), T::max);
            EpsRecord {
                epsilon: s.epsilon,
                c_eps: s.c_eps,
                secant: (s.c_eps - c0) / s.epsilon,
                limit_error,
                grad_error,
                lip_x: s.lip_x,
                semiconvexity_const: s.semiconvexity_const,
                periods: s.periods,
                steps_per_substep: s.steps_per_substep,
                periodicity_residual: s.periodicity_residual,
            }
        })
        .collect();
    let c_records: Vec<T> = records.iter().map(|r| r.c_eps).collect();
    let report = SweepReport {
        eps_list: eps_list.to_vec(),
        slope_fit: smallest_half_slope(eps_list, &c_records),
        c_records,
        c0,
        slope_secants: records.iter().map(|r| r.secant).collect(),
        lambda_bar: data.summary.lambda_bar,
        selected: data.selected().to_vec(),
        anchor_values,
        limit_errors: records.iter().map(|r| r.limit_error).collect(),
        grad_errors: records.iter().map(|r| r.grad_error).collect(),
        records,
    };
    Ok((report, solutions))
}

fn central_gradient<T: Real>(grid: GridSpec, f: &[T], node: usize, layer: usize) -> T {
    let nx = grid.nx;
    let dx = grid.dx::<T>();
    (f[layer * nx + (node + 1) % nx] - f[layer * nx + (node + nx - 1) % nx]) / (dx + dx)
}

/// Grid points within `half` cells of the first selected orbit, on every layer
/// and every lap of its period.
fn band_nodes<T: Real>(data: &InviscidData<T>, half: usize) -> Vec<(usize, usize)> {
    let Some(&i) = data.selected().first() else { return vec![] };
    let (g, o) = (data.grid, &data.orbits[i]);
    let mut out = Vec::new();
    for l in 0..g.nt * o.period as usize {
        let t = T::from_usize_lossy(l) / T::from_usize_lossy(g.nt);
        let (a, _) = g.nearest_node(o.position_at(t));
        for d in -(half as i32)..=half as i32 {
            out.push((g.wrap(a, d), l % g.nt));
        }
    }
    out.sort_unstable();
    out.dedup();
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct SlopeVerdict<T: Real> {
    pub fit: Option<T>,
    pub lambda_bar: T,
    pub min_secant: T,
    /// `-λ̄ (1 + slope_tol)`.
    pub secant_floor: T,
    pub secants_pass: bool,
    pub fit_pass: bool,
    pub enough_points: bool,
    pub pass: bool,
}

/// Every secant stays above `-λ̄ (1 + tol)` and the fitted slope is within
/// `tol · λ̄` of `-λ̄`. Needs at least three viscosities.
pub fn slope_fit<T: Real>(report: &SweepReport<T>, slope_tol: T) -> SlopeVerdict<T> {
    let lb = report.lambda_bar;
    let min_secant = report.slope_secants.iter().copied().fold(T::infinity(), T::min);
    let secant_floor = -lb * (T::one() + slope_tol);
    let secants_pass = report.slope_secants.iter().all(|&s| s >= secant_floor);
    let fit_pass = report.slope_fit.map_or(false, |f| (f + lb).abs() <= slope_tol * lb);
    let enough_points = report.eps_list.len() >= 3;
    SlopeVerdict {
        fit: report.slope_fit,
        lambda_bar: lb,
        min_secant,
        secant_floor,
        secants_pass,
        fit_pass,
        enough_points,
        pass: enough_points && secants_pass && fit_pass,
    }
}

/// `H_N(x, p, t) = H(x, N p, N t)`: one unit of the new time covers `N`
/// periods of `H`, and momenta shrink by `N`.
#[derive(Clone, Copy, Debug)]
pub struct RescaledModel<'a, T: Real, H: Hamiltonian<T> + ?Sized> {
    pub base: &'a H,
    pub n: u32,
    _scalar: std::marker::PhantomData<T>,
}

impl<'a, T: Real, H: Hamiltonian<T> + ?Sized> RescaledModel<'a, T, H> {
    pub fn new(base: &'a H, n: u32) -> Self {
        Self { base, n: n.max(1), _scalar: std::marker::PhantomData }
    }

    fn factor(&self) -> T {
        T::lit(self.n as f64)
    }
}

impl<'a, T: Real, H: Hamiltonian<T> + ?Sized> Hamiltonian<T> for RescaledModel<'a, T, H> {
    fn jet(&self, x: T, p: T, t: T) -> Jet<T> {
        let n = self.factor();
        let j = self.base.jet(x, n * p, n * t);
        Jet { h: j.h, h_p: j.h_p * n, h_x: j.h_x, h_t: j.h_t * n, h_pp: j.h_pp * n * n, h_xp: j.h_xp * n, h_xx: j.h_xx }
    }

    fn value(&self, x: T, p: T, t: T) -> T {
        let n = self.factor();
        self.base.value(x, n * p, n * t)
    }

    /// `L_N(x, v, t) = L(x, v/N, N t)`.
    fn lagrangian(&self, x: T, v: T, t: T) -> (T, T) {
        let n = self.factor();
        let (l, lv) = self.base.lagrangian(x, v / n, n * t);
        (l, lv / n)
    }

    fn min_momentum(&self, x: T, t: T) -> T {
        let n = self.factor();
        self.base.min_momentum(x, n * t) / n
    }

    fn drift_hint(&self) -> T {
        self.base.drift_hint() * self.factor()
    }

    fn quadratic_frame(&self) -> Option<QuadraticFrame<T>> {
        let n = self.factor();
        self.base
            .quadratic_frame()
            .map(|f| QuadraticFrame { mass: f.mass / (n * n), drift: f.drift * n, tilt: f.tilt / n })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct RescaleReport<T: Real> {
    pub n: u32,
    pub vacuous: bool,
    /// Largest `|h - N min_j h_N|` over all orbits and grid points.
    pub identity_error: T,
    pub identity_tol: T,
    /// `(orbit, node, rescaled layer)` where the identity is worst.
    pub worst: Option<(usize, usize, usize)>,
    pub lambdas: Vec<T>,
    /// `N λ^N_i`, to be compared with `λ_i`.
    pub lambdas_rescaled: Vec<T>,
    pub lambda_error: T,
    pub pass: bool,
}

/// With `N` the lcm of the orbit periods, recomputes the barriers of `H_N`
/// anchored at `(x̄_i, j/N)` and checks
/// `h(x, [t], x̄_i) = N min_j h_N(x, [t/N], x̄_i, [j/N])` on every node, and
/// `N λ^N_i = λ_i` for the rescaled orbits.
pub fn rescale_check<T: Real, H: Hamiltonian<T> + ?Sized>(
    model: &H,
    data: &InviscidData<T>,
    opts: &AnalysisOptions<T>,
) -> Result<RescaleReport<T>> {
    let n = period_lcm(&data.orbits);
    let identity_tol = opts.grid_tol + opts.grid_tol;
    let lambdas: Vec<T> = data.curves.iter().map(|c| c.lambda).collect();
    if n <= 1 {
        return Ok(RescaleReport {
            n: 1,
            vacuous: true,
            identity_error: T::zero(),
            identity_tol,
            worst: None,
            lambdas_rescaled: lambdas.clone(),
            lambdas,
            lambda_error: T::zero(),
            pass: true,
        });
    }
    let nf = T::lit(n as f64);
    let nu = n as usize;
    let rmodel = RescaledModel::new(model, n);
    let (nx, nt) = (data.grid.nx, data.grid.nt);
    let rgrid = GridSpec::new(nx, nt * nu);
    let kopts = KernelOptions { vmax: opts.kernel.vmax * nf, ..opts.kernel };
    let rk = build_kernels(&rmodel, rgrid, &kopts)?;
    let c_n = data.c0() / nf;

    let mut identity_error = T::zero();
    let mut worst = None;
    let mut lambdas_rescaled = Vec::with_capacity(data.orbits.len());
    for (i, (orbit, field)) in data.orbits.iter().zip(&data.fields).enumerate() {
        let rescaled = (0..nu)
            .into_par_iter()
            .map(|j| anchored_barrier(&rk, c_n, GridAnchor::node(rgrid, field.anchor.node, j * nt), 1, &opts.barrier))
            .collect::<Result<Vec<_>>>()?;
        for layer in 0..nt * nu {
            for a in 0..nx {
                let best = rescaled.iter().map(|f| f.h_at(a, layer)).fold(T::infinity(), T::min);
                let err = (field.h_at(a, layer % nt) - nf * best).abs();
                if err > identity_error {
                    identity_error = err;
                    worst = Some((i, a, layer));
                }
            }
        }

        let dyn_opts = DynamicsOptions {
            steps_per_unit: opts.dynamics.steps_per_unit * nu,
            segments_per_unit: opts.dynamics.segments_per_unit * nu,
            ..opts.dynamics
        };
        let winding = orbit.winding * (n / orbit.period) as i32;
        let seed = PhasePoint::new(orbit.anchor.x, orbit.anchor.p / nf, T::zero());
        let ro = find_periodic_orbit(&rmodel, seed, 1, winding, &dyn_opts)?;
        lambdas_rescaled.push(nf * hessian_curve(&rmodel, &ro)?.lambda);
    }
    let lambda_error =
        lambdas.iter().zip(&lambdas_rescaled).map(|(a, b)| (*a - *b).abs()).fold(T::zero(), T::max);
    Ok(RescaleReport {
        n,
        vacuous: false,
        pass: identity_error <= identity_tol && lambda_error <= T::lit(1e-6),
        identity_error,
        identity_tol,
        worst,
        lambdas,
        lambdas_rescaled,
        lambda_error,
    })
}

/// Arc length of `y ↦ √(-2V(y))` on the circle, tabulated by cumulative
/// Simpson sums.
struct JacobiLength<T> {
    cumulative: Vec<T>,
    total: T,
}

impl<T: Real> JacobiLength<T> {
    fn new(potential: &PotentialSpec<T>, cells: usize) -> Self {
        let g = |y: T| (-(potential.value(y, T::zero()) + potential.value(y, T::zero()))).max(T::zero()).sqrt();
        let h = T::one() / T::from_usize_lossy(cells);
        let mut cumulative = Vec::with_capacity(cells + 1);
        cumulative.push(T::zero());
        let mut acc = T::zero();
        for i in 0..cells {
            let y0 = h * T::from_usize_lossy(i);
            acc = acc + h / T::lit(6.0) * (g(y0) + T::lit(4.0) * g(y0 + h / T::lit(2.0)) + g(y0 + h));
            cumulative.push(acc);
        }
        Self { cumulative, total: acc }
    }

    fn at(&self, y: T) -> T {
        let cells = self.cumulative.len() - 1;
        let s = y.wrap_unit() * T::from_usize_lossy(cells);
        let i = s.floor().to_usize().unwrap_or(0).min(cells - 1);
        let f = s - T::from_usize_lossy(i);
        self.cumulative[i] + f * (self.cumulative[i + 1] - self.cumulative[i])
    }

    /// Shorter of the two arcs between `a` and `b`.
    fn distance(&self, a: T, b: T) -> T {
        let d = (self.at(b) - self.at(a)).abs();
        d.min(self.total - d)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct ExampleReport<T: Real> {
    pub wind: u32,
    /// Maxima of `V` in `[0, 1/k)` at the top level `max V = 0`.
    pub maxima: Vec<T>,
    pub anchors: Vec<T>,
    pub anchors_pass: bool,
    /// Largest distance between an orbit and `x̄ - t/k`.
    pub track_error: T,
    /// `√(-V''(x̄_i))`.
    pub analytic: Vec<T>,
    pub lambdas: Vec<T>,
    pub riccati_errors: Vec<T>,
    pub riccati_pass: bool,
    pub fd_deviations: Vec<T>,
    pub fd_pass: bool,
    /// Largest `|h_i(x, t) - q_i(x + t/k)|` against the quadrature barrier.
    pub shift_error: T,
    pub shift_pass: bool,
    pub failures: Vec<String>,
    pub pass: bool,
}

/// The traveling-wave model with its inviscid data and the example checks.
#[derive(Clone, Debug)]
pub struct ExampleRun<T: Real> {
    pub model: HamiltonianModel<T>,
    pub data: InviscidData<T>,
    pub report: ExampleReport<T>,
}

/// For `H = (p - 1/k)²/2 - 1/(2k²) + V(x + t/k)` with `V` of period `1/k`
/// and `max V = 0`: the Aubry orbits are `x̄ - t/k` over the maxima `x̄`,
/// `D²h_i` along them is `√(-V''(x̄_i))`, and `h_i(x, t)` is the Jacobi
/// distance from `x + t/k` to the nearest translate `x̄_i + j/k`.
pub fn example_verify<T: Real>(
    k: u32,
    potential: PotentialSpec<T>,
    grid: GridSpec,
    opts: &AnalysisOptions<T>,
) -> Result<ExampleRun<T>> {
    let model = HamiltonianModel::traveling_wave(potential, k);
    model.validate()?;
    let kf = T::lit(k as f64);
    let cell = T::one() / kf;
    let all_maxima = potential_maxima(&model, cell);
    let top = all_maxima.iter().map(|&y| model.potential.value(y, T::zero())).fold(T::neg_infinity(), T::max);
    if !(top.abs() <= T::lit(1e-9)) {
        return Err(Error::Precondition(format!("example needs max V = 0, found {top}")));
    }
    let maxima: Vec<T> =
        all_maxima.into_iter().filter(|&y| model.potential.value(y, T::zero()) >= -T::lit(1e-9)).collect();

    let kernels = build_kernels(&model, grid, &opts.kernel)?;
    let data = inviscid_analysis(&model, &kernels, opts)?;
    drop(kernels);
    let mut failures = Vec::new();

    let near = |a: T, b: T| ((a - b) * kf).torus_delta().abs() / kf <= T::lit(1e-6);
    let anchors: Vec<T> = data.orbits.iter().map(|o| o.anchor.x).collect();
    let anchors_pass = anchors.len() == maxima.len()
        && maxima.iter().all(|&y| anchors.iter().any(|&a| near(a, y)))
        && anchors.iter().all(|&a| maxima.iter().any(|&y| near(a, y)));
    if !anchors_pass {
        failures.push(format!("Aubry anchors {anchors:?} do not match the maxima {maxima:?}"));
    }
    let track_error = data
        .orbits
        .iter()
        .flat_map(|o| o.samples.iter().map(move |s| (s.x - (o.anchor.x - s.t / kf)).torus_delta().abs()))
        .fold(T::zero(), T::max);
    if track_error > T::lit(1e-6) {
        failures.push(format!("orbits leave x - t/k by {track_error}"));
    }

    let analytic: Vec<T> = data.orbits.iter().map(|o| (-model.potential.jet(o.anchor.x, T::zero()).v_xx).sqrt()).collect();
    let lambdas: Vec<T> = data.curves.iter().map(|c| c.lambda).collect();
    let riccati_errors: Vec<T> = lambdas.iter().zip(&analytic).map(|(l, a)| (*l - *a).abs()).collect();
    let riccati_pass = riccati_errors.iter().all(|e| *e <= T::lit(1e-3));
    if !riccati_pass {
        failures.push(format!("Riccati lambdas {lambdas:?} vs analytic {analytic:?}"));
    }
    let fd_deviations = data
        .fields
        .iter()
        .zip(&data.orbits)
        .zip(&analytic)
        .map(|((f, o), a)| fd_crosscheck(f, o, *a, opts.fd_stencil).map(|c| c.deviation))
        .collect::<Result<Vec<_>>>()?;
    let fd_pass = fd_deviations.iter().all(|d| *d <= T::lit(0.05));
    if !fd_pass {
        failures.push(format!("finite-difference deviations {fd_deviations:?} above 5%"));
    }

    let jacobi = JacobiLength::new(&model.potential, 1 << 16);
    let mut shift_error = T::zero();
    for f in &data.fields {
        let targets: Vec<T> = (0..k).map(|j| f.anchor.x + T::lit(j as f64) / kf).collect();
        for l in 0..grid.nt {
            let t = grid.t::<T>(l);
            for a in 0..grid.nx {
                let y = grid.x::<T>(a) + t / kf;
                let q = targets.iter().map(|&z| jacobi.distance(y, z)).fold(T::infinity(), T::min);
                shift_error = shift_error.max((f.h_at(a, l) - q).abs());
            }
        }
    }
    let shift_pass = !data.fields.is_empty() && shift_error <= opts.grid_tol + opts.grid_tol;
    if !shift_pass {
        failures.push(format!("barrier differs from the shifted quadrature by {shift_error}"));
    }
    let pass = failures.is_empty();
    let report = ExampleReport {
        wind: k,
        maxima,
        anchors,
        anchors_pass,
        track_error,
        analytic,
        lambdas,
        riccati_errors,
        riccati_pass,
        fd_deviations,
        fd_pass,
        shift_error,
        shift_pass,
        failures,
        pass,
    };
    Ok(ExampleRun { model, data, report })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn injected(g: GridSpec, node: usize, h: Vec<f64>) -> BarrierField<f64> {
        BarrierField {
            anchor: GridAnchor::node(g, node, 0),
            grid: g,
            phi_pot: h.clone(),
            h,
            c_used: 0.0,
            window: 1,
            window_osc: 0.0,
            sweeps: 0,
            osc_trace: vec![],
        }
    }

    fn synthetic_report(eps: &[f64], c0: f64, lambda: f64) -> SweepReport<f64> {
        let c: Vec<f64> = eps.iter().map(|e| c0 - lambda * e + e * e).collect();
        SweepReport {
            eps_list: eps.to_vec(),
            slope_secants: eps.iter().zip(&c).map(|(e, c)| (c - c0) / e).collect(),
            slope_fit: smallest_half_slope(eps, &c),
            c_records: c,
            c0,
            lambda_bar: lambda,
            selected: vec![0],
            anchor_values: vec![0.0],
            limit_errors: vec![0.0; eps.len()],
            grad_errors: vec![0.0; eps.len()],
            records: vec![],
        }
    }

    #[test]
    fn slope_fit_recovers_linear_term() {
        let eps = [0.02, 0.01, 0.005, 0.0025];
        let r = synthetic_report(&eps, -0.3, 2.0 * PI);
        // Two smallest points: slope is exactly -λ + (ε₃ + ε₄).
        assert!((r.slope_fit.unwrap() - (-2.0 * PI + 0.0075)).abs() < 1e-12);
        let v = slope_fit(&r, 0.15);
        assert!(v.pass && v.secants_pass && v.fit_pass);
        let short = synthetic_report(&eps[..2], -0.3, 2.0 * PI);
        assert!(!slope_fit(&short, 0.15).pass);
        let mut bad = synthetic_report(&eps, -0.3, 2.0 * PI);
        bad.lambda_bar = 4.0;
        let v = slope_fit(&bad, 0.15);
        assert!(!v.secants_pass && !v.fit_pass);
    }

    #[test]
    fn rejects_increasing_eps() {
        assert!(matches!(check_eps_list(&[0.01, 0.02]), Err(Error::Config(m)) if m.contains("sweep.eps_list")));
        assert!(check_eps_list(&[0.02, 0.0]).is_err());
        assert!(check_eps_list(&[0.02, 0.01]).is_ok());
    }

    #[test]
    fn unique_minimizer_gives_minus_barrier() {
        let g = GridSpec::new(10, 2);
        let h0: Vec<f64> = (0..20).map(|i| ((i % 10) as f64 - 2.0).abs() * 0.1).collect();
        let h1: Vec<f64> = (0..20).map(|i| ((i % 10) as f64 - 7.0).abs() * 0.1).collect();
        let fields = vec![injected(g, 2, h0.clone()), injected(g, 7, h1)];
        let phi = predicted_limit(&[0.0, -0.5], &fields, &[1.0, 2.0], 1e-4, 0.01).unwrap();
        assert!(phi.iter().zip(&h0).all(|(p, h)| *p == -h));
    }

    #[test]
    fn incompatible_anchor_values_rejected() {
        let g = GridSpec::new(10, 2);
        let h0: Vec<f64> = (0..20).map(|i| ((i % 10) as f64 - 2.0).abs() * 0.1).collect();
        let h1: Vec<f64> = (0..20).map(|i| ((i % 10) as f64 - 7.0).abs() * 0.1).collect();
        let fields = vec![injected(g, 2, h0), injected(g, 7, h1)];
        // h(x̄_0, x̄_1) = 0.5, so φ_1 - φ_0 may not exceed it.
        let err = predicted_limit(&[0.0, 0.6], &fields, &[1.0, 1.0], 1e-4, 0.01).unwrap_err();
        assert!(matches!(err, Error::Compatibility { i: 0, j: 1, .. }), "{err:?}");
        assert!(predicted_limit(&[0.0, 0.505], &fields, &[1.0, 1.0], 1e-4, 0.01).is_ok());
    }

    #[test]
    fn representation_drops_dominated_anchor() {
        let h = vec![vec![0.0, 0.5], vec![0.5, 0.0]];
        assert_eq!(representation_set(&[0.0, -0.5], &h, 0.01), vec![0]);
        assert_eq!(representation_set(&[0.0, 0.0], &h, 0.01), vec![0, 1]);
    }

    fn double_well() -> (HamiltonianModel<f64>, InviscidData<f64>) {
        let m = HamiltonianModel::mechanical(PotentialSpec::from_terms(&[(0, -0.5, 0.0), (2, 0.5, 0.0)]));
        let g = GridSpec::new(100, 16);
        let k = build_kernels(&m, g, &KernelOptions::default()).unwrap();
        let d = inviscid_analysis(&m, &k, &AnalysisOptions::default()).unwrap();
        (m, d)
    }

    #[test]
    fn symmetric_double_well_limit() {
        let (m, d) = double_well();
        assert_eq!(d.orbits.len(), 2);
        assert_eq!(d.selected(), &[0, 1]);
        let phi = predicted_limit(&[0.0, 0.0], &d.fields, &d.summary.lambdas, 1e-4, 0.01).unwrap();
        let (nx, nt) = (d.grid.nx, d.grid.nt);
        for l in 0..nt {
            for a in 0..nx {
                let b = (a + nx / 2) % nx;
                assert!((phi[l * nx + a] - phi[l * nx + b]).abs() < 1e-9);
            }
        }
        // Fixed point of the max-representation on its own anchor values.
        let values: Vec<f64> = d.fields.iter().map(|f| phi[f.anchor.layer * nx + f.anchor.node]).collect();
        let set = representation_set(&values, &d.h_pair, 0.01);
        let again = represent(&values, &d.fields, &set);
        assert!(again.iter().zip(&phi).all(|(a, b)| (a - b).abs() <= 0.01));
        let r = rescale_check(&m, &d, &AnalysisOptions::default()).unwrap();
        assert!(r.vacuous && r.pass && r.n == 1);
    }

    #[test]
    fn flat_sweep_is_exact() {
        let m = HamiltonianModel::<f64>::mechanical(PotentialSpec::zero());
        let g = GridSpec::new(32, 8);
        let k = build_kernels(&m, g, &KernelOptions::default()).unwrap();
        let d = inviscid_analysis(&m, &k, &AnalysisOptions::default()).unwrap();
        assert!(d.is_flat() && d.c0() == 0.0);
        let (r, sols) = sweep(&m, &d, &[0.1, 0.05, 0.025], &AnalysisOptions::default()).unwrap();
        assert_eq!(sols.len(), 3);
        assert!(r.limit_errors.iter().all(|e| *e == 0.0));
        assert!(r.c_records.iter().all(|c| *c == 0.0));
    }

    #[test]
    fn rescaled_model_identities() {
        let base = HamiltonianModel::<f64>::traveling_wave(PotentialSpec::from_terms(&[(0, -0.5, 0.0), (2, 0.5, 0.0)]), 2);
        let r = RescaledModel::new(&base, 2);
        let f = r.quadratic_frame().unwrap();
        for &(x, p, t) in &[(0.1, 0.3, 0.2), (0.7, -1.1, 0.45), (0.33, 0.05, 0.9)] {
            assert!((r.value(x, p, t) - base.value(x, 2.0 * p, 2.0 * t)).abs() < 1e-14);
            let kinetic = p * p / (2.0 * f.mass) + f.momentum_slope() * p;
            assert!((r.value(x, p, t) - r.value(x, 0.0, t) - kinetic).abs() < 1e-12);
            // Fenchel equality at v = H_p.
            let j = r.jet(x, p, t);
            let (l, lv) = r.lagrangian(x, j.h_p, t);
            assert!((l + j.h - p * j.h_p).abs() < 1e-12 && (lv - p).abs() < 1e-12);
            let h = 1e-6;
            let fd = (r.value(x, p + h, t) - r.value(x, p - h, t)) / (2.0 * h);
            assert!((fd - j.h_p).abs() < 1e-6);
        }
        assert!((r.drift_hint() + 1.0).abs() < 1e-15);
    }

    #[test]
    fn jacobi_length_closed_form() {
        // √(-2V) = √2 |sin 2πy| for V = -sin²(2πy).
        let v = PotentialSpec::<f64>::from_terms(&[(0, -0.5, 0.0), (2, 0.5, 0.0)]);
        let j = JacobiLength::new(&v, 1 << 14);
        let exact = |y: f64| 2f64.sqrt() * (1.0 - (2.0 * PI * y).cos()) / (2.0 * PI);
        assert!((j.total - 2.0 * 2f64.sqrt() / PI).abs() < 1e-9);
        for y in [0.1, 0.25, 0.4] {
            assert!((j.distance(0.0, y) - exact(y)).abs() < 1e-6);
        }
    }
}
