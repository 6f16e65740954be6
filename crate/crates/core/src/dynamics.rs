//! Hamiltonian flow, Newton shooting for integer-period orbits, and
//! monodromy/Floquet classification.

use num_complex::Complex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Mat2;
use crate::model::{Family, Hamiltonian, HamiltonianModel};
use crate::scalar::Real;

/// A point of `T¹ × R × S¹`. Trajectories keep `x` lifted to `R`; orbit
/// anchors are stored reduced to `[0, 1)`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct PhasePoint<T: Real> {
    pub x: T,
    pub p: T,
    pub t: T,
}

impl<T: Real> PhasePoint<T> {
    pub fn new(x: T, p: T, t: T) -> Self {
        Self { x, p, t }
    }

    pub fn wrapped(self) -> Self {
        Self { x: self.x.wrap_unit(), ..self }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory<T: Real> {
    /// States at `t0 + k·h`, `x` lifted.
    pub points: Vec<PhasePoint<T>>,
    /// Jacobian of each single step map, when requested.
    pub step_maps: Option<Vec<Mat2<T>>>,
}

impl<T: Real> Trajectory<T> {
    pub fn last(&self) -> PhasePoint<T> {
        *self.points.last().expect("trajectory has at least the start point")
    }

    /// Product of all step maps.
    pub fn fundamental(&self) -> Option<Mat2<T>> {
        self.step_maps.as_ref().map(|maps| maps.iter().fold(Mat2::identity(), |acc, s| *s * acc))
    }

    /// Determinant of the fundamental matrix as the product of step
    /// determinants, free of the cancellation in `ad - bc` for large entries.
    pub fn fundamental_det(&self) -> Option<T> {
        self.step_maps.as_ref().map(|maps| maps.iter().fold(T::one(), |acc, s| acc * s.det()))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct DynamicsOptions<T: Real> {
    /// RK4 steps per unit time.
    pub steps_per_unit: usize,
    /// Multiple-shooting segments per unit time.
    pub segments_per_unit: usize,
    pub shoot_tol: T,
    pub max_newton: usize,
    pub hyperbolicity_margin: T,
}

impl<T: Real> Default for DynamicsOptions<T> {
    fn default() -> Self {
        Self { steps_per_unit: 1024, segments_per_unit: 8, shoot_tol: T::lit(1e-10), max_newton: 30, hyperbolicity_margin: T::lit(0.1) }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct PeriodicOrbit<T: Real> {
    pub period: u32,
    pub anchor: PhasePoint<T>,
    /// Closed sample list at the integration steps, `x` lifted from the anchor.
    pub samples: Vec<PhasePoint<T>>,
    pub winding: i32,
    #[serde(skip)]
    pub step_maps: Vec<Mat2<T>>,
    pub monodromy: [[T; 2]; 2],
    pub monodromy_det: T,
    #[serde(skip)]
    pub floquet_multipliers: Vec<Complex<T>>,
    /// `(re, im)` of `(1/N) log μ`, sorted by real part descending.
    pub floquet_exponents: Vec<(T, T)>,
    pub hyperbolic: bool,
    pub residual: T,
}

impl<T: Real> PeriodicOrbit<T> {
    pub fn steps(&self) -> usize {
        self.samples.len() - 1
    }

    pub fn step_size(&self) -> T {
        T::lit(self.period as f64) / T::from_usize_lossy(self.steps())
    }

    pub fn monodromy_matrix(&self) -> Mat2<T> {
        let m = self.monodromy;
        Mat2::new(m[0][0], m[0][1], m[1][0], m[1][1])
    }

    /// Position at time `t ∈ [0, N]` by linear interpolation of the samples,
    /// reduced to `[0, 1)`.
    pub fn position_at(&self, t: T) -> T {
        let n = T::lit(self.period as f64);
        let t = t - (t / n).floor() * n;
        let s = t / self.step_size();
        let k = s.floor().to_usize().unwrap_or(0).min(self.steps() - 1);
        let f = s - T::from_usize_lossy(k);
        let x = self.samples[k].x * (T::one() - f) + self.samples[k + 1].x * f;
        x.wrap_unit()
    }
}

fn vector_field<T: Real, H: Hamiltonian<T> + ?Sized>(model: &H, x: T, p: T, t: T) -> [T; 2] {
    let j = model.jet(x, p, t);
    [j.h_p, -j.h_x]
}

fn linearization<T: Real, H: Hamiltonian<T> + ?Sized>(model: &H, x: T, p: T, t: T) -> ([T; 2], Mat2<T>) {
    let j = model.jet(x, p, t);
    // δx' = H_px δx + H_pp δp,  δp' = -H_xx δx - H_xp δp
    ([j.h_p, -j.h_x], Mat2::new(j.h_xp, j.h_pp, -j.h_xx, -j.h_xp))
}

/// One classical RK4 step. With `variational`, also returns the exact
/// Jacobian of the discrete step map.
pub fn rk4_step<T: Real, H: Hamiltonian<T> + ?Sized>(
    model: &H,
    z: PhasePoint<T>,
    h: T,
    variational: bool,
) -> (PhasePoint<T>, Option<Mat2<T>>) {
    let half = h / T::lit(2.0);
    let sixth = h / T::lit(6.0);
    let two = T::lit(2.0);
    if !variational {
        let k1 = vector_field(model, z.x, z.p, z.t);
        let k2 = vector_field(model, z.x + half * k1[0], z.p + half * k1[1], z.t + half);
        let k3 = vector_field(model, z.x + half * k2[0], z.p + half * k2[1], z.t + half);
        let k4 = vector_field(model, z.x + h * k3[0], z.p + h * k3[1], z.t + h);
        let x = z.x + sixth * (k1[0] + two * k2[0] + two * k3[0] + k4[0]);
        let p = z.p + sixth * (k1[1] + two * k2[1] + two * k3[1] + k4[1]);
        return (PhasePoint::new(x, p, z.t + h), None);
    }
    let id = Mat2::identity();
    let (k1, a1) = linearization(model, z.x, z.p, z.t);
    let d1 = a1;
    let (k2, a2) = linearization(model, z.x + half * k1[0], z.p + half * k1[1], z.t + half);
    let d2 = a2 * (id + d1.scale(half));
    let (k3, a3) = linearization(model, z.x + half * k2[0], z.p + half * k2[1], z.t + half);
    let d3 = a3 * (id + d2.scale(half));
    let (k4, a4) = linearization(model, z.x + h * k3[0], z.p + h * k3[1], z.t + h);
    let d4 = a4 * (id + d3.scale(h));
    let x = z.x + sixth * (k1[0] + two * k2[0] + two * k3[0] + k4[0]);
    let p = z.p + sixth * (k1[1] + two * k2[1] + two * k3[1] + k4[1]);
    let jac = id + (d1 + d2.scale(two) + d3.scale(two) + d4).scale(sixth);
    (PhasePoint::new(x, p, z.t + h), Some(jac))
}

/// Fixed-step RK4 integration of `ẋ = H_p, ṗ = -H_x` over `duration`
/// (negative durations integrate backward).
pub fn integrate<T: Real, H: Hamiltonian<T> + ?Sized>(
    model: &H,
    start: PhasePoint<T>,
    duration: T,
    steps: usize,
    with_variational: bool,
) -> Result<Trajectory<T>> {
    if steps == 0 {
        return Err(Error::Config("integration needs at least one step".into()));
    }
    let h = duration / T::from_usize_lossy(steps);
    let mut points = Vec::with_capacity(steps + 1);
    let mut maps = with_variational.then(|| Vec::with_capacity(steps));
    points.push(start);
    let mut z = start;
    for k in 0..steps {
        let (next, jac) = rk4_step(model, z, h, with_variational);
        if !(next.x.is_finite() && next.p.is_finite()) || jac.map_or(false, |j| !j.is_finite()) {
            let time = start.t + h * T::from_usize_lossy(k);
            return Err(Error::Integration { time: time.to_f64_lossy() });
        }
        // Accumulating t by repeated addition drifts; recompute it.
        z = PhasePoint::new(next.x, next.p, start.t + h * T::from_usize_lossy(k + 1));
        points.push(z);
        if let (Some(m), Some(j)) = (maps.as_mut(), jac) {
            m.push(j);
        }
    }
    Ok(Trajectory { points, step_maps: maps })
}

fn floquet_data<T: Real>(m: &Mat2<T>, det: T, period: u32, margin: T) -> (Vec<Complex<T>>, Vec<(T, T)>, bool) {
    let mus = m.eigenvalues_with_det(det);
    let n = T::lit(period as f64);
    let mut exps: Vec<(T, T)> = mus
        .iter()
        .map(|mu| {
            let l = mu.ln();
            (l.re / n, l.im / n)
        })
        .collect();
    exps.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap_or(std::cmp::Ordering::Equal));
    let hyperbolic = mus.iter().all(|mu| (mu.norm() - T::one()).abs() > margin);
    (mus.to_vec(), exps, hyperbolic)
}

/// Recomputes monodromy, Floquet data and the hyperbolicity flag from the
/// orbit's own samples.
pub fn classify_orbit<T: Real, H: Hamiltonian<T> + ?Sized>(
    model: &H,
    orbit: PeriodicOrbit<T>,
    opts: &DynamicsOptions<T>,
) -> Result<PeriodicOrbit<T>> {
    if !(orbit.residual <= opts.shoot_tol) {
        return Err(Error::Precondition(format!(
            "orbit residual {} exceeds shoot_tol {}",
            orbit.residual, opts.shoot_tol
        )));
    }
    if orbit.samples.len() < 2 {
        return Err(Error::Precondition("orbit has no samples".into()));
    }
    let h = orbit.step_size();
    let maps: Vec<Mat2<T>> = orbit.samples[..orbit.samples.len() - 1]
        .iter()
        .map(|z| rk4_step(model, *z, h, true).1.expect("variational requested"))
        .collect();
    let m = maps.iter().fold(Mat2::identity(), |acc, s| *s * acc);
    let det = maps.iter().fold(T::one(), |acc, s| acc * s.det());
    if !m.is_finite() || (det - T::one()).abs() > T::lit(1e-6) {
        return Err(Error::NumericalQuality(format!("monodromy determinant {det} is not 1")));
    }
    let (mus, exps, hyperbolic) = floquet_data(&m, det, orbit.period, opts.hyperbolicity_margin);
    Ok(PeriodicOrbit {
        step_maps: maps,
        monodromy: [[m.a, m.b], [m.c, m.d]],
        monodromy_det: det,
        floquet_multipliers: mus,
        floquet_exponents: exps,
        hyperbolic,
        ..orbit
    })
}

/// Newton iteration on the time-`N` return map, in multiple-shooting form
/// so that strongly unstable orbits stay inside the linear regime.
pub fn find_periodic_orbit<T: Real, H: Hamiltonian<T> + ?Sized>(
    model: &H,
    seed: PhasePoint<T>,
    period: u32,
    winding: i32,
    opts: &DynamicsOptions<T>,
) -> Result<PeriodicOrbit<T>> {
    if period == 0 {
        return Err(Error::Config("orbit period must be at least 1".into()));
    }
    let per_unit = opts.segments_per_unit.max(1);
    let segs = per_unit * period as usize;
    let seg_steps = (opts.steps_per_unit / per_unit).max(1);
    let seg_len = T::lit(period as f64) / T::from_usize_lossy(segs);
    let w = T::lit(winding as f64);
    let time = |k: usize| seg_len * T::from_usize_lossy(k);

    let mut nodes: Vec<[T; 2]> = (0..segs)
        .map(|k| [seed.x + w * T::from_usize_lossy(k) / T::from_usize_lossy(segs), seed.p])
        .collect();
    let mut defect;
    let mut iterations = 0;
    loop {
        let mut ends = Vec::with_capacity(segs);
        let mut jacs = Vec::with_capacity(segs);
        for (k, z) in nodes.iter().enumerate() {
            let tr = integrate(model, PhasePoint::new(z[0], z[1], time(k)), seg_len, seg_steps, true)?;
            ends.push(tr.last());
            jacs.push(tr.fundamental().expect("variational requested"));
        }
        // r_k = φ(z_k) - z_{k+1}, with z_segs = z_0 + (w, 0).
        let r: Vec<[T; 2]> = (0..segs)
            .map(|k| {
                let next = if k + 1 == segs { [nodes[0][0] + w, nodes[0][1]] } else { nodes[k + 1] };
                [ends[k].x - next[0], ends[k].p - next[1]]
            })
            .collect();
        defect = r.iter().map(|v| v[0].hypot(v[1])).fold(T::zero(), T::max);
        if defect <= opts.shoot_tol || iterations == opts.max_newton {
            break;
        }
        iterations += 1;
        // δz_{k+1} = J_k δz_k + r_k with δz_segs = δz_0.
        let mut phi = Mat2::identity();
        let mut s = [T::zero(); 2];
        for k in 0..segs {
            phi = jacs[k] * phi;
            let js = jacs[k].apply(s);
            s = [js[0] + r[k][0], js[1] + r[k][1]];
        }
        let Some(mut dz) = (phi - Mat2::identity()).solve([-s[0], -s[1]]) else { break };
        for k in 0..segs {
            nodes[k] = [nodes[k][0] + dz[0], nodes[k][1] + dz[1]];
            let jd = jacs[k].apply(dz);
            dz = [jd[0] + r[k][0], jd[1] + r[k][1]];
        }
        if nodes.iter().any(|z| !(z[0].is_finite() && z[1].is_finite())) {
            break;
        }
    }
    if !(defect <= opts.shoot_tol) {
        return Err(Error::OrbitNotFound { residual: defect.to_f64_lossy(), iterations });
    }

    // Shift the lift so the anchor sits in [0, 1).
    let shift = nodes[0][0].floor();
    let mut samples = Vec::with_capacity(segs * seg_steps + 1);
    for (k, z) in nodes.iter().enumerate() {
        let tr = integrate(model, PhasePoint::new(z[0] - shift, z[1], time(k)), seg_len, seg_steps, false)?;
        samples.extend(tr.points.into_iter().skip(usize::from(k > 0)));
    }
    let anchor = samples[0];
    let orbit = PeriodicOrbit {
        period,
        anchor: PhasePoint::new(anchor.x, anchor.p, T::zero()),
        samples,
        winding,
        step_maps: Vec::new(),
        monodromy: [[T::one(), T::zero()], [T::zero(), T::one()]],
        monodromy_det: T::one(),
        floquet_multipliers: Vec::new(),
        floquet_exponents: Vec::new(),
        hyperbolic: false,
        residual: defect,
    };
    classify_orbit(model, orbit, opts)
}

/// Nondegenerate local maxima of a time-independent potential in `[0, period)`,
/// by sign changes of `V'` on a fine lattice refined with Newton/bisection.
pub fn potential_maxima<T: Real>(model: &HamiltonianModel<T>, period: T) -> Vec<T> {
    let n = 4096usize;
    let grad = |y: T| model.potential.jet(y, T::zero());
    let h = period / T::from_usize_lossy(n);
    let mut out = Vec::new();
    for i in 0..n {
        let (a, b) = (h * T::from_usize_lossy(i), h * T::from_usize_lossy(i + 1));
        let (ga, gb) = (grad(a).v_x, grad(b).v_x);
        // A maximum is where V' goes from positive to non-positive.
        if !(ga > T::zero() && gb <= T::zero()) {
            continue;
        }
        let (mut lo, mut hi) = (a, b);
        for _ in 0..200 {
            let mid = (lo + hi) / T::lit(2.0);
            if grad(mid).v_x > T::zero() {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi - lo <= T::epsilon() * T::lit(4.0) {
                break;
            }
        }
        // Newton polish.
        let mut y = (lo + hi) / T::lit(2.0);
        for _ in 0..3 {
            let j = grad(y);
            if j.v_xx == T::zero() {
                break;
            }
            let ny = y - j.v_x / j.v_xx;
            if (ny - y).abs() > h {
                break;
            }
            y = ny;
        }
        if grad(y).v_xx < T::zero() {
            out.push(y.wrap_unit());
        }
    }
    // Fold the top boundary onto 0.
    let mut folded: Vec<T> = out
        .into_iter()
        .map(|y| if (period - y).abs() < T::lit(1e-9) || y >= period { T::zero() } else { y })
        .collect();
    folded.sort_by(|a, b| a.partial_cmp(b).unwrap());
    folded.dedup_by(|a, b| (*a - *b).abs() < T::lit(1e-9));
    folded
}

/// Candidate Aubry orbits of a built-in family, before barrier confirmation.
pub fn aubry_candidates<T: Real>(
    model: &HamiltonianModel<T>,
    opts: &DynamicsOptions<T>,
) -> Result<Vec<PeriodicOrbit<T>>> {
    model.validate()?;
    if model.potential.is_time_dependent() {
        return Err(Error::Precondition(
            "orbit seeding needs a time-independent potential (or a traveling wave)".into(),
        ));
    }
    let (cell, period, winding, p0) = match model.family {
        Family::Mechanical => (T::one(), 1u32, 0i32, T::zero()),
        Family::ShiftedKinetic => (T::one(), 1, 0, -model.momentum_shift),
        Family::TravelingWave => (T::one() / T::lit(model.wind as f64), model.wind, -1, T::zero()),
    };
    let maxima = potential_maxima(model, cell);
    let mut found: Vec<PeriodicOrbit<T>> = Vec::new();
    for y in maxima {
        let orbit = find_periodic_orbit(model, PhasePoint::new(y, p0, T::zero()), period, winding, opts)?;
        if let Some(prev) = found
            .iter_mut()
            .find(|o| (o.anchor.x - orbit.anchor.x).torus_delta().abs() < T::lit(1e-6))
        {
            if orbit.residual < prev.residual {
                *prev = orbit;
            }
        } else {
            found.push(orbit);
        }
    }
    if found.is_empty() {
        return Err(Error::Empty("no nondegenerate maxima found to seed Aubry orbits".into()));
    }
    Ok(found)
}

/// Least common multiple of the orbit periods.
pub fn period_lcm<T: Real>(orbits: &[PeriodicOrbit<T>]) -> u32 {
    fn gcd(a: u32, b: u32) -> u32 {
        if b == 0 {
            a
        } else {
            gcd(b, a % b)
        }
    }
    orbits.iter().fold(1, |acc, o| acc / gcd(acc, o.period) * o.period)
}
