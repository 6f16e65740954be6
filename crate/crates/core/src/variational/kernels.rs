//! Substep action kernels on the space-time grid.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Hamiltonian;
use crate::scalar::Real;

/// `nx` nodes on `[0, 1)`, `nt` substeps per unit time.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridSpec {
    pub nx: usize,
    pub nt: usize,
}

impl GridSpec {
    pub fn new(nx: usize, nt: usize) -> Self {
        Self { nx, nt }
    }

    pub fn x<T: Real>(&self, node: usize) -> T {
        T::from_usize_lossy(node) / T::from_usize_lossy(self.nx)
    }

    pub fn t<T: Real>(&self, layer: usize) -> T {
        T::from_usize_lossy(layer) / T::from_usize_lossy(self.nt)
    }

    pub fn dx<T: Real>(&self) -> T {
        T::one() / T::from_usize_lossy(self.nx)
    }

    #[inline]
    pub fn wrap(&self, node: usize, offset: i32) -> usize {
        (node as i64 + offset as i64).rem_euclid(self.nx as i64) as usize
    }

    /// Nearest node to `x` and the signed offset in cells.
    pub fn nearest_node<T: Real>(&self, x: T) -> (usize, T) {
        let s = x.wrap_unit() * T::from_usize_lossy(self.nx);
        let r = s.round();
        let node = r.to_usize().unwrap_or(0) % self.nx;
        (node, s - r)
    }

    pub fn nearest_layer<T: Real>(&self, t: T) -> usize {
        let s = (t.wrap_unit() * T::from_usize_lossy(self.nt)).round();
        s.to_usize().unwrap_or(0) % self.nt
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct KernelOptions<T: Real> {
    /// Velocity cap in torus units per unit time.
    pub vmax: T,
    /// Longest multi-substep arc.
    pub slow_spans: usize,
    /// Half-width of the offset window of multi-substep arcs.
    pub slow_offsets: i32,
}

impl<T: Real> Default for KernelOptions<T> {
    fn default() -> Self {
        Self { vmax: T::lit(4.0), slow_spans: 32, slow_offsets: 2 }
    }
}

/// A move of `offset` nodes over `span` substeps.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ArcShape {
    pub offset: i32,
    pub span: u16,
}

/// Sparse per-layer cost tables of node-to-node moves. Layer `j` holds the
/// arcs leaving time `j/nt`; no arc crosses the period boundary.
#[derive(Clone, Debug)]
pub struct ActionKernelSet<T: Real> {
    pub grid: GridSpec,
    pub vmax: T,
    /// Largest single-substep displacement in nodes.
    pub max_wind: i32,
    shapes: Vec<Vec<ArcShape>>,
    starts: Vec<usize>,
    costs: Vec<T>,
}

/// Action of the straight segment from `x0` moving `delta` over `span`
/// substeps starting at layer `layer`, one midpoint sample per substep.
pub fn segment_action<T: Real, H: Hamiltonian<T> + ?Sized>(
    model: &H,
    grid: GridSpec,
    x0: T,
    delta: T,
    layer: usize,
    span: usize,
) -> T {
    let nt = T::from_usize_lossy(grid.nt);
    let s = T::from_usize_lossy(span);
    let v = delta * nt / s;
    let half = T::lit(0.5);
    (0..span).fold(T::zero(), |acc, k| {
        let frac = (T::from_usize_lossy(k) + half) / s;
        let t = (T::from_usize_lossy(layer + k) + half) / nt;
        acc + model.lagrangian_value(x0 + delta * frac, v, t) / nt
    })
}

/// `S(t) = sin(√κ t)/√κ`, `C(t) = cos(√κ t)`, `E(t) = (1 - C)/κ`,
/// `F(t) = (t - S)/κ`, continued through `κ = 0` and `κ < 0`.
fn oscillator_fns<T: Real>(kappa: T, t: T) -> (T, T, T, T) {
    let q = kappa * t * t;
    if q.abs() < T::lit(1e-3) {
        let t2 = t * t;
        let s = t * (T::one() - q / T::lit(6.0) + q * q / T::lit(120.0) - q * q * q / T::lit(5040.0));
        let c = T::one() - q / T::lit(2.0) + q * q / T::lit(24.0) - q * q * q / T::lit(720.0);
        let e = t2 * (T::lit(0.5) - q / T::lit(24.0) + q * q / T::lit(720.0) - q * q * q / T::lit(40320.0));
        let f = t2 * t * (T::one() / T::lit(6.0) - q / T::lit(120.0) + q * q / T::lit(5040.0) - q * q * q / T::lit(362880.0));
        return (s, c, e, f);
    }
    let (s, c) = if kappa > T::zero() {
        let w = kappa.sqrt();
        ((w * t).sin() / w, (w * t).cos())
    } else {
        let m = (-kappa).sqrt();
        ((m * t).sinh() / m, (m * t).cosh())
    };
    (s, c, (T::one() - c) / kappa, (t - s) / kappa)
}

/// Minimizer `η = A C + B S - g E` of `½η'² - ½κη² - gη` on `[0, τ]`
/// between fixed endpoints.
#[derive(Clone, Copy, Debug)]
struct QuadraticPath<T> {
    kappa: T,
    g: T,
    a: T,
    b: T,
    tau: T,
}

impl<T: Real> QuadraticPath<T> {
    /// `None` past (or near) the first conjugate time.
    fn new(kappa: T, g: T, eta0: T, eta1: T, tau: T) -> Option<Self> {
        if kappa > T::zero() && kappa.sqrt() * tau > T::lit(0.9) * T::PI() {
            return None;
        }
        let (s, c, e, _) = oscillator_fns(kappa, tau);
        if s <= T::zero() {
            return None;
        }
        Some(Self { kappa, g, a: eta0, b: (eta1 - eta0 * c + g * e) / s, tau })
    }

    /// `(η, η')` at time `t`.
    fn at(&self, t: T) -> (T, T) {
        let (s, c, e, _) = oscillator_fns(self.kappa, t);
        (self.a * c + self.b * s - self.g * e, -self.kappa * self.a * s + self.b * c - self.g * s)
    }

    /// Model action; along a solution it is `½[η η'] - ½ g ∫η`.
    fn action(&self) -> T {
        let (s, _, e, f) = oscillator_fns(self.kappa, self.tau);
        let (eta0, v0) = self.at(T::zero());
        let (eta1, v1) = self.at(self.tau);
        let integral = self.a * s + self.b * e - self.g * f;
        T::lit(0.5) * (eta1 * v1 - eta0 * v0) - T::lit(0.5) * self.g * integral
    }

    /// Largest `|η|` over the endpoints and `samples` interior points.
    fn reach(&self, samples: usize) -> T {
        let ends = self.at(T::zero()).0.abs().max(self.at(self.tau).0.abs());
        (1..=samples)
            .map(|i| self.at(self.tau * T::from_usize_lossy(i) / T::from_usize_lossy(samples + 1)).0.abs())
            .fold(ends, T::max)
    }
}

/// Least action of `½η'² - ½κη² - gη` on `[0, τ]` from `η0` to `η1`, or
/// `None` past the first conjugate time.
pub fn quadratic_action<T: Real>(kappa: T, g: T, eta0: T, eta1: T, tau: T) -> Option<T> {
    QuadraticPath::new(kappa, g, eta0, eta1, tau).map(|p| p.action())
}

/// Substeps per three-point Gauss panel when pricing long arcs.
const SUBSTEPS_PER_PANEL: usize = 2;

/// Single substeps use [`segment_action`]. Longer arcs follow the least
/// action path of the local quadratic model of `W` at the space-time
/// midpoint, and are priced with the true Lagrangian along that path by
/// Gauss quadrature, so no arc is cheaper than an actual curve. Falls back
/// to the straight segment when the family has no quadratic frame, the
/// model has no minimizer, or its minimizer leaves the endpoint band by
/// more than a cell.
pub fn arc_action<T: Real, H: Hamiltonian<T> + ?Sized>(
    model: &H,
    grid: GridSpec,
    x0: T,
    delta: T,
    layer: usize,
    span: usize,
) -> T {
    let Some(frame) = model.quadratic_frame().filter(|_| span > 1) else {
        return segment_action(model, grid, x0, delta, layer, span);
    };
    let nt = T::from_usize_lossy(grid.nt);
    let tau = T::from_usize_lossy(span) / nt;
    let t0 = T::from_usize_lossy(layer) / nt;
    let xm = x0 + delta / T::lit(2.0);
    let j = model.jet(xm, T::zero(), t0 + tau / T::lit(2.0));
    let d = delta - frame.drift * tau;
    let half = d / T::lit(2.0);
    let m = frame.mass;
    let path = match QuadraticPath::new(j.h_xx / m, j.h_x / m, -half, half, tau) {
        Some(p) if p.reach(3) <= half.abs() + grid.dx::<T>() => p,
        _ => return segment_action(model, grid, x0, delta, layer, span),
    };
    let panels = span.div_ceil(SUBSTEPS_PER_PANEL);
    let width = tau / T::from_usize_lossy(panels);
    let r = T::lit(0.6).sqrt();
    let nodes = [(-r, T::lit(5.0 / 18.0)), (T::zero(), T::lit(8.0 / 18.0)), (r, T::lit(5.0 / 18.0))];
    let mut total = T::zero();
    for k in 0..panels {
        let centre = width * (T::from_usize_lossy(k) + T::lit(0.5));
        for (z, w) in nodes {
            let s = centre + z * width / T::lit(2.0);
            let (eta, deta) = path.at(s);
            let x = x0 + frame.drift * s + half + eta;
            total = total + w * width * model.lagrangian_value(x, frame.drift + deta, t0 + s);
        }
    }
    total
}

impl<T: Real> ActionKernelSet<T> {
    pub fn shapes(&self, layer: usize) -> &[ArcShape] {
        &self.shapes[layer]
    }

    /// Costs of the arcs leaving `(node, layer)`, aligned with [`Self::shapes`].
    #[inline]
    pub fn costs(&self, layer: usize, node: usize) -> &[T] {
        let n = self.shapes[layer].len();
        let s = self.starts[layer] + node * n;
        &self.costs[s..s + n]
    }

    pub fn arc_count(&self) -> usize {
        self.costs.len()
    }

    /// The same kernels with `a/nt` added per substep (i.e. `L + a`).
    pub fn shifted(&self, a: T) -> Self {
        let nt = T::from_usize_lossy(self.grid.nt);
        let mut out = self.clone();
        for layer in 0..self.grid.nt {
            let spans: Vec<T> = self.shapes[layer].iter().map(|s| T::lit(s.span as f64) / nt).collect();
            for node in 0..self.grid.nx {
                let n = spans.len();
                let s = self.starts[layer] + node * n;
                for (c, w) in out.costs[s..s + n].iter_mut().zip(&spans) {
                    *c = *c + a * *w;
                }
            }
        }
        out
    }
}

fn layer_shapes<T: Real>(grid: GridSpec, layer: usize, max_wind: i32, opts: &KernelOptions<T>, drift: T) -> Vec<ArcShape> {
    let mut shapes: Vec<ArcShape> = (-max_wind..=max_wind).map(|o| ArcShape { offset: o, span: 1 }).collect();
    // Nodes per substep at rest and along the drift.
    let beta = drift * T::from_usize_lossy(grid.nx) / T::from_usize_lossy(grid.nt);
    let cap = opts.vmax * T::from_usize_lossy(grid.nx) / T::from_usize_lossy(grid.nt);
    for s in 2..=opts.slow_spans.min(grid.nt - layer) {
        let sf = T::from_usize_lossy(s);
        let centre = (sf * beta).round().to_i32().unwrap_or(0);
        let mut offsets: Vec<i32> = (-opts.slow_offsets..=opts.slow_offsets)
            .flat_map(|m| [m, centre + m])
            .collect();
        offsets.sort_unstable();
        offsets.dedup();
        for o in offsets {
            // Offsets divisible by the span repeat a single-substep move.
            if o % s as i32 == 0 {
                continue;
            }
            if T::lit(o.abs() as f64) > cap * sf {
                continue;
            }
            shapes.push(ArcShape { offset: o, span: s as u16 });
        }
    }
    shapes
}

/// Builds the substep kernels for `model` on `grid`.
pub fn build_kernels<T: Real, H: Hamiltonian<T> + ?Sized>(
    model: &H,
    grid: GridSpec,
    opts: &KernelOptions<T>,
) -> Result<ActionKernelSet<T>> {
    if grid.nx < 2 || grid.nt < 2 {
        return Err(Error::Config(format!("grid needs nx, nt >= 2, got {}x{}", grid.nx, grid.nt)));
    }
    let max_wind = (opts.vmax * T::from_usize_lossy(grid.nx) / T::from_usize_lossy(grid.nt))
        .floor()
        .to_i32()
        .unwrap_or(0);
    if max_wind < 2 {
        return Err(Error::Config(format!(
            "numerics.vmax = {} reaches fewer than two neighbours per substep on a {}x{} grid",
            opts.vmax, grid.nx, grid.nt
        )));
    }
    let drift = model.drift_hint();
    let shapes: Vec<Vec<ArcShape>> = (0..grid.nt).map(|j| layer_shapes(grid, j, max_wind, opts, drift)).collect();
    let mut starts = Vec::with_capacity(grid.nt);
    let mut total = 0;
    for s in &shapes {
        starts.push(total);
        total += s.len() * grid.nx;
    }
    let dx = grid.dx::<T>();
    let mut costs = vec![T::zero(); total];
    let mut rest: &mut [T] = &mut costs;
    let mut chunks = Vec::with_capacity(grid.nt);
    for s in &shapes {
        let (head, tail) = rest.split_at_mut(s.len() * grid.nx);
        chunks.push(head);
        rest = tail;
    }
    chunks.into_par_iter().enumerate().for_each(|(layer, chunk)| {
        let sh = &shapes[layer];
        for node in 0..grid.nx {
            let x0 = grid.x::<T>(node);
            for (k, a) in sh.iter().enumerate() {
                let delta = T::lit(a.offset as f64) * dx;
                chunk[node * sh.len() + k] = arc_action(model, grid, x0, delta, layer, a.span as usize);
            }
        }
    });
    if costs.iter().any(|c| !c.is_finite()) {
        return Err(Error::NumericalQuality("non-finite kernel cost".into()));
    }
    Ok(ActionKernelSet { grid, vmax: opts.vmax, max_wind, shapes, starts, costs })
}
