//! Anchored Peierls barriers and action potentials by backward value
//! iteration on the substep kernels.

use std::collections::VecDeque;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::kernels::{ActionKernelSet, GridSpec};
use crate::error::{Error, Result};
use crate::scalar::Real;

/// A grid point `(node, layer)` standing in for `(x, [t])`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct GridAnchor<T: Real> {
    pub node: usize,
    pub layer: usize,
    pub x: T,
    pub t: T,
    /// Signed distance from `x` to the node, in cells.
    pub offset_cells: T,
}

impl<T: Real> GridAnchor<T> {
    pub fn at(grid: GridSpec, x: T, t: T) -> Self {
        let (node, offset_cells) = grid.nearest_node(x);
        Self { node, layer: grid.nearest_layer(t), x: x.wrap_unit(), t: t.wrap_unit(), offset_cells }
    }

    pub fn node(grid: GridSpec, node: usize, layer: usize) -> Self {
        Self { node, layer, x: grid.x(node), t: grid.t(layer), offset_cells: T::zero() }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct BarrierOptions<T: Real> {
    pub barrier_tol: T,
    pub max_sweeps: usize,
    /// Consecutive converged windows required before stopping.
    pub settle: usize,
}

impl<T: Real> Default for BarrierOptions<T> {
    fn default() -> Self {
        Self { barrier_tol: T::lit(1e-9), max_sweeps: 2000, settle: 2 }
    }
}

/// `h(·, ·, anchor)` and `Φ(·, ·, anchor)` on the grid, indexed `[layer * nx + node]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct BarrierField<T: Real> {
    pub anchor: GridAnchor<T>,
    pub grid: GridSpec,
    pub h: Vec<T>,
    pub phi_pot: Vec<T>,
    pub c_used: T,
    pub window: usize,
    pub window_osc: T,
    pub sweeps: usize,
    pub osc_trace: Vec<T>,
}

impl<T: Real> BarrierField<T> {
    #[inline]
    pub fn h_at(&self, node: usize, layer: usize) -> T {
        self.h[layer * self.grid.nx + node]
    }

    #[inline]
    pub fn phi_at(&self, node: usize, layer: usize) -> T {
        self.phi_pot[layer * self.grid.nx + node]
    }

    /// `h` at the grid point nearest `(x, t)`, with the node offset in cells.
    pub fn h_near(&self, x: T, t: T) -> (T, T) {
        let (node, off) = self.grid.nearest_node(x);
        (self.h_at(node, self.grid.nearest_layer(t)), off)
    }

    pub fn h_min(&self) -> T {
        self.h.iter().copied().fold(T::infinity(), T::min)
    }

    /// Largest difference quotient of `h` between neighbouring nodes.
    pub fn lipschitz_x(&self) -> T {
        self.quotient_max(&self.h, false)
    }

    /// The same for `Φ`, skipping the two pairs that touch the anchor: off
    /// the Aubry set `Φ(z, z) = 0 < h(z, z)` and `Φ` jumps there.
    pub fn potential_lipschitz_x(&self) -> T {
        self.quotient_max(&self.phi_pot, true)
    }

    fn quotient_max(&self, f: &[T], skip_anchor: bool) -> T {
        let nx = self.grid.nx;
        let inv = T::from_usize_lossy(nx);
        let mut l = T::zero();
        for layer in 0..self.grid.nt {
            for a in 0..nx {
                let b = (a + 1) % nx;
                if skip_anchor && layer == self.anchor.layer && (a == self.anchor.node || b == self.anchor.node) {
                    continue;
                }
                l = l.max((f[layer * nx + b] - f[layer * nx + a]).abs() * inv);
            }
        }
        l
    }
}

fn osc<T: Real>(a: &[Option<T>], b: &[Option<T>]) -> T {
    a.iter().zip(b).fold(T::zero(), |acc, (x, y)| match (x, y) {
        (Some(x), Some(y)) => acc.max((*x - *y).abs()),
        (None, None) => acc,
        _ => T::infinity(),
    })
}

/// Backward value iteration from the indicator of `anchor`:
/// `u_τ(a) = min over arcs (cost + c·span/nt + u_{τ-span})`, grouped in
/// blocks of one period. `h` is the minimum over the trailing `window`
/// blocks once it stops moving; `Φ` is the minimum over every `τ ≥ 0`.
pub fn anchored_barrier<T: Real>(
    k: &ActionKernelSet<T>,
    c: T,
    anchor: GridAnchor<T>,
    window: usize,
    opts: &BarrierOptions<T>,
) -> Result<BarrierField<T>> {
    let grid = k.grid;
    let (nx, nt) = (grid.nx, grid.nt);
    if anchor.node >= nx || anchor.layer >= nt {
        return Err(Error::Config("barrier anchor outside the grid".into()));
    }
    let window = window.max(1);
    let nt_f = T::from_usize_lossy(nt);
    let max_span = (0..nt).flat_map(|j| k.shapes(j).iter().map(|a| a.span as usize)).max().unwrap_or(1);

    // ring[s] holds u_{τ-s}; index 0 is the newest.
    let mut ring: VecDeque<Vec<Option<T>>> = VecDeque::with_capacity(max_span + 1);
    let mut seed = vec![None; nx];
    seed[anchor.node] = Some(T::zero());
    ring.push_front(seed.clone());

    let cells = nx * nt;
    let mut phi: Vec<Option<T>> = vec![None; cells];
    phi[anchor.layer * nx + anchor.node] = Some(T::zero());
    let mut blocks: VecDeque<Vec<Option<T>>> = VecDeque::with_capacity(window + 1);
    let mut prev_wmin: Option<Vec<Option<T>>> = None;
    let mut trace = Vec::new();
    let mut settled = 0;

    for sweep in 1..=opts.max_sweeps {
        let mut block: Vec<Option<T>> = vec![None; cells];
        for step in 1..=nt {
            let tau = (sweep - 1) * nt + step;
            let layer = (anchor.layer + nt * tau - tau) % nt;
            let shapes = k.shapes(layer);
            let ring_ref = &ring;
            let row: Vec<Option<T>> = (0..nx)
                .into_par_iter()
                .map(|a| {
                    let costs = k.costs(layer, a);
                    let mut best: Option<T> = None;
                    for (arc, &cost) in shapes.iter().zip(costs) {
                        let s = arc.span as usize;
                        if s > tau {
                            continue;
                        }
                        if let Some(u) = ring_ref[s - 1][grid.wrap(a, arc.offset)] {
                            let v = cost + c * T::from_usize_lossy(s) / nt_f + u;
                            if best.map_or(true, |b| v < b) {
                                best = Some(v);
                            }
                        }
                    }
                    best
                })
                .collect();
            let base = layer * nx;
            for (a, v) in row.iter().enumerate() {
                if let Some(v) = *v {
                    block[base + a] = Some(v);
                    let p = &mut phi[base + a];
                    if p.map_or(true, |q| v < q) {
                        *p = Some(v);
                    }
                }
            }
            ring.push_front(row);
            if ring.len() > max_span {
                ring.pop_back();
            }
        }
        blocks.push_back(block);
        if blocks.len() > window {
            blocks.pop_front();
        }
        if blocks.len() < window {
            continue;
        }
        let wmin: Vec<Option<T>> = (0..cells)
            .map(|i| {
                blocks.iter().fold(None, |acc: Option<T>, b| match (acc, b[i]) {
                    (Some(x), Some(y)) => Some(x.min(y)),
                    (x, None) => x,
                    (None, y) => y,
                })
            })
            .collect();
        if let Some(prev) = &prev_wmin {
            let o = osc(&wmin, prev);
            trace.push(o);
            let complete = wmin.iter().all(Option::is_some);
            if complete && o <= opts.barrier_tol {
                settled += 1;
            } else {
                settled = 0;
            }
            if settled >= opts.settle {
                let h: Vec<T> = wmin.into_iter().map(|v| v.expect("complete")).collect();
                let phi_pot: Vec<T> = phi
                    .into_iter()
                    .map(|v| v.ok_or_else(|| Error::Config("action potential has unreached cells".into())))
                    .collect::<Result<_>>()?;
                return Ok(BarrierField {
                    anchor,
                    grid,
                    h,
                    phi_pot,
                    c_used: c,
                    window,
                    window_osc: o,
                    sweeps: sweep,
                    osc_trace: trace,
                });
            }
        }
        prev_wmin = Some(wmin);
    }
    let last = trace.last().copied().unwrap_or(T::infinity());
    Err(Error::Convergence {
        iterations: opts.max_sweeps,
        residual: last.to_f64_lossy(),
        history: trace.iter().map(|v| v.to_f64_lossy()).collect(),
    })
}

/// `h(x̄_i, x̄_j)` and `Φ(x̄_i, x̄_j)`: row `i` reads the field anchored at
/// `x̄_j` at the anchor of field `i`.
pub fn action_potential_pair<T: Real>(fields: &[BarrierField<T>]) -> Result<(Vec<Vec<T>>, Vec<Vec<T>>)> {
    for f in fields {
        if f.anchor.offset_cells.abs() > T::one() {
            return Err(Error::Config(format!(
                "anchor at x = {} is {} cells from the nearest node",
                f.anchor.x, f.anchor.offset_cells
            )));
        }
        if f.grid != fields[0].grid || f.c_used != fields[0].c_used {
            return Err(Error::Precondition("barrier fields must share kernels and c".into()));
        }
    }
    let m = fields.len();
    let mut h = vec![vec![T::zero(); m]; m];
    let mut phi = vec![vec![T::zero(); m]; m];
    for i in 0..m {
        let a = fields[i].anchor;
        for j in 0..m {
            h[i][j] = fields[j].h_at(a.node, a.layer);
            phi[i][j] = fields[j].phi_at(a.node, a.layer);
        }
    }
    Ok((h, phi))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{HamiltonianModel, PotentialSpec};
    use crate::variational::kernels::{build_kernels, KernelOptions};

    #[test]
    fn free_particle_barrier() {
        let m = HamiltonianModel::<f64>::mechanical(PotentialSpec::zero());
        let g = GridSpec::new(40, 8);
        let k = build_kernels(&m, g, &KernelOptions::default()).unwrap();
        let f = anchored_barrier(&k, 0.0, GridAnchor::node(g, 5, 0), 1, &BarrierOptions::default()).unwrap();
        // Moving costs at least the slowest grid velocity, so h > 0 off the anchor.
        assert_eq!(f.h_at(5, 0), 0.0);
        assert!(f.h_min() >= 0.0);
        assert!(f.h_at(25, 0) > 0.0);
        assert_eq!(f.phi_at(5, 0), 0.0);
        assert!(f.phi_pot.iter().zip(&f.h).all(|(p, h)| *p <= *h + 1e-12));
    }
}
