//! Critical value as minus the minimum cycle mean of the one-period
//! min-plus operator.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::kernels::ActionKernelSet;
use crate::error::{Error, Result};
use crate::scalar::Real;

#[inline]
fn relax<T: Real>(best: &mut Option<T>, cand: T) {
    match best {
        Some(b) if *b <= cand => {}
        _ => *best = Some(cand),
    }
}

/// Backward min-plus application over one period: `out(a)` is the least
/// cost of a path from `(a, 0)` to `(b, nt)` plus `terminal(b)` plus
/// `shift` per unit time.
pub fn period_pull<T: Real>(k: &ActionKernelSet<T>, terminal: &[Option<T>], shift: T) -> Vec<Option<T>> {
    let (nx, nt) = (k.grid.nx, k.grid.nt);
    let mut layers: Vec<Vec<Option<T>>> = vec![Vec::new(); nt + 1];
    layers[nt] = terminal.to_vec();
    let per_sub = shift / T::from_usize_lossy(nt);
    for j in (0..nt).rev() {
        let shapes = k.shapes(j);
        let row: Vec<Option<T>> = (0..nx)
            .into_par_iter()
            .map(|a| {
                let costs = k.costs(j, a);
                let mut best = None;
                for (arc, &c) in shapes.iter().zip(costs) {
                    let tgt = &layers[j + arc.span as usize];
                    if let Some(u) = tgt[k.grid.wrap(a, arc.offset)] {
                        relax(&mut best, c + per_sub * T::lit(arc.span as f64) + u);
                    }
                }
                best
            })
            .collect();
        layers[j] = row;
    }
    layers.swap_remove(0)
}

/// Dense one-period transfer matrix `A[a][b]` (row-major, `None` when no
/// path exists).
pub fn compose_period<T: Real>(k: &ActionKernelSet<T>) -> Vec<Option<T>> {
    let (nx, nt) = (k.grid.nx, k.grid.nt);
    let rows: Vec<Vec<Option<T>>> = (0..nx)
        .into_par_iter()
        .map(|src| {
            let mut layers: Vec<Vec<Option<T>>> = vec![vec![None; nx]; nt + 1];
            layers[0][src] = Some(T::zero());
            for j in 0..nt {
                let shapes = k.shapes(j);
                for a in 0..nx {
                    let Some(d) = layers[j][a] else { continue };
                    for (arc, &c) in shapes.iter().zip(k.costs(j, a)) {
                        let b = k.grid.wrap(a, arc.offset);
                        relax(&mut layers[j + arc.span as usize][b], d + c);
                    }
                }
            }
            layers.swap_remove(nt)
        })
        .collect();
    rows.into_iter().flatten().collect()
}

/// Karp's minimum cycle mean of a dense `n × n` weighted digraph.
pub fn karp_min_mean<T: Real>(n: usize, w: &[Option<T>]) -> Option<T> {
    // d[k][v]: least weight of a k-arc walk ending at v from any start.
    let mut d: Vec<Vec<Option<T>>> = Vec::with_capacity(n + 1);
    d.push(vec![Some(T::zero()); n]);
    for k in 1..=n {
        let prev = &d[k - 1];
        let next: Vec<Option<T>> = (0..n)
            .into_par_iter()
            .map(|v| {
                let mut best = None;
                for u in 0..n {
                    if let (Some(a), Some(c)) = (prev[u], w[u * n + v]) {
                        relax(&mut best, a + c);
                    }
                }
                best
            })
            .collect();
        d.push(next);
    }
    let mut out: Option<T> = None;
    for v in 0..n {
        let Some(dn) = d[n][v] else { continue };
        let mut worst: Option<T> = None;
        for k in 0..n {
            if let Some(dk) = d[k][v] {
                let m = (dn - dk) / T::from_usize_lossy(n - k);
                if worst.map_or(true, |w| m > w) {
                    worst = Some(m);
                }
            }
        }
        if let Some(m) = worst {
            relax(&mut out, m);
        }
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct PowerOptions<T: Real> {
    pub tol: T,
    /// A bracket no wider than this that has stopped shrinking for `nx + 1`
    /// periods is accepted. Near-tied cycles spanning several periods can
    /// leave a plateau just above `tol`.
    pub stall_tol: T,
    pub max_periods: usize,
}

impl<T: Real> Default for PowerOptions<T> {
    fn default() -> Self {
        Self { tol: T::lit(1e-10), stall_tol: T::lit(1e-8), max_periods: 4000 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct PowerEstimate<T: Real> {
    /// Bracket on the minimum cycle mean per period.
    pub lo: T,
    pub hi: T,
    pub periods: usize,
}

/// Min-plus power iteration with the bracket
/// `max_q min_a (u_n - u_{n-q})/q ≤ μ ≤ min_q max_a (u_n - u_{n-q})/q`.
pub fn power_min_mean<T: Real>(k: &ActionKernelSet<T>, opts: &PowerOptions<T>) -> Result<PowerEstimate<T>> {
    let nx = k.grid.nx;
    // Normalized iterates and their cumulative offsets.
    let mut hist: Vec<(Vec<T>, T)> = vec![(vec![T::zero(); nx], T::zero())];
    let mut best = (T::neg_infinity(), T::infinity());
    let mut last_gain = 0;
    for n in 1..=opts.max_periods {
        let before = best;
        let (prev, off) = hist.last().expect("nonempty");
        let term: Vec<Option<T>> = prev.iter().map(|&v| Some(v)).collect();
        let raw = period_pull(k, &term, T::zero());
        if raw.iter().any(Option::is_none) {
            return Err(Error::Config("kernel graph is not strongly connected over one period".into()));
        }
        let raw: Vec<T> = raw.into_iter().map(|v| v.expect("checked")).collect();
        let m = raw.iter().copied().fold(T::infinity(), T::min);
        let off = *off + m;
        hist.push((raw.into_iter().map(|v| v - m).collect(), off));
        let (cur, cur_off) = hist.last().expect("nonempty");
        // hist[i] holds iterate `first + i`.
        let first = n + 1 - hist.len();
        for q in 1..=n.min(nx) {
            let (old, old_off) = &hist[n - q - first];
            let qf = T::from_usize_lossy(q);
            let mut lo = T::infinity();
            let mut hi = T::neg_infinity();
            for (a, b) in cur.iter().zip(old) {
                let d = (*a + *cur_off - *b - *old_off) / qf;
                lo = lo.min(d);
                hi = hi.max(d);
            }
            best.0 = best.0.max(lo);
            best.1 = best.1.min(hi);
        }
        if best != before {
            last_gain = n;
        }
        let width = best.1 - best.0;
        if width <= opts.tol || (width <= opts.stall_tol && n - last_gain > nx) {
            return Ok(PowerEstimate { lo: best.0, hi: best.1, periods: n });
        }
        // Only the last nx iterates are ever compared.
        if hist.len() > nx + 1 {
            hist.remove(0);
        }
    }
    Err(Error::Convergence {
        iterations: opts.max_periods,
        residual: (best.1 - best.0).to_f64_lossy(),
        history: vec![best.0.to_f64_lossy(), best.1.to_f64_lossy()],
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct CriticalValue<T: Real> {
    pub c: T,
    pub karp: Option<T>,
    pub power: T,
    pub power_bracket: (T, T),
    pub power_periods: usize,
}

/// `c = -(minimum cycle mean)` by Karp on the composed period matrix and by
/// power iteration; Karp's value must lie inside the power bracket.
pub fn critical_value<T: Real>(k: &ActionKernelSet<T>) -> Result<CriticalValue<T>> {
    let a = compose_period(k);
    let karp = karp_min_mean(k.grid.nx, &a)
        .ok_or_else(|| Error::Config("kernel graph has no cycle".into()))?;
    let slack = T::lit(1e-12) * (T::one() + karp.abs());
    let inside = |lo: T, hi: T| lo - slack <= karp && karp <= hi + slack;
    let pw = match power_min_mean(k, &PowerOptions::default()) {
        Ok(pw) => pw,
        // Near-tied cycles make the transient arbitrarily long; a bracket
        // that still holds Karp's value is kept and its width reported.
        Err(Error::Convergence { iterations, history, .. })
            if history.len() == 2 && inside(T::lit(history[0]), T::lit(history[1])) =>
        {
            PowerEstimate { lo: T::lit(history[0]), hi: T::lit(history[1]), periods: iterations }
        }
        Err(e) => return Err(e),
    };
    let power = (pw.lo + pw.hi) / T::lit(2.0);
    if !inside(pw.lo, pw.hi) {
        return Err(Error::NumericalQuality(format!(
            "Karp ({karp}) lies outside the power bracket [{}, {}]", pw.lo, pw.hi
        )));
    }
    // Adding zero turns -0.0 into 0.0.
    let (karp, power) = (T::zero() - karp, T::zero() - power);
    Ok(CriticalValue { c: karp, karp: Some(karp), power, power_bracket: (T::zero() - pw.hi, T::zero() - pw.lo), power_periods: pw.periods })
}

/// Power iteration only; for grids where the dense composition is too costly.
pub fn critical_value_power<T: Real>(k: &ActionKernelSet<T>, opts: &PowerOptions<T>) -> Result<CriticalValue<T>> {
    let pw = power_min_mean(k, opts)?;
    let power = T::zero() - (pw.lo + pw.hi) / T::lit(2.0);
    Ok(CriticalValue { c: power, karp: None, power, power_bracket: (T::zero() - pw.hi, T::zero() - pw.lo), power_periods: pw.periods })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn karp_small_graph() {
        // Cycles 0->1->0 (mean 1.5) and the self loop at 2 (mean 0.5).
        let n = 3;
        let mut w = vec![None; 9];
        w[1] = Some(1.0);
        w[3] = Some(2.0);
        w[5] = Some(4.0);
        w[8] = Some(0.5);
        assert_eq!(karp_min_mean::<f64>(n, &w), Some(0.5));
        w[8] = Some(3.0);
        assert_eq!(karp_min_mean::<f64>(n, &w), Some(1.5));
    }

    #[test]
    fn karp_negative_cycle() {
        let w = vec![Some(5.0), Some(-1.0), Some(-2.0), Some(5.0)];
        assert_eq!(karp_min_mean::<f64>(2, &w), Some(-1.5));
    }

    #[test]
    fn slow_power_iteration_matches_karp() {
        use crate::model::{HamiltonianModel, PotentialSpec};
        use crate::variational::{build_kernels, GridSpec, KernelOptions};
        // The minimizing cycle winds over several periods, so the bracket
        // only closes after more than nx iterates.
        let v = PotentialSpec::from_terms(&[(9, 0.0, -0.3)]);
        let m = HamiltonianModel::<f64>::traveling_wave(v, 3);
        let k = build_kernels(&m, GridSpec::new(32, 8), &KernelOptions::default()).unwrap();
        let pw = power_min_mean(&k, &PowerOptions::default()).unwrap();
        let karp = karp_min_mean(32, &compose_period(&k)).unwrap();
        assert!(pw.periods > 33, "converged after {} periods", pw.periods);
        assert!(pw.lo <= karp + 1e-9 && karp <= pw.hi + 1e-9, "{karp} outside [{}, {}]", pw.lo, pw.hi);
    }

    #[test]
    fn near_tied_cycles_keep_the_bracket() {
        use crate::model::{HamiltonianModel, PotentialSpec};
        use crate::variational::{build_kernels, GridSpec, KernelOptions};
        // Three maxima that the grid samples almost but not exactly alike.
        let v = PotentialSpec::from_terms(&[(3, 0.3312125801506586, -0.27183131955548895)]);
        let m = HamiltonianModel::<f64>::mechanical(v);
        let k = build_kernels(&m, GridSpec::new(32, 8), &KernelOptions::default()).unwrap();
        assert!(power_min_mean(&k, &PowerOptions::default()).is_err());
        let cv = critical_value(&k).unwrap();
        let (lo, hi) = cv.power_bracket;
        assert!(lo - 1e-12 <= cv.c && cv.c <= hi + 1e-12);
        assert!(hi - lo < 1e-5);
    }
}
