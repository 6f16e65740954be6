//! Discrete Lax-Oleinik machinery: substep action kernels, the critical
//! value as a minimum cycle mean, anchored Peierls barriers and action
//! potentials, and the barrier test for Aubry candidates.

pub mod barrier;
pub mod critical;
pub mod kernels;

pub use barrier::{action_potential_pair, anchored_barrier, BarrierField, BarrierOptions, GridAnchor};
pub use critical::{critical_value, critical_value_power, CriticalValue, PowerOptions};
pub use kernels::{build_kernels, ActionKernelSet, GridSpec, KernelOptions};

use serde::{Deserialize, Serialize};

use crate::dynamics::PeriodicOrbit;
use crate::error::{Error, Result};
use crate::scalar::Real;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct AubryCheck<T: Real> {
    pub residual: T,
    pub pass: bool,
}

/// Largest value of `h(·, ·, x̄_i)` along the orbit's own trace, sampled at
/// every grid layer over its period.
pub fn orbit_trace_residual<T: Real>(field: &BarrierField<T>, orbit: &PeriodicOrbit<T>) -> T {
    let nt = field.grid.nt;
    let layers = nt * orbit.period as usize;
    (0..=layers)
        .map(|l| {
            let t = T::from_usize_lossy(l) / T::from_usize_lossy(nt);
            let x = orbit.position_at(t);
            field.h_near(x, t).0
        })
        .fold(T::neg_infinity(), T::max)
}

/// Diagonal test `h(x, [t], x̄_i) ≈ 0` along each candidate orbit.
pub fn aubry_verify<T: Real>(fields: &[BarrierField<T>], orbits: &[PeriodicOrbit<T>], aubry_tol: T) -> Vec<AubryCheck<T>> {
    fields
        .iter()
        .zip(orbits)
        .map(|(f, o)| {
            let residual = orbit_trace_residual(f, o);
            AubryCheck { residual, pass: residual <= aubry_tol }
        })
        .collect()
}

/// Orbits confirmed by the barrier test, with their anchored fields.
#[derive(Clone, Debug)]
pub struct ConfirmedOrbits<T: Real> {
    pub orbits: Vec<PeriodicOrbit<T>>,
    pub fields: Vec<BarrierField<T>>,
    pub checks: Vec<AubryCheck<T>>,
    /// Diagnostics for rejected candidates.
    pub rejected: Vec<String>,
    pub window: usize,
}

/// Builds an anchored barrier per candidate (window = lcm of the candidate
/// periods) and keeps the candidates that pass [`aubry_verify`].
pub fn confirm_aubry<T: Real>(
    kernels: &ActionKernelSet<T>,
    c: T,
    candidates: Vec<PeriodicOrbit<T>>,
    aubry_tol: T,
    opts: &BarrierOptions<T>,
) -> Result<ConfirmedOrbits<T>> {
    let window = crate::dynamics::period_lcm(&candidates) as usize;
    let mut out = ConfirmedOrbits { orbits: vec![], fields: vec![], checks: vec![], rejected: vec![], window };
    for o in candidates {
        let anchor = GridAnchor::at(kernels.grid, o.anchor.x, T::zero());
        let field = anchored_barrier(kernels, c, anchor, window, opts)?;
        let check = aubry_verify(std::slice::from_ref(&field), std::slice::from_ref(&o), aubry_tol).remove(0);
        if check.pass {
            out.orbits.push(o);
            out.fields.push(field);
            out.checks.push(check);
        } else {
            out.rejected.push(format!(
                "orbit at x = {} rejected: diagonal residual {} > {}",
                o.anchor.x, check.residual, aubry_tol
            ));
        }
    }
    if out.orbits.is_empty() {
        return Err(Error::Empty(format!("no Aubry candidate passed the barrier test: {:?}", out.rejected)));
    }
    Ok(out)
}
