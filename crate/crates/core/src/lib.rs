//! Weak-KAM numerics for space-time periodic Hamilton-Jacobi equations on
//! the circle: critical values, Peierls barriers, hyperbolic Aubry orbits,
//! barrier Hessians along them, viscous cell problems, and Monte Carlo
//! checks of the stochastic control picture.
//!
//! Every numerical routine is generic over [`Real`] (`f32` or `f64`); the
//! aliases below fix `f64`.

pub mod dynamics;
pub mod error;
pub mod linalg;
pub mod model;
pub mod orbit_hessian;
pub mod scalar;
pub mod stochastic;
pub mod variational;
pub mod viscous;
pub mod vv_analysis;

pub use error::{Error, Result};
pub use scalar::Real;

pub type Model = model::HamiltonianModel<f64>;
pub type Potential = model::PotentialSpec<f64>;
pub type Orbit = dynamics::PeriodicOrbit<f64>;
