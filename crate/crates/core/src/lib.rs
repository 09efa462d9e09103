//! Stochastic particle approximation of the spatially homogeneous Landau
//! equation, with analytic checks of entropy and Fisher dissipation.
//!
//! The crate is organised around a small set of modules:
//!
//! * [`kernels`]: regularised collision kernels `a^eps`, `A`, `B`, `sqrt(A)`.
//! * [`densities`]: Gaussian mixtures on `R^{3N}` with analytic derivatives.
//! * [`dissipation`]: Gateaux derivatives of entropy and Fisher information.
//! * [`simulator`]: Euler-Maruyama integration of the Kac-style particle SDE.
//! * [`estimators`]: entropy, Fisher, chaos and hierarchy-residual estimators.
//! * [`oracles`]: closed-form references used to validate the simulator.

pub mod densities;
pub mod dissipation;
pub mod error;
pub mod estimators;
pub mod kernels;
pub mod oracles;
pub mod rng;
pub mod simulator;
pub mod stats;

pub use error::{Error, Result};

/// Three-vector used for particle velocities.
pub type Vec3 = nalgebra::Vector3<f64>;
/// Three-by-three matrix used for kernel values.
pub type Mat3 = nalgebra::Matrix3<f64>;
