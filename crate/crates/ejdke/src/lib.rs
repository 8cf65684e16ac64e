//! Simulation and nonparametric estimation toolkit for the invariant density
//! of ergodic jump diffusions: Euler-scheme trajectory generation with
//! truncated Levy jumps, anisotropic kernel density estimators with
//! vanishing-moment kernels, Goldenshluger-Lepski bandwidth selection, and
//! Monte Carlo harnesses that verify variance scaling and convergence rates
//! empirically.

pub mod adaptive;
pub mod estimator;
pub mod kernel;
pub(crate) mod linalg;
pub mod model;
pub mod quad;
pub mod rates;
pub mod reference;
pub mod rngstream;
pub mod simulate;
