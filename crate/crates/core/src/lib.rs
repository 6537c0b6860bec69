//! Particle solver for minimum-dispersion control of nonlinear SDEs.
//!
//! The controlled diffusion `dX = f_t(X, w) dt + σ_t(X) dW` is driven by a
//! Markovian control of fixed structure `w(t, x) = Σ_j ξ_j(x) u_j(t)`, where
//! only the time-dependent coefficients `u_j` are learned. Each descent step
//! estimates the gradient of the backward Kolmogorov solution by Monte-Carlo
//! (Feynman–Kac), and synthesizes a new piecewise-constant coefficient signal
//! knot by knot from the minimizer of the averaged Hamiltonian.
//!
//! Module map:
//! - [`sde`]: states, time grids, models, Euler–Maruyama integration, ensembles
//! - [`noise`]: keyed, reproducible Gaussian increment streams
//! - [`costs`]: terminal costs and dispersion functionals
//! - [`adjoint`]: Feynman–Kac value/gradient estimators and duality diagnostics
//! - [`hamiltonian`]: contracted Hamiltonian and its control minimizer
//! - [`descent`]: knot-by-knot synthesis and the outer descent loop
//! - [`models`]: theta neuron benchmark and analytic oracle models

pub mod adjoint;
pub mod costs;
pub mod descent;
mod error;
pub mod hamiltonian;
pub mod models;
pub mod noise;
pub mod sde;
pub mod stats;

pub use error::{Error, Result};
