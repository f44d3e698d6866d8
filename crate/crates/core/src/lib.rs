//! Transfer-operator laboratory for Hamiltonian Monte Carlo.
//!
//! One HMC step without Metropolis correction maps a position density `h` to
//! `𝒯h(q) = ∫ h(Q) ḡ(P) dp` with `(Q, P) = H_t(q, p)`. This crate discretizes
//! `𝒯` on a grid, integrates the flow and its tangent, tabulates the kernel
//! `K(q, Q)`, and measures fixed points, spectra and convergence rates.
//!
//! ```
//! use hmc_transfer::distributions::ModelPair;
//! use hmc_transfer::dynamics::FlowSpec;
//! use hmc_transfer::operator::build_grid;
//! use hmc_transfer::spectral::{assemble_kernel, eigen_spectrum};
//!
//! let model = ModelPair::standard_gaussian(1, 8.0)?;
//! let grid = build_grid(&model, 201)?;
//! let spec = FlowSpec::exact(0.7)?;
//! let t = assemble_kernel(&grid, &model, &spec)?.to_transfer(&grid)?;
//! let report = eigen_spectrum(&t, &grid, 4)?;
//! assert!((report.eigenvalues[1] - 0.7f64.cos()).abs() < 1e-6);
//! # Ok::<(), hmc_transfer::Error>(())
//! ```

pub mod distributions;
pub mod dynamics;
pub mod error;
pub mod experiment;
pub mod operator;
mod parallel;
pub mod quadrature;
pub mod sampler;
pub mod spectral;
pub mod tangent;

pub use error::{Error, Result};
pub use parallel::configure_threads;
