//! Wavelet-multiresolution solver for Wigner-function dynamics.
//!
//! The crate evolves real phase-space quasi-distributions W(q, p) of
//! one-dimensional quantum systems with polynomial potentials, including
//! friction/diffusion decoherence terms, on dyadic grids. Spatial
//! derivatives are represented in a compactly supported orthonormal
//! wavelet basis through the nonstandard operator form, which keeps the
//! per-level blocks banded and supports sparse thresholded application.
//!
//! Module map:
//! - [`wavelet`]: filter generation, scaling-function evaluation,
//!   derivative stencils (connection coefficients).
//! - [`mra`]: fast wavelet transform, level projections, and the
//!   nonstandard operator representation.
//! - [`phase_space`]: Wigner states on dyadic grids, the Weyl transform,
//!   and diagnostics (marginals, moments, purity, negativity).
//! - [`moyal`]: assembly of the evolution operator (transport, the exact
//!   finite hbar-series for polynomial potentials, friction/diffusion).
//! - [`ensemble`]: weighted mixtures of partial Wigner functions.
//! - [`evolve`]: explicit RK4 integration and level-adaptive resolution
//!   sweeps.
//! - [`oracle`]: independent reference solvers (dense finite differences,
//!   closed moment ODEs) used for cross-validation.
//! - [`config`], [`snapshot`], [`cli`]: run configuration, plain-text
//!   state serialization, and the command-line driver.

pub mod cli;
pub mod config;
pub mod ensemble;
pub mod error;
pub mod evolve;
pub mod moyal;
pub mod mra;
pub mod oracle;
pub mod phase_space;
pub mod snapshot;
pub mod util;
pub mod wavelet;

pub use error::{EnsembleError, MraError, PhaseSpaceError, SolverError, WaveletError};
pub use wavelet::{connection_coefficients, daubechies_filters, DerivativeStencil, FilterPair};
