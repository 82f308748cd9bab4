//! Training under label noise with confidence-adaptive losses.
//!
//! The crate is organised bottom-up:
//!
//! - [`numerics`]: dense matrices, activations, seeded randomness.
//! - [`data`]: synthetic generators, IDX/CSV ingestion, label-noise injection.
//! - [`losses`]: CE, CACE, penalty, reverse CACE, CAL, CAR and symmetric
//!   baselines, each with analytic gradients.
//! - [`model`]: a two-branch MLP (prediction head plus confidence head) with
//!   manual backpropagation; [`checkpoint`] serializes it.
//! - [`training`]: SGD with momentum, cosine restarts, target estimation.
//! - [`diagnostics`]: memorization fractions, confidence statistics, label
//!   correction metrics.
//! - [`theory`]: exhaustive risk minimization on toy distributions that checks
//!   the noise-tolerance bounds of the reverse term.
//! - [`gradcheck`]: randomized finite-difference and closed-form suites.
//! - [`config`] and [`run`]: JSON run configuration and orchestration used by
//!   the command-line tool.

pub mod checkpoint;
pub mod config;
pub mod data;
pub mod diagnostics;
pub mod error;
pub mod gradcheck;
pub mod losses;
pub mod model;
pub mod numerics;
pub mod run;
pub mod theory;
pub mod training;

pub use error::{Error, Result};
pub use numerics::{Matrix, SeededRng};
