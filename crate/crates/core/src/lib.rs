//! Kernel learning for kernel extended dynamic mode decomposition.
//!
//! A [`WeightedKernelSum`] defines the dictionary, [`koopman`] fits the
//! finite-dimensional operator and its spectrum, [`losses`] scores a kernel
//! with analytic gradients and [`trainer`] learns kernel parameters by
//! stochastic gradient descent.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod equivalence;
pub mod error;
pub mod io;
pub mod kernel;
pub mod koopman;
pub mod linalg;
pub mod losses;
pub mod run;
pub mod systems;
pub mod trainer;

pub use error::{Error, Result};
pub use kernel::{KernelKind, ParamGradient, PrimitiveKernel, PrunePolicy, WeightedKernelSum};
pub use koopman::{
    fit_sk, fit_tr, EigenpairReport, KoopmanModel, MapDirection, PredictMethod, ResidualForms, SnapshotSet,
};
pub use linalg::Spectrum;

pub use faer::{c64, Mat, MatRef};
