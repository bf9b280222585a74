//! Joint factor analysis and exponential Cox proportional hazards with
//! informative censoring.
//!
//! A low-dimensional Gaussian latent vector drives several covariate blocks
//! (normal, binomial or multinomial) and two exponential hazards, one for the
//! event of interest and one for censoring. The crate provides:
//!
//! - [`data`]: datasets, file ingestion, preprocessing filters, splits
//! - [`ecph`]: the exponential hazards model on observed covariates, with an
//!   optional L1 penalty
//! - [`fa`]: mixed-datatype factor analysis with variational bounds for the
//!   count blocks
//! - [`joint`]: the joint model fitted by Monte-Carlo EM, the fast decoupled
//!   approximation, and survival prediction
//! - [`eval`]: the tie-aware concordance index, cross-validation and model
//!   selection
//! - [`sim`]: generative simulation from the joint model

pub mod data;
pub mod ecph;
pub mod error;
pub mod eval;
pub mod fa;
pub mod joint;
pub mod linalg;
pub mod model_io;
pub mod rng;
pub mod serde_util;
pub mod sim;

pub use error::{Error, Result};
