//! Deviance matrix factorization: low-rank exponential-family models for
//! matrices, with goodness-of-fit testing and rank selection.

pub mod canonical;
pub mod cli;
pub mod engine;
pub mod error;
pub mod family;
pub mod gof;
pub mod io;
pub mod rank;
pub mod simlab;

pub use canonical::{center, identify, CanonicalFit, CenteredFit};
pub use engine::{dmf_fit, DataMatrix, Fitter, ModelSpec, RawFit};
pub use error::{DmfError, Result};
pub use family::{Family, FamilyKind, Link, MeanMap};
pub use gof::{ghl_test, GhlOptions, GofReport};
pub use rank::{eigen_profile, estimate_rank, ProfileMode, RankReport};
