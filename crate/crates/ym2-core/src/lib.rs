//! White-noise holonomy of two-dimensional Yang-Mills theory.
//!
//! The crate samples Lie-algebra valued white noise on a grid, integrates the
//! stochastic parallel transport along staircase paths, and checks the loop
//! equations and their supporting identities against closed-form values.

pub mod error;
pub mod graph;
pub mod harness;
pub mod lie;
pub mod linalg;
pub mod noise;
pub mod rng;
pub mod smooth;
pub mod stats;
pub mod transport;
pub mod verify;

pub use error::{Error, Result};
pub use lie::{AlgebraElement, GroupContext, GroupElement, GroupKind};
pub use linalg::{CMat, C64};
