//! Classification of expansive dilation matrices up to equivalence and
//! coarse equivalence of their homogeneous quasi-norms.
//!
//! Two expansive matrices induce the same homogeneous anisotropic Besov
//! (and Hardy) scale iff they are equivalent, and the same inhomogeneous
//! Besov scale iff their transposes are coarsely equivalent. Both relations
//! are decided exactly through the expansive normal form and cross-checked
//! against numeric oracles: power-product probes, generalized eigenspaces,
//! step quasi-norms and induced frequency coverings.

pub mod config;
pub mod coverings;
pub mod equivalence;
pub mod error;
pub mod linalg;
pub mod quasinorm;
pub mod report;
pub mod spectral;

pub use config::Tolerances;
pub use error::{Error, Result};
