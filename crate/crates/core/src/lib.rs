//! Multiscale solvers for Signorini contact problems with high-contrast
//! coefficients.

pub mod assembly;
pub mod auxspace;
pub mod cembasis;
pub mod contact;
pub mod error;
pub mod experiment;
pub mod grid;
pub mod medium;
pub mod metrics;
pub mod numkernel;
pub mod oracle;
pub mod source;
pub mod sparse;

pub use error::{Error, Result};
pub use grid::{BoundaryDecomposition, BoundaryLabel, BoundarySpec, GridHierarchy, OversampleDomain, Side};
