//! Numerical laboratory for mean-field games driven by the Grushin
//! sub-Laplacian on the two-torus and for their master equation.

pub mod coupling;
pub mod diffusion;
pub mod dual_norm;
pub mod error;
pub mod field;
pub mod grid;
pub mod heisenberg;
pub mod hjb;
pub mod holder;
pub mod kfp;
pub mod linearized;
pub mod master;
pub mod metric;
pub mod mfg;
pub mod ops;
pub mod stats;
pub mod verify;

pub use error::{Error, Result};
pub use field::{ScalarField, SpaceTimeField};
pub use grid::{Profile, TorusGrid};
pub use holder::{holder_norm, HolderReport};
