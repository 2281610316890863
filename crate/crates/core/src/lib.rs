//! Point-source diffusion solves, internal-data reconstruction and
//! unique-continuation diagnostics on uniform 3-D grids.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod elliptic;
pub mod error;
pub mod experiment;
pub mod inverse;
pub mod mesh;
pub mod par;
pub mod plot;
pub mod regress;
pub mod specfun;
pub mod stability;
pub mod ucp;

pub use error::{Error, Result};
