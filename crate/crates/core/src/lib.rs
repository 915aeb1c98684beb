//! Sweeping processes driven by moving prox-regular sublevel sets
//! `Z(w) = {x : G(x, w) <= 1}`.
//!
//! The crate is `no_std` with `alloc`; file formats and the command line
//! live in the `proxsweep-cli` crate.

#![cfg_attr(not(test), no_std)]
// `!(x > 0.0)` is deliberate: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;

mod error;
pub mod certify;
pub mod constraint;
pub mod experiments;
pub mod explicit;
pub mod implicit;
pub mod library;
pub mod math;
pub mod paths;

pub use error::{Error, Result};
pub use constraint::{ConstantsBundle, LevelSet, LevelSetConstraint, ProjectionOptions};
pub use paths::{PLPath, TimeGrid, WeightProfile};
