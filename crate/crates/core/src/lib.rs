#![allow(clippy::needless_range_loop)]
// `!(x > 0.0)` is used on purpose so that NaN is rejected too
#![allow(clippy::neg_cmp_op_on_partial_ord)]
#![allow(clippy::manual_is_multiple_of)]

pub mod calculus;
pub mod cli;
pub mod error;
pub mod geometry;
pub mod numerics;
pub mod presets;
pub mod sphere_identities;
pub mod variation;

pub use error::{LabError, Result};
