//! Sound speed profile inversion from multibeam echo sounder travel times.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod alphasel;
pub mod eof;
pub mod error;
pub mod forward;
pub mod profiles;
pub mod invert;
pub mod synth;

pub use error::{Error, Result};
