//! Pseudorandom generators that fool Fourier shapes, with applications and
//! an exact-oracle verification harness.

// Negated float comparisons reject NaN along with out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod apps;
pub mod bits;
pub mod cli;
pub mod compose;
pub mod config;
pub mod error;
pub mod families;
pub mod field;
pub mod harness;
pub mod highvar;
pub mod metrics;
pub mod prg;
pub mod reduce;
pub mod robp;
pub mod shapes;

pub use error::{Error, Result};
