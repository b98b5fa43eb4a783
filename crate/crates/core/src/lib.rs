//! Dynamic simulation and voltage-security margins for power systems.
//!
//! The crate computes two margins under the same stress rules: the
//! post-contingency loadability limit (PCLL), found by ramping load inside a
//! running post-contingency simulation, and the secure operating limit
//! (SOL), found by stressing the intact system and then simulating the
//! contingency from each stressed state.

// `!(x > 0.0)` is used on purpose so that NaN inputs fail validation
#![allow(clippy::neg_cmp_op_on_partial_ord)]
// index loops read closer to the matrix algebra they implement
#![allow(clippy::needless_range_loop)]

pub mod cases;
pub mod cli;
pub mod dynmodels;
pub mod error;
pub mod margins;
pub mod netmodel;
pub mod simulator;

pub use error::{Error, Result};
