#![allow(clippy::neg_cmp_op_on_partial_ord)]

//! Light and dark periods of a single V atom under repeated probe pulses.
pub mod analytics;
pub mod bloch;
pub mod error;
pub mod ideal;
pub mod jump;
pub mod periods;
pub mod quantum;
pub mod verify;

pub use error::{Error, Result};
