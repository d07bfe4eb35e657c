//! DC traction power system model, false-data-injection attack synthesis
//! and detection.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod attack;
pub mod detection;
pub mod model;
pub mod optim;
pub mod powerflow;
pub mod sim;
