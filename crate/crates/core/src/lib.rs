//! Discrete-time simulator and analysis toolkit for self-configuring systems
//! built from a pattern storage, a configurator and a configurable plant,
//! connected by bandwidth-limited channels.

// NaN must fail every range check, so negated comparisons are intended.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bits;
pub mod channels;
pub mod configspace;
pub mod controller;
pub mod engine;
pub mod omega;
pub mod plant;
pub mod storage;
