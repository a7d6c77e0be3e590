//! Discrete-event simulation of quantum secure communication networks.
//!
//! Classical traffic between every pair of nodes is one-time-pad encrypted
//! hop by hop across trusted relays. Each hop consumes key bits from the
//! link's key pool, which QKD devices refill at a constant secure key rate.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod qkd_rate;
pub mod network;
pub mod routing;
pub mod traffic;
pub mod units;
pub mod engine;
pub mod metrics;
pub mod scenario;
pub mod trace;
