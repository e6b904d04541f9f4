//! Latency laboratory for distributed storage with availability codes.
//!
//! Each object lives on a systematic server and can also be rebuilt from any
//! of `t` disjoint recovery groups of `r` servers. Requests are forked to the
//! systematic server and to every server of every recovery group, and finish
//! as soon as one route completes. The crate provides
//!
//! * storage layouts for Simplex, replication, and LRC codes ([`layout`]),
//! * exact order-statistic distributions and moments ([`dist`]),
//! * closed-form low-traffic download times ([`lowtraffic`]),
//! * queuing-regime bounds and M/G/1 approximations ([`bounds`]),
//! * a matrix-analytic solver for the smallest availability code ([`qbd`]),
//! * a discrete-event fork-join simulator ([`sim`]),
//! * experiment drivers that emit CSV ([`experiments`]).
//!
//! Parameter sweeps and simulation replications run on rayon when the
//! `parallel` feature is enabled (default) and sequentially otherwise.

#![allow(clippy::neg_cmp_op_on_partial_ord)]
pub mod bounds;
pub mod dist;
pub mod error;
pub mod experiments;
pub mod layout;
pub mod linalg;
pub mod lowtraffic;
pub mod par;
pub mod qbd;
pub mod sim;
pub mod stats;

pub use error::{Error, Result};
