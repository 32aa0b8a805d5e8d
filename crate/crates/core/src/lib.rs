// `!(x > 0.0)` checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod capture;
pub mod cli;
pub mod error;
pub mod fusion;
pub mod harness;
pub mod mmpp;
pub mod mvl;
pub mod rng;
pub mod traffic;
