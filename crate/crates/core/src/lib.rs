// Negated comparisons are how validation rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod geometry;
pub mod par;
pub mod seed;
pub mod triangulation;
pub mod hand;
pub mod dataset;
pub mod policy;
pub mod simulator;
