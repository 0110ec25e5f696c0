// `!(x > 0.0)` style checks are deliberate: they reject NaN as well.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod autodiff;
pub mod corpus;
pub mod dsw;
pub mod network;
pub mod topic_model;
pub mod training;
