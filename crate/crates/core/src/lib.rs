// `!(x > 0.0)` is used on purpose so NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod config;
pub mod control;
pub mod device;
pub mod impedance;
pub mod kinematics;
pub mod linalg;
pub mod patterns;
pub mod protocol;
pub mod trace;
