#![allow(clippy::neg_cmp_op_on_partial_ord)]
pub mod accel;
pub mod batchtile;
pub mod cache;
pub mod cli;
pub mod costmodel;
pub mod csq;
pub mod error;
pub mod hwsearch;
pub mod joint;
pub mod workload;
