//! Command-line companion to `ergoline-core`: config loading, parallel path
//! execution and output formats.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod exec;
pub mod output;
pub mod run;
