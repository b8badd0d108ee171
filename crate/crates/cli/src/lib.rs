//! Batch front end for the `qoct` library.

pub mod config;
pub mod run;
