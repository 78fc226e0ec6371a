//! Configuration-driven experiment runner for the rectified-flow steering
//! lab. The binary is a thin argument parser over [`runner::run_file`].

pub mod compare;
pub mod config;
pub mod datasetgen;
pub mod output;
pub mod presets;
pub mod runner;
pub mod theory;
