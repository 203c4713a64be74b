//! File formats and experiment plumbing: configuration, datasets, target
//! patterns and result bundles.

pub mod config;
pub mod mnist;
pub mod pgm;
pub mod results;
