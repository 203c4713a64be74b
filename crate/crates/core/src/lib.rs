//! Behavioral simulation of passive analog memristor crossbars.

pub mod characterization;
pub mod cli;
pub mod crossbar;
pub mod device;
pub mod error;
pub mod io;
pub mod perceptron;
pub mod seed;
pub mod stats;
pub mod tuning;

pub use error::{Error, Result};
