pub mod checks;
pub mod config;
pub mod error;
pub mod fbm;
pub mod fraccalc;
pub mod harness;
pub mod models;
pub mod quad;
pub mod run;
pub mod weights;

pub use error::{Error, Result};
