pub mod advise;
pub mod belief;
pub mod calibration;
pub mod config;
pub mod error;
pub mod model;
pub mod pomcp;
pub mod run;
pub mod sampling;
pub mod service;

pub use error::{Error, Result};
