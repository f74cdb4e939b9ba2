pub mod cli;
pub mod corpus;
pub mod error;
pub mod features;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod numerics;
pub mod params;
pub mod rng;
pub mod ssm;
pub mod trainer;

pub use error::{Error, Result};
