pub mod config;
pub mod datagen;
pub mod error;
pub mod grid;
pub mod io;
pub mod model;
pub mod nn;
pub mod pod;
pub mod report;
pub mod rollout;
pub mod training;

pub use error::{Error, Result};
