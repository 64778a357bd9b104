pub mod autodiff;
pub mod cli;
pub mod config;
pub mod error;
pub mod eval;
pub mod gradcheck;
pub mod models;
pub mod rng;
pub mod tasks;
pub mod training;
pub mod viz;

pub use error::{Error, Result};
