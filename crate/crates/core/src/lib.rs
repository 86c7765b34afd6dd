pub mod dynamics;
pub mod cli;
pub mod error;
pub mod learning;
pub mod reachability;
pub mod safety;
pub mod session;
pub mod simulation;
pub mod supervisor;

pub use error::{Error, Result};
