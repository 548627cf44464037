//! Joint synthesis of a safety index and a safe policy for a planar point
//! robot, plus a brute-force feasibility verifier for the synthesized index.

pub mod checkpoint;
pub mod config;
pub mod env;
pub mod error;
pub mod nn;
pub mod safety_index;
pub mod trainer;
pub mod verify;

pub use checkpoint::Checkpoint;
pub use config::RunConfig;
pub use error::{Error, Result};
