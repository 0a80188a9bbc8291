pub mod augment;
pub mod data;
pub mod error;
pub mod eval;
pub mod losses;
pub mod networks;
pub mod nn;
pub mod phantom;
pub mod rng;
pub mod trainer;

pub use error::{Error, Result};
