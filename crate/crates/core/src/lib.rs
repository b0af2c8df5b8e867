pub mod engine;
pub mod envs;
pub mod error;
pub mod eval;
pub mod kinematics;
pub mod learning;

pub use error::{Error, Result};

/// Seedable, position-addressable generator used everywhere randomness
/// must be reproducible.
pub type SimRng = rand_chacha::ChaCha8Rng;
