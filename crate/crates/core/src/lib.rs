pub mod discriminator;
pub mod datagen;
pub mod error;
pub mod eval;
pub mod io;
pub mod network;
pub mod nn;
pub mod par;
pub mod pipeline;
pub mod rng;
pub mod sinkhorn;
pub mod style;
pub mod tensor;

pub use error::{Error, Result};
