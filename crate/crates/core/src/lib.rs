//! SETransformer: a transformer encoder with squeeze-and-excitation gating
//! and temporal attention pooling for accelerometer activity recognition,
//! together with the data pipeline, trainer, and metrics around it.

mod codec;
pub mod data;
pub mod error;
pub mod metrics;
pub mod model;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
