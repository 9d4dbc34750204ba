//! Adaptive hierarchical graph cut for multi-granularity out-of-distribution
//! detection on embedding vectors.

pub mod checkpoint;
pub mod data;
pub mod decode;
pub mod error;
pub mod hierarchy;
pub mod knn;
pub mod labeling;
pub mod metrics;
pub mod objectives;
pub mod pipeline;
pub mod scorer;
pub mod seed;
pub mod training;

pub use error::{AhgcError, Result};
