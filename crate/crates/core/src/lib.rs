//! Supervised binary hashing.
//!
//! Learns `{-1, +1}` hash codes with a label-to-code regression learner
//! ([`fsdh`]) or a code-to-label regression learner with bitwise updates
//! ([`sdh`]), then searches and evaluates them in Hamming space.

pub mod baseline;
pub mod codes;
pub mod dataset;
pub mod error;
pub mod experiment;
pub mod fsdh;
pub mod hamming;
pub mod linalg;
pub mod metrics;
pub mod model;
pub mod persist;
pub mod rbf;
pub mod sdh;
pub mod stability;
pub mod synth;

pub use codes::CodeMatrix;
pub use dataset::{FeatureMatrix, OneHotLabels};
pub use error::{Error, Result};
pub use model::{HashModel, Method, TrainConfig, TrainTrace};
