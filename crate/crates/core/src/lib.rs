//! Cross-lingual dense retrieval with a query-generator teacher.
//!
//! A dual-encoder retriever is trained by KL distillation from a conditional
//! query generator, and generator-produced queries in other languages are
//! aligned with their source queries through scheduled sampling. The
//! [`pipeline`] module runs the whole iterative procedure; the other modules
//! are its building blocks.

pub mod alignment;
pub mod corpus;
pub mod encoder;
pub mod error;
pub mod pipeline;
pub mod generator;
pub mod retrieval;
pub mod rng;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
