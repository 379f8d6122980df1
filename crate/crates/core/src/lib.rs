//! Information-cascade growth prediction.
//!
//! A cascade graph is represented by random-walk paths sampled over it
//! ([`walk`]), each path is encoded by a bidirectional GRU, and the encodings
//! are pooled with a learned geometric attention over groups of paths and a
//! multinomial attention over positions ([`model`]). A linear regression on
//! hand-crafted structural features ([`features`]) serves as the baseline and
//! [`generate`] builds synthetic networks and cascades to train on.

pub mod dataset;
pub mod error;
pub mod features;
pub mod generate;
pub mod model;
pub mod graph;
pub mod seed;
pub mod tensor;
pub mod train;
pub mod walk;

pub use error::{Error, Result};
