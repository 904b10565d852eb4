//! Retrieval-based smart replies, a user rejection simulator, and
//! classifier-guided generation on n-gram language models, with an
//! evaluation harness tying them together.
//!
//! Numeric models are generic over the scalar type through [`scalar::Real`];
//! the aliases below fix `f64`, which is what the pipeline and CLI run.

pub mod artifact;
pub mod classifiers;
pub mod corpus;
pub mod decoding;
pub mod error;
pub mod eval;
pub mod lm;
pub mod pipeline;
pub mod scalar;
pub mod simulator;
pub mod smartreply;

pub use error::{Error, Result};
pub use scalar::{real, Real};

pub type NGramLm = lm::NGramModel<f64>;
pub type Classifier = classifiers::LinearSoftmaxModel<f64>;
pub type Encoder = smartreply::DualEncoder<f64>;
pub type Index = smartreply::ReplyIndex<f64>;
pub type ReplyHypothesis = decoding::Hypothesis<f64>;
