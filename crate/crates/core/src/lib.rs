//! Multimodal fake-news classification head trained with an auxiliary
//! text-image similarity loss, on top of precomputed embeddings.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod autodiff;
pub mod checkpoint;
pub mod config;
pub mod contrastive;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod metrics;
pub mod model;
pub mod optimizer;
pub mod tensor;
pub mod train;

pub use error::{FnrError, Result};
pub use tensor::{Real, Tensor2};
