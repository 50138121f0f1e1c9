#![allow(clippy::needless_range_loop, clippy::should_implement_trait)]

pub mod analysis;
pub mod baseline;
mod binio;
pub mod error;
pub mod history;
pub mod nn;
pub mod notes;
pub mod pipeline;
pub mod predictor;
pub mod signal;
pub mod toy;
pub mod tuner;
pub mod vocoder;
pub use vocoder::SfVocoder;

pub use error::{Error, Result};
