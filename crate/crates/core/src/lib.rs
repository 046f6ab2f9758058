//! Consistency-trained spectrogram autoencoder with a summary-embedding
//! bottleneck that yields continuous latents or FSQ tokens from one model.

pub mod checkpoint;
pub mod codec;
pub mod config;
pub mod corpus;
pub mod error;
pub mod fsq;
pub mod metrics;
pub mod net;
pub mod signal;
pub mod train;

pub use config::Profile;
pub use error::{Error, Result};
