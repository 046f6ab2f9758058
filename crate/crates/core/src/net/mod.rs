//! The three networks and the consistency-function parameterization.

mod edm;
mod embed;
mod layers;
mod mask;
mod model;

pub use crate::config::{EdmConfig, ModelConfig};
pub use edm::{edm_wrap, EdmCoefficients};
pub use embed::sigma_embed;
pub use mask::chunked_causal_mask;
pub use model::{param_breakdown, ChunkGeometry, CrossConnections, Model, Network, ParamBreakdown};
