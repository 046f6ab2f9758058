//! Minimal reverse-mode automatic differentiation over dense CPU arrays.
//!
//! Built for the dualcodec model: the op set covers convolutions, attention
//! with additive masks, normalisation and the straight-through rounding used
//! by finite scalar quantization. Elements are generic over [`Scalar`] so the
//! same code trains in `f32` and is gradient-checked in `f64`.

mod array;
pub mod checkpoint;
mod error;
mod graph;
pub mod kernels;
pub mod meter;
pub mod optim;
mod params;
mod scalar;

pub use array::{numel, NdArray};
pub use error::{Error, Result};
pub use graph::{Graph, Var};
pub use optim::{Adam, AdamConfig, CosineSchedule, EmaState};
pub use params::{Init, Param, ParamBuilder, ParamId, ParamSpec, ParamStore};
pub use scalar::Scalar;
