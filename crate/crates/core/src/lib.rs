//! Phase-amplitude modulated forecasting.
//!
//! Windows are instance-normalized per channel, modulated by learnable
//! cyclical embeddings looked up by the window's position in a fixed-length
//! cycle, passed through a two-layer MLP head and denormalized. Everything,
//! including reverse-mode gradients, runs in `f64` on the CPU.

pub mod checkpoint;
pub mod config;
pub mod cyclemb;
pub mod dataio;
pub mod error;
pub mod evalbench;
pub mod model;
pub mod ndmath;
pub mod revin;
pub mod train;

pub use error::{Error, Result};
