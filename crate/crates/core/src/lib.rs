//! Learned frequency-specific quantization for block-DCT image coding.
//!
//! The crate trains per-frequency scaling matrices by gradient descent
//! through a uniform-noise stand-in for the quantizer, then applies them in a
//! small intra codec and measures the effect with Bjøntegaard-delta rates.
//!
//! Module map:
//!
//! - [`media_io`]: PNM images, corpora and patch cropping
//! - [`transform`]: orthonormal block DCT and plane tiling
//! - [`scaling`]: scaling matrices, lists and the list file format
//! - [`quantizer`]: QP to step size and scaled (de)quantization
//! - [`taskloss`]: differentiable task-loss proxies and the external bridge
//! - [`trainer`]: noise-proxy training with Adam
//! - [`codec_sim`]: intra codec with an exp-Golomb rate estimate
//! - [`evalkit`]: BD-rate and list comparison reports

pub mod codec_sim;
mod error;
pub mod evalkit;
pub mod media_io;
pub mod quantizer;
pub mod scaling;
pub mod synth;
pub mod taskloss;
pub mod trainer;
pub mod transform;

pub use error::{Error, Result};

/// Block sizes for which DCT plans and scaling matrices exist.
pub const BLOCK_SIZES: [usize; 6] = [2, 4, 8, 16, 32, 64];

pub(crate) fn check_block_size(size: usize) -> Result<()> {
    if BLOCK_SIZES.contains(&size) {
        Ok(())
    } else {
        Err(Error::Config(format!(
            "unsupported block size {size}, expected one of {BLOCK_SIZES:?}"
        )))
    }
}
