//! Multi-subject linear encoding head for predicting cortical activity from
//! precomputed vision-model feature maps.
//!
//! The head has three stages:
//!
//! 1. [`projection`]: each input layer (H×W×C) is projected to a shared
//!    latent dimension by a channel filter followed by a learned spatial
//!    pooling map per latent unit, batch-normalized, and averaged across
//!    layers.
//! 2. [`encoder`]: a shared D→K linear map plus a subject-specific D→K map
//!    selected by subject id. [`Route::Group`] skips the subject path.
//! 3. [`pca`]: a frozen affine decoder whose weight is a PCA basis fit on
//!    pooled activity and whose bias is the activity mean.
//!
//! [`train`] fits the head with AdamW and a warmup/cosine schedule,
//! [`metrics`] scores predictions, and [`analysis`] covers parameter
//! accounting and clustering of learned pooling maps.
//!
//! The crate is `no_std` (with `alloc`). All arithmetic is `f64`; storage
//! formats live in the companion `msenc` crate.

#![no_std]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod analysis;
pub mod data;
pub mod encoder;
mod error;
pub mod head;
pub mod linalg;
pub mod metrics;
pub mod optim;
pub mod pca;
pub mod projection;
pub mod synth;
pub mod train;

pub use encoder::{EncoderParams, Route};
pub use error::{Error, Result};
pub use head::{EncodingHead, Gradients, Mode};
pub use pca::PcaEmbedding;
pub use projection::{BatchNorm, LayerProjection, LayerShape};

/// Seeded generator used everywhere randomness is needed.
pub type Rng = rand_chacha::ChaCha8Rng;

/// Builds the crate's generator from a 64-bit seed.
pub fn rng_from_seed(seed: u64) -> Rng {
    use rand::SeedableRng;
    Rng::seed_from_u64(seed)
}

/// One standard-normal draw.
pub(crate) fn std_normal(rng: &mut Rng) -> f64 {
    use rand_distr::Distribution;
    rand_distr::StandardNormal.sample(rng)
}
