//! Supervised adversarial saliency detection.
//!
//! A fully-convolutional generator maps images to multi-channel saliency
//! maps; a discriminator classifies maps into the dataset's `L` object
//! classes plus one "synthetic" class, and a few of its convolutions act as
//! conv-comparison layers that pull the generator's features toward those of
//! the ground truth. Around that sit the training loop, SLIC-based
//! post-processing, F-measure evaluation and the data formats.

pub mod checkpoint;
pub mod config;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod gradcheck;
pub mod layers;
pub mod network;
pub mod ops;
pub mod postproc;
pub mod rng;
pub mod scalar;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
pub use layers::{Layer, LayerKind, LayerSpec, Mode};
pub use network::{
    build_d_network, build_discriminator, build_g_network, build_generator, DiscriminatorSpec,
    GeneratorSpec, Network, Role,
};
pub use rng::Prng;
pub use scalar::Scalar;
pub use tensor::{Shape, Tensor};
