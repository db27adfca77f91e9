//! Token-level vector-quantized sequence autoencoder and latent-space tools.
//!
//! Numeric code is generic over [`Scalar`] (`f32` or `f64`); the aliases
//! below fix the single-precision instantiation used by the CLI.

pub mod autodiff;
pub mod autoencoder;
pub mod bleu;
pub mod checkpoint;
pub mod codebook;
pub mod config;
pub mod corpus;
pub mod error;
pub mod experiments;
pub mod fsutil;
pub mod geometry;
pub mod model;
pub mod params;
pub mod scalar;
pub mod tensor;
pub mod train;
pub mod tree;
pub mod vocab;

pub use autodiff::{Tape, Var};
pub use autoencoder::VqAutoencoder;
pub use codebook::{Codebook, QuantizerConfig, Reduction, Scheme};
pub use error::{Result, VqlError};
pub use model::{ModelConfig, Seq2Seq};
pub use scalar::Scalar;
pub use tensor::Tensor;
pub use vocab::Vocabulary;

pub type Tensor32 = Tensor<f32>;
pub type Tensor64 = Tensor<f64>;
pub type Tape32 = Tape<f32>;
pub type Tape64 = Tape<f64>;
pub type Codebook32 = Codebook<f32>;
pub type Codebook64 = Codebook<f64>;
pub type Seq2Seq32 = Seq2Seq<f32>;
pub type Seq2Seq64 = Seq2Seq<f64>;
pub type VqAutoencoder32 = VqAutoencoder<f32>;
pub type VqAutoencoder64 = VqAutoencoder<f64>;
