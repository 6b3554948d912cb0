//! Privacy layer: fixed-point codec, Paillier additive HE, Gaussian DP noise
//! and low-rank random projection of features.

mod codec;
mod dp;
mod paillier;
mod projection;

pub use codec::{FixedPointCodec, DEFAULT_CLAMP, DEFAULT_FRAC_BITS, DEFAULT_MAX_SUMMANDS};
pub use dp::dp_noise;
pub use paillier::{
    encryption_rng, he_keygen, CiphertextVector, Encryptor, HeKeypair, PublicKey, SecretKey, SHORT_EXPONENT_BITS, SUPPORTED_KEY_BITS,
};
pub use projection::{gen_projection, project_features, ProjectionMatrix};

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum SecureError {
    #[error("value {value} at index {index} would overflow the plaintext space after aggregation")]
    Overflow { index: usize, value: f64 },
    #[error("ciphertext mismatch: {0}")]
    Mismatch(String),
    #[error("projection rank {k} invalid for dimension {d}")]
    Rank { d: usize, k: usize },
    #[error("unsupported key size {0} (use 512, 1024 or 2048)")]
    KeySize(usize),
    #[error("shape mismatch: {0}")]
    Shape(String),
}
