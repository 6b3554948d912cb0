use serde::{Deserialize, Serialize};

pub const DEFAULT_FRAC_BITS: u8 = 24;
pub const DEFAULT_CLAMP: i64 = 1 << 30;
pub const DEFAULT_MAX_SUMMANDS: u64 = 1024;

/// Fixed-point encoding of reals as signed integers scaled by `2^frac_bits`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FixedPointCodec {
    pub frac_bits: u8,
    /// Encoded magnitudes are clamped to `[-clamp, clamp]`.
    pub clamp: i64,
    /// Largest number of ciphertexts that may be summed before decryption.
    pub max_summands: u64,
}

impl Default for FixedPointCodec {
    fn default() -> Self {
        Self { frac_bits: DEFAULT_FRAC_BITS, clamp: DEFAULT_CLAMP, max_summands: DEFAULT_MAX_SUMMANDS }
    }
}

impl FixedPointCodec {
    pub fn new(frac_bits: u8, clamp: i64, max_summands: u64) -> Self {
        Self { frac_bits, clamp, max_summands }
    }

    pub fn scale(&self) -> f64 {
        (self.frac_bits as f64).exp2()
    }

    pub fn encode(&self, x: f64) -> i64 {
        let v = (x * self.scale()).round();
        if v.is_nan() {
            return 0;
        }
        let c = self.clamp as f64;
        v.clamp(-c, c) as i64
    }

    pub fn decode(&self, v: i128) -> f64 {
        v as f64 / self.scale()
    }

    /// Worst-case rounding error of one encode/decode, ignoring clamping.
    pub fn resolution(&self) -> f64 {
        (-(self.frac_bits as f64) - 1.0).exp2()
    }
}
