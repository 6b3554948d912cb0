use rand::seq::index;
use rand::Rng;

use super::ProtocolError;
use crate::data::SamplingType;

/// Trainer ids taking part in epoch `current_epoch`, ascending.
///
/// `floor(num_trainers · sample_ratio)` ids are chosen: uniformly without
/// replacement (`Random`) or as the contiguous window
/// `(i + num_samples · current_epoch) mod num_trainers` (`Uniform`).
pub fn select_clients(
    num_trainers: usize,
    sample_ratio: f64,
    sampling_type: SamplingType,
    current_epoch: usize,
    rng: &mut impl Rng,
) -> Result<Vec<usize>, ProtocolError> {
    if !(sample_ratio > 0.0 && sample_ratio <= 1.0) {
        return Err(ProtocolError::Selection(format!("Sample ratio must be between 0 and 1, got {sample_ratio}")));
    }
    let num_samples = (num_trainers as f64 * sample_ratio).floor() as usize;
    let mut ids: Vec<usize> = match sampling_type {
        SamplingType::Random => index::sample(rng, num_trainers, num_samples).into_vec(),
        SamplingType::Uniform => {
            (0..num_samples).map(|i| (i + num_samples * current_epoch) % num_trainers).collect()
        }
    };
    ids.sort_unstable();
    Ok(ids)
}
