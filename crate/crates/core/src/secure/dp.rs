use rand::Rng;
use rand_distr::StandardNormal;

use crate::gnn::Scalar;

/// Clips `v` to L2 norm at most `clip`, then adds N(0, (sigma·clip)²) noise
/// to every coordinate (Gaussian mechanism).
pub fn dp_noise<T: Scalar>(v: &[T], clip: f64, sigma: f64, rng: &mut impl Rng) -> Vec<T> {
    assert!(clip > 0.0, "clip must be positive");
    assert!(sigma >= 0.0, "sigma must be non-negative");
    let norm = v.iter().map(|x| x.as_f64() * x.as_f64()).sum::<f64>().sqrt();
    let factor = if norm > clip { clip / norm } else { 1.0 };
    let std = sigma * clip;
    v.iter()
        .map(|&x| {
            let clipped = if factor == 1.0 { x } else { T::from_real(x.as_f64() * factor) };
            if std == 0.0 {
                clipped
            } else {
                let z: f64 = rng.sample(StandardNormal);
                T::from_real(clipped.as_f64() + std * z)
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn no_noise_inside_clip_is_identity() {
        let v = [0.3f32, -0.4, 0.1];
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(dp_noise(&v, 1.0, 0.0, &mut rng), v.to_vec());
    }

    #[test]
    fn clipping_halves_a_vector_twice_the_bound() {
        let v = [3.0f64, 4.0];
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let out = dp_noise(&v, 2.5, 0.0, &mut rng);
        assert!((out[0] - 1.5).abs() < 1e-15 && (out[1] - 2.0).abs() < 1e-15);
    }

    #[test]
    fn unit_noise_has_unit_std() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let out = dp_noise(&vec![0.0f64; 100_000], 1.0, 1.0, &mut rng);
        let mean = out.iter().sum::<f64>() / out.len() as f64;
        let var = out.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (out.len() - 1) as f64;
        assert!((var.sqrt() - 1.0).abs() < 0.05, "std {}", var.sqrt());
    }
}
