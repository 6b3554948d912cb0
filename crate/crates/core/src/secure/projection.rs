use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::SecureError;
use crate::gnn::Matrix;

/// Gaussian random projection `d → k` with entries N(0, 1/k).
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionMatrix {
    pub seed: u64,
    pub matrix: Matrix<f32>,
}

impl ProjectionMatrix {
    pub fn in_dim(&self) -> usize {
        self.matrix.rows()
    }

    pub fn rank(&self) -> usize {
        self.matrix.cols()
    }
}

/// Regenerates the same matrix on every party from `(d, k, seed)`.
pub fn gen_projection(d: usize, k: usize, seed: u64) -> Result<ProjectionMatrix, SecureError> {
    if k == 0 || k > d {
        return Err(SecureError::Rank { d, k });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let std = 1.0 / (k as f64).sqrt();
    let matrix = Matrix::from_fn(d, k, |_, _| {
        let z: f64 = rng.sample(StandardNormal);
        (z * std) as f32
    });
    Ok(ProjectionMatrix { seed, matrix })
}

pub fn project_features(x: &Matrix<f32>, p: &ProjectionMatrix) -> Result<Matrix<f32>, SecureError> {
    x.matmul(&p.matrix).map_err(|e| SecureError::Shape(e.to_string()))
}
