use rand::Rng;

use super::matrix::{Matrix, Scalar};
use super::GnnError;
use crate::graph::NormAdj;

/// How the first layer aggregates neighbor features.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FirstLayer {
    /// Standard GCN: multiply by the normalized adjacency.
    Propagate,
    /// The input rows are already neighbor aggregates (FedGCN pre-train
    /// output), so the first layer is a plain affine map.
    PreAggregated,
}

/// Two-layer GCN: `log_softmax(Â · relu(P₁ · X · W1 + b1) · W2 + b2)`.
#[derive(Debug, Clone, PartialEq)]
pub struct GcnModel<T> {
    pub w1: Matrix<T>,
    pub b1: Vec<T>,
    pub w2: Matrix<T>,
    pub b2: Vec<T>,
}

/// Gradients with the same layout as [`GcnModel`].
pub type ParamGrads<T> = GcnModel<T>;

impl<T: Scalar> GcnModel<T> {
    pub fn zeros(in_dim: usize, hidden: usize, classes: usize) -> Self {
        Self {
            w1: Matrix::zeros(in_dim, hidden),
            b1: vec![T::zero(); hidden],
            w2: Matrix::zeros(hidden, classes),
            b2: vec![T::zero(); classes],
        }
    }

    /// Glorot-uniform weights, zero biases.
    pub fn glorot(in_dim: usize, hidden: usize, classes: usize, rng: &mut impl Rng) -> Self {
        let mut glorot = |rows: usize, cols: usize| {
            let limit = (6.0 / (rows + cols) as f64).sqrt();
            Matrix::from_fn(rows, cols, |_, _| T::from_real(rng.random_range(-limit..=limit)))
        };
        let w1 = glorot(in_dim, hidden);
        let w2 = glorot(hidden, classes);
        Self { w1, b1: vec![T::zero(); hidden], w2, b2: vec![T::zero(); classes] }
    }

    pub fn in_dim(&self) -> usize {
        self.w1.rows()
    }

    pub fn hidden(&self) -> usize {
        self.w1.cols()
    }

    pub fn classes(&self) -> usize {
        self.w2.cols()
    }

    pub fn num_params(&self) -> usize {
        let (d, h, c) = (self.in_dim(), self.hidden(), self.classes());
        d * h + h + h * c + c
    }

    /// Parameter tensors in wire order: W1, b1, W2, b2.
    pub fn tensors(&self) -> [&[T]; 4] {
        [self.w1.as_slice(), &self.b1, self.w2.as_slice(), &self.b2]
    }

    pub fn tensors_mut(&mut self) -> [&mut [T]; 4] {
        [self.w1.as_mut_slice(), &mut self.b1, self.w2.as_mut_slice(), &mut self.b2]
    }

    pub fn flatten(&self) -> Vec<T> {
        self.tensors().concat()
    }

    /// Inverse of [`flatten`](Self::flatten) for a model of the same shape.
    pub fn load_flat(&mut self, flat: &[T]) -> Result<(), GnnError> {
        if flat.len() != self.num_params() {
            return Err(GnnError::Shape(format!(
                "{} flat parameters for a model with {}",
                flat.len(),
                self.num_params()
            )));
        }
        let mut rest = flat;
        for t in self.tensors_mut() {
            let (head, tail) = rest.split_at(t.len());
            t.copy_from_slice(head);
            rest = tail;
        }
        Ok(())
    }

    pub fn cast<U: Scalar>(&self) -> GcnModel<U> {
        let v = |x: &[T]| x.iter().map(|&a| U::from_real(a.as_f64())).collect();
        GcnModel { w1: self.w1.cast(), b1: v(&self.b1), w2: self.w2.cast(), b2: v(&self.b2) }
    }
}

/// Intermediates kept by [`forward`] for [`backward`].
#[derive(Debug)]
pub struct ForwardCache<'a, T> {
    x: &'a Matrix<T>,
    adj: &'a NormAdj,
    mode: FirstLayer,
    z1: Matrix<T>,
    /// Hidden activations after ReLU and dropout.
    h: Matrix<T>,
    /// Per-element dropout multiplier; `None` when dropout was not applied.
    dropout: Option<Vec<T>>,
    log_probs: Matrix<T>,
}

impl<T> ForwardCache<'_, T> {
    pub fn log_probs(&self) -> &Matrix<T> {
        &self.log_probs
    }
}

pub fn log_softmax_rows<T: Scalar>(z: &mut Matrix<T>) {
    for i in 0..z.rows() {
        let row = z.row_mut(i);
        let max = row.iter().fold(T::neg_infinity(), |m, &x| if x > m { x } else { m });
        let lse = max + row.iter().map(|&x| (x - max).exp()).sum::<T>().ln();
        for x in row.iter_mut() {
            *x = *x - lse;
        }
    }
}

/// Forward pass. Dropout (rate `dropout_p`) hits the hidden layer only, and
/// only when an rng is supplied.
pub fn forward<'a, T: Scalar, R: Rng>(
    model: &GcnModel<T>,
    adj: &'a NormAdj,
    x: &'a Matrix<T>,
    mode: FirstLayer,
    dropout_p: f64,
    rng: Option<&mut R>,
) -> Result<ForwardCache<'a, T>, GnnError> {
    if x.cols() != model.in_dim() {
        return Err(GnnError::Shape(format!(
            "features have {} columns, model expects {}",
            x.cols(),
            model.in_dim()
        )));
    }
    if adj.num_nodes() != x.rows() {
        return Err(GnnError::Shape(format!(
            "adjacency over {} nodes, features for {}",
            adj.num_nodes(),
            x.rows()
        )));
    }
    let xw = x.matmul(&model.w1)?;
    let mut z1 = match mode {
        FirstLayer::Propagate => xw.propagate(adj)?,
        FirstLayer::PreAggregated => xw,
    };
    z1.add_row_vector(&model.b1);
    let mut h = z1.clone();
    for v in h.as_mut_slice() {
        if *v < T::zero() {
            *v = T::zero();
        }
    }
    let dropout = match rng {
        Some(rng) if dropout_p > 0.0 => {
            let keep = T::from_real(1.0 / (1.0 - dropout_p));
            let mask: Vec<T> = (0..h.as_slice().len())
                .map(|_| if rng.random::<f64>() < dropout_p { T::zero() } else { keep })
                .collect();
            for (v, &m) in h.as_mut_slice().iter_mut().zip(&mask) {
                *v = *v * m;
            }
            Some(mask)
        }
        _ => None,
    };
    let mut z2 = h.matmul(&model.w2)?.propagate(adj)?;
    z2.add_row_vector(&model.b2);
    log_softmax_rows(&mut z2);
    Ok(ForwardCache { x, adj, mode, z1, h, dropout, log_probs: z2 })
}

/// Mean negative log-likelihood over masked rows and its gradient with
/// respect to the log-probabilities.
pub fn nll_loss_and_grad<T: Scalar>(
    log_probs: &Matrix<T>,
    labels: &[u32],
    mask: &[bool],
) -> Result<(T, Matrix<T>), GnnError> {
    let count = mask.iter().filter(|&&b| b).count();
    if count == 0 {
        return Err(GnnError::EmptyMask);
    }
    if labels.len() != log_probs.rows() || mask.len() != log_probs.rows() {
        return Err(GnnError::Shape(format!(
            "{} labels / {} mask entries for {} rows",
            labels.len(),
            mask.len(),
            log_probs.rows()
        )));
    }
    let scale = T::from_real(1.0 / count as f64);
    let mut grad = Matrix::zeros(log_probs.rows(), log_probs.cols());
    let mut loss = T::zero();
    for (i, (&y, _)) in labels.iter().zip(mask).enumerate().filter(|(_, (_, &m))| m) {
        loss = loss - log_probs.get(i, y as usize);
        grad.set(i, y as usize, -scale);
    }
    Ok((loss * scale, grad))
}

/// Reverse-mode gradients for all four parameter tensors.
pub fn backward<T: Scalar>(
    model: &GcnModel<T>,
    cache: &ForwardCache<'_, T>,
    dlog_probs: &Matrix<T>,
) -> Result<ParamGrads<T>, GnnError> {
    if dlog_probs.shape() != cache.log_probs.shape() {
        return Err(GnnError::Shape("dlogits does not match forward output".into()));
    }
    // through log-softmax: dz = g - softmax * rowsum(g)
    let mut dz2 = dlog_probs.clone();
    for i in 0..dz2.rows() {
        let s: T = dlog_probs.row(i).iter().copied().sum();
        let lp = cache.log_probs.row(i);
        for (d, &l) in dz2.row_mut(i).iter_mut().zip(lp) {
            *d = *d - l.exp() * s;
        }
    }
    let db2 = dz2.col_sums();
    // Â is symmetric, so Âᵀ·dz = Â·dz
    let dhw2 = dz2.propagate(cache.adj)?;
    let dw2 = cache.h.t_matmul(&dhw2)?;
    let mut dz1 = dhw2.matmul_t(&model.w2)?;
    if let Some(mask) = &cache.dropout {
        for (d, &m) in dz1.as_mut_slice().iter_mut().zip(mask) {
            *d = *d * m;
        }
    }
    for (d, &z) in dz1.as_mut_slice().iter_mut().zip(cache.z1.as_slice()) {
        if z <= T::zero() {
            *d = T::zero();
        }
    }
    let db1 = dz1.col_sums();
    let dw1 = match cache.mode {
        FirstLayer::Propagate => cache.x.t_matmul(&dz1.propagate(cache.adj)?)?,
        FirstLayer::PreAggregated => cache.x.t_matmul(&dz1)?,
    };
    Ok(GcnModel { w1: dw1, b1: db1, w2: dw2, b2: db2 })
}

/// Row-wise argmax, lowest index on ties.
pub fn predict<T: Scalar>(log_probs: &Matrix<T>) -> Vec<u32> {
    (0..log_probs.rows())
        .map(|i| {
            let mut best = 0;
            for (j, &v) in log_probs.row(i).iter().enumerate() {
                if v > log_probs.get(i, best) {
                    best = j;
                }
            }
            best as u32
        })
        .collect()
}

/// Number of masked rows whose prediction matches the label, and the mask size.
pub fn count_correct<T: Scalar>(log_probs: &Matrix<T>, labels: &[u32], mask: &[bool]) -> (usize, usize) {
    let pred = predict(log_probs);
    mask.iter()
        .zip(pred.iter().zip(labels))
        .filter(|(&m, _)| m)
        .fold((0, 0), |(c, t), (_, (p, y))| (c + (p == y) as usize, t + 1))
}

/// Accuracy of `model` on the masked rows, dropout off.
pub fn evaluate<T: Scalar>(
    model: &GcnModel<T>,
    adj: &NormAdj,
    x: &Matrix<T>,
    mode: FirstLayer,
    labels: &[u32],
    mask: &[bool],
) -> Result<f64, GnnError> {
    let cache = forward::<T, rand::rngs::ThreadRng>(model, adj, x, mode, 0.0, None)?;
    let (correct, total) = count_correct(&cache.log_probs, labels, mask);
    if total == 0 {
        return Err(GnnError::EmptyMask);
    }
    Ok(correct as f64 / total as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    type NoRng = ChaCha8Rng;

    #[test]
    fn zero_model_is_uniform() {
        let model = GcnModel::<f64>::zeros(3, 4, 5);
        let x = Matrix::from_fn(2, 3, |i, j| (i + j) as f64);
        let adj = NormAdj::identity(2);
        let cache = forward::<_, NoRng>(&model, &adj, &x, FirstLayer::Propagate, 0.0, None).unwrap();
        for v in cache.log_probs().as_slice() {
            assert!((v - (1.0f64 / 5.0).ln()).abs() < 1e-12);
        }
    }

    #[test]
    fn single_node_single_class() {
        let mut model = GcnModel::<f64>::zeros(1, 1, 1);
        model.w1.set(0, 0, 1.0);
        model.w2.set(0, 0, 1.0);
        let x = Matrix::from_vec(1, 1, vec![2.5]).unwrap();
        let adj = NormAdj::identity(1);
        let cache = forward::<_, NoRng>(&model, &adj, &x, FirstLayer::Propagate, 0.0, None).unwrap();
        assert_eq!(cache.log_probs().as_slice(), &[0.0]);
    }

    #[test]
    fn uniform_two_class_loss_is_ln2() {
        let lp = Matrix::from_vec(3, 2, vec![0.5f64.ln(); 6]).unwrap();
        let (loss, grad) = nll_loss_and_grad(&lp, &[0, 1, 1], &[true, true, false]).unwrap();
        assert!((loss - 2f64.ln()).abs() < 1e-15);
        assert_eq!(grad.row(2), &[0.0, 0.0]);
        assert_eq!(grad.row(0), &[-0.5, 0.0]);
    }

    #[test]
    fn confident_logits_have_vanishing_loss() {
        let lp = Matrix::from_vec(1, 2, vec![-1e-12, -30.0]).unwrap();
        let (loss, _) = nll_loss_and_grad(&lp, &[0], &[true]).unwrap();
        assert!(loss < 1e-11);
    }

    #[test]
    fn empty_mask_rejected() {
        let lp = Matrix::<f32>::zeros(2, 2);
        assert_eq!(nll_loss_and_grad(&lp, &[0, 0], &[false, false]).unwrap_err(), GnnError::EmptyMask);
        let model = GcnModel::<f32>::zeros(2, 2, 2);
        let err = evaluate(&model, &NormAdj::identity(2), &lp, FirstLayer::Propagate, &[0, 0], &[false; 2]);
        assert_eq!(err.unwrap_err(), GnnError::EmptyMask);
    }

    #[test]
    fn zero_upstream_gives_zero_grads() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let model = GcnModel::<f64>::glorot(3, 4, 2, &mut rng);
        let x = Matrix::from_fn(2, 3, |i, j| (i * 3 + j) as f64 * 0.1);
        let adj = NormAdj::identity(2);
        let cache = forward::<_, NoRng>(&model, &adj, &x, FirstLayer::Propagate, 0.0, None).unwrap();
        let g = backward(&model, &cache, &Matrix::zeros(2, 2)).unwrap();
        assert!(g.flatten().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn bias_only_model_predicts_its_class() {
        let mut model = GcnModel::<f32>::zeros(2, 3, 3);
        model.b2[0] = 5.0;
        let x = Matrix::from_fn(4, 2, |i, j| (i as f32) - j as f32);
        let acc = evaluate(&model, &NormAdj::identity(4), &x, FirstLayer::Propagate, &[0; 4], &[true; 4]).unwrap();
        assert_eq!(acc, 1.0);
    }

    #[test]
    fn ties_break_to_lowest_class() {
        let lp = Matrix::from_vec(2, 3, vec![0.0f32, 0.0, 0.0, -1.0, 0.0, 0.0]).unwrap();
        assert_eq!(predict(&lp), vec![0, 1]);
    }

    #[test]
    fn flat_roundtrip() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let model = GcnModel::<f32>::glorot(5, 4, 3, &mut rng);
        let mut other = GcnModel::zeros(5, 4, 3);
        other.load_flat(&model.flatten()).unwrap();
        assert_eq!(model, other);
        assert_eq!(model.num_params(), 5 * 4 + 4 + 4 * 3 + 3);
        assert!(other.load_flat(&[0.0; 3]).is_err());
    }

    #[test]
    fn dropout_only_in_train_mode() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let model = GcnModel::<f64>::glorot(3, 16, 2, &mut rng);
        let x = Matrix::from_fn(4, 3, |i, j| (i + 2 * j) as f64 * 0.3);
        let adj = NormAdj::identity(4);
        let a = forward::<_, NoRng>(&model, &adj, &x, FirstLayer::Propagate, 0.5, None).unwrap();
        let b = forward::<_, NoRng>(&model, &adj, &x, FirstLayer::Propagate, 0.5, None).unwrap();
        assert_eq!(a.log_probs(), b.log_probs());
        let c = forward(&model, &adj, &x, FirstLayer::Propagate, 0.5, Some(&mut rng)).unwrap();
        assert_ne!(a.log_probs(), c.log_probs());
    }
}
