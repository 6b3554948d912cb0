use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use fedgraph::gnn::Matrix;
use fedgraph::secure::{encryption_rng, gen_projection, he_keygen, project_features, Encryptor, FixedPointCodec};
use fedgraph::transport::wire::{encode_ciphertext, CIPHERTEXT_HEADER_LEN};

#[test]
fn distinct_seeds_give_distinct_moduli() {
    let a = he_keygen(512, 1).unwrap();
    let b = he_keygen(512, 2).unwrap();
    assert_ne!(a.public.n(), b.public.n());
    assert_eq!(a.public.n(), he_keygen(512, 1).unwrap().public.n());
}

#[test]
fn feature_row_ciphertext_size() {
    let key = he_keygen(512, 3).unwrap();
    let mut rng = encryption_rng(3);
    let enc = Encryptor::new(&key.public, &mut rng);
    let row = vec![0.25; 1433];
    let ct = enc.encrypt_vector(&FixedPointCodec::default(), &row, &mut rng).unwrap();
    assert_eq!(ct.payload_bytes(), 1433 * (2 * 512usize).div_ceil(8));
    assert_eq!(encode_ciphertext(&ct).len(), CIPHERTEXT_HEADER_LEN + 1433 * 128);
}

#[test]
fn sum_of_ten_encrypted_rows() {
    let key = he_keygen(512, 4).unwrap();
    let codec = FixedPointCodec::default();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut erng = encryption_rng(4);
    let enc = Encryptor::new(&key.public, &mut erng);
    let rows: Vec<Vec<f64>> = (0..10).map(|_| (0..32).map(|_| rng.random_range(-5.0..5.0)).collect()).collect();
    let mut acc = enc.encrypt_vector(&codec, &rows[0], &mut erng).unwrap();
    for r in &rows[1..] {
        key.public.add_assign(&mut acc, &enc.encrypt_vector(&codec, r, &mut erng).unwrap()).unwrap();
    }
    let got = key.decrypt_vector(&acc).unwrap();
    for (j, g) in got.iter().enumerate() {
        let want: f64 = rows.iter().map(|r| r[j]).sum();
        assert!((g - want).abs() <= 10.0 * codec.resolution());
    }
}

#[test]
fn projection_is_near_isometric_in_expectation() {
    let mut mean = [[0f64; 4]; 4];
    let trials = 10_000;
    for seed in 0..trials {
        let p = gen_projection(4, 4, seed).unwrap().matrix;
        for i in 0..4 {
            for j in 0..4 {
                mean[i][j] += (0..4).map(|l| p.get(i, l) as f64 * p.get(j, l) as f64).sum::<f64>() / trials as f64;
            }
        }
    }
    for (i, row) in mean.iter().enumerate() {
        for (j, &v) in row.iter().enumerate() {
            let want = if i == j { 1.0 } else { 0.0 };
            assert!((v - want).abs() < 0.05, "({i},{j}) = {v}");
        }
    }
}

#[test]
fn projection_commutes_with_summation() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let p = gen_projection(32, 6, 5).unwrap();
    let xs: Vec<Matrix<f32>> = (0..10).map(|_| Matrix::from_fn(7, 32, |_, _| rng.random_range(-1.0..1.0))).collect();
    let mut total = Matrix::zeros(7, 32);
    let mut projected_total = Matrix::zeros(7, 6);
    for x in &xs {
        for (t, v) in total.as_mut_slice().iter_mut().zip(x.as_slice()) {
            *t += v;
        }
        let px = project_features(x, &p).unwrap();
        for (t, v) in projected_total.as_mut_slice().iter_mut().zip(px.as_slice()) {
            *t += v;
        }
    }
    assert!(project_features(&total, &p).unwrap().max_abs_diff(&projected_total) < 1e-4);
}
