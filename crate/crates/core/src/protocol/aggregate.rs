use super::ProtocolError;

/// Coordinate-wise mean of `updates` weighted by their sample counts,
/// accumulated in f64 in the given order.
pub fn fedavg_aggregate(updates: &[(&[f32], u64)]) -> Result<Vec<f32>, ProtocolError> {
    let Some(((first, _), rest)) = updates.split_first() else {
        return Err(ProtocolError::Shape("no updates to aggregate".into()));
    };
    if let Some((p, _)) = rest.iter().find(|(p, _)| p.len() != first.len()) {
        return Err(ProtocolError::Shape(format!("update lengths {} and {}", first.len(), p.len())));
    }
    let total: u64 = updates.iter().map(|(_, n)| n).sum();
    if total == 0 {
        return Err(ProtocolError::Shape("aggregation weights sum to zero".into()));
    }
    let mut acc = vec![0f64; first.len()];
    for (p, n) in updates {
        let w = *n as f64;
        for (a, &x) in acc.iter_mut().zip(p.iter()) {
            *a += w * x as f64;
        }
    }
    Ok(acc.into_iter().map(|a| (a / total as f64) as f32).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn single_update_unchanged() {
        let p = [0.1f32, -3.5, 7.25e-8];
        assert_eq!(fedavg_aggregate(&[(&p, 17)]).unwrap(), p);
    }

    #[test]
    fn identical_updates() {
        let p = [0.3f32, 1.0 / 3.0];
        assert_eq!(fedavg_aggregate(&[(&p, 5), (&p, 9)]).unwrap(), p);
    }

    #[test]
    fn weighted_mean() {
        assert_eq!(fedavg_aggregate(&[(&[1.0], 30), (&[4.0], 10)]).unwrap(), vec![1.75]);
    }

    #[test]
    fn errors() {
        assert!(fedavg_aggregate(&[]).is_err());
        assert!(fedavg_aggregate(&[(&[1.0], 1), (&[1.0, 2.0], 1)]).is_err());
        assert!(fedavg_aggregate(&[(&[1.0], 0)]).is_err());
    }

    proptest! {
        #[test]
        fn result_within_coordinate_range(
            ps in prop::collection::vec((prop::collection::vec(-100f32..100.0, 4), 1u64..50), 1..6)
        ) {
            let refs: Vec<(&[f32], u64)> = ps.iter().map(|(p, n)| (p.as_slice(), *n)).collect();
            let out = fedavg_aggregate(&refs).unwrap();
            for (j, &v) in out.iter().enumerate() {
                let lo = ps.iter().map(|(p, _)| p[j]).fold(f32::INFINITY, f32::min);
                let hi = ps.iter().map(|(p, _)| p[j]).fold(f32::NEG_INFINITY, f32::max);
                prop_assert!(v >= lo - 1e-4 && v <= hi + 1e-4);
            }
        }
    }
}
