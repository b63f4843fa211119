//! Softmax and categorical cross-entropy via log-sum-exp.

fn log_sum_exp(row: &[f64]) -> f64 {
    let m = row.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let lse = log_sum_exp(logits);
    logits.iter().map(|v| (v - lse).exp()).collect()
}

pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let lse = log_sum_exp(logits);
    logits.iter().map(|v| v - lse).collect()
}

/// Mean of `-log p[target]` over a batch of rows of width `n_classes`.
pub fn cross_entropy(logits: &[f64], targets: &[usize], n_classes: usize) -> f64 {
    assert_eq!(logits.len(), targets.len() * n_classes, "logit batch does not match targets");
    if targets.is_empty() {
        return 0.0;
    }
    let total: f64 = logits
        .chunks_exact(n_classes)
        .zip(targets)
        .map(|(row, &t)| log_sum_exp(row) - row[t])
        .sum();
    total / targets.len() as f64
}

/// Loss together with `dL/dlogits` for the batch mean.
pub fn cross_entropy_with_grad(logits: &[f64], targets: &[usize], n_classes: usize) -> (f64, Vec<f64>) {
    let loss = cross_entropy(logits, targets, n_classes);
    let scale = 1.0 / targets.len().max(1) as f64;
    let mut grad = Vec::with_capacity(logits.len());
    for (row, &t) in logits.chunks_exact(n_classes).zip(targets) {
        for (c, p) in softmax(row).into_iter().enumerate() {
            let y = if c == t { 1.0 } else { 0.0 };
            grad.push((p - y) * scale);
        }
    }
    (loss, grad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn reference_values() {
        assert!((cross_entropy(&[0.0; 4], &[2], 4) - 4f64.ln()).abs() < 1e-15);
        assert!(cross_entropy(&[50.0, 0.0, 0.0], &[0], 3) < 1e-20);
        assert!((cross_entropy(&[1000.0, -1000.0], &[1], 2) - 2000.0).abs() < 1e-9);
    }

    #[test]
    fn matches_direct_formula() {
        let logits: [f64; 9] = [0.3, -1.2, 2.0, 0.1, 1.5, 0.2, -0.3, 0.8, -2.0];
        let targets = [2, 0, 1];
        let direct: f64 = -logits
            .chunks(3)
            .zip(&targets)
            .map(|(r, &t)| {
                let z: f64 = r.iter().map(|v| v.exp()).sum();
                (r[t].exp() / z).ln()
            })
            .sum::<f64>()
            / 3.0;
        assert!((cross_entropy(&logits, &targets, 3) - direct).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn softmax_sums_to_one(v in proptest::collection::vec(-30.0f64..30.0, 1..12)) {
            let s: f64 = softmax(&v).iter().sum();
            prop_assert!((s - 1.0).abs() < 1e-12);
        }

        #[test]
        fn relabeling_equivariant(v in proptest::collection::vec(-10.0f64..10.0, 4), t in 0usize..4, shift in 1usize..4) {
            let perm: Vec<usize> = (0..4).map(|c| (c + shift) % 4).collect();
            let mut permuted = [0.0; 4];
            for c in 0..4 {
                permuted[perm[c]] = v[c];
            }
            let a = cross_entropy(&v, &[t], 4);
            let b = cross_entropy(&permuted, &[perm[t]], 4);
            prop_assert!((a - b).abs() < 1e-12);
        }
    }
}
