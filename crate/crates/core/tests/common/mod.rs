//! Shared test oracles, kept independent of the library's computation paths.

use spfas_core::dataio::Label;

/// Naive double-loop supervised contrastive loss. Anchors are the batch
/// rows; candidates are batch plus bank; only the anchor's own slot is
/// excluded. Plain exp sums, no log-sum-exp trick.
#[allow(dead_code)]
pub fn supcon_naive(
    batch_z: &[Vec<f64>],
    batch_labels: &[Label],
    bank_z: &[Vec<f64>],
    bank_labels: &[Label],
    tau: f64,
    normalize_positives: bool,
) -> f64 {
    let mut all_z: Vec<&[f64]> = batch_z.iter().map(|v| v.as_slice()).collect();
    all_z.extend(bank_z.iter().map(|v| v.as_slice()));
    let mut all_labels: Vec<Label> = batch_labels.to_vec();
    all_labels.extend_from_slice(bank_labels);

    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    let mut total = 0.0;
    for (i, zi) in batch_z.iter().enumerate() {
        let mut denom = 0.0;
        for (k, zk) in all_z.iter().enumerate() {
            if k != i {
                denom += (dot(zi, zk) / tau).exp();
            }
        }
        let mut anchor = 0.0;
        let mut positives = 0usize;
        for (j, zj) in all_z.iter().enumerate() {
            if j != i && all_labels[j] == batch_labels[i] {
                anchor += ((dot(zi, zj) / tau).exp() / denom).ln();
                positives += 1;
            }
        }
        if normalize_positives && positives > 0 {
            anchor /= positives as f64;
        }
        total += anchor;
    }
    -total
}

/// Random unit vector.
#[allow(dead_code)]
pub fn random_unit(rng: &mut spfas_core::rng::Stream, dim: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.normal()).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-6 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

/// Random orthogonal matrix via Gram-Schmidt on Gaussian columns.
#[allow(dead_code)]
pub fn random_rotation(rng: &mut spfas_core::rng::Stream, dim: usize) -> Vec<Vec<f64>> {
    loop {
        let mut basis: Vec<Vec<f64>> = Vec::with_capacity(dim);
        let mut ok = true;
        for _ in 0..dim {
            let mut v: Vec<f64> = (0..dim).map(|_| rng.normal()).collect();
            for b in &basis {
                let proj: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
                for (vi, bi) in v.iter_mut().zip(b) {
                    *vi -= proj * bi;
                }
            }
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm < 1e-8 {
                ok = false;
                break;
            }
            basis.push(v.into_iter().map(|x| x / norm).collect());
        }
        if ok {
            return basis;
        }
    }
}

#[allow(dead_code)]
pub fn rotate(m: &[Vec<f64>], v: &[f64]) -> Vec<f64> {
    m.iter()
        .map(|row| row.iter().zip(v).map(|(a, b)| a * b).sum())
        .collect()
}
