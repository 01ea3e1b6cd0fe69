//! Objective functions: weighted focal loss for classification, supervised
//! contrastive loss over the batch plus a FIFO cross-batch embedding memory,
//! and their weighted sum.

use std::collections::VecDeque;

use spfas_autograd::{Graph, Tensor, TensorError, Var};

use crate::dataio::Label;

/// Probability floor applied before logarithms.
pub const PROB_EPS: f64 = 1e-12;

#[derive(Debug, Clone)]
pub struct LossConfig {
    /// Focal exponent.
    pub gamma: f64,
    /// Contrastive temperature.
    pub tau: f64,
    /// Weight of the contrastive term in the overall loss.
    pub lambda_scl: f64,
    /// Cross-batch memory capacity (entries).
    pub xbm_capacity: usize,
    /// Optional 1/|positives| normalization of each anchor's sum; the
    /// default objective sums pairs unnormalized.
    pub supcon_normalize_positives: bool,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            gamma: 2.0,
            tau: 0.07,
            lambda_scl: 10.0,
            xbm_capacity: 1200,
            supcon_normalize_positives: false,
        }
    }
}

// ── focal loss ────────────────────────────────────────────────────────────

/// Scalar focal term `-(1 - p_t)^gamma * ln(p_t)` with the probability
/// clamped to `PROB_EPS`.
pub fn focal_term(p_t: f64, gamma: f64) -> f64 {
    let p = p_t.max(PROB_EPS);
    -(1.0 - p).powf(gamma) * p.ln()
}

/// Batched focal loss on logits `[N, 2]`: softmax, pick the true-class
/// probability via the one-hot labels, apply the focal term, multiply by the
/// per-sample weight, mean over the batch.
pub fn focal_loss(
    g: &mut Graph,
    logits: Var,
    one_hot: &Tensor,
    weights: &[f64],
    gamma: f64,
) -> Result<Var, TensorError> {
    let n = g.value(logits).shape()[0];
    debug_assert_eq!(one_hot.shape(), g.value(logits).shape());
    debug_assert_eq!(weights.len(), n);
    let probs = g.softmax_last(logits)?;
    let oh = g.constant(one_hot.clone());
    let picked = g.mul(probs, oh)?;
    let p_t = g.sum_axis(picked, 1)?;
    let p_t = g.clamp_min(p_t, PROB_EPS)?;
    let neg_p = g.mul_scalar(p_t, -1.0)?;
    let one_minus = g.add_scalar(neg_p, 1.0)?;
    let modulator = g.pow_scalar(one_minus, gamma)?;
    let log_p = g.log(p_t)?;
    let per_sample = g.mul(modulator, log_p)?;
    let negated = g.mul_scalar(per_sample, -1.0)?;
    let w = g.constant(Tensor::new(&[n], weights.to_vec())?);
    let weighted = g.mul(negated, w)?;
    g.mean_all(weighted)
}

// ── cross-batch memory ────────────────────────────────────────────────────

#[derive(Debug, Clone)]
pub struct BankEntry {
    pub z: Vec<f64>,
    pub label: Label,
    pub weight: f64,
}

/// FIFO memory of recent embeddings. Stored entries are detached values;
/// no gradient ever flows into the bank.
#[derive(Debug, Clone)]
pub struct EmbeddingBank {
    capacity: usize,
    entries: VecDeque<BankEntry>,
}

impl EmbeddingBank {
    pub fn new(capacity: usize) -> Self {
        EmbeddingBank {
            capacity,
            entries: VecDeque::new(),
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> impl Iterator<Item = &BankEntry> {
        self.entries.iter()
    }

    /// Append a batch in order, evicting the oldest entries past capacity.
    pub fn push_batch(&mut self, batch: &[BankEntry]) {
        for e in batch {
            self.entries.push_back(e.clone());
            if self.entries.len() > self.capacity {
                self.entries.pop_front();
            }
        }
        // capacity 0 keeps the bank permanently empty
        while self.entries.len() > self.capacity {
            self.entries.pop_front();
        }
    }
}

// ── supervised contrastive loss ──────────────────────────────────────────

/// Supervised contrastive loss over unit embeddings `batch_z: [N, d]` with
/// the bank contents as extra positives/negatives (never as anchors).
///
/// Per anchor i:
/// `L_i = sum_{j != i, y_j = y_i} [ s_ij - log sum_{k != i} exp(s_ik) ]`
/// with `s = z_batch . z_all^T / tau`; the loss is `-sum_i L_i`. Anchors
/// without positives contribute nothing. Computed with masked log-sum-exp;
/// gradients reach only the current batch.
pub fn supcon_loss(
    g: &mut Graph,
    batch_z: Var,
    batch_labels: &[Label],
    bank: &EmbeddingBank,
    cfg: &LossConfig,
) -> Result<Var, TensorError> {
    let shape = g.value(batch_z).shape().to_vec();
    debug_assert_eq!(shape.len(), 2);
    let n = shape[0];
    let d = shape[1];
    debug_assert_eq!(batch_labels.len(), n);
    for (row, chunk) in g.value(batch_z).data().chunks(d).enumerate() {
        let norm: f64 = chunk.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Err(TensorError::ZeroNorm { row });
        }
    }

    let m = bank.len();
    let k = n + m;
    let all = if m == 0 {
        batch_z
    } else {
        let mut bank_data = Vec::with_capacity(m * d);
        for e in bank.entries() {
            debug_assert_eq!(e.z.len(), d);
            bank_data.extend_from_slice(&e.z);
        }
        let bank_const = g.constant(Tensor::new(&[m, d], bank_data)?);
        g.concat(&[batch_z, bank_const], 0)?
    };
    let all_t = g.transpose(all)?;
    let sims = g.matmul(batch_z, all_t)?;
    let sims = g.mul_scalar(sims, 1.0 / cfg.tau)?;

    let mut labels_all: Vec<Label> = batch_labels.to_vec();
    labels_all.extend(bank.entries().map(|e| e.label));
    let mut denom_mask = vec![1.0; n * k];
    let mut pos_mask = vec![0.0; n * k];
    let mut pos_counts = vec![0.0; n];
    for i in 0..n {
        denom_mask[i * k + i] = 0.0;
        for j in 0..k {
            if j != i && labels_all[j] == batch_labels[i] {
                pos_mask[i * k + j] = 1.0;
                pos_counts[i] += 1.0;
            }
        }
    }

    let denom_mask_t = Tensor::new(&[n, k], denom_mask)?;
    let lse = g.logsumexp_masked_last(sims, &denom_mask_t)?;

    let pos_mask_t = g.constant(Tensor::new(&[n, k], pos_mask)?);
    let pos_sims = g.mul(sims, pos_mask_t)?;

    let (pos_total, lse_weights) = if cfg.supcon_normalize_positives {
        // each anchor's sum divided by its positive count
        let inv: Vec<f64> = pos_counts
            .iter()
            .map(|&c| if c > 0.0 { 1.0 / c } else { 0.0 })
            .collect();
        let inv_t = g.constant(Tensor::new(&[n, 1], inv.clone())?);
        let scaled = g.mul(pos_sims, inv_t)?;
        let total = g.sum_all(scaled)?;
        let w: Vec<f64> = pos_counts
            .iter()
            .map(|&c| if c > 0.0 { 1.0 } else { 0.0 })
            .collect();
        (total, w)
    } else {
        (g.sum_all(pos_sims)?, pos_counts.clone())
    };

    let lse_w = g.constant(Tensor::new(&[n], lse_weights)?);
    let weighted_lse = g.mul(lse, lse_w)?;
    let lse_total = g.sum_all(weighted_lse)?;
    // L = -(pos_total - lse_total)
    g.sub(lse_total, pos_total)
}

/// Overall objective `l_c + lambda_scl * l_scl`.
pub fn total_loss(
    g: &mut Graph,
    l_c: Var,
    l_scl: Var,
    lambda_scl: f64,
) -> Result<Var, TensorError> {
    let scaled = g.mul_scalar(l_scl, lambda_scl)?;
    g.add(l_c, scaled)
}
