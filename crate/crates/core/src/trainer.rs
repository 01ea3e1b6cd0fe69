//! Training loop: adaptive sharpness-aware updates with decoupled weight
//! decay, a per-step cosine learning-rate schedule, oversampled and
//! reweighted batches with augmentation and intra-class mixup, the focal +
//! contrastive objective over batch and memory bank, and evaluation.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use spfas_autograd::{Graph, Tensor, TensorError};

use crate::augment::apply_augment;
use crate::config::PipelineConfig;
use crate::dataio::{load_sample, oversample_balance, DatasetManifest, Label, ManifestEntry};
use crate::error::{Error, TrainError};
use crate::losses::{focal_loss, supcon_loss, total_loss, BankEntry, EmbeddingBank};
use crate::metrics::{acer_report, confusion, MetricsReport};
use crate::model::{model_forward, ModelConfig, ModelParams, ParamVars};
use crate::rng::Stream;
use crate::strategies::{
    compute_ror_weights, intra_class_mixup, sample_mix_lambda, FileEmbeddingProvider,
    RandomProjectionEmbedder,
};

// stream tags; public so reference loops can reproduce the run exactly
pub const TAG_INIT: u64 = 1;
pub const TAG_ORDER: u64 = 2;
pub const TAG_AUG: u64 = 3;
pub const TAG_MIX: u64 = 4;

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr_max: f64,
    pub lr_min: f64,
    pub weight_decay: f64,
    /// Ascent radius; 0 collapses to plain gradient descent.
    pub asam_rho: f64,
    /// Per-parameter scale floor of the adaptive ascent.
    pub asam_eta: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 30,
            batch_size: 32,
            lr_max: 0.01,
            lr_min: 0.0,
            weight_decay: 5e-3,
            asam_rho: 0.5,
            asam_eta: 0.01,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if self.epochs == 0 {
            return Err(TrainError::InvalidConfig("epochs must be >= 1".into()));
        }
        if self.batch_size == 0 {
            return Err(TrainError::InvalidConfig("batch_size must be >= 1".into()));
        }
        if !(self.lr_max > self.lr_min && self.lr_min >= 0.0) {
            return Err(TrainError::InvalidConfig(
                "need lr_max > lr_min >= 0".into(),
            ));
        }
        if self.asam_rho < 0.0 || self.asam_eta < 0.0 || self.weight_decay < 0.0 {
            return Err(TrainError::InvalidConfig(
                "asam_rho, asam_eta and weight_decay must be non-negative".into(),
            ));
        }
        Ok(())
    }
}

/// Real-face reweighting knobs (which embedder feeds the weights).
#[derive(Debug, Clone)]
pub struct RorConfig {
    pub enabled: bool,
    /// Random-projection embedding width when no file is given.
    pub dim: usize,
    /// Precomputed embeddings to use instead of the built-in embedder.
    pub embeddings: Option<PathBuf>,
}

impl Default for RorConfig {
    fn default() -> Self {
        RorConfig {
            enabled: true,
            dim: 64,
            embeddings: None,
        }
    }
}

/// `lr(t) = lr_min + (lr_max - lr_min)(1 + cos(pi t / T)) / 2`.
pub fn cosine_lr(t: usize, total: usize, lr_max: f64, lr_min: f64) -> Result<f64, TrainError> {
    if total == 0 || t > total {
        return Err(TrainError::LrStepOutOfRange { t, total });
    }
    let phase = std::f64::consts::PI * t as f64 / total as f64;
    Ok(lr_min + 0.5 * (lr_max - lr_min) * (1.0 + phase.cos()))
}

/// Loss value and gradients (checkpoint parameter order) at one point.
pub struct StepEval {
    pub loss: f64,
    pub grads: Vec<Tensor>,
}

/// One sharpness-aware update:
/// ascend by `eps = rho * T^2 g / |T g|` with `T = diag(|w| + eta)`, take the
/// gradient there, then descend from the original point with decoupled weight
/// decay: `w <- w - lr (g' + wd * w)`. A zero gradient (or `rho = 0`) skips
/// the ascent. Returns the loss at the unperturbed point.
pub fn asam_step<F>(
    params: &mut [Tensor],
    loss_and_grad: &mut F,
    lr: f64,
    rho: f64,
    eta: f64,
    weight_decay: f64,
) -> Result<f64, Error>
where
    F: FnMut(&[Tensor]) -> Result<StepEval, Error>,
{
    let base = loss_and_grad(params)?;
    debug_assert_eq!(base.grads.len(), params.len());

    let mut norm_sq = 0.0;
    for (w, g) in params.iter().zip(&base.grads) {
        for (wv, gv) in w.data().iter().zip(g.data()) {
            let t = wv.abs() + eta;
            norm_sq += (t * gv) * (t * gv);
        }
    }
    let norm = norm_sq.sqrt();

    let descent_grads = if rho == 0.0 || norm == 0.0 {
        base.grads
    } else {
        let perturbed: Vec<Tensor> = params
            .iter()
            .zip(&base.grads)
            .map(|(w, g)| {
                let data = w
                    .data()
                    .iter()
                    .zip(g.data())
                    .map(|(wv, gv)| {
                        let t = wv.abs() + eta;
                        wv + rho * t * t * gv / norm
                    })
                    .collect();
                Tensor::new(w.shape(), data).expect("same shape")
            })
            .collect();
        loss_and_grad(&perturbed)?.grads
    };

    for (w, g) in params.iter_mut().zip(&descent_grads) {
        let wd = weight_decay;
        for (wv, gv) in w.data_mut().iter_mut().zip(g.data()) {
            *wv -= lr * (gv + wd * *wv);
        }
    }
    Ok(base.loss)
}

// ── batch preparation ─────────────────────────────────────────────────────

struct PreparedSample {
    x: Tensor, // [h, w, 33]
    label: Label,
    weight: f64,
}

fn prepare_one(
    root: &Path,
    entry: &ManifestEntry,
    cfg: &PipelineConfig,
    weight: f64,
    epoch: usize,
    slot: usize,
) -> Result<PreparedSample, Error> {
    let sample = load_sample(root, entry)?;
    let x = sample.concat_channels();
    let mut rng = Stream::derive(
        cfg.train.seed,
        &[TAG_AUG, cfg.augment.seed, epoch as u64, slot as u64],
    );
    let x = apply_augment(&x, &cfg.augment, &mut rng)?;
    Ok(PreparedSample {
        x,
        label: entry.label,
        weight,
    })
}

/// Load and augment a batch; each sample's randomness comes from its own
/// (seed, epoch, slot) stream, so worker parallelism cannot change results.
fn prepare_batch(
    root: &Path,
    jobs: &[(usize, &ManifestEntry, f64)],
    cfg: &PipelineConfig,
    epoch: usize,
    workers: usize,
) -> Result<Vec<PreparedSample>, Error> {
    if workers <= 1 || jobs.len() <= 1 {
        return jobs
            .iter()
            .map(|(slot, entry, w)| prepare_one(root, entry, cfg, *w, epoch, *slot))
            .collect();
    }
    let chunk = jobs.len().div_ceil(workers);
    let mut results: Vec<Option<Result<PreparedSample, Error>>> =
        (0..jobs.len()).map(|_| None).collect();
    std::thread::scope(|scope| {
        for (piece, out) in jobs.chunks(chunk).zip(results.chunks_mut(chunk)) {
            scope.spawn(move || {
                for ((slot, entry, w), slot_out) in piece.iter().zip(out.iter_mut()) {
                    *slot_out = Some(prepare_one(root, entry, cfg, *w, epoch, *slot));
                }
            });
        }
    });
    results
        .into_iter()
        .map(|r| r.expect("worker filled slot"))
        .collect()
}

fn mixup_batch(
    batch: &mut [PreparedSample],
    cfg: &PipelineConfig,
    rng: &mut Stream,
) -> Result<(), Error> {
    if !cfg.mixup.enabled {
        return Ok(());
    }
    let originals: Vec<(Tensor, Label, f64)> = batch
        .iter()
        .map(|s| (s.x.clone(), s.label, s.weight))
        .collect();
    for i in 0..batch.len() {
        let peers: Vec<usize> = (0..originals.len())
            .filter(|&j| j != i && originals[j].1 == originals[i].1)
            .collect();
        if peers.is_empty() {
            continue; // lone class member passes through unmixed
        }
        let j = peers[rng.below(peers.len())];
        let lambda = sample_mix_lambda(rng, &cfg.mixup);
        let y = originals[i].1.one_hot();
        let (mixed, _) = intra_class_mixup(&originals[i].0, &originals[j].0, &y, &y, lambda)?;
        batch[i].x = mixed;
        batch[i].weight = lambda * originals[i].2 + (1.0 - lambda) * originals[j].2;
    }
    Ok(())
}

fn stack_batch(batch: &[PreparedSample], mcfg: &ModelConfig) -> (Tensor, Tensor, Vec<f64>, Vec<Label>) {
    let n = batch.len();
    let (h, w, c) = (mcfg.height, mcfg.width, mcfg.in_channels);
    let mut x = Vec::with_capacity(n * h * w * c);
    let mut one_hot = Vec::with_capacity(n * 2);
    let mut weights = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for s in batch {
        x.extend_from_slice(s.x.data());
        one_hot.extend_from_slice(s.label.one_hot().data());
        weights.push(s.weight);
        labels.push(s.label);
    }
    (
        Tensor::new(&[n, h, w, c], x).expect("stack"),
        Tensor::new(&[n, 2], one_hot).expect("one-hot"),
        weights,
        labels,
    )
}

// ── training state and loop ───────────────────────────────────────────────

pub struct TrainState {
    pub params: ModelParams,
    pub bank: EmbeddingBank,
    pub step: usize,
    pub epoch: usize,
    pub total_steps: usize,
}

#[derive(Debug, Clone)]
pub struct EpochReport {
    pub epoch: usize,
    pub steps: usize,
    pub mean_total: f64,
    pub mean_focal: f64,
    pub mean_supcon: f64,
    pub lr_trace: Vec<f64>,
    pub bank_len: usize,
}

impl EpochReport {
    pub fn log_line(&self) -> String {
        format!(
            "epoch={} steps={} loss={:.6} focal={:.6} supcon={:.6} lr_first={:.6} lr_last={:.6} bank={}",
            self.epoch,
            self.steps,
            self.mean_total,
            self.mean_focal,
            self.mean_supcon,
            self.lr_trace.first().copied().unwrap_or(0.0),
            self.lr_trace.last().copied().unwrap_or(0.0),
            self.bank_len
        )
    }
}

pub struct TrainOutcome {
    pub params: ModelParams,
    pub reports: Vec<EpochReport>,
}

/// Per-sample weights for the focal term: ROR weights over the
/// pre-oversampling manifest, or all ones when disabled.
pub fn resolve_ror_weights(
    root: &Path,
    manifest: &DatasetManifest,
    ror: &RorConfig,
    seed: u64,
) -> Result<BTreeMap<String, f64>, Error> {
    if !ror.enabled {
        return Ok(manifest
            .entries
            .iter()
            .map(|e| (e.id.clone(), 1.0))
            .collect());
    }
    let mut fakes = Vec::new();
    let mut reals = Vec::new();
    for entry in &manifest.entries {
        let sample = load_sample(root, entry)?;
        match entry.label {
            Label::Fake => fakes.push(sample),
            Label::Real => reals.push(sample),
        }
    }
    let weights = match &ror.embeddings {
        Some(path) => {
            let provider = FileEmbeddingProvider::load(path)?;
            compute_ror_weights(&fakes, &reals, &provider)?
        }
        None => {
            let provider = RandomProjectionEmbedder::new(seed ^ 0x526f_5200, ror.dim);
            compute_ror_weights(&fakes, &reals, &provider)?
        }
    };
    Ok(weights)
}

/// One pass over the (already oversampled) entries. Mutates the state in
/// place and returns the epoch report.
pub fn train_epoch(
    state: &mut TrainState,
    root: &Path,
    entries: &[ManifestEntry],
    weights_by_id: &BTreeMap<String, f64>,
    cfg: &PipelineConfig,
    workers: usize,
) -> Result<EpochReport, Error> {
    let epoch = state.epoch;
    let mut order: Vec<usize> = (0..entries.len()).collect();
    Stream::derive(cfg.train.seed, &[TAG_ORDER, epoch as u64]).shuffle(&mut order);
    let mut mix_rng = Stream::derive(cfg.train.seed, &[TAG_MIX, epoch as u64]);

    let mut lr_trace = Vec::new();
    let (mut sum_total, mut sum_focal, mut sum_supcon) = (0.0, 0.0, 0.0);
    let mut steps = 0usize;

    for chunk in order.chunks(cfg.train.batch_size) {
        let lr = cosine_lr(state.step, state.total_steps, cfg.train.lr_max, cfg.train.lr_min)?;
        lr_trace.push(lr);

        let jobs: Vec<(usize, &ManifestEntry, f64)> = chunk
            .iter()
            .map(|&idx| {
                let e = &entries[idx];
                (idx, e, weights_by_id.get(&e.id).copied().unwrap_or(1.0))
            })
            .collect();
        let mut batch = prepare_batch(root, &jobs, cfg, epoch, workers)?;
        mixup_batch(&mut batch, cfg, &mut mix_rng)?;
        let (x, one_hot, weights, labels) = stack_batch(&batch, &cfg.model);

        // first call records components and clean embeddings for the bank
        let mut first: Option<(f64, f64, Vec<Vec<f64>>)> = None;
        let bank = &state.bank;
        let mut eval = |tensors: &[Tensor]| -> Result<StepEval, Error> {
            let mut g = Graph::new();
            let pv = ParamVars::var_slice(&mut g, tensors);
            let xv = g.constant(x.clone());
            let out = model_forward(&mut g, xv, &pv, &cfg.model)?;
            let l_c = focal_loss(&mut g, out.logits, &one_hot, &weights, cfg.loss.gamma)?;
            let l_scl = supcon_loss(&mut g, out.z, &labels, bank, &cfg.loss)?;
            let total = total_loss(&mut g, l_c, l_scl, cfg.loss.lambda_scl)?;
            g.backward(total)?;
            if first.is_none() {
                let d = cfg.model.d_proj;
                let rows = g
                    .value(out.z)
                    .data()
                    .chunks(d)
                    .map(|r| r.to_vec())
                    .collect();
                first = Some((g.value(l_c).item(), g.value(l_scl).item(), rows));
            }
            let grads = pv
                .vars
                .iter()
                .map(|v| g.grad(*v).expect("param grad"))
                .collect();
            Ok(StepEval {
                loss: g.value(total).item(),
                grads,
            })
        };

        let mut tensors: Vec<Tensor> = state.params.tensors().iter().map(|t| (*t).clone()).collect();
        let loss = asam_step(
            &mut tensors,
            &mut eval,
            lr,
            cfg.train.asam_rho,
            cfg.train.asam_eta,
            cfg.train.weight_decay,
        )
        .map_err(|e| numerical_context(e, state.step, lr))?;
        let (l_c, l_scl, z_rows) = first.expect("first eval ran");
        if !loss.is_finite() || !l_c.is_finite() || !l_scl.is_finite() {
            return Err(TrainError::NumericalAbort {
                step: state.step,
                lr,
                focal: l_c,
                supcon: l_scl,
            }
            .into());
        }
        state.params = ModelParams::from_tensors(tensors);

        let bank_batch: Vec<BankEntry> = z_rows
            .into_iter()
            .zip(&labels)
            .zip(&weights)
            .map(|((z, label), weight)| BankEntry {
                z,
                label: *label,
                weight: *weight,
            })
            .collect();
        state.bank.push_batch(&bank_batch);

        sum_total += loss;
        sum_focal += l_c;
        sum_supcon += l_scl;
        steps += 1;
        state.step += 1;
    }

    state.epoch += 1;
    Ok(EpochReport {
        epoch,
        steps,
        mean_total: sum_total / steps.max(1) as f64,
        mean_focal: sum_focal / steps.max(1) as f64,
        mean_supcon: sum_supcon / steps.max(1) as f64,
        lr_trace,
        bank_len: state.bank.len(),
    })
}

// A non-finite value surfacing from the graph during a step is a numerical
// abort, annotated with the step context.
fn numerical_context(e: Error, step: usize, lr: f64) -> Error {
    match e {
        Error::Tensor(TensorError::NonFinite { .. }) => TrainError::NumericalAbort {
            step,
            lr,
            focal: f64::NAN,
            supcon: f64::NAN,
        }
        .into(),
        other => other,
    }
}

/// Full run: resolve ROR weights, oversample, initialize, iterate epochs.
pub fn train(
    root: &Path,
    manifest: &DatasetManifest,
    cfg: &PipelineConfig,
    workers: usize,
) -> Result<TrainOutcome, Error> {
    cfg.validate()?;
    let weights_by_id = resolve_ror_weights(root, manifest, &cfg.ror, cfg.train.seed)?;
    let balanced = oversample_balance(manifest, cfg.train.seed)?;
    let steps_per_epoch = balanced.entries.len().div_ceil(cfg.train.batch_size);
    let mut state = TrainState {
        params: ModelParams::init(
            &cfg.model,
            &mut Stream::derive(cfg.train.seed, &[TAG_INIT]),
        ),
        bank: EmbeddingBank::new(cfg.loss.xbm_capacity),
        step: 0,
        epoch: 0,
        total_steps: (cfg.train.epochs * steps_per_epoch).max(1),
    };
    let mut reports = Vec::with_capacity(cfg.train.epochs);
    for _ in 0..cfg.train.epochs {
        let report = train_epoch(
            &mut state,
            root,
            &balanced.entries,
            &weights_by_id,
            cfg,
            workers,
        )?;
        reports.push(report);
    }
    Ok(TrainOutcome {
        params: state.params,
        reports,
    })
}

pub fn write_train_log(path: &Path, reports: &[EpochReport]) -> Result<(), TrainError> {
    let mut out = String::new();
    for r in reports {
        writeln!(out, "{}", r.log_line()).unwrap();
    }
    fs::write(path, out).map_err(|e| TrainError::Io(path.to_path_buf(), e))
}

// ── evaluation ────────────────────────────────────────────────────────────

/// Fake-class softmax probability per sample, no augmentation or mixup.
pub fn score_manifest(
    params: &ModelParams,
    mcfg: &ModelConfig,
    root: &Path,
    manifest: &DatasetManifest,
) -> Result<BTreeMap<String, f64>, Error> {
    if manifest.is_empty() {
        return Err(crate::error::DataError::EmptyManifest.into());
    }
    let mut scores = BTreeMap::new();
    for chunk in manifest.entries.chunks(64) {
        let n = chunk.len();
        let mut x = Vec::with_capacity(n * mcfg.height * mcfg.width * mcfg.in_channels);
        for entry in chunk {
            let sample = load_sample(root, entry)?;
            x.extend_from_slice(sample.concat_channels().data());
        }
        let mut g = Graph::new();
        let xv = g.constant(Tensor::new(
            &[n, mcfg.height, mcfg.width, mcfg.in_channels],
            x,
        )?);
        let pv = ParamVars::constant(&mut g, params);
        let out = model_forward(&mut g, xv, &pv, mcfg)?;
        let probs = g.softmax_last(out.logits)?;
        for (i, entry) in chunk.iter().enumerate() {
            scores.insert(entry.id.clone(), g.value(probs).data()[i * 2 + 1]);
        }
    }
    Ok(scores)
}

/// Score a labeled manifest and compute the error-rate report at `threshold`.
pub fn evaluate(
    params: &ModelParams,
    mcfg: &ModelConfig,
    root: &Path,
    manifest: &DatasetManifest,
    threshold: f64,
) -> Result<MetricsReport, Error> {
    let scores = score_manifest(params, mcfg, root, manifest)?;
    let labels: BTreeMap<String, Label> = manifest
        .entries
        .iter()
        .map(|e| (e.id.clone(), e.label))
        .collect();
    let counts = confusion(&scores, &labels, threshold)?;
    Ok(acer_report(counts, threshold)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cosine_endpoints_and_midpoint() {
        assert!((cosine_lr(0, 100, 0.01, 0.0).unwrap() - 0.01).abs() < 1e-12);
        assert!((cosine_lr(100, 100, 0.01, 0.0).unwrap() - 0.0).abs() < 1e-12);
        assert!((cosine_lr(50, 100, 0.01, 0.0).unwrap() - 0.005).abs() < 1e-12);
        assert!((cosine_lr(30, 30, 0.02, 0.001).unwrap() - 0.001).abs() < 1e-12);
        assert!(matches!(
            cosine_lr(101, 100, 0.01, 0.0).unwrap_err(),
            TrainError::LrStepOutOfRange { .. }
        ));
    }

    #[test]
    fn lr_trace_is_non_increasing() {
        let mut prev = f64::INFINITY;
        for t in 0..=200 {
            let lr = cosine_lr(t, 200, 0.01, 0.0).unwrap();
            assert!(lr <= prev + 1e-15);
            prev = lr;
        }
    }

    fn quadratic_eval(coeffs: Vec<f64>) -> impl FnMut(&[Tensor]) -> Result<StepEval, Error> {
        move |params: &[Tensor]| {
            let w = params[0].data();
            let loss: f64 = w.iter().zip(&coeffs).map(|(wv, a)| a * wv * wv).sum();
            let grads = vec![Tensor::new(
                params[0].shape(),
                w.iter().zip(&coeffs).map(|(wv, a)| 2.0 * a * wv).collect(),
            )
            .unwrap()];
            Ok(StepEval { loss, grads })
        }
    }

    #[test]
    fn asam_hand_computed_1d_step() {
        // f(w) = w^2, w = 1, eta = 0, rho = 0.1, lr = 0.1, wd = 0:
        // eps = 0.1, g' = 2.2, w -> 1 - 0.22 = 0.78
        let mut params = vec![Tensor::scalar(1.0)];
        let mut eval = quadratic_eval(vec![1.0]);
        let loss = asam_step(&mut params, &mut eval, 0.1, 0.1, 0.0, 0.0).unwrap();
        assert!((loss - 1.0).abs() < 1e-12);
        assert!((params[0].item() - 0.78).abs() < 1e-12);
    }

    #[test]
    fn asam_rho_zero_is_plain_descent() {
        let mut a = vec![Tensor::new(&[3], vec![0.5, -1.0, 2.0]).unwrap()];
        let mut b = a.clone();
        let mut eval_a = quadratic_eval(vec![1.0, 2.0, 0.5]);
        asam_step(&mut a, &mut eval_a, 0.05, 0.0, 0.01, 0.1).unwrap();
        // manual: w - lr*(g + wd*w)
        let coeffs = [1.0, 2.0, 0.5];
        for (i, w) in b[0].data_mut().iter_mut().enumerate() {
            let g = 2.0 * coeffs[i] * *w;
            *w -= 0.05 * (g + 0.1 * *w);
        }
        for i in 0..3 {
            assert!((a[0].data()[i] - b[0].data()[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn asam_ascent_does_not_decrease_convex_loss() {
        let mut rng = Stream::seed_from(55);
        for _ in 0..100 {
            let dim = 1 + rng.below(5);
            let coeffs: Vec<f64> = (0..dim).map(|_| rng.range(0.1, 2.0)).collect();
            let start: Vec<f64> = (0..dim).map(|_| rng.range(-2.0, 2.0)).collect();
            let mut params = vec![Tensor::new(&[dim], start).unwrap()];
            let losses = std::cell::RefCell::new(Vec::new());
            let mut eval = |ps: &[Tensor]| {
                let w = ps[0].data();
                let loss: f64 = w.iter().zip(&coeffs).map(|(wv, a)| a * wv * wv).sum();
                losses.borrow_mut().push(loss);
                let grads = vec![Tensor::new(
                    ps[0].shape(),
                    w.iter().zip(&coeffs).map(|(wv, a)| 2.0 * a * wv).collect(),
                )
                .unwrap()];
                Ok(StepEval { loss, grads })
            };
            asam_step(&mut params, &mut eval, 0.01, 0.3, 0.05, 0.0).unwrap();
            let seen = losses.borrow();
            if seen.len() == 2 {
                assert!(
                    seen[1] >= seen[0] - 1e-12,
                    "ascent lowered loss: {seen:?}"
                );
            }
        }
    }

    #[test]
    fn asam_skips_ascent_on_zero_gradient() {
        let mut params = vec![Tensor::scalar(0.0)];
        let mut calls = 0;
        let mut eval = |ps: &[Tensor]| {
            calls += 1;
            Ok(StepEval {
                loss: 0.0,
                grads: vec![Tensor::new(ps[0].shape(), vec![0.0]).unwrap()],
            })
        };
        asam_step(&mut params, &mut eval, 0.1, 0.5, 0.01, 0.0).unwrap();
        assert_eq!(calls, 1);
        assert_eq!(params[0].item(), 0.0);
    }
}
