//! Intra-class mixup and real-face oriented reweighting (ROR).
//!
//! Mixup interpolates two samples of the same class; the shared one-hot
//! label passes through bit-exactly. ROR weights each fake sample by its
//! best cosine similarity to any real sample, mapped to [0, 1]; real
//! samples keep weight 1. The face embedder is pluggable so precomputed
//! vectors from a production face model can be dropped in.

use std::cell::RefCell;
use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::Path;

use spfas_autograd::Tensor;

use crate::dataio::SpectralSample;
use crate::error::StrategyError;
use crate::rng::Stream;

#[derive(Debug, Clone)]
pub struct MixupConfig {
    /// Both Beta shape parameters; 1.0 draws lambda uniformly.
    pub alpha: f64,
    pub enabled: bool,
}

impl Default for MixupConfig {
    fn default() -> Self {
        MixupConfig {
            alpha: 1.0,
            enabled: true,
        }
    }
}

/// `lambda ~ Beta(alpha, alpha)`.
pub fn sample_mix_lambda(rng: &mut Stream, cfg: &MixupConfig) -> f64 {
    debug_assert!(cfg.alpha > 0.0);
    rng.beta(cfg.alpha, cfg.alpha)
}

/// Convex combination of two same-class samples:
/// `x = lambda * x_i + (1 - lambda) * x_j`. Because the labels are equal
/// one-hots, their convex combination is the shared label itself, which is
/// returned unchanged rather than recomputed in floating point.
pub fn intra_class_mixup(
    x_i: &Tensor,
    x_j: &Tensor,
    y_i: &Tensor,
    y_j: &Tensor,
    lambda: f64,
) -> Result<(Tensor, Tensor), StrategyError> {
    if y_i != y_j {
        return Err(StrategyError::CrossClassPair);
    }
    if !(0.0..=1.0).contains(&lambda) {
        return Err(StrategyError::LambdaOutOfRange(lambda));
    }
    if x_i.shape() != x_j.shape() {
        return Err(StrategyError::MixShapeMismatch {
            lhs: x_i.shape().to_vec(),
            rhs: x_j.shape().to_vec(),
        });
    }
    let data: Vec<f64> = x_i
        .data()
        .iter()
        .zip(x_j.data())
        .map(|(a, b)| lambda * a + (1.0 - lambda) * b)
        .collect();
    let mixed = Tensor::new(x_i.shape(), data).expect("same shape");
    Ok((mixed, y_i.clone()))
}

// ── embedding providers ──────────────────────────────────────────────────

/// Face embedder used by ROR. Implementations must return unit-norm vectors.
pub trait EmbeddingProvider {
    fn embed(&self, sample: &SpectralSample) -> Result<Vec<f64>, StrategyError>;
    fn dim(&self) -> usize;
}

/// Deterministic random-projection embedder over the RGB plane. A fixed
/// seeded Gaussian matrix maps the flattened RGB values to `dim` outputs,
/// which are then L2-normalized. Stands in for a pretrained face model at
/// desk scale.
pub struct RandomProjectionEmbedder {
    seed: u64,
    dim: usize,
    // projection matrix cached per observed input length
    cache: RefCell<HashMap<usize, Vec<f64>>>,
}

impl RandomProjectionEmbedder {
    pub fn new(seed: u64, dim: usize) -> Self {
        assert!(dim > 0);
        RandomProjectionEmbedder {
            seed,
            dim,
            cache: RefCell::new(HashMap::new()),
        }
    }

    fn matrix_for(&self, input_len: usize) -> std::cell::Ref<'_, HashMap<usize, Vec<f64>>> {
        {
            let mut cache = self.cache.borrow_mut();
            cache.entry(input_len).or_insert_with(|| {
                let mut s = Stream::derive(self.seed, &[0xe3, input_len as u64]);
                let scale = 1.0 / (input_len as f64).sqrt();
                (0..self.dim * input_len)
                    .map(|_| s.normal() * scale)
                    .collect()
            });
        }
        self.cache.borrow()
    }
}

impl EmbeddingProvider for RandomProjectionEmbedder {
    fn embed(&self, sample: &SpectralSample) -> Result<Vec<f64>, StrategyError> {
        let input = sample.rgb.data();
        let cache = self.matrix_for(input.len());
        let m = cache.get(&input.len()).expect("cached");
        let mut out = vec![0.0; self.dim];
        for (r, o) in out.iter_mut().enumerate() {
            let row = &m[r * input.len()..(r + 1) * input.len()];
            *o = row.iter().zip(input).map(|(a, b)| a * b).sum();
        }
        let norm = out.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Err(StrategyError::ZeroNormEmbedding {
                id: sample.id.clone(),
            });
        }
        out.iter_mut().for_each(|v| *v /= norm);
        Ok(out)
    }

    fn dim(&self) -> usize {
        self.dim
    }
}

/// Looks embeddings up in a file of `id<TAB>v0<TAB>v1...` rows.
pub struct FileEmbeddingProvider {
    map: HashMap<String, Vec<f64>>,
    dim: usize,
}

impl FileEmbeddingProvider {
    pub fn load(path: &Path) -> Result<Self, StrategyError> {
        let text =
            fs::read_to_string(path).map_err(|e| StrategyError::Io(path.to_path_buf(), e))?;
        let mut map = HashMap::new();
        let mut dim = 0usize;
        for (i, line) in text.lines().enumerate() {
            if line.is_empty() {
                continue;
            }
            let mut fields = line.split('\t');
            let id = fields.next().unwrap_or_default().to_string();
            let values: Result<Vec<f64>, _> = fields.map(|f| f.parse::<f64>()).collect();
            let values = values.map_err(|e| StrategyError::EmbeddingParse {
                path: path.to_path_buf(),
                line: i + 1,
                msg: e.to_string(),
            })?;
            if id.is_empty() || values.is_empty() {
                return Err(StrategyError::EmbeddingParse {
                    path: path.to_path_buf(),
                    line: i + 1,
                    msg: "expected id and at least one value".into(),
                });
            }
            if dim == 0 {
                dim = values.len();
            } else if values.len() != dim {
                return Err(StrategyError::EmbeddingParse {
                    path: path.to_path_buf(),
                    line: i + 1,
                    msg: format!("expected {dim} values, got {}", values.len()),
                });
            }
            map.insert(id, values);
        }
        Ok(FileEmbeddingProvider { map, dim })
    }
}

impl EmbeddingProvider for FileEmbeddingProvider {
    fn embed(&self, sample: &SpectralSample) -> Result<Vec<f64>, StrategyError> {
        self.map
            .get(&sample.id)
            .cloned()
            .ok_or_else(|| StrategyError::MissingEmbedding {
                id: sample.id.clone(),
            })
    }

    fn dim(&self) -> usize {
        self.dim
    }
}

/// Write embeddings in the `FileEmbeddingProvider` format, manifest order.
pub fn write_embeddings(
    path: &Path,
    rows: &[(String, Vec<f64>)],
) -> Result<(), StrategyError> {
    let mut out = String::new();
    for (id, values) in rows {
        out.push_str(id);
        for v in values {
            out.push('\t');
            out.push_str(&format!("{v:.17e}"));
        }
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| StrategyError::Io(path.to_path_buf(), e))
}

// ── real-face oriented reweighting ───────────────────────────────────────

fn unit_embedding(
    provider: &dyn EmbeddingProvider,
    sample: &SpectralSample,
) -> Result<Vec<f64>, StrategyError> {
    let mut e = provider.embed(sample)?;
    let norm = e.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm == 0.0 {
        return Err(StrategyError::ZeroNormEmbedding {
            id: sample.id.clone(),
        });
    }
    if (norm - 1.0).abs() > 1e-9 {
        eprintln!(
            "warning: embedding for {} has norm {norm}; normalizing",
            sample.id
        );
        e.iter_mut().for_each(|v| *v /= norm);
    }
    Ok(e)
}

/// Weight of each fake sample: `max_j (1 + cos(e_fake, e_real_j)) / 2`,
/// clamped to [0, 1]. Real samples receive weight 1.0. The returned map
/// covers every sample passed in.
pub fn compute_ror_weights(
    fakes: &[SpectralSample],
    reals: &[SpectralSample],
    provider: &dyn EmbeddingProvider,
) -> Result<BTreeMap<String, f64>, StrategyError> {
    if reals.is_empty() {
        return Err(StrategyError::EmptyRealSet);
    }
    let real_embeddings: Vec<Vec<f64>> = reals
        .iter()
        .map(|r| unit_embedding(provider, r))
        .collect::<Result<_, _>>()?;
    let mut weights = BTreeMap::new();
    for r in reals {
        weights.insert(r.id.clone(), 1.0);
    }
    for fake in fakes {
        let e = unit_embedding(provider, fake)?;
        let best = real_embeddings
            .iter()
            .map(|re| re.iter().zip(&e).map(|(a, b)| a * b).sum::<f64>())
            .fold(f64::NEG_INFINITY, f64::max);
        let w = ((1.0 + best) / 2.0).clamp(0.0, 1.0);
        weights.insert(fake.id.clone(), w);
    }
    Ok(weights)
}
