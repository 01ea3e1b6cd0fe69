//! Compact spectral network: a per-channel spectral weight layer, a central
//! difference convolution as the first conv, two further stride-2 conv
//! blocks, attention-pooled features, and twin heads (classifier logits and
//! a unit-norm contrastive projection).

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use spfas_autograd::{Graph, Tensor, TensorError, Var};

use crate::dataio::TOTAL_CHANNELS;
use crate::error::TrainError;
use crate::rng::Stream;

pub const CHECKPOINT_MAGIC: &str = "SPFC 1";

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub height: usize,
    pub width: usize,
    pub in_channels: usize,
    /// Channels of the three stride-2 conv blocks (the first is the CDC).
    pub conv_channels: [usize; 3],
    /// Attention maps in the pooled feature stage.
    pub attn_maps: usize,
    /// Contrastive projection width.
    pub d_proj: usize,
    /// Central-difference mixing factor in [0, 1].
    pub theta: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            height: 64,
            width: 64,
            in_channels: TOTAL_CHANNELS,
            conv_channels: [16, 32, 64],
            attn_maps: 4,
            d_proj: 128,
            theta: 0.7,
        }
    }
}

impl ModelConfig {
    /// Tiny configuration for gradient checks and fast tests.
    pub fn tiny(height: usize, width: usize) -> Self {
        ModelConfig {
            height,
            width,
            in_channels: TOTAL_CHANNELS,
            conv_channels: [4, 6, 8],
            attn_maps: 2,
            d_proj: 8,
            theta: 0.7,
        }
    }

    fn conv_out(side: usize) -> usize {
        // 3x3 kernel, stride 2, pad 1
        (side - 1) / 2 + 1
    }

    /// Spatial dims after the three stride-2 blocks.
    pub fn feature_dims(&self) -> (usize, usize) {
        let h = Self::conv_out(Self::conv_out(Self::conv_out(self.height)));
        let w = Self::conv_out(Self::conv_out(Self::conv_out(self.width)));
        (h, w)
    }

    /// Pooled feature width: attention maps times last conv channels.
    pub fn d_feat(&self) -> usize {
        self.attn_maps * self.conv_channels[2]
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        if !(0.0..=1.0).contains(&self.theta) {
            return Err(TrainError::InvalidConfig(format!(
                "theta {} outside [0, 1]",
                self.theta
            )));
        }
        if self.height < 8 || self.width < 8 {
            return Err(TrainError::InvalidConfig(
                "model needs at least 8x8 inputs".into(),
            ));
        }
        if self.attn_maps == 0 || self.d_proj == 0 {
            return Err(TrainError::InvalidConfig(
                "attn_maps and d_proj must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// All learnable tensors, in checkpoint order.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub spectral_weights: Tensor, // [C]
    pub cdc_kernel: Tensor,       // [3,3,C,c1]
    pub cdc_bias: Tensor,         // [c1]
    pub conv2_kernel: Tensor,     // [3,3,c1,c2]
    pub conv2_bias: Tensor,       // [c2]
    pub conv3_kernel: Tensor,     // [3,3,c2,c3]
    pub conv3_bias: Tensor,       // [c3]
    pub attn_kernel: Tensor,      // [1,1,c3,a]
    pub attn_bias: Tensor,        // [a]
    pub classifier_w: Tensor,     // [d_feat,2]
    pub classifier_b: Tensor,     // [2]
    pub projector_w: Tensor,      // [d_feat,d_proj]
    pub projector_b: Tensor,      // [d_proj]
}

pub const PARAM_NAMES: [&str; 13] = [
    "spectral_weights",
    "cdc_kernel",
    "cdc_bias",
    "conv2_kernel",
    "conv2_bias",
    "conv3_kernel",
    "conv3_bias",
    "attn_kernel",
    "attn_bias",
    "classifier_w",
    "classifier_b",
    "projector_w",
    "projector_b",
];

impl ModelParams {
    /// He-style random initialization; spectral weights start at identity.
    pub fn init(cfg: &ModelConfig, rng: &mut Stream) -> Self {
        let [c1, c2, c3] = cfg.conv_channels;
        let cin = cfg.in_channels;
        let he = |rng: &mut Stream, shape: &[usize], fan_in: usize| {
            let std = (2.0 / fan_in as f64).sqrt();
            Tensor::from_fn(shape, |_| rng.normal() * std)
        };
        let linear = |rng: &mut Stream, shape: &[usize], fan_in: usize| {
            let std = (1.0 / fan_in as f64).sqrt();
            Tensor::from_fn(shape, |_| rng.normal() * std)
        };
        ModelParams {
            spectral_weights: Tensor::ones(&[cin]),
            cdc_kernel: he(rng, &[3, 3, cin, c1], 9 * cin),
            cdc_bias: Tensor::zeros(&[c1]),
            conv2_kernel: he(rng, &[3, 3, c1, c2], 9 * c1),
            conv2_bias: Tensor::zeros(&[c2]),
            conv3_kernel: he(rng, &[3, 3, c2, c3], 9 * c2),
            conv3_bias: Tensor::zeros(&[c3]),
            attn_kernel: he(rng, &[1, 1, c3, cfg.attn_maps], c3),
            attn_bias: Tensor::zeros(&[cfg.attn_maps]),
            classifier_w: linear(rng, &[cfg.d_feat(), 2], cfg.d_feat()),
            classifier_b: Tensor::zeros(&[2]),
            projector_w: linear(rng, &[cfg.d_feat(), cfg.d_proj], cfg.d_feat()),
            projector_b: Tensor::zeros(&[cfg.d_proj]),
        }
    }

    pub fn tensors(&self) -> [&Tensor; 13] {
        [
            &self.spectral_weights,
            &self.cdc_kernel,
            &self.cdc_bias,
            &self.conv2_kernel,
            &self.conv2_bias,
            &self.conv3_kernel,
            &self.conv3_bias,
            &self.attn_kernel,
            &self.attn_bias,
            &self.classifier_w,
            &self.classifier_b,
            &self.projector_w,
            &self.projector_b,
        ]
    }

    pub fn tensors_mut(&mut self) -> [&mut Tensor; 13] {
        [
            &mut self.spectral_weights,
            &mut self.cdc_kernel,
            &mut self.cdc_bias,
            &mut self.conv2_kernel,
            &mut self.conv2_bias,
            &mut self.conv3_kernel,
            &mut self.conv3_bias,
            &mut self.attn_kernel,
            &mut self.attn_bias,
            &mut self.classifier_w,
            &mut self.classifier_b,
            &mut self.projector_w,
            &mut self.projector_b,
        ]
    }

    pub fn from_tensors(tensors: Vec<Tensor>) -> Self {
        let mut it = tensors.into_iter();
        let mut next = || it.next().expect("13 tensors");
        ModelParams {
            spectral_weights: next(),
            cdc_kernel: next(),
            cdc_bias: next(),
            conv2_kernel: next(),
            conv2_bias: next(),
            conv3_kernel: next(),
            conv3_bias: next(),
            attn_kernel: next(),
            attn_bias: next(),
            classifier_w: next(),
            classifier_b: next(),
            projector_w: next(),
            projector_b: next(),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.is_finite())
    }
}

/// Graph handles for the parameters of one forward pass.
pub struct ParamVars {
    pub vars: Vec<Var>,
}

impl ParamVars {
    /// Enter every parameter as a differentiable leaf.
    pub fn var(g: &mut Graph, params: &ModelParams) -> Self {
        ParamVars {
            vars: params.tensors().iter().map(|t| g.var((*t).clone())).collect(),
        }
    }

    /// Enter parameters as constants (evaluation only).
    pub fn constant(g: &mut Graph, params: &ModelParams) -> Self {
        ParamVars {
            vars: params
                .tensors()
                .iter()
                .map(|t| g.constant((*t).clone()))
                .collect(),
        }
    }

    /// Enter a raw tensor list (checkpoint order) as differentiable leaves.
    pub fn var_slice(g: &mut Graph, tensors: &[Tensor]) -> Self {
        ParamVars {
            vars: tensors.iter().map(|t| g.var(t.clone())).collect(),
        }
    }

    fn get(&self, i: usize) -> Var {
        self.vars[i]
    }
}

/// Model outputs for a batch.
pub struct ModelOutput {
    /// `[N, 2]` raw class scores.
    pub logits: Var,
    /// `[N, d_proj]` unit-norm projections.
    pub z: Var,
}

/// Scale each input channel: `out[..., c] = s[c] * x[..., c]`.
pub fn spectral_weight_layer(g: &mut Graph, x: Var, s: Var) -> Result<Var, TensorError> {
    g.mul(x, s)
}

/// Central difference convolution:
/// `y = conv(x, k) - theta * centers(x) * sum_spatial(k)`, which equals
/// `(1-theta) * conv + theta * (conv - center term)`. The center-pixel term
/// is itself a 1x1 convolution of the strided center samples with the
/// spatially summed kernel, so gradients reach the kernel through both
/// paths. `theta = 0` collapses to the vanilla convolution.
pub fn cdc_conv(
    g: &mut Graph,
    x: Var,
    kernel: Var,
    theta: f64,
    stride: usize,
    pad: usize,
) -> Result<Var, TensorError> {
    let vanilla = g.conv2d(x, kernel, stride, pad)?;
    if theta == 0.0 {
        return Ok(vanilla);
    }
    let ks = g.value(kernel).shape().to_vec();
    let (kh, kw) = (ks[0], ks[1]);
    let out_shape = g.value(vanilla).shape().to_vec();
    let off_h = (kh as isize - 1) / 2 - pad as isize;
    let off_w = (kw as isize - 1) / 2 - pad as isize;
    let centers = g.strided_sample(x, off_h, off_w, stride, out_shape[1], out_shape[2])?;
    let summed_rows = g.sum_axis(kernel, 0)?;
    let summed = g.sum_axis(summed_rows, 0)?; // [ci, co]
    let ksum = g.reshape(summed, &[1, 1, ks[2], ks[3]])?;
    let center_term = g.conv2d(centers, ksum, 1, 0)?;
    let scaled = g.mul_scalar(center_term, theta)?;
    g.sub(vanilla, scaled)
}

/// Attention-pooled features: `attn_maps` spatial softmax maps from a 1x1
/// conv, each pooling the feature map into one vector; maps concatenated.
pub fn mat_lite_forward(
    g: &mut Graph,
    features: Var,
    attn_kernel: Var,
    attn_bias: Var,
) -> Result<Var, TensorError> {
    let fs = g.value(features).shape().to_vec();
    let (n, hf, wf, cf) = (fs[0], fs[1], fs[2], fs[3]);
    let a = g.value(attn_kernel).shape()[3];
    let logits = g.conv2d(features, attn_kernel, 1, 0)?;
    let logits = g.add(logits, attn_bias)?; // [n,hf,wf,a]
    let pixels = hf * wf;
    let f_flat = g.reshape(features, &[n, pixels, cf])?;
    let mut pooled = Vec::with_capacity(a);
    for m in 0..a {
        let map = g.slice(logits, 3, m, 1)?;
        let map = g.reshape(map, &[n, pixels])?;
        let attn = g.softmax_last(map)?;
        let attn = g.reshape(attn, &[n, pixels, 1])?;
        let weighted = g.mul(f_flat, attn)?;
        pooled.push(g.sum_axis(weighted, 1)?); // [n, cf]
    }
    g.concat(&pooled, 1)
}

fn conv_block(
    g: &mut Graph,
    x: Var,
    kernel: Var,
    bias: Var,
) -> Result<Var, TensorError> {
    let y = g.conv2d(x, kernel, 2, 1)?;
    let y = g.add(y, bias)?;
    g.relu(y)
}

/// Full forward pass: spectral weighting, CDC block, two conv blocks,
/// attention pooling, then classifier logits and the normalized projection.
pub fn model_forward(
    g: &mut Graph,
    x: Var,
    params: &ParamVars,
    cfg: &ModelConfig,
) -> Result<ModelOutput, TensorError> {
    let xs = g.value(x).shape().to_vec();
    if xs.len() != 4 || xs[1] != cfg.height || xs[2] != cfg.width || xs[3] != cfg.in_channels {
        return Err(TensorError::ShapeMismatch {
            op: "model_forward",
            lhs: xs,
            rhs: vec![0, cfg.height, cfg.width, cfg.in_channels],
        });
    }
    let weighted = spectral_weight_layer(g, x, params.get(0))?;
    let c1 = cdc_conv(g, weighted, params.get(1), cfg.theta, 2, 1)?;
    let c1 = g.add(c1, params.get(2))?;
    let c1 = g.relu(c1)?;
    let c2 = conv_block(g, c1, params.get(3), params.get(4))?;
    let c3 = conv_block(g, c2, params.get(5), params.get(6))?;
    let feat = mat_lite_forward(g, c3, params.get(7), params.get(8))?;
    let logits = g.matmul(feat, params.get(9))?;
    let logits = g.add(logits, params.get(10))?;
    let proj = g.matmul(feat, params.get(11))?;
    let proj = g.add(proj, params.get(12))?;
    let z = g.l2_normalize_last(proj)?;
    Ok(ModelOutput { logits, z })
}

// ── checkpoints ───────────────────────────────────────────────────────────

/// Checkpoint layout: a text header (`SPFC 1`, `key = value` hyperparameters,
/// `tensors = N`), then per tensor a name/shape line followed by an `SPFS`
/// container blob holding the flattened values.
pub fn save_checkpoint(path: &Path, cfg: &ModelConfig, params: &ModelParams) -> Result<(), TrainError> {
    let mut head = String::new();
    writeln!(head, "{CHECKPOINT_MAGIC}").unwrap();
    writeln!(head, "height = {}", cfg.height).unwrap();
    writeln!(head, "width = {}", cfg.width).unwrap();
    writeln!(head, "in_channels = {}", cfg.in_channels).unwrap();
    writeln!(
        head,
        "conv_channels = {},{},{}",
        cfg.conv_channels[0], cfg.conv_channels[1], cfg.conv_channels[2]
    )
    .unwrap();
    writeln!(head, "attn_maps = {}", cfg.attn_maps).unwrap();
    writeln!(head, "d_proj = {}", cfg.d_proj).unwrap();
    writeln!(head, "theta = {}", cfg.theta).unwrap();
    writeln!(head, "tensors = {}", PARAM_NAMES.len()).unwrap();

    let mut bytes = head.into_bytes();
    for (name, tensor) in PARAM_NAMES.iter().zip(params.tensors()) {
        let dims: Vec<String> = tensor.shape().iter().map(|d| d.to_string()).collect();
        bytes.extend_from_slice(format!("{name} {}\n", dims.join(",")).as_bytes());
        bytes.extend_from_slice(&crate::dataio::MAGIC);
        bytes.extend_from_slice(&crate::dataio::VERSION.to_le_bytes());
        for d in [1u32, 1, tensor.numel() as u32] {
            bytes.extend_from_slice(&d.to_le_bytes());
        }
        for v in tensor.data() {
            bytes.extend_from_slice(&(*v as f32).to_le_bytes());
        }
    }
    fs::write(path, bytes).map_err(|e| TrainError::Io(path.to_path_buf(), e))
}

pub fn load_checkpoint(path: &Path) -> Result<(ModelConfig, ModelParams), TrainError> {
    let bytes = fs::read(path).map_err(|e| TrainError::Io(path.to_path_buf(), e))?;
    let bad = |msg: &str| TrainError::CheckpointFormat {
        path: path.to_path_buf(),
        msg: msg.to_string(),
    };
    let mut pos = 0usize;
    let read_line = |bytes: &[u8], pos: &mut usize| -> Result<String, TrainError> {
        let start = *pos;
        while *pos < bytes.len() && bytes[*pos] != b'\n' {
            *pos += 1;
        }
        if *pos >= bytes.len() {
            return Err(TrainError::CheckpointFormat {
                path: path.to_path_buf(),
                msg: "unexpected end of file in header".into(),
            });
        }
        let line = String::from_utf8(bytes[start..*pos].to_vec()).map_err(|_| {
            TrainError::CheckpointFormat {
                path: path.to_path_buf(),
                msg: "header is not UTF-8".into(),
            }
        })?;
        *pos += 1;
        Ok(line)
    };

    if read_line(&bytes, &mut pos)? != CHECKPOINT_MAGIC {
        return Err(bad("missing SPFC header"));
    }
    let mut cfg = ModelConfig::default();
    let tensor_count;
    loop {
        let line = read_line(&bytes, &mut pos)?;
        let (key, value) = line
            .split_once('=')
            .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
            .ok_or_else(|| bad(&format!("bad header line {line:?}")))?;
        match key.as_str() {
            "height" => cfg.height = value.parse().map_err(|_| bad("bad height"))?,
            "width" => cfg.width = value.parse().map_err(|_| bad("bad width"))?,
            "in_channels" => cfg.in_channels = value.parse().map_err(|_| bad("bad in_channels"))?,
            "conv_channels" => {
                let parts: Vec<usize> = value
                    .split(',')
                    .map(|p| p.trim().parse())
                    .collect::<Result<_, _>>()
                    .map_err(|_| bad("bad conv_channels"))?;
                if parts.len() != 3 {
                    return Err(bad("conv_channels needs 3 values"));
                }
                cfg.conv_channels = [parts[0], parts[1], parts[2]];
            }
            "attn_maps" => cfg.attn_maps = value.parse().map_err(|_| bad("bad attn_maps"))?,
            "d_proj" => cfg.d_proj = value.parse().map_err(|_| bad("bad d_proj"))?,
            "theta" => cfg.theta = value.parse().map_err(|_| bad("bad theta"))?,
            "tensors" => {
                tensor_count = value.parse::<usize>().map_err(|_| bad("bad tensor count"))?;
                break;
            }
            other => return Err(bad(&format!("unknown header key {other:?}"))),
        }
    }
    if tensor_count != PARAM_NAMES.len() {
        return Err(bad(&format!(
            "expected {} tensors, header says {tensor_count}",
            PARAM_NAMES.len()
        )));
    }

    let mut tensors = Vec::with_capacity(tensor_count);
    for expected_name in PARAM_NAMES {
        let line = read_line(&bytes, &mut pos)?;
        let (name, dims_txt) = line
            .split_once(' ')
            .ok_or_else(|| bad(&format!("bad tensor line {line:?}")))?;
        if name != expected_name {
            return Err(bad(&format!(
                "expected tensor {expected_name:?}, found {name:?}"
            )));
        }
        let dims: Vec<usize> = dims_txt
            .split(',')
            .map(|p| p.parse())
            .collect::<Result<_, _>>()
            .map_err(|_| bad("bad tensor dims"))?;
        let numel: usize = dims.iter().product();
        let blob_len = 18 + numel * 4;
        if pos + blob_len > bytes.len() {
            return Err(bad("tensor blob truncated"));
        }
        let blob = &bytes[pos..pos + blob_len];
        pos += blob_len;
        if blob[0..4] != crate::dataio::MAGIC {
            return Err(bad("tensor blob has bad magic"));
        }
        let data: Vec<f64> = blob[18..]
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)
            .collect();
        tensors.push(Tensor::new(&dims, data).map_err(|e| bad(&e.to_string()))?);
    }
    if pos != bytes.len() {
        return Err(bad("trailing bytes after tensors"));
    }
    Ok((cfg, ModelParams::from_tensors(tensors)))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn forward_once(cfg: &ModelConfig, params: &ModelParams, x: Tensor) -> (Tensor, Tensor) {
        let mut g = Graph::new();
        let xv = g.constant(x);
        let pv = ParamVars::constant(&mut g, params);
        let out = model_forward(&mut g, xv, &pv, cfg).unwrap();
        (g.value(out.logits).clone(), g.value(out.z).clone())
    }

    #[test]
    fn spectral_layer_scales_channels() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::ones(&[1, 2, 2, 3]));
        let s = g.constant(Tensor::new(&[3], vec![1.0, 0.0, 2.0]).unwrap());
        let y = spectral_weight_layer(&mut g, x, s).unwrap();
        for p in 0..4 {
            assert_eq!(g.value(y).data()[p * 3], 1.0);
            assert_eq!(g.value(y).data()[p * 3 + 1], 0.0);
            assert_eq!(g.value(y).data()[p * 3 + 2], 2.0);
        }
    }

    #[test]
    fn cdc_theta_zero_is_vanilla_conv() {
        let mut rng = Stream::seed_from(21);
        let x = Tensor::from_fn(&[1, 5, 5, 2], |_| rng.range(-1.0, 1.0));
        let k = Tensor::from_fn(&[3, 3, 2, 3], |_| rng.range(-1.0, 1.0));
        let mut g = Graph::new();
        let xv = g.constant(x);
        let kv = g.constant(k);
        let cdc = cdc_conv(&mut g, xv, kv, 0.0, 1, 1).unwrap();
        let vanilla = g.conv2d(xv, kv, 1, 1).unwrap();
        assert_eq!(g.value(cdc).data(), g.value(vanilla).data());
    }

    #[test]
    fn cdc_theta_one_kills_constant_input() {
        // no padding, so every window sees the same constant
        let x = Tensor::full(&[1, 6, 6, 2], 0.37);
        let mut rng = Stream::seed_from(22);
        let k = Tensor::from_fn(&[3, 3, 2, 4], |_| rng.range(-1.0, 1.0));
        let mut g = Graph::new();
        let xv = g.constant(x);
        let kv = g.constant(k);
        let y = cdc_conv(&mut g, xv, kv, 1.0, 1, 0).unwrap();
        for v in g.value(y).data() {
            assert!(v.abs() < 1e-12, "residual {v}");
        }
    }

    #[test]
    fn cdc_matches_bruteforce_center_identity() {
        // cdc(x) = conv(x) - theta * x_center (x) sum(kernel), element by element
        let mut rng = Stream::seed_from(23);
        let theta = 0.7;
        let (h, w, ci, co) = (6, 5, 2, 3);
        let x = Tensor::from_fn(&[1, h, w, ci], |_| rng.range(-1.0, 1.0));
        let k = Tensor::from_fn(&[3, 3, ci, co], |_| rng.range(-1.0, 1.0));
        for (stride, pad) in [(1usize, 1usize), (2, 1), (1, 0)] {
            let mut g = Graph::new();
            let xv = g.constant(x.clone());
            let kv = g.constant(k.clone());
            let y = cdc_conv(&mut g, xv, kv, theta, stride, pad).unwrap();
            let conv = g.conv2d(xv, kv, stride, pad).unwrap();
            let os = g.value(conv).shape().to_vec();
            // spatial kernel sums per (ci, co)
            let mut ksum = vec![0.0; ci * co];
            for kr in 0..3 {
                for kc in 0..3 {
                    for i in 0..ci {
                        for o in 0..co {
                            ksum[i * co + o] += k.at(&[kr, kc, i, o]);
                        }
                    }
                }
            }
            for r in 0..os[1] {
                for c in 0..os[2] {
                    let ir = (r * stride) as isize + 1 - pad as isize;
                    let icx = (c * stride) as isize + 1 - pad as isize;
                    for o in 0..co {
                        let mut center = 0.0;
                        if ir >= 0 && (ir as usize) < h && icx >= 0 && (icx as usize) < w {
                            for i in 0..ci {
                                center +=
                                    x.at(&[0, ir as usize, icx as usize, i]) * ksum[i * co + o];
                            }
                        }
                        let expected = g.value(conv).at(&[0, r, c, o]) - theta * center;
                        let got = g.value(y).at(&[0, r, c, o]);
                        assert!(
                            (expected - got).abs() < 1e-12,
                            "mismatch at ({r},{c},{o}): {got} vs {expected}"
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn uniform_attention_is_global_average_pooling() {
        let mut rng = Stream::seed_from(24);
        let (n, hf, wf, cf) = (2, 3, 3, 4);
        let f = Tensor::from_fn(&[n, hf, wf, cf], |_| rng.range(-1.0, 1.0));
        let mut g = Graph::new();
        let fv = g.constant(f.clone());
        let k = g.constant(Tensor::zeros(&[1, 1, cf, 1]));
        let b = g.constant(Tensor::zeros(&[1]));
        let pooled = mat_lite_forward(&mut g, fv, k, b).unwrap();
        for bi in 0..n {
            for c in 0..cf {
                let mut mean = 0.0;
                for r in 0..hf {
                    for cc in 0..wf {
                        mean += f.at(&[bi, r, cc, c]);
                    }
                }
                mean /= (hf * wf) as f64;
                assert!((g.value(pooled).at(&[bi, c]) - mean).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn saturated_attention_picks_one_pixel() {
        let mut rng = Stream::seed_from(25);
        let (hf, wf, cf) = (3, 3, 4);
        let f = Tensor::from_fn(&[1, hf, wf, cf], |_| rng.range(-1.0, 1.0));
        // kernel reads channel 0, so a +50 spike at pixel (1, 2) sends that
        // pixel's attention logit into softmax saturation
        let mut boosted = f.clone();
        let idx = (wf + 2) * cf;
        boosted.data_mut()[idx] = 50.0;
        let mut g = Graph::new();
        let fv = g.constant(boosted.clone());
        let mut kdata = vec![0.0; cf];
        kdata[0] = 1.0;
        let k = g.constant(Tensor::new(&[1, 1, cf, 1], kdata).unwrap());
        let b = g.constant(Tensor::zeros(&[1]));
        let pooled = mat_lite_forward(&mut g, fv, k, b).unwrap();
        for c in 0..cf {
            let expected = boosted.at(&[0, 1, 2, c]);
            assert!(
                (g.value(pooled).at(&[0, c]) - expected).abs() < 1e-9,
                "channel {c}"
            );
        }
    }

    #[test]
    fn attention_maps_sum_to_one() {
        let mut rng = Stream::seed_from(26);
        let f = Tensor::from_fn(&[2, 4, 4, 3], |_| rng.range(-2.0, 2.0));
        let k = Tensor::from_fn(&[1, 1, 3, 2], |_| rng.range(-1.0, 1.0));
        let mut g = Graph::new();
        let fv = g.constant(f);
        let kv = g.constant(k);
        let logits = g.conv2d(fv, kv, 1, 0).unwrap();
        for m in 0..2 {
            let map = g.slice(logits, 3, m, 1).unwrap();
            let map = g.reshape(map, &[2, 16]).unwrap();
            let attn = g.softmax_last(map).unwrap();
            for row in g.value(attn).data().chunks(16) {
                let s: f64 = row.iter().sum();
                assert!((s - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn forward_shapes_and_unit_projections() {
        let cfg = ModelConfig::tiny(16, 16);
        let mut rng = Stream::seed_from(27);
        let params = ModelParams::init(&cfg, &mut rng);
        let x = Tensor::from_fn(&[2, 16, 16, 33], |_| rng.f64());
        let (logits, z) = forward_once(&cfg, &params, x);
        assert_eq!(logits.shape(), &[2, 2]);
        assert_eq!(z.shape(), &[2, cfg.d_proj]);
        for row in z.data().chunks(cfg.d_proj) {
            let n: f64 = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!((n - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn duplicate_rows_give_identical_outputs() {
        let cfg = ModelConfig::tiny(16, 16);
        let mut rng = Stream::seed_from(28);
        let params = ModelParams::init(&cfg, &mut rng);
        let row = Tensor::from_fn(&[1, 16, 16, 33], |_| rng.f64());
        let mut doubled = row.data().to_vec();
        doubled.extend_from_slice(row.data());
        let x = Tensor::new(&[2, 16, 16, 33], doubled).unwrap();
        let (logits, z) = forward_once(&cfg, &params, x);
        assert_eq!(logits.data()[..2], logits.data()[2..]);
        assert_eq!(z.data()[..cfg.d_proj], z.data()[cfg.d_proj..]);
    }

    #[test]
    fn wrong_input_shape_errors() {
        let cfg = ModelConfig::tiny(16, 16);
        let mut rng = Stream::seed_from(29);
        let params = ModelParams::init(&cfg, &mut rng);
        let mut g = Graph::new();
        let x = g.constant(Tensor::zeros(&[1, 8, 16, 33]));
        let pv = ParamVars::constant(&mut g, &params);
        assert!(model_forward(&mut g, x, &pv, &cfg).is_err());
    }

    #[test]
    fn checkpoint_roundtrip() {
        let cfg = ModelConfig::tiny(16, 16);
        let mut rng = Stream::seed_from(30);
        let params = ModelParams::init(&cfg, &mut rng);
        // quantize to f32 grid so save -> load is exact
        let mut q = params.clone();
        for t in q.tensors_mut() {
            for v in t.data_mut() {
                *v = *v as f32 as f64;
            }
        }
        let dir = std::env::temp_dir().join(format!("spfas_ckpt_{}", std::process::id()));
        fs::create_dir_all(&dir).unwrap();
        let path = dir.join("model.ckpt");
        save_checkpoint(&path, &cfg, &q).unwrap();
        let (cfg2, params2) = load_checkpoint(&path).unwrap();
        assert_eq!(cfg, cfg2);
        assert_eq!(q, params2);
        let _ = fs::remove_dir_all(&dir);
    }

    #[test]
    fn checkpoint_rejects_garbage() {
        let dir = std::env::temp_dir().join(format!("spfas_ckpt_bad_{}", std::process::id()));
        fs::create_dir_all(&dir).unwrap();
        let path = dir.join("bad.ckpt");
        fs::write(&path, b"not a checkpoint\n").unwrap();
        assert!(matches!(
            load_checkpoint(&path).unwrap_err(),
            TrainError::CheckpointFormat { .. }
        ));
        let _ = fs::remove_dir_all(&dir);
    }

    #[test]
    fn identity_start_reduces_to_plain_cnn() {
        // ones spectral weights and theta 0 must equal a model without the
        // spectral layer and with a vanilla first conv
        let mut cfg = ModelConfig::tiny(16, 16);
        cfg.theta = 0.0;
        let mut rng = Stream::seed_from(31);
        let params = ModelParams::init(&cfg, &mut rng);
        let x = Tensor::from_fn(&[1, 16, 16, 33], |_| rng.f64());

        let (logits_model, _) = forward_once(&cfg, &params, x.clone());

        let mut g = Graph::new();
        let xv = g.constant(x);
        let k1 = g.constant(params.cdc_kernel.clone());
        let b1 = g.constant(params.cdc_bias.clone());
        let c1 = g.conv2d(xv, k1, 2, 1).unwrap();
        let c1 = g.add(c1, b1).unwrap();
        let c1 = g.relu(c1).unwrap();
        let k2 = g.constant(params.conv2_kernel.clone());
        let b2 = g.constant(params.conv2_bias.clone());
        let c2 = conv_block(&mut g, c1, k2, b2).unwrap();
        let k3 = g.constant(params.conv3_kernel.clone());
        let b3 = g.constant(params.conv3_bias.clone());
        let c3 = conv_block(&mut g, c2, k3, b3).unwrap();
        let ak = g.constant(params.attn_kernel.clone());
        let ab = g.constant(params.attn_bias.clone());
        let feat = mat_lite_forward(&mut g, c3, ak, ab).unwrap();
        let cw = g.constant(params.classifier_w.clone());
        let cb = g.constant(params.classifier_b.clone());
        let logits = g.matmul(feat, cw).unwrap();
        let logits = g.add(logits, cb).unwrap();
        assert_eq!(logits_model.data(), g.value(logits).data());
    }
}
