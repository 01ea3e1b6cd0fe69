//! Line-oriented `key = value` configuration covering every training,
//! loss, augmentation, mixup, reweighting and model field. Blank lines and
//! `#` comments are ignored; unknown keys are rejected.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::augment::{AugmentConfig, MaskVariant};
use crate::error::{ConfigError, Error};
use crate::losses::LossConfig;
use crate::model::ModelConfig;
use crate::strategies::MixupConfig;
use crate::trainer::{RorConfig, TrainConfig};

#[derive(Debug, Clone, Default)]
pub struct PipelineConfig {
    pub train: TrainConfig,
    pub loss: LossConfig,
    pub augment: AugmentConfig,
    pub mixup: MixupConfig,
    pub model: ModelConfig,
    pub ror: RorConfig,
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<(), Error> {
        self.train.validate()?;
        self.augment.validate()?;
        self.model.validate()?;
        if self.loss.gamma < 0.0 || self.loss.tau <= 0.0 || self.loss.lambda_scl < 0.0 {
            return Err(crate::error::TrainError::InvalidConfig(
                "need gamma >= 0, tau > 0, lambda_scl >= 0".into(),
            )
            .into());
        }
        if self.mixup.alpha <= 0.0 {
            return Err(crate::error::TrainError::InvalidConfig(
                "mixup_alpha must be positive".into(),
            )
            .into());
        }
        Ok(())
    }

    /// Serialized form; `parse` of this text reproduces the config.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let variants: Vec<&str> = self
            .augment
            .mask_variants
            .iter()
            .map(|v| v.name())
            .collect();
        writeln!(s, "# training").unwrap();
        writeln!(s, "seed = {}", self.train.seed).unwrap();
        writeln!(s, "epochs = {}", self.train.epochs).unwrap();
        writeln!(s, "batch_size = {}", self.train.batch_size).unwrap();
        writeln!(s, "lr_max = {}", self.train.lr_max).unwrap();
        writeln!(s, "lr_min = {}", self.train.lr_min).unwrap();
        writeln!(s, "weight_decay = {}", self.train.weight_decay).unwrap();
        writeln!(s, "asam_rho = {}", self.train.asam_rho).unwrap();
        writeln!(s, "asam_eta = {}", self.train.asam_eta).unwrap();
        writeln!(s, "# loss").unwrap();
        writeln!(s, "gamma = {}", self.loss.gamma).unwrap();
        writeln!(s, "tau = {}", self.loss.tau).unwrap();
        writeln!(s, "lambda_scl = {}", self.loss.lambda_scl).unwrap();
        writeln!(s, "xbm_capacity = {}", self.loss.xbm_capacity).unwrap();
        writeln!(
            s,
            "supcon_normalize_positives = {}",
            self.loss.supcon_normalize_positives
        )
        .unwrap();
        writeln!(s, "# augmentation").unwrap();
        writeln!(s, "crop_fraction = {}", self.augment.crop_fraction).unwrap();
        writeln!(s, "flip_prob = {}", self.augment.flip_prob).unwrap();
        writeln!(s, "cutout_prob = {}", self.augment.cutout_prob).unwrap();
        writeln!(
            s,
            "cutout_side_fraction = {}",
            self.augment.cutout_side_fraction
        )
        .unwrap();
        writeln!(s, "mask_prob = {}", self.augment.mask_prob).unwrap();
        writeln!(s, "mask_variants = {}", variants.join(",")).unwrap();
        writeln!(s, "augment_seed = {}", self.augment.seed).unwrap();
        writeln!(s, "# mixup").unwrap();
        writeln!(s, "mixup_enabled = {}", self.mixup.enabled).unwrap();
        writeln!(s, "mixup_alpha = {}", self.mixup.alpha).unwrap();
        writeln!(s, "# reweighting").unwrap();
        writeln!(s, "ror_enabled = {}", self.ror.enabled).unwrap();
        writeln!(s, "ror_dim = {}", self.ror.dim).unwrap();
        writeln!(
            s,
            "ror_embeddings = {}",
            self.ror
                .embeddings
                .as_ref()
                .map(|p| p.display().to_string())
                .unwrap_or_default()
        )
        .unwrap();
        writeln!(s, "# model").unwrap();
        writeln!(s, "height = {}", self.model.height).unwrap();
        writeln!(s, "width = {}", self.model.width).unwrap();
        writeln!(
            s,
            "conv_channels = {},{},{}",
            self.model.conv_channels[0], self.model.conv_channels[1], self.model.conv_channels[2]
        )
        .unwrap();
        writeln!(s, "attn_maps = {}", self.model.attn_maps).unwrap();
        writeln!(s, "d_proj = {}", self.model.d_proj).unwrap();
        writeln!(s, "theta = {}", self.model.theta).unwrap();
        s
    }

    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = PipelineConfig::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let lineno = i + 1;
            let (key, value) = line.split_once('=').ok_or_else(|| ConfigError::Parse {
                line: lineno,
                msg: format!("expected key = value, got {line:?}"),
            })?;
            let (key, value) = (key.trim(), value.trim());
            cfg.apply(key, value, lineno)?;
        }
        Ok(cfg)
    }

    pub fn apply(&mut self, key: &str, value: &str, line: usize) -> Result<(), ConfigError> {
        fn parse<T: std::str::FromStr>(value: &str, line: usize) -> Result<T, ConfigError>
        where
            T::Err: std::fmt::Display,
        {
            value.parse().map_err(|e| ConfigError::Parse {
                line,
                msg: format!("{e}"),
            })
        }
        match key {
            "seed" => self.train.seed = parse(value, line)?,
            "epochs" => self.train.epochs = parse(value, line)?,
            "batch_size" => self.train.batch_size = parse(value, line)?,
            "lr_max" => self.train.lr_max = parse(value, line)?,
            "lr_min" => self.train.lr_min = parse(value, line)?,
            "weight_decay" => self.train.weight_decay = parse(value, line)?,
            "asam_rho" => self.train.asam_rho = parse(value, line)?,
            "asam_eta" => self.train.asam_eta = parse(value, line)?,
            "gamma" => self.loss.gamma = parse(value, line)?,
            "tau" => self.loss.tau = parse(value, line)?,
            "lambda_scl" => self.loss.lambda_scl = parse(value, line)?,
            "xbm_capacity" => self.loss.xbm_capacity = parse(value, line)?,
            "supcon_normalize_positives" => {
                self.loss.supcon_normalize_positives = parse(value, line)?
            }
            "crop_fraction" => self.augment.crop_fraction = parse(value, line)?,
            "flip_prob" => self.augment.flip_prob = parse(value, line)?,
            "cutout_prob" => self.augment.cutout_prob = parse(value, line)?,
            "cutout_side_fraction" => self.augment.cutout_side_fraction = parse(value, line)?,
            "mask_prob" => self.augment.mask_prob = parse(value, line)?,
            "mask_variants" => {
                let mut variants = Vec::new();
                for name in value.split(',').map(str::trim).filter(|v| !v.is_empty()) {
                    variants.push(MaskVariant::parse(name).ok_or_else(|| ConfigError::Parse {
                        line,
                        msg: format!("unknown mask variant {name:?}"),
                    })?);
                }
                self.augment.mask_variants = variants;
            }
            "augment_seed" => self.augment.seed = parse(value, line)?,
            "mixup_enabled" => self.mixup.enabled = parse(value, line)?,
            "mixup_alpha" => self.mixup.alpha = parse(value, line)?,
            "ror_enabled" => self.ror.enabled = parse(value, line)?,
            "ror_dim" => self.ror.dim = parse(value, line)?,
            "ror_embeddings" => {
                self.ror.embeddings = if value.is_empty() {
                    None
                } else {
                    Some(PathBuf::from(value))
                };
            }
            "height" => self.model.height = parse(value, line)?,
            "width" => self.model.width = parse(value, line)?,
            "conv_channels" => {
                let parts: Vec<usize> = value
                    .split(',')
                    .map(|p| p.trim().parse())
                    .collect::<Result<_, _>>()
                    .map_err(|e| ConfigError::Parse {
                        line,
                        msg: format!("{e}"),
                    })?;
                if parts.len() != 3 {
                    return Err(ConfigError::Parse {
                        line,
                        msg: "conv_channels needs exactly 3 values".into(),
                    });
                }
                self.model.conv_channels = [parts[0], parts[1], parts[2]];
            }
            "attn_maps" => self.model.attn_maps = parse(value, line)?,
            "d_proj" => self.model.d_proj = parse(value, line)?,
            "theta" => self.model.theta = parse(value, line)?,
            other => {
                return Err(ConfigError::UnknownKey {
                    line,
                    key: other.to_string(),
                })
            }
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = fs::read_to_string(path).map_err(|e| ConfigError::Io(path.to_path_buf(), e))?;
        Self::parse(&text)
    }

    pub fn save(&self, path: &Path) -> Result<(), ConfigError> {
        fs::write(path, self.to_text()).map_err(|e| ConfigError::Io(path.to_path_buf(), e))
    }
}
