//! Training-time augmentations: random crop (zero-padded back in place),
//! horizontal flip, cutout, and the three half-mask variants. Masked and
//! cut regions are zeroed across all 33 channels, so masking commutes with
//! channel concatenation.

use spfas_autograd::Tensor;

use crate::error::AugmentError;
use crate::rng::Stream;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MaskVariant {
    BottomHalf,
    LeftHalf,
    RightHalf,
}

impl MaskVariant {
    pub const ALL: [MaskVariant; 3] = [
        MaskVariant::BottomHalf,
        MaskVariant::LeftHalf,
        MaskVariant::RightHalf,
    ];

    pub fn name(self) -> &'static str {
        match self {
            MaskVariant::BottomHalf => "bottom",
            MaskVariant::LeftHalf => "left",
            MaskVariant::RightHalf => "right",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "bottom" => Some(MaskVariant::BottomHalf),
            "left" => Some(MaskVariant::LeftHalf),
            "right" => Some(MaskVariant::RightHalf),
            _ => None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct AugmentConfig {
    /// Fraction of each side retained by the random crop; 1.0 disables it.
    pub crop_fraction: f64,
    pub flip_prob: f64,
    pub cutout_prob: f64,
    /// Cutout square side as a fraction of `min(h, w)`.
    pub cutout_side_fraction: f64,
    /// Probability that one half mask (uniform over `mask_variants`) applies.
    pub mask_prob: f64,
    pub mask_variants: Vec<MaskVariant>,
    /// Mixed into the trainer's augmentation stream derivation.
    pub seed: u64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            crop_fraction: 0.9,
            flip_prob: 0.5,
            cutout_prob: 0.5,
            cutout_side_fraction: 0.25,
            mask_prob: 0.5,
            mask_variants: MaskVariant::ALL.to_vec(),
            seed: 0,
        }
    }
}

impl AugmentConfig {
    /// Identity transform: all probabilities zero, full crop.
    pub fn disabled() -> Self {
        AugmentConfig {
            crop_fraction: 1.0,
            flip_prob: 0.0,
            cutout_prob: 0.0,
            cutout_side_fraction: 0.25,
            mask_prob: 0.0,
            mask_variants: MaskVariant::ALL.to_vec(),
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<(), AugmentError> {
        let probs = [self.flip_prob, self.cutout_prob, self.mask_prob];
        if probs.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(AugmentError::InvalidConfig(
                "probabilities must lie in [0, 1]".into(),
            ));
        }
        if !(self.crop_fraction > 0.0 && self.crop_fraction <= 1.0)
            || !(self.cutout_side_fraction > 0.0 && self.cutout_side_fraction <= 1.0)
        {
            return Err(AugmentError::InvalidConfig(
                "fractions must lie in (0, 1]".into(),
            ));
        }
        Ok(())
    }

    fn half_masks_possible(&self) -> bool {
        self.mask_prob > 0.0 && !self.mask_variants.is_empty()
    }
}

fn zero_region(x: &mut Tensor, r0: usize, r1: usize, c0: usize, c1: usize) {
    let (h, w, ch) = dims(x);
    debug_assert!(r1 <= h && c1 <= w);
    let data = x.data_mut();
    let _ = h;
    for r in r0..r1 {
        for c in c0..c1 {
            let base = (r * w + c) * ch;
            data[base..base + ch].iter_mut().for_each(|v| *v = 0.0);
        }
    }
}

fn dims(x: &Tensor) -> (usize, usize, usize) {
    let s = x.shape();
    (s[0], s[1], s[2])
}

/// Zero a half of the image across all channels.
pub fn apply_mask(x: &mut Tensor, variant: MaskVariant) {
    let (h, w, _) = dims(x);
    match variant {
        MaskVariant::BottomHalf => zero_region(x, h / 2, h, 0, w),
        MaskVariant::LeftHalf => zero_region(x, 0, h, 0, w / 2),
        MaskVariant::RightHalf => zero_region(x, 0, h, w / 2, w),
    }
}

fn flip_horizontal(x: &mut Tensor) {
    let (h, w, ch) = dims(x);
    let data = x.data_mut();
    for r in 0..h {
        for c in 0..w / 2 {
            let a = (r * w + c) * ch;
            let b = (r * w + (w - 1 - c)) * ch;
            for k in 0..ch {
                data.swap(a + k, b + k);
            }
        }
    }
}

/// Apply crop, flip, cutout and half-mask in that order, drawing all
/// randomness from `rng`. Shape, labels and channel count never change.
pub fn apply_augment(
    x: &Tensor,
    cfg: &AugmentConfig,
    rng: &mut Stream,
) -> Result<Tensor, AugmentError> {
    cfg.validate()?;
    let (h, w, _) = dims(x);
    if cfg.half_masks_possible() {
        let needs_even_h = cfg.mask_variants.contains(&MaskVariant::BottomHalf);
        let needs_even_w = cfg.mask_variants.contains(&MaskVariant::LeftHalf)
            || cfg.mask_variants.contains(&MaskVariant::RightHalf);
        if (needs_even_h && h % 2 != 0) || (needs_even_w && w % 2 != 0) {
            return Err(AugmentError::OddDimsForHalfMask { h, w });
        }
    }
    let mut out = x.clone();

    // Crop: keep a window, zero everything outside it (pad-in-place).
    let keep_h = ((h as f64 * cfg.crop_fraction).round() as usize).clamp(1, h);
    let keep_w = ((w as f64 * cfg.crop_fraction).round() as usize).clamp(1, w);
    if keep_h < h || keep_w < w {
        let r0 = rng.below(h - keep_h + 1);
        let c0 = rng.below(w - keep_w + 1);
        zero_region(&mut out, 0, r0, 0, w);
        zero_region(&mut out, r0 + keep_h, h, 0, w);
        zero_region(&mut out, r0, r0 + keep_h, 0, c0);
        zero_region(&mut out, r0, r0 + keep_h, c0 + keep_w, w);
    }

    if cfg.flip_prob > 0.0 && rng.f64() < cfg.flip_prob {
        flip_horizontal(&mut out);
    }

    if cfg.cutout_prob > 0.0 && rng.f64() < cfg.cutout_prob {
        let side = ((h.min(w) as f64 * cfg.cutout_side_fraction).round() as usize)
            .clamp(1, h.min(w));
        let r0 = rng.below(h - side + 1);
        let c0 = rng.below(w - side + 1);
        zero_region(&mut out, r0, r0 + side, c0, c0 + side);
    }

    if cfg.half_masks_possible() && rng.f64() < cfg.mask_prob {
        let variant = cfg.mask_variants[rng.below(cfg.mask_variants.len())];
        apply_mask(&mut out, variant);
    }

    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ones(h: usize, w: usize) -> Tensor {
        Tensor::ones(&[h, w, 33])
    }

    #[test]
    fn bottom_mask_zeroes_lower_rows() {
        let mut x = ones(4, 4);
        apply_mask(&mut x, MaskVariant::BottomHalf);
        for r in 0..4 {
            for c in 0..4 {
                for ch in 0..33 {
                    let expected = if r < 2 { 1.0 } else { 0.0 };
                    assert_eq!(x.at(&[r, c, ch]), expected);
                }
            }
        }
    }

    #[test]
    fn disabled_config_is_identity() {
        let x = Tensor::from_fn(&[6, 6, 33], |i| (i % 7) as f64 * 0.1);
        let mut rng = Stream::seed_from(4);
        let y = apply_augment(&x, &AugmentConfig::disabled(), &mut rng).unwrap();
        assert_eq!(x, y);
    }

    #[test]
    fn forced_flip_is_an_involution() {
        let x = Tensor::from_fn(&[4, 6, 33], |i| i as f64);
        let cfg = AugmentConfig {
            crop_fraction: 1.0,
            flip_prob: 1.0,
            cutout_prob: 0.0,
            mask_prob: 0.0,
            ..AugmentConfig::default()
        };
        let mut rng = Stream::seed_from(6);
        let once = apply_augment(&x, &cfg, &mut rng).unwrap();
        let twice = apply_augment(&once, &cfg, &mut rng).unwrap();
        assert_ne!(x, once);
        assert_eq!(x, twice);
    }

    #[test]
    fn shape_is_preserved() {
        let x = ones(8, 8);
        let mut rng = Stream::seed_from(1);
        for _ in 0..50 {
            let y = apply_augment(&x, &AugmentConfig::default(), &mut rng).unwrap();
            assert_eq!(y.shape(), x.shape());
        }
    }

    #[test]
    fn odd_dims_with_half_mask_error() {
        let x = ones(5, 4);
        let mut rng = Stream::seed_from(2);
        let err = apply_augment(&x, &AugmentConfig::default(), &mut rng).unwrap_err();
        assert!(matches!(err, AugmentError::OddDimsForHalfMask { h: 5, w: 4 }));
        // odd dims are fine when no half mask can fire
        let cfg = AugmentConfig {
            mask_prob: 0.0,
            ..AugmentConfig::default()
        };
        assert!(apply_augment(&x, &cfg, &mut rng).is_ok());
    }

    #[test]
    fn masking_commutes_with_channel_concat() {
        // Masking the 33-channel stack equals masking a 3-channel and a
        // 30-channel plane separately and restacking.
        let x = Tensor::from_fn(&[4, 4, 33], |i| (i as f64 * 0.01).sin().abs());
        let mut whole = x.clone();
        apply_mask(&mut whole, MaskVariant::LeftHalf);

        let mut rgb = Tensor::from_fn(&[4, 4, 3], |_| 0.0);
        let mut spec = Tensor::from_fn(&[4, 4, 30], |_| 0.0);
        for p in 0..16 {
            for c in 0..3 {
                rgb.data_mut()[p * 3 + c] = x.data()[p * 33 + c];
            }
            for c in 0..30 {
                spec.data_mut()[p * 30 + c] = x.data()[p * 33 + 3 + c];
            }
        }
        apply_mask(&mut rgb, MaskVariant::LeftHalf);
        apply_mask(&mut spec, MaskVariant::LeftHalf);
        for p in 0..16 {
            for c in 0..3 {
                assert_eq!(whole.data()[p * 33 + c], rgb.data()[p * 3 + c]);
            }
            for c in 0..30 {
                assert_eq!(whole.data()[p * 33 + 3 + c], spec.data()[p * 30 + c]);
            }
        }
    }

    #[test]
    fn fixed_seed_reproduces_sequence() {
        let x = Tensor::from_fn(&[8, 8, 33], |i| (i % 11) as f64 * 0.09);
        let run = |seed| {
            let mut rng = Stream::seed_from(seed);
            (0..20)
                .map(|_| apply_augment(&x, &AugmentConfig::default(), &mut rng).unwrap())
                .collect::<Vec<_>>()
        };
        assert_eq!(run(31), run(31));
    }
}
