//! Training pipeline for spectral face anti-spoofing: synthetic data with a
//! class-imbalanced layout, oversampling, masking augmentations, intra-class
//! mixup, real-face oriented reweighting, focal + supervised contrastive
//! losses with a cross-batch memory, a compact spectral CNN, sharpness-aware
//! optimization, and APCER/BPCER/ACER evaluation.

pub mod augment;
pub mod config;
pub mod dataio;
pub mod error;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod rng;
pub mod strategies;
pub mod trainer;

pub use error::Error;
