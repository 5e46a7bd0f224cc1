//! videokit: a modular toolkit for video understanding.
//!
//! The library is organized as independent, plug-and-play components that
//! only agree on argument naming (`data_path`, `dim_in`) and on canonical
//! modality tensor layouts:
//!
//! - [`conventions`] — canonical `[..., C, T, H, W]` / audio / spectrogram
//!   layouts and their validation.
//! - [`data`] — labeled-video enumeration, clip sampling, and a pluggable
//!   decoder interface with a bundled frame-directory + WAV backend.
//! - [`transforms`] — clip- and batch-level augmentations plus factory
//!   recipes (MixUp, CutMix, RandAugment, AugMix, pathway packing).
//! - [`models`] — injectable building blocks and factory functions for
//!   video backbones (C2D/I3D/Slow, SlowFast, X3D, acoustic ResNet) and an
//!   ROI detection head, with parameter and multiply-add counters.
//! - [`ssl`] — contrastive / bootstrap objectives and momentum-encoder
//!   machinery.
//! - [`accelerator`] — equivalence-preserving deployment rewrites, int8
//!   weight quantization, and a latency harness.
//! - [`zoo`] — manifest-driven verification of model sizes and FLOPs.

pub mod accelerator;
pub mod conventions;
pub mod data;
pub mod models;
pub mod ssl;
pub mod tensor;
pub mod transforms;
pub mod zoo;
