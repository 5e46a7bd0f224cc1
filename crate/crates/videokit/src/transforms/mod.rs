//! Pure sample-to-sample and batch-to-batch augmentations plus factory
//! recipes for standard training/validation pipelines.
//!
//! Clip-level transforms run pre-collation on `(C, T, H, W)` tensors in the
//! decoded 0..255 pixel range; MixUp/CutMix run post-collation on batches
//! because they need partners. Every transform is a pure function of
//! `(input, rng state)` — same seed, same bits.

mod augment;
mod mix;

pub use augment::{
    apply_logged_op_to_frame, augmix, augmix_combine, rand_augment, rand_augment_with_log,
    AppliedOp,
};
pub use mix::{
    apply_mix_policy, cutmix, cutmix_with_box, labels_to_one_hot, mixup, mixup_with,
    sample_cut_box, CutBox,
};

use crate::conventions::{validate_video_with_options, VideoTensor};
use crate::data::{uniform_temporal_indices, DecodedSample, TransformFn};
use crate::tensor::Tensor;
use ndarray::Ix4;
use rand::rngs::StdRng;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TransformError {
    #[error("config error: {0}")]
    Config(String),
    #[error("shape error: {0}")]
    Shape(String),
    #[error("layout error: {0}")]
    Layout(#[from] crate::conventions::LayoutError),
}

pub type Result<T> = std::result::Result<T, TransformError>;

fn as4(v: &VideoTensor) -> Result<ndarray::ArrayView4<'_, f64>> {
    v.data()
        .view()
        .into_dimensionality::<Ix4>()
        .map_err(|_| TransformError::Shape("clip transforms expect rank-4 (C, T, H, W)".into()))
}

fn wrap(data: Tensor) -> Result<VideoTensor> {
    Ok(validate_video_with_options(data, true)?)
}

/// Picks `n` frames via `round(linspace(0, T-1, n))` along the T axis.
pub fn uniform_temporal_subsample(v: &VideoTensor, n: usize) -> Result<VideoTensor> {
    let x = as4(v)?;
    let (c, t, h, w) = x.dim();
    let indices = uniform_temporal_indices(t, n)
        .map_err(|e| TransformError::Config(e.to_string()))?;
    let mut out = ndarray::Array4::<f64>::zeros((c, n, h, w));
    for (ti, &src) in indices.iter().enumerate() {
        out.index_axis_mut(ndarray::Axis(1), ti)
            .assign(&x.index_axis(ndarray::Axis(1), src));
    }
    wrap(out.into_dyn())
}

/// Interpolation modes for [`short_side_scale`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Interp {
    Bilinear,
    Nearest,
}

/// Scales so the short spatial side equals `size`, preserving aspect ratio
/// (long side truncated, matching the reference convention).
pub fn short_side_scale(v: &VideoTensor, size: usize, interp: Interp) -> Result<VideoTensor> {
    if size == 0 {
        return Err(TransformError::Config("size must be >= 1".into()));
    }
    let x = as4(v)?;
    let (_, _, h, w) = x.dim();
    let (nh, nw) = if h <= w {
        (size, ((w as f64 / h as f64) * size as f64).floor() as usize)
    } else {
        (((h as f64 / w as f64) * size as f64).floor() as usize, size)
    };
    resize(v, nh, nw, interp)
}

/// Bilinear/nearest resize to an exact (H, W) with half-pixel sampling.
pub fn resize(v: &VideoTensor, nh: usize, nw: usize, interp: Interp) -> Result<VideoTensor> {
    let x = as4(v)?;
    let (c, t, h, w) = x.dim();
    if (nh, nw) == (h, w) {
        return Ok(v.clone());
    }
    let mut out = ndarray::Array4::<f64>::zeros((c, t, nh, nw));
    let sy = h as f64 / nh as f64;
    let sx = w as f64 / nw as f64;
    for ci in 0..c {
        for ti in 0..t {
            for oy in 0..nh {
                let fy = (oy as f64 + 0.5) * sy - 0.5;
                for ox in 0..nw {
                    let fx = (ox as f64 + 0.5) * sx - 0.5;
                    out[[ci, ti, oy, ox]] = match interp {
                        Interp::Nearest => {
                            let iy = fy.round().clamp(0.0, (h - 1) as f64) as usize;
                            let ix = fx.round().clamp(0.0, (w - 1) as f64) as usize;
                            x[[ci, ti, iy, ix]]
                        }
                        Interp::Bilinear => {
                            let y0 = fy.floor().clamp(0.0, (h - 1) as f64) as usize;
                            let x0 = fx.floor().clamp(0.0, (w - 1) as f64) as usize;
                            let y1 = (y0 + 1).min(h - 1);
                            let x1 = (x0 + 1).min(w - 1);
                            let ly = (fy - y0 as f64).clamp(0.0, 1.0);
                            let lx = (fx - x0 as f64).clamp(0.0, 1.0);
                            x[[ci, ti, y0, x0]] * (1.0 - ly) * (1.0 - lx)
                                + x[[ci, ti, y0, x1]] * (1.0 - ly) * lx
                                + x[[ci, ti, y1, x0]] * ly * (1.0 - lx)
                                + x[[ci, ti, y1, x1]] * ly * lx
                        }
                    };
                }
            }
        }
    }
    wrap(out.into_dyn())
}

/// Per-channel standardization: `out[c] = (v[c] - mean[c]) / std[c]`.
pub fn normalize(v: &VideoTensor, mean: &[f64], std: &[f64]) -> Result<VideoTensor> {
    let x = as4(v)?;
    let (c, ..) = x.dim();
    if mean.len() != c || std.len() != c {
        return Err(TransformError::Config(format!(
            "normalize expects {c} channel stats, got mean {} / std {}",
            mean.len(),
            std.len()
        )));
    }
    if std.iter().any(|&s| s == 0.0) {
        return Err(TransformError::Config("std must be nonzero".into()));
    }
    let mut out = x.to_owned();
    for ci in 0..c {
        let (m, s) = (mean[ci], std[ci]);
        out.index_axis_mut(ndarray::Axis(0), ci)
            .mapv_inplace(|v| (v - m) / s);
    }
    wrap(out.into_dyn())
}

/// Crop at an explicit top-left corner.
pub fn crop(v: &VideoTensor, top: usize, left: usize, size: usize) -> Result<VideoTensor> {
    let x = as4(v)?;
    let (_, _, h, w) = x.dim();
    if top + size > h || left + size > w {
        return Err(TransformError::Shape(format!(
            "crop {size} at ({top}, {left}) exceeds {h}x{w}"
        )));
    }
    let out = x
        .slice(ndarray::s![.., .., top..top + size, left..left + size])
        .to_owned();
    wrap(out.into_dyn())
}

pub fn center_crop(v: &VideoTensor, size: usize) -> Result<VideoTensor> {
    let x = as4(v)?;
    let (_, _, h, w) = x.dim();
    if size > h || size > w {
        return Err(TransformError::Shape(format!(
            "center crop {size} exceeds {h}x{w}"
        )));
    }
    crop(v, (h - size) / 2, (w - size) / 2, size)
}

pub fn random_crop(v: &VideoTensor, size: usize, rng: &mut StdRng) -> Result<VideoTensor> {
    let x = as4(v)?;
    let (_, _, h, w) = x.dim();
    if size > h || size > w {
        return Err(TransformError::Shape(format!(
            "random crop {size} exceeds {h}x{w}"
        )));
    }
    let top = if h > size { rng.random_range(0..=h - size) } else { 0 };
    let left = if w > size { rng.random_range(0..=w - size) } else { 0 };
    crop(v, top, left, size)
}

/// Mirrors the W axis.
pub fn horizontal_flip(v: &VideoTensor) -> Result<VideoTensor> {
    let x = as4(v)?;
    let mut out = x.to_owned();
    out.invert_axis(ndarray::Axis(3));
    wrap(out.into_dyn())
}

/// Packs a clip into the `[slow, fast]` pathway list: fast is the clip
/// itself, slow keeps every `alpha`-th frame (indices 0, alpha, 2*alpha, ...).
pub fn pack_pathways(v: &VideoTensor, alpha: usize) -> Result<Vec<VideoTensor>> {
    if alpha == 0 {
        return Err(TransformError::Config("alpha must be >= 1".into()));
    }
    let x = as4(v)?;
    let (c, t, h, w) = x.dim();
    if t % alpha != 0 {
        return Err(TransformError::Config(format!(
            "frame count {t} is not divisible by alpha {alpha}"
        )));
    }
    let ts = t / alpha;
    let mut slow = ndarray::Array4::<f64>::zeros((c, ts, h, w));
    for ti in 0..ts {
        slow.index_axis_mut(ndarray::Axis(1), ti)
            .assign(&x.index_axis(ndarray::Axis(1), ti * alpha));
    }
    Ok(vec![wrap(slow.into_dyn())?, v.clone()])
}

/// Pipeline mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Train,
    Val,
}

/// Per-clip augmentation policy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AugPolicy {
    None,
    Randaug,
    Augmix,
}

/// Batch-level mixing policy (applied post-collation, not by the clip
/// transform itself).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MixPolicy {
    None,
    Mixup,
    Cutmix,
    /// Picks mixup or cutmix per batch with probability 0.5.
    Both,
}

/// A named, JSON-serializable pipeline recipe.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct TransformRecipe {
    pub mode: Mode,
    pub crop_size: usize,
    pub num_frames: usize,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    pub aug_policy: AugPolicy,
    pub mix_policy: MixPolicy,
    pub pathway_alpha: Option<usize>,
}

impl TransformRecipe {
    pub fn validate(&self) -> Result<()> {
        if self.crop_size == 0 {
            return Err(TransformError::Config("crop_size must be > 0".into()));
        }
        if self.num_frames == 0 {
            return Err(TransformError::Config("num_frames must be >= 1".into()));
        }
        if self.std.iter().any(|&s| s <= 0.0) {
            return Err(TransformError::Config(
                "std must be positive elementwise".into(),
            ));
        }
        if self.mean.len() != self.std.len() {
            return Err(TransformError::Config(
                "mean and std lengths differ".into(),
            ));
        }
        Ok(())
    }
}

/// Named presets for common training setups. Hyperparameters come from the
/// cited method recipes, not from any verified table — treat them as
/// presets, not ground truth.
pub fn recipe_preset(name: &str) -> Option<TransformRecipe> {
    let base = TransformRecipe {
        mode: Mode::Train,
        crop_size: 224,
        num_frames: 8,
        mean: vec![0.45, 0.45, 0.45],
        std: vec![0.225, 0.225, 0.225],
        aug_policy: AugPolicy::None,
        mix_policy: MixPolicy::None,
        pathway_alpha: None,
    };
    match name {
        "slowfast_train" => Some(TransformRecipe {
            num_frames: 32,
            pathway_alpha: Some(4),
            ..base
        }),
        "slowfast_val" => Some(TransformRecipe {
            mode: Mode::Val,
            num_frames: 32,
            pathway_alpha: Some(4),
            ..base
        }),
        "x3d_train" => Some(TransformRecipe {
            num_frames: 16,
            crop_size: 224,
            aug_policy: AugPolicy::Randaug,
            mix_policy: MixPolicy::Both,
            ..base
        }),
        "kinetics_train" => Some(TransformRecipe {
            aug_policy: AugPolicy::Randaug,
            mix_policy: MixPolicy::Mixup,
            ..base
        }),
        "kinetics_val" => Some(TransformRecipe {
            mode: Mode::Val,
            ..base
        }),
        _ => None,
    }
}

/// Scale-jitter bounds for training and the fixed validation scale, derived
/// from the crop size with the standard 224->(256, 320) ratios.
fn scale_bounds(crop: usize) -> (usize, usize, usize) {
    let val = (crop as f64 * 256.0 / 224.0).round() as usize;
    let hi = (crop as f64 * 320.0 / 224.0).round() as usize;
    (val, val.max(crop), hi.max(crop))
}

/// Builds the composed clip pipeline for a recipe.
///
/// Train: temporal subsample, jittered short-side scale, random crop, random
/// horizontal flip, pixel-domain aug policy, then /255 + normalize. Val:
/// subsample, fixed scale, center crop, /255 + normalize. Pathway packing is
/// appended when the recipe sets `pathway_alpha`; the packed fast pathway
/// replaces the sample's video and the slow pathway rides along.
///
/// Mix policies need batch partners and are applied post-collation via
/// [`mix::apply_mix_policy`], not here.
pub fn create_video_transform(recipe: &TransformRecipe) -> Result<TransformFn> {
    recipe.validate()?;
    let recipe = recipe.clone();
    Ok(Box::new(move |mut sample: DecodedSample, rng: &mut StdRng| {
        let run = |sample: &mut DecodedSample, rng: &mut StdRng| -> Result<Vec<VideoTensor>> {
            let (val_scale, lo, hi) = scale_bounds(recipe.crop_size);
            let mut v = uniform_temporal_subsample(&sample.video, recipe.num_frames)?;
            match recipe.mode {
                Mode::Train => {
                    let size = if hi > lo {
                        rng.random_range(lo..=hi)
                    } else {
                        lo
                    };
                    v = short_side_scale(&v, size, Interp::Bilinear)?;
                    v = random_crop(&v, recipe.crop_size, rng)?;
                    if rng.random::<f64>() < 0.5 {
                        v = horizontal_flip(&v)?;
                    }
                    v = match recipe.aug_policy {
                        AugPolicy::None => v,
                        AugPolicy::Randaug => rand_augment(&v, 2, 9, rng)?,
                        AugPolicy::Augmix => augmix(&v, 3, 0, 1.0, rng)?,
                    };
                }
                Mode::Val => {
                    v = short_side_scale(&v, val_scale, Interp::Bilinear)?;
                    v = center_crop(&v, recipe.crop_size)?;
                }
            }
            // Decoded pixels are 0..255; bring into unit range then normalize.
            let c = v.channels();
            let scaled = normalize(&v, &vec![0.0; c], &vec![255.0; c])?;
            let v = normalize(&scaled, &recipe.mean, &recipe.std)?;
            match recipe.pathway_alpha {
                Some(alpha) => pack_pathways(&v, alpha),
                None => Ok(vec![v]),
            }
        };
        match run(&mut sample, rng) {
            Ok(mut pathways) => {
                if pathways.len() == 2 {
                    // Fast pathway stays in the video slot; the packed list
                    // carries [slow, fast] for multi-pathway models.
                    sample.video = pathways[1].clone();
                    sample.pathways = Some(pathways);
                } else {
                    sample.video = pathways.pop().unwrap();
                    sample.pathways = None;
                }
                Ok(sample)
            }
            Err(e) => Err(e.to_string()),
        }
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::IxDyn;

    fn clip(c: usize, t: usize, h: usize, w: usize) -> VideoTensor {
        let mut rng = <StdRng as rand::SeedableRng>::seed_from_u64(99);
        let data =
            Tensor::from_shape_fn(ndarray::IxDyn(&[c, t, h, w]), |_| rng.random::<f64>() * 255.0);
        validate_video_with_options(data, true).unwrap()
    }

    #[test]
    fn subsample_identity_and_repeat() {
        let v = clip(3, 8, 4, 4);
        let same = uniform_temporal_subsample(&v, 8).unwrap();
        assert_eq!(same.data(), v.data());

        let single = clip(3, 1, 4, 4);
        let rep = uniform_temporal_subsample(&single, 4).unwrap();
        assert_eq!(rep.frames(), 4);
        for t in 0..4 {
            assert_eq!(
                rep.data().index_axis(ndarray::Axis(1), t),
                single.data().index_axis(ndarray::Axis(1), 0)
            );
        }
    }

    #[test]
    fn subsample_thirty_to_four() {
        let v = clip(1, 30, 2, 2);
        let out = uniform_temporal_subsample(&v, 4).unwrap();
        for (ti, &src) in [0usize, 10, 19, 29].iter().enumerate() {
            assert_eq!(
                out.data().index_axis(ndarray::Axis(1), ti),
                v.data().index_axis(ndarray::Axis(1), src)
            );
        }
    }

    #[test]
    fn short_side_scale_dims() {
        let v = clip(3, 2, 240, 320);
        let out = short_side_scale(&v, 224, Interp::Bilinear).unwrap();
        assert_eq!((out.height(), out.width()), (224, 298));

        let square = clip(3, 2, 224, 224);
        let same = short_side_scale(&square, 224, Interp::Bilinear).unwrap();
        assert_eq!((same.height(), same.width()), (224, 224));

        let tall = clip(3, 2, 320, 240);
        let out = short_side_scale(&tall, 224, Interp::Bilinear).unwrap();
        assert_eq!((out.height(), out.width()), (298, 224));
    }

    #[test]
    fn normalize_identity_and_inverse() {
        let v = clip(3, 2, 4, 4);
        let id = normalize(&v, &[0.0; 3], &[1.0; 3]).unwrap();
        assert_eq!(id.data(), v.data());

        // Constant clip equal to the mean maps to zero.
        let mut flat = Tensor::zeros(ndarray::IxDyn(&[3, 2, 2, 2]));
        flat.fill(7.5);
        let z = normalize(
            &validate_video_with_options(flat, true).unwrap(),
            &[7.5; 3],
            &[2.0; 3],
        )
        .unwrap();
        assert!(z.data().iter().all(|&v| v == 0.0));

        // Normalize then apply the algebraic inverse recovers the input.
        let n = normalize(&v, &[10.0, 20.0, 30.0], &[2.0, 3.0, 4.0]).unwrap();
        let back = normalize(&n, &[-5.0, -20.0 / 3.0, -7.5], &[0.5, 1.0 / 3.0, 0.25]).unwrap();
        assert!(crate::tensor::max_abs_diff(back.data(), v.data()) < 1e-6);
    }

    #[test]
    fn normalize_errors() {
        let v = clip(3, 1, 2, 2);
        assert!(normalize(&v, &[0.0; 2], &[1.0; 2]).is_err());
        assert!(normalize(&v, &[0.0; 3], &[1.0, 0.0, 1.0]).is_err());
    }

    #[test]
    fn pack_pathways_strided_frames() {
        let v = clip(3, 32, 4, 4);
        let paths = pack_pathways(&v, 4).unwrap();
        assert_eq!(paths.len(), 2);
        assert_eq!(paths[0].frames(), 8);
        assert_eq!(paths[1].frames(), 32);
        for ti in 0..8 {
            assert_eq!(
                paths[0].data().index_axis(ndarray::Axis(1), ti),
                v.data().index_axis(ndarray::Axis(1), ti * 4)
            );
        }
        // alpha = 1: both pathways identical.
        let same = pack_pathways(&v, 1).unwrap();
        assert_eq!(same[0].data(), same[1].data());
        // divisibility enforced
        assert!(pack_pathways(&clip(3, 30, 2, 2), 4).is_err());
    }

    #[test]
    fn recipe_round_trips_as_json() {
        let recipe = recipe_preset("slowfast_train").unwrap();
        let json = serde_json::to_string(&recipe).unwrap();
        for key in [
            "mode",
            "crop_size",
            "num_frames",
            "mean",
            "std",
            "aug_policy",
            "mix_policy",
            "pathway_alpha",
        ] {
            assert!(json.contains(&format!("\"{key}\"")), "missing {key}");
        }
        let back: TransformRecipe = serde_json::from_str(&json).unwrap();
        assert_eq!(back, recipe);
        // Unknown keys are rejected.
        assert!(serde_json::from_str::<TransformRecipe>(
            &json.replace("\"crop_size\"", "\"crop_sz\"")
        )
        .is_err());
    }
}
