//! RandAugment and AugMix for clips.
//!
//! Ops run in the decoded 0..255 pixel domain. Spatial and photometric
//! parameters are sampled once per clip and applied identically to every
//! frame (temporal consistency); geometric ops fill uncovered pixels with
//! mid-gray.

use super::{Result, TransformError};
use crate::conventions::{validate_video_with_options, VideoTensor};
use ndarray::{Array4, Axis, Ix4};
use rand::rngs::StdRng;
use rand::Rng;
use rand_distr::{Beta, Distribution, Gamma};

const FILL: f64 = 128.0;
const MAX_LEVEL: f64 = 10.0;

/// One op application with its sampled parameters, for consistency audits.
#[derive(Debug, Clone, PartialEq)]
pub struct AppliedOp {
    pub name: &'static str,
    pub params: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum OpKind {
    Rotate,
    ShearX,
    ShearY,
    TranslateX,
    TranslateY,
    Posterize,
    Solarize,
    Contrast,
    Brightness,
    Sharpness,
    AutoContrast,
    Equalize,
}

impl OpKind {
    fn name(&self) -> &'static str {
        match self {
            OpKind::Rotate => "rotate",
            OpKind::ShearX => "shear_x",
            OpKind::ShearY => "shear_y",
            OpKind::TranslateX => "translate_x",
            OpKind::TranslateY => "translate_y",
            OpKind::Posterize => "posterize",
            OpKind::Solarize => "solarize",
            OpKind::Contrast => "contrast",
            OpKind::Brightness => "brightness",
            OpKind::Sharpness => "sharpness",
            OpKind::AutoContrast => "auto_contrast",
            OpKind::Equalize => "equalize",
        }
    }
}

const RAND_AUGMENT_OPS: [OpKind; 12] = [
    OpKind::Rotate,
    OpKind::ShearX,
    OpKind::ShearY,
    OpKind::TranslateX,
    OpKind::TranslateY,
    OpKind::Posterize,
    OpKind::Solarize,
    OpKind::Contrast,
    OpKind::Brightness,
    OpKind::Sharpness,
    OpKind::AutoContrast,
    OpKind::Equalize,
];

/// AugMix chains exclude the ops that destroy the contrast range the mix
/// relies on (contrast/brightness/sharpness).
const AUGMIX_OPS: [OpKind; 9] = [
    OpKind::Rotate,
    OpKind::ShearX,
    OpKind::ShearY,
    OpKind::TranslateX,
    OpKind::TranslateY,
    OpKind::Posterize,
    OpKind::Solarize,
    OpKind::AutoContrast,
    OpKind::Equalize,
];

fn as4(v: &VideoTensor) -> Result<ndarray::ArrayView4<'_, f64>> {
    v.data()
        .view()
        .into_dimensionality::<Ix4>()
        .map_err(|_| TransformError::Shape("augment expects rank-4 (C, T, H, W)".into()))
}

fn wrap(data: Array4<f64>) -> Result<VideoTensor> {
    Ok(validate_video_with_options(data.into_dyn(), true)?)
}

/// Samples the level-dependent op parameters at `level` in [0, 10] with the
/// published linear scaling; signed ops draw their sign from the rng.
fn sample_params(op: OpKind, level: f64, rng: &mut StdRng) -> Vec<f64> {
    let frac = level / MAX_LEVEL;
    let sign = if rng.random::<f64>() < 0.5 { -1.0 } else { 1.0 };
    match op {
        OpKind::Rotate => vec![sign * 30.0 * frac],
        OpKind::ShearX | OpKind::ShearY => vec![sign * 0.3 * frac],
        OpKind::TranslateX | OpKind::TranslateY => vec![sign * 0.45 * frac],
        OpKind::Posterize => vec![(8.0 - (4.0 * frac).round()).max(1.0)],
        OpKind::Solarize => vec![256.0 - (256.0 * frac).round()],
        OpKind::Contrast | OpKind::Brightness | OpKind::Sharpness => {
            vec![1.0 + sign * 0.9 * frac]
        }
        OpKind::AutoContrast | OpKind::Equalize => vec![],
    }
}

/// Freezes an op's full parameter vector against the clip it will run on:
/// stat-dependent ops (contrast mean, auto-contrast bounds, equalize LUTs)
/// bake the clip-level statistics in, so the same vector drives every frame.
fn prepare_params(op: OpKind, level: f64, rng: &mut StdRng, clip: &Array4<f64>) -> Vec<f64> {
    let mut params = sample_params(op, level, rng);
    match op {
        OpKind::Contrast => params.push(clip.mean().unwrap_or(0.0)),
        OpKind::AutoContrast => {
            for ci in 0..clip.shape()[0] {
                let lane = clip.index_axis(Axis(0), ci);
                params.push(lane.iter().cloned().fold(f64::INFINITY, f64::min));
                params.push(lane.iter().cloned().fold(f64::NEG_INFINITY, f64::max));
            }
        }
        OpKind::Equalize => {
            for ci in 0..clip.shape()[0] {
                params.extend(equalize_lut(&clip.index_axis(Axis(0), ci).to_owned().into_dyn()));
            }
        }
        _ => {}
    }
    params
}

/// Classic integer equalization LUT from a channel's histogram; identity
/// when the channel is flat.
fn equalize_lut(lane: &ndarray::ArrayD<f64>) -> [f64; 256] {
    let mut lut = [0f64; 256];
    for (i, v) in lut.iter_mut().enumerate() {
        *v = i as f64;
    }
    let mut hist = [0usize; 256];
    for &v in lane.iter() {
        hist[(v.clamp(0.0, 255.0) as usize).min(255)] += 1;
    }
    let nonzero: Vec<usize> = hist.iter().copied().filter(|&h| h > 0).collect();
    if nonzero.len() <= 1 {
        return lut;
    }
    let total: usize = nonzero.iter().sum();
    let step = (total - nonzero.last().unwrap()) / 255;
    if step == 0 {
        return lut;
    }
    let mut cum = 0usize;
    for (i, &h) in hist.iter().enumerate() {
        lut[i] = (((cum + h / 2) / step) as f64).min(255.0);
        cum += h;
    }
    lut
}

/// Applies one parameterized op to every frame of the clip.
fn apply_op(x: &Array4<f64>, op: OpKind, params: &[f64]) -> Array4<f64> {
    match op {
        OpKind::Rotate => {
            let theta = params[0].to_radians();
            affine(x, theta.cos(), theta.sin(), -theta.sin(), theta.cos(), 0.0, 0.0)
        }
        OpKind::ShearX => affine(x, 1.0, params[0], 0.0, 1.0, 0.0, 0.0),
        OpKind::ShearY => affine(x, 1.0, 0.0, params[0], 1.0, 0.0, 0.0),
        OpKind::TranslateX => {
            let px = params[0] * x.shape()[3] as f64;
            affine(x, 1.0, 0.0, 0.0, 1.0, px, 0.0)
        }
        OpKind::TranslateY => {
            let py = params[0] * x.shape()[2] as f64;
            affine(x, 1.0, 0.0, 0.0, 1.0, 0.0, py)
        }
        OpKind::Posterize => {
            let bits = params[0] as u32;
            let mask = !((1u32 << (8 - bits)) - 1) as f64;
            let mask = mask.min(255.0);
            x.mapv(|v| {
                let q = (v.clamp(0.0, 255.0) as u32) & (mask as u32);
                q as f64
            })
        }
        OpKind::Solarize => {
            let thresh = params[0];
            x.mapv(|v| if v >= thresh { 255.0 - v } else { v })
        }
        OpKind::Contrast => {
            // Blend against the clip-level gray mean frozen at prepare time.
            let f = params[0];
            let mean = params[1];
            x.mapv(|v| (mean + f * (v - mean)).clamp(0.0, 255.0))
        }
        OpKind::Brightness => {
            let f = params[0];
            x.mapv(|v| (v * f).clamp(0.0, 255.0))
        }
        OpKind::Sharpness => sharpness(x, params[0]),
        OpKind::AutoContrast => auto_contrast(x, params),
        OpKind::Equalize => equalize(x, params),
    }
}

/// Inverse-mapped affine resample about the frame center with bilinear
/// interpolation; the same matrix is reused for all frames and channels.
fn affine(x: &Array4<f64>, a: f64, b: f64, c: f64, d: f64, tx: f64, ty: f64) -> Array4<f64> {
    let (cn, t, h, w) = x.dim();
    // Invert the forward 2x2 + translation.
    let det = a * d - b * c;
    let (ia, ib, ic, id) = (d / det, -b / det, -c / det, a / det);
    let cx = (w as f64 - 1.0) / 2.0;
    let cy = (h as f64 - 1.0) / 2.0;
    let mut out = Array4::<f64>::zeros((cn, t, h, w));
    for oy in 0..h {
        let ry = oy as f64 - cy - ty;
        for ox in 0..w {
            let rx = ox as f64 - cx - tx;
            let sx = ia * rx + ib * ry + cx;
            let sy = ic * rx + id * ry + cy;
            let inside = sx > -1.0 && sx < w as f64 && sy > -1.0 && sy < h as f64;
            for ci in 0..cn {
                for ti in 0..t {
                    out[[ci, ti, oy, ox]] = if inside {
                        sample_bilinear(x, ci, ti, sy, sx, FILL)
                    } else {
                        FILL
                    };
                }
            }
        }
    }
    out
}

fn sample_bilinear(x: &Array4<f64>, c: usize, t: usize, y: f64, xx: f64, fill: f64) -> f64 {
    let (h, w) = (x.shape()[2] as isize, x.shape()[3] as isize);
    let y0 = y.floor() as isize;
    let x0 = xx.floor() as isize;
    let ly = y - y0 as f64;
    let lx = xx - x0 as f64;
    let mut acc = 0.0;
    for (dy, wy) in [(0isize, 1.0 - ly), (1, ly)] {
        for (dx, wx) in [(0isize, 1.0 - lx), (1, lx)] {
            let yy = y0 + dy;
            let xx2 = x0 + dx;
            let v = if yy >= 0 && yy < h && xx2 >= 0 && xx2 < w {
                x[[c, t, yy as usize, xx2 as usize]]
            } else {
                fill
            };
            acc += wy * wx * v;
        }
    }
    acc
}

fn sharpness(x: &Array4<f64>, factor: f64) -> Array4<f64> {
    let (cn, t, h, w) = x.dim();
    let mut out = x.clone();
    // 3x3 smoothing kernel [[1,1,1],[1,5,1],[1,1,1]] / 13 on the interior.
    for ci in 0..cn {
        for ti in 0..t {
            for y in 1..h.saturating_sub(1) {
                for xx in 1..w.saturating_sub(1) {
                    let mut s = 0.0;
                    for dy in 0..3 {
                        for dx in 0..3 {
                            let k = if dy == 1 && dx == 1 { 5.0 } else { 1.0 };
                            s += k * x[[ci, ti, y + dy - 1, xx + dx - 1]];
                        }
                    }
                    let smooth = s / 13.0;
                    out[[ci, ti, y, xx]] =
                        (smooth + factor * (x[[ci, ti, y, xx]] - smooth)).clamp(0.0, 255.0);
                }
            }
        }
    }
    out
}

fn auto_contrast(x: &Array4<f64>, bounds: &[f64]) -> Array4<f64> {
    let mut out = x.clone();
    for ci in 0..x.shape()[0] {
        let (lo, hi) = (bounds[2 * ci], bounds[2 * ci + 1]);
        if hi > lo {
            let scale = 255.0 / (hi - lo);
            out.index_axis_mut(Axis(0), ci)
                .mapv_inplace(|v| (v - lo) * scale);
        }
    }
    out
}

fn equalize(x: &Array4<f64>, luts: &[f64]) -> Array4<f64> {
    let mut out = x.clone();
    for ci in 0..x.shape()[0] {
        let lut = &luts[256 * ci..256 * (ci + 1)];
        out.index_axis_mut(Axis(0), ci)
            .mapv_inplace(|v| lut[(v.clamp(0.0, 255.0) as usize).min(255)]);
    }
    out
}

/// RandAugment: `num_layers` ops sampled uniformly from the fixed op set,
/// each parameterized at `magnitude` in [0, 10] and applied with identical
/// parameters to every frame.
pub fn rand_augment(
    v: &VideoTensor,
    num_layers: usize,
    magnitude: u32,
    rng: &mut StdRng,
) -> Result<VideoTensor> {
    rand_augment_with_log(v, num_layers, magnitude, rng).map(|(v, _)| v)
}

/// [`rand_augment`] plus the applied-op log for consistency instrumentation.
pub fn rand_augment_with_log(
    v: &VideoTensor,
    num_layers: usize,
    magnitude: u32,
    rng: &mut StdRng,
) -> Result<(VideoTensor, Vec<AppliedOp>)> {
    if num_layers == 0 {
        return Err(TransformError::Config("num_layers must be >= 1".into()));
    }
    if magnitude > 10 {
        return Err(TransformError::Config(format!(
            "magnitude must be in [0, 10], got {magnitude}"
        )));
    }
    let mut x = as4(v)?.to_owned();
    let mut log = Vec::with_capacity(num_layers);
    for _ in 0..num_layers {
        let op = RAND_AUGMENT_OPS[rng.random_range(0..RAND_AUGMENT_OPS.len())];
        let params = prepare_params(op, magnitude as f64, rng, &x);
        x = apply_op(&x, op, &params);
        log.push(AppliedOp {
            name: op.name(),
            params,
        });
    }
    Ok((wrap(x)?, log))
}

/// Re-applies a logged op to a single frame; consistency audits use this to
/// demonstrate that one frozen parameter set drives every frame of a clip.
pub fn apply_logged_op_to_frame(
    frame: &Array4<f64>,
    op_name: &str,
    params: &[f64],
) -> Array4<f64> {
    let op = RAND_AUGMENT_OPS
        .iter()
        .find(|o| o.name() == op_name)
        .copied()
        .expect("unknown op name in log");
    apply_op(frame, op, params)
}

/// AugMix: `width` chains of 1..=3 ops (or exactly `depth` when nonzero)
/// from the reduced op set, Dirichlet-mixed and then Beta-blended with the
/// input: `out = m*v + (1-m) * sum_i w_i * chain_i(v)`.
pub fn augmix(
    v: &VideoTensor,
    width: usize,
    depth: usize,
    alpha: f64,
    rng: &mut StdRng,
) -> Result<VideoTensor> {
    if width == 0 {
        return Err(TransformError::Config("width must be >= 1".into()));
    }
    if alpha <= 0.0 {
        return Err(TransformError::Config("alpha must be > 0".into()));
    }
    let x = as4(v)?.to_owned();
    let mut chains = Vec::with_capacity(width);
    for _ in 0..width {
        let d = if depth > 0 { depth } else { rng.random_range(1..=3) };
        let mut cx = x.clone();
        for _ in 0..d {
            let op = AUGMIX_OPS[rng.random_range(0..AUGMIX_OPS.len())];
            // Chain severity is sampled up to level 3 of the 0..10 scale.
            let level = rng.random::<f64>() * 3.0;
            let params = prepare_params(op, level, rng, &cx);
            cx = apply_op(&cx, op, &params);
        }
        chains.push(cx);
    }
    let weights = sample_dirichlet(alpha, width, rng)?;
    let m = Beta::new(alpha, alpha)
        .map_err(|e| TransformError::Config(e.to_string()))?
        .sample(rng);
    augmix_combine(v, &chains, &weights, m)
}

/// Symmetric Dirichlet draw via normalized Gamma samples (the distribution
/// crate's Dirichlet is const-generic, but chain width is a runtime value).
pub(crate) fn sample_dirichlet(alpha: f64, n: usize, rng: &mut StdRng) -> Result<Vec<f64>> {
    if n == 1 {
        return Ok(vec![1.0]);
    }
    let gamma = Gamma::new(alpha, 1.0).map_err(|e| TransformError::Config(e.to_string()))?;
    let mut w: Vec<f64> = (0..n).map(|_| gamma.sample(rng).max(1e-300)).collect();
    let total: f64 = w.iter().sum();
    for v in &mut w {
        *v /= total;
    }
    Ok(w)
}

/// The deterministic AugMix combination step, exposed for oracle tests:
/// `out = m*v + (1-m) * sum_i w_i * chain_i(v)`.
pub fn augmix_combine(
    v: &VideoTensor,
    chains: &[Array4<f64>],
    weights: &[f64],
    m: f64,
) -> Result<VideoTensor> {
    if chains.is_empty() || chains.len() != weights.len() {
        return Err(TransformError::Config(
            "chains and weights must be non-empty and equal length".into(),
        ));
    }
    let x = as4(v)?;
    let mut mixed = Array4::<f64>::zeros(x.dim());
    for (cx, &w) in chains.iter().zip(weights) {
        mixed.zip_mut_with(cx, |acc, &v| *acc += w * v);
    }
    let mut out = x.to_owned();
    out.zip_mut_with(&mixed, |o, &mv| *o = m * *o + (1.0 - m) * mv);
    wrap(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;
    use ndarray::IxDyn;
    use rand::SeedableRng;

    fn clip(c: usize, t: usize, h: usize, w: usize, seed: u64) -> VideoTensor {
        let mut rng = StdRng::seed_from_u64(seed);
        let data = Tensor::from_shape_fn(IxDyn(&[c, t, h, w]), |_| {
            (rng.random::<f64>() * 255.0).round()
        });
        validate_video_with_options(data, true).unwrap()
    }

    #[test]
    fn magnitude_zero_geometric_ops_are_identity() {
        let v = clip(3, 2, 8, 8, 0);
        let x = as4(&v).unwrap().to_owned();
        for op in [
            OpKind::Rotate,
            OpKind::ShearX,
            OpKind::ShearY,
            OpKind::TranslateX,
            OpKind::TranslateY,
        ] {
            let mut rng = StdRng::seed_from_u64(1);
            let params = sample_params(op, 0.0, &mut rng);
            let out = apply_op(&x, op, &params);
            assert!(
                crate::tensor::max_abs_diff(&out.clone().into_dyn(), v.data()) < 1e-9,
                "{} not identity at magnitude 0",
                op.name()
            );
        }
        // Posterize at level 0 keeps all 8 bits; solarize threshold is 256.
        let mut rng = StdRng::seed_from_u64(1);
        for op in [OpKind::Posterize, OpKind::Solarize] {
            let params = prepare_params(op, 0.0, &mut rng, &x);
            let out = apply_op(&x, op, &params);
            assert_eq!(out.into_dyn(), *v.data(), "{}", op.name());
        }
    }

    #[test]
    fn fixed_seed_is_bit_identical() {
        let v = clip(3, 4, 10, 10, 2);
        let a = rand_augment(&v, 3, 7, &mut StdRng::seed_from_u64(5)).unwrap();
        let b = rand_augment(&v, 3, 7, &mut StdRng::seed_from_u64(5)).unwrap();
        assert_eq!(a.data(), b.data());
    }

    #[test]
    fn logged_params_reproduce_each_frame() {
        // Applying the logged ops frame-by-frame must equal the clip-level
        // output: zero per-frame parameter variance.
        let v = clip(3, 3, 8, 8, 3);
        let (out, log) =
            rand_augment_with_log(&v, 2, 9, &mut StdRng::seed_from_u64(9)).unwrap();
        for ti in 0..3 {
            let frame = as4(&v)
                .unwrap()
                .slice(ndarray::s![.., ti..ti + 1, .., ..])
                .to_owned();
            let mut fx = frame;
            for op in &log {
                fx = apply_logged_op_to_frame(&fx, op.name, &op.params);
            }
            let got = as4(&out)
                .unwrap()
                .slice(ndarray::s![.., ti..ti + 1, .., ..])
                .to_owned();
            assert!(
                crate::tensor::max_abs_diff(&fx.into_dyn(), &got.into_dyn()) < 1e-9,
                "frame {ti} diverged"
            );
        }
    }

    #[test]
    fn augmix_identity_cases() {
        let v = clip(3, 2, 6, 6, 4);
        let x = as4(&v).unwrap().to_owned();
        // m = 1: output equals input regardless of chains.
        let out = augmix_combine(&v, &[x.clone().mapv(|v| 255.0 - v)], &[1.0], 1.0).unwrap();
        assert_eq!(out.data(), v.data());
        // Identity chains: output equals input for any m and weights.
        let out = augmix_combine(&v, &[x.clone(), x.clone()], &[0.3, 0.7], 0.4).unwrap();
        assert!(crate::tensor::max_abs_diff(out.data(), v.data()) < 1e-9);
    }

    #[test]
    fn augmix_weights_sum_to_one() {
        let mut rng = StdRng::seed_from_u64(6);
        for _ in 0..20 {
            let w = sample_dirichlet(1.0, 3, &mut rng).unwrap();
            assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            assert!(w.iter().all(|&v| v >= 0.0));
        }
    }

    #[test]
    fn augmix_runs_and_is_deterministic() {
        let v = clip(3, 2, 8, 8, 7);
        let a = augmix(&v, 3, 0, 1.0, &mut StdRng::seed_from_u64(8)).unwrap();
        let b = augmix(&v, 3, 0, 1.0, &mut StdRng::seed_from_u64(8)).unwrap();
        assert_eq!(a.data(), b.data());
        assert!(augmix(&v, 0, 0, 1.0, &mut StdRng::seed_from_u64(8)).is_err());
    }

    #[test]
    fn config_errors() {
        let v = clip(3, 1, 4, 4, 10);
        let mut rng = StdRng::seed_from_u64(0);
        assert!(rand_augment(&v, 0, 5, &mut rng).is_err());
        assert!(rand_augment(&v, 1, 11, &mut rng).is_err());
    }
}
