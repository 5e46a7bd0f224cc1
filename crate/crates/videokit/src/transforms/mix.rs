//! Batch-level mixes: MixUp and CutMix.
//!
//! Both operate post-collation on `(B, C, T, H, W)` batches with one-hot (or
//! multi-hot, row-normalized) label matrices, mixing each clip with a
//! partner drawn from a sampled permutation.

use super::{MixPolicy, Result, TransformError};
use crate::data::Label;
use crate::tensor::Tensor;
use ndarray::{Array2, Axis, Ix5};
use rand::rngs::StdRng;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Beta, Distribution};

fn check_batch(batch: &Tensor, labels: &Array2<f64>) -> Result<usize> {
    let b = *batch
        .shape()
        .first()
        .ok_or_else(|| TransformError::Shape("empty batch".into()))?;
    if batch.ndim() != 5 {
        return Err(TransformError::Shape(
            "mix expects a (B, C, T, H, W) batch".into(),
        ));
    }
    if b < 2 {
        return Err(TransformError::Config(
            "mixes need a batch of at least 2".into(),
        ));
    }
    if labels.nrows() != b {
        return Err(TransformError::Shape(format!(
            "labels have {} rows for a batch of {b}",
            labels.nrows()
        )));
    }
    for (i, row) in labels.rows().into_iter().enumerate() {
        if (row.sum() - 1.0).abs() > 1e-6 {
            return Err(TransformError::Config(format!(
                "label row {i} sums to {}, expected 1",
                row.sum()
            )));
        }
    }
    Ok(b)
}

fn sample_permutation(b: usize, rng: &mut StdRng) -> Vec<usize> {
    let mut perm: Vec<usize> = (0..b).collect();
    perm.shuffle(rng);
    perm
}

/// MixUp with an explicit lambda and partner permutation:
/// `out[i] = lambda * batch[i] + (1 - lambda) * batch[perm[i]]`, labels mixed
/// with the same lambda.
pub fn mixup_with(
    batch: &Tensor,
    labels: &Array2<f64>,
    lambda: f64,
    perm: &[usize],
) -> Result<(Tensor, Array2<f64>)> {
    let b = check_batch(batch, labels)?;
    if perm.len() != b {
        return Err(TransformError::Shape("permutation length mismatch".into()));
    }
    let v = batch.view().into_dimensionality::<Ix5>().unwrap();
    let mut out = v.to_owned();
    let mut out_labels = labels.clone();
    for i in 0..b {
        let j = perm[i];
        {
            let partner = v.index_axis(Axis(0), j).to_owned();
            let mut row = out.index_axis_mut(Axis(0), i);
            row.zip_mut_with(&partner, |a, &p| *a = lambda * *a + (1.0 - lambda) * p);
        }
        let partner_label = labels.row(j).to_owned();
        let mut row = out_labels.row_mut(i);
        row.zip_mut_with(&partner_label, |a, &p| *a = lambda * *a + (1.0 - lambda) * p);
    }
    Ok((out.into_dyn(), out_labels))
}

/// MixUp: `lambda ~ Beta(alpha, alpha)` and a sampled partner permutation.
pub fn mixup(
    batch: &Tensor,
    labels: &Array2<f64>,
    alpha: f64,
    rng: &mut StdRng,
) -> Result<(Tensor, Array2<f64>)> {
    if alpha <= 0.0 {
        return Err(TransformError::Config("alpha must be > 0".into()));
    }
    let b = check_batch(batch, labels)?;
    let lambda = Beta::new(alpha, alpha)
        .map_err(|e| TransformError::Config(e.to_string()))?
        .sample(rng);
    let perm = sample_permutation(b, rng);
    mixup_with(batch, labels, lambda, &perm)
}

/// A cut rectangle in pixel coordinates: `[y0, y1) x [x0, x1)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CutBox {
    pub y0: usize,
    pub y1: usize,
    pub x0: usize,
    pub x1: usize,
}

impl CutBox {
    pub fn area(&self) -> usize {
        (self.y1 - self.y0) * (self.x1 - self.x0)
    }
}

/// Samples the CutMix box for `lambda`: relative area `1 - lambda`, center
/// uniform over the frame, clipped at the borders (so the label weight is
/// recomputed from the clipped area).
pub fn sample_cut_box(h: usize, w: usize, lambda: f64, rng: &mut StdRng) -> CutBox {
    let cut_ratio = (1.0 - lambda).max(0.0).sqrt();
    let cut_h = (h as f64 * cut_ratio).round() as isize;
    let cut_w = (w as f64 * cut_ratio).round() as isize;
    let cy = rng.random_range(0..h) as isize;
    let cx = rng.random_range(0..w) as isize;
    CutBox {
        y0: (cy - cut_h / 2).clamp(0, h as isize) as usize,
        y1: (cy + (cut_h + 1) / 2).clamp(0, h as isize) as usize,
        x0: (cx - cut_w / 2).clamp(0, w as isize) as usize,
        x1: (cx + (cut_w + 1) / 2).clamp(0, w as isize) as usize,
    }
}

/// CutMix with an explicit box and permutation. The same box is cut from
/// every frame of a clip (temporal consistency); the label weight is
/// `lambda_adj = 1 - cut_area / (H * W)` exactly.
pub fn cutmix_with_box(
    batch: &Tensor,
    labels: &Array2<f64>,
    cut: CutBox,
    perm: &[usize],
) -> Result<(Tensor, Array2<f64>)> {
    let b = check_batch(batch, labels)?;
    if perm.len() != b {
        return Err(TransformError::Shape("permutation length mismatch".into()));
    }
    let v = batch.view().into_dimensionality::<Ix5>().unwrap();
    let (_, _, _, h, w) = v.dim();
    if cut.y1 > h || cut.x1 > w || cut.y0 > cut.y1 || cut.x0 > cut.x1 {
        return Err(TransformError::Shape(format!("cut box {cut:?} out of range")));
    }
    let lambda_adj = 1.0 - cut.area() as f64 / (h * w) as f64;
    let mut out = v.to_owned();
    let mut out_labels = labels.clone();
    for i in 0..b {
        let j = perm[i];
        let partner = v.index_axis(Axis(0), j);
        let mut row = out.index_axis_mut(Axis(0), i);
        row.slice_mut(ndarray::s![.., .., cut.y0..cut.y1, cut.x0..cut.x1])
            .assign(&partner.slice(ndarray::s![.., .., cut.y0..cut.y1, cut.x0..cut.x1]));
        let partner_label = labels.row(j).to_owned();
        let mut lrow = out_labels.row_mut(i);
        lrow.zip_mut_with(&partner_label, |a, &p| {
            *a = lambda_adj * *a + (1.0 - lambda_adj) * p
        });
    }
    Ok((out.into_dyn(), out_labels))
}

/// CutMix: `lambda ~ Beta(alpha, alpha)`, box of relative area `1 - lambda`.
pub fn cutmix(
    batch: &Tensor,
    labels: &Array2<f64>,
    alpha: f64,
    rng: &mut StdRng,
) -> Result<(Tensor, Array2<f64>)> {
    if alpha <= 0.0 {
        return Err(TransformError::Config("alpha must be > 0".into()));
    }
    let b = check_batch(batch, labels)?;
    let lambda = Beta::new(alpha, alpha)
        .map_err(|e| TransformError::Config(e.to_string()))?
        .sample(rng);
    let shape = batch.shape();
    let cut = sample_cut_box(shape[3], shape[4], lambda, rng);
    let perm = sample_permutation(b, rng);
    cutmix_with_box(batch, labels, cut, &perm)
}

/// Applies a recipe's mix policy to one collated batch; `both` flips a fair
/// coin between mixup and cutmix per batch.
pub fn apply_mix_policy(
    batch: &Tensor,
    labels: &Array2<f64>,
    policy: MixPolicy,
    alpha: f64,
    rng: &mut StdRng,
) -> Result<(Tensor, Array2<f64>)> {
    match policy {
        MixPolicy::None => Ok((batch.clone(), labels.clone())),
        MixPolicy::Mixup => mixup(batch, labels, alpha, rng),
        MixPolicy::Cutmix => cutmix(batch, labels, alpha, rng),
        MixPolicy::Both => {
            if rng.random::<f64>() < 0.5 {
                mixup(batch, labels, alpha, rng)
            } else {
                cutmix(batch, labels, alpha, rng)
            }
        }
    }
}

/// One-hot (index) or normalized multi-hot label matrix.
pub fn labels_to_one_hot(labels: &[Label], num_classes: usize) -> Result<Array2<f64>> {
    let mut out = Array2::<f64>::zeros((labels.len(), num_classes));
    for (i, label) in labels.iter().enumerate() {
        match label {
            Label::Index(c) => {
                if *c >= num_classes {
                    return Err(TransformError::Config(format!(
                        "label {c} outside class count {num_classes}"
                    )));
                }
                out[[i, *c]] = 1.0;
            }
            Label::MultiHot(cs) => {
                if cs.is_empty() {
                    return Err(TransformError::Config("empty multi-hot label".into()));
                }
                for c in cs {
                    if *c >= num_classes {
                        return Err(TransformError::Config(format!(
                            "label {c} outside class count {num_classes}"
                        )));
                    }
                    out[[i, *c]] = 1.0;
                }
                let sum: f64 = out.row(i).sum();
                out.row_mut(i).mapv_inplace(|v| v / sum);
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::IxDyn;
    use rand::SeedableRng;

    fn batch(b: usize, seed: u64) -> (Tensor, Array2<f64>) {
        let mut rng = StdRng::seed_from_u64(seed);
        let x = Tensor::from_shape_fn(IxDyn(&[b, 3, 2, 8, 8]), |_| rng.random::<f64>());
        let labels = labels_to_one_hot(
            &(0..b).map(|i| Label::Index(i % 4)).collect::<Vec<_>>(),
            4,
        )
        .unwrap();
        (x, labels)
    }

    #[test]
    fn lambda_one_is_identity() {
        let (x, labels) = batch(3, 0);
        let perm = vec![1, 2, 0];
        let (bx, bl) = mixup_with(&x, &labels, 1.0, &perm).unwrap();
        assert_eq!(bx, x);
        assert_eq!(bl, labels);
    }

    #[test]
    fn lambda_half_swap_is_elementwise_mean() {
        let (x, labels) = batch(2, 1);
        let (bx, bl) = mixup_with(&x, &labels, 0.5, &[1, 0]).unwrap();
        let v = x.view().into_dimensionality::<Ix5>().unwrap();
        let mean = (&v.index_axis(Axis(0), 0).to_owned()
            + &v.index_axis(Axis(0), 1).to_owned())
            / 2.0;
        let got = bx.view().into_dimensionality::<Ix5>().unwrap();
        for i in 0..2 {
            assert!(
                crate::tensor::max_abs_diff(
                    &got.index_axis(Axis(0), i).to_owned().into_dyn(),
                    &mean.clone().into_dyn()
                ) < 1e-12
            );
        }
        for i in 0..2 {
            assert!((bl.row(i).sum() - 1.0).abs() < 1e-12);
            assert!((bl[[i, 0]] - 0.5).abs() < 1e-12);
            assert!((bl[[i, 1]] - 0.5).abs() < 1e-12);
        }
    }

    #[test]
    fn mixup_respects_convex_bounds() {
        let (x, labels) = batch(4, 2);
        let mut rng = StdRng::seed_from_u64(3);
        let (bx, bl) = mixup(&x, &labels, 0.8, &mut rng).unwrap();
        let lo = x.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        assert!(bx.iter().all(|&v| v >= lo - 1e-12 && v <= hi + 1e-12));
        for row in bl.rows() {
            assert!((row.sum() - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn zero_area_box_is_identity() {
        let (x, labels) = batch(2, 4);
        let cut = CutBox {
            y0: 0,
            y1: 0,
            x0: 0,
            x1: 0,
        };
        let (bx, bl) = cutmix_with_box(&x, &labels, cut, &[1, 0]).unwrap();
        assert_eq!(bx, x);
        assert_eq!(bl, labels);
    }

    #[test]
    fn full_frame_box_swaps_clip_and_labels() {
        let (x, labels) = batch(2, 5);
        let cut = CutBox {
            y0: 0,
            y1: 8,
            x0: 0,
            x1: 8,
        };
        let (bx, bl) = cutmix_with_box(&x, &labels, cut, &[1, 0]).unwrap();
        let v = x.view().into_dimensionality::<Ix5>().unwrap();
        let got = bx.view().into_dimensionality::<Ix5>().unwrap();
        assert_eq!(
            got.index_axis(Axis(0), 0).to_owned(),
            v.index_axis(Axis(0), 1).to_owned()
        );
        assert_eq!(bl.row(0).to_owned(), labels.row(1).to_owned());
    }

    #[test]
    fn half_area_box_gives_exact_lambda_adj() {
        // H = W = 8 with a 4x4 box: lambda_adj = 1 - 16/64 = 0.75.
        let (x, labels) = batch(2, 6);
        let cut = CutBox {
            y0: 2,
            y1: 6,
            x0: 2,
            x1: 6,
        };
        let (_, bl) = cutmix_with_box(&x, &labels, cut, &[1, 0]).unwrap();
        assert!((bl[[0, 0]] - 0.75).abs() < 1e-12);
        assert!((bl[[0, 1]] - 0.25).abs() < 1e-12);
    }

    #[test]
    fn cut_pixels_come_from_exactly_one_source() {
        let (x, labels) = batch(2, 7);
        let mut rng = StdRng::seed_from_u64(8);
        let (bx, _) = cutmix(&x, &labels, 1.0, &mut rng).unwrap();
        let v = x.view().into_dimensionality::<Ix5>().unwrap();
        let got = bx.view().into_dimensionality::<Ix5>().unwrap();
        for i in 0..2 {
            for c in 0..3 {
                for t in 0..2 {
                    for y in 0..8 {
                        for xx in 0..8 {
                            let o = got[[i, c, t, y, xx]];
                            assert!(
                                o == v[[i, c, t, y, xx]]
                                    || o == v[[1 - i, c, t, y, xx]]
                                    || (v[[0, c, t, y, xx]] == v[[1, c, t, y, xx]])
                            );
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn small_batch_rejected() {
        let (x, labels) = batch(2, 9);
        let one = x
            .view()
            .slice_axis(Axis(0), ndarray::Slice::from(0..1))
            .to_owned();
        let one_label = labels.slice(ndarray::s![0..1, ..]).to_owned();
        let mut rng = StdRng::seed_from_u64(0);
        assert!(mixup(&one.into_dyn(), &one_label, 1.0, &mut rng).is_err());
    }

    #[test]
    fn multi_hot_rows_sum_to_one() {
        let labels = labels_to_one_hot(
            &[Label::MultiHot(vec![0, 2, 3]), Label::Index(1)],
            4,
        )
        .unwrap();
        for row in labels.rows() {
            assert!((row.sum() - 1.0).abs() < 1e-12);
        }
    }
}
