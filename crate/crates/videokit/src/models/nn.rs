//! Module tree, layer forward passes, and parameter traversal.
//!
//! Models are trees of [`Node`]s. Factories assemble trees; the accelerator
//! rewrites them; counters and checkpoints walk them. Values flowing through
//! a tree are lists of tensors (one entry for single-stream models, two for
//! SlowFast-style pathway lists) plus optional detection boxes.

use crate::tensor::{fmt_shape, Tensor};
use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array1, Array2, Array5, ArrayD, Axis, Ix2, Ix5, IxDyn};
use rand::rngs::StdRng;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

/// Errors surfaced while building or running models.
#[derive(Debug, Error)]
pub enum ModelError {
    #[error("config error: {0}")]
    Config(String),
    #[error("shape error: {0}")]
    Shape(String),
    #[error("trace error: {0}")]
    Trace(String),
    #[error("degenerate box: {0}")]
    Box(String),
}

pub type Result<T> = std::result::Result<T, ModelError>;

/// Input/output of a module tree: one tensor per pathway, plus optional
/// region proposals for detection heads.
///
/// Boxes are rows of `(batch_index, x1, y1, x2, y2)` in input-pixel
/// coordinates.
#[derive(Debug, Clone)]
pub struct Value {
    pub tensors: Vec<Tensor>,
    pub boxes: Option<Array2<f64>>,
}

impl Value {
    pub fn single(t: Tensor) -> Self {
        Value {
            tensors: vec![t],
            boxes: None,
        }
    }

    pub fn pathways(ts: Vec<Tensor>) -> Self {
        Value {
            tensors: ts,
            boxes: None,
        }
    }

    pub fn with_boxes(mut self, boxes: Array2<f64>) -> Self {
        self.boxes = Some(boxes);
        self
    }

    /// The sole tensor of a single-stream value.
    pub fn into_tensor(mut self) -> Result<Tensor> {
        if self.tensors.len() != 1 {
            return Err(ModelError::Shape(format!(
                "expected a single tensor, got a {}-pathway list",
                self.tensors.len()
            )));
        }
        Ok(self.tensors.pop().unwrap())
    }
}

/// Whether a named array is learnable or a tracked statistic.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ArrayKind {
    Param,
    Buffer,
}

// ---------------------------------------------------------------------------
// Layers
// ---------------------------------------------------------------------------

/// 3D convolution with groups, stride, zero padding, and dilation.
///
/// Weight layout is `(C_out, C_in / groups, kT, kH, kW)`.
#[derive(Debug, Clone)]
pub struct Conv3d {
    pub weight: Tensor,
    pub bias: Option<Tensor>,
    pub stride: [usize; 3],
    pub padding: [usize; 3],
    pub dilation: [usize; 3],
    pub groups: usize,
}

impl Conv3d {
    /// He-initialized convolution with same-padding for odd kernels.
    pub fn new(
        dim_in: usize,
        dim_out: usize,
        kernel: [usize; 3],
        stride: [usize; 3],
        groups: usize,
        bias: bool,
        rng: &mut StdRng,
    ) -> Result<Self> {
        Self::with_dilation(dim_in, dim_out, kernel, stride, [1, 1, 1], groups, bias, rng)
    }

    #[allow(clippy::too_many_arguments)]
    pub fn with_dilation(
        dim_in: usize,
        dim_out: usize,
        kernel: [usize; 3],
        stride: [usize; 3],
        dilation: [usize; 3],
        groups: usize,
        bias: bool,
        rng: &mut StdRng,
    ) -> Result<Self> {
        if dim_in == 0 || dim_out == 0 {
            return Err(ModelError::Config("conv dims must be > 0".into()));
        }
        if kernel.iter().any(|&k| k % 2 == 0) {
            return Err(ModelError::Config(format!(
                "conv kernel must be odd per axis for same padding, got {kernel:?}"
            )));
        }
        if dim_in % groups != 0 || dim_out % groups != 0 {
            return Err(ModelError::Config(format!(
                "groups {groups} must divide dim_in {dim_in} and dim_out {dim_out}"
            )));
        }
        let padding = [
            dilation[0] * (kernel[0] - 1) / 2,
            dilation[1] * (kernel[1] - 1) / 2,
            dilation[2] * (kernel[2] - 1) / 2,
        ];
        let fan_out = dim_out * kernel[0] * kernel[1] * kernel[2];
        let normal = Normal::new(0.0, (2.0 / fan_out as f64).sqrt()).unwrap();
        let weight = ArrayD::from_shape_fn(
            IxDyn(&[dim_out, dim_in / groups, kernel[0], kernel[1], kernel[2]]),
            |_| normal.sample(rng),
        );
        let bias = bias.then(|| ArrayD::zeros(IxDyn(&[dim_out])));
        Ok(Conv3d {
            weight,
            bias,
            stride,
            padding,
            dilation,
            groups,
        })
    }

    pub fn out_channels(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn in_channels(&self) -> usize {
        self.weight.shape()[1] * self.groups
    }

    pub fn kernel(&self) -> [usize; 3] {
        let s = self.weight.shape();
        [s[2], s[3], s[4]]
    }

    fn out_spatial(&self, t: usize, h: usize, w: usize) -> Result<[usize; 3]> {
        let k = self.kernel();
        let mut out = [0usize; 3];
        for (i, dim) in [t, h, w].into_iter().enumerate() {
            let eff = self.dilation[i] * (k[i] - 1) + 1;
            let padded = dim + 2 * self.padding[i];
            if padded < eff {
                return Err(ModelError::Shape(format!(
                    "input dim {dim} too small for kernel {} (dilation {})",
                    k[i], self.dilation[i]
                )));
            }
            out[i] = (padded - eff) / self.stride[i] + 1;
        }
        Ok(out)
    }

    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let x = as5(x)?;
        let (b, cin, t, h, w) = x.dim();
        if cin != self.in_channels() {
            return Err(ModelError::Shape(format!(
                "conv expects {} input channels, got {}",
                self.in_channels(),
                cin
            )));
        }
        let [to, ho, wo] = self.out_spatial(t, h, w)?;
        let cout = self.out_channels();
        let k = self.kernel();
        let weight = self.weight.view().into_dimensionality::<Ix5>().unwrap();
        let mut out = Array5::<f64>::zeros((b, cout, to, ho, wo));

        let pointwise = k == [1, 1, 1]
            && self.stride == [1, 1, 1]
            && self.padding == [0, 0, 0]
            && self.groups == 1;
        let depthwise = self.groups == cin && self.weight.shape()[1] == 1;

        if pointwise {
            // Plain channel mixing: (Cout, Cin) x (Cin, T*H*W) per batch item.
            let l = t * h * w;
            let w2 = self
                .weight
                .view()
                .into_shape_with_order((cout, cin))
                .unwrap();
            for bi in 0..b {
                let x2 = x
                    .slice(s![bi, .., .., .., ..])
                    .into_shape_with_order((cin, l))
                    .unwrap()
                    .into_dimensionality::<Ix2>()
                    .unwrap();
                let mut o2 = out
                    .slice_mut(s![bi, .., .., .., ..])
                    .into_shape_with_order((cout, l))
                    .unwrap();
                general_mat_mul(1.0, &w2, &x2, 0.0, &mut o2);
            }
        } else if depthwise {
            let multiplier = cout / cin;
            for bi in 0..b {
                for oc in 0..cout {
                    let ic = oc / multiplier;
                    for ot in 0..to {
                        for oh in 0..ho {
                            for ow in 0..wo {
                                let mut acc = 0.0;
                                for kt in 0..k[0] {
                                    let it = (ot * self.stride[0] + kt * self.dilation[0])
                                        as isize
                                        - self.padding[0] as isize;
                                    if it < 0 || it >= t as isize {
                                        continue;
                                    }
                                    for kh in 0..k[1] {
                                        let ih = (oh * self.stride[1] + kh * self.dilation[1])
                                            as isize
                                            - self.padding[1] as isize;
                                        if ih < 0 || ih >= h as isize {
                                            continue;
                                        }
                                        for kw in 0..k[2] {
                                            let iw = (ow * self.stride[2]
                                                + kw * self.dilation[2])
                                                as isize
                                                - self.padding[2] as isize;
                                            if iw < 0 || iw >= w as isize {
                                                continue;
                                            }
                                            acc += weight[[oc, 0, kt, kh, kw]]
                                                * x[[
                                                    bi,
                                                    ic,
                                                    it as usize,
                                                    ih as usize,
                                                    iw as usize,
                                                ]];
                                        }
                                    }
                                }
                                out[[bi, oc, ot, oh, ow]] = acc;
                            }
                        }
                    }
                }
            }
        } else {
            // General grouped conv via im2col + GEMM.
            let cg = cin / self.groups;
            let cog = cout / self.groups;
            let kvol = k[0] * k[1] * k[2];
            let l = to * ho * wo;
            let mut cols = Array2::<f64>::zeros((cg * kvol, l));
            for bi in 0..b {
                for g in 0..self.groups {
                    cols.fill(0.0);
                    for ic in 0..cg {
                        for kt in 0..k[0] {
                            for kh in 0..k[1] {
                                for kw in 0..k[2] {
                                    let row = ((ic * k[0] + kt) * k[1] + kh) * k[2] + kw;
                                    let mut cols_row = cols.row_mut(row);
                                    for ot in 0..to {
                                        let it = (ot * self.stride[0] + kt * self.dilation[0])
                                            as isize
                                            - self.padding[0] as isize;
                                        if it < 0 || it >= t as isize {
                                            continue;
                                        }
                                        for oh in 0..ho {
                                            let ih = (oh * self.stride[1]
                                                + kh * self.dilation[1])
                                                as isize
                                                - self.padding[1] as isize;
                                            if ih < 0 || ih >= h as isize {
                                                continue;
                                            }
                                            for ow in 0..wo {
                                                let iw = (ow * self.stride[2]
                                                    + kw * self.dilation[2])
                                                    as isize
                                                    - self.padding[2] as isize;
                                                if iw < 0 || iw >= w as isize {
                                                    continue;
                                                }
                                                cols_row[(ot * ho + oh) * wo + ow] = x[[
                                                    bi,
                                                    g * cg + ic,
                                                    it as usize,
                                                    ih as usize,
                                                    iw as usize,
                                                ]];
                                            }
                                        }
                                    }
                                }
                            }
                        }
                    }
                    let wg = self
                        .weight
                        .slice(s![g * cog..(g + 1) * cog, .., .., .., ..])
                        .into_shape_with_order((cog, cg * kvol))
                        .unwrap()
                        .into_dimensionality::<Ix2>()
                        .unwrap();
                    let mut og = out
                        .slice_mut(s![bi, g * cog..(g + 1) * cog, .., .., ..])
                        .into_shape_with_order((cog, l))
                        .unwrap();
                    general_mat_mul(1.0, &wg, &cols.view(), 0.0, &mut og);
                }
            }
        }

        if let Some(bias) = &self.bias {
            for oc in 0..cout {
                let bv = bias[[oc]];
                out.slice_mut(s![.., oc, .., .., ..]).mapv_inplace(|v| v + bv);
            }
        }
        Ok(out.into_dyn())
    }
}

/// Inference-mode batch normalization over the channel axis.
#[derive(Debug, Clone)]
pub struct BatchNorm {
    pub gamma: Tensor,
    pub beta: Tensor,
    pub running_mean: Tensor,
    pub running_var: Tensor,
    pub eps: f64,
}

impl BatchNorm {
    pub fn new(channels: usize) -> Self {
        BatchNorm {
            gamma: ArrayD::ones(IxDyn(&[channels])),
            beta: ArrayD::zeros(IxDyn(&[channels])),
            running_mean: ArrayD::zeros(IxDyn(&[channels])),
            running_var: ArrayD::ones(IxDyn(&[channels])),
            eps: 1e-5,
        }
    }

    /// Zero-gamma variant used to initialize the last norm of a residual
    /// branch, making fresh residual blocks the identity map.
    pub fn new_zero_gamma(channels: usize) -> Self {
        let mut bn = Self::new(channels);
        bn.gamma.fill(0.0);
        bn
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }

    /// Per-channel `(scale, shift)` such that `y = scale * x + shift`.
    pub fn affine(&self) -> (Array1<f64>, Array1<f64>) {
        let c = self.channels();
        let mut scale = Array1::zeros(c);
        let mut shift = Array1::zeros(c);
        for i in 0..c {
            let sc = self.gamma[[i]] / (self.running_var[[i]] + self.eps).sqrt();
            scale[i] = sc;
            shift[i] = self.beta[[i]] - self.running_mean[[i]] * sc;
        }
        (scale, shift)
    }

    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let rank = x.ndim();
        if rank < 2 {
            return Err(ModelError::Shape("batch norm expects rank >= 2".into()));
        }
        let c = x.shape()[1];
        if c != self.channels() {
            return Err(ModelError::Shape(format!(
                "batch norm expects {} channels, got {}",
                self.channels(),
                c
            )));
        }
        let (scale, shift) = self.affine();
        let mut out = x.clone();
        for ci in 0..c {
            let mut lane = out.index_axis_mut(Axis(1), ci);
            let sc = scale[ci];
            let sh = shift[ci];
            lane.mapv_inplace(|v| v * sc + sh);
        }
        Ok(out)
    }
}

/// Elementwise nonlinearities, injectable into every factory.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Identity,
    Relu,
    Swish,
    Sigmoid,
    /// Softmax over the trailing axis.
    Softmax,
}

impl Activation {
    fn forward(&self, x: &Tensor) -> Tensor {
        match self {
            Activation::Identity => x.clone(),
            Activation::Relu => x.mapv(|v| v.max(0.0)),
            Activation::Swish => x.mapv(|v| v / (1.0 + (-v).exp())),
            Activation::Sigmoid => x.mapv(|v| 1.0 / (1.0 + (-v).exp())),
            Activation::Softmax => {
                let mut out = x.clone();
                let trailing = x.ndim() - 1;
                for mut row in out.lanes_mut(Axis(trailing)) {
                    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    row.mapv_inplace(|v| (v - max).exp());
                    let sum: f64 = row.sum();
                    row.mapv_inplace(|v| v / sum);
                }
                out
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PoolKind {
    Max,
    Avg,
}

/// Fixed-window spatiotemporal pooling.
#[derive(Debug, Clone)]
pub struct Pool3d {
    pub kind: PoolKind,
    pub kernel: [usize; 3],
    pub stride: [usize; 3],
    pub padding: [usize; 3],
}

impl Pool3d {
    fn out_spatial(&self, dims: [usize; 3]) -> Result<[usize; 3]> {
        let mut out = [0usize; 3];
        for i in 0..3 {
            let padded = dims[i] + 2 * self.padding[i];
            if padded < self.kernel[i] {
                return Err(ModelError::Shape(format!(
                    "pool kernel {} exceeds padded input {}",
                    self.kernel[i], padded
                )));
            }
            out[i] = (padded - self.kernel[i]) / self.stride[i] + 1;
        }
        Ok(out)
    }

    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let x = as5(x)?;
        let (b, c, t, h, w) = x.dim();
        let [to, ho, wo] = self.out_spatial([t, h, w])?;
        let mut out = Array5::<f64>::zeros((b, c, to, ho, wo));
        let kvol = (self.kernel[0] * self.kernel[1] * self.kernel[2]) as f64;
        for bi in 0..b {
            for ci in 0..c {
                for ot in 0..to {
                    for oh in 0..ho {
                        for ow in 0..wo {
                            let mut best = f64::NEG_INFINITY;
                            let mut sum = 0.0;
                            for kt in 0..self.kernel[0] {
                                let it =
                                    (ot * self.stride[0] + kt) as isize - self.padding[0] as isize;
                                for kh in 0..self.kernel[1] {
                                    let ih = (oh * self.stride[1] + kh) as isize
                                        - self.padding[1] as isize;
                                    for kw in 0..self.kernel[2] {
                                        let iw = (ow * self.stride[2] + kw) as isize
                                            - self.padding[2] as isize;
                                        let inside = it >= 0
                                            && (it as usize) < t
                                            && ih >= 0
                                            && (ih as usize) < h
                                            && iw >= 0
                                            && (iw as usize) < w;
                                        if inside {
                                            let v = x[[
                                                bi,
                                                ci,
                                                it as usize,
                                                ih as usize,
                                                iw as usize,
                                            ]];
                                            best = best.max(v);
                                            sum += v;
                                        }
                                    }
                                }
                            }
                            out[[bi, ci, ot, oh, ow]] = match self.kind {
                                PoolKind::Max => best,
                                PoolKind::Avg => sum / kvol,
                            };
                        }
                    }
                }
            }
        }
        Ok(out.into_dyn())
    }
}

/// Fully-connected projection over the trailing feature axis.
#[derive(Debug, Clone)]
pub struct Linear {
    /// `(out_features, in_features)`.
    pub weight: Tensor,
    pub bias: Option<Tensor>,
}

impl Linear {
    pub fn new(dim_in: usize, dim_out: usize, rng: &mut StdRng) -> Self {
        let normal = Normal::new(0.0, 0.01).unwrap();
        Linear {
            weight: ArrayD::from_shape_fn(IxDyn(&[dim_out, dim_in]), |_| normal.sample(rng)),
            bias: Some(ArrayD::zeros(IxDyn(&[dim_out]))),
        }
    }

    pub fn in_features(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn out_features(&self) -> usize {
        self.weight.shape()[0]
    }

    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let shape = x.shape().to_vec();
        let d_in = *shape.last().ok_or_else(|| {
            ModelError::Shape("linear expects at least one axis".into())
        })?;
        if d_in != self.in_features() {
            return Err(ModelError::Shape(format!(
                "linear expects {} input features, got {}",
                self.in_features(),
                d_in
            )));
        }
        let rows: usize = shape[..shape.len() - 1].iter().product();
        let x2 = x
            .view()
            .into_shape_with_order((rows, d_in))
            .map_err(|e| ModelError::Shape(e.to_string()))?;
        let w2 = self
            .weight
            .view()
            .into_dimensionality::<Ix2>()
            .unwrap();
        let mut out = Array2::<f64>::zeros((rows, self.out_features()));
        general_mat_mul(1.0, &x2, &w2.t(), 0.0, &mut out);
        if let Some(bias) = &self.bias {
            for mut row in out.rows_mut() {
                for (j, v) in row.iter_mut().enumerate() {
                    *v += bias[[j]];
                }
            }
        }
        let mut out_shape = shape[..shape.len() - 1].to_vec();
        out_shape.push(self.out_features());
        Ok(out
            .into_shape_with_order(IxDyn(&out_shape))
            .unwrap())
    }
}

/// Int8 weights plus per-output-channel scales; forward runs on the
/// dequantized copy.
#[derive(Debug, Clone)]
pub struct QuantConv3d {
    pub q_weight: Vec<i8>,
    pub scales: Tensor,
    pub inner: Conv3d,
}

// ---------------------------------------------------------------------------
// ROI detection head
// ---------------------------------------------------------------------------

/// Region-of-interest classification head for spatiotemporal detection.
///
/// Pathway features are averaged over time, concatenated over channels,
/// ROI-aligned per box, spatially max-pooled, and classified per box.
#[derive(Debug, Clone)]
pub struct RoiHead {
    pub output_size: (usize, usize),
    pub spatial_scale: f64,
    /// Bilinear samples per bin axis; 0 picks `ceil(roi_extent / bins)`.
    pub sampling_ratio: usize,
    pub dropout: f64,
    pub proj: Linear,
    pub activation: Activation,
}

impl RoiHead {
    fn forward(&self, value: &Value) -> Result<Tensor> {
        let boxes = value
            .boxes
            .as_ref()
            .ok_or_else(|| ModelError::Shape("detection head requires boxes input".into()))?;
        if boxes.ncols() != 5 {
            return Err(ModelError::Box(format!(
                "boxes must be (N, 5) rows of (batch_idx, x1, y1, x2, y2), got {} cols",
                boxes.ncols()
            )));
        }
        // Temporal average per pathway, then channel concat.
        let mut pooled: Vec<Tensor> = Vec::new();
        for t in &value.tensors {
            let v = as5(t)?;
            pooled.push(v.mean_axis(Axis(2)).unwrap().into_dyn());
        }
        let feat = concat_channels4(&pooled)?;
        let (b, c, h, w) = {
            let f4 = feat.view().into_dimensionality::<ndarray::Ix4>().unwrap();
            f4.dim()
        };
        let n = boxes.nrows();
        let (ph, pw) = self.output_size;
        let mut per_box = Array2::<f64>::zeros((n, c));
        for bi in 0..n {
            let row = boxes.row(bi);
            let batch = row[0] as usize;
            if batch >= b {
                return Err(ModelError::Box(format!(
                    "box batch index {batch} out of range (batch size {b})"
                )));
            }
            if row[3] <= row[1] || row[4] <= row[2] {
                return Err(ModelError::Box(format!(
                    "box {bi} has non-positive extent: ({}, {}, {}, {})",
                    row[1], row[2], row[3], row[4]
                )));
            }
            let aligned = roi_align_single(
                &feat,
                batch,
                [
                    row[1] * self.spatial_scale,
                    row[2] * self.spatial_scale,
                    row[3] * self.spatial_scale,
                    row[4] * self.spatial_scale,
                ],
                (ph, pw),
                self.sampling_ratio,
                (h, w),
            );
            // Spatial max over the aligned grid.
            for ci in 0..c {
                let mut best = f64::NEG_INFINITY;
                for y in 0..ph {
                    for x in 0..pw {
                        best = best.max(aligned[[ci, y, x]]);
                    }
                }
                per_box[[bi, ci]] = best;
            }
        }
        let logits = self.proj.forward(&per_box.into_dyn())?;
        Ok(self.activation.forward(&logits))
    }
}

/// ROI-align one box on one batch item: continuous bilinear sampling with the
/// half-pixel (`aligned`) convention; returns `(C, ph, pw)`.
pub fn roi_align_single(
    feat: &Tensor,
    batch: usize,
    roi: [f64; 4],
    bins: (usize, usize),
    sampling_ratio: usize,
    hw: (usize, usize),
) -> ndarray::Array3<f64> {
    let f4 = feat.view().into_dimensionality::<ndarray::Ix4>().unwrap();
    let c = f4.shape()[1];
    let (h, w) = hw;
    let (ph, pw) = bins;
    let x1 = roi[0] - 0.5;
    let y1 = roi[1] - 0.5;
    let roi_w = (roi[2] - roi[0]).max(1e-9);
    let roi_h = (roi[3] - roi[1]).max(1e-9);
    let bin_w = roi_w / pw as f64;
    let bin_h = roi_h / ph as f64;
    let grid_y = if sampling_ratio > 0 {
        sampling_ratio
    } else {
        (roi_h / ph as f64).ceil().max(1.0) as usize
    };
    let grid_x = if sampling_ratio > 0 {
        sampling_ratio
    } else {
        (roi_w / pw as f64).ceil().max(1.0) as usize
    };
    let mut out = ndarray::Array3::<f64>::zeros((c, ph, pw));
    for ci in 0..c {
        for by in 0..ph {
            for bx in 0..pw {
                let mut acc = 0.0;
                for gy in 0..grid_y {
                    let yy = y1 + by as f64 * bin_h + (gy as f64 + 0.5) * bin_h / grid_y as f64;
                    for gx in 0..grid_x {
                        let xx =
                            x1 + bx as f64 * bin_w + (gx as f64 + 0.5) * bin_w / grid_x as f64;
                        acc += bilinear(&f4, batch, ci, yy, xx, h, w);
                    }
                }
                out[[ci, by, bx]] = acc / (grid_y * grid_x) as f64;
            }
        }
    }
    out
}

fn bilinear(
    f4: &ndarray::ArrayView4<f64>,
    b: usize,
    c: usize,
    y: f64,
    x: f64,
    h: usize,
    w: usize,
) -> f64 {
    if y < -1.0 || y > h as f64 || x < -1.0 || x > w as f64 {
        return 0.0;
    }
    let y = y.max(0.0);
    let x = x.max(0.0);
    let y0 = y.floor() as usize;
    let x0 = x.floor() as usize;
    let y1 = (y0 + 1).min(h - 1);
    let x1 = (x0 + 1).min(w - 1);
    let y0 = y0.min(h - 1);
    let x0 = x0.min(w - 1);
    let ly = y - y0 as f64;
    let lx = x - x0 as f64;
    let v00 = f4[[b, c, y0, x0]];
    let v01 = f4[[b, c, y0, x1]];
    let v10 = f4[[b, c, y1, x0]];
    let v11 = f4[[b, c, y1, x1]];
    v00 * (1.0 - ly) * (1.0 - lx) + v01 * (1.0 - ly) * lx + v10 * ly * (1.0 - lx) + v11 * ly * lx
}

// ---------------------------------------------------------------------------
// Node tree
// ---------------------------------------------------------------------------

/// One vertex of a module tree.
#[derive(Debug, Clone)]
pub enum Node {
    Conv3d(Conv3d),
    /// Spatial conv rewritten to run per frame (T folded into the batch axis).
    FramewiseConv2d(Conv3d),
    /// Temporal conv rewritten to run per pixel (H*W folded into the batch axis).
    TemporalConv1d(Conv3d),
    QuantConv3d(QuantConv3d),
    BatchNorm(BatchNorm),
    Activation(Activation),
    Pool(Pool3d),
    /// Average over (T, H, W), producing `(B, C)` features.
    GlobalAvgPool,
    /// Average over (T, H, W) keeping singleton axes: `(B, C, 1, 1, 1)`.
    GlobalAvgPoolKeepDims,
    /// Collapses all trailing axes into one: `(B, ...) -> (B, prod)`.
    FlattenTrailing,
    /// Inference no-op kept for recipe parity.
    Dropout(f64),
    Linear(Linear),
    Sequential(Vec<(String, Node)>),
    Residual {
        main: Box<Node>,
        shortcut: Option<Box<Node>>,
        post_activation: Activation,
    },
    SqueezeExcite {
        fc1: Conv3d,
        fc2: Conv3d,
    },
    /// Applies the i-th child to the i-th pathway tensor.
    Parallel(Vec<(String, Node)>),
    /// Lateral fusion: `[slow, fast] -> [concat(slow, conv(fast)), fast]`.
    /// The norm is folded away by the deployment pass.
    FuseFastToSlow {
        conv: Conv3d,
        norm: Option<BatchNorm>,
        activation: Activation,
    },
    /// Global-pools every pathway and concatenates features into `(B, sum C)`.
    PoolPathwaysConcat,
    /// Reshapes a spectrogram `[..., T, F]` into 1-channel video `(.., 1, T, 1, F)`.
    SpectrogramAdapter,
    RoiHead(RoiHead),
}

impl Node {
    pub fn seq(children: Vec<(&str, Node)>) -> Node {
        Node::Sequential(
            children
                .into_iter()
                .map(|(n, c)| (n.to_string(), c))
                .collect(),
        )
    }

    /// Runs the tree on `value`.
    pub fn forward(&self, value: &Value) -> Result<Value> {
        match self {
            Node::Conv3d(conv) => map_single(value, |x| conv.forward(x)),
            Node::FramewiseConv2d(conv) => map_single(value, |x| framewise_forward(conv, x)),
            Node::TemporalConv1d(conv) => map_single(value, |x| temporal_forward(conv, x)),
            Node::QuantConv3d(q) => map_single(value, |x| q.inner.forward(x)),
            Node::BatchNorm(bn) => map_single(value, |x| bn.forward(x)),
            Node::Activation(a) => map_single(value, |x| Ok(a.forward(x))),
            Node::Pool(p) => map_single(value, |x| p.forward(x)),
            Node::GlobalAvgPool => map_single(value, |x| {
                let v = as5(x)?;
                let (b, c, t, h, w) = v.dim();
                let denom = (t * h * w) as f64;
                let mut out = Array2::<f64>::zeros((b, c));
                for bi in 0..b {
                    for ci in 0..c {
                        out[[bi, ci]] = v.slice(s![bi, ci, .., .., ..]).sum() / denom;
                    }
                }
                Ok(out.into_dyn())
            }),
            Node::GlobalAvgPoolKeepDims => map_single(value, |x| {
                let v = as5(x)?;
                let (b, c, t, h, w) = v.dim();
                let denom = (t * h * w) as f64;
                let mut out = Array5::<f64>::zeros((b, c, 1, 1, 1));
                for bi in 0..b {
                    for ci in 0..c {
                        out[[bi, ci, 0, 0, 0]] = v.slice(s![bi, ci, .., .., ..]).sum() / denom;
                    }
                }
                Ok(out.into_dyn())
            }),
            Node::FlattenTrailing => map_single(value, |x| {
                let shape = x.shape();
                if shape.is_empty() {
                    return Err(ModelError::Shape("cannot flatten a scalar".into()));
                }
                let b = shape[0];
                let rest: usize = shape[1..].iter().product();
                Ok(x
                    .view()
                    .into_shape_with_order(IxDyn(&[b, rest]))
                    .map_err(|e| ModelError::Shape(e.to_string()))?
                    .to_owned())
            }),
            Node::Dropout(_) => Ok(value.clone()),
            Node::Linear(l) => map_single(value, |x| l.forward(x)),
            Node::Sequential(children) => {
                let mut v = value.clone();
                for (_, child) in children {
                    v = child.forward(&v)?;
                }
                Ok(v)
            }
            Node::Residual {
                main,
                shortcut,
                post_activation,
            } => {
                let branch = main.forward(value)?.into_tensor()?;
                let skip = match shortcut {
                    Some(sc) => sc.forward(value)?.into_tensor()?,
                    None => value.clone().into_tensor()?,
                };
                if branch.shape() != skip.shape() {
                    return Err(ModelError::Shape(format!(
                        "residual add mismatch: {} vs {}",
                        fmt_shape(branch.shape()),
                        fmt_shape(skip.shape())
                    )));
                }
                let summed = &branch + &skip;
                Ok(Value {
                    tensors: vec![post_activation.forward(&summed)],
                    boxes: value.boxes.clone(),
                })
            }
            Node::SqueezeExcite { fc1, fc2 } => map_single(value, |x| {
                let v = as5(x)?;
                let (b, c, t, h, w) = v.dim();
                let denom = (t * h * w) as f64;
                let mut squeezed = Array5::<f64>::zeros((b, c, 1, 1, 1));
                for bi in 0..b {
                    for ci in 0..c {
                        squeezed[[bi, ci, 0, 0, 0]] =
                            v.slice(s![bi, ci, .., .., ..]).sum() / denom;
                    }
                }
                let e = fc1.forward(&squeezed.into_dyn())?;
                let e = Activation::Relu.forward(&e);
                let e = fc2.forward(&e)?;
                let gate = Activation::Sigmoid.forward(&e);
                let gate = as5(&gate)?;
                let mut out = v.to_owned();
                for bi in 0..b {
                    for ci in 0..c {
                        let g = gate[[bi, ci, 0, 0, 0]];
                        out.slice_mut(s![bi, ci, .., .., ..]).mapv_inplace(|v| v * g);
                    }
                }
                Ok(out.into_dyn())
            }),
            Node::Parallel(children) => {
                if children.len() != value.tensors.len() {
                    return Err(ModelError::Shape(format!(
                        "parallel node expects {} pathways, got {}",
                        children.len(),
                        value.tensors.len()
                    )));
                }
                let mut outs = Vec::with_capacity(children.len());
                for ((_, child), t) in children.iter().zip(&value.tensors) {
                    outs.push(
                        child
                            .forward(&Value::single(t.clone()))?
                            .into_tensor()?,
                    );
                }
                Ok(Value {
                    tensors: outs,
                    boxes: value.boxes.clone(),
                })
            }
            Node::FuseFastToSlow {
                conv,
                norm,
                activation,
            } => {
                if value.tensors.len() != 2 {
                    return Err(ModelError::Shape(format!(
                        "lateral fusion expects a [slow, fast] pathway list, got {} tensors",
                        value.tensors.len()
                    )));
                }
                let fast = &value.tensors[1];
                let mut fused = conv.forward(fast)?;
                if let Some(norm) = norm {
                    fused = norm.forward(&fused)?;
                }
                let fused = activation.forward(&fused);
                let slow = concat_channels5(&value.tensors[0], &fused)?;
                Ok(Value {
                    tensors: vec![slow, value.tensors[1].clone()],
                    boxes: value.boxes.clone(),
                })
            }
            Node::PoolPathwaysConcat => {
                let mut feats: Vec<Tensor> = Vec::new();
                for t in &value.tensors {
                    let v = as5(t)?;
                    let (b, c, tt, h, w) = v.dim();
                    let denom = (tt * h * w) as f64;
                    let mut out = Array2::<f64>::zeros((b, c));
                    for bi in 0..b {
                        for ci in 0..c {
                            out[[bi, ci]] = v.slice(s![bi, ci, .., .., ..]).sum() / denom;
                        }
                    }
                    feats.push(out.into_dyn());
                }
                let total: usize = feats.iter().map(|f| f.shape()[1]).sum();
                let b = feats[0].shape()[0];
                let mut out = Array2::<f64>::zeros((b, total));
                let mut offset = 0;
                for f in &feats {
                    let c = f.shape()[1];
                    out.slice_mut(s![.., offset..offset + c])
                        .assign(&f.view().into_dimensionality::<Ix2>().unwrap());
                    offset += c;
                }
                Ok(Value {
                    tensors: vec![out.into_dyn()],
                    boxes: value.boxes.clone(),
                })
            }
            Node::SpectrogramAdapter => map_single(value, |x| {
                let shape = x.shape();
                if shape.len() < 2 {
                    return Err(ModelError::Shape(
                        "spectrogram input must be [..., T, F]".into(),
                    ));
                }
                let (t, f) = (shape[shape.len() - 2], shape[shape.len() - 1]);
                let b: usize = shape[..shape.len() - 2].iter().product::<usize>().max(1);
                Ok(x
                    .view()
                    .into_shape_with_order(IxDyn(&[b, 1, t, 1, f]))
                    .map_err(|e| ModelError::Shape(e.to_string()))?
                    .to_owned())
            }),
            Node::RoiHead(head) => {
                let logits = head.forward(value)?;
                Ok(Value {
                    tensors: vec![logits],
                    boxes: value.boxes.clone(),
                })
            }
        }
    }

    /// Visits every named array (weights and running statistics) in
    /// deterministic depth-first order.
    pub fn visit_arrays<'a>(
        &'a self,
        prefix: &str,
        f: &mut dyn FnMut(String, ArrayKind, &'a Tensor),
    ) {
        let join = |name: &str| {
            if prefix.is_empty() {
                name.to_string()
            } else {
                format!("{prefix}.{name}")
            }
        };
        match self {
            Node::Conv3d(c) | Node::FramewiseConv2d(c) | Node::TemporalConv1d(c) => {
                f(join("weight"), ArrayKind::Param, &c.weight);
                if let Some(b) = &c.bias {
                    f(join("bias"), ArrayKind::Param, b);
                }
            }
            Node::QuantConv3d(q) => {
                f(join("weight"), ArrayKind::Param, &q.inner.weight);
                if let Some(b) = &q.inner.bias {
                    f(join("bias"), ArrayKind::Param, b);
                }
                f(join("weight_scale"), ArrayKind::Buffer, &q.scales);
            }
            Node::BatchNorm(bn) => {
                f(join("weight"), ArrayKind::Param, &bn.gamma);
                f(join("bias"), ArrayKind::Param, &bn.beta);
                f(join("running_mean"), ArrayKind::Buffer, &bn.running_mean);
                f(join("running_var"), ArrayKind::Buffer, &bn.running_var);
            }
            Node::Linear(l) => {
                f(join("weight"), ArrayKind::Param, &l.weight);
                if let Some(b) = &l.bias {
                    f(join("bias"), ArrayKind::Param, b);
                }
            }
            Node::Sequential(children) | Node::Parallel(children) => {
                for (name, child) in children {
                    child.visit_arrays(&join(name), f);
                }
            }
            Node::Residual { main, shortcut, .. } => {
                main.visit_arrays(prefix, f);
                if let Some(sc) = shortcut {
                    sc.visit_arrays(prefix, f);
                }
            }
            Node::SqueezeExcite { fc1, fc2 } => {
                Node::Conv3d(fc1.clone()); // no-op to keep clippy quiet about patterns
                f(join("se_fc1.weight"), ArrayKind::Param, &fc1.weight);
                if let Some(b) = &fc1.bias {
                    f(join("se_fc1.bias"), ArrayKind::Param, b);
                }
                f(join("se_fc2.weight"), ArrayKind::Param, &fc2.weight);
                if let Some(b) = &fc2.bias {
                    f(join("se_fc2.bias"), ArrayKind::Param, b);
                }
            }
            Node::FuseFastToSlow { conv, norm, .. } => {
                f(join("conv.weight"), ArrayKind::Param, &conv.weight);
                if let Some(b) = &conv.bias {
                    f(join("conv.bias"), ArrayKind::Param, b);
                }
                if let Some(norm) = norm {
                    f(join("norm.weight"), ArrayKind::Param, &norm.gamma);
                    f(join("norm.bias"), ArrayKind::Param, &norm.beta);
                    f(join("norm.running_mean"), ArrayKind::Buffer, &norm.running_mean);
                    f(join("norm.running_var"), ArrayKind::Buffer, &norm.running_var);
                }
            }
            Node::RoiHead(h) => {
                f(join("proj.weight"), ArrayKind::Param, &h.proj.weight);
                if let Some(b) = &h.proj.bias {
                    f(join("proj.bias"), ArrayKind::Param, b);
                }
            }
            Node::Activation(_)
            | Node::Pool(_)
            | Node::GlobalAvgPool
            | Node::GlobalAvgPoolKeepDims
            | Node::FlattenTrailing
            | Node::Dropout(_)
            | Node::PoolPathwaysConcat
            | Node::SpectrogramAdapter => {}
        }
    }

    /// Mutable twin of [`Node::visit_arrays`].
    pub fn visit_arrays_mut(
        &mut self,
        prefix: &str,
        f: &mut dyn FnMut(String, ArrayKind, &mut Tensor),
    ) {
        let join = |prefix: &str, name: &str| {
            if prefix.is_empty() {
                name.to_string()
            } else {
                format!("{prefix}.{name}")
            }
        };
        match self {
            Node::Conv3d(c) | Node::FramewiseConv2d(c) | Node::TemporalConv1d(c) => {
                f(join(prefix, "weight"), ArrayKind::Param, &mut c.weight);
                if let Some(b) = &mut c.bias {
                    f(join(prefix, "bias"), ArrayKind::Param, b);
                }
            }
            Node::QuantConv3d(q) => {
                f(join(prefix, "weight"), ArrayKind::Param, &mut q.inner.weight);
                if let Some(b) = &mut q.inner.bias {
                    f(join(prefix, "bias"), ArrayKind::Param, b);
                }
                f(join(prefix, "weight_scale"), ArrayKind::Buffer, &mut q.scales);
            }
            Node::BatchNorm(bn) => {
                f(join(prefix, "weight"), ArrayKind::Param, &mut bn.gamma);
                f(join(prefix, "bias"), ArrayKind::Param, &mut bn.beta);
                f(
                    join(prefix, "running_mean"),
                    ArrayKind::Buffer,
                    &mut bn.running_mean,
                );
                f(
                    join(prefix, "running_var"),
                    ArrayKind::Buffer,
                    &mut bn.running_var,
                );
            }
            Node::Linear(l) => {
                f(join(prefix, "weight"), ArrayKind::Param, &mut l.weight);
                if let Some(b) = &mut l.bias {
                    f(join(prefix, "bias"), ArrayKind::Param, b);
                }
            }
            Node::Sequential(children) | Node::Parallel(children) => {
                for (name, child) in children {
                    let p = join(prefix, name);
                    child.visit_arrays_mut(&p, f);
                }
            }
            Node::Residual { main, shortcut, .. } => {
                main.visit_arrays_mut(prefix, f);
                if let Some(sc) = shortcut {
                    sc.visit_arrays_mut(prefix, f);
                }
            }
            Node::SqueezeExcite { fc1, fc2 } => {
                f(join(prefix, "se_fc1.weight"), ArrayKind::Param, &mut fc1.weight);
                if let Some(b) = &mut fc1.bias {
                    f(join(prefix, "se_fc1.bias"), ArrayKind::Param, b);
                }
                f(join(prefix, "se_fc2.weight"), ArrayKind::Param, &mut fc2.weight);
                if let Some(b) = &mut fc2.bias {
                    f(join(prefix, "se_fc2.bias"), ArrayKind::Param, b);
                }
            }
            Node::FuseFastToSlow { conv, norm, .. } => {
                f(join(prefix, "conv.weight"), ArrayKind::Param, &mut conv.weight);
                if let Some(b) = &mut conv.bias {
                    f(join(prefix, "conv.bias"), ArrayKind::Param, b);
                }
                if let Some(norm) = norm {
                    f(join(prefix, "norm.weight"), ArrayKind::Param, &mut norm.gamma);
                    f(join(prefix, "norm.bias"), ArrayKind::Param, &mut norm.beta);
                    f(
                        join(prefix, "norm.running_mean"),
                        ArrayKind::Buffer,
                        &mut norm.running_mean,
                    );
                    f(
                        join(prefix, "norm.running_var"),
                        ArrayKind::Buffer,
                        &mut norm.running_var,
                    );
                }
            }
            Node::RoiHead(h) => {
                f(join(prefix, "proj.weight"), ArrayKind::Param, &mut h.proj.weight);
                if let Some(b) = &mut h.proj.bias {
                    f(join(prefix, "proj.bias"), ArrayKind::Param, b);
                }
            }
            Node::Activation(_)
            | Node::Pool(_)
            | Node::GlobalAvgPool
            | Node::GlobalAvgPoolKeepDims
            | Node::FlattenTrailing
            | Node::Dropout(_)
            | Node::PoolPathwaysConcat
            | Node::SpectrogramAdapter => {}
        }
    }

    /// Learnable parameter map, cloned, in `name -> array` form.
    pub fn named_parameters(&self) -> std::collections::BTreeMap<String, Tensor> {
        let mut map = std::collections::BTreeMap::new();
        self.visit_arrays("", &mut |name, kind, arr| {
            if kind == ArrayKind::Param {
                map.insert(name, arr.clone());
            }
        });
        map
    }
}

fn map_single(
    value: &Value,
    f: impl FnOnce(&Tensor) -> Result<Tensor>,
) -> Result<Value> {
    if value.tensors.len() != 1 {
        return Err(ModelError::Shape(format!(
            "node expects a single-tensor input, got a {}-pathway list",
            value.tensors.len()
        )));
    }
    Ok(Value {
        tensors: vec![f(&value.tensors[0])?],
        boxes: value.boxes.clone(),
    })
}

/// Runs a kT=1 conv as a per-frame 2D conv by folding T into the batch axis.
fn framewise_forward(conv: &Conv3d, x: &Tensor) -> Result<Tensor> {
    let v = as5(x)?;
    let (b, c, t, h, w) = v.dim();
    // (B, C, T, H, W) -> (B, T, C, H, W) -> (B*T, C, 1, H, W)
    let folded = v
        .to_owned()
        .permuted_axes([0, 2, 1, 3, 4])
        .as_standard_layout()
        .into_owned()
        .into_shape_with_order((b * t, c, 1, h, w))
        .unwrap()
        .into_dyn();
    let out = conv.forward(&folded)?;
    let os = out.shape().to_vec();
    let (co, ho, wo) = (os[1], os[3], os[4]);
    let unfolded = out
        .into_shape_with_order((b, t, co, ho, wo))
        .unwrap()
        .permuted_axes([0, 2, 1, 3, 4])
        .as_standard_layout()
        .into_owned()
        .into_dyn();
    Ok(unfolded)
}

/// Runs a spatially-pointwise conv as a 1D temporal conv by folding H*W into
/// the batch axis.
fn temporal_forward(conv: &Conv3d, x: &Tensor) -> Result<Tensor> {
    let v = as5(x)?;
    let (b, c, t, h, w) = v.dim();
    // (B, C, T, H, W) -> (B, H, W, C, T) -> (B*H*W, C, T, 1, 1)
    let folded = v
        .to_owned()
        .permuted_axes([0, 3, 4, 1, 2])
        .as_standard_layout()
        .into_owned()
        .into_shape_with_order((b * h * w, c, t, 1, 1))
        .unwrap()
        .into_dyn();
    let out = conv.forward(&folded)?;
    let os = out.shape().to_vec();
    let (co, to) = (os[1], os[2]);
    let unfolded = out
        .into_shape_with_order((b, h, w, co, to))
        .unwrap()
        .permuted_axes([0, 3, 4, 1, 2])
        .as_standard_layout()
        .into_owned()
        .into_dyn();
    Ok(unfolded)
}

fn as5<'a>(x: &'a Tensor) -> Result<ndarray::ArrayView5<'a, f64>> {
    x.view()
        .into_dimensionality::<Ix5>()
        .map_err(|_| ModelError::Shape(format!("expected rank-5 (B, C, T, H, W), got {}", fmt_shape(x.shape()))))
}

fn concat_channels5(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let av = as5(a)?;
    let bv = as5(b)?;
    let (ab, ac, at, ah, aw) = av.dim();
    let (bb, bc, bt, bh, bw) = bv.dim();
    if (ab, at, ah, aw) != (bb, bt, bh, bw) {
        return Err(ModelError::Shape(format!(
            "channel concat mismatch: {} vs {}",
            fmt_shape(a.shape()),
            fmt_shape(b.shape())
        )));
    }
    let mut out = Array5::<f64>::zeros((ab, ac + bc, at, ah, aw));
    out.slice_mut(s![.., ..ac, .., .., ..]).assign(&av);
    out.slice_mut(s![.., ac.., .., .., ..]).assign(&bv);
    Ok(out.into_dyn())
}

fn concat_channels4(parts: &[Tensor]) -> Result<Tensor> {
    let views: Vec<_> = parts
        .iter()
        .map(|p| p.view().into_dimensionality::<ndarray::Ix4>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| ModelError::Shape(e.to_string()))?;
    let (b, _, h, w) = views[0].dim();
    let total: usize = views.iter().map(|v| v.shape()[1]).sum();
    let mut out = ndarray::Array4::<f64>::zeros((b, total, h, w));
    let mut offset = 0;
    for v in &views {
        let c = v.shape()[1];
        out.slice_mut(s![.., offset..offset + c, .., ..]).assign(v);
        offset += c;
    }
    Ok(out.into_dyn())
}

/// Fills all BatchNorm statistics and affine terms with random values; used
/// to make fold-equivalence checks non-trivial.
pub fn randomize_batch_norms(node: &mut Node, rng: &mut StdRng) {
    node.visit_arrays_mut("", &mut |name, _, arr| {
        if name.ends_with("running_mean") {
            arr.mapv_inplace(|_| rng.random::<f64>() - 0.5);
        } else if name.ends_with("running_var") {
            arr.mapv_inplace(|_| rng.random::<f64>() + 0.5);
        } else if name.contains("norm") && name.ends_with("weight") {
            arr.mapv_inplace(|_| rng.random::<f64>() + 0.5);
        } else if name.contains("norm") && name.ends_with("bias") {
            arr.mapv_inplace(|_| rng.random::<f64>() - 0.5);
        }
    });
}

// ---------------------------------------------------------------------------
// Shape/FLOP tracing
// ---------------------------------------------------------------------------

/// Shapes of a traced value: one shape per pathway.
pub type TraceShapes = Vec<Vec<usize>>;

/// Result of a shape trace: output shapes and accumulated multiply-adds.
#[derive(Debug, Clone)]
pub struct Trace {
    pub shapes: TraceShapes,
    pub madds: u128,
    /// Box count seen by detection heads during the trace.
    pub num_boxes: usize,
}

impl Node {
    /// Propagates shapes without touching data, accumulating conv/linear
    /// multiply-adds. Errors mirror [`Node::forward`] shape errors.
    pub fn trace(&self, input: &Trace) -> Result<Trace> {
        let single = |input: &Trace| -> Result<Vec<usize>> {
            if input.shapes.len() != 1 {
                return Err(ModelError::Trace(format!(
                    "node expects a single tensor, got {} pathways",
                    input.shapes.len()
                )));
            }
            Ok(input.shapes[0].clone())
        };
        match self {
            Node::Conv3d(c) | Node::FramewiseConv2d(c) | Node::TemporalConv1d(c) => {
                let shape = single(input)?;
                let (out_shape, madds) = conv_trace(c, &shape)?;
                Ok(Trace {
                    shapes: vec![out_shape],
                    madds: input.madds + madds,
                    num_boxes: input.num_boxes,
                })
            }
            Node::QuantConv3d(q) => {
                let shape = single(input)?;
                let (out_shape, madds) = conv_trace(&q.inner, &shape)?;
                Ok(Trace {
                    shapes: vec![out_shape],
                    madds: input.madds + madds,
                    num_boxes: input.num_boxes,
                })
            }
            Node::BatchNorm(_) | Node::Activation(_) | Node::Dropout(_) => Ok(input.clone()),
            Node::Pool(p) => {
                let shape = single(input)?;
                if shape.len() != 5 {
                    return Err(ModelError::Trace("pool expects rank-5 input".into()));
                }
                let out = p.out_spatial([shape[2], shape[3], shape[4]])?;
                Ok(Trace {
                    shapes: vec![vec![shape[0], shape[1], out[0], out[1], out[2]]],
                    madds: input.madds,
                    num_boxes: input.num_boxes,
                })
            }
            Node::GlobalAvgPool => {
                let shape = single(input)?;
                Ok(Trace {
                    shapes: vec![vec![shape[0], shape[1]]],
                    madds: input.madds,
                    num_boxes: input.num_boxes,
                })
            }
            Node::GlobalAvgPoolKeepDims => {
                let shape = single(input)?;
                Ok(Trace {
                    shapes: vec![vec![shape[0], shape[1], 1, 1, 1]],
                    madds: input.madds,
                    num_boxes: input.num_boxes,
                })
            }
            Node::FlattenTrailing => {
                let shape = single(input)?;
                let rest: usize = shape[1..].iter().product();
                Ok(Trace {
                    shapes: vec![vec![shape[0], rest]],
                    madds: input.madds,
                    num_boxes: input.num_boxes,
                })
            }
            Node::Linear(l) => {
                let shape = single(input)?;
                let d_in = *shape.last().unwrap();
                if d_in != l.in_features() {
                    return Err(ModelError::Trace(format!(
                        "linear expects {} features, got {}",
                        l.in_features(),
                        d_in
                    )));
                }
                let rows: u128 = shape[..shape.len() - 1]
                    .iter()
                    .map(|&d| d as u128)
                    .product();
                let mut out_shape = shape[..shape.len() - 1].to_vec();
                out_shape.push(l.out_features());
                Ok(Trace {
                    shapes: vec![out_shape],
                    madds: input.madds
                        + rows * l.in_features() as u128 * l.out_features() as u128,
                    num_boxes: input.num_boxes,
                })
            }
            Node::Sequential(children) => {
                let mut t = input.clone();
                for (_, child) in children {
                    t = child.trace(&t)?;
                }
                Ok(t)
            }
            Node::Residual { main, shortcut, .. } => {
                let branch = main.trace(input)?;
                let skip = match shortcut {
                    Some(sc) => sc.trace(input)?,
                    None => input.clone(),
                };
                if branch.shapes != skip.shapes {
                    return Err(ModelError::Trace(format!(
                        "residual add mismatch: {:?} vs {:?}",
                        branch.shapes, skip.shapes
                    )));
                }
                Ok(Trace {
                    shapes: branch.shapes,
                    madds: branch.madds + (skip.madds - input.madds),
                    num_boxes: input.num_boxes,
                })
            }
            Node::SqueezeExcite { fc1, fc2 } => {
                let shape = single(input)?;
                let squeezed = vec![shape[0], shape[1], 1, 1, 1];
                let (_, m1) = conv_trace(fc1, &squeezed)?;
                let mid = vec![shape[0], fc1.out_channels(), 1, 1, 1];
                let (_, m2) = conv_trace(fc2, &mid)?;
                Ok(Trace {
                    shapes: vec![shape],
                    madds: input.madds + m1 + m2,
                    num_boxes: input.num_boxes,
                })
            }
            Node::Parallel(children) => {
                if children.len() != input.shapes.len() {
                    return Err(ModelError::Trace(format!(
                        "parallel node expects {} pathways, got {}",
                        children.len(),
                        input.shapes.len()
                    )));
                }
                let mut shapes = Vec::new();
                let mut madds = input.madds;
                for ((_, child), shape) in children.iter().zip(&input.shapes) {
                    let sub = child.trace(&Trace {
                        shapes: vec![shape.clone()],
                        madds: 0,
                        num_boxes: input.num_boxes,
                    })?;
                    madds += sub.madds;
                    shapes.push(sub.shapes[0].clone());
                }
                Ok(Trace {
                    shapes,
                    madds,
                    num_boxes: input.num_boxes,
                })
            }
            Node::FuseFastToSlow { conv, .. } => {
                if input.shapes.len() != 2 {
                    return Err(ModelError::Trace(
                        "lateral fusion expects [slow, fast]".into(),
                    ));
                }
                let (fused, madds) = conv_trace(conv, &input.shapes[1])?;
                let slow = &input.shapes[0];
                if fused[2..] != slow[2..] {
                    return Err(ModelError::Trace(format!(
                        "fused fast shape {fused:?} does not align with slow {slow:?}"
                    )));
                }
                let mut new_slow = slow.clone();
                new_slow[1] += fused[1];
                Ok(Trace {
                    shapes: vec![new_slow, input.shapes[1].clone()],
                    madds: input.madds + madds,
                    num_boxes: input.num_boxes,
                })
            }
            Node::PoolPathwaysConcat => {
                let b = input.shapes[0][0];
                let total: usize = input.shapes.iter().map(|s| s[1]).sum();
                Ok(Trace {
                    shapes: vec![vec![b, total]],
                    madds: input.madds,
                    num_boxes: input.num_boxes,
                })
            }
            Node::SpectrogramAdapter => {
                let shape = single(input)?;
                if shape.len() < 2 {
                    return Err(ModelError::Trace("spectrogram must be [..., T, F]".into()));
                }
                let (t, f) = (shape[shape.len() - 2], shape[shape.len() - 1]);
                let b: usize = shape[..shape.len() - 2].iter().product::<usize>().max(1);
                Ok(Trace {
                    shapes: vec![vec![b, 1, t, 1, f]],
                    madds: input.madds,
                    num_boxes: input.num_boxes,
                })
            }
            Node::RoiHead(h) => {
                if input.num_boxes == 0 {
                    return Err(ModelError::Trace(
                        "detection trace requires num_boxes >= 1".into(),
                    ));
                }
                let c: usize = input.shapes.iter().map(|s| s[1]).sum();
                if c != h.proj.in_features() {
                    return Err(ModelError::Trace(format!(
                        "roi head expects {} channels, got {}",
                        h.proj.in_features(),
                        c
                    )));
                }
                Ok(Trace {
                    shapes: vec![vec![input.num_boxes, h.proj.out_features()]],
                    madds: input.madds
                        + input.num_boxes as u128
                            * h.proj.in_features() as u128
                            * h.proj.out_features() as u128,
                    num_boxes: input.num_boxes,
                })
            }
        }
    }
}

fn conv_trace(c: &Conv3d, shape: &[usize]) -> Result<(Vec<usize>, u128)> {
    if shape.len() != 5 {
        return Err(ModelError::Trace(format!(
            "conv expects rank-5 input, got {}",
            fmt_shape(shape)
        )));
    }
    if shape[1] != c.in_channels() {
        return Err(ModelError::Trace(format!(
            "conv expects {} input channels, got {}",
            c.in_channels(),
            shape[1]
        )));
    }
    let out = c.out_spatial(shape[2], shape[3], shape[4])?;
    let out_shape = vec![shape[0], c.out_channels(), out[0], out[1], out[2]];
    let k = c.kernel();
    let weights =
        c.out_channels() as u128 * (c.in_channels() / c.groups) as u128 * (k[0] * k[1] * k[2]) as u128;
    let volume = (shape[0] * out[0] * out[1] * out[2]) as u128;
    Ok((out_shape, weights * volume))
}
