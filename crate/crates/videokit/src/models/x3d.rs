//! X3D factory: mobile-style inverted bottlenecks with channelwise-separable
//! inner convs, squeeze-excitation on alternating blocks, and a projected
//! classification head.

use super::nn::{Activation, Conv3d, Linear, ModelError, Node, Result};
use super::resnet::NormKind;
use rand::rngs::StdRng;
use rand::SeedableRng;

/// Expansion presets. Width/depth multipliers expand a common 2D base; the
/// nominal clip length and train crop are carried for reporting.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum X3dVariant {
    Xs,
    S,
    M,
    L,
}

impl X3dVariant {
    pub fn depth_factor(&self) -> f64 {
        match self {
            X3dVariant::Xs | X3dVariant::S | X3dVariant::M => 2.2,
            X3dVariant::L => 5.0,
        }
    }

    /// Nominal (frames, train crop) for the preset.
    pub fn nominal_input(&self) -> (usize, usize) {
        match self {
            X3dVariant::Xs => (4, 160),
            X3dVariant::S => (13, 160),
            X3dVariant::M => (16, 224),
            X3dVariant::L => (16, 312),
        }
    }
}

/// Configuration for [`create_x3d`].
#[derive(Debug, Clone)]
pub struct X3dConfig {
    pub variant: X3dVariant,
    pub model_num_class: usize,
    pub input_channel: usize,
    pub width_factor: f64,
    pub bottleneck_factor: f64,
    pub se_ratio: f64,
    pub stem_dim_in: usize,
    pub head_dim_out: usize,
    pub norm: NormKind,
    pub activation: Activation,
    /// Activation of the separable inner conv (the preset uses swish).
    pub inner_activation: Activation,
    pub head_activation: Option<Activation>,
    pub dropout: f64,
    pub seed: u64,
}

impl Default for X3dConfig {
    fn default() -> Self {
        X3dConfig {
            variant: X3dVariant::M,
            model_num_class: 400,
            input_channel: 3,
            width_factor: 2.0,
            bottleneck_factor: 2.25,
            se_ratio: 0.0625,
            stem_dim_in: 12,
            head_dim_out: 2048,
            norm: NormKind::BatchNorm,
            activation: Activation::Relu,
            inner_activation: Activation::Swish,
            head_activation: None,
            dropout: 0.5,
            seed: 0,
        }
    }
}

/// Width rounding used by the expansion recipe: scale, snap to a multiple of
/// `divisor`, and bump one step if the snap undershoots by more than 10%.
pub fn round_width(width: usize, multiplier: f64) -> usize {
    round_width_by(width, multiplier, 8, 8)
}

fn round_width_by(width: usize, multiplier: f64, min_width: usize, divisor: usize) -> usize {
    if multiplier == 0.0 {
        return width;
    }
    let scaled = width as f64 * multiplier;
    let mut out = ((scaled + divisor as f64 / 2.0) as usize / divisor * divisor).max(min_width);
    if (out as f64) < 0.9 * scaled {
        out += divisor;
    }
    out
}

fn round_repeats(repeats: usize, multiplier: f64) -> usize {
    (repeats as f64 * multiplier).ceil() as usize
}

struct X3dBlockSpec {
    dim_in: usize,
    dim_inner: usize,
    dim_out: usize,
    spatial_stride: usize,
    se: bool,
}

fn x3d_block(cfg: &X3dConfig, spec: &X3dBlockSpec, rng: &mut StdRng) -> Result<Node> {
    let conv_a = Conv3d::new(spec.dim_in, spec.dim_inner, [1, 1, 1], [1, 1, 1], 1, false, rng)?;
    let conv_b = Conv3d::new(
        spec.dim_inner,
        spec.dim_inner,
        [3, 3, 3],
        [1, spec.spatial_stride, spec.spatial_stride],
        spec.dim_inner,
        false,
        rng,
    )?;
    let conv_c = Conv3d::new(spec.dim_inner, spec.dim_out, [1, 1, 1], [1, 1, 1], 1, false, rng)?;

    let mut main: Vec<(String, Node)> = vec![("conv_a".into(), Node::Conv3d(conv_a))];
    if let Some(n) = cfg.norm.build_node(spec.dim_inner, false) {
        main.push(("norm_a".into(), n));
    }
    main.push(("act_a".into(), Node::Activation(cfg.activation)));
    main.push(("conv_b".into(), Node::Conv3d(conv_b)));
    if let Some(n) = cfg.norm.build_node(spec.dim_inner, false) {
        main.push(("norm_b".into(), n));
    }
    if spec.se {
        let reduced = round_width(spec.dim_inner, cfg.se_ratio);
        let fc1 = Conv3d::new(spec.dim_inner, reduced, [1, 1, 1], [1, 1, 1], 1, true, rng)?;
        let fc2 = Conv3d::new(reduced, spec.dim_inner, [1, 1, 1], [1, 1, 1], 1, true, rng)?;
        main.push(("se".into(), Node::SqueezeExcite { fc1, fc2 }));
    }
    main.push(("act_b".into(), Node::Activation(cfg.inner_activation)));
    main.push(("conv_c".into(), Node::Conv3d(conv_c)));
    if let Some(n) = cfg.norm.build_node(spec.dim_out, true) {
        main.push(("norm_c".into(), n));
    }

    let needs_conv = spec.dim_in != spec.dim_out || spec.spatial_stride > 1;
    let shortcut = if needs_conv {
        let proj = Conv3d::new(
            spec.dim_in,
            spec.dim_out,
            [1, 1, 1],
            [1, spec.spatial_stride, spec.spatial_stride],
            1,
            false,
            rng,
        )?;
        let mut sc: Vec<(String, Node)> = vec![("proj".into(), Node::Conv3d(proj))];
        // Norm on the shortcut only when the channel count changes.
        if spec.dim_in != spec.dim_out {
            if let Some(n) = cfg.norm.build_node(spec.dim_out, false) {
                sc.push(("proj_norm".into(), n));
            }
        }
        Some(Box::new(Node::Sequential(sc)))
    } else {
        None
    };

    Ok(Node::Residual {
        main: Box::new(Node::Sequential(main)),
        shortcut,
        post_activation: cfg.activation,
    })
}

/// Builds an X3D network for the given expansion preset.
pub fn create_x3d(cfg: &X3dConfig) -> Result<Node> {
    if cfg.width_factor <= 0.0 || cfg.bottleneck_factor <= 0.0 {
        return Err(ModelError::Config(
            "x3d expansion factors must be positive".into(),
        ));
    }
    let mut rng = StdRng::seed_from_u64(cfg.seed);
    let depth_factor = cfg.variant.depth_factor();

    let stem_dim_out = round_width(cfg.stem_dim_in, cfg.width_factor);
    // Base stage widths double from the stem base: 12 -> 24 -> 48 -> 96.
    let mut base = cfg.stem_dim_in;
    let mut stage_dims = Vec::with_capacity(4);
    for _ in 0..4 {
        stage_dims.push(base);
        base = round_width(base, 2.0);
    }
    let base_depths = [1usize, 2, 5, 3];

    // Stem: spatial conv then depthwise temporal conv.
    let conv_xy = Conv3d::new(
        cfg.input_channel,
        stem_dim_out,
        [1, 3, 3],
        [1, 2, 2],
        1,
        false,
        &mut rng,
    )?;
    let conv_t = Conv3d::new(
        stem_dim_out,
        stem_dim_out,
        [5, 1, 1],
        [1, 1, 1],
        stem_dim_out,
        false,
        &mut rng,
    )?;
    let mut stem: Vec<(String, Node)> = vec![
        ("conv_xy".into(), Node::Conv3d(conv_xy)),
        ("conv_t".into(), Node::Conv3d(conv_t)),
    ];
    if let Some(n) = cfg.norm.build_node(stem_dim_out, false) {
        stem.push(("norm".into(), n));
    }
    stem.push(("act".into(), Node::Activation(cfg.activation)));

    let mut children: Vec<(String, Node)> = vec![("stem".into(), Node::Sequential(stem))];

    let mut dim_in = stem_dim_out;
    let mut dim_inner_last = stem_dim_out;
    for (i, (&base_dim, &base_depth)) in stage_dims.iter().zip(base_depths.iter()).enumerate() {
        let dim_out = round_width(base_dim, cfg.width_factor);
        let dim_inner = (cfg.bottleneck_factor * dim_out as f64) as usize;
        let depth = round_repeats(base_depth, depth_factor);
        let mut blocks: Vec<(String, Node)> = Vec::with_capacity(depth);
        for j in 0..depth {
            let block = x3d_block(
                cfg,
                &X3dBlockSpec {
                    dim_in: if j == 0 { dim_in } else { dim_out },
                    dim_inner,
                    dim_out,
                    spatial_stride: if j == 0 { 2 } else { 1 },
                    // SE sits on every other block, starting with the first.
                    se: (j + 1) % 2 == 1,
                },
                &mut rng,
            )?;
            blocks.push((format!("block{j}"), block));
        }
        children.push((format!("stage{}", i + 1), Node::Sequential(blocks)));
        dim_in = dim_out;
        dim_inner_last = dim_inner;
    }

    // Projected head: expand to the last inner width, pool, then lift to the
    // embedding dim before the classifier.
    let pre_conv = Conv3d::new(dim_in, dim_inner_last, [1, 1, 1], [1, 1, 1], 1, false, &mut rng)?;
    let post_conv = Conv3d::new(
        dim_inner_last,
        cfg.head_dim_out,
        [1, 1, 1],
        [1, 1, 1],
        1,
        false,
        &mut rng,
    )?;
    let mut head: Vec<(String, Node)> = vec![("pre_conv".into(), Node::Conv3d(pre_conv))];
    if let Some(n) = cfg.norm.build_node(dim_inner_last, false) {
        head.push(("pre_norm".into(), n));
    }
    head.push(("pre_act".into(), Node::Activation(cfg.activation)));
    head.push(("pool".into(), Node::GlobalAvgPoolKeepDims));
    head.push(("post_conv".into(), Node::Conv3d(post_conv)));
    head.push(("post_act".into(), Node::Activation(cfg.activation)));
    head.push(("flatten".into(), Node::FlattenTrailing));
    head.push(("dropout".into(), Node::Dropout(cfg.dropout)));
    head.push((
        "proj".into(),
        Node::Linear(Linear::new(cfg.head_dim_out, cfg.model_num_class, &mut rng)),
    ));
    if let Some(act) = cfg.head_activation {
        head.push(("act".into(), Node::Activation(act)));
    }
    children.push(("head".into(), Node::Sequential(head)));
    Ok(Node::Sequential(children))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::stats::{count_params, output_shapes, TraceInput};

    #[test]
    fn width_rounding() {
        assert_eq!(round_width(12, 2.0), 24);
        assert_eq!(round_width(54, 0.0625), 8);
        assert_eq!(round_width(108, 0.0625), 8);
        assert_eq!(round_width(216, 0.0625), 16);
        // 432 * 0.0625 = 27; snapping to 24 undershoots by >10%, so bump to 32.
        assert_eq!(round_width(432, 0.0625), 32);
    }

    #[test]
    fn depthwise_param_count() {
        // Depthwise conv params are C * kT * 3 * 3 with no cross-channel terms.
        let mut rng = StdRng::seed_from_u64(0);
        let conv = Conv3d::new(24, 24, [3, 3, 3], [1, 1, 1], 24, false, &mut rng).unwrap();
        assert_eq!(conv.weight.len(), 24 * 3 * 3 * 3);
    }

    #[test]
    fn x3d_xs_shapes() {
        let model = create_x3d(&X3dConfig {
            variant: X3dVariant::Xs,
            model_num_class: 13,
            ..Default::default()
        })
        .unwrap();
        let out = output_shapes(&model, &TraceInput::single(vec![1, 3, 4, 64, 64])).unwrap();
        assert_eq!(out[0], vec![1, 13]);
        // XS/S/M share depths, so they share the parameter count too.
        let m = create_x3d(&X3dConfig::default()).unwrap();
        assert_eq!(count_params(&model) - 13 * 2048 - 13, count_params(&m) - 400 * 2048 - 400);
    }
}
