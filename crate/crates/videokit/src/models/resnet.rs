//! Injectable ResNet-family factories: C2D, I3D, Slow, and the acoustic
//! variant, plus the ROI detection assembly.
//!
//! Blocks follow the 3D bottleneck convention: a temporal `kTx1x1` conv, a
//! spatial `1x3x3` conv, and a pointwise projection, each normed; shortcut
//! projections engage on any dim or stride mismatch.

use super::nn::{
    Activation, BatchNorm, Conv3d, Linear, ModelError, Node, Pool3d, PoolKind, Result, RoiHead,
};
use rand::rngs::StdRng;
use rand::SeedableRng;

/// Injectable normalization constructor.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NormKind {
    BatchNorm,
    /// No normalization node is inserted.
    Identity,
}

impl NormKind {
    pub(crate) fn build_node(&self, channels: usize, zero_gamma: bool) -> Option<Node> {
        match self {
            NormKind::BatchNorm => Some(Node::BatchNorm(if zero_gamma {
                BatchNorm::new_zero_gamma(channels)
            } else {
                BatchNorm::new(channels)
            })),
            NormKind::Identity => None,
        }
    }
}

/// Res-family stem: conv -> norm -> activation -> optional max pool.
#[derive(Debug, Clone)]
pub struct StemConfig {
    pub dim_in: usize,
    pub dim_out: usize,
    pub conv_kernel: [usize; 3],
    pub conv_stride: [usize; 3],
    pub pool: Option<(Pool3d,)>,
    pub norm: NormKind,
    pub activation: Activation,
}

impl Default for StemConfig {
    fn default() -> Self {
        StemConfig {
            dim_in: 3,
            dim_out: 64,
            conv_kernel: [1, 7, 7],
            conv_stride: [1, 2, 2],
            pool: Some((Pool3d {
                kind: PoolKind::Max,
                kernel: [1, 3, 3],
                stride: [1, 2, 2],
                padding: [0, 1, 1],
            },)),
            norm: NormKind::BatchNorm,
            activation: Activation::Relu,
        }
    }
}

/// Builds the stem module. Output channels equal `dim_out`.
pub fn create_res_basic_stem(cfg: &StemConfig, rng: &mut StdRng) -> Result<Node> {
    let conv = Conv3d::new(
        cfg.dim_in,
        cfg.dim_out,
        cfg.conv_kernel,
        cfg.conv_stride,
        1,
        false,
        rng,
    )?;
    let mut children: Vec<(String, Node)> = vec![("conv".into(), Node::Conv3d(conv))];
    if let Some(norm) = cfg.norm.build_node(cfg.dim_out, false) {
        children.push(("norm".into(), norm));
    }
    children.push(("act".into(), Node::Activation(cfg.activation)));
    if let Some((pool,)) = &cfg.pool {
        children.push(("pool".into(), Node::Pool(pool.clone())));
    }
    Ok(Node::Sequential(children))
}

/// Bottleneck block parameters.
#[derive(Debug, Clone)]
pub struct BottleneckConfig {
    pub dim_in: usize,
    pub dim_inner: usize,
    pub dim_out: usize,
    /// Temporal extent of the first (`kT x 1 x 1`) conv.
    pub conv_a_temporal: usize,
    /// Kernel of the middle conv, usually `(1, 3, 3)`.
    pub conv_b_kernel: [usize; 3],
    pub conv_b_stride: [usize; 3],
    pub conv_b_dilation: [usize; 3],
    pub conv_b_groups: usize,
    pub norm: NormKind,
    pub activation: Activation,
    /// Zero-init the last norm so a fresh block is the identity map.
    pub zero_init_final_norm: bool,
    /// Allow a projection shortcut when dims or strides mismatch.
    pub projection: bool,
}

impl Default for BottleneckConfig {
    fn default() -> Self {
        BottleneckConfig {
            dim_in: 64,
            dim_inner: 64,
            dim_out: 256,
            conv_a_temporal: 1,
            conv_b_kernel: [1, 3, 3],
            conv_b_stride: [1, 1, 1],
            conv_b_dilation: [1, 1, 1],
            conv_b_groups: 1,
            norm: NormKind::BatchNorm,
            activation: Activation::Relu,
            zero_init_final_norm: false,
            projection: true,
        }
    }
}

/// Builds one residual bottleneck block.
pub fn create_bottleneck_block(cfg: &BottleneckConfig, rng: &mut StdRng) -> Result<Node> {
    let needs_projection =
        cfg.dim_in != cfg.dim_out || cfg.conv_b_stride.iter().product::<usize>() > 1;
    if needs_projection && !cfg.projection {
        return Err(ModelError::Config(format!(
            "block with dim {} -> {} and stride {:?} requires a projection shortcut",
            cfg.dim_in, cfg.dim_out, cfg.conv_b_stride
        )));
    }
    let conv_a = Conv3d::new(
        cfg.dim_in,
        cfg.dim_inner,
        [cfg.conv_a_temporal, 1, 1],
        [1, 1, 1],
        1,
        false,
        rng,
    )?;
    let conv_b = Conv3d::with_dilation(
        cfg.dim_inner,
        cfg.dim_inner,
        cfg.conv_b_kernel,
        cfg.conv_b_stride,
        cfg.conv_b_dilation,
        cfg.conv_b_groups,
        false,
        rng,
    )?;
    let conv_c = Conv3d::new(cfg.dim_inner, cfg.dim_out, [1, 1, 1], [1, 1, 1], 1, false, rng)?;

    let mut main: Vec<(String, Node)> = vec![("conv_a".into(), Node::Conv3d(conv_a))];
    if let Some(n) = cfg.norm.build_node(cfg.dim_inner, false) {
        main.push(("norm_a".into(), n));
    }
    main.push(("act_a".into(), Node::Activation(cfg.activation)));
    main.push(("conv_b".into(), Node::Conv3d(conv_b)));
    if let Some(n) = cfg.norm.build_node(cfg.dim_inner, false) {
        main.push(("norm_b".into(), n));
    }
    main.push(("act_b".into(), Node::Activation(cfg.activation)));
    main.push(("conv_c".into(), Node::Conv3d(conv_c)));
    if let Some(n) = cfg.norm.build_node(cfg.dim_out, cfg.zero_init_final_norm) {
        main.push(("norm_c".into(), n));
    }

    let shortcut = if needs_projection {
        let proj = Conv3d::new(
            cfg.dim_in,
            cfg.dim_out,
            [1, 1, 1],
            cfg.conv_b_stride,
            1,
            false,
            rng,
        )?;
        let mut sc: Vec<(String, Node)> = vec![("proj".into(), Node::Conv3d(proj))];
        if let Some(n) = cfg.norm.build_node(cfg.dim_out, false) {
            sc.push(("proj_norm".into(), n));
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

/// Residual stage parameters: `depth` chained blocks, only the first striding.
#[derive(Debug, Clone)]
pub struct StageConfig {
    pub depth: usize,
    pub dim_in: usize,
    pub dim_inner: usize,
    pub dim_out: usize,
    /// Per-block temporal kernels, cycled.
    pub temporal_kernels: Vec<usize>,
    /// Only the first `n` blocks keep their cycled temporal kernel; later
    /// blocks fall back to 1. `None` means all blocks.
    pub num_block_temp_kernel: Option<usize>,
    pub spatial_stride: usize,
    pub temporal_stride: usize,
    pub dilation: usize,
    pub norm: NormKind,
    pub activation: Activation,
    pub zero_init_final_norm: bool,
}

/// Builds a stage of `depth` bottleneck blocks.
pub fn create_res_stage(cfg: &StageConfig, rng: &mut StdRng) -> Result<Node> {
    if cfg.depth == 0 {
        return Err(ModelError::Config("stage depth must be >= 1".into()));
    }
    let mut blocks: Vec<(String, Node)> = Vec::with_capacity(cfg.depth);
    for j in 0..cfg.depth {
        let mut kt = cfg.temporal_kernels[j % cfg.temporal_kernels.len()];
        if let Some(n) = cfg.num_block_temp_kernel {
            if j >= n {
                kt = 1;
            }
        }
        let block = create_bottleneck_block(
            &BottleneckConfig {
                dim_in: if j == 0 { cfg.dim_in } else { cfg.dim_out },
                dim_inner: cfg.dim_inner,
                dim_out: cfg.dim_out,
                conv_a_temporal: kt,
                conv_b_kernel: [1, 3, 3],
                conv_b_stride: if j == 0 {
                    [cfg.temporal_stride, cfg.spatial_stride, cfg.spatial_stride]
                } else {
                    [1, 1, 1]
                },
                conv_b_dilation: [1, cfg.dilation, cfg.dilation],
                conv_b_groups: 1,
                norm: cfg.norm,
                activation: cfg.activation,
                zero_init_final_norm: cfg.zero_init_final_norm,
                projection: true,
            },
            rng,
        )?;
        blocks.push((format!("block{j}"), block));
    }
    Ok(Node::Sequential(blocks))
}

/// Basic classification head parameters.
#[derive(Debug, Clone)]
pub struct HeadConfig {
    pub dim_in: usize,
    pub num_classes: usize,
    pub dropout: f64,
    /// Optional output activation; zoo verification runs with `None` so FLOP
    /// counts stay in logit space.
    pub activation: Option<Activation>,
}

/// Global spatiotemporal average -> dropout -> linear -> optional activation.
pub fn create_res_basic_head(cfg: &HeadConfig, rng: &mut StdRng) -> Result<Node> {
    let mut children: Vec<(String, Node)> = vec![
        ("pool".into(), Node::GlobalAvgPool),
        ("dropout".into(), Node::Dropout(cfg.dropout)),
        (
            "proj".into(),
            Node::Linear(Linear::new(cfg.dim_in, cfg.num_classes, rng)),
        ),
    ];
    if let Some(act) = cfg.activation {
        children.push(("act".into(), Node::Activation(act)));
    }
    Ok(Node::Sequential(children))
}

/// Single-stream ResNet flavors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResNetVariant {
    C2d,
    I3d,
    Slow,
}

impl ResNetVariant {
    /// Stem temporal kernel, per-stage conv_a temporal kernel cycles, and
    /// whether a (2,1,1) pool follows stage 1.
    fn recipe(&self) -> (usize, [Vec<usize>; 4], bool) {
        match self {
            ResNetVariant::C2d => (1, [vec![1], vec![1], vec![1], vec![1]], true),
            ResNetVariant::I3d => (5, [vec![3], vec![3, 1], vec![3, 1], vec![1, 3]], true),
            ResNetVariant::Slow => (1, [vec![1], vec![1], vec![3], vec![3]], false),
        }
    }
}

/// Full network configuration for [`create_resnet`].
#[derive(Debug, Clone)]
pub struct ResNetConfig {
    pub variant: ResNetVariant,
    pub depth: u32,
    pub model_num_class: usize,
    pub input_channel: usize,
    pub stem_dim_out: usize,
    pub norm: NormKind,
    pub activation: Activation,
    pub head_activation: Option<Activation>,
    pub dropout: f64,
    pub zero_init_final_norm: bool,
    /// Per-stage spatial strides of the first block.
    pub stage_spatial_strides: [usize; 4],
    /// Per-stage spatial dilations (detection towers dilate the last stage).
    pub stage_dilations: [usize; 4],
    /// Overrides the variant's per-stage temporal kernel cycles.
    pub stage_temporal_kernels: Option<[Vec<usize>; 4]>,
    pub seed: u64,
}

impl Default for ResNetConfig {
    fn default() -> Self {
        ResNetConfig {
            variant: ResNetVariant::Slow,
            depth: 50,
            model_num_class: 400,
            input_channel: 3,
            stem_dim_out: 64,
            norm: NormKind::BatchNorm,
            activation: Activation::Relu,
            head_activation: None,
            dropout: 0.5,
            zero_init_final_norm: false,
            stage_spatial_strides: [1, 2, 2, 2],
            stage_dilations: [1, 1, 1, 1],
            stage_temporal_kernels: None,
            seed: 0,
        }
    }
}

pub(crate) fn stage_depths(depth: u32) -> Result<[usize; 4]> {
    match depth {
        50 => Ok([3, 4, 6, 3]),
        101 => Ok([3, 4, 23, 3]),
        other => Err(ModelError::Config(format!(
            "unsupported resnet depth {other}, expected 50 or 101"
        ))),
    }
}

/// Backbone widths shared by the single-stream factories.
pub(crate) const STAGE_INNER: [usize; 4] = [64, 128, 256, 512];
pub(crate) const STAGE_OUT: [usize; 4] = [256, 512, 1024, 2048];

/// Builds the backbone (stem + 4 stages) and returns it with its feature dim.
fn build_backbone(cfg: &ResNetConfig, rng: &mut StdRng) -> Result<(Vec<(String, Node)>, usize)> {
    let depths = stage_depths(cfg.depth)?;
    let (stem_kt, variant_kernels, stage1_pool) = cfg.variant.recipe();
    let kernels = cfg
        .stage_temporal_kernels
        .clone()
        .unwrap_or(variant_kernels);

    let mut children: Vec<(String, Node)> = Vec::new();
    children.push((
        "stem".into(),
        create_res_basic_stem(
            &StemConfig {
                dim_in: cfg.input_channel,
                dim_out: cfg.stem_dim_out,
                conv_kernel: [stem_kt, 7, 7],
                conv_stride: [1, 2, 2],
                norm: cfg.norm,
                activation: cfg.activation,
                ..StemConfig::default()
            },
            rng,
        )?,
    ));

    let mut dim_in = cfg.stem_dim_out;
    for i in 0..4 {
        let stage = create_res_stage(
            &StageConfig {
                depth: depths[i],
                dim_in,
                dim_inner: STAGE_INNER[i],
                dim_out: STAGE_OUT[i],
                temporal_kernels: kernels[i].clone(),
                num_block_temp_kernel: None,
                spatial_stride: cfg.stage_spatial_strides[i],
                temporal_stride: 1,
                dilation: cfg.stage_dilations[i],
                norm: cfg.norm,
                activation: cfg.activation,
                zero_init_final_norm: cfg.zero_init_final_norm,
            },
            rng,
        )?;
        children.push((format!("stage{}", i + 1), stage));
        if i == 0 && stage1_pool {
            children.push((
                "stage1_pool".into(),
                Node::Pool(Pool3d {
                    kind: PoolKind::Max,
                    kernel: [2, 1, 1],
                    stride: [2, 1, 1],
                    padding: [0, 0, 0],
                }),
            ));
        }
        dim_in = STAGE_OUT[i];
    }
    Ok((children, dim_in))
}

/// Builds a single-stream video ResNet with the default pooled head.
pub fn create_resnet(cfg: &ResNetConfig) -> Result<Node> {
    let mut rng = StdRng::seed_from_u64(cfg.seed);
    let (mut children, feat) = build_backbone(cfg, &mut rng)?;
    children.push((
        "head".into(),
        create_res_basic_head(
            &HeadConfig {
                dim_in: feat,
                num_classes: cfg.model_num_class,
                dropout: cfg.dropout,
                activation: cfg.head_activation,
            },
            &mut rng,
        )?,
    ));
    Ok(Node::Sequential(children))
}

/// Builds a single-stream ResNet with a caller-provided head module.
///
/// `head` receives the backbone feature dim via the closure, mirroring a
/// `head=create_customized_head` injection.
pub fn create_resnet_with_head(
    cfg: &ResNetConfig,
    head: impl FnOnce(usize, &mut StdRng) -> Result<Node>,
) -> Result<Node> {
    let mut rng = StdRng::seed_from_u64(cfg.seed);
    let (mut children, feat) = build_backbone(cfg, &mut rng)?;
    children.push(("head".into(), head(feat, &mut rng)?));
    Ok(Node::Sequential(children))
}

/// Region-of-interest head geometry for detection towers.
#[derive(Debug, Clone)]
pub struct RoiSpec {
    pub output_size: (usize, usize),
    pub spatial_scale: f64,
    pub sampling_ratio: usize,
    pub num_classes: usize,
    pub dropout: f64,
}

impl Default for RoiSpec {
    fn default() -> Self {
        RoiSpec {
            output_size: (7, 7),
            spatial_scale: 1.0 / 16.0,
            sampling_ratio: 0,
            num_classes: 80,
            dropout: 0.5,
        }
    }
}

/// Attaches an ROI classification head to a backbone.
///
/// Boxes arrive as `(batch_idx, x1, y1, x2, y2)` rows in input-pixel
/// coordinates; per-box multi-label logits come out through a sigmoid.
pub fn create_detection_head(
    backbone_feature_dim: usize,
    spec: &RoiSpec,
    rng: &mut StdRng,
) -> Result<Node> {
    Ok(Node::RoiHead(RoiHead {
        output_size: spec.output_size,
        spatial_scale: spec.spatial_scale,
        sampling_ratio: spec.sampling_ratio,
        dropout: spec.dropout,
        proj: Linear::new(backbone_feature_dim, spec.num_classes, rng),
        activation: Activation::Sigmoid,
    }))
}

/// Slow-pathway detection tower: stride-1 dilated last stage plus ROI head.
pub fn create_resnet_detection(cfg: &ResNetConfig, roi: &RoiSpec) -> Result<Node> {
    let mut det_cfg = cfg.clone();
    det_cfg.stage_spatial_strides = [1, 2, 2, 1];
    det_cfg.stage_dilations = [1, 1, 1, 2];
    let mut rng = StdRng::seed_from_u64(det_cfg.seed);
    let (mut children, feat) = build_backbone(&det_cfg, &mut rng)?;
    children.push(("head".into(), create_detection_head(feat, roi, &mut rng)?));
    Ok(Node::Sequential(children))
}

/// Acoustic ResNet configuration: a slow-only tower on log-spectrogram input
/// reshaped to 1-channel video `(1, T, 1, F)`.
#[derive(Debug, Clone)]
pub struct AcousticResNetConfig {
    pub model_num_class: usize,
    pub norm: NormKind,
    pub activation: Activation,
    pub head_activation: Option<Activation>,
    pub dropout: f64,
    pub seed: u64,
}

impl Default for AcousticResNetConfig {
    fn default() -> Self {
        AcousticResNetConfig {
            model_num_class: 400,
            norm: NormKind::BatchNorm,
            activation: Activation::Relu,
            head_activation: None,
            dropout: 0.5,
            seed: 0,
        }
    }
}

/// Builds the acoustic ResNet-50. The stem mixes time and frequency with a
/// (9,1,9) kernel; stages keep temporal-heavy `3x1x1` convs and `1x1x3`
/// frequency convs, downsampling time and frequency from stage 2 on.
pub fn create_acoustic_resnet(cfg: &AcousticResNetConfig) -> Result<Node> {
    let mut rng = StdRng::seed_from_u64(cfg.seed);
    let mut children: Vec<(String, Node)> =
        vec![("adapter".into(), Node::SpectrogramAdapter)];

    let stem_conv = Conv3d::new(1, 64, [9, 1, 9], [1, 1, 3], 1, false, &mut rng)?;
    let mut stem: Vec<(String, Node)> = vec![("conv".into(), Node::Conv3d(stem_conv))];
    if let Some(n) = cfg.norm.build_node(64, false) {
        stem.push(("norm".into(), n));
    }
    stem.push(("act".into(), Node::Activation(cfg.activation)));
    stem.push((
        "pool".into(),
        Node::Pool(Pool3d {
            kind: PoolKind::Max,
            kernel: [3, 1, 3],
            stride: [2, 1, 2],
            padding: [1, 0, 1],
        }),
    ));
    children.push(("stem".into(), Node::Sequential(stem)));

    let depths = [3usize, 4, 6, 3];
    let mut dim_in = 64;
    for i in 0..4 {
        let mut blocks: Vec<(String, Node)> = Vec::new();
        for j in 0..depths[i] {
            let block = create_bottleneck_block(
                &BottleneckConfig {
                    dim_in: if j == 0 { dim_in } else { STAGE_OUT[i] },
                    dim_inner: STAGE_INNER[i],
                    dim_out: STAGE_OUT[i],
                    conv_a_temporal: 3,
                    conv_b_kernel: [1, 1, 3],
                    conv_b_stride: if j == 0 && i > 0 { [2, 1, 2] } else { [1, 1, 1] },
                    conv_b_dilation: [1, 1, 1],
                    conv_b_groups: 1,
                    norm: cfg.norm,
                    activation: cfg.activation,
                    zero_init_final_norm: false,
                    projection: true,
                },
                &mut rng,
            )?;
            blocks.push((format!("block{j}"), block));
        }
        children.push((format!("stage{}", i + 1), Node::Sequential(blocks)));
        dim_in = STAGE_OUT[i];
    }

    children.push((
        "head".into(),
        create_res_basic_head(
            &HeadConfig {
                dim_in,
                num_classes: cfg.model_num_class,
                dropout: cfg.dropout,
                activation: cfg.head_activation,
            },
            &mut rng,
        )?,
    ));
    Ok(Node::Sequential(children))
}
