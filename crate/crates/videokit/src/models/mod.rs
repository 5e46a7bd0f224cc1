//! Dependency-injectable building blocks and factory functions for video
//! backbones and heads.
//!
//! Skeleton classes (blocks, stems, stages, heads) are assembled by factory
//! functions into reproducible reference models; every structural choice is
//! an argument with a sensible default, so callers can inject custom norm and
//! activation constructors or a custom head without touching the factories.

pub mod checkpoint;
pub mod grad;
pub mod nn;
pub mod resnet;
pub mod slowfast;
pub mod stats;
pub mod x3d;

pub use nn::{
    Activation, ArrayKind, BatchNorm, Conv3d, Linear, ModelError, Node, Pool3d, PoolKind,
    QuantConv3d, RoiHead, Value,
};
pub use resnet::{
    create_acoustic_resnet, create_bottleneck_block, create_res_basic_head,
    create_res_basic_stem, create_res_stage, create_resnet, create_resnet_detection,
    AcousticResNetConfig, BottleneckConfig, HeadConfig, ResNetConfig, ResNetVariant, StageConfig,
    StemConfig,
};
pub use slowfast::{create_slowfast, create_slowfast_detection, SlowFastConfig};
pub use stats::{count_flops, count_params, output_shapes, shape_audit, TraceInput};
pub use x3d::{create_x3d, X3dConfig, X3dVariant};
