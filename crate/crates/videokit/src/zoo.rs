//! Manifest-driven model-zoo verification: the reproducibility mechanism.
//!
//! A JSON manifest pins every factory's expected parameter count and
//! per-clip GFLOPs together with provenance; `verify` rebuilds each model
//! from its factory and measures both, flagging regressions. Verification is
//! hermetic: factories and the manifest are all it needs.

use crate::models::{
    count_flops, count_params, create_acoustic_resnet, create_resnet, create_resnet_detection,
    create_slowfast, create_slowfast_detection, create_x3d, AcousticResNetConfig, ModelError,
    Node, ResNetConfig, ResNetVariant, SlowFastConfig, TraceInput, X3dConfig, X3dVariant,
};
use serde::{Deserialize, Serialize};
use std::path::Path;
use thiserror::Error;

/// Environment variable overriding the manifest path.
pub const MANIFEST_ENV: &str = "VIDEOKIT_MANIFEST";
/// Debug hook: set to an entry name to build that factory with one extra
/// stem channel, for end-to-end regression-detection drills.
pub const PERTURB_ENV: &str = "VIDEOKIT_PERTURB";

/// The manifest bundled with the crate (`zoo/manifest.json` at the repo
/// root).
pub const BUNDLED_MANIFEST: &str = include_str!("../../../zoo/manifest.json");

#[derive(Debug, Error)]
pub enum ZooError {
    #[error("schema error at {pointer}: {message}")]
    Schema { pointer: String, message: String },
    #[error("factory error: {0}")]
    Factory(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, ZooError>;

/// Verification status of a manifest row.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EntryStatus {
    Verified,
    Unverified,
}

/// One zoo row: a factory reference plus its expected measurements and
/// provenance.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ZooManifestEntry {
    pub name: String,
    pub factory: String,
    #[serde(default)]
    pub args: serde_json::Map<String, serde_json::Value>,
    /// Raw clip shape before pathway packing ([C, T, H, W], or [T, F] for
    /// spectrogram factories).
    pub input_shape: Vec<usize>,
    #[serde(default)]
    pub expected_params: Option<u64>,
    #[serde(default)]
    pub expected_flops_g: Option<f64>,
    /// `(spatial_crops, temporal_clips)` reporting factors; FLOPs stay
    /// per-clip and these are displayed alongside.
    pub report_factors: (u32, u32),
    /// Provenance string; paper-sourced values cite their table.
    pub reference: String,
    pub status: EntryStatus,
}

/// Parsed manifest: strict entries plus free-form informational records
/// (accuracy/latency table rows that are never verified).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub entries: Vec<ZooManifestEntry>,
    #[serde(default)]
    pub informational: Vec<serde_json::Value>,
}

/// Parses and schema-validates manifest text. Errors carry a JSON pointer to
/// the offending field.
pub fn parse_manifest(text: &str) -> Result<Manifest> {
    let value: serde_json::Value = serde_json::from_str(text).map_err(|e| ZooError::Schema {
        pointer: "/".into(),
        message: e.to_string(),
    })?;
    let entries_value = value.get("entries").ok_or_else(|| ZooError::Schema {
        pointer: "/entries".into(),
        message: "missing entries array".into(),
    })?;
    let raw_entries = entries_value.as_array().ok_or_else(|| ZooError::Schema {
        pointer: "/entries".into(),
        message: "entries must be an array".into(),
    })?;
    let mut entries = Vec::with_capacity(raw_entries.len());
    for (i, raw) in raw_entries.iter().enumerate() {
        let entry: ZooManifestEntry =
            serde_json::from_value(raw.clone()).map_err(|e| ZooError::Schema {
                pointer: format!("/entries/{i}"),
                message: e.to_string(),
            })?;
        if entry.status == EntryStatus::Verified {
            if entry.expected_params.is_none() {
                return Err(ZooError::Schema {
                    pointer: format!("/entries/{i}/expected_params"),
                    message: format!("verified entry {:?} must pin expected_params", entry.name),
                });
            }
            if entry.expected_flops_g.is_none() {
                return Err(ZooError::Schema {
                    pointer: format!("/entries/{i}/expected_flops_g"),
                    message: format!("verified entry {:?} must pin expected_flops_g", entry.name),
                });
            }
        }
        if entry.report_factors.0 < 1 || entry.report_factors.1 < 1 {
            return Err(ZooError::Schema {
                pointer: format!("/entries/{i}/report_factors"),
                message: "report factors must be >= (1, 1)".into(),
            });
        }
        if entry.input_shape.is_empty() {
            return Err(ZooError::Schema {
                pointer: format!("/entries/{i}/input_shape"),
                message: "input_shape must be non-empty".into(),
            });
        }
        entries.push(entry);
    }
    let informational = match value.get("informational") {
        None => Vec::new(),
        Some(v) => v
            .as_array()
            .ok_or_else(|| ZooError::Schema {
                pointer: "/informational".into(),
                message: "informational must be an array".into(),
            })?
            .clone(),
    };
    Ok(Manifest {
        entries,
        informational,
    })
}

/// Loads a manifest file from disk.
pub fn load_manifest(path: &Path) -> Result<Manifest> {
    let text = std::fs::read_to_string(path)?;
    parse_manifest(&text)
}

/// The bundled manifest, parsed.
pub fn bundled_manifest() -> Manifest {
    parse_manifest(BUNDLED_MANIFEST).expect("bundled manifest is valid")
}

/// Resolves the manifest: explicit path, else `VIDEOKIT_MANIFEST`, else the
/// bundled copy.
pub fn resolve_manifest(path: Option<&Path>) -> Result<Manifest> {
    if let Some(p) = path {
        return load_manifest(p);
    }
    if let Ok(p) = std::env::var(MANIFEST_ENV) {
        return load_manifest(Path::new(&p));
    }
    Ok(bundled_manifest())
}

fn arg_u64(entry: &ZooManifestEntry, key: &str) -> Option<u64> {
    entry.args.get(key).and_then(|v| v.as_u64())
}

fn arg_str<'a>(entry: &'a ZooManifestEntry, key: &str) -> Option<&'a str> {
    entry.args.get(key).and_then(|v| v.as_str())
}

fn perturbed(entry: &ZooManifestEntry) -> bool {
    std::env::var(PERTURB_ENV).is_ok_and(|v| v == entry.name)
}

/// Regression drill: widens the first stem conv (and its norm) by one output
/// channel without propagating the change downstream — the shape of a real
/// code regression. Verification catches it as a channel mismatch.
fn widen_first_conv_by_one(node: &mut Node) -> bool {
    use crate::models::nn::Node as N;
    match node {
        N::Sequential(children) | N::Parallel(children) => {
            let mut widened_at: Option<usize> = None;
            for (i, (_, child)) in children.iter_mut().enumerate() {
                match child {
                    N::Conv3d(conv) => {
                        let mut shape = conv.weight.shape().to_vec();
                        shape[0] += 1;
                        let mut wide = crate::tensor::zeros(&shape);
                        wide.slice_mut(ndarray::s![..shape[0] - 1, .., .., .., ..])
                            .assign(&conv.weight);
                        conv.weight = wide;
                        widened_at = Some(i);
                        break;
                    }
                    _ => {
                        if widen_first_conv_by_one(child) {
                            return true;
                        }
                    }
                }
            }
            if let Some(i) = widened_at {
                // Grow the adjacent norm so the stem itself stays coherent.
                if let Some((_, N::BatchNorm(bn))) = children.get_mut(i + 1) {
                    let c = bn.channels() + 1;
                    *bn = crate::models::nn::BatchNorm::new(c);
                }
                return true;
            }
            false
        }
        N::Residual { main, .. } => widen_first_conv_by_one(main),
        _ => false,
    }
}

/// Builds the model an entry describes. Unknown factory ids and malformed
/// args surface as factory errors.
pub fn build_entry(entry: &ZooManifestEntry) -> Result<Node> {
    let num_class = arg_u64(entry, "model_num_class").unwrap_or(400) as usize;
    let mut model = match entry.factory.as_str() {
        "resnet" => {
            let variant = match arg_str(entry, "variant") {
                Some("c2d") => ResNetVariant::C2d,
                Some("i3d") => ResNetVariant::I3d,
                Some("slow") | None => ResNetVariant::Slow,
                Some(other) => {
                    return Err(ZooError::Factory(format!("unknown resnet variant {other:?}")))
                }
            };
            create_resnet(&ResNetConfig {
                variant,
                depth: arg_u64(entry, "depth").unwrap_or(50) as u32,
                model_num_class: num_class,
                ..Default::default()
            })?
        }
        "slowfast" => {
            let mut cfg = if arg_u64(entry, "depth") == Some(101) {
                SlowFastConfig::r101_16x8()
            } else {
                SlowFastConfig::default()
            };
            cfg.model_num_class = num_class;
            if let Some(alpha) = arg_u64(entry, "alpha") {
                cfg.alpha = alpha as usize;
            }
            create_slowfast(&cfg)?
        }
        "x3d" => {
            let variant = match arg_str(entry, "variant") {
                Some("xs") => X3dVariant::Xs,
                Some("s") => X3dVariant::S,
                Some("m") | None => X3dVariant::M,
                Some("l") => X3dVariant::L,
                Some(other) => {
                    return Err(ZooError::Factory(format!("unknown x3d variant {other:?}")))
                }
            };
            create_x3d(&X3dConfig {
                variant,
                model_num_class: num_class,
                ..Default::default()
            })?
        }
        "acoustic_resnet" => create_acoustic_resnet(&AcousticResNetConfig {
            model_num_class: num_class,
            ..Default::default()
        })?,
        "slow_detection" => create_resnet_detection(
            &ResNetConfig {
                variant: ResNetVariant::Slow,
                depth: arg_u64(entry, "depth").unwrap_or(50) as u32,
                model_num_class: num_class,
                ..Default::default()
            },
            &crate::models::resnet::RoiSpec {
                num_classes: arg_u64(entry, "num_classes").unwrap_or(80) as usize,
                ..Default::default()
            },
        )?,
        "slowfast_detection" => {
            let mut cfg = SlowFastConfig::default();
            cfg.model_num_class = num_class;
            create_slowfast_detection(
                &cfg,
                &crate::models::resnet::RoiSpec {
                    num_classes: arg_u64(entry, "num_classes").unwrap_or(80) as usize,
                    ..Default::default()
                },
            )?
        }
        other => {
            return Err(ZooError::Factory(format!(
                "unknown or unimplemented factory {other:?} (status should be unverified)"
            )))
        }
    };
    if perturbed(entry) {
        widen_first_conv_by_one(&mut model);
    }
    Ok(model)
}

/// Trace input for an entry: packs pathways for slowfast factories and adds
/// one box for detection heads.
pub fn entry_trace_input(entry: &ZooManifestEntry) -> Result<TraceInput> {
    let shape = &entry.input_shape;
    let is_slowfast = entry.factory.starts_with("slowfast");
    let is_detection = entry.factory.ends_with("detection");
    let input = if entry.factory == "acoustic_resnet" {
        if shape.len() != 2 {
            return Err(ZooError::Factory(format!(
                "acoustic input_shape must be [T, F], got {shape:?}"
            )));
        }
        TraceInput::single(vec![1, shape[0], shape[1]])
    } else if is_slowfast {
        if shape.len() != 4 {
            return Err(ZooError::Factory(format!(
                "input_shape must be [C, T, H, W], got {shape:?}"
            )));
        }
        let alpha = arg_u64(entry, "alpha").unwrap_or(4) as usize;
        if shape[1] % alpha != 0 {
            return Err(ZooError::Factory(format!(
                "frame count {} not divisible by alpha {alpha}",
                shape[1]
            )));
        }
        TraceInput::pathways(vec![
            vec![1, shape[0], shape[1] / alpha, shape[2], shape[3]],
            vec![1, shape[0], shape[1], shape[2], shape[3]],
        ])
    } else {
        if shape.len() != 4 {
            return Err(ZooError::Factory(format!(
                "input_shape must be [C, T, H, W], got {shape:?}"
            )));
        }
        TraceInput::single(vec![1, shape[0], shape[1], shape[2], shape[3]])
    };
    Ok(if is_detection {
        input.with_boxes(1)
    } else {
        input
    })
}

/// Tolerances of the verification gate.
pub const PARAM_TOLERANCE: f64 = 0.005;
pub const FLOPS_TOLERANCE: f64 = 0.02;

/// Outcome of verifying one entry.
#[derive(Debug, Clone, Serialize)]
pub struct VerificationResult {
    pub name: String,
    pub measured_params: u64,
    pub expected_params: u64,
    pub param_ok: bool,
    pub measured_flops_g: f64,
    pub expected_flops_g: f64,
    pub flops_ok: bool,
    pub report_factors: (u32, u32),
}

impl VerificationResult {
    pub fn ok(&self) -> bool {
        self.param_ok && self.flops_ok
    }
}

/// Builds the entry's model and checks parameters (within 0.5%) and per-clip
/// GFLOPs (within 2%) against the manifest expectations.
pub fn verify_entry(entry: &ZooManifestEntry) -> Result<VerificationResult> {
    let expected_params = entry.expected_params.ok_or_else(|| ZooError::Factory(
        format!("entry {:?} has no expected_params to verify", entry.name),
    ))?;
    let expected_flops_g = entry.expected_flops_g.ok_or_else(|| ZooError::Factory(
        format!("entry {:?} has no expected_flops_g to verify", entry.name),
    ))?;
    let model = build_entry(entry)?;
    let measured_params = count_params(&model) as u64;
    let trace_input = entry_trace_input(entry)?;
    let measured_flops_g = count_flops(&model, &trace_input)? as f64 / 1e9;

    let param_ok = (measured_params as f64 - expected_params as f64).abs()
        <= PARAM_TOLERANCE * expected_params as f64;
    let flops_ok =
        (measured_flops_g - expected_flops_g).abs() <= FLOPS_TOLERANCE * expected_flops_g;
    Ok(VerificationResult {
        name: entry.name.clone(),
        measured_params,
        expected_params,
        param_ok,
        measured_flops_g,
        expected_flops_g,
        flops_ok,
        report_factors: entry.report_factors,
    })
}
