//! Weight checkpoints: a flat `name -> array` map in a little-endian binary
//! container, plus a JSON sidecar `{factory, args, param_count}` describing
//! how to rebuild the module skeleton.

use super::nn::{ArrayKind, ModelError, Node};
use crate::tensor::Tensor;
use ndarray::{ArrayD, IxDyn};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

const MAGIC: &[u8; 8] = b"VKCKPT1\n";

/// Sidecar contents. `args` echoes the factory arguments needed to rebuild
/// the skeleton before loading weights into it.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct CheckpointMeta {
    pub factory: String,
    pub args: serde_json::Value,
    pub param_count: usize,
}

#[derive(Serialize, Deserialize)]
struct IndexEntry {
    name: String,
    shape: Vec<usize>,
    kind: String,
}

/// All named arrays of a model, weights and running statistics alike.
pub fn export_arrays(model: &Node) -> BTreeMap<String, Tensor> {
    let mut map = BTreeMap::new();
    model.visit_arrays("", &mut |name, _, arr| {
        map.insert(name, arr.clone());
    });
    map
}

/// Saves weights to `path` and the sidecar to `path` with a `.json`
/// extension.
pub fn save_checkpoint(model: &Node, meta: &CheckpointMeta, path: &Path) -> Result<(), ModelError> {
    let io_err = |e: std::io::Error| ModelError::Config(format!("{}: {e}", path.display()));
    let mut entries = Vec::new();
    let mut payload: Vec<f64> = Vec::new();
    model.visit_arrays("", &mut |name, kind, arr| {
        entries.push(IndexEntry {
            name,
            shape: arr.shape().to_vec(),
            kind: match kind {
                ArrayKind::Param => "param".into(),
                ArrayKind::Buffer => "buffer".into(),
            },
        });
        payload.extend(arr.iter());
    });
    let index = serde_json::to_vec(&entries).expect("index serializes");
    let mut file = std::fs::File::create(path).map_err(io_err)?;
    file.write_all(MAGIC).map_err(io_err)?;
    file.write_all(&(index.len() as u64).to_le_bytes()).map_err(io_err)?;
    file.write_all(&index).map_err(io_err)?;
    let mut bytes = Vec::with_capacity(payload.len() * 8);
    for v in payload {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    file.write_all(&bytes).map_err(io_err)?;

    let sidecar = sidecar_path(path);
    std::fs::write(
        &sidecar,
        serde_json::to_string_pretty(meta).expect("meta serializes"),
    )
    .map_err(|e| ModelError::Config(format!("{}: {e}", sidecar.display())))?;
    Ok(())
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    path.with_extension("json")
}

/// Loads a checkpoint written by [`save_checkpoint`].
pub fn load_checkpoint(path: &Path) -> Result<(BTreeMap<String, Tensor>, CheckpointMeta), ModelError> {
    let err = |msg: String| ModelError::Config(format!("{}: {msg}", path.display()));
    let mut file = std::fs::File::open(path).map_err(|e| err(e.to_string()))?;
    let mut magic = [0u8; 8];
    file.read_exact(&mut magic).map_err(|e| err(e.to_string()))?;
    if &magic != MAGIC {
        return Err(err("not a videokit checkpoint".into()));
    }
    let mut len_bytes = [0u8; 8];
    file.read_exact(&mut len_bytes).map_err(|e| err(e.to_string()))?;
    let index_len = u64::from_le_bytes(len_bytes) as usize;
    let mut index_bytes = vec![0u8; index_len];
    file.read_exact(&mut index_bytes).map_err(|e| err(e.to_string()))?;
    let entries: Vec<IndexEntry> =
        serde_json::from_slice(&index_bytes).map_err(|e| err(e.to_string()))?;
    let mut rest = Vec::new();
    file.read_to_end(&mut rest).map_err(|e| err(e.to_string()))?;

    let mut map = BTreeMap::new();
    let mut offset = 0usize;
    for entry in entries {
        let n: usize = entry.shape.iter().product();
        let end = offset + n * 8;
        if end > rest.len() {
            return Err(err(format!("truncated payload at {}", entry.name)));
        }
        let vals: Vec<f64> = rest[offset..end]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        map.insert(
            entry.name,
            ArrayD::from_shape_vec(IxDyn(&entry.shape), vals).map_err(|e| err(e.to_string()))?,
        );
        offset = end;
    }

    let sidecar = sidecar_path(path);
    let meta: CheckpointMeta = serde_json::from_str(
        &std::fs::read_to_string(&sidecar)
            .map_err(|e| ModelError::Config(format!("{}: {e}", sidecar.display())))?,
    )
    .map_err(|e| ModelError::Config(format!("{}: {e}", sidecar.display())))?;
    Ok((map, meta))
}

/// Writes a weight map into an existing model skeleton, name- and
/// shape-checked.
pub fn apply_arrays(model: &mut Node, weights: &BTreeMap<String, Tensor>) -> Result<(), ModelError> {
    let mut missing: Vec<String> = Vec::new();
    model.visit_arrays_mut("", &mut |name, _, arr| match weights.get(&name) {
        Some(src) if src.shape() == arr.shape() => arr.assign(src),
        Some(src) => missing.push(format!(
            "{name}: shape {:?} vs checkpoint {:?}",
            arr.shape(),
            src.shape()
        )),
        None => missing.push(format!("{name}: missing from checkpoint")),
    });
    if missing.is_empty() {
        Ok(())
    } else {
        Err(ModelError::Config(format!(
            "checkpoint mismatch: {}",
            missing.join("; ")
        )))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::nn::{Conv3d, Linear};
    use rand::rngs::StdRng;
    use rand::SeedableRng;

    #[test]
    fn round_trip_preserves_arrays_and_meta() {
        let mut rng = StdRng::seed_from_u64(0);
        let model = Node::seq(vec![
            (
                "stem",
                Node::seq(vec![(
                    "conv",
                    Node::Conv3d(
                        Conv3d::new(3, 4, [1, 3, 3], [1, 1, 1], 1, false, &mut rng).unwrap(),
                    ),
                )]),
            ),
            ("head", Node::Linear(Linear::new(4, 2, &mut rng))),
        ]);
        let dir = std::env::temp_dir().join(format!("vk-ckpt-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("model.ckpt");
        let meta = CheckpointMeta {
            factory: "resnet".into(),
            args: serde_json::json!({"variant": "slow", "depth": 50}),
            param_count: crate::models::count_params(&model),
        };
        save_checkpoint(&model, &meta, &path).unwrap();
        let (weights, loaded_meta) = load_checkpoint(&path).unwrap();
        assert_eq!(loaded_meta, meta);
        assert_eq!(weights["stem.conv.weight"].shape(), &[4, 3, 1, 3, 3]);
        assert_eq!(weights["head.weight"].shape(), &[2, 4]);

        // Apply into a fresh skeleton with different values.
        let mut rng2 = StdRng::seed_from_u64(99);
        let mut other = Node::seq(vec![
            (
                "stem",
                Node::seq(vec![(
                    "conv",
                    Node::Conv3d(
                        Conv3d::new(3, 4, [1, 3, 3], [1, 1, 1], 1, false, &mut rng2).unwrap(),
                    ),
                )]),
            ),
            ("head", Node::Linear(Linear::new(4, 2, &mut rng2))),
        ]);
        apply_arrays(&mut other, &weights).unwrap();
        assert_eq!(export_arrays(&other), export_arrays(&model));
        std::fs::remove_dir_all(&dir).ok();
    }
}
