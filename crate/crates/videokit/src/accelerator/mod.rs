//! Hardware-aware deployment pass.
//!
//! A registry of equivalence-preserving rewrite rules walks a model tree and
//! substitutes efficient blocks: inference batch norms fold into the
//! preceding conv, spatial-only conv3d runs as per-frame 2D conv, and
//! pointwise-in-space conv3d runs as 1D temporal conv. Conversion is gated by
//! a numeric equivalence check on an example input and aborts rather than
//! ship a model that changed its outputs.

mod bench;
mod quantize;
mod rules;

pub use bench::{benchmark_latency, BenchConfig, LatencyReport};
pub use quantize::{quantize_weights_int8, QuantizedModel};
pub use rules::{
    decompose_spatial_conv, decompose_temporal_conv, fuse_conv_bn, fuse_conv_bn_node,
};

use crate::models::nn::{ModelError, Node, Value};
use crate::tensor::max_abs_diff;
use thiserror::Error;

/// Errors from the deployment pass.
#[derive(Debug, Error)]
pub enum AcceleratorError {
    #[error("rule does not match node: {0}")]
    Match(String),
    #[error("shape error: {0}")]
    Shape(String),
    #[error(
        "equivalence gate failed: max |converted - original| = {max_diff:.3e} > {tolerance:.1e}; conversion aborted"
    )]
    Equivalence { max_diff: f64, tolerance: f64 },
    #[error("config error: {0}")]
    Config(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

pub type Result<T> = std::result::Result<T, AcceleratorError>;

/// How strictly a rewrite must reproduce the original node's outputs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Equivalence {
    /// Bit-compatible up to fp reassociation: 1e-5.
    Exact,
    Approximate(f64),
}

impl Equivalence {
    pub fn tolerance(&self) -> f64 {
        match self {
            Equivalence::Exact => 1e-5,
            Equivalence::Approximate(t) => *t,
        }
    }
}

/// Matcher + builder pair replacing a module node with an equivalent
/// efficient block. The builder returns the replacement plus a short detail
/// string for the applied-rule log.
pub struct RewriteRule {
    pub name: &'static str,
    pub matcher: fn(&Node) -> bool,
    pub builder: fn(&Node) -> Result<(Node, String)>,
    pub equivalence: Equivalence,
}

/// One applied rewrite, recorded in deterministic order.
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct RuleApplication {
    pub rule: String,
    pub path: String,
    pub detail: String,
}

impl std::fmt::Display for RuleApplication {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{} @ {} ({})", self.rule, self.path, self.detail)
    }
}

/// Ordered rule set plus the whole-model equivalence tolerance.
pub struct RuleRegistry {
    pub rules: Vec<RewriteRule>,
    /// Tolerance of the final converted-vs-original gate. Looser than the
    /// per-rule tolerances because long chains accumulate fp error.
    pub model_tolerance: f64,
}

impl Default for RuleRegistry {
    fn default() -> Self {
        RuleRegistry {
            rules: vec![
                rules::fuse_conv_bn_rule(),
                rules::decompose_spatial_rule(),
                rules::decompose_temporal_rule(),
            ],
            model_tolerance: 1e-4,
        }
    }
}

/// A converted model with its applied-rule log.
#[derive(Debug, Clone)]
pub struct Converted {
    pub model: Node,
    pub rule_log: Vec<RuleApplication>,
}

/// Rewrites `model` with the default registry. See [`convert_with_registry`].
pub fn convert_to_deployable_form(model: &Node, example: &Value) -> Result<Converted> {
    convert_with_registry(model, example, &RuleRegistry::default())
}

/// Walks the module tree depth-first in deterministic child order, applying
/// each registry rule to fixpoint (fusion first, then decompositions), then
/// asserts `max |converted(x) - model(x)| <= model_tolerance` on the example
/// input. On gate failure the original model is left untouched and an
/// [`AcceleratorError::Equivalence`] is returned.
pub fn convert_with_registry(
    model: &Node,
    example: &Value,
    registry: &RuleRegistry,
) -> Result<Converted> {
    let mut converted = model.clone();
    let mut log = Vec::new();
    for rule in &registry.rules {
        rewrite_to_fixpoint(&mut converted, "", rule, &mut log)?;
    }

    let want = model.forward(example)?;
    let got = converted.forward(example)?;
    if want.tensors.len() != got.tensors.len() {
        return Err(AcceleratorError::Shape(
            "conversion changed the number of output pathways".into(),
        ));
    }
    let mut max_diff = 0.0f64;
    for (a, b) in want.tensors.iter().zip(got.tensors.iter()) {
        if a.shape() != b.shape() {
            return Err(AcceleratorError::Shape(format!(
                "conversion changed an output shape: {:?} vs {:?}",
                a.shape(),
                b.shape()
            )));
        }
        max_diff = max_diff.max(max_abs_diff(a, b));
    }
    if max_diff > registry.model_tolerance {
        return Err(AcceleratorError::Equivalence {
            max_diff,
            tolerance: registry.model_tolerance,
        });
    }
    Ok(Converted {
        model: converted,
        rule_log: log,
    })
}

fn join_path(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

fn rewrite_to_fixpoint(
    node: &mut Node,
    path: &str,
    rule: &RewriteRule,
    log: &mut Vec<RuleApplication>,
) -> Result<()> {
    // Children first, in declaration order.
    match node {
        Node::Sequential(children) | Node::Parallel(children) => {
            for (name, child) in children.iter_mut() {
                let p = join_path(path, name);
                rewrite_to_fixpoint(child, &p, rule, log)?;
            }
        }
        Node::Residual { main, shortcut, .. } => {
            rewrite_to_fixpoint(main, path, rule, log)?;
            if let Some(sc) = shortcut {
                rewrite_to_fixpoint(sc, path, rule, log)?;
            }
        }
        _ => {}
    }
    // Then this node, repeatedly, until the rule stops matching.
    loop {
        if !(rule.matcher)(node) {
            break;
        }
        let (replacement, detail) = (rule.builder)(node)?;
        log.push(RuleApplication {
            rule: rule.name.to_string(),
            path: path.to_string(),
            detail,
        });
        *node = replacement;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::nn::{randomize_batch_norms, BatchNorm, Conv3d, Node};
    use crate::models::{count_params, create_x3d, X3dConfig, X3dVariant};
    use ndarray::{ArrayD, IxDyn};
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn random_tensor(shape: &[usize], rng: &mut StdRng) -> crate::tensor::Tensor {
        ArrayD::from_shape_fn(IxDyn(shape), |_| rng.random::<f64>() - 0.5)
    }

    #[test]
    fn no_matching_nodes_is_a_noop() {
        let mut rng = StdRng::seed_from_u64(3);
        // A lone 3x3x3 conv matches neither decomposition and has no bn.
        let conv = Conv3d::new(2, 2, [3, 3, 3], [1, 1, 1], 1, false, &mut rng).unwrap();
        let model = Node::seq(vec![("conv", Node::Conv3d(conv))]);
        let x = Value::single(random_tensor(&[1, 2, 3, 6, 6], &mut rng));
        let converted = convert_to_deployable_form(&model, &x).unwrap();
        assert!(converted.rule_log.is_empty());
        let a = model.forward(&x).unwrap().into_tensor().unwrap();
        let b = converted.model.forward(&x).unwrap().into_tensor().unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn slow_style_tower_fuses_and_decomposes() {
        let mut rng = StdRng::seed_from_u64(4);
        let conv1 = Conv3d::new(3, 8, [1, 3, 3], [1, 2, 2], 1, false, &mut rng).unwrap();
        let conv2 = Conv3d::new(8, 8, [3, 1, 1], [1, 1, 1], 1, false, &mut rng).unwrap();
        let mut model = Node::seq(vec![
            ("conv1", Node::Conv3d(conv1)),
            ("norm1", Node::BatchNorm(BatchNorm::new(8))),
            ("act1", Node::Activation(crate::models::Activation::Relu)),
            ("conv2", Node::Conv3d(conv2)),
            ("norm2", Node::BatchNorm(BatchNorm::new(8))),
        ]);
        randomize_batch_norms(&mut model, &mut rng);
        let x = Value::single(random_tensor(&[2, 3, 4, 12, 12], &mut rng));
        let converted = convert_to_deployable_form(&model, &x).unwrap();
        let names: Vec<&str> = converted.rule_log.iter().map(|r| r.rule.as_str()).collect();
        assert_eq!(
            names,
            vec![
                "fuse_conv_bn",
                "fuse_conv_bn",
                "decompose_spatial_conv",
                "decompose_temporal_conv"
            ]
        );
        let a = model.forward(&x).unwrap().into_tensor().unwrap();
        let b = converted.model.forward(&x).unwrap().into_tensor().unwrap();
        assert!(crate::tensor::max_abs_diff(&a, &b) <= 1e-5);
        // Fusing drops gamma/beta (2C each) and adds a bias (C each).
        assert_eq!(count_params(&model) - count_params(&converted.model), 8 + 8);
    }

    #[test]
    fn conversion_is_idempotent() {
        let mut rng = StdRng::seed_from_u64(5);
        let mut model = create_x3d(&X3dConfig {
            variant: X3dVariant::Xs,
            model_num_class: 7,
            ..Default::default()
        })
        .unwrap();
        randomize_batch_norms(&mut model, &mut rng);
        let x = Value::single(random_tensor(&[1, 3, 4, 32, 32], &mut rng));
        let once = convert_to_deployable_form(&model, &x).unwrap();
        assert!(!once.rule_log.is_empty());
        let twice = convert_to_deployable_form(&once.model, &x).unwrap();
        assert_eq!(twice.rule_log.len(), 0, "second pass must apply zero rules");
    }

    #[test]
    fn equivalence_gate_aborts_on_tolerance() {
        let mut rng = StdRng::seed_from_u64(6);
        let conv = Conv3d::new(2, 4, [1, 3, 3], [1, 1, 1], 1, false, &mut rng).unwrap();
        let mut model = Node::seq(vec![
            ("conv", Node::Conv3d(conv)),
            ("norm", Node::BatchNorm(BatchNorm::new(4))),
        ]);
        randomize_batch_norms(&mut model, &mut rng);
        let x = Value::single(random_tensor(&[1, 2, 2, 6, 6], &mut rng));
        let registry = RuleRegistry {
            model_tolerance: 0.0, // impossible gate
            ..Default::default()
        };
        match convert_with_registry(&model, &x, &registry) {
            Err(AcceleratorError::Equivalence { .. }) => {}
            other => panic!("expected equivalence abort, got {other:?}"),
        }
    }
}
