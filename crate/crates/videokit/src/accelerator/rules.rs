//! The bundled rewrite rules: conv+bn folding and conv3d decompositions.

use super::{AcceleratorError, Equivalence, Result, RewriteRule};
use crate::models::nn::{BatchNorm, Conv3d, Node};
use ndarray::s;

/// Folds inference-mode batch norm statistics into the preceding conv:
/// `W'_c = W_c * g_c / sqrt(var_c + eps)` and
/// `b'_c = (b_c - mean_c) * g_c / sqrt(var_c + eps) + beta_c`, so that
/// `fused(x) == bn(conv(x))` exactly in real arithmetic.
pub fn fuse_conv_bn(conv: &Conv3d, bn: &BatchNorm) -> Result<Conv3d> {
    if bn.channels() != conv.out_channels() {
        return Err(AcceleratorError::Shape(format!(
            "bn has {} channels but conv produces {}",
            bn.channels(),
            conv.out_channels()
        )));
    }
    let (scale, shift) = bn.affine();
    let mut fused = conv.clone();
    for c in 0..conv.out_channels() {
        fused
            .weight
            .slice_mut(s![c, .., .., .., ..])
            .mapv_inplace(|w| w * scale[c]);
    }
    let mut bias = ndarray::ArrayD::zeros(ndarray::IxDyn(&[conv.out_channels()]));
    for c in 0..conv.out_channels() {
        let b0 = conv.bias.as_ref().map_or(0.0, |b| b[[c]]);
        bias[[c]] = b0 * scale[c] + shift[c];
    }
    fused.bias = Some(bias);
    Ok(fused)
}

/// Searches a sequential for the first adjacent `(conv, bn)` pair.
fn find_fusable(children: &[(String, Node)]) -> Option<usize> {
    children.windows(2).position(|pair| {
        matches!(
            (&pair[0].1, &pair[1].1),
            (Node::Conv3d(_), Node::BatchNorm(_))
                | (Node::FramewiseConv2d(_), Node::BatchNorm(_))
                | (Node::TemporalConv1d(_), Node::BatchNorm(_))
        )
    })
}

/// Rewrites one `(conv, bn)` adjacency inside a sequential (or a lateral
/// fusion's own conv+norm) per application; the walker re-applies to
/// fixpoint.
pub fn fuse_conv_bn_node(node: &Node) -> Result<(Node, String)> {
    match node {
        Node::Sequential(children) => {
            let idx = find_fusable(children).ok_or_else(|| {
                AcceleratorError::Match("no adjacent conv+bn pair in sequential".into())
            })?;
            let detail = format!("{}+{}", children[idx].0, children[idx + 1].0);
            let mut rewritten = children.clone();
            let (_, bn_node) = rewritten.remove(idx + 1);
            let bn = match bn_node {
                Node::BatchNorm(bn) => bn,
                _ => unreachable!(),
            };
            let (name, conv_node) = rewritten[idx].clone();
            rewritten[idx] = match conv_node {
                Node::Conv3d(c) => (name, Node::Conv3d(fuse_conv_bn(&c, &bn)?)),
                Node::FramewiseConv2d(c) => (name, Node::FramewiseConv2d(fuse_conv_bn(&c, &bn)?)),
                Node::TemporalConv1d(c) => (name, Node::TemporalConv1d(fuse_conv_bn(&c, &bn)?)),
                _ => unreachable!(),
            };
            Ok((Node::Sequential(rewritten), detail))
        }
        Node::FuseFastToSlow {
            conv,
            norm: Some(bn),
            activation,
        } => Ok((
            Node::FuseFastToSlow {
                conv: fuse_conv_bn(conv, bn)?,
                norm: None,
                activation: *activation,
            },
            "conv+norm".to_string(),
        )),
        _ => Err(AcceleratorError::Match(
            "fuse_conv_bn applies to sequential or lateral-fusion nodes".into(),
        )),
    }
}

pub(super) fn fuse_conv_bn_rule() -> RewriteRule {
    RewriteRule {
        name: "fuse_conv_bn",
        matcher: |node| match node {
            Node::Sequential(children) => find_fusable(children).is_some(),
            Node::FuseFastToSlow { norm, .. } => norm.is_some(),
            _ => false,
        },
        builder: fuse_conv_bn_node,
        equivalence: Equivalence::Exact,
    }
}

/// Rewrites a `(1, k, k)` conv3d with temporal stride 1 into a per-frame 2D
/// conv node (T folded into the batch axis). Output shapes are unchanged;
/// values agree up to fp reassociation.
pub fn decompose_spatial_conv(node: &Node) -> Result<(Node, String)> {
    match node {
        Node::Conv3d(c) if c.kernel()[0] == 1 && c.stride[0] == 1 => {
            let k = c.kernel();
            Ok((
                Node::FramewiseConv2d(c.clone()),
                format!("kernel (1,{},{})", k[1], k[2]),
            ))
        }
        Node::Conv3d(c) => Err(AcceleratorError::Match(format!(
            "spatial decomposition needs kT=1, temporal stride 1; got kernel {:?} stride {:?}",
            c.kernel(),
            c.stride
        ))),
        _ => Err(AcceleratorError::Match("not a conv3d node".into())),
    }
}

pub(super) fn decompose_spatial_rule() -> RewriteRule {
    RewriteRule {
        name: "decompose_spatial_conv",
        matcher: |node| {
            matches!(node, Node::Conv3d(c) if c.kernel()[0] == 1 && c.stride[0] == 1)
        },
        builder: decompose_spatial_conv,
        equivalence: Equivalence::Exact,
    }
}

/// Rewrites a `(k, 1, 1)` conv3d with spatial stride 1 into a 1D temporal
/// conv node (H*W folded into the batch axis).
pub fn decompose_temporal_conv(node: &Node) -> Result<(Node, String)> {
    match node {
        Node::Conv3d(c)
            if c.kernel()[1] == 1 && c.kernel()[2] == 1 && c.stride[1] == 1 && c.stride[2] == 1 =>
        {
            Ok((
                Node::TemporalConv1d(c.clone()),
                format!("kernel ({},1,1)", c.kernel()[0]),
            ))
        }
        Node::Conv3d(c) => Err(AcceleratorError::Match(format!(
            "temporal decomposition needs kH=kW=1, spatial stride 1; got kernel {:?} stride {:?}",
            c.kernel(),
            c.stride
        ))),
        _ => Err(AcceleratorError::Match("not a conv3d node".into())),
    }
}

pub(super) fn decompose_temporal_rule() -> RewriteRule {
    RewriteRule {
        name: "decompose_temporal_conv",
        matcher: |node| {
            matches!(node, Node::Conv3d(c)
                if c.kernel()[1] == 1 && c.kernel()[2] == 1 && c.stride[1] == 1 && c.stride[2] == 1)
        },
        builder: decompose_temporal_conv,
        equivalence: Equivalence::Exact,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::nn::Value;
    use crate::tensor::max_abs_diff;
    use ndarray::{ArrayD, IxDyn};
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn random_tensor(shape: &[usize], rng: &mut StdRng) -> crate::tensor::Tensor {
        ArrayD::from_shape_fn(IxDyn(shape), |_| rng.random::<f64>() - 0.5)
    }

    fn random_bn(c: usize, rng: &mut StdRng) -> BatchNorm {
        let mut bn = BatchNorm::new(c);
        bn.gamma.mapv_inplace(|_| rng.random::<f64>() + 0.5);
        bn.beta.mapv_inplace(|_| rng.random::<f64>() - 0.5);
        bn.running_mean.mapv_inplace(|_| rng.random::<f64>() - 0.5);
        bn.running_var.mapv_inplace(|_| rng.random::<f64>() + 0.5);
        bn
    }

    #[test]
    fn identity_normalization_keeps_weights() {
        let mut rng = StdRng::seed_from_u64(0);
        let conv = Conv3d::new(2, 3, [1, 3, 3], [1, 1, 1], 1, false, &mut rng).unwrap();
        let mut bn = BatchNorm::new(3);
        // var = 1 - eps so sqrt(var + eps) is exactly 1.
        bn.running_var.fill(1.0 - bn.eps);
        let fused = fuse_conv_bn(&conv, &bn).unwrap();
        assert_eq!(fused.weight, conv.weight);
        assert!(fused.bias.unwrap().iter().all(|&b| b == 0.0));
    }

    #[test]
    fn fused_matches_reference_forward() {
        let mut rng = StdRng::seed_from_u64(1);
        let mut conv = Conv3d::new(3, 5, [3, 3, 3], [1, 2, 2], 1, true, &mut rng).unwrap();
        conv.bias
            .as_mut()
            .unwrap()
            .mapv_inplace(|_| rng.random::<f64>() - 0.5);
        let bn = random_bn(5, &mut rng);
        let fused = fuse_conv_bn(&conv, &bn).unwrap();
        for _ in 0..10 {
            let x = random_tensor(&[1, 3, 4, 9, 9], &mut rng);
            let reference = Node::BatchNorm(bn.clone())
                .forward(&Node::Conv3d(conv.clone()).forward(&Value::single(x.clone())).unwrap())
                .unwrap()
                .into_tensor()
                .unwrap();
            let got = Node::Conv3d(fused.clone())
                .forward(&Value::single(x))
                .unwrap()
                .into_tensor()
                .unwrap();
            assert!(max_abs_diff(&got, &reference) <= 1e-5);
        }
    }

    #[test]
    fn mean_equals_bias_cancels() {
        // mean = b, beta = 0 -> fused bias is exactly 0.
        let mut rng = StdRng::seed_from_u64(2);
        let mut conv = Conv3d::new(2, 2, [1, 1, 1], [1, 1, 1], 1, true, &mut rng).unwrap();
        conv.bias.as_mut().unwrap().fill(0.7);
        let mut bn = BatchNorm::new(2);
        bn.running_mean.fill(0.7);
        let fused = fuse_conv_bn(&conv, &bn).unwrap();
        assert!(fused.bias.unwrap().iter().all(|&b| b.abs() < 1e-15));
    }

    #[test]
    fn channel_mismatch_rejected() {
        let mut rng = StdRng::seed_from_u64(3);
        let conv = Conv3d::new(2, 3, [1, 1, 1], [1, 1, 1], 1, false, &mut rng).unwrap();
        let bn = BatchNorm::new(4);
        assert!(matches!(
            fuse_conv_bn(&conv, &bn),
            Err(AcceleratorError::Shape(_))
        ));
    }

    #[test]
    fn spatial_decomposition_equivalence() {
        let mut rng = StdRng::seed_from_u64(4);
        let conv = Conv3d::new(4, 6, [1, 3, 3], [1, 1, 1], 1, true, &mut rng).unwrap();
        let node = Node::Conv3d(conv.clone());
        let (rewritten, _) = decompose_spatial_conv(&node).unwrap();
        for _ in 0..10 {
            let x = Value::single(random_tensor(&[1, 4, 4, 16, 16], &mut rng));
            let a = node.forward(&x).unwrap().into_tensor().unwrap();
            let b = rewritten.forward(&x).unwrap().into_tensor().unwrap();
            assert_eq!(a.shape(), b.shape());
            assert!(max_abs_diff(&a, &b) <= 1e-5);
        }
        // Degenerate time: T=1 is a plain 2D conv.
        let x = Value::single(random_tensor(&[1, 4, 1, 8, 8], &mut rng));
        let a = node.forward(&x).unwrap().into_tensor().unwrap();
        let b = rewritten.forward(&x).unwrap().into_tensor().unwrap();
        assert!(max_abs_diff(&a, &b) <= 1e-5);
    }

    #[test]
    fn temporal_decomposition_equivalence() {
        let mut rng = StdRng::seed_from_u64(5);
        for groups in [1usize, 8] {
            let conv = Conv3d::new(8, 8, [3, 1, 1], [1, 1, 1], groups, false, &mut rng).unwrap();
            let node = Node::Conv3d(conv);
            let (rewritten, _) = decompose_temporal_conv(&node).unwrap();
            for _ in 0..10 {
                let x = Value::single(random_tensor(&[1, 8, 8, 4, 4], &mut rng));
                let a = node.forward(&x).unwrap().into_tensor().unwrap();
                let b = rewritten.forward(&x).unwrap().into_tensor().unwrap();
                assert!(max_abs_diff(&a, &b) <= 1e-5);
            }
        }
        // k = 1 is a pointwise conv and still matches.
        let conv = Conv3d::new(3, 5, [1, 1, 1], [1, 1, 1], 1, false, &mut rng).unwrap();
        let node = Node::Conv3d(conv);
        let (rewritten, _) = decompose_temporal_conv(&node).unwrap();
        let x = Value::single(random_tensor(&[1, 3, 2, 3, 3], &mut rng));
        let a = node.forward(&x).unwrap().into_tensor().unwrap();
        let b = rewritten.forward(&x).unwrap().into_tensor().unwrap();
        assert!(max_abs_diff(&a, &b) <= 1e-5);
    }

    #[test]
    fn match_errors_on_wrong_kernels() {
        let mut rng = StdRng::seed_from_u64(6);
        let conv = Conv3d::new(2, 2, [3, 3, 3], [1, 1, 1], 1, false, &mut rng).unwrap();
        assert!(matches!(
            decompose_spatial_conv(&Node::Conv3d(conv.clone())),
            Err(AcceleratorError::Match(_))
        ));
        assert!(matches!(
            decompose_temporal_conv(&Node::Conv3d(conv)),
            Err(AcceleratorError::Match(_))
        ));
    }
}
