//! Int8 weight quantization for converted models.

use super::Result;
use crate::models::nn::{Node, QuantConv3d};
use crate::tensor::Tensor;
use ndarray::s;
use std::collections::BTreeMap;

/// A weight-quantized model plus the per-layer scale vectors.
#[derive(Debug, Clone)]
pub struct QuantizedModel {
    pub model: Node,
    /// `layer path -> per-output-channel scales`.
    pub scales: BTreeMap<String, Vec<f64>>,
}

/// Quantizes every conv kernel to int8 with per-output-channel symmetric
/// scales (`scale_c = max |W_c| / 127`; all-zero channels get scale 1).
///
/// Weights only: activation quantization needs calibration infrastructure
/// that is out of scope, and classifier linears stay in floating point, so
/// this is not full int8 inference parity with an on-device stack. The
/// dequantized weights satisfy `|W - deq(Q)| <= scale_c / 2` elementwise and
/// drive the forward pass.
pub fn quantize_weights_int8(model: &Node) -> Result<QuantizedModel> {
    let mut out = model.clone();
    let mut scales = BTreeMap::new();
    quantize_node(&mut out, "", &mut scales);
    Ok(QuantizedModel { model: out, scales })
}

fn quantize_conv(weight: &Tensor) -> (Vec<i8>, Vec<f64>, Tensor) {
    let cout = weight.shape()[0];
    let mut scales = vec![1.0f64; cout];
    for c in 0..cout {
        let max_abs = weight
            .slice(s![c, .., .., .., ..])
            .iter()
            .fold(0.0f64, |m, &v| m.max(v.abs()));
        if max_abs > 0.0 {
            scales[c] = max_abs / 127.0;
        }
    }
    let per_channel: usize = weight.len() / cout;
    let mut q = Vec::with_capacity(weight.len());
    let mut deq = weight.clone();
    let flat = weight.as_slice().expect("conv weights are contiguous");
    let deq_flat = deq.as_slice_mut().unwrap();
    for (i, &w) in flat.iter().enumerate() {
        let c = i / per_channel;
        let qi = (w / scales[c]).round().clamp(-127.0, 127.0) as i8;
        q.push(qi);
        deq_flat[i] = qi as f64 * scales[c];
    }
    (q, scales, deq)
}

fn quantize_node(node: &mut Node, path: &str, scales: &mut BTreeMap<String, Vec<f64>>) {
    let join = |name: &str| {
        if path.is_empty() {
            name.to_string()
        } else {
            format!("{path}.{name}")
        }
    };
    match node {
        Node::Conv3d(c) | Node::FramewiseConv2d(c) | Node::TemporalConv1d(c) => {
            let (q, sc, deq) = quantize_conv(&c.weight);
            scales.insert(path.to_string(), sc.clone());
            let mut inner = c.clone();
            inner.weight = deq;
            *node = Node::QuantConv3d(QuantConv3d {
                q_weight: q,
                scales: ndarray::ArrayD::from_shape_vec(ndarray::IxDyn(&[sc.len()]), sc).unwrap(),
                inner,
            });
        }
        Node::Sequential(children) | Node::Parallel(children) => {
            for (name, child) in children.iter_mut() {
                let p = join(name);
                quantize_node(child, &p, scales);
            }
        }
        Node::Residual { main, shortcut, .. } => {
            quantize_node(main, path, scales);
            if let Some(sc) = shortcut {
                quantize_node(sc, path, scales);
            }
        }
        Node::FuseFastToSlow { conv, .. } => {
            let (q, sc, deq) = quantize_conv(&conv.weight);
            scales.insert(join("conv"), sc.clone());
            let mut inner = conv.clone();
            inner.weight = deq;
            // Keep the fusion node intact; only its kernel is quantized.
            *conv = inner;
            let _ = q;
        }
        _ => {}
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::nn::{Conv3d, Value};
    use ndarray::{ArrayD, IxDyn};
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    #[test]
    fn lattice_weights_round_trip_exactly() {
        let mut rng = StdRng::seed_from_u64(0);
        let mut conv = Conv3d::new(2, 2, [1, 1, 1], [1, 1, 1], 1, false, &mut rng).unwrap();
        // Integer multiples of a common step, with |max| = 127 * step in each
        // output channel so the per-channel scale is exactly `step`.
        let step = 0.013;
        let vals = [127.0, 3.0, -127.0, 55.0];
        for (i, v) in conv.weight.iter_mut().enumerate() {
            *v = vals[i % vals.len()] * step;
        }
        let (_, scales, deq) = quantize_conv(&conv.weight);
        assert!((scales[0] - step).abs() < 1e-12);
        assert!(crate::tensor::max_abs_diff(&deq, &conv.weight) < 1e-12);
    }

    #[test]
    fn rounding_bound_holds() {
        let mut rng = StdRng::seed_from_u64(1);
        let w = ArrayD::from_shape_fn(IxDyn(&[4, 3, 3, 3, 3]), |_| rng.random::<f64>() - 0.5);
        let (_, scales, deq) = quantize_conv(&w);
        let per_channel = w.len() / 4;
        for (i, (a, b)) in w.iter().zip(deq.iter()).enumerate() {
            let c = i / per_channel;
            assert!((a - b).abs() <= scales[c] / 2.0 + 1e-15);
        }
    }

    #[test]
    fn all_zero_channel_gets_unit_scale() {
        let w = ArrayD::zeros(IxDyn(&[1, 2, 1, 1, 1]));
        let (_, scales, deq) = quantize_conv(&w);
        assert_eq!(scales[0], 1.0);
        assert!(deq.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn quantized_model_runs_and_registers_scales() {
        let mut rng = StdRng::seed_from_u64(2);
        let conv = Conv3d::new(3, 4, [1, 3, 3], [1, 1, 1], 1, false, &mut rng).unwrap();
        let model = Node::seq(vec![("conv", Node::Conv3d(conv))]);
        let q = quantize_weights_int8(&model).unwrap();
        assert!(q.scales.contains_key("conv"));
        let x = Value::single(ArrayD::from_shape_fn(IxDyn(&[1, 3, 2, 6, 6]), |_| {
            rng.random::<f64>()
        }));
        let a = model.forward(&x).unwrap().into_tensor().unwrap();
        let b = q.model.forward(&x).unwrap().into_tensor().unwrap();
        // Drift stays small on a single layer.
        assert!(crate::tensor::max_abs_diff(&a, &b) < 0.05);
    }
}
