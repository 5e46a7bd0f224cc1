//! Analytic gradients for the block primitives, used by numerical checks.
//!
//! Supports the node kinds that standard residual towers are made of: conv,
//! frozen batch norm, relu/identity activations, linear, global average
//! pool, sequential, and residual. Composite nodes (SE, fusion, ROI) are out
//! of scope for gradient verification and report `Unsupported`.

use super::nn::{Activation, ArrayKind, BatchNorm, Conv3d, Linear, ModelError, Node};
use crate::tensor::Tensor;
use ndarray::{s, Array2, ArrayD, Axis, Ix2, Ix5, IxDyn};
use std::collections::BTreeMap;

pub type GradMap = BTreeMap<String, Tensor>;

fn unsupported(what: &str) -> ModelError {
    ModelError::Trace(format!("gradients unsupported for {what} nodes"))
}

/// Computes `d loss / d params` and `d loss / d input` for a scalar loss
/// whose gradient at the output is `grad_out`, re-running the forward pass
/// internally to materialize intermediate activations.
pub fn backward(
    node: &Node,
    prefix: &str,
    input: &Tensor,
    grad_out: &Tensor,
    grads: &mut GradMap,
) -> Result<Tensor, ModelError> {
    let join = |name: &str| {
        if prefix.is_empty() {
            name.to_string()
        } else {
            format!("{prefix}.{name}")
        }
    };
    match node {
        Node::Conv3d(conv) => {
            let (dw, db, dx) = conv_backward(conv, input, grad_out)?;
            grads.insert(join("weight"), dw);
            if let Some(db) = db {
                grads.insert(join("bias"), db);
            }
            Ok(dx)
        }
        Node::BatchNorm(bn) => Ok(bn_backward(bn, input, grad_out, prefix, grads)?),
        Node::Activation(Activation::Relu) => {
            let fwd_in = input;
            let mut dx = grad_out.clone();
            dx.zip_mut_with(fwd_in, |g, &x| {
                if x <= 0.0 {
                    *g = 0.0;
                }
            });
            Ok(dx)
        }
        Node::Activation(Activation::Identity) | Node::Dropout(_) => Ok(grad_out.clone()),
        Node::Activation(_) => Err(unsupported("non-relu activation")),
        Node::Linear(lin) => {
            let (dw, db, dx) = linear_backward(lin, input, grad_out)?;
            grads.insert(join("weight"), dw);
            if let Some(db) = db {
                grads.insert(join("bias"), db);
            }
            Ok(dx)
        }
        Node::GlobalAvgPool => {
            let v = input.view().into_dimensionality::<Ix5>().unwrap();
            let (b, c, t, h, w) = v.dim();
            let g = grad_out.view().into_dimensionality::<Ix2>().unwrap();
            let denom = (t * h * w) as f64;
            let mut dx = ArrayD::zeros(IxDyn(&[b, c, t, h, w]));
            for bi in 0..b {
                for ci in 0..c {
                    let gv = g[[bi, ci]] / denom;
                    dx.slice_mut(s![bi, ci, .., .., ..]).fill(gv);
                }
            }
            Ok(dx)
        }
        Node::Sequential(children) => {
            // Forward to cache each child's input, then walk backwards.
            let mut inputs: Vec<Tensor> = Vec::with_capacity(children.len());
            let mut cur = input.clone();
            for (_, child) in children {
                inputs.push(cur.clone());
                cur = child
                    .forward(&super::nn::Value::single(cur))?
                    .into_tensor()?;
            }
            let mut g = grad_out.clone();
            for ((name, child), child_in) in children.iter().zip(&inputs).rev() {
                let p = join(name);
                g = backward(child, &p, child_in, &g, grads)?;
            }
            Ok(g)
        }
        Node::Residual {
            main,
            shortcut,
            post_activation,
        } => {
            let branch = main
                .forward(&super::nn::Value::single(input.clone()))?
                .into_tensor()?;
            let skip = match shortcut {
                Some(sc) => sc
                    .forward(&super::nn::Value::single(input.clone()))?
                    .into_tensor()?,
                None => input.clone(),
            };
            let summed = &branch + &skip;
            let g_sum = match post_activation {
                Activation::Identity => grad_out.clone(),
                Activation::Relu => {
                    let mut g = grad_out.clone();
                    g.zip_mut_with(&summed, |gv, &x| {
                        if x <= 0.0 {
                            *gv = 0.0;
                        }
                    });
                    g
                }
                _ => return Err(unsupported("non-relu residual activation")),
            };
            let g_main = backward(main, prefix, input, &g_sum, grads)?;
            let g_skip = match shortcut {
                Some(sc) => backward(sc, prefix, input, &g_sum, grads)?,
                None => g_sum,
            };
            Ok(&g_main + &g_skip)
        }
        Node::FramewiseConv2d(_) | Node::TemporalConv1d(_) | Node::QuantConv3d(_) => {
            Err(unsupported("rewritten/quantized conv"))
        }
        Node::Pool(_) => Err(unsupported("fixed-window pool")),
        other => Err(unsupported(&format!("{other:?}"))),
    }
}

fn conv_backward(
    conv: &Conv3d,
    input: &Tensor,
    grad_out: &Tensor,
) -> Result<(Tensor, Option<Tensor>, Tensor), ModelError> {
    let x = input.view().into_dimensionality::<Ix5>().unwrap();
    let g = grad_out.view().into_dimensionality::<Ix5>().unwrap();
    let (b, cin, t, h, w) = x.dim();
    let (_, cout, to, ho, wo) = g.dim();
    let k = conv.kernel();
    let cg = cin / conv.groups;
    let cog = cout / conv.groups;
    let wv = conv.weight.view().into_dimensionality::<Ix5>().unwrap();

    let mut dw = ArrayD::<f64>::zeros(IxDyn(conv.weight.shape()));
    let mut dx = ArrayD::<f64>::zeros(IxDyn(&[b, cin, t, h, w]));
    let mut db = conv
        .bias
        .as_ref()
        .map(|_| ArrayD::<f64>::zeros(IxDyn(&[cout])));

    for bi in 0..b {
        for oc in 0..cout {
            let group = oc / cog;
            for ot in 0..to {
                for oh in 0..ho {
                    for ow in 0..wo {
                        let gv = g[[bi, oc, ot, oh, ow]];
                        if let Some(db) = db.as_mut() {
                            db[[oc]] += gv;
                        }
                        for ic in 0..cg {
                            let xc = group * cg + ic;
                            for kt in 0..k[0] {
                                let it = (ot * conv.stride[0] + kt * conv.dilation[0]) as isize
                                    - conv.padding[0] as isize;
                                if it < 0 || it >= t as isize {
                                    continue;
                                }
                                for kh in 0..k[1] {
                                    let ih = (oh * conv.stride[1] + kh * conv.dilation[1])
                                        as isize
                                        - conv.padding[1] as isize;
                                    if ih < 0 || ih >= h as isize {
                                        continue;
                                    }
                                    for kw in 0..k[2] {
                                        let iw = (ow * conv.stride[2]
                                            + kw * conv.dilation[2])
                                            as isize
                                            - conv.padding[2] as isize;
                                        if iw < 0 || iw >= w as isize {
                                            continue;
                                        }
                                        let (it, ih, iw) =
                                            (it as usize, ih as usize, iw as usize);
                                        dw[[oc, ic, kt, kh, kw]] +=
                                            gv * x[[bi, xc, it, ih, iw]];
                                        dx[[bi, xc, it, ih, iw]] +=
                                            gv * wv[[oc, ic, kt, kh, kw]];
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    Ok((dw, db, dx))
}

fn bn_backward(
    bn: &BatchNorm,
    input: &Tensor,
    grad_out: &Tensor,
    prefix: &str,
    grads: &mut GradMap,
) -> Result<Tensor, ModelError> {
    // Inference-mode norm is a per-channel affine map.
    let join = |name: &str| {
        if prefix.is_empty() {
            name.to_string()
        } else {
            format!("{prefix}.{name}")
        }
    };
    let c = bn.channels();
    let (scale, _) = bn.affine();
    let mut dgamma = ArrayD::<f64>::zeros(IxDyn(&[c]));
    let mut dbeta = ArrayD::<f64>::zeros(IxDyn(&[c]));
    let mut dx = grad_out.clone();
    for ci in 0..c {
        let inv_std = 1.0 / (bn.running_var[[ci]] + bn.eps).sqrt();
        let mean = bn.running_mean[[ci]];
        let x_lane = input.index_axis(Axis(1), ci);
        let g_lane = grad_out.index_axis(Axis(1), ci);
        let mut dg = 0.0;
        let mut dbta = 0.0;
        for (&xv, &gv) in x_lane.iter().zip(g_lane.iter()) {
            dg += gv * (xv - mean) * inv_std;
            dbta += gv;
        }
        dgamma[[ci]] = dg;
        dbeta[[ci]] = dbta;
        dx.index_axis_mut(Axis(1), ci)
            .mapv_inplace(|g| g * scale[ci]);
    }
    grads.insert(join("weight"), dgamma);
    grads.insert(join("bias"), dbeta);
    Ok(dx)
}

fn linear_backward(
    lin: &Linear,
    input: &Tensor,
    grad_out: &Tensor,
) -> Result<(Tensor, Option<Tensor>, Tensor), ModelError> {
    let d_in = lin.in_features();
    let d_out = lin.out_features();
    let rows: usize = input.len() / d_in;
    let x = input
        .view()
        .into_shape_with_order((rows, d_in))
        .unwrap();
    let g = grad_out
        .view()
        .into_shape_with_order((rows, d_out))
        .unwrap();
    let w = lin.weight.view().into_dimensionality::<Ix2>().unwrap();

    let mut dw = Array2::<f64>::zeros((d_out, d_in));
    ndarray::linalg::general_mat_mul(1.0, &g.t(), &x, 0.0, &mut dw);
    let db = lin.bias.as_ref().map(|_| {
        let mut db = ArrayD::<f64>::zeros(IxDyn(&[d_out]));
        for r in 0..rows {
            for j in 0..d_out {
                db[[j]] += g[[r, j]];
            }
        }
        db
    });
    let mut dx = Array2::<f64>::zeros((rows, d_in));
    ndarray::linalg::general_mat_mul(1.0, &g, &w, 0.0, &mut dx);
    Ok((
        dw.into_dyn(),
        db,
        dx.into_shape_with_order(IxDyn(input.shape())).unwrap(),
    ))
}

/// Scalar loss `sum((y - target)^2)` and its gradient at `y`.
pub fn squared_error_loss(y: &Tensor, target: &Tensor) -> (f64, Tensor) {
    let mut loss = 0.0;
    let mut grad = y.clone();
    grad.zip_mut_with(target, |g, &t| {
        let d = *g - t;
        loss += d * d;
        *g = 2.0 * d;
    });
    (loss, grad)
}

/// Loss of `model` at `input` against `target` under squared error.
pub fn loss_of(model: &Node, input: &Tensor, target: &Tensor) -> Result<f64, ModelError> {
    let y = model
        .forward(&super::nn::Value::single(input.clone()))?
        .into_tensor()?;
    Ok(squared_error_loss(&y, target).0)
}

/// Analytic parameter gradients of the squared-error loss.
pub fn param_gradients(
    model: &Node,
    input: &Tensor,
    target: &Tensor,
) -> Result<GradMap, ModelError> {
    let y = model
        .forward(&super::nn::Value::single(input.clone()))?
        .into_tensor()?;
    let (_, grad_y) = squared_error_loss(&y, target);
    let mut grads = GradMap::new();
    backward(model, "", input, &grad_y, &mut grads)?;
    Ok(grads)
}

/// Central finite differences of the loss wrt every learnable scalar.
pub fn numerical_gradients(
    model: &Node,
    input: &Tensor,
    target: &Tensor,
    epsilon: f64,
) -> Result<GradMap, ModelError> {
    let mut names: Vec<(String, usize)> = Vec::new();
    model.visit_arrays("", &mut |name, kind, arr| {
        if kind == ArrayKind::Param {
            names.push((name, arr.len()));
        }
    });
    let mut grads = GradMap::new();
    for (name, len) in names {
        let mut g = vec![0.0; len];
        for i in 0..len {
            let mut plus = model.clone();
            perturb(&mut plus, &name, i, epsilon);
            let mut minus = model.clone();
            perturb(&mut minus, &name, i, -epsilon);
            let lp = loss_of(&plus, input, target)?;
            let lm = loss_of(&minus, input, target)?;
            g[i] = (lp - lm) / (2.0 * epsilon);
        }
        let shape = {
            let mut s: Option<Vec<usize>> = None;
            model.visit_arrays("", &mut |n, _, arr| {
                if n == name {
                    s = Some(arr.shape().to_vec());
                }
            });
            s.unwrap()
        };
        grads.insert(name, ArrayD::from_shape_vec(IxDyn(&shape), g).unwrap());
    }
    Ok(grads)
}

fn perturb(model: &mut Node, name: &str, index: usize, delta: f64) {
    model.visit_arrays_mut("", &mut |n, _, arr| {
        if n == name {
            arr.as_slice_mut().unwrap()[index] += delta;
        }
    });
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    #[test]
    fn linear_gradcheck() {
        let mut rng = StdRng::seed_from_u64(0);
        let model = Node::seq(vec![(
            "proj",
            Node::Linear(Linear::new(4, 3, &mut rng)),
        )]);
        let x = ArrayD::from_shape_fn(IxDyn(&[2, 4]), |_| rng.random::<f64>() - 0.5);
        let t = ArrayD::from_shape_fn(IxDyn(&[2, 3]), |_| rng.random::<f64>() - 0.5);
        let analytic = param_gradients(&model, &x, &t).unwrap();
        let numeric = numerical_gradients(&model, &x, &t, 1e-6).unwrap();
        for (name, a) in &analytic {
            let n = &numeric[name];
            let denom = n.iter().map(|v| v.abs()).fold(1e-8, f64::max);
            let max_rel = a
                .iter()
                .zip(n.iter())
                .map(|(x, y)| (x - y).abs() / denom)
                .fold(0.0, f64::max);
            assert!(max_rel < 1e-6, "{name}: rel err {max_rel}");
        }
    }
}
