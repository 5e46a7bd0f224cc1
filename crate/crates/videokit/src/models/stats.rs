//! Parameter and multiply-add counters for module trees.

use super::nn::{ArrayKind, ModelError, Node, Trace};

/// Sum of all learnable scalars in the tree.
pub fn count_params(model: &Node) -> usize {
    let mut total = 0usize;
    model.visit_arrays("", &mut |_, kind, arr| {
        if kind == ArrayKind::Param {
            total += arr.len();
        }
    });
    total
}

/// Input description for a FLOP trace: one shape per pathway, plus the box
/// count a detection head will see.
#[derive(Debug, Clone)]
pub struct TraceInput {
    pub shapes: Vec<Vec<usize>>,
    pub num_boxes: usize,
}

impl TraceInput {
    pub fn single(shape: Vec<usize>) -> Self {
        TraceInput {
            shapes: vec![shape],
            num_boxes: 0,
        }
    }

    pub fn pathways(shapes: Vec<Vec<usize>>) -> Self {
        TraceInput {
            shapes,
            num_boxes: 0,
        }
    }

    pub fn with_boxes(mut self, n: usize) -> Self {
        self.num_boxes = n;
        self
    }
}

/// Multiply-add count of one forward pass at the given input shape.
///
/// Counts convolutions (`C_out * C_in / groups * prod(k) * prod(spatial_out)`)
/// and linear layers (`in * out` per row) over a shape trace; normalization,
/// activations, and pooling are free. The `x3x10` crop/clip factors quoted in
/// benchmark tables are reporting conventions applied by the zoo CLI, never
/// by this counter.
pub fn count_flops(model: &Node, input: &TraceInput) -> Result<u128, ModelError> {
    let trace = model.trace(&Trace {
        shapes: input.shapes.clone(),
        madds: 0,
        num_boxes: input.num_boxes,
    })?;
    Ok(trace.madds)
}

/// Output shapes of a forward pass at the given input shape.
pub fn output_shapes(model: &Node, input: &TraceInput) -> Result<Vec<Vec<usize>>, ModelError> {
    let trace = model.trace(&Trace {
        shapes: input.shapes.clone(),
        madds: 0,
        num_boxes: input.num_boxes,
    })?;
    Ok(trace.shapes)
}

/// Shapes of every intermediate tensor, used by the injection-transparency
/// audit (swapping norm/activation constructors must not move any shape).
pub fn shape_audit(model: &Node, input: &TraceInput) -> Result<Vec<Vec<Vec<usize>>>, ModelError> {
    fn walk(
        node: &Node,
        t: &Trace,
        log: &mut Vec<Vec<Vec<usize>>>,
    ) -> Result<Trace, ModelError> {
        match node {
            Node::Sequential(children) => {
                let mut cur = t.clone();
                for (_, child) in children {
                    cur = walk(child, &cur, log)?;
                }
                Ok(cur)
            }
            other => {
                let out = other.trace(t)?;
                log.push(out.shapes.clone());
                Ok(out)
            }
        }
    }
    let mut log = Vec::new();
    walk(
        model,
        &Trace {
            shapes: input.shapes.clone(),
            madds: 0,
            num_boxes: input.num_boxes,
        },
        &mut log,
    )?;
    Ok(log)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::nn::Linear;
    use rand::rngs::StdRng;
    use rand::SeedableRng;

    #[test]
    fn linear_param_count() {
        let mut rng = StdRng::seed_from_u64(0);
        let model = Node::Linear(Linear::new(10, 5, &mut rng));
        assert_eq!(count_params(&model), 55);
    }

    #[test]
    fn conv_param_count_closed_form() {
        let mut rng = StdRng::seed_from_u64(0);
        let conv =
            crate::models::nn::Conv3d::new(3, 8, [3, 3, 3], [1, 1, 1], 1, true, &mut rng).unwrap();
        // 8 * 3 * 27 + 8
        assert_eq!(count_params(&Node::Conv3d(conv)), 656);
    }
}
