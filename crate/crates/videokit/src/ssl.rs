//! Self-supervised objective components: contrastive and bootstrap losses
//! plus momentum-encoder machinery.
//!
//! Only the per-step math lives here; training schedules (momentum
//! annealing, multi-crop) belong to the host framework. Defaults quoted in
//! the literature (tau = 0.1, m = 0.996, K = 65536) are plain arguments —
//! nothing below relies on them.

use crate::tensor::Tensor;
use ndarray::{s, Array2};
use std::collections::BTreeMap;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SslError {
    #[error("config error: {0}")]
    Config(String),
    #[error("row {row} is not L2-normalized (norm = {norm})")]
    Norm { row: usize, norm: f64 },
    #[error("parameter key mismatch: {0}")]
    Key(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
}

pub type Result<T> = std::result::Result<T, SslError>;

/// A batch of embeddings, rows of dimension D.
#[derive(Debug, Clone)]
pub struct EmbeddingBatch {
    z: Array2<f64>,
    normalized: bool,
}

impl EmbeddingBatch {
    /// Wraps raw embeddings without normalization claims.
    pub fn raw(z: Array2<f64>) -> Self {
        EmbeddingBatch {
            z,
            normalized: false,
        }
    }

    /// Wraps embeddings that must already be unit rows (checked to 1e-5).
    pub fn normalized(z: Array2<f64>) -> Result<Self> {
        for (i, row) in z.rows().into_iter().enumerate() {
            let norm = row.dot(&row).sqrt();
            if (norm - 1.0).abs() > 1e-5 {
                return Err(SslError::Norm { row: i, norm });
            }
        }
        Ok(EmbeddingBatch {
            z,
            normalized: true,
        })
    }

    /// L2-normalizes rows (zero rows are rejected).
    pub fn normalize(mut z: Array2<f64>) -> Result<Self> {
        for (i, mut row) in z.rows_mut().into_iter().enumerate() {
            let norm = row.dot(&row).sqrt();
            if norm == 0.0 {
                return Err(SslError::Norm { row: i, norm });
            }
            row.mapv_inplace(|v| v / norm);
        }
        Ok(EmbeddingBatch {
            z,
            normalized: true,
        })
    }

    pub fn z(&self) -> &Array2<f64> {
        &self.z
    }

    pub fn batch_size(&self) -> usize {
        self.z.nrows()
    }

    pub fn dim(&self) -> usize {
        self.z.ncols()
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }
}

/// Shared similarity/cross-entropy core: mean over rows of
/// `-log softmax(logits / tau)[positive]`, with masked entries excluded from
/// the candidate set.
fn contrastive_cross_entropy(
    logits: &Array2<f64>,
    positives: &[usize],
    masked: impl Fn(usize, usize) -> bool,
    temperature: f64,
) -> f64 {
    let n = logits.nrows();
    let mut total = 0.0;
    for i in 0..n {
        let row = logits.row(i);
        let mut max = f64::NEG_INFINITY;
        for j in 0..row.len() {
            if !masked(i, j) {
                max = max.max(row[j] / temperature);
            }
        }
        let mut denom = 0.0;
        for j in 0..row.len() {
            if !masked(i, j) {
                denom += (row[j] / temperature - max).exp();
            }
        }
        let pos = row[positives[i]] / temperature - max;
        total += denom.ln() - pos;
    }
    total / n as f64
}

/// Symmetric in-batch contrastive loss over the 2B x 2B cosine-similarity
/// matrix (self-similarity masked), averaged over all 2B anchors. Row i of
/// `z1` and row i of `z2` form the positive pair.
pub fn info_nce_loss(z1: &EmbeddingBatch, z2: &EmbeddingBatch, temperature: f64) -> Result<f64> {
    if temperature <= 0.0 {
        return Err(SslError::Config(format!(
            "temperature must be > 0, got {temperature}"
        )));
    }
    if !z1.is_normalized() || !z2.is_normalized() {
        return Err(SslError::Config(
            "info_nce_loss requires L2-normalized embeddings".into(),
        ));
    }
    let b = z1.batch_size();
    if b < 2 {
        return Err(SslError::Config("batch size must be >= 2".into()));
    }
    if z1.z().dim() != z2.z().dim() {
        return Err(SslError::Shape(format!(
            "z1 is {:?} but z2 is {:?}",
            z1.z().dim(),
            z2.z().dim()
        )));
    }
    let d = z1.dim();
    let mut all = Array2::<f64>::zeros((2 * b, d));
    all.slice_mut(s![..b, ..]).assign(z1.z());
    all.slice_mut(s![b.., ..]).assign(z2.z());
    let sims = all.dot(&all.t());
    let positives: Vec<usize> = (0..2 * b).map(|i| (i + b) % (2 * b)).collect();
    Ok(contrastive_cross_entropy(
        &sims,
        &positives,
        |i, j| i == j,
        temperature,
    ))
}

/// One-directional MoCo-style loss: each query against its positive key and
/// the queue of negatives, routed through the same cross-entropy core.
pub fn moco_nce_loss(
    query: &EmbeddingBatch,
    key: &EmbeddingBatch,
    queue: &FeatureQueue,
    temperature: f64,
) -> Result<f64> {
    if temperature <= 0.0 {
        return Err(SslError::Config(format!(
            "temperature must be > 0, got {temperature}"
        )));
    }
    if !query.is_normalized() || !key.is_normalized() {
        return Err(SslError::Config(
            "moco_nce_loss requires L2-normalized embeddings".into(),
        ));
    }
    let b = query.batch_size();
    if key.batch_size() != b {
        return Err(SslError::Shape("query/key batch mismatch".into()));
    }
    let negatives = queue.snapshot();
    let n_neg = negatives.nrows();
    let mut logits = Array2::<f64>::zeros((b, 1 + n_neg));
    for i in 0..b {
        logits[[i, 0]] = query.z().row(i).dot(&key.z().row(i));
        for j in 0..n_neg {
            logits[[i, 1 + j]] = query.z().row(i).dot(&negatives.row(j));
        }
    }
    let positives = vec![0usize; b];
    Ok(contrastive_cross_entropy(
        &logits,
        &positives,
        |_, _| false,
        temperature,
    ))
}

/// Bootstrap loss: mean over the batch of `2 - 2 cos(p_i, z_i)`.
///
/// The caller guarantees no gradient flows into `z` (stop-gradient is the
/// training loop's contract, not enforceable here).
pub fn byol_loss(predicted: &Array2<f64>, target: &Array2<f64>) -> Result<f64> {
    if predicted.dim() != target.dim() {
        return Err(SslError::Shape(format!(
            "predicted is {:?} but target is {:?}",
            predicted.dim(),
            target.dim()
        )));
    }
    let mut total = 0.0;
    for (i, (p, z)) in predicted.rows().into_iter().zip(target.rows()).enumerate() {
        let pn = p.dot(&p).sqrt();
        let zn = z.dot(&z).sqrt();
        if pn == 0.0 || zn == 0.0 {
            return Err(SslError::Norm { row: i, norm: 0.0 });
        }
        total += 2.0 - 2.0 * p.dot(&z) / (pn * zn);
    }
    Ok(total / predicted.nrows() as f64)
}

/// Parameter maps used by the momentum update.
pub type ParamMap = BTreeMap<String, Tensor>;

/// Exponential-moving-average update of a target (momentum) encoder:
/// `target <- m * target + (1 - m) * online`, elementwise per name.
pub fn momentum_update(target: &mut ParamMap, online: &ParamMap, m: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&m) {
        return Err(SslError::Config(format!(
            "momentum must be in [0, 1], got {m}"
        )));
    }
    if target.len() != online.len() {
        return Err(SslError::Key(format!(
            "target has {} params, online has {}",
            target.len(),
            online.len()
        )));
    }
    for (name, tgt) in target.iter_mut() {
        let src = online
            .get(name)
            .ok_or_else(|| SslError::Key(format!("online params missing {name:?}")))?;
        if src.shape() != tgt.shape() {
            return Err(SslError::Key(format!(
                "shape mismatch for {name:?}: {:?} vs {:?}",
                tgt.shape(),
                src.shape()
            )));
        }
        tgt.zip_mut_with(src, |t, &o| *t = m * *t + (1.0 - m) * o);
    }
    Ok(())
}

/// Fixed-capacity FIFO ring of feature rows, the negative store for the MoCo
/// variant. Single-writer; readers take consistent snapshots by copy.
#[derive(Debug, Clone)]
pub struct FeatureQueue {
    buffer: Array2<f64>,
    head: usize,
    filled: usize,
}

impl FeatureQueue {
    pub fn new(capacity: usize, dim: usize) -> Result<Self> {
        if capacity == 0 || dim == 0 {
            return Err(SslError::Config(
                "queue capacity and dim must be > 0".into(),
            ));
        }
        Ok(FeatureQueue {
            buffer: Array2::zeros((capacity, dim)),
            head: 0,
            filled: 0,
        })
    }

    pub fn capacity(&self) -> usize {
        self.buffer.nrows()
    }

    pub fn dim(&self) -> usize {
        self.buffer.ncols()
    }

    pub fn filled(&self) -> usize {
        self.filled
    }

    /// Enqueues a batch of rows, overwriting the oldest entries on wrap.
    pub fn enqueue(&mut self, batch: &Array2<f64>) -> Result<()> {
        let b = batch.nrows();
        let k = self.capacity();
        if b > k {
            return Err(SslError::Config(format!(
                "cannot enqueue {b} rows into a queue of capacity {k}"
            )));
        }
        if batch.ncols() != self.dim() {
            return Err(SslError::Shape(format!(
                "queue dim is {}, batch dim is {}",
                self.dim(),
                batch.ncols()
            )));
        }
        for row in batch.rows() {
            self.buffer.row_mut(self.head).assign(&row);
            self.head = (self.head + 1) % k;
        }
        self.filled = (self.filled + b).min(k);
        Ok(())
    }

    /// Filled rows in FIFO order (oldest first).
    pub fn snapshot(&self) -> Array2<f64> {
        let k = self.capacity();
        let mut out = Array2::zeros((self.filled, self.dim()));
        let start = (self.head + k - self.filled) % k;
        for i in 0..self.filled {
            out.row_mut(i).assign(&self.buffer.row((start + i) % k));
        }
        out
    }
}

/// Brute-force oracle for the symmetric loss: materializes every pairwise
/// similarity and runs a plain masked softmax cross-entropy per anchor. Kept
/// independent of the implementation path so the two can disagree.
pub fn info_nce_brute_force(z1: &Array2<f64>, z2: &Array2<f64>, temperature: f64) -> f64 {
    let b = z1.nrows();
    let d = z1.ncols();
    let n = 2 * b;
    let mut all = Array2::<f64>::zeros((n, d));
    for i in 0..b {
        all.row_mut(i).assign(&z1.row(i));
        all.row_mut(b + i).assign(&z2.row(i));
    }
    let mut total = 0.0;
    for i in 0..n {
        let pos = (i + b) % n;
        let mut sims: Vec<(usize, f64)> = Vec::new();
        for j in 0..n {
            if j == i {
                continue;
            }
            sims.push((j, all.row(i).dot(&all.row(j)) / temperature));
        }
        let max = sims.iter().map(|&(_, v)| v).fold(f64::NEG_INFINITY, f64::max);
        let denom: f64 = sims.iter().map(|&(_, v)| (v - max).exp()).sum();
        let pos_val = sims.iter().find(|&&(j, _)| j == pos).unwrap().1;
        total += -((pos_val - max) - denom.ln());
    }
    total / n as f64
}

/// Unit-norm rows from raw data.
pub fn l2_normalize_rows(z: &Array2<f64>) -> Array2<f64> {
    let mut out = z.clone();
    for mut row in out.rows_mut() {
        let norm = row.dot(&row).sqrt();
        if norm > 0.0 {
            row.mapv_inplace(|v| v / norm);
        }
    }
    out
}

/// Euclidean distance between two parameter maps (shared keys), used by the
/// contraction property of the momentum update.
pub fn param_distance(a: &ParamMap, b: &ParamMap) -> f64 {
    let mut sq = 0.0;
    for (name, ta) in a {
        if let Some(tb) = b.get(name) {
            sq += ta
                .iter()
                .zip(tb.iter())
                .map(|(x, y)| (x - y) * (x - y))
                .sum::<f64>();
        }
    }
    sq.sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn identical_pairs_orthogonal_across() {
        // B=2, pairs identical, cross-pair orthogonal, tau=1:
        // loss = -log(e / (e + 2)) ~ 0.5514.
        let z1 = array![[1.0, 0.0], [0.0, 1.0]];
        let z2 = z1.clone();
        let loss = info_nce_loss(
            &EmbeddingBatch::normalized(z1).unwrap(),
            &EmbeddingBatch::normalized(z2).unwrap(),
            1.0,
        )
        .unwrap();
        let expected = -(1f64.exp() / (1f64.exp() + 2.0)).ln();
        assert!((loss - expected).abs() < 1e-12, "{loss} vs {expected}");
        assert!((expected - 0.5514).abs() < 1e-4);
    }

    #[test]
    fn fully_degenerate_equals_log_2b_minus_1() {
        for b in [2usize, 3, 4] {
            let mut z = Array2::<f64>::zeros((b, 3));
            for mut row in z.rows_mut() {
                row[0] = 1.0;
            }
            let loss = info_nce_loss(
                &EmbeddingBatch::normalized(z.clone()).unwrap(),
                &EmbeddingBatch::normalized(z).unwrap(),
                0.3,
            )
            .unwrap();
            let expected = ((2 * b - 1) as f64).ln();
            assert!((loss - expected).abs() < 1e-10);
        }
    }

    #[test]
    fn loss_invariant_under_joint_rotation() {
        let theta: f64 = 0.83;
        let rot = |z: &Array2<f64>| {
            let mut out = z.clone();
            for mut row in out.rows_mut() {
                let (a, b) = (row[0], row[1]);
                row[0] = a * theta.cos() - b * theta.sin();
                row[1] = a * theta.sin() + b * theta.cos();
            }
            out
        };
        let z1 = l2_normalize_rows(&array![[0.3, 0.4, 0.5], [0.9, -0.1, 0.2], [0.0, 1.0, 0.1]]);
        let z2 = l2_normalize_rows(&array![[0.1, 0.2, 0.9], [0.5, 0.5, 0.0], [-0.3, 0.3, 0.4]]);
        let a = info_nce_loss(
            &EmbeddingBatch::normalized(z1.clone()).unwrap(),
            &EmbeddingBatch::normalized(z2.clone()).unwrap(),
            0.2,
        )
        .unwrap();
        let b = info_nce_loss(
            &EmbeddingBatch::normalized(rot(&z1)).unwrap(),
            &EmbeddingBatch::normalized(rot(&z2)).unwrap(),
            0.2,
        )
        .unwrap();
        assert!((a - b).abs() < 1e-10);
    }

    #[test]
    fn temperature_and_norm_errors() {
        let z = array![[1.0, 0.0], [0.0, 1.0]];
        let e = EmbeddingBatch::normalized(z).unwrap();
        assert!(matches!(info_nce_loss(&e, &e, 0.0), Err(SslError::Config(_))));
        assert!(matches!(
            EmbeddingBatch::normalized(array![[2.0, 0.0], [0.0, 1.0]]),
            Err(SslError::Norm { row: 0, .. })
        ));
    }

    #[test]
    fn byol_endpoints() {
        let p = array![[1.0, 0.0], [0.0, 1.0]];
        assert_eq!(byol_loss(&p, &p).unwrap(), 0.0);
        let neg = p.mapv(|v| -v);
        assert_eq!(byol_loss(&p, &neg).unwrap(), 4.0);
        let orth = array![[0.0, 1.0], [1.0, 0.0]];
        assert_eq!(byol_loss(&p, &orth).unwrap(), 2.0);
    }

    #[test]
    fn momentum_endpoints_and_midpoint() {
        let mut target = ParamMap::new();
        let mut online = ParamMap::new();
        target.insert("w".into(), ndarray::ArrayD::zeros(ndarray::IxDyn(&[3])));
        online.insert(
            "w".into(),
            ndarray::ArrayD::from_elem(ndarray::IxDyn(&[3]), 2.0),
        );

        let mut t1 = target.clone();
        momentum_update(&mut t1, &online, 1.0).unwrap();
        assert_eq!(t1["w"], target["w"]);

        let mut t0 = target.clone();
        momentum_update(&mut t0, &online, 0.0).unwrap();
        assert_eq!(t0["w"], online["w"]);

        let mut th = target.clone();
        momentum_update(&mut th, &online, 0.5).unwrap();
        assert!(th["w"].iter().all(|&v| (v - 1.0).abs() < 1e-15));
    }

    #[test]
    fn momentum_key_mismatch() {
        let mut target = ParamMap::new();
        target.insert("a".into(), ndarray::ArrayD::zeros(ndarray::IxDyn(&[1])));
        let mut online = ParamMap::new();
        online.insert("b".into(), ndarray::ArrayD::zeros(ndarray::IxDyn(&[1])));
        assert!(matches!(
            momentum_update(&mut target, &online, 0.5),
            Err(SslError::Key(_))
        ));
    }

    #[test]
    fn queue_ring_semantics() {
        let mut q = FeatureQueue::new(4, 2).unwrap();
        q.enqueue(&array![[1.0, 1.0], [2.0, 2.0], [3.0, 3.0]]).unwrap();
        assert_eq!(q.filled(), 3);
        q.enqueue(&array![[4.0, 4.0], [5.0, 5.0], [6.0, 6.0]]).unwrap();
        assert_eq!(q.filled(), 4);
        // Last 4 of the concatenated stream, FIFO order: 3, 4, 5, 6.
        let snap = q.snapshot();
        assert_eq!(snap, array![[3.0, 3.0], [4.0, 4.0], [5.0, 5.0], [6.0, 6.0]]);
        assert!(q.enqueue(&Array2::zeros((5, 2))).is_err());
    }

    #[test]
    fn moco_routes_through_queue_negatives() {
        let q1 = l2_normalize_rows(&array![[1.0, 0.0], [0.0, 1.0]]);
        let mut queue = FeatureQueue::new(8, 2).unwrap();
        queue
            .enqueue(&l2_normalize_rows(&array![[1.0, 1.0], [-1.0, 0.5]]))
            .unwrap();
        let loss = moco_nce_loss(
            &EmbeddingBatch::normalized(q1.clone()).unwrap(),
            &EmbeddingBatch::normalized(q1).unwrap(),
            &queue,
            0.5,
        )
        .unwrap();
        assert!(loss.is_finite() && loss > 0.0);
    }
}
