//! Single-threaded latency harness for converted-vs-baseline comparisons.

use super::{AcceleratorError, Result, RuleApplication};
use crate::models::nn::{Node, Value};
use serde::{Deserialize, Serialize};
use std::time::Instant;

/// Benchmark knobs.
#[derive(Debug, Clone)]
pub struct BenchConfig {
    pub iterations: usize,
    pub warmup: usize,
    pub model_name: String,
    /// Raw input shape recorded in the report (pre pathway packing).
    pub input_shape: Vec<usize>,
}

/// Measurement protocol record. Speedups are device- and kernel-specific;
/// the report reproduces the protocol, not any published numbers.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct LatencyReport {
    pub model: String,
    pub input_shape: Vec<usize>,
    pub iters: usize,
    pub warmup: usize,
    pub median_ms: f64,
    pub mean_ms: f64,
    pub p90_ms: f64,
    pub baseline_median_ms: f64,
    pub speedup: f64,
    pub rule_log: Vec<String>,
}

fn time_forward(model: &Node, input: &Value, iterations: usize, warmup: usize) -> Result<Vec<f64>> {
    for _ in 0..warmup {
        model.forward(input)?;
    }
    let mut samples = Vec::with_capacity(iterations);
    for _ in 0..iterations {
        let t0 = Instant::now();
        let out = model.forward(input)?;
        samples.push(t0.elapsed().as_secs_f64() * 1e3);
        std::hint::black_box(&out);
    }
    Ok(samples)
}

fn median(sorted: &[f64]) -> f64 {
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    }
}

/// Times `model` and `baseline` on the same input with warmup, single
/// threaded, and reports median/mean/p90 plus the baseline/converted speedup.
pub fn benchmark_latency(
    model: &Node,
    baseline: &Node,
    input: &Value,
    cfg: &BenchConfig,
    rule_log: &[RuleApplication],
) -> Result<LatencyReport> {
    if cfg.iterations < 1 {
        return Err(AcceleratorError::Config(
            "iterations must be >= 1".into(),
        ));
    }
    let mut converted = time_forward(model, input, cfg.iterations, cfg.warmup)?;
    let mut base = time_forward(baseline, input, cfg.iterations, cfg.warmup)?;
    converted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    base.sort_by(|a, b| a.partial_cmp(b).unwrap());

    let med = median(&converted);
    let mean = converted.iter().sum::<f64>() / converted.len() as f64;
    let p90_idx = ((0.9 * converted.len() as f64).ceil() as usize).max(1) - 1;
    let base_med = median(&base);
    Ok(LatencyReport {
        model: cfg.model_name.clone(),
        input_shape: cfg.input_shape.clone(),
        iters: cfg.iterations,
        warmup: cfg.warmup,
        median_ms: med,
        mean_ms: mean,
        p90_ms: converted[p90_idx],
        baseline_median_ms: base_med,
        speedup: base_med / med,
        rule_log: rule_log.iter().map(|r| r.to_string()).collect(),
    })
}
