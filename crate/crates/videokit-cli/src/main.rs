//! `videokit` — manifest-driven model verification and benchmarking.
//!
//! Exit codes are a stable contract: 0 success, 1 verification failure,
//! 2 usage/config error.

use clap::{Args, Parser, Subcommand};
use ndarray::{ArrayD, IxDyn};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use std::path::PathBuf;
use std::process::ExitCode;
use videokit::accelerator::{
    benchmark_latency, convert_to_deployable_form, quantize_weights_int8, BenchConfig,
};
use videokit::models::checkpoint::{save_checkpoint, CheckpointMeta};
use videokit::models::{count_flops, count_params, Node, Value};
use videokit::zoo::{
    build_entry, entry_trace_input, resolve_manifest, verify_entry, EntryStatus, Manifest,
    ZooManifestEntry,
};

#[derive(Parser)]
#[command(name = "videokit", version, about = "Video model zoo verification and benchmarks")]
struct Cli {
    /// Manifest path (defaults to $VIDEOKIT_MANIFEST, then the bundled copy).
    #[arg(long, global = true)]
    manifest: Option<PathBuf>,
    /// Machine-readable JSON output.
    #[arg(long, global = true)]
    json: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ModelArg {
    /// Manifest entry name.
    #[arg(long)]
    model: String,
}

#[derive(Subcommand)]
enum Command {
    /// Rebuild models and check parameter counts and per-clip FLOPs against
    /// the manifest.
    Verify {
        #[arg(long, conflicts_with = "all")]
        model: Option<String>,
        /// Verify every `verified` entry.
        #[arg(long)]
        all: bool,
    },
    /// Print the measured parameter count of one model.
    Params(ModelArg),
    /// Print the measured per-clip multiply-adds of one model.
    Flops(ModelArg),
    /// Time a model against its deployable-form conversion.
    Bench {
        #[command(flatten)]
        model: ModelArg,
        #[arg(long, default_value_t = 5)]
        iters: usize,
        #[arg(long, default_value_t = 1)]
        warmup: usize,
        /// Override the clip shape, e.g. `3,4,64,64`.
        #[arg(long)]
        input: Option<String>,
        /// Also quantize conv weights to int8 after conversion.
        #[arg(long)]
        int8: bool,
    },
    /// Run the deployment pass and save the converted checkpoint.
    Convert {
        #[command(flatten)]
        model: ModelArg,
        #[arg(long)]
        out: PathBuf,
        /// Override the clip shape used for the equivalence gate.
        #[arg(long)]
        input: Option<String>,
        /// Quantize conv weights to int8 after conversion.
        #[arg(long)]
        int8: bool,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(msg) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}

fn find_entry<'m>(manifest: &'m Manifest, name: &str) -> Result<&'m ZooManifestEntry, String> {
    manifest
        .entries
        .iter()
        .find(|e| e.name == name)
        .ok_or_else(|| format!("unknown model {name:?}"))
}

fn parse_shape(spec: &str) -> Result<Vec<usize>, String> {
    spec.split(',')
        .map(|s| s.trim().parse::<usize>().map_err(|e| format!("bad input shape {spec:?}: {e}")))
        .collect()
}

/// Random forward input for an entry, honoring pathway packing and boxes.
fn build_input(entry: &ZooManifestEntry, shape: &[usize], rng: &mut StdRng) -> Result<Value, String> {
    let tensor = |shape: &[usize], rng: &mut StdRng| {
        ArrayD::from_shape_fn(IxDyn(shape), |_| rng.random::<f64>() - 0.5)
    };
    let mut value = if entry.factory == "acoustic_resnet" {
        if shape.len() != 2 {
            return Err("acoustic input shape must be T,F".into());
        }
        Value::single(tensor(&[1, shape[0], shape[1]], rng))
    } else if entry.factory.starts_with("slowfast") {
        if shape.len() != 4 {
            return Err("input shape must be C,T,H,W".into());
        }
        let alpha = entry.args.get("alpha").and_then(|v| v.as_u64()).unwrap_or(4) as usize;
        if shape[1] % alpha != 0 {
            return Err(format!("frames {} not divisible by alpha {alpha}", shape[1]));
        }
        let slow: Vec<usize> = vec![1, shape[0], shape[1] / alpha, shape[2], shape[3]];
        let fast: Vec<usize> = vec![1, shape[0], shape[1], shape[2], shape[3]];
        Value::pathways(vec![tensor(&slow, rng), tensor(&fast, rng)])
    } else {
        if shape.len() != 4 {
            return Err("input shape must be C,T,H,W".into());
        }
        Value::single(tensor(&[1, shape[0], shape[1], shape[2], shape[3]], rng))
    };
    if entry.factory.ends_with("detection") {
        let h = shape[shape.len() - 2] as f64;
        let w = shape[shape.len() - 1] as f64;
        value = value.with_boxes(ndarray::array![[0.0, 0.1 * w, 0.1 * h, 0.9 * w, 0.9 * h]]);
    }
    Ok(value)
}

fn run(cli: Cli) -> Result<ExitCode, String> {
    let manifest = resolve_manifest(cli.manifest.as_deref()).map_err(|e| e.to_string())?;
    match cli.command {
        Command::Verify { model, all } => verify(&manifest, model.as_deref(), all, cli.json),
        Command::Params(arg) => {
            let entry = find_entry(&manifest, &arg.model)?;
            let model = build_entry(entry).map_err(|e| e.to_string())?;
            let params = count_params(&model);
            if cli.json {
                println!(
                    "{}",
                    serde_json::json!({ "model": entry.name, "params": params })
                );
            } else {
                println!("{}: {} parameters ({:.2} M)", entry.name, params, params as f64 / 1e6);
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Flops(arg) => {
            let entry = find_entry(&manifest, &arg.model)?;
            let model = build_entry(entry).map_err(|e| e.to_string())?;
            let trace = entry_trace_input(entry).map_err(|e| e.to_string())?;
            let madds = count_flops(&model, &trace).map_err(|e| e.to_string())?;
            let g = madds as f64 / 1e9;
            let (crops, clips) = entry.report_factors;
            if cli.json {
                println!(
                    "{}",
                    serde_json::json!({
                        "model": entry.name,
                        "flops_g": g,
                        "report_factors": [crops, clips],
                        "input_shape": entry.input_shape,
                    })
                );
            } else {
                println!(
                    "{}: {g:.2} G multiply-adds per clip x {crops} x {clips} (spatial crops x temporal clips) at input {:?}",
                    entry.name, entry.input_shape
                );
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Bench {
            model,
            iters,
            warmup,
            input,
            int8,
        } => {
            let entry = find_entry(&manifest, &model.model)?;
            let shape = match input {
                Some(s) => parse_shape(&s)?,
                None => entry.input_shape.clone(),
            };
            let baseline = build_entry(entry).map_err(|e| e.to_string())?;
            let mut rng = StdRng::seed_from_u64(0);
            let example = build_input(entry, &shape, &mut rng)?;
            let converted = convert_to_deployable_form(&baseline, &example)
                .map_err(|e| e.to_string())?;
            let bench_model: Node = if int8 {
                quantize_weights_int8(&converted.model)
                    .map_err(|e| e.to_string())?
                    .model
            } else {
                converted.model
            };
            let report = benchmark_latency(
                &bench_model,
                &baseline,
                &example,
                &BenchConfig {
                    iterations: iters,
                    warmup,
                    model_name: entry.name.clone(),
                    input_shape: shape,
                },
                &converted.rule_log,
            )
            .map_err(|e| e.to_string())?;
            if cli.json {
                println!("{}", serde_json::to_string_pretty(&report).unwrap());
            } else {
                println!(
                    "{}: median {:.2} ms (baseline {:.2} ms, speedup {:.2}x; mean {:.2} ms, p90 {:.2} ms, {} iters after {} warmup)",
                    report.model,
                    report.median_ms,
                    report.baseline_median_ms,
                    report.speedup,
                    report.mean_ms,
                    report.p90_ms,
                    report.iters,
                    report.warmup
                );
                for line in &report.rule_log {
                    println!("  applied: {line}");
                }
                println!(
                    "  note: speedups are host-specific; published mobile-CPU numbers are not reproduction targets"
                );
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Convert {
            model,
            out,
            input,
            int8,
        } => {
            let entry = find_entry(&manifest, &model.model)?;
            let shape = match input {
                Some(s) => parse_shape(&s)?,
                None => entry.input_shape.clone(),
            };
            let baseline = build_entry(entry).map_err(|e| e.to_string())?;
            let mut rng = StdRng::seed_from_u64(0);
            let example = build_input(entry, &shape, &mut rng)?;
            let converted = convert_to_deployable_form(&baseline, &example)
                .map_err(|e| e.to_string())?;
            let final_model = if int8 {
                quantize_weights_int8(&converted.model)
                    .map_err(|e| e.to_string())?
                    .model
            } else {
                converted.model
            };
            let meta = CheckpointMeta {
                factory: entry.factory.clone(),
                args: serde_json::Value::Object(entry.args.clone()),
                param_count: count_params(&final_model),
            };
            save_checkpoint(&final_model, &meta, &out).map_err(|e| e.to_string())?;
            if cli.json {
                println!(
                    "{}",
                    serde_json::json!({
                        "model": entry.name,
                        "out": out,
                        "param_count": meta.param_count,
                        "rules_applied": converted.rule_log.len(),
                    })
                );
            } else {
                println!(
                    "{}: {} rewrite rules applied; saved to {} (+ .json sidecar)",
                    entry.name,
                    converted.rule_log.len(),
                    out.display()
                );
            }
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn verify(
    manifest: &Manifest,
    model: Option<&str>,
    all: bool,
    json: bool,
) -> Result<ExitCode, String> {
    let targets: Vec<&ZooManifestEntry> = if let Some(name) = model {
        vec![find_entry(manifest, name)?]
    } else if all {
        manifest.entries.iter().collect()
    } else {
        return Err("pass --model NAME or --all".into());
    };

    let mut failed = false;
    let mut results = Vec::new();
    for entry in targets {
        if entry.status == EntryStatus::Unverified {
            if json {
                results.push(serde_json::json!({ "model": entry.name, "status": "skipped" }));
            } else {
                println!("SKIP  {:<24} unverified ({})", entry.name, entry.reference);
            }
            continue;
        }
        // A verification error (a model that no longer builds or traces) is
        // itself a detected regression, not a usage error.
        let result = match verify_entry(entry) {
            Ok(r) => r,
            Err(e) => {
                failed = true;
                if json {
                    results.push(serde_json::json!({
                        "model": entry.name,
                        "status": "fail",
                        "error": e.to_string(),
                    }));
                } else {
                    println!("FAIL  {:<24} error: {e}", entry.name);
                }
                continue;
            }
        };
        let ok = result.ok();
        failed |= !ok;
        if json {
            results.push(serde_json::json!({
                "model": result.name,
                "status": if ok { "pass" } else { "fail" },
                "params": result.measured_params,
                "expected_params": result.expected_params,
                "param_ok": result.param_ok,
                "flops_g": result.measured_flops_g,
                "expected_flops_g": result.expected_flops_g,
                "flops_ok": result.flops_ok,
            }));
        } else {
            println!(
                "{}  {:<24} params {:>12} vs {:>12} [{}]  flops {:>9.2} G vs {:>7.2} G x{}x{} [{}]",
                if ok { "PASS" } else { "FAIL" },
                result.name,
                result.measured_params,
                result.expected_params,
                if result.param_ok { "ok" } else { "off" },
                result.measured_flops_g,
                result.expected_flops_g,
                result.report_factors.0,
                result.report_factors.1,
                if result.flops_ok { "ok" } else { "off" },
            );
        }
    }
    if json {
        println!("{}", serde_json::to_string_pretty(&results).unwrap());
    }
    Ok(if failed {
        ExitCode::from(1)
    } else {
        ExitCode::SUCCESS
    })
}
