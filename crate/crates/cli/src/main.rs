// SPDX-License-Identifier: MIT OR Apache-2.0

#![forbid(unsafe_code)]

//! Command-line front end: simulate, segment, evaluate and report.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context};
use bocpd_core::config::RunConfig;
use bocpd_core::inference::evaluate_detection;
use bocpd_core::ingest::ingest_csv;
use bocpd_core::model::ModelKind;
use bocpd_core::pipeline::{run_series, write_bundle, RunStatus};
use bocpd_core::report::{report_drydown, DrydownEntry, SegmentsReport};
use bocpd_core::simkit::{generate, write_series_csv, write_truth_json, ScenarioId, ScenarioSpec, Truth};
use clap::{Parser, Subcommand};
use serde_json::json;

#[derive(Parser)]
#[command(name = "bocpd", version, about = "Sequential Bayesian changepoint detection")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic series with its ground truth.
    Simulate {
        /// Preset scenario (s1..s4); ignored when --spec is given.
        #[arg(long, value_parser = parse_scenario, default_value = "s1")]
        scenario: ScenarioId,
        /// Scenario description JSON.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        noise_sd: Option<f64>,
        #[arg(long, env = "BOCPD_OUTPUT_DIR", default_value = "bocpd-output")]
        out: PathBuf,
    },
    /// Run the detector and write the report bundle.
    Segment {
        /// Run configuration JSON.
        #[arg(long)]
        config: PathBuf,
        /// Series CSV, overriding the configured input.
        #[arg(long)]
        input: Option<PathBuf>,
        /// Output directory, overriding the configured one.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Score detected segments against a ground truth.
    Evaluate {
        #[arg(long)]
        segments: PathBuf,
        #[arg(long)]
        truth: PathBuf,
        #[arg(long, default_value_t = 10)]
        tolerance: usize,
    },
    /// Summarise decay segments of a segments file.
    Report {
        #[arg(long)]
        segments: PathBuf,
        /// Sampling interval for the e-folding days; defaults to the file's.
        #[arg(long)]
        interval_hours: Option<f64>,
    },
}

fn parse_scenario(s: &str) -> Result<ScenarioId, String> {
    match s.to_ascii_lowercase().as_str() {
        "s1" => Ok(ScenarioId::S1),
        "s2" => Ok(ScenarioId::S2),
        "s3" => Ok(ScenarioId::S3),
        "s4" => Ok(ScenarioId::S4),
        _ => Err(format!("unknown scenario {s:?}, expected s1..s4")),
    }
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> anyhow::Result<T> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).map_err(bocpd_core::Error::from).with_context(|| format!("parsing {}", path.display()))
}

fn print_json(value: &serde_json::Value) -> anyhow::Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn simulate(scenario: ScenarioId, spec: Option<PathBuf>, seed: u64, noise_sd: Option<f64>, out: &Path) -> anyhow::Result<()> {
    let mut spec = match spec {
        Some(p) => read_json::<ScenarioSpec>(&p)?,
        None => ScenarioSpec::preset(scenario, seed)?,
    };
    if let Some(sd) = noise_sd {
        spec.noise_sd = sd;
    }
    let sim = generate(&spec)?;
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    write_series_csv(&out.join("series.csv"), &spec, &sim.values)?;
    write_truth_json(&out.join("truth.json"), &sim.truth)?;
    std::fs::write(out.join("scenario.json"), serde_json::to_string_pretty(&spec)? + "\n")?;
    print_json(&json!({ "series": out.join("series.csv"), "truth": out.join("truth.json"), "n": spec.n }))
}

fn output_dir(cli_out: Option<PathBuf>, cfg: &RunConfig) -> PathBuf {
    cli_out
        .or_else(|| cfg.output_dir.clone())
        .or_else(|| std::env::var_os("BOCPD_OUTPUT_DIR").map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("bocpd-output"))
}

fn segment(config: &Path, input: Option<PathBuf>, out: Option<PathBuf>) -> anyhow::Result<()> {
    let text = std::fs::read_to_string(config).with_context(|| format!("reading {}", config.display()))?;
    let mut cfg = RunConfig::from_json(&text).with_context(|| format!("loading {}", config.display()))?;
    if input.is_some() {
        cfg.input = input;
    }
    let Some(path) = cfg.input.clone() else { bail!(bocpd_core::Error::config("no input series given")) };
    let dir = output_dir(out, &cfg);
    let started = Instant::now();
    let series = ingest_csv(&path, cfg.down_sample).with_context(|| format!("ingesting {}", path.display()))?;
    let result = run_series(&cfg, series)?;
    let manifest = write_bundle(&dir, &cfg, &result, started.elapsed().as_secs_f64())?;
    let cps = result.segmentation.as_ref().map(|s| s.changepoints.clone());
    print_json(&json!({
        "status": manifest.status,
        "output_dir": dir,
        "changepoints": cps,
        "na": manifest.status == RunStatus::NotAvailable,
    }))
}

fn evaluate(segments: &Path, truth: &Path, tolerance: usize) -> anyhow::Result<()> {
    let report: SegmentsReport = read_json(segments)?;
    let truth: Truth = read_json(truth)?;
    let track: Vec<ModelKind> =
        report.segments.iter().flat_map(|s| std::iter::repeat_n(s.model, s.end - s.start)).collect();
    let m = evaluate_detection(&report.changepoints, &truth.changepoints, tolerance, &track, &truth.model_track)?;
    print_json(&serde_json::to_value(m)?)
}

fn report(segments: &Path, interval_hours: Option<f64>) -> anyhow::Result<()> {
    let mut report: SegmentsReport = read_json(segments)?;
    if let Some(h) = interval_hours {
        if !(h > 0.0 && h.is_finite()) {
            bail!(bocpd_core::Error::config("sampling interval must be positive"));
        }
        for s in &mut report.segments {
            if let (ModelKind::ExpDecay, Some(t)) = (s.model, s.theta) {
                s.drydown = Some(DrydownEntry::from_theta(t.mean, h));
            }
        }
    }
    print_json(&serde_json::to_value(report_drydown(&report.segments))?)
}

fn error_kind(e: &anyhow::Error) -> &'static str {
    e.chain().find_map(|c| c.downcast_ref::<bocpd_core::Error>()).map_or("cli", |e| e.kind())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Simulate { scenario, spec, seed, noise_sd, out } => simulate(scenario, spec, seed, noise_sd, &out),
        Command::Segment { config, input, out } => segment(&config, input, out),
        Command::Evaluate { segments, truth, tolerance } => evaluate(&segments, &truth, tolerance),
        Command::Report { segments, interval_hours } => report(&segments, interval_hours),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let payload = json!({ "error": { "kind": error_kind(&e), "message": format!("{e:#}") } });
            eprintln!("{payload}");
            ExitCode::FAILURE
        }
    }
}
