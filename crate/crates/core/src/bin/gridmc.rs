use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;

use gridmc::scenario_cli::{parse_with_overrides, run_sweep, write_outputs, EXIT_CONFIG, EXIT_ENGINE};

/// Runs a scenario sweep and writes results.csv plus per-metric aggregates.
#[derive(Parser, Debug)]
#[command(name = "gridmc", version)]
struct Args {
    /// `key = value` scenario file; defaults apply when omitted.
    config: Option<PathBuf>,
    /// Schemes to run: grid, dcf-baseline (comma list).
    #[arg(long)]
    scheme: Option<String>,
    /// Node counts to sweep (comma list).
    #[arg(long)]
    nodes: Option<String>,
    /// TZ depths in metres for the grid scheme (comma list).
    #[arg(long)]
    tz: Option<String>,
    /// Seeds to replicate over (comma list).
    #[arg(long)]
    seed: Option<String>,
    /// Simulated seconds per run.
    #[arg(long)]
    duration: Option<String>,
    /// Output directory.
    #[arg(long)]
    out: Option<String>,
    /// Directory for per-run event traces.
    #[arg(long)]
    trace: Option<String>,
    /// Any other key, as `key=value`; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

fn code(c: i32) -> ExitCode {
    ExitCode::from(c as u8)
}

fn main() -> ExitCode {
    let args = Args::parse();
    let text = match &args.config {
        Some(p) => match std::fs::read_to_string(p) {
            Ok(t) => t,
            Err(e) => {
                eprintln!("cannot read {}: {e}", p.display());
                return code(EXIT_CONFIG);
            }
        },
        None => String::new(),
    };
    let mut overrides = Vec::new();
    for kv in &args.set {
        match kv.split_once('=') {
            Some((k, v)) => overrides.push((k.trim().to_string(), v.trim().to_string())),
            None => {
                eprintln!("--set expects key=value, got `{kv}`");
                return code(EXIT_CONFIG);
            }
        }
    }
    let flags = [
        ("scheme", &args.scheme),
        ("nodes", &args.nodes),
        ("tz_depth", &args.tz),
        ("seeds", &args.seed),
        ("duration", &args.duration),
        ("out", &args.out),
        ("trace", &args.trace),
    ];
    for (k, v) in flags {
        if let Some(v) = v {
            overrides.push((k.to_string(), v.clone()));
        }
    }
    let cfg = match parse_with_overrides(&text, &overrides) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("{e}");
            return code(EXIT_CONFIG);
        }
    };
    print!("{}", cfg.banner());
    let outcome = run_sweep(&cfg);
    if let Err(e) = write_outputs(&cfg.out, &outcome) {
        eprintln!("{e}");
        return code(EXIT_ENGINE);
    }
    if let Some(e) = &outcome.fault {
        eprintln!("run failed: {e}");
        return code(EXIT_ENGINE);
    }
    eprintln!("{} runs written to {}", outcome.records.len(), cfg.out.display());
    code(0)
}
