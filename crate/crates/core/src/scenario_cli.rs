//! Scenario configuration, sweeps over node counts and seeds, and the
//! aggregate files consumed by plotting scripts.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::{self, Display};
use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use thiserror::Error;

use crate::channel_plan::default_plan;
use crate::grid_map::{GridMap, Point, Topology};
use crate::mac_engine::{self, run, run_traced, EngineError, Scheme, SimParams, World};
use crate::metrics::{RunRecord, CSV_HEADER};
use crate::mobility::spawn_scenario;

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_ENGINE: i32 = 3;

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    pub scheme: Vec<Scheme>,
    pub tz_depth: Vec<f64>,
    pub nodes: Vec<usize>,
    pub seeds: Vec<u64>,
    pub duration: f64,
    pub warmup: f64,
    pub rows: usize,
    pub cols: usize,
    pub cell_width: f64,
    pub road_length: f64,
    pub speed_kmh: f64,
    pub slot_time_us: f64,
    pub sifs_us: f64,
    pub difs_us: f64,
    pub cw_min: u32,
    pub cw_max: u32,
    pub data_rate_mbps: f64,
    pub max_retries: u32,
    pub tx_range_m: f64,
    pub switch_latency_ms: f64,
    pub payload_bytes: u32,
    pub safety_hz: f64,
    pub nonsafety_rate: f64,
    pub nonsafety_ttl_s: f64,
    pub dwell_ms: f64,
    pub epoch_s: f64,
    pub bootstrap: bool,
    pub bootstrap_period_s: f64,
    pub rsu_range_m: f64,
    pub out: PathBuf,
    pub trace: Option<PathBuf>,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        let sim = SimParams::default();
        ScenarioConfig {
            scheme: vec![Scheme::Grid],
            tz_depth: vec![10.0],
            nodes: vec![20, 40, 60, 80, 100],
            seeds: (1..=10).collect(),
            duration: 60.0,
            warmup: 5.0,
            rows: 18,
            cols: 6,
            cell_width: 5.0,
            road_length: 1000.0,
            speed_kmh: 50.0,
            slot_time_us: 13.0,
            sifs_us: 32.0,
            difs_us: 58.0,
            cw_min: sim.mac.cw_min,
            cw_max: sim.mac.cw_max,
            data_rate_mbps: 6.0,
            max_retries: sim.mac.max_retries,
            tx_range_m: sim.mac.tx_range,
            switch_latency_ms: 2.0,
            payload_bytes: sim.traffic.payload_bits / 8,
            safety_hz: sim.traffic.safety_hz,
            nonsafety_rate: sim.traffic.nonsafety_rate,
            nonsafety_ttl_s: sim.traffic.nonsafety_ttl,
            dwell_ms: 20.0,
            epoch_s: sim.baseline.epoch,
            bootstrap: sim.bootstrap.enabled,
            bootstrap_period_s: sim.bootstrap.period,
            rsu_range_m: sim.bootstrap.rsu_range,
            out: PathBuf::from("out"),
            trace: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub struct ConfigError {
    pub line: Option<usize>,
    pub msg: String,
}

impl Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.line {
            Some(l) => write!(f, "config line {l}: {}", self.msg),
            None => write!(f, "config: {}", self.msg),
        }
    }
}

fn list<T, F: Fn(&str) -> Result<T, String>>(value: &str, item: F) -> Result<Vec<T>, String> {
    let inner = value.trim().trim_start_matches('[').trim_end_matches(']');
    let items: Vec<T> = inner
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(item)
        .collect::<Result<_, _>>()?;
    if items.is_empty() {
        return Err("empty list".into());
    }
    Ok(items)
}

fn num<T: std::str::FromStr>(s: &str) -> Result<T, String> {
    s.trim().parse().map_err(|_| format!("malformed value `{}`", s.trim()))
}

fn scheme_of(s: &str) -> Result<Scheme, String> {
    match s {
        "grid" => Ok(Scheme::Grid),
        "dcf-baseline" => Ok(Scheme::DcfBaseline),
        other => Err(format!("unknown scheme `{other}` (expected grid or dcf-baseline)")),
    }
}

fn join<T: Display>(items: &[T]) -> String {
    items.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(", ")
}

impl ScenarioConfig {
    pub const KEYS: [&'static str; 31] = [
        "scheme",
        "tz_depth",
        "nodes",
        "seeds",
        "duration",
        "warmup",
        "rows",
        "cols",
        "cell_width",
        "road_length",
        "speed_kmh",
        "slot_time_us",
        "sifs_us",
        "difs_us",
        "cw_min",
        "cw_max",
        "data_rate_mbps",
        "max_retries",
        "tx_range_m",
        "switch_latency_ms",
        "payload_bytes",
        "safety_hz",
        "nonsafety_rate",
        "nonsafety_ttl_s",
        "dwell_ms",
        "epoch_s",
        "bootstrap",
        "bootstrap_period_s",
        "rsu_range_m",
        "out",
        "trace",
    ];

    /// Sets one key from its textual value.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), String> {
        let v = value.trim();
        match key {
            "scheme" => self.scheme = list(v, scheme_of)?,
            "tz_depth" => self.tz_depth = list(v, num)?,
            "nodes" => self.nodes = list(v, num)?,
            "seeds" => self.seeds = list(v, num)?,
            "duration" => self.duration = num(v)?,
            "warmup" => self.warmup = num(v)?,
            "rows" => self.rows = num(v)?,
            "cols" => self.cols = num(v)?,
            "cell_width" => self.cell_width = num(v)?,
            "road_length" => self.road_length = num(v)?,
            "speed_kmh" => self.speed_kmh = num(v)?,
            "slot_time_us" => self.slot_time_us = num(v)?,
            "sifs_us" => self.sifs_us = num(v)?,
            "difs_us" => self.difs_us = num(v)?,
            "cw_min" => self.cw_min = num(v)?,
            "cw_max" => self.cw_max = num(v)?,
            "data_rate_mbps" => self.data_rate_mbps = num(v)?,
            "max_retries" => self.max_retries = num(v)?,
            "tx_range_m" => self.tx_range_m = num(v)?,
            "switch_latency_ms" => self.switch_latency_ms = num(v)?,
            "payload_bytes" => self.payload_bytes = num(v)?,
            "safety_hz" => self.safety_hz = num(v)?,
            "nonsafety_rate" => self.nonsafety_rate = num(v)?,
            "nonsafety_ttl_s" => self.nonsafety_ttl_s = num(v)?,
            "dwell_ms" => self.dwell_ms = num(v)?,
            "epoch_s" => self.epoch_s = num(v)?,
            "bootstrap" => {
                self.bootstrap = match v {
                    "true" | "on" | "yes" => true,
                    "false" | "off" | "no" => false,
                    _ => return Err(format!("malformed boolean `{v}`")),
                }
            }
            "bootstrap_period_s" => self.bootstrap_period_s = num(v)?,
            "rsu_range_m" => self.rsu_range_m = num(v)?,
            "out" => self.out = PathBuf::from(v),
            "trace" => self.trace = (v != "none").then(|| PathBuf::from(v)),
            other => return Err(format!("unknown key `{other}`")),
        }
        Ok(())
    }

    /// Effective value of every key, in [`ScenarioConfig::KEYS`] order.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let schemes: Vec<&str> = self.scheme.iter().map(|s| s.as_str()).collect();
        let vals = [
            schemes.join(", "),
            join(&self.tz_depth),
            join(&self.nodes),
            join(&self.seeds),
            self.duration.to_string(),
            self.warmup.to_string(),
            self.rows.to_string(),
            self.cols.to_string(),
            self.cell_width.to_string(),
            self.road_length.to_string(),
            self.speed_kmh.to_string(),
            self.slot_time_us.to_string(),
            self.sifs_us.to_string(),
            self.difs_us.to_string(),
            self.cw_min.to_string(),
            self.cw_max.to_string(),
            self.data_rate_mbps.to_string(),
            self.max_retries.to_string(),
            self.tx_range_m.to_string(),
            self.switch_latency_ms.to_string(),
            self.payload_bytes.to_string(),
            self.safety_hz.to_string(),
            self.nonsafety_rate.to_string(),
            self.nonsafety_ttl_s.to_string(),
            self.dwell_ms.to_string(),
            self.epoch_s.to_string(),
            self.bootstrap.to_string(),
            self.bootstrap_period_s.to_string(),
            self.rsu_range_m.to_string(),
            self.out.display().to_string(),
            self.trace.as_ref().map_or("none".to_string(), |p| p.display().to_string()),
        ];
        Self::KEYS.into_iter().zip(vals).collect()
    }

    /// Effective configuration in `key = value` form; parses back to `self`.
    pub fn banner(&self) -> String {
        self.entries()
            .into_iter()
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect()
    }

    pub fn grid(&self, tz_depth: f64) -> Result<GridMap, String> {
        let h = self.road_length / self.rows as f64;
        GridMap::new(self.rows, self.cols, self.cell_width, h, Point::default(), tz_depth)
            .map(|g| g.with_topology(Topology::RowTorus))
            .map_err(|e| e.to_string())
    }

    pub fn sim_params(&self) -> SimParams {
        let mut p = SimParams::default();
        p.warmup = self.warmup;
        let m = &mut p.mac;
        m.slot_time = self.slot_time_us * 1e-6;
        m.sifs = self.sifs_us * 1e-6;
        m.difs = self.difs_us * 1e-6;
        m.cw_min = self.cw_min;
        m.cw_max = self.cw_max;
        m.data_rate = self.data_rate_mbps * 1e6;
        m.max_retries = self.max_retries;
        m.tx_range = self.tx_range_m;
        m.switch_latency = self.switch_latency_ms * 1e-3;
        let t = &mut p.traffic;
        t.payload_bits = self.payload_bytes * 8;
        t.safety_hz = self.safety_hz;
        t.safety_ttl = if self.safety_hz > 0.0 { 1.0 / self.safety_hz } else { f64::INFINITY };
        t.nonsafety_rate = self.nonsafety_rate;
        t.nonsafety_ttl = self.nonsafety_ttl_s;
        p.baseline.dwell = self.dwell_ms * 1e-3;
        p.baseline.epoch = self.epoch_s;
        p.bootstrap.enabled = self.bootstrap;
        p.bootstrap.period = self.bootstrap_period_s;
        p.bootstrap.rsu_range = self.rsu_range_m;
        p
    }

    /// Checks cross-field invariants; the error names the offending key.
    pub fn validate(&self) -> Result<(), (&'static str, String)> {
        for &tz in &self.tz_depth {
            if !(tz >= 0.0) {
                return Err(("tz_depth", "must be >= 0".into()));
            }
            self.grid(tz).map_err(|e| ("tz_depth", e))?;
        }
        if self.rows % 6 != 0 || self.cols != 6 {
            return Err(("rows", "the channel plan needs cols = 6 and rows a multiple of 6".into()));
        }
        if !(self.duration > 0.0) {
            return Err(("duration", "must be positive".into()));
        }
        if !(self.warmup >= 0.0 && self.warmup < self.duration) {
            return Err(("warmup", "must lie in [0, duration)".into()));
        }
        if !(self.speed_kmh >= 0.0) {
            return Err(("speed_kmh", "must be >= 0".into()));
        }
        let p = self.sim_params();
        p.mac.validate().map_err(|e| ("cw_min", e))?;
        if !(self.safety_hz >= 0.0) {
            return Err(("safety_hz", "must be >= 0".into()));
        }
        if !(self.nonsafety_rate >= 0.0) {
            return Err(("nonsafety_rate", "must be >= 0".into()));
        }
        if !(self.nonsafety_ttl_s > 0.0) {
            return Err(("nonsafety_ttl_s", "must be positive".into()));
        }
        if !(self.epoch_s > 0.0 && self.dwell_ms >= 0.0) {
            return Err(("epoch_s", "epoch must be positive and dwell >= 0".into()));
        }
        if !(self.bootstrap_period_s > 0.0 && self.rsu_range_m > 0.0) {
            return Err(("bootstrap_period_s", "bootstrap period and RSU range must be positive".into()));
        }
        Ok(())
    }

    pub fn variants(&self) -> Vec<Variant> {
        let mut out = BTreeSet::new();
        for &s in &self.scheme {
            match s {
                Scheme::Grid => {
                    for &tz in &self.tz_depth {
                        out.insert(Variant::grid(tz));
                    }
                }
                Scheme::DcfBaseline => {
                    out.insert(Variant::baseline());
                }
            }
        }
        out.into_iter().collect()
    }
}

/// Parses `key = value` lines; `#` starts a comment.
pub fn parse_config(text: &str) -> Result<ScenarioConfig, ConfigError> {
    parse_with_overrides(text, &[])
}

/// Like [`parse_config`], then applies `overrides` (flag values) on top.
pub fn parse_with_overrides(text: &str, overrides: &[(String, String)]) -> Result<ScenarioConfig, ConfigError> {
    let mut cfg = ScenarioConfig::default();
    let mut seen: BTreeMap<String, usize> = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let body = raw.split('#').next().unwrap_or("").trim();
        if body.is_empty() {
            continue;
        }
        let Some((k, v)) = body.split_once('=') else {
            return Err(ConfigError {
                line: Some(line),
                msg: format!("expected `key = value`, got `{body}`"),
            });
        };
        let key = k.trim();
        cfg.set(key, v).map_err(|msg| ConfigError { line: Some(line), msg })?;
        seen.insert(key.to_string(), line);
    }
    for (k, v) in overrides {
        cfg.set(k, v).map_err(|msg| ConfigError {
            line: None,
            msg: format!("--{k}: {msg}"),
        })?;
        seen.remove(k);
    }
    cfg.validate().map_err(|(key, msg)| ConfigError {
        line: seen.get(key).copied(),
        msg: format!("{key}: {msg}"),
    })?;
    Ok(cfg)
}

/// A scheme with its TZ depth; the baseline ignores TZs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Variant {
    pub scheme: Scheme,
    pub tz_depth: f64,
}

impl Variant {
    pub fn grid(tz_depth: f64) -> Self {
        Variant {
            scheme: Scheme::Grid,
            tz_depth,
        }
    }

    pub fn baseline() -> Self {
        Variant {
            scheme: Scheme::DcfBaseline,
            tz_depth: 0.0,
        }
    }

    pub fn label(&self) -> String {
        match self.scheme {
            Scheme::Grid => format!("grid-tz{}", self.tz_depth),
            Scheme::DcfBaseline => "dcf-baseline".to_string(),
        }
    }
}

impl Eq for Variant {}
impl PartialOrd for Variant {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Variant {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.scheme
            .cmp(&other.scheme)
            .then(self.tz_depth.total_cmp(&other.tz_depth))
    }
}

pub fn build_world(cfg: &ScenarioConfig, variant: Variant, n_nodes: usize, seed: u64) -> Result<World, String> {
    let grid = cfg.grid(variant.tz_depth)?;
    let plan = default_plan(cfg.rows).map_err(|e| e.to_string())?;
    let vehicles = spawn_scenario(n_nodes, &grid, seed, cfg.speed_kmh / 3.6);
    Ok(World {
        scheme: variant.scheme,
        grid,
        plan,
        vehicles,
        params: cfg.sim_params(),
    })
}

#[derive(Debug, Error)]
pub enum SweepError {
    #[error("{label} n={n_nodes} seed={seed}: {source}")]
    Engine {
        label: String,
        n_nodes: usize,
        seed: u64,
        source: EngineError,
    },
    #[error("{0}")]
    Setup(String),
    #[error("output: {0}")]
    Io(#[from] std::io::Error),
}

fn run_point(cfg: &ScenarioConfig, v: Variant, n: usize, seed: u64) -> Result<RunRecord, SweepError> {
    let world = build_world(cfg, v, n, seed).map_err(SweepError::Setup)?;
    let label = v.label();
    let wrap = |source| SweepError::Engine {
        label: label.clone(),
        n_nodes: n,
        seed,
        source,
    };
    let ledger = match &cfg.trace {
        None => run(&world, cfg.duration, seed).map_err(wrap)?,
        Some(dir) => {
            fs::create_dir_all(dir)?;
            let file = fs::File::create(dir.join(format!("{label}_n{n}_s{seed}.tsv")))?;
            let mut w = BufWriter::new(file);
            run_traced(&world, cfg.duration, seed, &mut w).map_err(wrap)?
        }
    };
    Ok(RunRecord::from_ledger(&label, n, seed, v.tz_depth, &ledger))
}

/// Outcome of a sweep: rows of the runs that finished, sorted, and the first
/// fault if any run failed.
pub struct SweepOutcome {
    pub records: Vec<RunRecord>,
    pub fault: Option<SweepError>,
}

pub fn sort_records(records: &mut [RunRecord]) {
    records.sort_by(|a, b| {
        a.scheme
            .cmp(&b.scheme)
            .then(a.tz_depth_m.total_cmp(&b.tz_depth_m))
            .then(a.n_nodes.cmp(&b.n_nodes))
            .then(a.seed.cmp(&b.seed))
    });
}

/// Runs every (variant, n_nodes, seed) point, in parallel.
pub fn run_sweep(cfg: &ScenarioConfig) -> SweepOutcome {
    let mut points = Vec::new();
    for v in cfg.variants() {
        for &n in &cfg.nodes {
            for &s in &cfg.seeds {
                points.push((v, n, s));
            }
        }
    }
    let results: Vec<Result<RunRecord, SweepError>> = points
        .par_iter()
        .map(|&(v, n, s)| run_point(cfg, v, n, s))
        .collect();
    let mut records = Vec::new();
    let mut fault = None;
    for r in results {
        match r {
            Ok(rec) => records.push(rec),
            Err(e) if fault.is_none() => fault = Some(e),
            Err(_) => {}
        }
    }
    sort_records(&mut records);
    SweepOutcome { records, fault }
}

pub fn records_to_csv(records: &[RunRecord]) -> String {
    let mut s = String::from(CSV_HEADER);
    s.push('\n');
    for r in records {
        s.push_str(&r.to_csv_line());
        s.push('\n');
    }
    s
}

pub fn parse_csv(text: &str) -> Result<Vec<RunRecord>, PlotError> {
    let mut lines = text.lines();
    if lines.next().map(str::trim_end) != Some(CSV_HEADER) {
        return Err(PlotError::BadCsv(1));
    }
    lines
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| RunRecord::parse_csv_line(l).ok_or(PlotError::BadCsv(i + 2)))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlotMetric {
    MeanDelay,
    Throughput,
}

impl PlotMetric {
    pub fn file_name(self) -> &'static str {
        match self {
            PlotMetric::MeanDelay => "delay_vs_nodes.csv",
            PlotMetric::Throughput => "throughput_vs_nodes.csv",
        }
    }

    fn value(self, r: &RunRecord) -> f64 {
        match self {
            PlotMetric::MeanDelay => r.mean_delay_s,
            PlotMetric::Throughput => r.throughput_bps,
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum PlotError {
    #[error("no rows")]
    Empty,
    #[error("malformed CSV at line {0}")]
    BadCsv(usize),
    #[error("scheme {label} covers node counts {got:?}, expected {want:?}")]
    Inconsistent {
        label: String,
        got: Vec<usize>,
        want: Vec<usize>,
    },
}

/// Mean and standard error (sample sd / sqrt(k)); zero error for k = 1.
pub fn mean_stderr(xs: &[f64]) -> (f64, f64) {
    let k = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / k;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (k - 1.0);
    (mean, (var / k).sqrt())
}

/// Grouped statistics per `(label, n_nodes)`.
pub fn aggregate(records: &[RunRecord], metric: PlotMetric) -> Result<BTreeMap<String, BTreeMap<usize, (f64, f64)>>, PlotError> {
    if records.is_empty() {
        return Err(PlotError::Empty);
    }
    let mut raw: BTreeMap<String, BTreeMap<usize, Vec<f64>>> = BTreeMap::new();
    for r in records {
        raw.entry(r.scheme.clone())
            .or_default()
            .entry(r.n_nodes)
            .or_default()
            .push(metric.value(r));
    }
    let want: Vec<usize> = raw.values().next().expect("non-empty").keys().copied().collect();
    for (label, points) in &raw {
        let got: Vec<usize> = points.keys().copied().collect();
        if got != want {
            return Err(PlotError::Inconsistent {
                label: label.clone(),
                got,
                want,
            });
        }
    }
    Ok(raw
        .into_iter()
        .map(|(l, pts)| (l, pts.into_iter().map(|(n, xs)| (n, mean_stderr(&xs))).collect()))
        .collect())
}

/// Per-metric aggregate: `n_nodes`, then `<label>_mean,<label>_stderr` per scheme.
pub fn emit_plot_data(records: &[RunRecord], metric: PlotMetric) -> Result<String, PlotError> {
    let agg = aggregate(records, metric)?;
    let mut s = String::from("n_nodes");
    for label in agg.keys() {
        s.push_str(&format!(",{label}_mean,{label}_stderr"));
    }
    s.push('\n');
    let ns: Vec<usize> = agg.values().next().expect("non-empty").keys().copied().collect();
    for n in ns {
        s.push_str(&n.to_string());
        for pts in agg.values() {
            let (m, e) = pts[&n];
            s.push_str(&format!(",{m},{e}"));
        }
        s.push('\n');
    }
    Ok(s)
}

pub const PARTIAL_MARKER: &str = "# INCOMPLETE";

/// Writes `results.csv` and the aggregate files into `dir`. With a fault,
/// only a marked, partial `results.csv` is written.
pub fn write_outputs(dir: &Path, outcome: &SweepOutcome) -> Result<(), SweepError> {
    fs::create_dir_all(dir)?;
    let mut csv = records_to_csv(&outcome.records);
    if let Some(e) = &outcome.fault {
        csv.push_str(&format!("{PARTIAL_MARKER}: {e}\n"));
        fs::write(dir.join("results.csv"), csv)?;
        return Ok(());
    }
    fs::write(dir.join("results.csv"), csv)?;
    for m in [PlotMetric::MeanDelay, PlotMetric::Throughput] {
        let text = emit_plot_data(&outcome.records, m).map_err(|e| SweepError::Setup(e.to_string()))?;
        fs::write(dir.join(m.file_name()), text)?;
    }
    Ok(())
}

/// Mirrors [`mac_engine::run`] for a single configured point.
pub fn run_single(cfg: &ScenarioConfig, v: Variant, n: usize, seed: u64) -> Result<crate::metrics::MetricsLedger, SweepError> {
    let world = build_world(cfg, v, n, seed).map_err(SweepError::Setup)?;
    mac_engine::run(&world, cfg.duration, seed).map_err(|source| SweepError::Engine {
        label: v.label(),
        n_nodes: n,
        seed,
        source,
    })
}
