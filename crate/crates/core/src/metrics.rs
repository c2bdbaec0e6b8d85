//! Per-run counters and the evaluation quantities derived from them.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use thiserror::Error;

use crate::channel_plan::ChannelId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum FrameKind {
    Safety,
    NonSafety,
    Bootstrap,
}

impl FrameKind {
    pub fn as_str(self) -> &'static str {
        match self {
            FrameKind::Safety => "safety",
            FrameKind::NonSafety => "nonsafety",
            FrameKind::Bootstrap => "bootstrap",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DelaySample {
    pub kind: FrameKind,
    pub delay: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct DropCounters {
    /// Lost to overlapping same-channel receptions.
    pub collision: u64,
    /// Unicast frames that exhausted their retries.
    pub retry: u64,
    /// Lost because the intended receivers were retuning.
    pub switch: u64,
    /// Expired in a queue.
    pub ttl: u64,
    /// Broadcasts with nobody tuned in range.
    pub unreached: u64,
}

impl DropCounters {
    pub fn total(&self) -> u64 {
        self.collision + self.retry + self.switch + self.ttl + self.unreached
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct MetricsLedger {
    /// Samples are taken from frames created in `[window_start, window_end]`.
    pub window_start: f64,
    pub window_end: f64,
    pub delay_samples: Vec<DelaySample>,
    /// First-attempt medium access delay (queue head to transmission start).
    pub access_delays: Vec<f64>,
    /// Nonsafety payload bits delivered inside the window.
    pub delivered_bits: u64,
    /// Union of transmission time on each channel, clipped to the window.
    pub busy_time: BTreeMap<ChannelId, f64>,
    pub access_counts: BTreeMap<ChannelId, u64>,
    /// Whole-run frame accounting, warm-up included.
    pub generated: u64,
    pub delivered: u64,
    pub drops: DropCounters,
    pub in_flight: u64,
    /// Delivered nonsafety frames per source vehicle inside the window.
    pub per_node_delivered: Vec<u64>,
    pub relay_seconds: f64,
    pub relay_entries: u64,
}

impl MetricsLedger {
    pub fn new(n_nodes: usize, window_start: f64, window_end: f64) -> Self {
        let zeros = || ChannelId::all().map(|c| (c, 0.0)).collect();
        MetricsLedger {
            window_start,
            window_end,
            busy_time: zeros(),
            access_counts: ChannelId::all().map(|c| (c, 0)).collect(),
            per_node_delivered: vec![0; n_nodes],
            ..Default::default()
        }
    }

    pub fn duration(&self) -> f64 {
        (self.window_end - self.window_start).max(0.0)
    }

    /// Conservation: every generated frame is delivered, dropped, or still
    /// in flight.
    pub fn is_conserved(&self) -> bool {
        self.generated == self.delivered + self.drops.total() + self.in_flight
    }

    fn data_delays(&self) -> impl Iterator<Item = f64> + '_ {
        self.delay_samples
            .iter()
            .filter(|s| s.kind != FrameKind::Bootstrap)
            .map(|s| s.delay)
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("no samples")]
    NoData,
    #[error("all allocations are zero")]
    AllZero,
}

/// Mean generation-to-decode delay over safety and nonsafety frames.
pub fn mean_delay(ledger: &MetricsLedger) -> Result<f64, MetricsError> {
    mean(ledger.data_delays())
}

pub fn mean_delay_of(ledger: &MetricsLedger, kind: FrameKind) -> Result<f64, MetricsError> {
    mean(ledger.delay_samples.iter().filter(|s| s.kind == kind).map(|s| s.delay))
}

fn mean(values: impl Iterator<Item = f64>) -> Result<f64, MetricsError> {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        Err(MetricsError::NoData)
    } else {
        Ok(sum / n as f64)
    }
}

/// Nearest-rank 95th percentile of the delay samples.
pub fn p95_delay(ledger: &MetricsLedger) -> Result<f64, MetricsError> {
    let mut v: Vec<f64> = ledger.data_delays().collect();
    if v.is_empty() {
        return Err(MetricsError::NoData);
    }
    v.sort_by(f64::total_cmp);
    let rank = (0.95 * v.len() as f64).ceil() as usize;
    Ok(v[rank.max(1) - 1])
}

/// Delivered nonsafety bits per second of the measurement window.
pub fn throughput(ledger: &MetricsLedger) -> f64 {
    let d = ledger.duration();
    if d > 0.0 {
        ledger.delivered_bits as f64 / d
    } else {
        0.0
    }
}

pub fn jain_index(counts: &[u64]) -> Result<f64, MetricsError> {
    let sum: f64 = counts.iter().map(|&x| x as f64).sum();
    if counts.is_empty() || sum == 0.0 {
        return Err(MetricsError::AllZero);
    }
    let sq: f64 = counts.iter().map(|&x| (x as f64).powi(2)).sum();
    Ok(sum * sum / (counts.len() as f64 * sq))
}

pub fn channel_utilization(ledger: &MetricsLedger) -> BTreeMap<ChannelId, f64> {
    let d = ledger.duration();
    ledger
        .busy_time
        .iter()
        .map(|(&c, &t)| (c, if d > 0.0 { (t / d).min(1.0) } else { 0.0 }))
        .collect()
}

/// Time-integral and number of entries into states where a vehicle holds
/// two distinct SCHs at once.
pub fn tz_relay_opportunities(ledger: &MetricsLedger) -> (f64, u64) {
    (ledger.relay_seconds, ledger.relay_entries)
}

pub const CSV_HEADER: &str = "scheme,n_nodes,seed,tz_depth_m,mean_delay_s,p95_delay_s,throughput_bps,jain_index,cch_util,mean_sch_util,relay_opportunity_s,drops_collision,drops_switch,drops_ttl";

/// One row of the metrics CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub scheme: String,
    pub n_nodes: usize,
    pub seed: u64,
    pub tz_depth_m: f64,
    pub mean_delay_s: f64,
    pub p95_delay_s: f64,
    pub throughput_bps: f64,
    pub jain_index: f64,
    pub cch_util: f64,
    pub mean_sch_util: f64,
    pub relay_opportunity_s: f64,
    pub drops_collision: u64,
    pub drops_switch: u64,
    pub drops_ttl: u64,
}

impl RunRecord {
    /// Missing quantities (no deliveries) are recorded as NaN.
    pub fn from_ledger(scheme: &str, n_nodes: usize, seed: u64, tz_depth_m: f64, ledger: &MetricsLedger) -> Self {
        let util = channel_utilization(ledger);
        let sch: Vec<f64> = ChannelId::SCHS.iter().map(|c| util[c]).collect();
        RunRecord {
            scheme: scheme.to_string(),
            n_nodes,
            seed,
            tz_depth_m,
            mean_delay_s: mean_delay(ledger).unwrap_or(f64::NAN),
            p95_delay_s: p95_delay(ledger).unwrap_or(f64::NAN),
            throughput_bps: throughput(ledger),
            jain_index: jain_index(&ledger.per_node_delivered).unwrap_or(f64::NAN),
            cch_util: util[&ChannelId::CCH],
            mean_sch_util: sch.iter().sum::<f64>() / sch.len() as f64,
            relay_opportunity_s: ledger.relay_seconds,
            drops_collision: ledger.drops.collision,
            drops_switch: ledger.drops.switch,
            drops_ttl: ledger.drops.ttl,
        }
    }

    pub fn to_csv_line(&self) -> String {
        let mut s = String::new();
        write!(
            s,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            self.scheme,
            self.n_nodes,
            self.seed,
            self.tz_depth_m,
            self.mean_delay_s,
            self.p95_delay_s,
            self.throughput_bps,
            self.jain_index,
            self.cch_util,
            self.mean_sch_util,
            self.relay_opportunity_s,
            self.drops_collision,
            self.drops_switch,
            self.drops_ttl
        )
        .expect("write to String");
        s
    }

    pub fn parse_csv_line(line: &str) -> Option<RunRecord> {
        let f: Vec<&str> = line.trim_end().split(',').collect();
        if f.len() != 14 {
            return None;
        }
        let fl = |i: usize| f[i].parse::<f64>().ok();
        let int = |i: usize| f[i].parse::<u64>().ok();
        Some(RunRecord {
            scheme: f[0].to_string(),
            n_nodes: f[1].parse().ok()?,
            seed: int(2)?,
            tz_depth_m: fl(3)?,
            mean_delay_s: fl(4)?,
            p95_delay_s: fl(5)?,
            throughput_bps: fl(6)?,
            jain_index: fl(7)?,
            cch_util: fl(8)?,
            mean_sch_util: fl(9)?,
            relay_opportunity_s: fl(10)?,
            drops_collision: int(11)?,
            drops_switch: int(12)?,
            drops_ttl: int(13)?,
        })
    }
}
