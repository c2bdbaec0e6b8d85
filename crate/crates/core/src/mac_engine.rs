//! Discrete-event core: DCF medium access per interface, unit-disk
//! propagation with no capture, traffic sources and the RSU bootstrap.
//!
//! Every vehicle carries two interfaces. Events are ordered by
//! `(time, insertion sequence)`, so a run is a pure function of the world
//! and the seed.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BinaryHeap, VecDeque};
use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};
use thiserror::Error;

use crate::channel_plan::{ChannelId, ChannelPlan};
use crate::grid_map::{GridMap, Point, Topology};
use crate::metrics::{DelaySample, FrameKind, MetricsLedger};
use crate::mobility::Vehicle;
use crate::radio_controller::{baseline_tuning, GridScheme, Interface, InterfaceTuning, ScanState};

/// Retune checks fire this long after the analytic boundary crossing so the
/// sampled position is strictly past the boundary. Tuning changes therefore
/// lag the geometry by at most this step.
pub const MOBILITY_STEP: f64 = 1e-7;
const SAME_INSTANT: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct MacParams {
    pub slot_time: f64,
    pub sifs: f64,
    pub difs: f64,
    pub cw_min: u32,
    pub cw_max: u32,
    pub data_rate: f64,
    pub max_retries: u32,
    pub tx_range: f64,
    pub switch_latency: f64,
    /// PLCP preamble and header duration.
    pub phy_overhead: f64,
    pub mac_header_bits: u32,
    pub ack_bits: u32,
}

impl Default for MacParams {
    fn default() -> Self {
        MacParams {
            slot_time: 13e-6,
            sifs: 32e-6,
            difs: 58e-6,
            cw_min: 15,
            cw_max: 1023,
            data_rate: 6e6,
            max_retries: 4,
            tx_range: 55.0,
            switch_latency: 0.002,
            phy_overhead: 40e-6,
            mac_header_bits: 272,
            ack_bits: 112,
        }
    }
}

impl MacParams {
    pub fn airtime(&self, payload_bits: u32) -> f64 {
        self.phy_overhead + f64::from(payload_bits + self.mac_header_bits) / self.data_rate
    }

    pub fn ack_wait(&self) -> f64 {
        self.sifs + self.phy_overhead + f64::from(self.ack_bits) / self.data_rate
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.cw_min > self.cw_max {
            return Err("cw_min must not exceed cw_max".into());
        }
        if !(self.sifs > 0.0 && self.difs > self.sifs) {
            return Err("need difs > sifs > 0".into());
        }
        let pos = [self.slot_time, self.data_rate, self.tx_range];
        if pos.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err("slot_time, data_rate and tx_range must be positive".into());
        }
        if !(self.switch_latency >= 0.0 && self.phy_overhead >= 0.0) {
            return Err("switch_latency and phy_overhead must be >= 0".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrafficParams {
    pub safety_hz: f64,
    /// Poisson arrival rate of nonsafety frames per vehicle (1/s).
    pub nonsafety_rate: f64,
    pub payload_bits: u32,
    pub nonsafety_ttl: f64,
    /// Queued safety beacons older than this are superseded.
    pub safety_ttl: f64,
    /// Retry interval while a nonsafety frame has no reachable destination.
    pub probe_interval: f64,
}

impl Default for TrafficParams {
    fn default() -> Self {
        TrafficParams {
            safety_hz: 10.0,
            nonsafety_rate: 10.0,
            payload_bits: 4000,
            nonsafety_ttl: 1.0,
            safety_ttl: 0.1,
            probe_interval: 0.01,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BaselineParams {
    pub dwell: f64,
    pub epoch: f64,
}

impl Default for BaselineParams {
    fn default() -> Self {
        BaselineParams {
            dwell: 0.02,
            epoch: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BootstrapParams {
    pub enabled: bool,
    pub period: f64,
    /// RSU radio range; the RSU sits at the grid centre.
    pub rsu_range: f64,
    pub payload_bits: u32,
}

impl Default for BootstrapParams {
    fn default() -> Self {
        BootstrapParams {
            enabled: true,
            period: 0.5,
            rsu_range: 600.0,
            payload_bits: 800,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Scheme {
    Grid,
    DcfBaseline,
}

impl Scheme {
    pub fn as_str(self) -> &'static str {
        match self {
            Scheme::Grid => "grid",
            Scheme::DcfBaseline => "dcf-baseline",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SimParams {
    pub mac: MacParams,
    pub traffic: TrafficParams,
    pub baseline: BaselineParams,
    pub bootstrap: BootstrapParams,
    pub warmup: f64,
}

#[derive(Debug, Clone)]
pub struct World {
    pub scheme: Scheme,
    pub grid: GridMap,
    pub plan: ChannelPlan,
    pub vehicles: Vec<Vehicle>,
    pub params: SimParams,
}

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("event at t={event} scheduled in the past (now {now})")]
    Causality { now: f64, event: f64 },
    #[error("invalid world: {0}")]
    InvalidWorld(String),
    #[error("trace write failed: {0}")]
    Trace(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dest {
    Broadcast,
    Node(usize),
}

#[derive(Debug, Clone)]
pub struct Frame {
    pub id: usize,
    pub src: usize,
    pub dst: Dest,
    pub channel: Option<ChannelId>,
    pub kind: FrameKind,
    pub payload_bits: u32,
    pub created_at: f64,
    pub delivered_at: Option<f64>,
    expires_at: f64,
}

type TxId = usize;
type IfaceId = usize;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EventKind {
    TrafficArrival { node: usize, kind: FrameKind },
    BackoffExpiry { iface: IfaceId, gen: u64 },
    TxEnd { tx: TxId },
    AckDone { iface: IfaceId, gen: u64, success: bool },
    SwitchDone { iface: IfaceId, gen: u64 },
    DestProbe { iface: IfaceId, gen: u64 },
    ScanStep { node: usize },
    EpochStart { node: usize },
    RetuneCheck { node: usize, gen: u64 },
}

#[derive(Debug, Clone, Copy)]
pub struct Event {
    pub time: f64,
    pub sequence: u64,
    pub kind: EventKind,
}

impl PartialEq for Event {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for Event {}
impl PartialOrd for Event {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Event {
    // Reversed: BinaryHeap pops the earliest (time, sequence) first.
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .time
            .total_cmp(&self.time)
            .then_with(|| other.sequence.cmp(&self.sequence))
    }
}

/// Deterministic event queue ordered by `(time, sequence)`.
#[derive(Debug, Default)]
pub struct EventQueue {
    heap: BinaryHeap<Event>,
    next_seq: u64,
    now: f64,
}

impl EventQueue {
    pub fn now(&self) -> f64 {
        self.now
    }

    pub fn schedule(&mut self, time: f64, kind: EventKind) -> Result<(), EngineError> {
        if !(time >= self.now) {
            return Err(EngineError::Causality { now: self.now, event: time });
        }
        self.heap.push(Event {
            time,
            sequence: self.next_seq,
            kind,
        });
        self.next_seq += 1;
        Ok(())
    }

    pub fn pop(&mut self) -> Option<Event> {
        let ev = self.heap.pop()?;
        self.now = ev.time;
        Some(ev)
    }

    pub fn peek_time(&self) -> Option<f64> {
        self.heap.peek().map(|e| e.time)
    }

    pub fn len(&self) -> usize {
        self.heap.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heap.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum MacState {
    Idle,
    /// Head frame cannot contend yet (wrong channel, no destination, scan).
    Blocked,
    /// Counting down; an expiry event is scheduled.
    Deferring,
    /// Backoff frozen while the medium is busy.
    Frozen,
    Transmitting,
    AwaitAck,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Role {
    I1,
    I2,
    Rsu,
}

impl Role {
    fn as_str(self) -> &'static str {
        match self {
            Role::I1 => "i1",
            Role::I2 => "i2",
            Role::Rsu => "rsu",
        }
    }
}

#[derive(Debug)]
struct Iface {
    node: usize,
    role: Role,
    radio: Interface,
    switch_gen: u64,
    /// Active transmissions this interface senses.
    sensed: Vec<TxId>,
    busy_since: Option<f64>,
    busy_accum: f64,
    transmitting: Option<TxId>,
    queue: VecDeque<usize>,
    state: MacState,
    cw: u32,
    retries: u32,
    backoff_slots: Option<u32>,
    countdown_origin: f64,
    expiry: f64,
    gen: u64,
    hol_since: Option<f64>,
    first_attempt: bool,
    dst: Option<usize>,
    /// Scanning or unconfigured: no contention.
    hold: bool,
    retune_deferred: bool,
    last_failure: Fate,
}

impl Iface {
    fn new(node: usize, role: Role, radio: Interface, cw_min: u32) -> Self {
        Iface {
            node,
            role,
            radio,
            switch_gen: 0,
            sensed: Vec::new(),
            busy_since: None,
            busy_accum: 0.0,
            transmitting: None,
            queue: VecDeque::new(),
            state: MacState::Idle,
            cw: cw_min,
            retries: 0,
            backoff_slots: None,
            countdown_origin: 0.0,
            expiry: 0.0,
            gen: 0,
            hol_since: None,
            first_attempt: true,
            dst: None,
            hold: false,
            retune_deferred: false,
            last_failure: Fate::Retry,
        }
    }

    fn live(&self, now: f64) -> bool {
        self.radio.is_live(now)
    }

    fn busy_total(&self, now: f64) -> f64 {
        self.busy_accum + self.busy_since.map_or(0.0, |s| now - s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum LossCause {
    None,
    Overlap,
    Detuned,
}

#[derive(Debug)]
struct Listener {
    iface: IfaceId,
    /// Present since the preamble; sensing-only joiners cannot decode.
    from_start: bool,
    loss: LossCause,
}

#[derive(Debug)]
struct Transmission {
    src_iface: IfaceId,
    frame: usize,
    channel: ChannelId,
    start: f64,
    listeners: Vec<Listener>,
    /// In-range nodes that were deaf (mid-switch) at the start.
    deaf: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Fate {
    Delivered,
    Collision,
    Retry,
    Switch,
    Ttl,
    Unreached,
}

#[derive(Debug, Default)]
struct NodeState {
    configured: bool,
    scan: ScanState,
    scan_measure: Option<(f64, f64)>,
    epoch_started: f64,
    epoch_deferred: bool,
    retune_gen: u64,
    relay_since: Option<f64>,
}

/// A potential receiver: one interface of node `node` at `pos`.
#[derive(Debug, Clone, Copy)]
pub struct Receiver {
    pub node: usize,
    pub pos: Point,
    pub radio: Interface,
}

/// Indices of `candidates` that hear a transmission from `src` on `channel`:
/// other nodes within `range` whose interface is live on that channel.
pub fn propagate(grid: &GridMap, src: usize, src_pos: Point, channel: ChannelId, range: f64, candidates: &[Receiver], now: f64) -> Vec<usize> {
    candidates
        .iter()
        .enumerate()
        .filter(|(_, c)| c.node != src && c.radio.channel == channel && c.radio.is_live(now))
        .filter(|(_, c)| distance(grid, src_pos, c.pos) <= range)
        .map(|(i, _)| i)
        .collect()
}

/// Decode outcome at one receiver for transmissions it hears, given as
/// `[start, end)` airtime intervals: a frame survives iff nothing else
/// overlaps it (no capture).
pub fn resolve_collisions(airtimes: &[(f64, f64)]) -> Vec<bool> {
    airtimes
        .iter()
        .enumerate()
        .map(|(i, &(s, e))| {
            airtimes
                .iter()
                .enumerate()
                .all(|(j, &(s2, e2))| j == i || e2 <= s || e <= s2)
        })
        .collect()
}

/// Ring-road distance between two points.
pub fn distance(grid: &GridMap, a: Point, b: Point) -> f64 {
    let dx = a.x - b.x;
    let mut dy = (a.y - b.y).abs();
    if grid.topology() == Topology::RowTorus {
        let len = grid.length();
        dy = dy.rem_euclid(len);
        dy = dy.min(len - dy);
    }
    dx.hypot(dy)
}

struct Sim<'w> {
    world: &'w World,
    p: &'w SimParams,
    scheme: Option<GridScheme>,
    duration: f64,
    q: EventQueue,
    ifaces: Vec<Iface>,
    nodes: Vec<NodeState>,
    n_vehicles: usize,
    rsu: Option<(usize, Point)>,
    frames: Vec<Frame>,
    fates: Vec<Option<Fate>>,
    txs: BTreeMap<TxId, Transmission>,
    active_by_channel: BTreeMap<ChannelId, Vec<TxId>>,
    channel_busy_since: BTreeMap<ChannelId, f64>,
    next_tx: TxId,
    mac_rng: ChaCha8Rng,
    traffic_rng: Vec<ChaCha8Rng>,
    seed: u64,
    ledger: MetricsLedger,
    trace: Option<&'w mut dyn Write>,
}

pub fn run(world: &World, duration: f64, seed: u64) -> Result<MetricsLedger, EngineError> {
    Sim::new(world, duration, seed, None)?.run()
}

/// Like [`run`], also writing one tab-separated line per event:
/// `time kind node channel frame_id outcome`.
pub fn run_traced(world: &World, duration: f64, seed: u64, trace: &mut dyn Write) -> Result<MetricsLedger, EngineError> {
    Sim::new(world, duration, seed, Some(trace))?.run()
}

impl<'w> Sim<'w> {
    fn new(world: &'w World, duration: f64, seed: u64, trace: Option<&'w mut dyn Write>) -> Result<Self, EngineError> {
        let p = &world.params;
        if !(duration > 0.0 && duration.is_finite()) {
            return Err(EngineError::InvalidWorld("duration must be positive".into()));
        }
        if !(p.warmup >= 0.0 && p.warmup < duration) {
            return Err(EngineError::InvalidWorld("warmup must lie in [0, duration)".into()));
        }
        p.mac.validate().map_err(EngineError::InvalidWorld)?;
        let t = &p.traffic;
        if !(t.safety_hz >= 0.0 && t.nonsafety_rate >= 0.0 && t.probe_interval > 0.0) {
            return Err(EngineError::InvalidWorld("traffic rates must be >= 0".into()));
        }
        if world.scheme == Scheme::DcfBaseline && !(p.baseline.epoch > 0.0 && p.baseline.dwell >= 0.0) {
            return Err(EngineError::InvalidWorld("baseline epoch must be positive".into()));
        }
        let scheme = match world.scheme {
            Scheme::Grid => Some(
                GridScheme::new(world.grid.clone(), world.plan.clone(), p.mac.switch_latency)
                    .map_err(|e| EngineError::InvalidWorld(e.to_string()))?,
            ),
            Scheme::DcfBaseline => None,
        };
        for (i, v) in world.vehicles.iter().enumerate() {
            if v.id != i {
                return Err(EngineError::InvalidWorld("vehicle ids must be 0..n".into()));
            }
        }
        let n = world.vehicles.len();
        let use_rsu = world.scheme == Scheme::Grid && p.bootstrap.enabled && n > 0;
        let mut ifaces = Vec::with_capacity(2 * n + 1);
        for v in &world.vehicles {
            let t = InterfaceTuning::unconfigured();
            ifaces.push(Iface::new(v.id, Role::I1, t.i1, p.mac.cw_min));
            ifaces.push(Iface::new(v.id, Role::I2, t.i2, p.mac.cw_min));
        }
        let rsu = use_rsu.then(|| {
            let radio = InterfaceTuning::unconfigured().i2;
            ifaces.push(Iface::new(n, Role::Rsu, radio, p.mac.cw_min));
            (2 * n, world.grid.center())
        });
        let traffic_rng = (0..n)
            .map(|i| {
                let mut r = ChaCha8Rng::seed_from_u64(seed);
                r.set_stream(1000 + i as u64);
                r
            })
            .collect();
        let mut mac_rng = ChaCha8Rng::seed_from_u64(seed);
        mac_rng.set_stream(1);
        Ok(Sim {
            world,
            p,
            scheme,
            duration,
            q: EventQueue::default(),
            ifaces,
            nodes: (0..n).map(|_| NodeState::default()).collect(),
            n_vehicles: n,
            rsu,
            frames: Vec::new(),
            fates: Vec::new(),
            txs: BTreeMap::new(),
            active_by_channel: BTreeMap::new(),
            channel_busy_since: BTreeMap::new(),
            next_tx: 0,
            mac_rng,
            traffic_rng,
            seed,
            ledger: MetricsLedger::new(n, p.warmup, duration),
            trace,
        })
    }

    fn in_window(&self, t: f64) -> bool {
        t >= self.p.warmup && t <= self.duration
    }

    fn trace(&mut self, kind: &str, node: usize, channel: Option<ChannelId>, frame: Option<usize>, outcome: &str) -> Result<(), EngineError> {
        if let Some(w) = self.trace.as_mut() {
            let ch = channel.map_or_else(|| "-".to_string(), |c| c.to_string());
            let fr = frame.map_or_else(|| "-".to_string(), |f| f.to_string());
            writeln!(w, "{:.9}\t{}\t{}\t{}\t{}\t{}", self.q.now(), kind, node, ch, fr, outcome)?;
        }
        Ok(())
    }

    fn vehicle_now(&self, node: usize) -> Vehicle {
        let base = &self.world.vehicles[node];
        let mut v = base.advance(self.q.now(), &self.world.grid);
        v.tuning = InterfaceTuning {
            i1: self.ifaces[2 * node].radio,
            i2: self.ifaces[2 * node + 1].radio,
        };
        v
    }

    fn node_pos(&self, node: usize) -> Point {
        if node < self.n_vehicles {
            self.world.vehicles[node].position_after(self.q.now(), &self.world.grid)
        } else {
            self.rsu.expect("rsu node").1
        }
    }

    fn range_of(&self, iface: IfaceId) -> f64 {
        match self.ifaces[iface].role {
            Role::Rsu => self.p.bootstrap.rsu_range,
            _ => self.p.mac.tx_range,
        }
    }

    fn run(mut self) -> Result<MetricsLedger, EngineError> {
        self.bootstrap_world()?;
        while let Some(t) = self.q.peek_time() {
            if t > self.duration {
                break;
            }
            let ev = self.q.pop().expect("peeked");
            self.dispatch(ev.kind)?;
        }
        self.finish()
    }

    fn bootstrap_world(&mut self) -> Result<(), EngineError> {
        let n = self.n_vehicles;
        let tp = self.p.traffic.clone();
        let preconfigured = self.world.scheme == Scheme::DcfBaseline || self.rsu.is_none();
        for node in 0..n {
            if tp.safety_hz > 0.0 {
                let phase = self.traffic_rng[node].gen_range(0.0..1.0 / tp.safety_hz);
                self.q.schedule(phase, EventKind::TrafficArrival { node, kind: FrameKind::Safety })?;
            }
            if tp.nonsafety_rate > 0.0 {
                let dt = Exp::new(tp.nonsafety_rate).expect("positive rate").sample(&mut self.traffic_rng[node]);
                self.q.schedule(dt, EventKind::TrafficArrival { node, kind: FrameKind::NonSafety })?;
            }
            if preconfigured {
                self.configure(node, true)?;
            }
        }
        if let Some((_, _)) = self.rsu {
            self.q.schedule(0.0, EventKind::TrafficArrival { node: n, kind: FrameKind::Bootstrap })?;
        }
        Ok(())
    }

    /// Enables a vehicle's interfaces; `initial` tunes without switch latency.
    fn configure(&mut self, node: usize, initial: bool) -> Result<(), EngineError> {
        if self.nodes[node].configured {
            return Ok(());
        }
        self.nodes[node].configured = true;
        let now = self.q.now();
        match self.world.scheme {
            Scheme::Grid => {
                if initial {
                    let mut v = self.vehicle_now(node);
                    let scheme = self.scheme.as_ref().expect("grid scheme");
                    v.tuning = scheme.grid_tuning(&v, now);
                    v.tuning.i1.pending_until = None;
                    v.tuning.i2.pending_until = None;
                    self.ifaces[2 * node].radio = v.tuning.i1;
                    self.ifaces[2 * node + 1].radio = v.tuning.i2;
                    self.update_relay(node);
                    self.trace("retune", node, Some(v.tuning.i1.channel), None, "i1")?;
                }
                self.retune_check(node)?;
            }
            Scheme::DcfBaseline => {
                let i1 = &mut self.ifaces[2 * node];
                i1.radio.enabled = true;
                i1.radio.channel = self.nodes[node].scan.parked;
                let mut epochs = ChaCha8Rng::seed_from_u64(self.seed);
                epochs.set_stream(3000 + node as u64);
                let phase = epochs.gen_range(0.0..self.p.baseline.epoch);
                self.q.schedule(now + phase, EventKind::EpochStart { node })?;
            }
        }
        self.try_start(2 * node)?;
        self.try_start(2 * node + 1)?;
        Ok(())
    }

    fn dispatch(&mut self, kind: EventKind) -> Result<(), EngineError> {
        match kind {
            EventKind::TrafficArrival { node, kind } => self.on_arrival(node, kind),
            EventKind::BackoffExpiry { iface, gen } => {
                let f = &self.ifaces[iface];
                if f.gen == gen && f.state == MacState::Deferring {
                    self.start_tx(iface)?;
                }
                Ok(())
            }
            EventKind::TxEnd { tx } => self.on_tx_end(tx),
            EventKind::AckDone { iface, gen, success } => self.on_ack(iface, gen, success),
            EventKind::SwitchDone { iface, gen } => self.on_switch_done(iface, gen),
            EventKind::DestProbe { iface, gen } => {
                if self.ifaces[iface].gen == gen && self.ifaces[iface].state == MacState::Blocked {
                    self.ifaces[iface].state = MacState::Idle;
                    self.try_start(iface)?;
                }
                Ok(())
            }
            EventKind::ScanStep { node } => self.on_scan_step(node),
            EventKind::EpochStart { node } => self.on_epoch(node),
            EventKind::RetuneCheck { node, gen } => {
                if self.nodes[node].retune_gen == gen {
                    self.retune_check(node)?;
                }
                Ok(())
            }
        }
    }

    fn on_arrival(&mut self, node: usize, kind: FrameKind) -> Result<(), EngineError> {
        let now = self.q.now();
        let tp = &self.p.traffic;
        let (iface, dst, bits, ttl, next) = match kind {
            FrameKind::Safety => (2 * node + 1, Dest::Broadcast, tp.payload_bits, tp.safety_ttl, now + 1.0 / tp.safety_hz),
            FrameKind::NonSafety => {
                let dt = Exp::new(tp.nonsafety_rate).expect("positive rate").sample(&mut self.traffic_rng[node]);
                (2 * node, Dest::Node(usize::MAX), tp.payload_bits, tp.nonsafety_ttl, now + dt)
            }
            FrameKind::Bootstrap => {
                let b = &self.p.bootstrap;
                (self.rsu.expect("rsu").0, Dest::Broadcast, b.payload_bits, b.period, now + b.period)
            }
        };
        let id = self.frames.len();
        self.frames.push(Frame {
            id,
            src: node,
            dst,
            channel: None,
            kind,
            payload_bits: bits,
            created_at: now,
            delivered_at: None,
            expires_at: now + ttl,
        });
        self.fates.push(None);
        self.ledger.generated += 1;
        self.trace("generate", node, None, Some(id), kind.as_str())?;
        self.ifaces[iface].queue.push_back(id);
        if next <= self.duration {
            self.q.schedule(next, EventKind::TrafficArrival { node, kind })?;
        }
        self.try_start(iface)
    }

    fn finalize(&mut self, frame: usize, fate: Fate) -> Result<(), EngineError> {
        debug_assert!(self.fates[frame].is_none());
        self.fates[frame] = Some(fate);
        let now = self.q.now();
        let d = &mut self.ledger.drops;
        match fate {
            Fate::Delivered => {
                self.ledger.delivered += 1;
                let f = &mut self.frames[frame];
                f.delivered_at = Some(now);
                let (kind, created, bits, src) = (f.kind, f.created_at, f.payload_bits, f.src);
                if created >= self.p.warmup {
                    self.ledger.delay_samples.push(DelaySample { kind, delay: now - created });
                    if kind == FrameKind::NonSafety {
                        self.ledger.delivered_bits += u64::from(bits);
                        self.ledger.per_node_delivered[src] += 1;
                    }
                }
            }
            Fate::Collision => d.collision += 1,
            Fate::Retry => d.retry += 1,
            Fate::Switch => d.switch += 1,
            Fate::Ttl => d.ttl += 1,
            Fate::Unreached => d.unreached += 1,
        }
        let outcome = match fate {
            Fate::Delivered => "delivered",
            Fate::Collision => "collision",
            Fate::Retry => "retry",
            Fate::Switch => "switch",
            Fate::Ttl => "ttl",
            Fate::Unreached => "unreached",
        };
        let kind = if fate == Fate::Delivered { "deliver" } else { "drop" };
        let (src, ch) = (self.frames[frame].src, self.frames[frame].channel);
        self.trace(kind, src, ch, Some(frame), outcome)
    }

    fn required_channel(&self, iface: IfaceId, frame: usize) -> ChannelId {
        match self.frames[frame].kind {
            FrameKind::Safety | FrameKind::Bootstrap => ChannelId::CCH,
            FrameKind::NonSafety => self.ifaces[iface].radio.channel,
        }
    }

    fn reset_head(&mut self, iface: IfaceId) {
        let f = &mut self.ifaces[iface];
        f.cw = self.p.mac.cw_min;
        f.retries = 0;
        f.backoff_slots = None;
        f.hol_since = None;
        f.first_attempt = true;
        f.dst = None;
    }

    /// Candidate unicast destinations: configured vehicles in range with a
    /// live interface on `channel`.
    fn destinations(&self, src: usize, channel: ChannelId) -> Vec<usize> {
        let pos = self.node_pos(src);
        (0..self.n_vehicles)
            .filter(|&n| n != src && self.nodes[n].configured)
            .filter(|&n| {
                let now = self.q.now();
                [2 * n, 2 * n + 1].iter().any(|&i| {
                    let r = &self.ifaces[i].radio;
                    r.channel == channel && r.is_live(now)
                })
            })
            .filter(|&n| distance(&self.world.grid, pos, self.node_pos(n)) <= self.p.mac.tx_range)
            .collect()
    }

    fn try_start(&mut self, iface: IfaceId) -> Result<(), EngineError> {
        let now = self.q.now();
        let f = &self.ifaces[iface];
        if !matches!(f.state, MacState::Idle | MacState::Blocked) || f.transmitting.is_some() {
            return Ok(());
        }
        if f.hold || !f.live(now) {
            self.ifaces[iface].state = MacState::Blocked;
            return Ok(());
        }
        // superseded or expired frames at the head
        while let Some(&head) = self.ifaces[iface].queue.front() {
            if self.frames[head].expires_at <= now && self.ifaces[iface].hol_since.is_none() {
                self.ifaces[iface].queue.pop_front();
                self.finalize(head, Fate::Ttl)?;
            } else {
                break;
            }
        }
        let Some(&head) = self.ifaces[iface].queue.front() else {
            self.ifaces[iface].state = MacState::Idle;
            return Ok(());
        };
        let need = self.required_channel(iface, head);
        if self.ifaces[iface].radio.channel != need || (need.is_cch() && self.ifaces[iface].role == Role::I1) {
            self.ifaces[iface].state = MacState::Blocked;
            return Ok(());
        }
        if self.frames[head].kind == FrameKind::NonSafety && self.ifaces[iface].dst.is_none() {
            let node = self.ifaces[iface].node;
            let cands = self.destinations(node, need);
            if cands.is_empty() {
                let f = &mut self.ifaces[iface];
                f.state = MacState::Blocked;
                f.gen += 1;
                let gen = f.gen;
                let next = now + self.p.traffic.probe_interval;
                // an expired head is dropped at the next probe
                self.q.schedule(next, EventKind::DestProbe { iface, gen })?;
                return Ok(());
            }
            let pick = cands[self.mac_rng.gen_range(0..cands.len())];
            self.ifaces[iface].dst = Some(pick);
        }
        let cw = self.ifaces[iface].cw;
        if self.ifaces[iface].backoff_slots.is_none() {
            let slots = self.mac_rng.gen_range(0..=cw);
            self.ifaces[iface].backoff_slots = Some(slots);
        }
        let f = &mut self.ifaces[iface];
        if f.hol_since.is_none() {
            f.hol_since = Some(now);
        }
        if f.sensed.is_empty() {
            self.begin_countdown(iface, now)
        } else {
            self.ifaces[iface].state = MacState::Frozen;
            Ok(())
        }
    }

    fn begin_countdown(&mut self, iface: IfaceId, from: f64) -> Result<(), EngineError> {
        let mac = &self.p.mac;
        let f = &mut self.ifaces[iface];
        f.gen += 1;
        f.countdown_origin = from + mac.difs;
        f.expiry = f.countdown_origin + f64::from(f.backoff_slots.unwrap_or(0)) * mac.slot_time;
        f.state = MacState::Deferring;
        let (gen, at) = (f.gen, f.expiry);
        self.q.schedule(at, EventKind::BackoffExpiry { iface, gen })
    }

    fn on_busy(&mut self, iface: IfaceId, now: f64) {
        let slot = self.p.mac.slot_time;
        let f = &mut self.ifaces[iface];
        f.busy_since = Some(now);
        if f.state != MacState::Deferring || f.expiry <= now + SAME_INSTANT {
            return;
        }
        let elapsed = if now > f.countdown_origin {
            ((now - f.countdown_origin) / slot + 1e-9).floor() as u32
        } else {
            0
        };
        let left = f.backoff_slots.unwrap_or(0).saturating_sub(elapsed);
        f.backoff_slots = Some(left);
        f.gen += 1;
        f.state = MacState::Frozen;
    }

    fn on_idle(&mut self, iface: IfaceId, now: f64) -> Result<(), EngineError> {
        let f = &mut self.ifaces[iface];
        if let Some(s) = f.busy_since.take() {
            f.busy_accum += now - s;
        }
        if f.state == MacState::Frozen {
            self.begin_countdown(iface, now)?;
        }
        Ok(())
    }

    fn start_tx(&mut self, iface: IfaceId) -> Result<(), EngineError> {
        let now = self.q.now();
        let frame = *self.ifaces[iface].queue.front().expect("head frame");
        let channel = self.ifaces[iface].radio.channel;
        self.frames[frame].channel = Some(channel);
        if let Some(d) = self.ifaces[iface].dst {
            self.frames[frame].dst = Dest::Node(d);
        }
        if self.ifaces[iface].first_attempt {
            let since = self.ifaces[iface].hol_since.unwrap_or(now);
            if self.frames[frame].created_at >= self.p.warmup {
                self.ledger.access_delays.push(now - since);
            }
            self.ifaces[iface].first_attempt = false;
        }
        let airtime = self.p.mac.airtime(self.frames[frame].payload_bits);
        let tx = self.next_tx;
        self.next_tx += 1;

        // half duplex: whatever we were hearing is lost
        let heard = std::mem::take(&mut self.ifaces[iface].sensed);
        for &other in &heard {
            self.mark_loss(other, iface, LossCause::Overlap);
        }
        self.ifaces[iface].sensed = heard;
        self.ifaces[iface].transmitting = Some(tx);
        self.ifaces[iface].state = MacState::Transmitting;

        let src_node = self.ifaces[iface].node;
        let src_pos = self.node_pos(src_node);
        let range = self.range_of(iface);
        let candidates: Vec<Receiver> = self
            .ifaces
            .iter()
            .map(|f| Receiver {
                node: f.node,
                pos: self.node_pos(f.node),
                radio: f.radio,
            })
            .collect();
        let deaf: Vec<usize> = candidates
            .iter()
            .filter(|c| c.node != src_node && c.radio.enabled && c.radio.channel == channel)
            .filter(|c| c.radio.is_switching(now) && distance(&self.world.grid, src_pos, c.pos) <= range)
            .map(|c| c.node)
            .collect();
        let mut listeners = Vec::new();
        for j in propagate(&self.world.grid, src_node, src_pos, channel, range, &candidates, now) {
            let r = &self.ifaces[j];
            let clean = r.transmitting.is_none() && r.sensed.is_empty();
            if !clean {
                let prior = r.sensed.clone();
                for other in prior {
                    self.mark_loss(other, j, LossCause::Overlap);
                }
            }
            let was_idle = self.ifaces[j].sensed.is_empty();
            self.ifaces[j].sensed.push(tx);
            if was_idle {
                self.on_busy(j, now);
            }
            listeners.push(Listener {
                iface: j,
                from_start: true,
                loss: if clean { LossCause::None } else { LossCause::Overlap },
            });
        }
        self.txs.insert(
            tx,
            Transmission {
                src_iface: iface,
                frame,
                channel,
                start: now,
                listeners,
                deaf,
            },
        );
        let active = self.active_by_channel.entry(channel).or_default();
        if active.is_empty() {
            self.channel_busy_since.insert(channel, now);
        }
        active.push(tx);
        if self.in_window(now) {
            *self.ledger.access_counts.entry(channel).or_insert(0) += 1;
        }
        let role = self.ifaces[iface].role.as_str();
        self.trace("tx_start", src_node, Some(channel), Some(frame), role)?;
        self.q.schedule(now + airtime, EventKind::TxEnd { tx })
    }

    fn mark_loss(&mut self, tx: TxId, iface: IfaceId, cause: LossCause) {
        if let Some(t) = self.txs.get_mut(&tx) {
            for l in t.listeners.iter_mut().filter(|l| l.iface == iface) {
                if l.loss == LossCause::None {
                    l.loss = cause;
                }
            }
        }
    }

    fn add_busy_interval(&mut self, channel: ChannelId, start: f64, end: f64) {
        let lo = start.max(self.p.warmup);
        let hi = end.min(self.duration);
        if hi > lo {
            *self.ledger.busy_time.entry(channel).or_insert(0.0) += hi - lo;
        }
    }

    fn on_tx_end(&mut self, tx: TxId) -> Result<(), EngineError> {
        let now = self.q.now();
        let t = self.txs.remove(&tx).expect("active transmission");
        let active = self.active_by_channel.get_mut(&t.channel).expect("channel list");
        active.retain(|&x| x != tx);
        if active.is_empty() {
            let since = self.channel_busy_since.remove(&t.channel).unwrap_or(t.start);
            self.add_busy_interval(t.channel, since, now);
        }
        let mut decoded: Vec<IfaceId> = Vec::new();
        let mut any_overlap = false;
        let mut any_detuned = false;
        for l in &t.listeners {
            let present = self.ifaces[l.iface].sensed.contains(&tx);
            if present {
                self.ifaces[l.iface].sensed.retain(|&x| x != tx);
                if self.ifaces[l.iface].sensed.is_empty() {
                    self.on_idle(l.iface, now)?;
                }
            }
            if !l.from_start {
                continue;
            }
            match (present, l.loss) {
                (true, LossCause::None) => decoded.push(l.iface),
                (_, LossCause::Overlap) => any_overlap = true,
                _ => any_detuned = true,
            }
        }
        let src = t.src_iface;
        self.ifaces[src].transmitting = None;
        let frame = t.frame;
        self.trace("tx_end", self.ifaces[src].node, Some(t.channel), Some(frame), "-")?;

        match self.frames[frame].dst {
            Dest::Broadcast => {
                self.ifaces[src].queue.pop_front();
                self.reset_head(src);
                self.ifaces[src].state = MacState::Idle;
                if decoded.is_empty() {
                    let fate = if any_overlap {
                        Fate::Collision
                    } else if any_detuned || !t.deaf.is_empty() {
                        Fate::Switch
                    } else {
                        Fate::Unreached
                    };
                    self.finalize(frame, fate)?;
                } else {
                    self.finalize(frame, Fate::Delivered)?;
                    if self.frames[frame].kind == FrameKind::Bootstrap {
                        for i in decoded {
                            let node = self.ifaces[i].node;
                            if node < self.n_vehicles && !self.nodes[node].configured {
                                self.configure(node, false)?;
                            }
                        }
                    }
                }
                self.after_own_tx(src)?;
                self.try_start(src)?;
            }
            Dest::Node(dst) => {
                let success = decoded.iter().any(|&i| self.ifaces[i].node == dst);
                let at_dst = |cause| {
                    t.listeners
                        .iter()
                        .any(|l| l.from_start && l.loss == cause && self.ifaces[l.iface].node == dst)
                };
                let cause = if at_dst(LossCause::Overlap) {
                    Fate::Collision
                } else if at_dst(LossCause::Detuned) || t.deaf.contains(&dst) {
                    Fate::Switch
                } else {
                    Fate::Unreached
                };
                let f = &mut self.ifaces[src];
                f.last_failure = cause;
                f.state = MacState::AwaitAck;
                f.gen += 1;
                let gen = f.gen;
                if success {
                    f.queue.pop_front();
                    self.finalize(frame, Fate::Delivered)?;
                }
                let wait = if success {
                    self.p.mac.ack_wait()
                } else {
                    self.p.mac.ack_wait() + self.p.mac.slot_time
                };
                self.q.schedule(now + wait, EventKind::AckDone { iface: src, gen, success })?;
                self.after_own_tx(src)?;
            }
        }
        Ok(())
    }

    /// Runs retunes and scan epochs that were postponed by our own transmission.
    fn after_own_tx(&mut self, iface: IfaceId) -> Result<(), EngineError> {
        let node = self.ifaces[iface].node;
        if node >= self.n_vehicles {
            return Ok(());
        }
        if self.ifaces[iface].retune_deferred {
            self.ifaces[iface].retune_deferred = false;
            self.apply_tuning(node)?;
        }
        if self.nodes[node].epoch_deferred && self.ifaces[iface].role == Role::I1 {
            self.nodes[node].epoch_deferred = false;
            self.on_epoch(node)?;
        }
        Ok(())
    }

    fn on_ack(&mut self, iface: IfaceId, gen: u64, success: bool) -> Result<(), EngineError> {
        if self.ifaces[iface].gen != gen || self.ifaces[iface].state != MacState::AwaitAck {
            return Ok(());
        }
        let mac = &self.p.mac;
        if success {
            self.reset_head(iface);
        } else {
            let f = &mut self.ifaces[iface];
            f.retries += 1;
            if f.retries > mac.max_retries {
                let head = f.queue.pop_front().expect("failed head");
                // a receiver that was mid-switch gets the blame
                let fate = if f.last_failure == Fate::Switch { Fate::Switch } else { Fate::Retry };
                self.reset_head(iface);
                self.finalize(head, fate)?;
            } else {
                f.cw = (2 * f.cw + 1).min(mac.cw_max);
                f.backoff_slots = None;
            }
        }
        self.ifaces[iface].state = MacState::Idle;
        self.try_start(iface)
    }

    /// Moves an interface to `channel`, making it deaf for the switch latency.
    fn retune(&mut self, iface: IfaceId, target: Interface) -> Result<(), EngineError> {
        let now = self.q.now();
        let cur = self.ifaces[iface].radio;
        if cur.channel == target.channel && cur.enabled == target.enabled {
            return Ok(());
        }
        if self.ifaces[iface].transmitting.is_some() {
            self.ifaces[iface].retune_deferred = true;
            return Ok(());
        }
        let heard = std::mem::take(&mut self.ifaces[iface].sensed);
        for tx in heard {
            self.mark_loss(tx, iface, LossCause::Detuned);
        }
        let f = &mut self.ifaces[iface];
        if let Some(s) = f.busy_since.take() {
            f.busy_accum += now - s;
        }
        let latency = self.p.mac.switch_latency;
        f.radio = Interface {
            mode: cur.mode,
            channel: target.channel,
            enabled: true,
            pending_until: (latency > 0.0).then_some(now + latency),
        };
        f.switch_gen += 1;
        f.gen += 1;
        if matches!(f.state, MacState::Deferring | MacState::Frozen | MacState::Blocked) {
            f.state = MacState::Idle;
        }
        f.backoff_slots = None;
        f.dst = None;
        let (node, gen) = (f.node, f.switch_gen);
        let role = f.role.as_str();
        self.trace("retune", node, Some(target.channel), None, role)?;
        if latency > 0.0 {
            self.q.schedule(now + latency, EventKind::SwitchDone { iface, gen })
        } else {
            self.on_switch_done(iface, gen)
        }
    }

    fn on_switch_done(&mut self, iface: IfaceId, gen: u64) -> Result<(), EngineError> {
        let now = self.q.now();
        if self.ifaces[iface].switch_gen != gen {
            return Ok(());
        }
        self.ifaces[iface].radio.pending_until = None;
        let ch = self.ifaces[iface].radio.channel;
        let node = self.ifaces[iface].node;
        let pos = self.node_pos(node);
        let active: Vec<TxId> = self.active_by_channel.get(&ch).cloned().unwrap_or_default();
        for tx in active {
            let (src_iface, _) = {
                let t = &self.txs[&tx];
                (t.src_iface, t.start)
            };
            let src_node = self.ifaces[src_iface].node;
            if src_node == node {
                continue;
            }
            let range = self.range_of(src_iface);
            if distance(&self.world.grid, pos, self.node_pos(src_node)) > range {
                continue;
            }
            let was_idle = self.ifaces[iface].sensed.is_empty();
            self.ifaces[iface].sensed.push(tx);
            if was_idle {
                self.ifaces[iface].busy_since = Some(now);
            }
            self.txs.get_mut(&tx).expect("tx").listeners.push(Listener {
                iface,
                from_start: false,
                loss: LossCause::Detuned,
            });
        }
        if node < self.n_vehicles && self.ifaces[iface].role == Role::I1 {
            let st = &mut self.nodes[node];
            if st.scan.is_scanning() {
                st.scan_measure = Some((now, self.ifaces[iface].busy_total(now)));
            }
        }
        self.try_start(iface)
    }

    fn update_relay(&mut self, node: usize) {
        let now = self.q.now();
        let t = InterfaceTuning {
            i1: self.ifaces[2 * node].radio,
            i2: self.ifaces[2 * node + 1].radio,
        };
        let st = &mut self.nodes[node];
        match (st.relay_since, t.holds_two_schs()) {
            (None, true) => {
                st.relay_since = Some(now);
                if self.in_window(now) {
                    self.ledger.relay_entries += 1;
                }
            }
            (Some(since), false) => {
                st.relay_since = None;
                let lo = since.max(self.p.warmup);
                let hi = now.min(self.duration);
                if hi > lo {
                    self.ledger.relay_seconds += hi - lo;
                }
            }
            _ => {}
        }
    }

    /// Applies the grid rules at the current instant.
    fn apply_tuning(&mut self, node: usize) -> Result<(), EngineError> {
        if !self.nodes[node].configured {
            return Ok(());
        }
        let now = self.q.now();
        let target = match self.world.scheme {
            Scheme::Grid => {
                let v = self.vehicle_now(node);
                self.scheme.as_ref().expect("grid scheme").grid_tuning(&v, now)
            }
            Scheme::DcfBaseline => {
                let v = self.vehicle_now(node);
                baseline_tuning(&v, &self.nodes[node].scan, now, self.p.mac.switch_latency)
            }
        };
        self.retune(2 * node, target.i1)?;
        self.retune(2 * node + 1, target.i2)?;
        self.update_relay(node);
        self.try_start(2 * node)?;
        self.try_start(2 * node + 1)
    }

    fn retune_check(&mut self, node: usize) -> Result<(), EngineError> {
        self.apply_tuning(node)?;
        let v = self.vehicle_now(node);
        if let Some(dt) = self.world.grid.time_to_next_boundary(v.position, v.velocity) {
            let at = self.q.now() + dt + MOBILITY_STEP;
            if at <= self.duration {
                self.nodes[node].retune_gen += 1;
                let gen = self.nodes[node].retune_gen;
                self.q.schedule(at, EventKind::RetuneCheck { node, gen })?;
            }
        }
        Ok(())
    }

    fn on_epoch(&mut self, node: usize) -> Result<(), EngineError> {
        let i1 = 2 * node;
        if self.ifaces[i1].transmitting.is_some() || self.ifaces[i1].state == MacState::AwaitAck {
            self.nodes[node].epoch_deferred = true;
            if self.ifaces[i1].state == MacState::AwaitAck {
                // wait for the ack outcome, then start
                let at = self.q.now() + self.p.mac.ack_wait() + self.p.mac.slot_time;
                self.nodes[node].epoch_deferred = false;
                return self.q.schedule(at, EventKind::EpochStart { node });
            }
            return Ok(());
        }
        let now = self.q.now();
        let b = &self.p.baseline;
        self.nodes[node].epoch_started = now;
        self.nodes[node].scan.begin_epoch(b.dwell);
        self.ifaces[i1].hold = true;
        self.scan_hop(node)
    }

    fn scan_hop(&mut self, node: usize) -> Result<(), EngineError> {
        let now = self.q.now();
        let i1 = 2 * node;
        let before = self.ifaces[i1].radio.channel;
        self.apply_tuning(node)?;
        let switched = self.ifaces[i1].radio.channel != before;
        if self.nodes[node].scan.is_scanning() {
            let settle = if switched { self.p.mac.switch_latency } else { 0.0 };
            if settle == 0.0 {
                self.nodes[node].scan_measure = Some((now, self.ifaces[i1].busy_total(now)));
            }
            self.q.schedule(now + settle + self.p.baseline.dwell, EventKind::ScanStep { node })
        } else {
            self.ifaces[i1].hold = false;
            self.try_start(i1)?;
            let next = self.nodes[node].epoch_started + self.p.baseline.epoch;
            let next = next.max(now);
            if next <= self.duration {
                self.q.schedule(next, EventKind::EpochStart { node })?;
            }
            Ok(())
        }
    }

    fn on_scan_step(&mut self, node: usize) -> Result<(), EngineError> {
        let now = self.q.now();
        let i1 = 2 * node;
        let dwell = self.p.baseline.dwell;
        let fraction = match self.nodes[node].scan_measure.take() {
            Some((t0, b0)) if now > t0 => (self.ifaces[i1].busy_total(now) - b0) / (now - t0),
            _ => {
                if self.ifaces[i1].sensed.is_empty() {
                    0.0
                } else {
                    1.0
                }
            }
        };
        self.trace("scan_step", node, Some(self.ifaces[i1].radio.channel), None, &format!("{fraction:.4}"))?;
        self.nodes[node].scan.record(fraction, dwell);
        self.scan_hop(node)
    }

    fn finish(mut self) -> Result<MetricsLedger, EngineError> {
        let end = self.duration;
        for (ch, since) in std::mem::take(&mut self.channel_busy_since) {
            self.add_busy_interval(ch, since, end);
        }
        for node in 0..self.n_vehicles {
            if let Some(since) = self.nodes[node].relay_since.take() {
                let lo = since.max(self.p.warmup);
                if end > lo {
                    self.ledger.relay_seconds += end - lo;
                }
            }
        }
        let mut in_flight = 0;
        let mut expired = Vec::new();
        for f in &self.ifaces {
            for (k, &id) in f.queue.iter().enumerate() {
                let active = k == 0 && f.hol_since.is_some();
                if !active && self.frames[id].expires_at <= end {
                    expired.push(id);
                } else {
                    in_flight += 1;
                }
            }
        }
        for id in expired {
            self.finalize(id, Fate::Ttl)?;
        }
        self.ledger.in_flight = in_flight;
        if let Some(w) = self.trace.as_mut() {
            w.flush()?;
        }
        Ok(self.ledger)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel_plan::default_plan;
    use crate::grid_map::Vec2;
    use crate::mobility::{spawn_scenario, Side, DEFAULT_SPEED};

    fn road(tz: f64) -> GridMap {
        GridMap::new(18, 6, 5.0, 1000.0 / 18.0, Point::default(), tz)
            .unwrap()
            .with_topology(Topology::RowTorus)
    }

    fn parked(id: usize, x: f64, y: f64) -> Vehicle {
        Vehicle {
            id,
            position: Point::new(x, y),
            velocity: Vec2::default(),
            side: Side::Right,
            tuning: InterfaceTuning::unconfigured(),
        }
    }

    fn world(scheme: Scheme, vehicles: Vec<Vehicle>, params: SimParams) -> World {
        World {
            scheme,
            grid: road(10.0),
            plan: default_plan(18).unwrap(),
            vehicles,
            params,
        }
    }

    fn quiet() -> SimParams {
        let mut p = SimParams::default();
        p.traffic.nonsafety_rate = 0.0;
        p.bootstrap.enabled = false;
        p
    }

    #[test]
    fn queue_orders_by_time_then_sequence() {
        let mut q = EventQueue::default();
        q.schedule(2.0, EventKind::ScanStep { node: 0 }).unwrap();
        q.schedule(1.0, EventKind::ScanStep { node: 1 }).unwrap();
        q.schedule(1.0, EventKind::ScanStep { node: 2 }).unwrap();
        let order: Vec<_> = std::iter::from_fn(|| q.pop()).map(|e| e.kind).collect();
        assert_eq!(
            order,
            vec![
                EventKind::ScanStep { node: 1 },
                EventKind::ScanStep { node: 2 },
                EventKind::ScanStep { node: 0 }
            ]
        );
        assert!(matches!(
            q.schedule(0.5, EventKind::ScanStep { node: 0 }),
            Err(EngineError::Causality { .. })
        ));
    }

    #[test]
    fn empty_world_is_all_zero() {
        let w = world(Scheme::Grid, vec![], SimParams::default());
        let l = run(&w, 10.0, 1).unwrap();
        assert_eq!(l.generated, 0);
        assert_eq!(l.delivered, 0);
        assert_eq!(l.drops.total(), 0);
        assert!(l.busy_time.values().all(|&b| b == 0.0));
        assert!(l.delay_samples.is_empty());
    }

    #[test]
    fn rejects_bad_worlds() {
        let w = world(Scheme::Grid, vec![], SimParams::default());
        assert!(run(&w, 0.0, 1).is_err());
        let mut p = SimParams::default();
        p.warmup = 20.0;
        assert!(run(&world(Scheme::Grid, vec![], p), 10.0, 1).is_err());
        let mut p = SimParams::default();
        p.mac.cw_min = 2000;
        assert!(run(&world(Scheme::Grid, vec![], p), 10.0, 1).is_err());
    }

    #[test]
    fn single_safety_frame_delay_bounds() {
        let mut p = quiet();
        p.traffic.safety_hz = 0.4;
        let w = world(Scheme::Grid, vec![parked(0, 2.5, 30.0), parked(1, 7.5, 35.0)], p.clone());
        let l = run(&w, 2.0, 3).unwrap();
        let mac = &p.mac;
        let air = mac.airtime(p.traffic.payload_bits);
        assert_eq!(l.delay_samples.len(), 2);
        for s in &l.delay_samples {
            assert!(s.delay >= mac.difs + air - 1e-12);
            assert!(s.delay <= mac.difs + 15.0 * mac.slot_time + air + 1e-12);
        }
        assert!(l.is_conserved());
    }

    #[test]
    fn isolated_broadcast_is_unreached() {
        let mut p = quiet();
        p.traffic.safety_hz = 1.0;
        let w = world(Scheme::Grid, vec![parked(0, 2.5, 30.0), parked(1, 2.5, 500.0)], p);
        let l = run(&w, 3.0, 3).unwrap();
        assert_eq!(l.delivered, 0);
        assert_eq!(l.drops.unreached, l.generated - l.in_flight);
    }

    #[test]
    fn hidden_collision_loses_both() {
        // two senders out of each other's range, one receiver between them
        let mut p = quiet();
        p.traffic.safety_hz = 0.0;
        p.mac.cw_min = 0;
        p.mac.cw_max = 0;
        let vs = vec![parked(0, 2.5, 100.0), parked(1, 2.5, 150.0), parked(2, 2.5, 200.0)];
        let w = world(Scheme::Grid, vs, p);
        let mut sim = Sim::new(&w, 1.0, 1, None).unwrap();
        sim.bootstrap_world().unwrap();
        for node in [0, 2] {
            sim.q
                .schedule(0.1, EventKind::TrafficArrival { node, kind: FrameKind::Safety })
                .unwrap();
        }
        let stop = 0.2;
        while let Some(t) = sim.q.peek_time() {
            if t > stop {
                break;
            }
            let ev = sim.q.pop().unwrap();
            sim.dispatch(ev.kind).unwrap();
        }
        assert_eq!(sim.ledger.drops.collision, 2);
        assert_eq!(sim.ledger.delivered, 0);
    }

    #[test]
    fn unicast_retry_doubles_window() {
        let mut p = quiet();
        p.traffic.safety_hz = 0.0;
        let w = world(Scheme::Grid, vec![parked(0, 2.5, 30.0), parked(1, 2.5, 40.0)], p.clone());
        let mut sim = Sim::new(&w, 1.0, 1, None).unwrap();
        sim.bootstrap_world().unwrap();
        let i = 0;
        sim.ifaces[i].state = MacState::AwaitAck;
        sim.ifaces[i].gen = 7;
        sim.ifaces[i].queue.push_back(0);
        sim.frames.push(Frame {
            id: 0,
            src: 0,
            dst: Dest::Node(1),
            channel: None,
            kind: FrameKind::NonSafety,
            payload_bits: 100,
            created_at: 0.0,
            delivered_at: None,
            expires_at: 1.0,
        });
        sim.fates.push(None);
        sim.on_ack(i, 7, false).unwrap();
        assert_eq!(sim.ifaces[i].cw, 31);
        assert_eq!(sim.ifaces[i].retries, 1);
    }

    #[test]
    fn deterministic_ledgers() {
        let grid = road(10.0);
        let vs = spawn_scenario(30, &grid, 4, DEFAULT_SPEED);
        let mut p = SimParams::default();
        p.warmup = 1.0;
        for scheme in [Scheme::Grid, Scheme::DcfBaseline] {
            let w = World {
                scheme,
                grid: grid.clone(),
                plan: default_plan(18).unwrap(),
                vehicles: vs.clone(),
                params: p.clone(),
            };
            let a = run(&w, 5.0, 9).unwrap();
            let b = run(&w, 5.0, 9).unwrap();
            assert_eq!(a, b);
            assert!(a.is_conserved(), "{scheme:?}: {a:?}");
            assert!(a.delivered > 0);
            for (_, &busy) in &a.busy_time {
                assert!(busy <= a.duration() + 1e-9);
            }
        }
    }

    #[test]
    fn bootstrap_configures_vehicles() {
        let mut p = SimParams::default();
        p.traffic.nonsafety_rate = 0.0;
        p.traffic.safety_hz = 0.0;
        let grid = road(10.0);
        let vs = spawn_scenario(10, &grid, 2, DEFAULT_SPEED);
        let w = World {
            scheme: Scheme::Grid,
            grid,
            plan: default_plan(18).unwrap(),
            vehicles: vs,
            params: p.clone(),
        };
        let mut sim = Sim::new(&w, 3.0, 1, None).unwrap();
        sim.bootstrap_world().unwrap();
        assert!(sim.nodes.iter().all(|n| !n.configured));
        while let Some(t) = sim.q.peek_time() {
            if t > p.bootstrap.period + 0.01 {
                break;
            }
            let ev = sim.q.pop().unwrap();
            sim.dispatch(ev.kind).unwrap();
        }
        assert!(sim.nodes.iter().all(|n| n.configured));
        assert!((0..10).all(|n| sim.ifaces[2 * n].radio.channel.is_sch()));
    }
}
