use std::collections::BTreeMap;

use proptest::prelude::*;

use gridmc::channel_plan::{default_plan, ChannelId};
use gridmc::grid_map::{GridMap, Point, Topology, Vec2};
use gridmc::mac_engine::{propagate, resolve_collisions, run, run_traced, MacParams, Receiver, Scheme, SimParams, World};
use gridmc::metrics::{mean_delay, FrameKind};
use gridmc::mobility::{spawn_scenario, Side, Vehicle, DEFAULT_SPEED};
use gridmc::radio_controller::{Interface, InterfaceMode, InterfaceTuning};

fn road(tz: f64) -> GridMap {
    GridMap::new(18, 6, 5.0, 1000.0 / 18.0, Point::default(), tz)
        .unwrap()
        .with_topology(Topology::RowTorus)
}

fn world(scheme: Scheme, n: usize, seed: u64, params: SimParams) -> World {
    let grid = road(10.0);
    let vehicles = spawn_scenario(n, &grid, seed, DEFAULT_SPEED);
    World {
        scheme,
        grid,
        plan: default_plan(18).unwrap(),
        vehicles,
        params,
    }
}

struct Line {
    time: f64,
    kind: String,
    node: usize,
    channel: Option<u16>,
    frame: Option<usize>,
    outcome: String,
}

fn traced(w: &World, duration: f64, seed: u64) -> (gridmc::metrics::MetricsLedger, Vec<Line>) {
    let mut buf = Vec::new();
    let ledger = run_traced(w, duration, seed, &mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let lines = text
        .lines()
        .map(|l| {
            let f: Vec<&str> = l.split('\t').collect();
            assert_eq!(f.len(), 6, "{l}");
            Line {
                time: f[0].parse().unwrap(),
                kind: f[1].to_string(),
                node: f[2].parse().unwrap(),
                channel: f[3].parse().ok(),
                frame: f[4].parse().ok(),
                outcome: f[5].to_string(),
            }
        })
        .collect();
    (ledger, lines)
}

fn busy_params() -> SimParams {
    let mut p = SimParams::default();
    p.warmup = 1.0;
    p
}

#[test]
fn mean_delay_matches_trace_recomputation() {
    for scheme in [Scheme::Grid, Scheme::DcfBaseline] {
        let w = world(scheme, 40, 3, busy_params());
        let (ledger, lines) = traced(&w, 6.0, 3);
        let mut created: BTreeMap<usize, (f64, String)> = BTreeMap::new();
        let mut delays = Vec::new();
        for l in &lines {
            match l.kind.as_str() {
                "generate" => {
                    created.insert(l.frame.unwrap(), (l.time, l.outcome.clone()));
                }
                "deliver" => {
                    let (t0, kind) = &created[&l.frame.unwrap()];
                    if *t0 >= 1.0 && kind != "bootstrap" {
                        delays.push(l.time - t0);
                    }
                }
                _ => {}
            }
        }
        let oracle = delays.iter().sum::<f64>() / delays.len() as f64;
        let module = mean_delay(&ledger).unwrap();
        // trace times carry 9 decimals
        assert!((oracle - module).abs() < 1e-8, "{scheme:?}: {oracle} vs {module}");
    }
}

#[test]
fn trace_respects_tuning_and_causality() {
    let p = busy_params();
    let air = p.mac.airtime(p.traffic.payload_bits);
    for scheme in [Scheme::Grid, Scheme::DcfBaseline] {
        let w = world(scheme, 40, 8, p.clone());
        let (_, lines) = traced(&w, 5.0, 8);
        let mut created = BTreeMap::new();
        for l in &lines {
            let on_cch = l.channel == Some(178);
            if l.outcome == "i1" {
                assert!(!on_cch, "W3 interface on the CCH at {}", l.time);
            }
            match l.kind.as_str() {
                "generate" => {
                    created.insert(l.frame.unwrap(), (l.time, l.outcome.clone()));
                }
                "tx_start" => {
                    let (_, kind) = &created[&l.frame.unwrap()];
                    // safety and bootstrap on the CCH, nonsafety on an SCH
                    assert_eq!(on_cch, kind != "nonsafety", "{kind} on {:?}", l.channel);
                }
                "deliver" => {
                    let (t0, kind) = &created[&l.frame.unwrap()];
                    let airtime = if kind == "bootstrap" {
                        p.mac.airtime(p.bootstrap.payload_bits)
                    } else {
                        air
                    };
                    assert!(l.time >= t0 + airtime - 1e-9);
                }
                _ => {}
            }
        }
    }
}

#[test]
fn busy_time_is_union_of_airtimes() {
    let w = world(Scheme::Grid, 60, 2, busy_params());
    let (ledger, lines) = traced(&w, 4.0, 2);
    let mut starts: BTreeMap<usize, (f64, u16)> = BTreeMap::new();
    let mut intervals: BTreeMap<u16, Vec<(f64, f64)>> = BTreeMap::new();
    let mut open = BTreeMap::new();
    for l in &lines {
        match l.kind.as_str() {
            "tx_start" => {
                starts.insert(l.frame.unwrap() * 1000 + *open.entry(l.frame.unwrap()).or_insert(0), (l.time, l.channel.unwrap()));
            }
            "tx_end" => {
                let f = l.frame.unwrap();
                let k = open.get_mut(&f).unwrap();
                let (t0, ch) = starts.remove(&(f * 1000 + *k)).unwrap();
                *k += 1;
                intervals.entry(ch).or_default().push((t0, l.time));
            }
            _ => {}
        }
    }
    // still on air when the run stops
    for (_, (t0, ch)) in starts {
        intervals.entry(ch).or_default().push((t0, 4.0));
    }
    for (ch, mut iv) in intervals {
        iv.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut total = 0.0;
        let mut cur: Option<(f64, f64)> = None;
        for (s, e) in iv {
            let (s, e) = (s.max(1.0), e.min(4.0));
            if e <= s {
                continue;
            }
            cur = match cur {
                Some((cs, ce)) if s <= ce => Some((cs, ce.max(e))),
                Some((cs, ce)) => {
                    total += ce - cs;
                    Some((s, e))
                }
                None => Some((s, e)),
            };
        }
        if let Some((cs, ce)) = cur {
            total += ce - cs;
        }
        let got = ledger.busy_time[&ChannelId::new(ch).unwrap()];
        assert!((got - total).abs() < 1e-6, "channel {ch}: {got} vs {total}");
    }
}

#[test]
fn poisson_arrivals_within_bound() {
    let mut p = SimParams::default();
    p.traffic.safety_hz = 0.0;
    p.traffic.nonsafety_rate = 10.0;
    p.bootstrap.enabled = false;
    for seed in 1..=5 {
        let w = world(Scheme::Grid, 1, seed, p.clone());
        let l = run(&w, 100.0, seed).unwrap();
        let bound = 3.0 * 1000f64.sqrt();
        assert!((l.generated as f64 - 1000.0).abs() <= bound, "seed {seed}: {}", l.generated);
        assert_eq!(l.generated, l.drops.ttl + l.in_flight, "no partner, so every frame expires");
    }
}

#[test]
fn no_nonsafety_means_idle_schs() {
    let mut p = SimParams::default();
    p.traffic.nonsafety_rate = 0.0;
    let l = run(&world(Scheme::Grid, 30, 1, p), 5.0, 1).unwrap();
    for ch in ChannelId::SCHS {
        assert_eq!(l.busy_time.get(&ch).copied().unwrap_or(0.0), 0.0);
    }
    assert!(l.busy_time[&ChannelId::CCH] > 0.0);
}

#[test]
fn tz_zero_has_no_relay_time() {
    let mut w = world(Scheme::Grid, 40, 4, busy_params());
    w.grid = road(0.0);
    let l = run(&w, 5.0, 4).unwrap();
    assert_eq!((l.relay_seconds, l.relay_entries), (0.0, 0));
    let w10 = world(Scheme::Grid, 40, 4, busy_params());
    assert!(run(&w10, 5.0, 4).unwrap().relay_entries > 0);
}

#[test]
fn baseline_scans_six_channels_per_epoch() {
    let mut p = SimParams::default();
    p.traffic.nonsafety_rate = 0.0;
    p.traffic.safety_hz = 0.0;
    let w = world(Scheme::DcfBaseline, 1, 1, p);
    let (_, lines) = traced(&w, 3.5, 1);
    let steps: Vec<&Line> = lines.iter().filter(|l| l.kind == "scan_step").collect();
    assert!(steps.len() >= 18 && steps.len() % 6 == 0, "{}", steps.len());
    for chunk in steps.chunks(6) {
        let chans: Vec<u16> = chunk.iter().map(|l| l.channel.unwrap()).collect();
        assert_eq!(chans, vec![172, 174, 176, 180, 182, 184]);
        // dwell + switch latency per hop
        let span = chunk[5].time - chunk[0].time;
        assert!((span - 5.0 * 0.022).abs() < 1e-6, "{span}");
    }
}

#[test]
fn bootstrap_reach() {
    let mut p = SimParams::default();
    p.traffic.nonsafety_rate = 0.0;
    p.traffic.safety_hz = 0.0;
    let near = Vehicle {
        id: 0,
        position: Point::new(17.5, 510.0),
        velocity: Vec2::new(0.0, DEFAULT_SPEED),
        side: Side::Right,
        tuning: InterfaceTuning::unconfigured(),
    };
    let far = Vehicle {
        id: 1,
        position: Point::new(2.5, 50.0),
        velocity: Vec2::new(0.0, -DEFAULT_SPEED),
        side: Side::Left,
        ..near.clone()
    };
    p.bootstrap.rsu_range = 100.0;
    let w = World {
        scheme: Scheme::Grid,
        grid: road(10.0),
        plan: default_plan(18).unwrap(),
        vehicles: vec![near, far],
        params: p.clone(),
    };
    let (_, lines) = traced(&w, 3.0, 1);
    let first_i1 = |node| lines.iter().find(|l| l.kind == "retune" && l.node == node && l.outcome == "i1");
    let t = first_i1(0).expect("near vehicle configured").time;
    let access = p.mac.difs + 15.0 * p.mac.slot_time + p.mac.airtime(p.bootstrap.payload_bits);
    assert!(t <= p.bootstrap.period + access, "{t}");
    assert!(first_i1(1).is_none(), "far vehicle must stay unconfigured");

    p.bootstrap.enabled = false;
    let w = World { params: p, ..w };
    let (_, lines) = traced(&w, 0.5, 1);
    assert!(lines.iter().any(|l| l.kind == "retune" && l.node == 1 && l.time == 0.0));
}

fn receiver(node: usize, x: f64, y: f64, channel: u16, pending: Option<f64>) -> Receiver {
    Receiver {
        node,
        pos: Point::new(x, y),
        radio: Interface {
            mode: InterfaceMode::W2,
            channel: ChannelId::new(channel).unwrap(),
            enabled: true,
            pending_until: pending,
        },
    }
}

#[test]
fn propagation_membership() {
    let g = road(10.0);
    let r = MacParams::default().tx_range;
    let eps = 1e-6;
    let cands = vec![
        receiver(0, 2.5, 100.0, 172, None),
        receiver(1, 2.5, 100.0 + r - eps, 172, None),
        receiver(2, 2.5, 100.0 + r + eps, 172, None),
        receiver(3, 2.5, 110.0, 174, None),
        receiver(4, 2.5, 110.0, 172, Some(1.0)),
        receiver(5, 2.5, 1000.0 - (r - 100.0) + eps, 172, None),
    ];
    let got = propagate(&g, 0, Point::new(2.5, 100.0), ChannelId::new(172).unwrap(), r, &cands, 0.5);
    // self, out of range, other channel and mid-switch excluded; ring distance used
    assert_eq!(got, vec![1, 5]);
    let later = propagate(&g, 0, Point::new(2.5, 100.0), ChannelId::new(172).unwrap(), r, &cands, 1.0);
    assert_eq!(later, vec![1, 4, 5]);
}

#[test]
fn collision_resolution() {
    assert_eq!(resolve_collisions(&[(0.0, 1.0)]), vec![true]);
    assert_eq!(resolve_collisions(&[(0.0, 1.0), (0.5, 1.5)]), vec![false, false]);
    assert_eq!(resolve_collisions(&[(0.0, 1.0), (1.0, 2.0)]), vec![true, true]);
    assert_eq!(resolve_collisions(&[(0.0, 1.0), (2.0, 3.0), (2.5, 2.6)]), vec![true, false, false]);
}

#[test]
fn seeds_matter_and_repeat() {
    let w = world(Scheme::Grid, 30, 5, busy_params());
    assert_eq!(run(&w, 4.0, 5).unwrap(), run(&w, 4.0, 5).unwrap());
    assert_ne!(run(&w, 4.0, 5).unwrap(), run(&w, 4.0, 6).unwrap());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn conservation_and_bounds(
        n in 0usize..25,
        seed in any::<u64>(),
        baseline in any::<bool>(),
        rate in 0.0f64..40.0,
        latency in prop::sample::select(vec![0.0, 0.002]),
        dwell in prop::sample::select(vec![0.0, 0.02]),
        bootstrap in any::<bool>(),
    ) {
        let mut p = SimParams::default();
        p.warmup = 0.5;
        p.traffic.nonsafety_rate = rate;
        p.mac.switch_latency = latency;
        p.baseline.dwell = dwell;
        p.bootstrap.enabled = bootstrap;
        let scheme = if baseline { Scheme::DcfBaseline } else { Scheme::Grid };
        let w = world(scheme, n, seed, p);
        let l = run(&w, 3.0, seed).unwrap();
        prop_assert!(l.is_conserved(), "{:?}", l);
        for &b in l.busy_time.values() {
            prop_assert!(b >= 0.0 && b <= l.duration() + 1e-9);
        }
        prop_assert!(l.delay_samples.iter().all(|s| s.delay > 0.0));
        prop_assert!(l.delay_samples.iter().all(|s| s.kind != FrameKind::Bootstrap || bootstrap));
        prop_assert!(l.access_delays.iter().all(|&a| a >= w.params.mac.difs - 1e-12));
        if n == 0 {
            prop_assert_eq!(l.generated, 0);
        }
    }
}
