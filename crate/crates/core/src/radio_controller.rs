//! Interface tuning for the two on-board interfaces.
//!
//! `I1` runs in W3 mode (service channels only) and `I2` in W2 mode (CCH or
//! SCH). The grid scheme retunes from position alone; the baseline keeps
//! `I2` on the CCH and periodically scans all SCHs with `I1` before parking
//! on the least busy one.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::channel_plan::{ChannelId, ChannelPlan};
use crate::grid_map::{GridMap, Topology, TzStatus};
use crate::mobility::Vehicle;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum InterfaceMode {
    W2,
    W3,
}

impl InterfaceMode {
    pub fn permits(self, channel: ChannelId) -> bool {
        match self {
            InterfaceMode::W2 => true,
            InterfaceMode::W3 => channel.is_sch(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Interface {
    pub mode: InterfaceMode,
    pub channel: ChannelId,
    /// A disabled interface neither transmits nor receives.
    pub enabled: bool,
    /// Deaf until this instant after a retune.
    pub pending_until: Option<f64>,
}

impl Interface {
    pub fn is_switching(&self, now: f64) -> bool {
        self.pending_until.is_some_and(|t| now < t)
    }

    pub fn is_live(&self, now: f64) -> bool {
        self.enabled && !self.is_switching(now)
    }

    /// Retunes to `channel`, stamping the switch latency if anything changed.
    fn retuned(self, channel: ChannelId, now: f64, latency: f64) -> Interface {
        debug_assert!(self.mode.permits(channel));
        if self.enabled && self.channel == channel {
            return self;
        }
        Interface {
            mode: self.mode,
            channel,
            enabled: true,
            pending_until: (latency > 0.0).then_some(now + latency),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InterfaceTuning {
    pub i1: Interface,
    pub i2: Interface,
}

impl InterfaceTuning {
    /// Before bootstrap: `I2` listens on the CCH and `I1` is parked disabled
    /// on the first SCH (a W3 interface cannot hold the CCH).
    pub fn unconfigured() -> Self {
        InterfaceTuning {
            i1: Interface {
                mode: InterfaceMode::W3,
                channel: ChannelId::SCHS[0],
                enabled: false,
                pending_until: None,
            },
            i2: Interface {
                mode: InterfaceMode::W2,
                channel: ChannelId::CCH,
                enabled: true,
                pending_until: None,
            },
        }
    }

    pub fn is_configured(&self) -> bool {
        self.i1.enabled
    }

    /// Both interfaces hold distinct service channels.
    pub fn holds_two_schs(&self) -> bool {
        self.i1.enabled && self.i2.enabled && self.i2.channel.is_sch() && self.i1.channel != self.i2.channel
    }

    pub fn get(&self, slot: usize) -> &Interface {
        match slot {
            0 => &self.i1,
            _ => &self.i2,
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum RadioError {
    #[error("channel plan is {plan_rows}x{plan_cols} but the grid is {rows}x{cols}")]
    PlanDoesNotCoverGrid {
        rows: usize,
        cols: usize,
        plan_rows: usize,
        plan_cols: usize,
    },
    #[error("no busy measurement for channel {0}")]
    MissingMeasurement(ChannelId),
}

/// Position-driven tuning rules of the grid scheme.
#[derive(Debug, Clone)]
pub struct GridScheme {
    grid: GridMap,
    plan: ChannelPlan,
    switch_latency: f64,
}

impl GridScheme {
    pub fn new(grid: GridMap, plan: ChannelPlan, switch_latency: f64) -> Result<Self, RadioError> {
        if plan.rows() < grid.rows() || plan.cols() < grid.cols() {
            return Err(RadioError::PlanDoesNotCoverGrid {
                rows: grid.rows(),
                cols: grid.cols(),
                plan_rows: plan.rows(),
                plan_cols: plan.cols(),
            });
        }
        Ok(GridScheme {
            grid,
            plan,
            switch_latency,
        })
    }

    pub fn grid(&self) -> &GridMap {
        &self.grid
    }

    pub fn plan(&self) -> &ChannelPlan {
        &self.plan
    }

    /// Channels `(I1, I2)` the rules ask for at the vehicle's position.
    pub fn targets(&self, vehicle: &Vehicle) -> (ChannelId, ChannelId) {
        let cell = self.grid.locate(vehicle.position);
        let i1 = self.plan.at(cell.row, cell.col);
        let i2 = match self.grid.transition_state(vehicle.position, vehicle.velocity) {
            TzStatus::NotInTz => self.plan.cch(),
            TzStatus::InTz { next_cell, .. } => self.plan.at(next_cell.row, next_cell.col),
        };
        (i1, i2)
    }

    /// Applies the rules to the vehicle's current tuning.
    pub fn grid_tuning(&self, vehicle: &Vehicle, now: f64) -> InterfaceTuning {
        let (c1, c2) = self.targets(vehicle);
        InterfaceTuning {
            i1: vehicle.tuning.i1.retuned(c1, now, self.switch_latency),
            i2: vehicle.tuning.i2.retuned(c2, now, self.switch_latency),
        }
    }

    pub fn is_torus(&self) -> bool {
        self.grid.topology() == Topology::RowTorus
    }
}

/// Least-congested channel selection state for one baseline vehicle.
#[derive(Debug, Clone, PartialEq)]
pub struct ScanState {
    pub busy_fraction: BTreeMap<ChannelId, f64>,
    /// Index into [`ChannelId::SCHS`] while scanning; 6 once a scan is done.
    pub scan_position: usize,
    pub dwell_remaining: f64,
    /// Channel `I1` parks on between scans.
    pub parked: ChannelId,
}

impl Default for ScanState {
    fn default() -> Self {
        ScanState {
            busy_fraction: BTreeMap::new(),
            scan_position: ChannelId::SCHS.len(),
            dwell_remaining: 0.0,
            parked: ChannelId::SCHS[0],
        }
    }
}

impl ScanState {
    pub fn is_scanning(&self) -> bool {
        self.scan_position < ChannelId::SCHS.len()
    }

    pub fn begin_epoch(&mut self, dwell: f64) {
        self.busy_fraction.clear();
        self.scan_position = 0;
        self.dwell_remaining = dwell;
    }

    /// Stores the dwell measurement for the channel being scanned and moves
    /// on; after the last channel the least congested one is parked on.
    pub fn record(&mut self, fraction: f64, dwell: f64) {
        if !self.is_scanning() {
            return;
        }
        let ch = ChannelId::SCHS[self.scan_position];
        self.busy_fraction.insert(ch, fraction.clamp(0.0, 1.0));
        self.scan_position += 1;
        self.dwell_remaining = if self.is_scanning() { dwell } else { 0.0 };
        if !self.is_scanning() {
            if let Ok(ch) = least_congested(self) {
                self.parked = ch;
            }
        }
    }

    /// Channel `I1` should hold right now.
    pub fn current_channel(&self) -> ChannelId {
        if self.is_scanning() {
            ChannelId::SCHS[self.scan_position]
        } else {
            self.parked
        }
    }
}

/// Argmin busy fraction, ties to the lowest channel number.
pub fn least_congested(scan: &ScanState) -> Result<ChannelId, RadioError> {
    let mut best: Option<(ChannelId, f64)> = None;
    for ch in ChannelId::SCHS {
        let f = *scan
            .busy_fraction
            .get(&ch)
            .ok_or(RadioError::MissingMeasurement(ch))?;
        if best.map_or(true, |(_, b)| f < b) {
            best = Some((ch, f));
        }
    }
    Ok(best.expect("six service channels").0)
}

/// Baseline tuning: `I2` fixed on the CCH, `I1` follows the scan.
pub fn baseline_tuning(vehicle: &Vehicle, scan: &ScanState, now: f64, switch_latency: f64) -> InterfaceTuning {
    InterfaceTuning {
        i1: vehicle.tuning.i1.retuned(scan.current_channel(), now, switch_latency),
        i2: vehicle.tuning.i2.retuned(ChannelId::CCH, now, switch_latency),
    }
}
