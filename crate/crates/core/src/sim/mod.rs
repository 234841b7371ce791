//! Discrete-event model of the three-echelon make-to-order flow line.
//!
//! Orders arrive as a Poisson stream and queue FCFS in front of the supplier
//! (unbounded backlog). Supplier, manufacturer and distributor are single
//! servers in series with exponential service times. The manufacturer and
//! distributor buffers are finite; a finished unit that finds the downstream
//! buffer full stays in its server (blocking after service).

mod dataset;
mod engine;

pub use dataset::{
    generate_scenario_dataset, read_dataset, sample_disruption_window, scenario_spec, write_dataset,
    DatasetManifest, ReplicationEntry, ScenarioDataset, DATASET_FORMAT_VERSION,
};
pub use engine::{aggregate_day, run_replication, run_saturated, DayAccumulator, SaturatedRun};

use crate::error::{Error, Result};
use rand::Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};
use std::fmt;

pub const NUM_STAGES: usize = 3;
pub const NUM_FEATURES: usize = 13;
pub const HOURS_PER_DAY: usize = 24;

/// Column names of the daily feature vector, in order.
pub const FEATURE_NAMES: [&str; NUM_FEATURES] = [
    "interarrival_time",
    "supplier_processing_time",
    "manufacturer_processing_time",
    "distributor_processing_time",
    "supplier_queue_length",
    "manufacturer_queue_length",
    "distributor_queue_length",
    "wip",
    "lead_time",
    "flow_time",
    "waiting_time",
    "processing_time",
    "daily_output",
];

pub mod feature {
    pub const INTERARRIVAL: usize = 0;
    pub const PROC_TIME: [usize; 3] = [1, 2, 3];
    pub const QUEUE_LEN: [usize; 3] = [4, 5, 6];
    pub const WIP: usize = 7;
    pub const LEAD_TIME: usize = 8;
    pub const FLOW_TIME: usize = 9;
    pub const WAITING_TIME: usize = 10;
    pub const TOTAL_PROC_TIME: usize = 11;
    pub const OUTPUT: usize = 12;
}

/// Simulation parameters. Defaults are the reference configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimParams {
    pub num_replications: usize,
    /// Last simulated day index; days `0..=replication_length` are simulated.
    pub replication_length: u32,
    pub warmup: u32,
    pub arrival_rate: f64,
    pub order_qty: u32,
    pub service_rates: [f64; NUM_STAGES],
    /// Queue capacity in front of each server, `None` for unbounded.
    pub buffer_caps: [Option<usize>; NUM_STAGES],
    pub server_caps: [usize; NUM_STAGES],
    pub disruption_duration_range: (u32, u32),
    pub disruption_onset_range: (u32, u32),
    pub disrupted_arrival_rate: f64,
    pub disrupted_service_rate: f64,
    pub base_seed: u64,
}

impl Default for SimParams {
    fn default() -> Self {
        SimParams {
            num_replications: 300,
            replication_length: 1095,
            warmup: 180,
            arrival_rate: 15.0,
            order_qty: 1,
            service_rates: [18.0, 19.0, 20.0],
            buffer_caps: [None, Some(15), Some(10)],
            server_caps: [1, 1, 1],
            disruption_duration_range: (30, 60),
            disruption_onset_range: (300, 600),
            disrupted_arrival_rate: 30.0,
            disrupted_service_rate: 0.0,
            base_seed: 20_220_915,
        }
    }
}

impl SimParams {
    pub fn validate(&self) -> Result<()> {
        let rates = self
            .service_rates
            .iter()
            .chain([
                &self.arrival_rate,
                &self.disrupted_arrival_rate,
                &self.disrupted_service_rate,
            ]);
        for &r in rates {
            if !(r.is_finite() && r >= 0.0) {
                return Err(Error::Param(format!("rate {r} must be finite and >= 0")));
            }
        }
        if self.warmup >= self.replication_length {
            return Err(Error::Param(format!(
                "warmup {} must be shorter than replication length {}",
                self.warmup, self.replication_length
            )));
        }
        let (dmin, dmax) = self.disruption_duration_range;
        let (omin, omax) = self.disruption_onset_range;
        if dmin > dmax || omin > omax {
            return Err(Error::Param("empty disruption range".into()));
        }
        if omax + dmax >= self.replication_length {
            return Err(Error::Param(format!(
                "latest disruption end {} must precede replication end {}",
                omax + dmax,
                self.replication_length
            )));
        }
        if self.buffer_caps[0].is_some() {
            return Err(Error::Param(
                "supplier buffer must be unbounded (orders are backlogged)".into(),
            ));
        }
        if self.server_caps != [1, 1, 1] {
            return Err(Error::Param(
                "only single-server echelons are supported".into(),
            ));
        }
        if self.order_qty == 0 {
            return Err(Error::Param("order quantity must be >= 1".into()));
        }
        Ok(())
    }

    /// Number of post-warmup daily records per replication.
    pub fn records_per_replication(&self) -> usize {
        (self.replication_length - self.warmup + 1) as usize
    }

    /// Rate in force for `role` at time `t` (days) under `spec`.
    pub fn effective_rate(&self, spec: &ScenarioSpec, t: f64, role: RateRole) -> f64 {
        let base = match role {
            RateRole::Arrival => self.arrival_rate,
            RateRole::Stage(i) => self.service_rates[i],
        };
        let disrupted = match role {
            RateRole::Arrival => self.disrupted_arrival_rate,
            RateRole::Stage(_) => self.disrupted_service_rate,
        };
        effective_rate(base, disrupted, spec, t, role)
    }
}

/// Whose rate is being asked for.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RateRole {
    Arrival,
    /// Zero-based stage index (0 supplier, 1 manufacturer, 2 distributor).
    Stage(usize),
}

/// Rate for `role` at time `t`: `disrupted` inside the scenario's window when
/// the scenario targets that role, `base` otherwise.
pub fn effective_rate(base: f64, disrupted: f64, spec: &ScenarioSpec, t: f64, role: RateRole) -> f64 {
    let Some(window) = spec.window else {
        return base;
    };
    if !window.contains(t) {
        return base;
    }
    let hit = match (spec.scenario, role) {
        (Scenario::S4, RateRole::Arrival) => true,
        (s, RateRole::Stage(i)) => s.disrupted_stage() == Some(i),
        _ => false,
    };
    if hit {
        disrupted
    } else {
        base
    }
}

/// Exponential holding time with the given rate. `Ok(None)` means the event
/// never fires (rate zero).
pub fn sample_event_time<R: Rng + ?Sized>(rate: f64, rng: &mut R) -> Result<Option<f64>> {
    if !(rate >= 0.0) || !rate.is_finite() {
        return Err(Error::Param(format!("event rate {rate} must be finite and >= 0")));
    }
    if rate == 0.0 {
        return Ok(None);
    }
    let exp = Exp::new(rate).map_err(|e| Error::Param(e.to_string()))?;
    Ok(Some(exp.sample(rng)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Scenario {
    S0,
    S1,
    S2,
    S3,
    S4,
}

impl Scenario {
    pub const ALL: [Scenario; 5] = [
        Scenario::S0,
        Scenario::S1,
        Scenario::S2,
        Scenario::S3,
        Scenario::S4,
    ];
    pub const DISRUPTED: [Scenario; 4] = [Scenario::S1, Scenario::S2, Scenario::S3, Scenario::S4];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn disrupted_stage(self) -> Option<usize> {
        match self {
            Scenario::S1 => Some(0),
            Scenario::S2 => Some(1),
            Scenario::S3 => Some(2),
            _ => None,
        }
    }

    pub fn is_disrupted(self) -> bool {
        self != Scenario::S0
    }

    pub fn description(self) -> &'static str {
        match self {
            Scenario::S0 => "normal operation",
            Scenario::S1 => "capacity loss at the supplier",
            Scenario::S2 => "capacity loss at the manufacturer",
            Scenario::S3 => "capacity loss at the distributor",
            Scenario::S4 => "surge in demand",
        }
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "S{}", self.index())
    }
}

impl std::str::FromStr for Scenario {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "S0" | "0" => Ok(Scenario::S0),
            "S1" | "1" => Ok(Scenario::S1),
            "S2" | "2" => Ok(Scenario::S2),
            "S3" | "3" => Ok(Scenario::S3),
            "S4" | "4" => Ok(Scenario::S4),
            other => Err(Error::Param(format!("unknown scenario '{other}'"))),
        }
    }
}

/// Disruption interval `[onset, onset + duration)` in whole days.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DisruptionWindow {
    pub onset: u32,
    pub duration: u32,
}

impl DisruptionWindow {
    pub fn end(&self) -> u32 {
        self.onset + self.duration
    }

    pub fn contains(&self, t: f64) -> bool {
        t >= self.onset as f64 && t < self.end() as f64
    }

    pub fn contains_day(&self, day: u32) -> bool {
        day >= self.onset && day < self.end()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub scenario: Scenario,
    pub window: Option<DisruptionWindow>,
}

impl ScenarioSpec {
    pub fn normal() -> Self {
        ScenarioSpec {
            scenario: Scenario::S0,
            window: None,
        }
    }

    pub fn disrupted(scenario: Scenario, onset: u32, duration: u32) -> Result<Self> {
        if !scenario.is_disrupted() {
            return Err(Error::Param("S0 carries no disruption window".into()));
        }
        if duration == 0 {
            return Err(Error::Param("disruption duration must be positive".into()));
        }
        Ok(ScenarioSpec {
            scenario,
            window: Some(DisruptionWindow { onset, duration }),
        })
    }
}

/// One simulated day's feature vector.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DailyRecord {
    pub day: u32,
    pub features: [f64; NUM_FEATURES],
}

impl DailyRecord {
    pub fn output(&self) -> f64 {
        self.features[feature::OUTPUT]
    }

    pub fn wip(&self) -> f64 {
        self.features[feature::WIP]
    }
}

/// Book-keeping captured at a day boundary; used to audit model invariants.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct DayBalance {
    pub day: u32,
    pub cumulative_arrivals: u64,
    pub cumulative_fulfilled: u64,
    /// Orders released to the supplier but not yet fulfilled.
    pub in_process: u64,
    /// Orders waiting in front of the supplier.
    pub backlog: u64,
    pub max_queue: [usize; NUM_STAGES],
}

/// Counts of invariant violations seen during a run. All zero for a correct
/// engine; kept as data so tests can assert on them.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RunAudit {
    pub buffer_overflows: u64,
    pub blocked_without_full_downstream: u64,
    pub fcfs_violations: u64,
    pub disrupted_completions: u64,
    pub fulfilled: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplicationTrace {
    pub spec: ScenarioSpec,
    pub rep_index: usize,
    pub seed: u64,
    pub records: Vec<DailyRecord>,
    pub balances: Vec<DayBalance>,
    pub audit: RunAudit,
}

impl ReplicationTrace {
    pub fn first_day(&self) -> u32 {
        self.records.first().map(|r| r.day).unwrap_or(0)
    }

    pub fn last_day(&self) -> u32 {
        self.records.last().map(|r| r.day).unwrap_or(0)
    }
}
