use super::{
    feature, sample_event_time, DailyRecord, DayBalance, RateRole, ReplicationTrace, RunAudit,
    ScenarioSpec, SimParams, HOURS_PER_DAY, NUM_FEATURES, NUM_STAGES,
};
use crate::error::Result;
use crate::rng::{self, Purpose, StreamRng};
use std::collections::VecDeque;

#[derive(Debug, Clone)]
struct Order {
    id: u64,
    arrival: f64,
    interarrival: f64,
    start: f64,
    proc: [f64; NUM_STAGES],
}

#[derive(Debug)]
enum Server {
    Idle,
    Busy {
        order: Order,
        since: f64,
        completes: Option<f64>,
    },
    Blocked {
        order: Order,
    },
}

#[derive(Debug)]
struct Stage {
    queue: VecDeque<Order>,
    cap: Option<usize>,
    server: Server,
    rate: f64,
}

impl Stage {
    fn new(cap: Option<usize>, rate: f64) -> Self {
        Stage {
            queue: VecDeque::new(),
            cap,
            server: Server::Idle,
            rate,
        }
    }

    fn has_room(&self) -> bool {
        match self.server {
            Server::Idle => true,
            _ => self.cap.map_or(true, |c| self.queue.len() < c),
        }
    }

    fn occupancy(&self) -> usize {
        self.queue.len() + usize::from(!matches!(self.server, Server::Idle))
    }
}

/// Per-day sums from which a [`DailyRecord`] is built.
///
/// Time features are averaged over orders fulfilled during the day; queue
/// lengths and WIP are averaged over the hourly snapshots.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct DayAccumulator {
    pub fulfilled: u64,
    pub interarrival_sum: f64,
    pub proc_sum: [f64; NUM_STAGES],
    pub lead_time_sum: f64,
    pub flow_time_sum: f64,
    pub snapshots: u32,
    pub queue_sum: [f64; NUM_STAGES],
    pub wip_sum: f64,
}

impl DayAccumulator {
    pub fn record_fulfilment(
        &mut self,
        interarrival: f64,
        proc: [f64; NUM_STAGES],
        lead_time: f64,
        flow_time: f64,
    ) {
        self.fulfilled += 1;
        self.interarrival_sum += interarrival;
        for (s, p) in self.proc_sum.iter_mut().zip(proc) {
            *s += p;
        }
        self.lead_time_sum += lead_time;
        self.flow_time_sum += flow_time;
    }

    pub fn record_snapshot(&mut self, queues: [usize; NUM_STAGES], wip: usize) {
        self.snapshots += 1;
        for (s, q) in self.queue_sum.iter_mut().zip(queues) {
            *s += q as f64;
        }
        self.wip_sum += wip as f64;
    }
}

/// Builds the day's record. When nothing was fulfilled the per-order time
/// features are carried over from `previous` (zero if there is none).
pub fn aggregate_day(day: u32, acc: &DayAccumulator, previous: Option<&DailyRecord>) -> DailyRecord {
    let mut f = [0.0; NUM_FEATURES];
    if acc.fulfilled > 0 {
        let n = acc.fulfilled as f64;
        f[feature::INTERARRIVAL] = acc.interarrival_sum / n;
        for i in 0..NUM_STAGES {
            f[feature::PROC_TIME[i]] = acc.proc_sum[i] / n;
        }
        let lt = acc.lead_time_sum / n;
        let ft = acc.flow_time_sum / n;
        f[feature::LEAD_TIME] = lt;
        f[feature::FLOW_TIME] = ft;
        f[feature::WAITING_TIME] = (lt - ft).max(0.0);
        f[feature::TOTAL_PROC_TIME] = acc.proc_sum.iter().sum::<f64>() / n;
    } else if let Some(prev) = previous {
        for idx in time_features() {
            f[idx] = prev.features[idx];
        }
    }
    if acc.snapshots > 0 {
        let m = acc.snapshots as f64;
        for i in 0..NUM_STAGES {
            f[feature::QUEUE_LEN[i]] = acc.queue_sum[i] / m;
        }
        f[feature::WIP] = acc.wip_sum / m;
    }
    f[feature::OUTPUT] = acc.fulfilled as f64;
    DailyRecord { day, features: f }
}

fn time_features() -> impl Iterator<Item = usize> {
    [
        feature::INTERARRIVAL,
        feature::PROC_TIME[0],
        feature::PROC_TIME[1],
        feature::PROC_TIME[2],
        feature::LEAD_TIME,
        feature::FLOW_TIME,
        feature::WAITING_TIME,
        feature::TOTAL_PROC_TIME,
    ]
    .into_iter()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Source {
    /// Orders arrive from the demand process.
    Demand,
    /// The supplier always finds an order waiting.
    Saturated,
}

struct Line<'a> {
    params: &'a SimParams,
    spec: ScenarioSpec,
    source: Source,
    rng: StreamRng,
    stages: [Stage; NUM_STAGES],
    arrival_rate: f64,
    next_arrival: Option<f64>,
    last_arrival: f64,
    next_id: u64,
    last_fulfilled_id: Option<u64>,
    arrivals: u64,
    fulfilled: u64,
    day_acc: DayAccumulator,
    audit: RunAudit,
    max_queue: [usize; NUM_STAGES],
    observe_from: Option<f64>,
    observed: u64,
}

impl<'a> Line<'a> {
    fn new(params: &'a SimParams, spec: ScenarioSpec, source: Source, rng: StreamRng) -> Self {
        let stages = [0, 1, 2].map(|i| {
            Stage::new(
                params.buffer_caps[i],
                params.effective_rate(&spec, 0.0, RateRole::Stage(i)),
            )
        });
        Line {
            params,
            spec,
            source,
            rng,
            stages,
            arrival_rate: params.effective_rate(&spec, 0.0, RateRole::Arrival),
            next_arrival: None,
            last_arrival: 0.0,
            next_id: 0,
            last_fulfilled_id: None,
            arrivals: 0,
            fulfilled: 0,
            day_acc: DayAccumulator::default(),
            audit: RunAudit::default(),
            max_queue: [0; NUM_STAGES],
            observe_from: None,
            observed: 0,
        }
    }

    fn start(&mut self) -> Result<()> {
        match self.source {
            Source::Demand => {
                self.next_arrival = sample_event_time(self.arrival_rate, &mut self.rng)?;
            }
            Source::Saturated => self.refill_supplier(0.0)?,
        }
        Ok(())
    }

    fn new_order(&mut self, t: f64) -> Order {
        let id = self.next_id;
        self.next_id += 1;
        self.arrivals += 1;
        let interarrival = if id == 0 || t > self.last_arrival {
            t - self.last_arrival
        } else {
            0.0
        };
        self.last_arrival = t;
        Order {
            id,
            arrival: t,
            interarrival,
            start: f64::NAN,
            proc: [0.0; NUM_STAGES],
        }
    }

    fn begin_service(&mut self, i: usize, mut order: Order, t: f64) -> Result<()> {
        debug_assert!(matches!(self.stages[i].server, Server::Idle));
        if i == 0 {
            order.start = t;
        }
        let completes = sample_event_time(self.stages[i].rate, &mut self.rng)?.map(|d| t + d);
        self.stages[i].server = Server::Busy {
            order,
            since: t,
            completes,
        };
        Ok(())
    }

    fn refill_supplier(&mut self, t: f64) -> Result<()> {
        if self.source == Source::Saturated && matches!(self.stages[0].server, Server::Idle) {
            let order = self.new_order(t);
            self.begin_service(0, order, t)?;
        }
        Ok(())
    }

    fn on_arrival(&mut self, t: f64) -> Result<()> {
        for _ in 0..self.params.order_qty {
            let order = self.new_order(t);
            if matches!(self.stages[0].server, Server::Idle) {
                self.begin_service(0, order, t)?;
            } else {
                self.stages[0].queue.push_back(order);
            }
        }
        self.next_arrival = sample_event_time(self.arrival_rate, &mut self.rng)?.map(|d| t + d);
        Ok(())
    }

    /// Server `i` has just become idle: pull the next order and release a
    /// blocked upstream unit, cascading towards the supplier.
    fn on_server_free(&mut self, i: usize, t: f64) -> Result<()> {
        let mut i = i;
        loop {
            if let Some(order) = self.stages[i].queue.pop_front() {
                self.begin_service(i, order, t)?;
            }
            if i == 0 {
                return self.refill_supplier(t);
            }
            let up = i - 1;
            if !matches!(self.stages[up].server, Server::Blocked { .. }) {
                return Ok(());
            }
            let Server::Blocked { order } = std::mem::replace(&mut self.stages[up].server, Server::Idle)
            else {
                unreachable!()
            };
            if matches!(self.stages[i].server, Server::Idle) {
                self.begin_service(i, order, t)?;
            } else {
                self.stages[i].queue.push_back(order);
            }
            i = up;
        }
    }

    fn on_completion(&mut self, i: usize, t: f64) -> Result<()> {
        let Server::Busy { mut order, since, .. } =
            std::mem::replace(&mut self.stages[i].server, Server::Idle)
        else {
            unreachable!("completion on a server that is not busy")
        };
        if self.stages[i].rate == 0.0 {
            self.audit.disrupted_completions += 1;
        }
        order.proc[i] = t - since;
        if i + 1 == NUM_STAGES {
            self.fulfil(order, t);
            return self.on_server_free(i, t);
        }
        let down = i + 1;
        if !self.stages[down].has_room() {
            self.stages[i].server = Server::Blocked { order };
            return Ok(());
        }
        if matches!(self.stages[down].server, Server::Idle) {
            self.begin_service(down, order, t)?;
        } else {
            self.stages[down].queue.push_back(order);
        }
        self.on_server_free(i, t)
    }

    fn fulfil(&mut self, order: Order, t: f64) {
        if let Some(prev) = self.last_fulfilled_id {
            if order.id != prev + 1 {
                self.audit.fcfs_violations += 1;
            }
        } else if order.id != 0 {
            self.audit.fcfs_violations += 1;
        }
        self.last_fulfilled_id = Some(order.id);
        self.fulfilled += 1;
        self.audit.fulfilled += 1;
        if self.observe_from.is_some_and(|from| t >= from) {
            self.observed += 1;
        }
        self.day_acc.record_fulfilment(
            order.interarrival,
            order.proc,
            t - order.arrival,
            t - order.start,
        );
    }

    /// Applies rate changes at a window boundary. Remaining holding times of
    /// affected activities are redrawn, which is exact for exponential times.
    fn on_rate_change(&mut self, t: f64) -> Result<()> {
        let arrival_rate = self.params.effective_rate(&self.spec, t, RateRole::Arrival);
        if arrival_rate != self.arrival_rate {
            self.arrival_rate = arrival_rate;
            if self.source == Source::Demand {
                self.next_arrival = sample_event_time(arrival_rate, &mut self.rng)?.map(|d| t + d);
            }
        }
        for i in 0..NUM_STAGES {
            let rate = self.params.effective_rate(&self.spec, t, RateRole::Stage(i));
            if rate == self.stages[i].rate {
                continue;
            }
            self.stages[i].rate = rate;
            if let Server::Busy { completes, .. } = &mut self.stages[i].server {
                *completes = sample_event_time(rate, &mut self.rng)?.map(|d| t + d);
            }
        }
        Ok(())
    }

    fn backlog(&self) -> u64 {
        self.stages[0].queue.len() as u64
    }

    fn in_process(&self) -> u64 {
        self.stages.iter().map(Stage::occupancy).sum::<usize>() as u64 - self.backlog()
    }

    fn snapshot(&mut self) {
        let queues = [0, 1, 2].map(|i| self.stages[i].queue.len());
        for i in 0..NUM_STAGES {
            self.max_queue[i] = self.max_queue[i].max(queues[i]);
            if let Some(cap) = self.stages[i].cap {
                if queues[i] > cap {
                    self.audit.buffer_overflows += 1;
                }
            }
            if i + 1 < NUM_STAGES && matches!(self.stages[i].server, Server::Blocked { .. }) {
                let down = &self.stages[i + 1];
                if down.has_room() {
                    self.audit.blocked_without_full_downstream += 1;
                }
            }
        }
        let wip = (self.arrivals - self.fulfilled) as usize;
        self.day_acc.record_snapshot(queues, wip);
    }

    /// Earliest pending activity: 0 = arrival, 1..=3 = stage completion.
    fn next_activity(&self) -> Option<(f64, usize)> {
        let mut best: Option<(f64, usize)> = self.next_arrival.map(|t| (t, 0));
        for (i, st) in self.stages.iter().enumerate() {
            if let Server::Busy {
                completes: Some(t), ..
            } = st.server
            {
                if best.map_or(true, |(b, _)| t < b) {
                    best = Some((t, i + 1));
                }
            }
        }
        best
    }

    fn dispatch(&mut self, kind: usize, t: f64) -> Result<()> {
        if kind == 0 {
            self.on_arrival(t)
        } else {
            self.on_completion(kind - 1, t)
        }
    }
}

/// Simulates one replication of `spec` and returns its post-warmup records.
///
/// The event stream is seeded from `(base_seed, scenario, rep_index)`; the
/// disruption window itself is part of `spec`.
pub fn run_replication(params: &SimParams, spec: &ScenarioSpec, rep_index: usize) -> Result<ReplicationTrace> {
    params.validate()?;
    let seed = rng::derive_seed(
        params.base_seed,
        &[
            Purpose::Events as u64,
            spec.scenario.index() as u64,
            rep_index as u64,
        ],
    );
    let mut line = Line::new(params, *spec, Source::Demand, rng::from_seed(seed));
    line.start()?;

    let last_day = params.replication_length;
    let mut boundaries: Vec<f64> = spec
        .window
        .map(|w| vec![w.onset as f64, w.end() as f64])
        .unwrap_or_default();
    boundaries.reverse();

    let mut records = Vec::with_capacity(params.records_per_replication());
    let mut balances = Vec::with_capacity(params.records_per_replication());
    let mut previous: Option<DailyRecord> = None;
    let mut tick: u64 = 0;
    let hours = HOURS_PER_DAY as u64;

    loop {
        let tick_time = tick as f64 / HOURS_PER_DAY as f64;
        let boundary = boundaries.last().copied();
        let activity = line.next_activity();

        let tick_first = boundary.map_or(true, |b| tick_time <= b)
            && activity.map_or(true, |(a, _)| tick_time <= a);
        if tick_first {
            let day = (tick / hours) as u32;
            if tick % hours == 0 && tick > 0 {
                let done = day - 1;
                let rec = aggregate_day(done, &line.day_acc, previous.as_ref());
                if done >= params.warmup {
                    records.push(rec);
                    balances.push(DayBalance {
                        day: done,
                        cumulative_arrivals: line.arrivals,
                        cumulative_fulfilled: line.fulfilled,
                        in_process: line.in_process(),
                        backlog: line.backlog(),
                        max_queue: line.max_queue,
                    });
                }
                previous = Some(rec);
                line.day_acc = DayAccumulator::default();
                line.max_queue = [0; NUM_STAGES];
                if day > last_day {
                    break;
                }
            }
            line.snapshot();
            tick += 1;
            continue;
        }
        if let Some(b) = boundary {
            if activity.map_or(true, |(a, _)| b <= a) {
                boundaries.pop();
                line.on_rate_change(b)?;
                continue;
            }
        }
        let (t, kind) = activity.expect("an activity is pending");
        line.dispatch(kind, t)?;
    }

    Ok(ReplicationTrace {
        spec: *spec,
        rep_index,
        seed,
        records,
        balances,
        audit: line.audit,
    })
}

/// Outcome of a saturated-line run.
#[derive(Debug, Clone, PartialEq)]
pub struct SaturatedRun {
    /// Units leaving the line during the observation interval.
    pub output: u64,
    pub audit: RunAudit,
}

/// Runs the line with an inexhaustible order supply in front of the
/// supplier, starting empty, and counts departures during
/// `[warmup, warmup + horizon)` days. Buffer caps and service rates come
/// from `params`; demand and disruption settings are ignored.
pub fn run_saturated(params: &SimParams, warmup: f64, horizon: f64, rng: StreamRng) -> Result<SaturatedRun> {
    for &r in &params.service_rates {
        if !(r.is_finite() && r > 0.0) {
            return Err(crate::error::Error::Param(format!(
                "saturated run needs positive service rates, got {r}"
            )));
        }
    }
    let mut line = Line::new(params, ScenarioSpec::normal(), Source::Saturated, rng);
    line.observe_from = Some(warmup);
    line.start()?;
    let end = warmup + horizon;
    while let Some((t, kind)) = line.next_activity() {
        if t >= end {
            break;
        }
        line.dispatch(kind, t)?;
    }
    Ok(SaturatedRun {
        output: line.observed,
        audit: line.audit,
    })
}
