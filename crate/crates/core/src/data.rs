//! Labelling, scaling, windowing and splitting of simulated traces.

use crate::error::{Error, Result};
use crate::rng::{self, Purpose};
use crate::sim::{DailyRecord, ReplicationTrace, Scenario, NUM_FEATURES};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

pub const WINDOW_SIZE: usize = 14;
pub const NUM_CLASSES: usize = 6;
pub const WINDOW_FORMAT_VERSION: u32 = 1;

/// Per-day class. The order is fixed and defines the one-hot layout.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Class {
    Normal = 0,
    SurgeDemand = 1,
    SupplierLoss = 2,
    ManufacturerLoss = 3,
    DistributorLoss = 4,
    Recovery = 5,
}

impl Class {
    pub const ALL: [Class; NUM_CLASSES] = [
        Class::Normal,
        Class::SurgeDemand,
        Class::SupplierLoss,
        Class::ManufacturerLoss,
        Class::DistributorLoss,
        Class::Recovery,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Result<Class> {
        Class::ALL
            .get(i)
            .copied()
            .ok_or_else(|| Error::Param(format!("unknown class id {i}")))
    }

    /// Class of the days inside a scenario's disruption window.
    pub fn of_disruption(scenario: Scenario) -> Option<Class> {
        match scenario {
            Scenario::S0 => None,
            Scenario::S1 => Some(Class::SupplierLoss),
            Scenario::S2 => Some(Class::ManufacturerLoss),
            Scenario::S3 => Some(Class::DistributorLoss),
            Scenario::S4 => Some(Class::SurgeDemand),
        }
    }

    pub fn is_anomalous(self) -> bool {
        self != Class::Normal
    }

    pub fn name(self) -> &'static str {
        match self {
            Class::Normal => "normal",
            Class::SurgeDemand => "surge_demand",
            Class::SupplierLoss => "supplier_loss",
            Class::ManufacturerLoss => "manufacturer_loss",
            Class::DistributorLoss => "distributor_loss",
            Class::Recovery => "recovery",
        }
    }
}

impl fmt::Display for Class {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

pub fn one_hot(class: Class) -> [f64; NUM_CLASSES] {
    let mut v = [0.0; NUM_CLASSES];
    v[class.index()] = 1.0;
    v
}

/// Inverse of [`one_hot`]: the argmax, ties going to the earlier class.
pub fn class_from_scores(scores: &[f64]) -> Result<Class> {
    if scores.len() != NUM_CLASSES {
        return Err(Error::shape(NUM_CLASSES, scores.len()));
    }
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate() {
        if s > scores[best] {
            best = i;
        }
    }
    Class::from_index(best)
}

/// Where recovery ends.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RecoveryRule {
    /// First day at or after the disruption end from which WIP stays at or
    /// below the given percentile of the replication's pre-onset WIP for
    /// `consecutive` days.
    WipPercentile { percentile: f64, consecutive: u32 },
}

impl Default for RecoveryRule {
    fn default() -> Self {
        RecoveryRule::WipPercentile {
            percentile: 95.0,
            consecutive: 3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecoveryOutcome {
    pub day: u32,
    /// Recovery was not reached inside the trace; `day` is one past its end.
    pub censored: bool,
}

impl RecoveryRule {
    pub fn id(&self) -> String {
        match self {
            RecoveryRule::WipPercentile {
                percentile,
                consecutive,
            } => format!("wip_p{percentile}_x{consecutive}"),
        }
    }

    /// Recovery day of a disrupted trace. Traces without a window recover
    /// trivially at their first day.
    pub fn recovery(&self, trace: &ReplicationTrace) -> RecoveryOutcome {
        let Some(window) = trace.spec.window else {
            return RecoveryOutcome {
                day: trace.first_day(),
                censored: false,
            };
        };
        match self {
            RecoveryRule::WipPercentile {
                percentile,
                consecutive,
            } => {
                let baseline: Vec<f64> = trace
                    .records
                    .iter()
                    .filter(|r| r.day < window.onset)
                    .map(DailyRecord::wip)
                    .collect();
                let threshold = percentile_of(&baseline, *percentile);
                let need = (*consecutive).max(1) as usize;
                let mut run = 0usize;
                for (i, r) in trace.records.iter().enumerate() {
                    if r.day < window.end() {
                        continue;
                    }
                    if r.wip() <= threshold {
                        run += 1;
                        if run == need {
                            return RecoveryOutcome {
                                day: trace.records[i + 1 - need].day,
                                censored: false,
                            };
                        }
                    } else {
                        run = 0;
                    }
                }
                RecoveryOutcome {
                    day: trace.last_day() + 1,
                    censored: true,
                }
            }
        }
    }
}

/// Linear-interpolation percentile (`p` in 0..=100). Empty input gives +inf,
/// so that a trace with no pre-onset history never blocks recovery.
pub fn percentile_of(values: &[f64], p: f64) -> f64 {
    if values.is_empty() {
        return f64::INFINITY;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let pos = (p / 100.0).clamp(0.0, 1.0) * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LabelledRecord {
    pub record: DailyRecord,
    pub class: Class,
    pub anomalous: bool,
    /// Remaining days to recovery; zero outside `[onset, recovery)`.
    pub ttr: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabelledSeries {
    pub scenario: Scenario,
    pub rep_index: usize,
    pub onset: Option<u32>,
    pub disruption_end: Option<u32>,
    pub recovery: Option<RecoveryOutcome>,
    pub records: Vec<LabelledRecord>,
}

pub fn label_trace(trace: &ReplicationTrace, rule: &RecoveryRule) -> Result<LabelledSeries> {
    let scenario = trace.spec.scenario;
    let window = match (scenario.is_disrupted(), trace.spec.window) {
        (true, None) => {
            return Err(Error::Data(format!(
                "{scenario} replication {} has no disruption window",
                trace.rep_index
            )))
        }
        (_, w) => w,
    };
    let recovery = window.map(|_| rule.recovery(trace));
    let records = trace
        .records
        .iter()
        .map(|&record| {
            let day = record.day;
            let (class, ttr) = match (window, recovery) {
                (Some(w), Some(rec)) if day >= w.onset && day < rec.day => {
                    let class = if day < w.end() {
                        Class::of_disruption(scenario).expect("disrupted scenario")
                    } else {
                        Class::Recovery
                    };
                    (class, f64::from(rec.day - day))
                }
                _ => (Class::Normal, 0.0),
            };
            LabelledRecord {
                record,
                class,
                anomalous: class.is_anomalous(),
                ttr,
            }
        })
        .collect();
    Ok(LabelledSeries {
        scenario,
        rep_index: trace.rep_index,
        onset: window.map(|w| w.onset),
        disruption_end: window.map(|w| w.end()),
        recovery,
        records,
    })
}

/// Per-feature min/max fitted on training records.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizationStats {
    pub min: [f64; NUM_FEATURES],
    pub max: [f64; NUM_FEATURES],
}

pub fn fit_minmax<'a>(records: impl IntoIterator<Item = &'a [f64; NUM_FEATURES]>) -> Result<NormalizationStats> {
    let mut min = [f64::INFINITY; NUM_FEATURES];
    let mut max = [f64::NEG_INFINITY; NUM_FEATURES];
    let mut n = 0usize;
    for r in records {
        for i in 0..NUM_FEATURES {
            if !r[i].is_finite() {
                return Err(Error::NonFinite(format!("feature {} of training record", i + 1)));
            }
            min[i] = min[i].min(r[i]);
            max[i] = max[i].max(r[i]);
        }
        n += 1;
    }
    if n == 0 {
        return Err(Error::Data("cannot fit min-max scaling on no records".into()));
    }
    for i in 0..NUM_FEATURES {
        if max[i] == min[i] {
            log::warn!(
                "feature {} ({}) is constant in the training data; it will be scaled to 0",
                i + 1,
                crate::sim::FEATURE_NAMES[i]
            );
        }
    }
    Ok(NormalizationStats { min, max })
}

impl NormalizationStats {
    pub fn apply(&self, x: &[f64; NUM_FEATURES]) -> [f64; NUM_FEATURES] {
        let mut out = [0.0; NUM_FEATURES];
        for i in 0..NUM_FEATURES {
            let span = self.max[i] - self.min[i];
            out[i] = if span > 0.0 {
                ((x[i] - self.min[i]) / span).clamp(0.0, 1.0)
            } else {
                0.0
            };
        }
        out
    }

    pub fn invert(&self, x: &[f64; NUM_FEATURES]) -> [f64; NUM_FEATURES] {
        let mut out = [0.0; NUM_FEATURES];
        for i in 0..NUM_FEATURES {
            out[i] = self.min[i] + x[i] * (self.max[i] - self.min[i]);
        }
        out
    }
}

/// Daily labels kept alongside a normalized series.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DayLabel {
    pub day: u32,
    pub class: Class,
    pub anomalous: bool,
    pub ttr: f64,
}

/// A labelled replication after scaling: row-major `len × 13` values.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedSeries {
    pub scenario: Scenario,
    pub rep_index: usize,
    pub onset: Option<u32>,
    pub disruption_end: Option<u32>,
    pub recovery: Option<RecoveryOutcome>,
    pub values: Vec<f64>,
    pub labels: Vec<DayLabel>,
}

impl NormalizedSeries {
    pub fn new(series: &LabelledSeries, stats: &NormalizationStats) -> Self {
        let mut values = Vec::with_capacity(series.records.len() * NUM_FEATURES);
        let mut labels = Vec::with_capacity(series.records.len());
        for r in &series.records {
            values.extend_from_slice(&stats.apply(&r.record.features));
            labels.push(DayLabel {
                day: r.record.day,
                class: r.class,
                anomalous: r.anomalous,
                ttr: r.ttr,
            });
        }
        NormalizedSeries {
            scenario: series.scenario,
            rep_index: series.rep_index,
            onset: series.onset,
            disruption_end: series.disruption_end,
            recovery: series.recovery,
            values,
            labels,
        }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn num_windows(&self, size: usize) -> usize {
        (self.len() + 1).saturating_sub(size)
    }

    /// Flattened window ending at record `end` (inclusive), row-major by
    /// timestep.
    pub fn window(&self, end: usize, size: usize) -> &[f64] {
        let start = end + 1 - size;
        &self.values[start * NUM_FEATURES..(end + 1) * NUM_FEATURES]
    }
}

/// A window of consecutive days, labelled by its final day.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelledWindow {
    pub values: Vec<f64>,
    pub class: Class,
    pub anomalous: bool,
    pub ttr: f64,
    pub scenario: Scenario,
    pub rep_index: usize,
    pub end_day: u32,
}

impl LabelledWindow {
    pub fn timesteps(&self) -> usize {
        self.values.len() / NUM_FEATURES
    }

    pub fn row(&self, t: usize) -> &[f64] {
        &self.values[t * NUM_FEATURES..(t + 1) * NUM_FEATURES]
    }
}

/// All windows of `size` days with stride one.
pub fn make_windows(series: &NormalizedSeries, size: usize) -> Vec<LabelledWindow> {
    if size == 0 || series.len() < size {
        log::warn!(
            "{} replication {} has {} records, fewer than the window size {size}",
            series.scenario,
            series.rep_index,
            series.len()
        );
        return Vec::new();
    }
    (size - 1..series.len())
        .map(|end| {
            let label = series.labels[end];
            LabelledWindow {
                values: series.window(end, size).to_vec(),
                class: label.class,
                anomalous: label.anomalous,
                ttr: label.ttr,
                scenario: series.scenario,
                rep_index: series.rep_index,
                end_day: label.day,
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train: f64,
    pub validation: f64,
    pub test: f64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec {
            train: 0.6,
            validation: 0.2,
            test: 0.2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitAssignment {
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
    pub test: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Split {
    Train,
    Validation,
    Test,
}

impl SplitAssignment {
    pub fn get(&self, split: Split) -> &[usize] {
        match split {
            Split::Train => &self.train,
            Split::Validation => &self.validation,
            Split::Test => &self.test,
        }
    }
}

/// Assigns whole replications to splits. Validation and test sizes are
/// floored; the remainder goes to training.
pub fn split_dataset(num_reps: usize, spec: &SplitSpec, seed: u64, scenario: Scenario) -> Result<SplitAssignment> {
    let total = spec.train + spec.validation + spec.test;
    if (total - 1.0).abs() > 1e-9 || [spec.train, spec.validation, spec.test].iter().any(|&r| r < 0.0) {
        return Err(Error::Param(format!("split ratios must be non-negative and sum to 1, got {total}")));
    }
    if num_reps < 5 {
        return Err(Error::Param(format!("need at least 5 replications to split, got {num_reps}")));
    }
    let n_val = (num_reps as f64 * spec.validation + 1e-9).floor() as usize;
    let n_test = (num_reps as f64 * spec.test + 1e-9).floor() as usize;
    let mut order: Vec<usize> = (0..num_reps).collect();
    let mut rng = rng::stream(seed, Purpose::Split, &[scenario.index() as u64]);
    order.shuffle(&mut rng);
    let mut test = order[..n_test].to_vec();
    let mut validation = order[n_test..n_test + n_val].to_vec();
    let mut train = order[n_test + n_val..].to_vec();
    train.sort_unstable();
    validation.sort_unstable();
    test.sort_unstable();
    Ok(SplitAssignment {
        train,
        validation,
        test,
    })
}

/// Keeps only the listed feature columns of every timestep.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureSubset(pub Vec<usize>);

impl Default for FeatureSubset {
    fn default() -> Self {
        FeatureSubset((0..NUM_FEATURES).collect())
    }
}

impl FeatureSubset {
    pub fn new(cols: Vec<usize>) -> Result<Self> {
        if cols.is_empty() || cols.iter().any(|&c| c >= NUM_FEATURES) {
            return Err(Error::Param(format!("invalid feature subset {cols:?}")));
        }
        Ok(FeatureSubset(cols))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn is_full(&self) -> bool {
        self.0.len() == NUM_FEATURES && self.0.iter().enumerate().all(|(i, &c)| i == c)
    }

    /// Copies the selected columns of a flattened window into `out`.
    pub fn gather(&self, window: &[f64], out: &mut [f64]) {
        if self.is_full() {
            out.copy_from_slice(window);
            return;
        }
        let k = self.0.len();
        for (t, row) in window.chunks_exact(NUM_FEATURES).enumerate() {
            for (j, &c) in self.0.iter().enumerate() {
                out[t * k + j] = row[c];
            }
        }
    }
}

/// Reference to one window inside a collection of series.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WindowRef {
    pub series: usize,
    pub end: usize,
}

/// Windows over a set of normalized series, without copying values.
#[derive(Debug, Clone, Default)]
pub struct WindowSet {
    pub series: Vec<NormalizedSeries>,
    pub refs: Vec<WindowRef>,
    pub size: usize,
}

impl WindowSet {
    pub fn new(series: Vec<NormalizedSeries>, size: usize) -> Self {
        Self::filtered(series, size, |_| true)
    }

    /// Keeps windows whose final-day label satisfies `keep`.
    pub fn filtered(series: Vec<NormalizedSeries>, size: usize, keep: impl Fn(&DayLabel) -> bool) -> Self {
        let mut refs = Vec::new();
        for (s, ser) in series.iter().enumerate() {
            if size == 0 || ser.len() < size {
                log::warn!("series {s} is shorter than the window size {size}");
                continue;
            }
            for end in size - 1..ser.len() {
                if keep(&ser.labels[end]) {
                    refs.push(WindowRef { series: s, end });
                }
            }
        }
        WindowSet { series, refs, size }
    }

    pub fn len(&self) -> usize {
        self.refs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.refs.is_empty()
    }

    pub fn values(&self, i: usize) -> &[f64] {
        let r = self.refs[i];
        self.series[r.series].window(r.end, self.size)
    }

    pub fn label(&self, i: usize) -> &DayLabel {
        let r = self.refs[i];
        &self.series[r.series].labels[r.end]
    }

    pub fn source(&self, i: usize) -> &NormalizedSeries {
        &self.series[self.refs[i].series]
    }

    pub fn to_window(&self, i: usize) -> LabelledWindow {
        let l = self.label(i);
        let s = self.source(i);
        LabelledWindow {
            values: self.values(i).to_vec(),
            class: l.class,
            anomalous: l.anomalous,
            ttr: l.ttr,
            scenario: s.scenario,
            rep_index: s.rep_index,
            end_day: l.day,
        }
    }

    pub fn class_counts(&self) -> [usize; NUM_CLASSES] {
        let mut counts = [0; NUM_CLASSES];
        for i in 0..self.len() {
            counts[self.label(i).class.index()] += 1;
        }
        counts
    }
}

/// Writes windows as CSV: flattened values, then class id, anomaly flag,
/// ttr, scenario, replication and end day.
pub fn write_windows_csv(path: &Path, windows: impl IntoIterator<Item = LabelledWindow>) -> Result<usize> {
    let mut out = BufWriter::new(fs::File::create(path)?);
    let width = WINDOW_SIZE * NUM_FEATURES;
    let header: Vec<String> = (0..width)
        .map(|i| format!("t{}_f{}", i / NUM_FEATURES, i % NUM_FEATURES + 1))
        .chain(["class", "anomalous", "ttr", "scenario", "rep", "end_day"].map(String::from))
        .collect();
    writeln!(out, "{}", header.join(","))?;
    let mut n = 0;
    for w in windows {
        if w.values.len() != width {
            return Err(Error::shape(width, w.values.len()));
        }
        let mut line = String::with_capacity(width * 20);
        for v in &w.values {
            line.push_str(&v.to_string());
            line.push(',');
        }
        line.push_str(&format!(
            "{},{},{},{},{},{}",
            w.class.index(),
            u8::from(w.anomalous),
            w.ttr,
            w.scenario,
            w.rep_index,
            w.end_day
        ));
        writeln!(out, "{line}")?;
        n += 1;
    }
    out.flush()?;
    Ok(n)
}

pub fn read_windows_csv(path: &Path) -> Result<Vec<LabelledWindow>> {
    let reader = BufReader::new(fs::File::open(path)?);
    let width = WINDOW_SIZE * NUM_FEATURES;
    let mut windows = Vec::new();
    for (ln, line) in reader.lines().enumerate().skip(1) {
        let line = line?;
        let bad = |what: &str| Error::Data(format!("{}:{}: {what}", path.display(), ln + 1));
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() != width + 6 {
            return Err(bad("wrong column count"));
        }
        let values = cells[..width]
            .iter()
            .map(|c| c.parse::<f64>().map_err(|_| bad("bad value")))
            .collect::<Result<Vec<_>>>()?;
        let class = Class::from_index(cells[width].parse().map_err(|_| bad("bad class"))?)?;
        windows.push(LabelledWindow {
            values,
            class,
            anomalous: cells[width + 1] == "1",
            ttr: cells[width + 2].parse().map_err(|_| bad("bad ttr"))?,
            scenario: cells[width + 3].parse()?,
            rep_index: cells[width + 4].parse().map_err(|_| bad("bad rep"))?,
            end_day: cells[width + 5].parse().map_err(|_| bad("bad day"))?,
        });
    }
    Ok(windows)
}

/// Checks the label partition rules of a labelled series.
pub fn check_labels(series: &LabelledSeries) -> Result<()> {
    let mut seen_disruption = false;
    for pair in series.records.windows(2) {
        let (a, b) = (&pair[0], &pair[1]);
        if a.ttr > 0.0 && b.ttr > 0.0 && (a.ttr - b.ttr - 1.0).abs() > 1e-12 {
            return Err(Error::Data(format!("ttr does not decrease by one at day {}", b.record.day)));
        }
    }
    for r in &series.records {
        if r.class.is_anomalous() != r.anomalous {
            return Err(Error::Data(format!("anomaly flag disagrees with class at day {}", r.record.day)));
        }
        match r.class {
            Class::Recovery if !seen_disruption => {
                return Err(Error::Data(format!("recovery before disruption at day {}", r.record.day)))
            }
            Class::Normal => {}
            Class::Recovery => {}
            _ => seen_disruption = true,
        }
        if (r.ttr > 0.0) != r.class.is_anomalous() {
            return Err(Error::Data(format!("ttr/class mismatch at day {}", r.record.day)));
        }
    }
    Ok(())
}

/// Feature column indices by name, for configuration parsing.
pub fn feature_index(name: &str) -> Option<usize> {
    crate::sim::FEATURE_NAMES
        .iter()
        .position(|n| *n == name)
        .or_else(|| name.strip_prefix('f')?.parse::<usize>().ok().filter(|&i| (1..=NUM_FEATURES).contains(&i)).map(|i| i - 1))
}
