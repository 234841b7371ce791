use super::{
    run_replication, DailyRecord, DisruptionWindow, ReplicationTrace, Scenario, ScenarioSpec,
    SimParams, NUM_FEATURES,
};
use crate::data::RecoveryRule;
use crate::error::{Error, Result};
use crate::rng::{self, Purpose};
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::fs;
use std::path::Path;

pub const DATASET_FORMAT_VERSION: u32 = 1;
const MANIFEST_FILE: &str = "manifest.json";

/// All replications of one scenario.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioDataset {
    pub scenario: Scenario,
    pub params: SimParams,
    pub traces: Vec<ReplicationTrace>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationEntry {
    pub rep_index: usize,
    pub seed: u64,
    pub file: String,
    pub onset: Option<u32>,
    pub duration: Option<u32>,
    pub end: Option<u32>,
    pub recovery_day: Option<u32>,
    pub recovery_censored: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub format_version: u32,
    pub scenario: Scenario,
    pub params: SimParams,
    pub recovery_rule: RecoveryRule,
    pub replications: Vec<ReplicationEntry>,
}

/// Draws `(onset, duration)` uniformly over the configured integer ranges
/// from the replication's dedicated window stream.
pub fn sample_disruption_window(params: &SimParams, scenario: Scenario, rep_index: usize) -> DisruptionWindow {
    let mut rng = rng::stream(
        params.base_seed,
        Purpose::DisruptionWindow,
        &[scenario.index() as u64, rep_index as u64],
    );
    let (omin, omax) = params.disruption_onset_range;
    let (dmin, dmax) = params.disruption_duration_range;
    let onset = rng.gen_range(omin..=omax);
    let duration = rng.gen_range(dmin..=dmax);
    DisruptionWindow { onset, duration }
}

pub fn scenario_spec(params: &SimParams, scenario: Scenario, rep_index: usize) -> ScenarioSpec {
    if scenario.is_disrupted() {
        ScenarioSpec {
            scenario,
            window: Some(sample_disruption_window(params, scenario, rep_index)),
        }
    } else {
        ScenarioSpec::normal()
    }
}

/// Simulates `reps` replications of `scenario`.
pub fn generate_scenario_dataset(params: &SimParams, scenario: Scenario, reps: usize) -> Result<ScenarioDataset> {
    if reps == 0 {
        return Err(Error::Param("at least one replication is required".into()));
    }
    params.validate()?;
    let traces = (0..reps)
        .map(|rep| run_replication(params, &scenario_spec(params, scenario, rep), rep))
        .collect::<Result<Vec<_>>>()?;
    Ok(ScenarioDataset {
        scenario,
        params: params.clone(),
        traces,
    })
}

fn rep_file(rep: usize) -> String {
    format!("rep_{rep:04}.csv")
}

/// Writes one CSV per replication plus `manifest.json` into `dir`.
pub fn write_dataset(dir: &Path, dataset: &ScenarioDataset, rule: &RecoveryRule) -> Result<DatasetManifest> {
    fs::create_dir_all(dir)?;
    let mut replications = Vec::with_capacity(dataset.traces.len());
    for trace in &dataset.traces {
        let file = rep_file(trace.rep_index);
        write_trace_csv(&dir.join(&file), &trace.records)?;
        let recovery = trace.spec.window.map(|_| rule.recovery(trace));
        replications.push(ReplicationEntry {
            rep_index: trace.rep_index,
            seed: trace.seed,
            file,
            onset: trace.spec.window.map(|w| w.onset),
            duration: trace.spec.window.map(|w| w.duration),
            end: trace.spec.window.map(|w| w.end()),
            recovery_day: recovery.map(|r| r.day),
            recovery_censored: recovery.is_some_and(|r| r.censored),
        });
    }
    let manifest = DatasetManifest {
        format_version: DATASET_FORMAT_VERSION,
        scenario: dataset.scenario,
        params: dataset.params.clone(),
        recovery_rule: rule.clone(),
        replications,
    };
    fs::write(dir.join(MANIFEST_FILE), serde_json::to_string_pretty(&manifest)?)?;
    Ok(manifest)
}

fn write_trace_csv(path: &Path, records: &[DailyRecord]) -> Result<()> {
    let mut out = String::with_capacity(records.len() * 160);
    out.push_str("day");
    for i in 1..=NUM_FEATURES {
        out.push_str(&format!(",f{i}"));
    }
    out.push('\n');
    for r in records {
        out.push_str(&r.day.to_string());
        for v in r.features {
            out.push(',');
            out.push_str(&v.to_string());
        }
        out.push('\n');
    }
    fs::write(path, out)?;
    Ok(())
}

fn read_trace_csv(path: &Path) -> Result<Vec<DailyRecord>> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::Data(format!("{}: empty file", path.display())))?;
    if header.split(',').count() != NUM_FEATURES + 1 {
        return Err(Error::Data(format!("{}: bad header '{header}'", path.display())));
    }
    let mut records = Vec::new();
    for (ln, line) in lines.enumerate() {
        let bad = |what: &str| Error::Data(format!("{}:{}: {what}", path.display(), ln + 2));
        let mut cells = line.split(',');
        let day = cells
            .next()
            .and_then(|c| c.parse::<u32>().ok())
            .ok_or_else(|| bad("bad day"))?;
        let mut features = [0.0; NUM_FEATURES];
        for f in features.iter_mut() {
            *f = cells
                .next()
                .and_then(|c| c.parse::<f64>().ok())
                .ok_or_else(|| bad("bad feature"))?;
        }
        if cells.next().is_some() {
            return Err(bad("too many columns"));
        }
        records.push(DailyRecord { day, features });
    }
    Ok(records)
}

/// Reads a dataset written by [`write_dataset`]. Audit data is not persisted
/// and comes back zeroed.
pub fn read_dataset(dir: &Path) -> Result<(DatasetManifest, ScenarioDataset)> {
    let manifest: DatasetManifest =
        serde_json::from_str(&fs::read_to_string(dir.join(MANIFEST_FILE))?)?;
    if manifest.format_version != DATASET_FORMAT_VERSION {
        return Err(Error::Version {
            found: manifest.format_version,
            expected: DATASET_FORMAT_VERSION,
        });
    }
    let mut traces = Vec::with_capacity(manifest.replications.len());
    for entry in &manifest.replications {
        let window = match (entry.onset, entry.duration) {
            (Some(onset), Some(duration)) => Some(DisruptionWindow { onset, duration }),
            _ => None,
        };
        traces.push(ReplicationTrace {
            spec: ScenarioSpec {
                scenario: manifest.scenario,
                window,
            },
            rep_index: entry.rep_index,
            seed: entry.seed,
            records: read_trace_csv(&dir.join(&entry.file))?,
            balances: Vec::new(),
            audit: Default::default(),
        });
    }
    let dataset = ScenarioDataset {
        scenario: manifest.scenario,
        params: manifest.params.clone(),
        traces,
    };
    Ok((manifest, dataset))
}
