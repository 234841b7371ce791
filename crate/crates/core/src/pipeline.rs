//! End-to-end stages shared by the command-line tool and the tests: data
//! preparation, detector fitting and evaluation, classifier and TTR
//! evaluation.

use crate::data::{
    fit_minmax, label_trace, split_dataset, Class, DayLabel, FeatureSubset, NormalizationStats,
    NormalizedSeries, RecoveryRule, Split, SplitAssignment, SplitSpec, WindowSet, WINDOW_SIZE,
};
use crate::detect::ocsvm::ocsvm_fit_with;
use crate::detect::{
    error_vectors, fit_pca1, split_by_series, DetectionSummary, DetectorBundle, ErrorMode,
    OcsvmFitSplit, Scorer, SeriesDetection, SmoConfig, DETECTOR_FORMAT_VERSION,
};
use crate::error::{Error, Result};
use crate::metrics::{lag_stats, regression_metrics, LagStats, RegressionMetrics};
use crate::nn::Sequential;
use crate::sequence::{classify_set, confusion, ClassificationReport, TtrModel};
use crate::sim::{Scenario, ScenarioDataset};
use serde::{Deserialize, Serialize};

pub const PREP_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrepConfig {
    pub split: SplitSpec,
    pub split_seed: u64,
    pub recovery_rule: RecoveryRule,
    pub window_size: usize,
}

impl Default for PrepConfig {
    fn default() -> Self {
        PrepConfig {
            split: SplitSpec::default(),
            split_seed: 0,
            recovery_rule: RecoveryRule::default(),
            window_size: WINDOW_SIZE,
        }
    }
}

/// What preparation decided: scaling, split assignment and censoring.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrepManifest {
    pub format_version: u32,
    pub config: PrepConfig,
    pub stats: NormalizationStats,
    /// Split assignment per scenario, as replication indices.
    pub splits: Vec<(Scenario, SplitAssignment)>,
    /// Replications whose recovery was not reached inside the trace.
    pub censored: Vec<(Scenario, Vec<usize>)>,
}

/// Labelled, scaled series of every scenario.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub manifest: PrepManifest,
    series: Vec<(Scenario, Vec<NormalizedSeries>)>,
}

/// Labels, splits and scales the datasets. Scaling statistics are fitted on
/// the training replications of all given scenarios.
pub fn prepare(datasets: &[ScenarioDataset], cfg: &PrepConfig) -> Result<Prepared> {
    let mut labelled = Vec::new();
    let mut splits = Vec::new();
    let mut censored = Vec::new();
    for ds in datasets {
        let series = ds
            .traces
            .iter()
            .map(|t| label_trace(t, &cfg.recovery_rule))
            .collect::<Result<Vec<_>>>()?;
        let split = split_dataset(series.len(), &cfg.split, cfg.split_seed, ds.scenario)?;
        censored.push((
            ds.scenario,
            series
                .iter()
                .filter(|s| s.recovery.is_some_and(|r| r.censored))
                .map(|s| s.rep_index)
                .collect(),
        ));
        labelled.push((ds.scenario, series));
        splits.push((ds.scenario, split));
    }
    let stats = fit_minmax(labelled.iter().zip(&splits).flat_map(|((_, series), (_, split))| {
        split
            .train
            .iter()
            .flat_map(move |&k| series[k].records.iter().map(|r| &r.record.features))
    }))?;
    let series = labelled
        .iter()
        .map(|(sc, ser)| (*sc, ser.iter().map(|s| NormalizedSeries::new(s, &stats)).collect()))
        .collect();
    Ok(Prepared {
        manifest: PrepManifest {
            format_version: PREP_FORMAT_VERSION,
            config: cfg.clone(),
            stats,
            splits,
            censored,
        },
        series,
    })
}

impl Prepared {
    pub fn scenarios(&self) -> Vec<Scenario> {
        self.series.iter().map(|(s, _)| *s).collect()
    }

    pub fn window_size(&self) -> usize {
        self.manifest.config.window_size
    }

    fn split_of(&self, scenario: Scenario) -> Result<&SplitAssignment> {
        self.manifest
            .splits
            .iter()
            .find(|(s, _)| *s == scenario)
            .map(|(_, a)| a)
            .ok_or_else(|| Error::Data(format!("scenario {scenario} was not prepared")))
    }

    pub fn is_censored(&self, scenario: Scenario, rep_index: usize) -> bool {
        self.manifest
            .censored
            .iter()
            .any(|(s, reps)| *s == scenario && reps.contains(&rep_index))
    }

    /// Series of one scenario and split, in replication order.
    pub fn series(&self, scenario: Scenario, split: Split) -> Result<Vec<NormalizedSeries>> {
        let assignment = self.split_of(scenario)?;
        let all = &self
            .series
            .iter()
            .find(|(s, _)| *s == scenario)
            .expect("prepared scenario")
            .1;
        Ok(assignment.get(split).iter().map(|&k| all[k].clone()).collect())
    }

    /// All windows of the given scenarios and split.
    pub fn windows(&self, scenarios: &[Scenario], split: Split) -> Result<WindowSet> {
        self.windows_where(scenarios, split, |_, _| true)
    }

    /// Windows whose source series and final-day label pass `keep`.
    pub fn windows_where(
        &self,
        scenarios: &[Scenario],
        split: Split,
        keep: impl Fn(&NormalizedSeries, &DayLabel) -> bool,
    ) -> Result<WindowSet> {
        let mut series = Vec::new();
        for &sc in scenarios {
            series.extend(self.series(sc, split)?);
        }
        let size = self.window_size();
        let mut refs = Vec::new();
        for (s, ser) in series.iter().enumerate() {
            if ser.len() < size {
                log::warn!("{} replication {} is shorter than the window", ser.scenario, ser.rep_index);
                continue;
            }
            for end in size - 1..ser.len() {
                if keep(ser, &ser.labels[end]) {
                    refs.push(crate::data::WindowRef { series: s, end });
                }
            }
        }
        Ok(WindowSet { series, refs, size })
    }

    /// Windows with positive time to recovery from uncensored replications.
    pub fn ttr_windows(&self, scenario: Scenario, split: Split) -> Result<WindowSet> {
        self.windows_where(&[scenario], split, |s, l| {
            l.ttr > 0.0 && !s.recovery.is_some_and(|r| r.censored)
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectorConfig {
    pub nu: f64,
    pub gamma: f64,
    pub error_mode: ErrorMode,
    pub fit_split: OcsvmFitSplit,
    pub smo: SmoConfig,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        DetectorConfig {
            nu: 0.025,
            gamma: 100.0,
            error_mode: ErrorMode::PerFeature,
            fit_split: OcsvmFitSplit::Test,
            smo: SmoConfig::default(),
        }
    }
}

/// Scores the OCSVM is fitted on: normal-scenario windows of the configured
/// split.
pub fn ocsvm_fit_windows(prep: &Prepared, split: OcsvmFitSplit) -> Result<WindowSet> {
    let split = match split {
        OcsvmFitSplit::Test => Split::Test,
        OcsvmFitSplit::Validation => Split::Validation,
    };
    prep.windows(&[Scenario::S0], split)
}

/// Fits the PCA on the autoencoder's training windows and the OCSVM on the
/// configured normal split.
pub fn fit_detector(ae: &Sequential, ae_file: &str, prep: &Prepared, cfg: &DetectorConfig) -> Result<DetectorBundle> {
    let train_windows = prep.windows(&[Scenario::S0], Split::Train)?;
    let errors = error_vectors(ae, &train_windows, cfg.error_mode)?;
    let pca = fit_pca1(&errors)?;
    log::info!("PCA explained variance ratio {:.4}", pca.explained_variance_ratio);
    let fit_set = ocsvm_fit_windows(prep, cfg.fit_split)?;
    let scores = Scorer {
        autoencoder: ae,
        pca: &pca,
        mode: cfg.error_mode,
    }
    .scores(&fit_set)?;
    let ocsvm = ocsvm_fit_with(&scores, cfg.nu, cfg.gamma, &cfg.smo)?;
    log::info!(
        "OCSVM fitted on {} scores: {} support vectors, {} iterations",
        scores.len(),
        ocsvm.support_vectors.len(),
        ocsvm.iterations
    );
    Ok(DetectorBundle {
        format_version: DETECTOR_FORMAT_VERSION,
        autoencoder: ae_file.to_string(),
        autoencoder_params: ae.num_params(),
        window_size: prep.window_size(),
        error_mode: cfg.error_mode,
        fit_split: cfg.fit_split,
        pca,
        ocsvm,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionReport {
    pub dataset: String,
    pub model: String,
    pub counts: crate::metrics::BinaryCounts,
    pub metrics: crate::metrics::ClassificationMetrics,
    pub lag_stats: LagStats,
    pub false_alarm_fraction: Option<f64>,
    /// Fraction of all windows flagged anomalous.
    pub flagged_fraction: f64,
    pub windows: usize,
}

pub fn detection_report(dataset: &str, detections: &[SeriesDetection]) -> DetectionReport {
    let summary = DetectionSummary::new(detections);
    let windows: usize = detections.iter().map(|d| d.flags.len()).sum();
    let flagged: usize = detections.iter().map(|d| d.flags.iter().filter(|&&f| f).count()).sum();
    DetectionReport {
        dataset: dataset.to_string(),
        model: "autoencoder+pca+ocsvm".to_string(),
        counts: summary.counts,
        metrics: summary.counts.summary(),
        lag_stats: lag_stats(&summary.lags),
        false_alarm_fraction: summary.false_alarm_fraction(),
        flagged_fraction: if windows > 0 { flagged as f64 / windows as f64 } else { 0.0 },
        windows,
    }
}

/// Precomputed detector scores for one window set.
pub struct ScoredSet {
    pub windows: WindowSet,
    pub scores: Vec<f64>,
}

pub fn score_set(ae: &Sequential, bundle: &DetectorBundle, windows: WindowSet) -> Result<ScoredSet> {
    let scores = Scorer {
        autoencoder: ae,
        pca: &bundle.pca,
        mode: bundle.error_mode,
    }
    .scores(&windows)?;
    Ok(ScoredSet { windows, scores })
}

impl ScoredSet {
    pub fn detections(&self, bundle: &DetectorBundle) -> Vec<SeriesDetection> {
        split_by_series(&self.windows, &self.scores, |s| !bundle.ocsvm.is_normal(s))
    }
}

/// Classifier predictions on a window set.
pub fn evaluate_classifier(model: &Sequential, set: &WindowSet) -> Result<ClassificationReport> {
    let predicted = classify_set(model, set)?;
    let actual: Vec<Class> = (0..set.len()).map(|i| set.label(i).class).collect();
    confusion(&actual, &predicted)
}

/// One point of a time-to-recovery trajectory.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TtrPoint {
    pub rep_index: usize,
    pub day: u32,
    pub class: Class,
    pub actual: f64,
    pub predicted: f64,
}

/// Prediction at the last window ending inside the disruption.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FinalWindowCheck {
    pub rep_index: usize,
    pub day: u32,
    pub actual: f64,
    pub predicted: f64,
    pub relative_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TtrReport {
    pub scenario: Scenario,
    pub features: FeatureSubset,
    pub metrics: RegressionMetrics,
    pub final_window: Vec<FinalWindowCheck>,
    /// Fraction of replications whose final disrupted window prediction is
    /// within 20% of the actual value.
    pub final_within_20pct: Option<f64>,
    pub points: Vec<TtrPoint>,
}

pub fn evaluate_ttr(model: &TtrModel, set: &WindowSet) -> Result<TtrReport> {
    let predicted = model.predict_set(set)?;
    let actual: Vec<f64> = (0..set.len()).map(|i| set.label(i).ttr).collect();
    let metrics = regression_metrics(&actual, &predicted)?;
    let points: Vec<TtrPoint> = (0..set.len())
        .map(|i| {
            let l = set.label(i);
            TtrPoint {
                rep_index: set.source(i).rep_index,
                day: l.day,
                class: l.class,
                actual: l.ttr,
                predicted: predicted[i],
            }
        })
        .collect();
    let mut final_window = Vec::new();
    for (s, series) in set.series.iter().enumerate() {
        let (Some(onset), Some(end)) = (series.onset, series.disruption_end) else {
            continue;
        };
        let last = (0..set.len())
            .filter(|&i| set.refs[i].series == s)
            .filter(|&i| (onset..end).contains(&set.label(i).day))
            .last();
        if let Some(i) = last {
            let (a, p) = (actual[i], predicted[i]);
            final_window.push(FinalWindowCheck {
                rep_index: series.rep_index,
                day: set.label(i).day,
                actual: a,
                predicted: p,
                relative_error: (p - a).abs() / a,
            });
        }
    }
    let within = final_window.iter().filter(|f| f.relative_error <= 0.2).count();
    Ok(TtrReport {
        scenario: model.scenario,
        features: model.features.clone(),
        metrics,
        final_within_20pct: (!final_window.is_empty()).then(|| within as f64 / final_window.len() as f64),
        final_window,
        points,
    })
}
