//! Disruption detector: autoencoder reconstruction error, its first
//! principal component, and a one-class SVM over the component scores.

pub mod grid;
pub mod ocsvm;
pub mod pca;

pub use grid::{grid_search, GridCell, GridSearch};
pub use ocsvm::{ocsvm_fit, OcsvmModel, SmoConfig};
pub use pca::{fit_pca1, PcaModel};

use crate::data::WindowSet;
use crate::error::{Error, Result};
use crate::metrics::BinaryCounts;
use crate::nn::layers::{Activation, Dense, Layer};
use crate::nn::train::predict_all;
use crate::nn::{train, LearningCurve, Loss, Samples, Sequential, Tensor, TrainConfig};
use crate::rng::{stream, Purpose};
use crate::sim::{Scenario, NUM_FEATURES};
use serde::{Deserialize, Serialize};
use std::fs;
use std::path::Path;

pub const DETECTOR_FORMAT_VERSION: u32 = 1;

const SCORING_BATCH: usize = 512;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AutoencoderSpec {
    pub input: usize,
    /// Encoder widths; the decoder mirrors them.
    pub encoder: Vec<usize>,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
}

impl Default for AutoencoderSpec {
    fn default() -> Self {
        AutoencoderSpec {
            input: crate::data::WINDOW_SIZE * NUM_FEATURES,
            encoder: vec![256, 128, 64, 32],
            learning_rate: 1e-4,
            batch_size: 128,
            epochs: 1000,
        }
    }
}

impl AutoencoderSpec {
    /// Layer widths from input to reconstruction.
    pub fn widths(&self) -> Vec<usize> {
        let mut w = vec![self.input];
        w.extend(&self.encoder);
        w.extend(self.encoder.iter().rev().skip(1));
        w.push(self.input);
        w
    }

    /// Relu hidden layers and a sigmoid reconstruction layer.
    pub fn build(&self, seed: u64) -> Sequential {
        let mut rng = stream(seed, Purpose::Init, &[0]);
        let widths = self.widths();
        let last = widths.len() - 2;
        let layers = widths
            .windows(2)
            .enumerate()
            .map(|(k, w)| {
                let act = if k == last { Activation::Sigmoid } else { Activation::Relu };
                Layer::Dense(Dense::new(w[0], w[1], act, &mut rng))
            })
            .collect();
        Sequential::new(layers)
    }

    pub fn train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            learning_rate: self.learning_rate,
            batch_size: self.batch_size,
            epochs: self.epochs,
            loss: Loss::Mae,
            l1: Vec::new(),
            seed,
            shuffle: true,
        }
    }
}

/// Windows as autoencoder examples: the target is the input.
pub struct Reconstruction<'a>(pub &'a WindowSet);

impl Samples for Reconstruction<'_> {
    fn len(&self) -> usize {
        self.0.len()
    }
    fn input_shape(&self) -> Vec<usize> {
        vec![self.0.size * NUM_FEATURES]
    }
    fn target_len(&self) -> usize {
        self.0.size * NUM_FEATURES
    }
    fn fill(&self, idx: usize, input: &mut [f64], target: &mut [f64]) {
        let v = self.0.values(idx);
        input.copy_from_slice(v);
        target.copy_from_slice(v);
    }
}

pub fn train_autoencoder(
    spec: &AutoencoderSpec,
    train_set: &WindowSet,
    val_set: &WindowSet,
    seed: u64,
) -> Result<(Sequential, LearningCurve)> {
    let mut model = spec.build(seed);
    let curve = train(&mut model, &Reconstruction(train_set), &Reconstruction(val_set), &spec.train_config(seed))?;
    Ok((model, curve))
}

/// What the principal component is computed over.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorMode {
    /// Mean absolute error of each feature over the window's timesteps.
    #[default]
    PerFeature,
    /// Absolute error of every window element.
    Elementwise,
}

/// Reconstruction error of a flattened window given its reconstruction.
pub fn error_vector(window: &[f64], recon: &[f64], mode: ErrorMode) -> Vec<f64> {
    match mode {
        ErrorMode::Elementwise => window.iter().zip(recon).map(|(a, b)| (a - b).abs()).collect(),
        ErrorMode::PerFeature => {
            let steps = window.len() / NUM_FEATURES;
            let mut e = vec![0.0; NUM_FEATURES];
            for (k, (a, b)) in window.iter().zip(recon).enumerate() {
                e[k % NUM_FEATURES] += (a - b).abs();
            }
            e.iter_mut().for_each(|v| *v /= steps as f64);
            e
        }
    }
}

/// Per-feature reconstruction error of one flattened window.
pub fn reconstruction_error(ae: &Sequential, window: &[f64], mode: ErrorMode) -> Result<Vec<f64>> {
    let x = Tensor::matrix(1, window.len(), window.to_vec())?;
    let y = ae.predict(&x)?;
    Ok(error_vector(window, y.data(), mode))
}

/// Error vectors for every window of a set.
pub fn error_vectors(ae: &Sequential, set: &WindowSet, mode: ErrorMode) -> Result<Vec<Vec<f64>>> {
    let recon = predict_all(ae, &Reconstruction(set), SCORING_BATCH)?;
    let width = set.size * NUM_FEATURES;
    Ok((0..set.len())
        .map(|i| error_vector(set.values(i), &recon[i * width..(i + 1) * width], mode))
        .collect())
}

/// Source of the scores the one-class SVM is fitted on.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OcsvmFitSplit {
    #[default]
    Test,
    Validation,
}

/// Fitted detector stages after the autoencoder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectorBundle {
    pub format_version: u32,
    /// Path of the autoencoder model file, relative to the bundle.
    pub autoencoder: String,
    pub autoencoder_params: usize,
    pub window_size: usize,
    pub error_mode: ErrorMode,
    pub fit_split: OcsvmFitSplit,
    pub pca: PcaModel,
    pub ocsvm: OcsvmModel,
}

impl DetectorBundle {
    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let b: DetectorBundle = serde_json::from_str(&fs::read_to_string(path)?)?;
        if b.format_version != DETECTOR_FORMAT_VERSION {
            return Err(Error::Version {
                found: b.format_version,
                expected: DETECTOR_FORMAT_VERSION,
            });
        }
        Ok(b)
    }

    /// Loads the autoencoder the bundle refers to and checks it matches.
    pub fn load_autoencoder(&self, bundle_path: &Path) -> Result<Sequential> {
        let dir = bundle_path.parent().unwrap_or(Path::new("."));
        let ae = Sequential::load(&dir.join(&self.autoencoder))?;
        if ae.num_params() != self.autoencoder_params {
            return Err(Error::Data(format!(
                "autoencoder {} has {} parameters, bundle expects {}",
                self.autoencoder,
                ae.num_params(),
                self.autoencoder_params
            )));
        }
        Ok(ae)
    }
}

/// Autoencoder plus PCA: maps windows to scalar scores.
pub struct Scorer<'a> {
    pub autoencoder: &'a Sequential,
    pub pca: &'a PcaModel,
    pub mode: ErrorMode,
}

impl Scorer<'_> {
    pub fn scores(&self, set: &WindowSet) -> Result<Vec<f64>> {
        Ok(error_vectors(self.autoencoder, set, self.mode)?
            .iter()
            .map(|e| self.pca.project(e))
            .collect())
    }
}

/// Detection results for one replication.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeriesDetection {
    pub scenario: Scenario,
    pub rep_index: usize,
    pub onset: Option<u32>,
    pub end_days: Vec<u32>,
    pub scores: Vec<f64>,
    /// True where the window was flagged anomalous.
    pub flags: Vec<bool>,
    pub actual_anomalous: Vec<bool>,
}

impl SeriesDetection {
    /// Days from onset to the first flag at or after onset.
    pub fn lag(&self) -> Option<u32> {
        let onset = self.onset?;
        self.end_days
            .iter()
            .zip(&self.flags)
            .find(|(&d, &f)| f && d >= onset)
            .map(|(&d, _)| d - onset)
    }

    /// Windows ending strictly before onset (all windows without a disruption).
    pub fn pre_onset_windows(&self) -> usize {
        match self.onset {
            Some(o) => self.end_days.iter().filter(|&&d| d < o).count(),
            None => self.end_days.len(),
        }
    }

    pub fn false_alarms(&self) -> usize {
        let onset = self.onset.unwrap_or(u32::MAX);
        self.end_days
            .iter()
            .zip(&self.flags)
            .filter(|(&d, &f)| f && d < onset)
            .count()
    }

    /// Counts with normal as the positive class.
    pub fn counts(&self) -> BinaryCounts {
        BinaryCounts::from_pairs(self.actual_anomalous.iter().zip(&self.flags).map(|(&a, &f)| (!a, !f)))
    }
}

/// Splits set-wide scores back into per-replication detections.
pub fn split_by_series(set: &WindowSet, scores: &[f64], flag: impl Fn(f64) -> bool) -> Vec<SeriesDetection> {
    let mut out: Vec<SeriesDetection> = set
        .series
        .iter()
        .map(|s| SeriesDetection {
            scenario: s.scenario,
            rep_index: s.rep_index,
            onset: s.onset,
            end_days: Vec::new(),
            scores: Vec::new(),
            flags: Vec::new(),
            actual_anomalous: Vec::new(),
        })
        .collect();
    for (i, &score) in scores.iter().enumerate() {
        let r = set.refs[i];
        let label = set.label(i);
        let d = &mut out[r.series];
        d.end_days.push(label.day);
        d.scores.push(score);
        d.flags.push(flag(score));
        d.actual_anomalous.push(label.anomalous);
    }
    out
}

/// Aggregate detection quality over several replications.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionSummary {
    pub counts: BinaryCounts,
    pub lags: Vec<Option<u32>>,
    pub false_alarms: usize,
    pub pre_onset_windows: usize,
}

impl DetectionSummary {
    pub fn new(detections: &[SeriesDetection]) -> Self {
        let mut counts = BinaryCounts::default();
        for d in detections {
            counts.merge(&d.counts());
        }
        DetectionSummary {
            counts,
            lags: detections.iter().filter(|d| d.onset.is_some()).map(SeriesDetection::lag).collect(),
            false_alarms: detections.iter().map(SeriesDetection::false_alarms).sum(),
            pre_onset_windows: detections.iter().map(SeriesDetection::pre_onset_windows).sum(),
        }
    }

    pub fn false_alarm_fraction(&self) -> Option<f64> {
        (self.pre_onset_windows > 0).then(|| self.false_alarms as f64 / self.pre_onset_windows as f64)
    }
}

/// Runs the full chain over a window set.
pub fn detect(
    ae: &Sequential,
    bundle: &DetectorBundle,
    set: &WindowSet,
) -> Result<Vec<SeriesDetection>> {
    let scorer = Scorer {
        autoencoder: ae,
        pca: &bundle.pca,
        mode: bundle.error_mode,
    };
    let scores = scorer.scores(set)?;
    Ok(split_by_series(set, &scores, |s| !bundle.ocsvm.is_normal(s)))
}
