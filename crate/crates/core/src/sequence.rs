//! LSTM models over windows: a classifier naming the disrupted echelon and
//! per-scenario time-to-recovery regressors.

use crate::data::{Class, FeatureSubset, WindowSet, NUM_CLASSES};
use crate::error::{Error, Result};
use crate::metrics::{ClassificationMetrics, ConfusionMatrix};
use crate::nn::layers::{Activation, Dense, Dropout, Layer, Lstm};
use crate::nn::train::predict_all;
use crate::nn::{train, LearningCurve, Loss, Samples, Sequential, Tensor, TrainConfig};
use crate::rng::{stream, Purpose};
use crate::sim::{Scenario, NUM_FEATURES};
use serde::{Deserialize, Serialize};
use std::fs;
use std::path::Path;

pub const SEQUENCE_FORMAT_VERSION: u32 = 1;

const PREDICT_BATCH: usize = 256;

/// Two stacked LSTM layers with dropout after each, then a dense head.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecurrentSpec {
    pub units: usize,
    pub dropout: f64,
    /// L1 factor on the first LSTM layer.
    pub l1_first: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
}

impl RecurrentSpec {
    pub fn classifier() -> Self {
        RecurrentSpec {
            units: 16,
            dropout: 0.1,
            l1_first: 0.0,
            learning_rate: 1e-4,
            batch_size: 32,
            epochs: 20,
        }
    }

    pub fn ttr() -> Self {
        RecurrentSpec {
            units: 64,
            dropout: 0.1,
            l1_first: 1e-3,
            learning_rate: 1e-4,
            batch_size: 16,
            epochs: 20,
        }
    }

    pub fn build(&self, inputs: usize, outputs: usize, head: Activation, seed: u64, model_id: u64) -> Sequential {
        let mut rng = stream(seed, Purpose::Init, &[model_id]);
        Sequential::new(vec![
            Layer::Lstm(Lstm::new(inputs, self.units, true, &mut rng)),
            Layer::Dropout(Dropout { rate: self.dropout }),
            Layer::Lstm(Lstm::new(self.units, self.units, false, &mut rng)),
            Layer::Dropout(Dropout { rate: self.dropout }),
            Layer::Dense(Dense::new(self.units, outputs, head, &mut rng)),
        ])
    }

    pub fn train_config(&self, loss: Loss, seed: u64) -> TrainConfig {
        TrainConfig {
            learning_rate: self.learning_rate,
            batch_size: self.batch_size,
            epochs: self.epochs,
            loss,
            l1: if self.l1_first > 0.0 { vec![(0, self.l1_first)] } else { Vec::new() },
            seed,
            shuffle: true,
        }
    }
}

/// Windows with one-hot class targets.
pub struct ClassWindows<'a>(pub &'a WindowSet);

impl Samples for ClassWindows<'_> {
    fn len(&self) -> usize {
        self.0.len()
    }
    fn input_shape(&self) -> Vec<usize> {
        vec![self.0.size, NUM_FEATURES]
    }
    fn target_len(&self) -> usize {
        NUM_CLASSES
    }
    fn fill(&self, idx: usize, input: &mut [f64], target: &mut [f64]) {
        input.copy_from_slice(self.0.values(idx));
        target.fill(0.0);
        target[self.0.label(idx).class.index()] = 1.0;
    }
}

/// Model ids for initialization streams.
const CLASSIFIER_ID: u64 = 100;
const TTR_ID: u64 = 200;

pub fn train_classifier(
    spec: &RecurrentSpec,
    train_set: &WindowSet,
    val_set: &WindowSet,
    seed: u64,
) -> Result<(Sequential, LearningCurve)> {
    let census = train_set.class_counts();
    if let Some(c) = Class::ALL.iter().find(|c| census[c.index()] == 0) {
        let listing: Vec<String> = Class::ALL.iter().map(|c| format!("{}={}", c.name(), census[c.index()])).collect();
        return Err(Error::Data(format!(
            "class {} absent from classifier training data ({})",
            c.name(),
            listing.join(", ")
        )));
    }
    let mut model = spec.build(NUM_FEATURES, NUM_CLASSES, Activation::Softmax, seed, CLASSIFIER_ID);
    let cfg = spec.train_config(Loss::CategoricalCrossEntropy, seed);
    let curve = train(&mut model, &ClassWindows(train_set), &ClassWindows(val_set), &cfg)?;
    Ok((model, curve))
}

/// Most likely class of one flattened window, with the class probabilities.
pub fn classify_window(model: &Sequential, window: &[f64]) -> Result<(Class, Vec<f64>)> {
    if window.is_empty() || window.len() % NUM_FEATURES != 0 {
        return Err(Error::shape(format!("multiple of {NUM_FEATURES}"), window.len()));
    }
    let x = Tensor::new(vec![1, window.len() / NUM_FEATURES, NUM_FEATURES], window.to_vec())?;
    let p = model.predict(&x)?.into_data();
    Ok((crate::data::class_from_scores(&p)?, p))
}

/// Predicted class of every window of a set.
pub fn classify_set(model: &Sequential, set: &WindowSet) -> Result<Vec<Class>> {
    let probs = predict_all(model, &ClassWindows(set), PREDICT_BATCH)?;
    probs.chunks(NUM_CLASSES).map(crate::data::class_from_scores).collect()
}

/// Confusion matrix over the six classes with per-class metrics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassificationReport {
    pub classes: Vec<String>,
    pub confusion: ConfusionMatrix,
    pub per_class: Vec<ClassificationMetrics>,
    pub support: Vec<u64>,
    pub accuracy: Option<f64>,
}

pub fn confusion(actual: &[Class], predicted: &[Class]) -> Result<ClassificationReport> {
    let a: Vec<usize> = actual.iter().map(|c| c.index()).collect();
    let p: Vec<usize> = predicted.iter().map(|c| c.index()).collect();
    let m = ConfusionMatrix::from_labels(NUM_CLASSES, &a, &p)?;
    Ok(ClassificationReport {
        classes: Class::ALL.iter().map(|c| c.name().to_string()).collect(),
        per_class: m.per_class(),
        support: (0..NUM_CLASSES).map(|c| m.row_sum(c)).collect(),
        accuracy: m.accuracy(),
        confusion: m,
    })
}

impl ClassificationReport {
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut s = String::from("actual");
        for c in &self.classes {
            s.push(',');
            s.push_str(c);
        }
        s.push_str(",precision,recall,f1\n");
        let fmt = |v: Option<f64>| v.map_or("NaN".to_string(), |x| x.to_string());
        for (k, row) in self.confusion.counts.iter().enumerate() {
            s.push_str(&self.classes[k]);
            for v in row {
                s.push_str(&format!(",{v}"));
            }
            let m = &self.per_class[k];
            s.push_str(&format!(",{},{},{}\n", fmt(m.precision), fmt(m.recall), fmt(m.f1)));
        }
        fs::write(path, s)?;
        Ok(())
    }
}

/// Windows with scaled time-to-recovery targets over a feature subset.
pub struct TtrWindows<'a> {
    pub set: &'a WindowSet,
    pub features: &'a FeatureSubset,
    pub scale: f64,
}

impl Samples for TtrWindows<'_> {
    fn len(&self) -> usize {
        self.set.len()
    }
    fn input_shape(&self) -> Vec<usize> {
        vec![self.set.size, self.features.len()]
    }
    fn target_len(&self) -> usize {
        1
    }
    fn fill(&self, idx: usize, input: &mut [f64], target: &mut [f64]) {
        self.features.gather(self.set.values(idx), input);
        target[0] = self.set.label(idx).ttr / self.scale;
    }
}

/// A time-to-recovery regressor for one disruption scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TtrModel {
    pub format_version: u32,
    pub scenario: Scenario,
    pub features: FeatureSubset,
    /// Targets are divided by this during training; predictions are
    /// multiplied back.
    pub target_scale: f64,
    pub model: Sequential,
}

pub fn train_ttr(
    scenario: Scenario,
    spec: &RecurrentSpec,
    features: &FeatureSubset,
    train_set: &WindowSet,
    val_set: &WindowSet,
    seed: u64,
) -> Result<(TtrModel, LearningCurve)> {
    if !scenario.is_disrupted() {
        return Err(Error::Param(format!("no time-to-recovery model for {scenario}")));
    }
    for set in [train_set, val_set] {
        if set.is_empty() {
            return Err(Error::Data(format!("empty disrupted subset for {scenario}")));
        }
        if let Some(i) = (0..set.len()).find(|&i| set.source(i).scenario != scenario || set.label(i).ttr <= 0.0) {
            return Err(Error::Data(format!(
                "window {i} is not a {scenario} window with positive time to recovery"
            )));
        }
    }
    let scale = (0..train_set.len()).map(|i| train_set.label(i).ttr).sum::<f64>() / train_set.len() as f64;
    let mut model = spec.build(features.len(), 1, Activation::Linear, seed, TTR_ID + scenario.index() as u64);
    let mut cfg = spec.train_config(Loss::Mae, seed ^ scenario.index() as u64);
    // The penalty is specified against a loss in days; keep that balance
    // after the targets are divided by `scale`.
    for (_, factor) in &mut cfg.l1 {
        *factor /= scale;
    }
    let curve = train(
        &mut model,
        &TtrWindows { set: train_set, features, scale },
        &TtrWindows { set: val_set, features, scale },
        &cfg,
    )?;
    Ok((
        TtrModel {
            format_version: SEQUENCE_FORMAT_VERSION,
            scenario,
            features: features.clone(),
            target_scale: scale,
            model,
        },
        curve,
    ))
}

impl TtrModel {
    /// Predicted days to recovery, clamped at zero.
    pub fn predict_window(&self, window: &[f64]) -> Result<f64> {
        if window.is_empty() || window.len() % NUM_FEATURES != 0 {
            return Err(Error::shape(format!("multiple of {NUM_FEATURES}"), window.len()));
        }
        let steps = window.len() / NUM_FEATURES;
        let mut x = vec![0.0; steps * self.features.len()];
        self.features.gather(window, &mut x);
        let t = Tensor::new(vec![1, steps, self.features.len()], x)?;
        Ok((self.model.predict(&t)?.data()[0] * self.target_scale).max(0.0))
    }

    pub fn predict_set(&self, set: &WindowSet) -> Result<Vec<f64>> {
        let raw = predict_all(
            &self.model,
            &TtrWindows {
                set,
                features: &self.features,
                scale: self.target_scale,
            },
            PREDICT_BATCH,
        )?;
        Ok(raw.iter().map(|v| (v * self.target_scale).max(0.0)).collect())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, serde_json::to_string(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let m: TtrModel = serde_json::from_str(&fs::read_to_string(path)?)?;
        if m.format_version != SEQUENCE_FORMAT_VERSION {
            return Err(Error::Version {
                found: m.format_version,
                expected: SEQUENCE_FORMAT_VERSION,
            });
        }
        m.model.validate()?;
        Ok(m)
    }
}

pub fn predict_ttr(model: &TtrModel, window: &[f64]) -> Result<f64> {
    model.predict_window(window)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn classifier_outputs_distribution() {
        let m = RecurrentSpec::classifier().build(NUM_FEATURES, NUM_CLASSES, Activation::Softmax, 1, CLASSIFIER_ID);
        let w: Vec<f64> = (0..14 * NUM_FEATURES).map(|i| (i % 7) as f64 / 7.0).collect();
        let (_, p) = classify_window(&m, &w).unwrap();
        assert_eq!(p.len(), NUM_CLASSES);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(classify_window(&m, &w[..5]).is_err());
    }

    #[test]
    fn confusion_perfect_and_row_sums() {
        let a = [Class::Normal, Class::Recovery, Class::SupplierLoss, Class::Normal];
        let r = confusion(&a, &a).unwrap();
        assert!(r.per_class.iter().filter(|m| m.f1.is_some()).all(|m| m.f1 == Some(1.0)));
        assert_eq!(r.support[Class::Normal.index()], 2);
        assert!(confusion(&a, &a[..2]).is_err());
    }
}
