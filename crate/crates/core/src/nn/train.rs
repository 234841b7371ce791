use super::adam::Adam;
use super::loss::Loss;
use super::model::Sequential;
use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::rng::{stream, Purpose, StreamRng};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use std::fmt;

/// Losses above this abort training.
pub const DIVERGENCE_THRESHOLD: f64 = 1e6;

/// Indexed supervised examples that can be copied into batch buffers.
pub trait Samples {
    fn len(&self) -> usize;
    /// Shape of one input item without the batch dimension.
    fn input_shape(&self) -> Vec<usize>;
    fn target_len(&self) -> usize;
    fn fill(&self, idx: usize, input: &mut [f64], target: &mut [f64]);

    fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Owned samples stored as flat rows.
#[derive(Debug, Clone)]
pub struct InMemory {
    pub input_shape: Vec<usize>,
    pub target_len: usize,
    pub inputs: Vec<f64>,
    pub targets: Vec<f64>,
}

impl InMemory {
    pub fn new(input_shape: Vec<usize>, target_len: usize, inputs: Vec<f64>, targets: Vec<f64>) -> Result<Self> {
        let item: usize = input_shape.iter().product();
        if item == 0 || inputs.len() % item != 0 {
            return Err(Error::shape(format!("multiple of {item}"), inputs.len()));
        }
        let n = inputs.len() / item;
        if targets.len() != n * target_len {
            return Err(Error::shape(n * target_len, targets.len()));
        }
        Ok(InMemory { input_shape, target_len, inputs, targets })
    }
}

impl Samples for InMemory {
    fn len(&self) -> usize {
        self.targets.len() / self.target_len.max(1)
    }
    fn input_shape(&self) -> Vec<usize> {
        self.input_shape.clone()
    }
    fn target_len(&self) -> usize {
        self.target_len
    }
    fn fill(&self, idx: usize, input: &mut [f64], target: &mut [f64]) {
        let k = input.len();
        input.copy_from_slice(&self.inputs[idx * k..(idx + 1) * k]);
        let t = self.target_len;
        target.copy_from_slice(&self.targets[idx * t..(idx + 1) * t]);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub loss: Loss,
    /// `(layer index, factor)` pairs for L1 regularization.
    pub l1: Vec<(usize, f64)>,
    pub seed: u64,
    pub shuffle: bool,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Param(format!("learning rate must be > 0, got {}", self.learning_rate)));
        }
        if self.batch_size == 0 {
            return Err(Error::Param("batch size must be >= 1".into()));
        }
        if let Some(&(i, f)) = self.l1.iter().find(|(_, f)| !(*f >= 0.0 && f.is_finite())) {
            return Err(Error::Param(format!("l1 factor for layer {i} must be >= 0, got {f}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LearningCurve {
    pub train_loss: Vec<f64>,
    pub val_loss: Vec<f64>,
}

impl LearningCurve {
    pub fn epochs(&self) -> usize {
        self.train_loss.len()
    }
}

/// Training stopped early; carries the curve recorded so far.
#[derive(Debug)]
pub struct TrainAbort {
    pub error: Error,
    pub curve: LearningCurve,
}

impl fmt::Display for TrainAbort {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "training aborted after {} epochs: {}", self.curve.epochs(), self.error)
    }
}

impl std::error::Error for TrainAbort {}

impl From<TrainAbort> for Error {
    fn from(a: TrainAbort) -> Error {
        a.error
    }
}

fn gather<S: Samples + ?Sized>(set: &S, idx: &[usize]) -> (Tensor, Tensor) {
    let shape = set.input_shape();
    let item: usize = shape.iter().product();
    let tl = set.target_len();
    let mut x = vec![0.0; idx.len() * item];
    let mut y = vec![0.0; idx.len() * tl];
    for (k, &i) in idx.iter().enumerate() {
        set.fill(i, &mut x[k * item..(k + 1) * item], &mut y[k * tl..(k + 1) * tl]);
    }
    let mut xs = vec![idx.len()];
    xs.extend(shape);
    (
        Tensor::new(xs, x).expect("batch shape"),
        Tensor::new(vec![idx.len(), tl], y).expect("target shape"),
    )
}

/// Runs inference over every sample and returns the flattened outputs.
pub fn predict_all<S: Samples + ?Sized>(model: &Sequential, set: &S, batch_size: usize) -> Result<Vec<f64>> {
    let mut out = Vec::new();
    let idx: Vec<usize> = (0..set.len()).collect();
    for chunk in idx.chunks(batch_size.max(1)) {
        let (x, _) = gather(set, chunk);
        out.extend_from_slice(model.predict(&x)?.data());
    }
    Ok(out)
}

/// Mean data loss plus the L1 penalty, evaluated in inference mode.
pub fn evaluate<S: Samples + ?Sized>(model: &Sequential, set: &S, cfg: &TrainConfig) -> Result<f64> {
    if set.is_empty() {
        return Err(Error::Data("empty evaluation set".into()));
    }
    let idx: Vec<usize> = (0..set.len()).collect();
    let mut total = 0.0;
    for chunk in idx.chunks(cfg.batch_size.max(1)) {
        let (x, y) = gather(set, chunk);
        let pred = model.predict(&x)?;
        let (l, _) = cfg.loss.value_and_grad(&pred, &y)?;
        total += l * chunk.len() as f64;
    }
    Ok(total / set.len() as f64 + model.l1_total(&cfg.l1))
}

/// One optimizer step on a batch. Returns the objective value.
pub fn train_step(
    model: &mut Sequential,
    opt: &mut Adam,
    x: &Tensor,
    y: &Tensor,
    cfg: &TrainConfig,
    rng: &mut StreamRng,
) -> Result<f64> {
    let (pred, caches) = model.forward(x, Some(rng))?;
    let (loss, dpred) = cfg.loss.value_and_grad(&pred, y)?;
    let mut grads = model.backward(&caches, &dpred);
    model.add_l1_gradients(&cfg.l1, &mut grads);
    let objective = loss + model.l1_total(&cfg.l1);
    opt.step(&mut model.param_arrays_mut(), &grads)?;
    Ok(objective)
}

/// Mini-batch Adam training. The model keeps the final-epoch weights.
pub fn train<S: Samples + ?Sized, V: Samples + ?Sized>(
    model: &mut Sequential,
    train_set: &S,
    val_set: &V,
    cfg: &TrainConfig,
) -> std::result::Result<LearningCurve, TrainAbort> {
    let mut curve = LearningCurve::default();
    let abort = |error: Error, curve: &LearningCurve| TrainAbort { error, curve: curve.clone() };
    if let Err(e) = cfg.validate() {
        return Err(abort(e, &curve));
    }
    if cfg.epochs > 0 && (train_set.is_empty() || val_set.is_empty()) {
        return Err(abort(Error::Data("training and validation sets must be non-empty".into()), &curve));
    }
    let mut opt = Adam::new(cfg.learning_rate);
    let mut shuffle_rng = stream(cfg.seed, Purpose::Shuffle, &[]);
    let mut dropout_rng = stream(cfg.seed, Purpose::Dropout, &[]);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    for epoch in 0..cfg.epochs {
        if cfg.shuffle {
            order.shuffle(&mut shuffle_rng);
        }
        let mut total = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let (x, y) = gather(train_set, chunk);
            match train_step(model, &mut opt, &x, &y, cfg, &mut dropout_rng) {
                Ok(l) if l.is_finite() && l <= DIVERGENCE_THRESHOLD => total += l * chunk.len() as f64,
                Ok(l) => return Err(abort(Error::Diverged { epoch, loss: l }, &curve)),
                Err(e) => return Err(abort(e, &curve)),
            }
        }
        let train_loss = total / order.len() as f64;
        let val_loss = match evaluate(model, val_set, cfg) {
            Ok(v) => v,
            Err(e) => return Err(abort(e, &curve)),
        };
        curve.train_loss.push(train_loss);
        curve.val_loss.push(val_loss);
        log::debug!("epoch {epoch}: train {train_loss:.6} val {val_loss:.6}");
        if !(val_loss.is_finite() && val_loss <= DIVERGENCE_THRESHOLD) {
            return Err(abort(Error::Diverged { epoch, loss: val_loss }, &curve));
        }
    }
    Ok(curve)
}
