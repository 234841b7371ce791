//! Plain-text `key = value` run configuration.

use anyhow::{anyhow, bail, Context, Result};
use chaintwin::data::{feature_index, FeatureSubset, RecoveryRule, SplitSpec};
use chaintwin::detect::grid::{DEFAULT_GAMMA_GRID, DEFAULT_NU_GRID};
use chaintwin::detect::{AutoencoderSpec, ErrorMode, OcsvmFitSplit, SmoConfig};
use chaintwin::pipeline::{DetectorConfig, PrepConfig};
use chaintwin::sequence::RecurrentSpec;
use chaintwin::sim::SimParams;
use chaintwin::validate::ValidationConfig;
use std::fmt::Write as _;

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Profile {
    /// 50 replications per scenario, autoencoder trained for 200 epochs.
    Desk,
    /// 300 replications per scenario, autoencoder trained for 1000 epochs.
    Paper,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub sim: SimParams,
    pub prep: PrepConfig,
    pub validation: ValidationConfig,
    pub autoencoder: AutoencoderSpec,
    pub ae_seed: u64,
    pub detector: DetectorConfig,
    pub classifier: RecurrentSpec,
    pub classifier_seed: u64,
    pub ttr: RecurrentSpec,
    pub ttr_features: FeatureSubset,
    pub ttr_seed: u64,
    pub nu_grid: Vec<f64>,
    pub gamma_grid: Vec<f64>,
}

impl RunConfig {
    pub fn for_profile(profile: Profile) -> Self {
        let sim = SimParams {
            num_replications: match profile {
                Profile::Desk => 50,
                Profile::Paper => 300,
            },
            ..SimParams::default()
        };
        let autoencoder = AutoencoderSpec {
            epochs: match profile {
                Profile::Desk => 200,
                Profile::Paper => 1000,
            },
            ..AutoencoderSpec::default()
        };
        RunConfig {
            prep: PrepConfig {
                split_seed: sim.base_seed,
                ..PrepConfig::default()
            },
            sim,
            validation: ValidationConfig::default(),
            autoencoder,
            ae_seed: 1,
            detector: DetectorConfig::default(),
            classifier: RecurrentSpec {
                epochs: match profile {
                    Profile::Desk => 100,
                    Profile::Paper => 20,
                },
                ..RecurrentSpec::classifier()
            },
            classifier_seed: 2,
            ttr: RecurrentSpec::ttr(),
            ttr_features: FeatureSubset::default(),
            ttr_seed: 3,
            nu_grid: DEFAULT_NU_GRID.to_vec(),
            gamma_grid: DEFAULT_GAMMA_GRID.to_vec(),
        }
    }

    /// Applies `key = value` lines on top of `self`. Blank lines and `#`
    /// comments are ignored; unknown keys are errors.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| anyhow!("line {}: expected 'key = value', got '{raw}'", n + 1))?;
            self.set(k.trim(), v.trim()).with_context(|| format!("line {}", n + 1))?;
        }
        Ok(())
    }

    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        let s = &mut self.sim;
        match key {
            "seed" => s.base_seed = num(v)?,
            "replications" => s.num_replications = num(v)?,
            "replication_length" => s.replication_length = num(v)?,
            "warmup" => s.warmup = num(v)?,
            "arrival_rate" => s.arrival_rate = num(v)?,
            "order_qty" => s.order_qty = num(v)?,
            "service_rates" => s.service_rates = triple(v)?,
            "buffer_caps" => {
                let caps: Vec<Option<usize>> = list(v, |x| match x {
                    "inf" => Ok(None),
                    _ => Ok(Some(num(x)?)),
                })?;
                s.buffer_caps = caps.try_into().map_err(|_| anyhow!("buffer_caps needs 3 values"))?;
            }
            "onset_range" => s.disruption_onset_range = pair(v)?,
            "duration_range" => s.disruption_duration_range = pair(v)?,
            "disrupted_arrival_rate" => s.disrupted_arrival_rate = num(v)?,
            "disrupted_service_rate" => s.disrupted_service_rate = num(v)?,
            "split" => {
                let [train, validation, test] = triple(v)?;
                self.prep.split = SplitSpec { train, validation, test };
            }
            "split_seed" => self.prep.split_seed = num(v)?,
            "window_size" => self.prep.window_size = num(v)?,
            "recovery_percentile" | "recovery_consecutive" => {
                let RecoveryRule::WipPercentile { percentile, consecutive } = &mut self.prep.recovery_rule;
                if key == "recovery_percentile" {
                    *percentile = num(v)?;
                } else {
                    *consecutive = num(v)?;
                }
            }
            "validation_replications" => self.validation.replications = num(v)?,
            "validation_alpha" => self.validation.alpha = num(v)?,
            "validation_warmup_days" => self.validation.warmup_days = num(v)?,
            "ae_epochs" => self.autoencoder.epochs = num(v)?,
            "ae_learning_rate" => self.autoencoder.learning_rate = num(v)?,
            "ae_batch_size" => self.autoencoder.batch_size = num(v)?,
            "ae_encoder" => self.autoencoder.encoder = list(v, num)?,
            "ae_seed" => self.ae_seed = num(v)?,
            "nu" => self.detector.nu = num(v)?,
            "gamma" => self.detector.gamma = num(v)?,
            "error_mode" => {
                self.detector.error_mode = match v {
                    "per_feature" => ErrorMode::PerFeature,
                    "elementwise" => ErrorMode::Elementwise,
                    _ => bail!("error_mode must be per_feature or elementwise, got '{v}'"),
                }
            }
            "ocsvm_fit_split" => {
                self.detector.fit_split = match v {
                    "test" => OcsvmFitSplit::Test,
                    "validation" => OcsvmFitSplit::Validation,
                    _ => bail!("ocsvm_fit_split must be test or validation, got '{v}'"),
                }
            }
            "smo_tolerance" => self.detector.smo.tolerance = num(v)?,
            "smo_max_iter_per_point" => self.detector.smo.max_iter_per_point = num(v)?,
            "nu_grid" => self.nu_grid = list(v, num)?,
            "gamma_grid" => self.gamma_grid = list(v, num)?,
            "classifier_units" => self.classifier.units = num(v)?,
            "classifier_dropout" => self.classifier.dropout = num(v)?,
            "classifier_learning_rate" => self.classifier.learning_rate = num(v)?,
            "classifier_batch_size" => self.classifier.batch_size = num(v)?,
            "classifier_epochs" => self.classifier.epochs = num(v)?,
            "classifier_seed" => self.classifier_seed = num(v)?,
            "ttr_units" => self.ttr.units = num(v)?,
            "ttr_dropout" => self.ttr.dropout = num(v)?,
            "ttr_l1" => self.ttr.l1_first = num(v)?,
            "ttr_learning_rate" => self.ttr.learning_rate = num(v)?,
            "ttr_batch_size" => self.ttr.batch_size = num(v)?,
            "ttr_epochs" => self.ttr.epochs = num(v)?,
            "ttr_seed" => self.ttr_seed = num(v)?,
            "ttr_features" => {
                let cols = list(v, |x| {
                    x.parse::<usize>()
                        .ok()
                        .or_else(|| feature_index(x))
                        .ok_or_else(|| anyhow!("unknown feature '{x}'"))
                })?;
                self.ttr_features = FeatureSubset::new(cols)?;
            }
            _ => bail!("unknown configuration key '{key}'"),
        }
        Ok(())
    }

    /// Every key with its resolved value, in a form `apply_text` accepts.
    pub fn to_text(&self) -> String {
        let s = &self.sim;
        let join = |v: &[f64]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",");
        let caps: Vec<String> = s
            .buffer_caps
            .iter()
            .map(|c| c.map_or("inf".into(), |c| c.to_string()))
            .collect();
        let RecoveryRule::WipPercentile { percentile, consecutive } = self.prep.recovery_rule;
        let ae = &self.autoencoder;
        let d = &self.detector;
        let (c, t) = (&self.classifier, &self.ttr);
        let mut out = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(out, "{k} = {v}");
        };
        kv("seed", s.base_seed.to_string());
        kv("replications", s.num_replications.to_string());
        kv("replication_length", s.replication_length.to_string());
        kv("warmup", s.warmup.to_string());
        kv("arrival_rate", s.arrival_rate.to_string());
        kv("order_qty", s.order_qty.to_string());
        kv("service_rates", join(&s.service_rates));
        kv("buffer_caps", caps.join(","));
        kv("onset_range", format!("{},{}", s.disruption_onset_range.0, s.disruption_onset_range.1));
        kv("duration_range", format!("{},{}", s.disruption_duration_range.0, s.disruption_duration_range.1));
        kv("disrupted_arrival_rate", s.disrupted_arrival_rate.to_string());
        kv("disrupted_service_rate", s.disrupted_service_rate.to_string());
        let sp = self.prep.split;
        kv("split", join(&[sp.train, sp.validation, sp.test]));
        kv("split_seed", self.prep.split_seed.to_string());
        kv("window_size", self.prep.window_size.to_string());
        kv("recovery_percentile", percentile.to_string());
        kv("recovery_consecutive", consecutive.to_string());
        kv("validation_replications", self.validation.replications.to_string());
        kv("validation_alpha", self.validation.alpha.to_string());
        kv("validation_warmup_days", self.validation.warmup_days.to_string());
        kv("ae_epochs", ae.epochs.to_string());
        kv("ae_learning_rate", ae.learning_rate.to_string());
        kv("ae_batch_size", ae.batch_size.to_string());
        kv("ae_encoder", ae.encoder.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(","));
        kv("ae_seed", self.ae_seed.to_string());
        kv("nu", d.nu.to_string());
        kv("gamma", d.gamma.to_string());
        kv(
            "error_mode",
            match d.error_mode {
                ErrorMode::PerFeature => "per_feature",
                ErrorMode::Elementwise => "elementwise",
            }
            .into(),
        );
        kv(
            "ocsvm_fit_split",
            match d.fit_split {
                OcsvmFitSplit::Test => "test",
                OcsvmFitSplit::Validation => "validation",
            }
            .into(),
        );
        kv("smo_tolerance", d.smo.tolerance.to_string());
        kv("smo_max_iter_per_point", d.smo.max_iter_per_point.to_string());
        kv("nu_grid", join(&self.nu_grid));
        kv("gamma_grid", join(&self.gamma_grid));
        kv("classifier_units", c.units.to_string());
        kv("classifier_dropout", c.dropout.to_string());
        kv("classifier_learning_rate", c.learning_rate.to_string());
        kv("classifier_batch_size", c.batch_size.to_string());
        kv("classifier_epochs", c.epochs.to_string());
        kv("classifier_seed", self.classifier_seed.to_string());
        kv("ttr_units", t.units.to_string());
        kv("ttr_dropout", t.dropout.to_string());
        kv("ttr_l1", t.l1_first.to_string());
        kv("ttr_learning_rate", t.learning_rate.to_string());
        kv("ttr_batch_size", t.batch_size.to_string());
        kv("ttr_epochs", t.epochs.to_string());
        kv("ttr_seed", self.ttr_seed.to_string());
        kv(
            "ttr_features",
            self.ttr_features.0.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(","),
        );
        out
    }

    pub fn smo(&self) -> SmoConfig {
        self.detector.smo
    }
}

fn num<T: std::str::FromStr>(v: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    v.trim().parse::<T>().map_err(|e| anyhow!("bad value '{v}': {e}"))
}

fn list<T>(v: &str, f: impl Fn(&str) -> Result<T>) -> Result<Vec<T>> {
    v.split(',').map(|x| f(x.trim())).collect()
}

fn triple(v: &str) -> Result<[f64; 3]> {
    list(v, num)?.try_into().map_err(|_| anyhow!("expected 3 comma-separated values, got '{v}'"))
}

fn pair(v: &str) -> Result<(u32, u32)> {
    match list(v, num)?.as_slice() {
        [a, b] => Ok((*a, *b)),
        _ => bail!("expected 2 comma-separated values, got '{v}'"),
    }
}
