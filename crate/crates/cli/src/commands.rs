use crate::artifacts::{write_json, write_text, Layout, Run};
use crate::config::RunConfig;
use crate::{CheckFailed, Cli, Command};
use anyhow::{anyhow, bail, Context, Result};
use chaintwin::data::{Class, Split, WindowSet};
use chaintwin::detect::{grid_search, train_autoencoder, DetectorBundle, SeriesDetection};
use chaintwin::nn::{LearningCurve, Sequential};
use chaintwin::pipeline::{
    detection_report, evaluate_classifier, evaluate_ttr, fit_detector, ocsvm_fit_windows, prepare,
    score_set, PrepManifest, Prepared, TtrReport,
};
use chaintwin::sequence::{train_classifier, train_ttr, TtrModel};
use chaintwin::sim::{generate_scenario_dataset, read_dataset, write_dataset, Scenario, ScenarioDataset};
use chaintwin::validate::validate_simulator;
use serde::Serialize;
use std::fmt::Write as _;
use std::path::PathBuf;

pub fn run(cli: &Cli, mut cfg: RunConfig) -> Result<()> {
    let layout = Layout { root: cli.out.clone() };
    match &cli.command {
        Command::Simulate { scenario, reps, seed } => {
            if let Some(r) = reps {
                cfg.sim.num_replications = *r;
            }
            if let Some(s) = seed {
                cfg.sim.base_seed = *s;
            }
            simulate(&layout, &cfg, &parse_scenarios(scenario, &Scenario::ALL)?)
        }
        Command::Validate { seed } => {
            if let Some(s) = seed {
                cfg.sim.base_seed = *s;
            }
            validate(&layout, &cfg)
        }
        Command::Prep { windows_csv } => prep(&layout, &cfg, *windows_csv),
        Command::TrainAe => train_ae(&layout, &cfg),
        Command::FitDetector => fit(&layout, &cfg),
        Command::TrainClassifier => classifier(&layout, &cfg),
        Command::TrainTtr { scenario } => ttr(&layout, &cfg, &parse_scenarios(scenario, &Scenario::DISRUPTED)?),
        Command::Detect { scenario, split } => detect(&layout, &cfg, &parse_scenarios(scenario, &Scenario::ALL)?, split),
        Command::Evaluate => evaluate(&layout, &cfg),
        Command::GridSearch => grid(&layout, &cfg),
    }
}

fn parse_scenarios(arg: &str, all: &[Scenario]) -> Result<Vec<Scenario>> {
    if arg == "all" {
        return Ok(all.to_vec());
    }
    let list = arg
        .split(',')
        .map(|s| s.parse::<Scenario>().map_err(|e| anyhow!("{e}")))
        .collect::<Result<Vec<_>>>()?;
    if let Some(s) = list.iter().find(|s| !all.contains(s)) {
        bail!("scenario {s} is not valid here");
    }
    Ok(list)
}

fn parse_split(s: &str) -> Result<Split> {
    Ok(match s {
        "train" => Split::Train,
        "validation" => Split::Validation,
        "test" => Split::Test,
        _ => bail!("split must be train, validation or test, got '{s}'"),
    })
}

fn simulate(layout: &Layout, cfg: &RunConfig, scenarios: &[Scenario]) -> Result<()> {
    cfg.sim.validate()?;
    let mut run = Run::new(layout, "simulate", cfg.to_text());
    run.seeds.push(("base_seed", cfg.sim.base_seed));
    for &s in scenarios {
        let ds = generate_scenario_dataset(&cfg.sim, s, cfg.sim.num_replications)?;
        let bad: Vec<usize> = ds
            .traces
            .iter()
            .filter(|t| {
                let a = &t.audit;
                a.buffer_overflows + a.blocked_without_full_downstream + a.fcfs_violations + a.disrupted_completions > 0
            })
            .map(|t| t.rep_index)
            .collect();
        if !bad.is_empty() {
            bail!("{s}: simulator invariants violated in replications {bad:?}");
        }
        let dir = layout.data(&s.to_string());
        write_dataset(&dir, &ds, &cfg.prep.recovery_rule)?;
        log::info!("{s}: {} replications written to {}", ds.traces.len(), dir.display());
        run.outputs.push(dir);
    }
    run.finish()
}

fn validate(layout: &Layout, cfg: &RunConfig) -> Result<()> {
    let mut run = Run::new(layout, "validate", cfg.to_text());
    run.seeds.push(("base_seed", cfg.sim.base_seed));
    let report = validate_simulator(&cfg.sim, &cfg.validation)?;
    let path = layout.root.join("validation").join("report.json");
    write_json(&path, &report)?;
    run.outputs.push(path);
    run.finish()?;
    println!(
        "oracle {:.4} units/day; simulated {:.4} ± {:.4} ({}% CI), z = {:.3}, critical {:.3}: {}",
        report.oracle_throughput,
        report.simulated_mean,
        report.half_width,
        report.confidence * 100.0,
        report.z,
        report.critical,
        if report.reject { "rejected" } else { "not rejected" }
    );
    if report.reject || !report.ci_contains_oracle {
        return Err(CheckFailed("simulated output differs from the exact throughput".into()).into());
    }
    Ok(())
}

fn load_datasets(layout: &Layout) -> Result<(Vec<ScenarioDataset>, Vec<PathBuf>)> {
    let mut out = Vec::new();
    let mut dirs = Vec::new();
    for s in Scenario::ALL {
        let dir = layout.data(&s.to_string());
        let (_, ds) = read_dataset(&dir).with_context(|| format!("reading {s} dataset; run `simulate` first"))?;
        out.push(ds);
        dirs.push(dir);
    }
    Ok((out, dirs))
}

fn prep(layout: &Layout, cfg: &RunConfig, windows_csv: bool) -> Result<()> {
    let mut run = Run::new(layout, "prep", cfg.to_text());
    run.seeds.push(("split_seed", cfg.prep.split_seed));
    let (datasets, dirs) = load_datasets(layout)?;
    run.inputs = dirs;
    let prepared = prepare(&datasets, &cfg.prep)?;
    let path = layout.prep().join("manifest.json");
    write_json(&path, &prepared.manifest)?;
    run.outputs.push(path);
    if windows_csv {
        for s in Scenario::ALL {
            let set = prepared.windows(&[s], Split::Test)?;
            let p = layout.prep().join(format!("windows_test_{s}.csv"));
            chaintwin::data::write_windows_csv(&p, (0..set.len()).map(|i| set.to_window(i)))?;
            run.outputs.push(p);
        }
    }
    for (s, reps) in &prepared.manifest.censored {
        if !reps.is_empty() {
            log::warn!("{s}: recovery censored in replications {reps:?}");
        }
    }
    run.finish()
}

/// Rebuilds the prepared series and checks them against the stored manifest.
fn load_prepared(layout: &Layout) -> Result<(Prepared, Vec<PathBuf>)> {
    let path = layout.prep().join("manifest.json");
    let text = std::fs::read_to_string(&path).with_context(|| format!("reading {}; run `prep` first", path.display()))?;
    let stored: PrepManifest = serde_json::from_str(&text)?;
    if stored.format_version != chaintwin::pipeline::PREP_FORMAT_VERSION {
        bail!("prep manifest version {} is not supported", stored.format_version);
    }
    let (datasets, mut inputs) = load_datasets(layout)?;
    let prepared = prepare(&datasets, &stored.config)?;
    if prepared.manifest != stored {
        bail!("datasets changed since `prep` ran; rerun `prep`");
    }
    inputs.push(path);
    Ok((prepared, inputs))
}

fn curve_csv(curve: &LearningCurve) -> String {
    let mut s = String::from("epoch,train_loss,val_loss\n");
    for (i, (t, v)) in curve.train_loss.iter().zip(&curve.val_loss).enumerate() {
        let _ = writeln!(s, "{},{t},{v}", i + 1);
    }
    s
}

fn train_ae(layout: &Layout, cfg: &RunConfig) -> Result<()> {
    let mut run = Run::new(layout, "train-ae", cfg.to_text());
    run.seeds.push(("ae_seed", cfg.ae_seed));
    let (prepared, inputs) = load_prepared(layout)?;
    run.inputs = inputs;
    let train = prepared.windows(&[Scenario::S0], Split::Train)?;
    let val = prepared.windows(&[Scenario::S0], Split::Validation)?;
    log::info!("training autoencoder on {} windows for {} epochs", train.len(), cfg.autoencoder.epochs);
    let (ae, curve) = train_autoencoder(&cfg.autoencoder, &train, &val, cfg.ae_seed)?;
    std::fs::create_dir_all(layout.models())?;
    ae.save(&layout.autoencoder())?;
    let curve_path = layout.plots().join("ae_learning_curve.csv");
    write_text(&curve_path, &curve_csv(&curve))?;
    run.outputs.extend([layout.autoencoder(), curve_path]);
    run.finish()
}

fn load_detector(layout: &Layout) -> Result<(Sequential, DetectorBundle)> {
    let path = layout.detector();
    let bundle = DetectorBundle::load(&path).with_context(|| format!("reading {}; run `fit-detector` first", path.display()))?;
    if bundle.window_size == 0 {
        bail!("detector bundle has no window size");
    }
    let ae = bundle.load_autoencoder(&path)?;
    Ok((ae, bundle))
}

fn fit(layout: &Layout, cfg: &RunConfig) -> Result<()> {
    let mut run = Run::new(layout, "fit-detector", cfg.to_text());
    let (prepared, mut inputs) = load_prepared(layout)?;
    let ae = Sequential::load(&layout.autoencoder()).context("run `train-ae` first")?;
    inputs.push(layout.autoencoder());
    run.inputs = inputs;
    let bundle = fit_detector(&ae, "autoencoder.json", &prepared, &cfg.detector)?;
    bundle.save(&layout.detector())?;
    run.outputs.push(layout.detector());
    run.finish()
}

fn classifier(layout: &Layout, cfg: &RunConfig) -> Result<()> {
    let mut run = Run::new(layout, "train-classifier", cfg.to_text());
    run.seeds.push(("classifier_seed", cfg.classifier_seed));
    let (prepared, inputs) = load_prepared(layout)?;
    run.inputs = inputs;
    let train = prepared.windows(&Scenario::DISRUPTED, Split::Train)?;
    let val = prepared.windows(&Scenario::DISRUPTED, Split::Validation)?;
    log::info!("training classifier on {} windows", train.len());
    let (model, curve) = train_classifier(&cfg.classifier, &train, &val, cfg.classifier_seed)?;
    std::fs::create_dir_all(layout.models())?;
    model.save(&layout.classifier())?;
    let curve_path = layout.plots().join("classifier_learning_curve.csv");
    write_text(&curve_path, &curve_csv(&curve))?;
    run.outputs.extend([layout.classifier(), curve_path]);
    run.finish()
}

fn ttr(layout: &Layout, cfg: &RunConfig, scenarios: &[Scenario]) -> Result<()> {
    let mut run = Run::new(layout, "train-ttr", cfg.to_text());
    run.seeds.push(("ttr_seed", cfg.ttr_seed));
    let (prepared, inputs) = load_prepared(layout)?;
    run.inputs = inputs;
    std::fs::create_dir_all(layout.models())?;
    for &s in scenarios {
        let train = prepared.ttr_windows(s, Split::Train)?;
        let val = prepared.ttr_windows(s, Split::Validation)?;
        log::info!("{s}: training time-to-recovery model on {} windows", train.len());
        let (model, curve) = train_ttr(s, &cfg.ttr, &cfg.ttr_features, &train, &val, cfg.ttr_seed)?;
        let path = layout.ttr(&s.to_string());
        model.save(&path)?;
        let curve_path = layout.plots().join(format!("ttr_{s}_learning_curve.csv"));
        write_text(&curve_path, &curve_csv(&curve))?;
        run.outputs.extend([path, curve_path]);
    }
    run.finish()
}

fn scores_csv(detections: &[SeriesDetection]) -> String {
    let mut s = String::from("scenario,rep,day,score,flag,actual_anomalous\n");
    for d in detections {
        for k in 0..d.flags.len() {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{}",
                d.scenario, d.rep_index, d.end_days[k], d.scores[k], d.flags[k] as u8, d.actual_anomalous[k] as u8
            );
        }
    }
    s
}

fn detect(layout: &Layout, cfg: &RunConfig, scenarios: &[Scenario], split: &str) -> Result<()> {
    let mut run = Run::new(layout, "detect", cfg.to_text());
    let (prepared, mut inputs) = load_prepared(layout)?;
    let (ae, bundle) = load_detector(layout)?;
    inputs.extend([layout.detector(), layout.autoencoder()]);
    run.inputs = inputs;
    let split = parse_split(split)?;
    let dir = layout.root.join("detect");
    for &s in scenarios {
        let scored = score_set(&ae, &bundle, prepared.windows(&[s], split)?)?;
        let det = scored.detections(&bundle);
        let csv = dir.join(format!("scores_{s}.csv"));
        write_text(&csv, &scores_csv(&det))?;
        let json = dir.join(format!("report_{s}.json"));
        write_json(&json, &detection_report(&s.to_string(), &det))?;
        run.outputs.extend([csv, json]);
    }
    run.finish()
}

#[derive(Serialize)]
struct Check {
    name: String,
    value: Option<f64>,
    threshold: String,
    pass: bool,
}

fn at_least(name: &str, value: Option<f64>, min: f64) -> Check {
    Check {
        name: name.into(),
        value,
        threshold: format!(">= {min}"),
        pass: value.is_some_and(|v| v >= min),
    }
}

fn at_most(name: &str, value: Option<f64>, max: f64) -> Check {
    Check {
        name: name.into(),
        value,
        threshold: format!("<= {max}"),
        pass: value.is_some_and(|v| v <= max),
    }
}

fn evaluate(layout: &Layout, cfg: &RunConfig) -> Result<()> {
    let mut run = Run::new(layout, "evaluate", cfg.to_text());
    let (prepared, inputs) = load_prepared(layout)?;
    run.inputs = inputs;
    let reports = layout.reports();
    let mut checks = Vec::new();
    let mut evaluated = false;

    if layout.detector().exists() {
        evaluated = true;
        let (ae, bundle) = load_detector(layout)?;
        run.inputs.extend([layout.detector(), layout.autoencoder()]);
        let normal = score_set(&ae, &bundle, ocsvm_fit_windows(&prepared, bundle.fit_split)?)?;
        let normal_report = detection_report("S0", &normal.detections(&bundle));
        let disrupted = score_set(&ae, &bundle, prepared.windows(&Scenario::DISRUPTED, Split::Test)?)?;
        let det = disrupted.detections(&bundle);
        let report = detection_report("S1-S4 test", &det);
        let path = reports.join("detection.json");
        write_json(&path, &serde_json::json!({ "normal": normal_report, "disrupted": report }))?;
        let mut hist = String::from("lag_days,replications\n");
        for (lag, n) in &report.lag_stats.histogram {
            let _ = writeln!(hist, "{lag},{n}");
        }
        let hist_path = layout.plots().join("lag_histogram.csv");
        write_text(&hist_path, &hist)?;
        let scores_path = layout.plots().join("pc_scores_test.csv");
        write_text(&scores_path, &scores_csv(&det))?;
        run.outputs.extend([path, hist_path, scores_path]);
        checks.push(at_least("detection recall", report.metrics.recall, 0.90));
        checks.push(at_least("detection accuracy", report.metrics.accuracy, 0.80));
        checks.push(at_least("S0 flagged fraction (low)", Some(normal_report.flagged_fraction), 0.01));
        checks.push(at_most("S0 flagged fraction (high)", Some(normal_report.flagged_fraction), 0.05));
        checks.push(at_most("mean lag", report.lag_stats.mean, 10.0));
        checks.push(at_most("median lag", report.lag_stats.median, 6.0));
    }

    if layout.classifier().exists() {
        evaluated = true;
        let model = Sequential::load(&layout.classifier())?;
        run.inputs.push(layout.classifier());
        let report = evaluate_classifier(&model, &prepared.windows(&Scenario::DISRUPTED, Split::Test)?)?;
        let path = reports.join("classifier.json");
        write_json(&path, &report)?;
        let csv = reports.join("confusion.csv");
        report.write_csv(&csv)?;
        run.outputs.extend([path, csv]);
        for c in Class::ALL {
            let min = if c == Class::Recovery { 0.85 } else { 0.90 };
            checks.push(at_least(&format!("{} F1", c.name()), report.per_class[c.index()].f1, min));
        }
        let dominant = report.confusion.largest_confusion();
        let (n, r) = (Class::Normal.index(), Class::Recovery.index());
        checks.push(Check {
            name: "dominant confusion is normal/recovery".into(),
            value: None,
            threshold: format!("{dominant:?}"),
            pass: matches!(dominant, Some((a, p, _)) if (a, p) == (n, r) || (a, p) == (r, n)),
        });
    }

    let mut table = String::from("scenario,n,mae,mse,rmse,mape,final_within_20pct\n");
    let mut any_ttr = false;
    for s in Scenario::DISRUPTED {
        let path = layout.ttr(&s.to_string());
        if !path.exists() {
            continue;
        }
        evaluated = true;
        any_ttr = true;
        let model = TtrModel::load(&path)?;
        run.inputs.push(path);
        let report: TtrReport = evaluate_ttr(&model, &prepared.ttr_windows(s, Split::Test)?)?;
        let m = &report.metrics;
        let _ = writeln!(
            table,
            "{s},{},{},{},{},{},{}",
            m.n,
            m.mae,
            m.mse,
            m.rmse,
            m.mape.value.map_or("NaN".into(), |v| v.to_string()),
            report.final_within_20pct.map_or("NaN".into(), |v| v.to_string())
        );
        let mut series = String::from("rep,day,class,actual,predicted,error\n");
        for p in &report.points {
            let _ = writeln!(
                series,
                "{},{},{},{},{},{}",
                p.rep_index,
                p.day,
                p.class.name(),
                p.actual,
                p.predicted,
                p.actual - p.predicted
            );
        }
        let series_path = layout.plots().join(format!("ttr_{s}_test.csv"));
        write_text(&series_path, &series)?;
        let json = reports.join(format!("ttr_{s}.json"));
        write_json(&json, &report)?;
        run.outputs.extend([series_path, json]);
        checks.push(at_most(&format!("{s} TTR MAPE"), m.mape.value, 0.35));
        checks.push(at_least(&format!("{s} final window within 20%"), report.final_within_20pct, 0.70));
    }
    if any_ttr {
        let p = reports.join("ttr_table.csv");
        write_text(&p, &table)?;
        run.outputs.push(p);
    }
    if !evaluated {
        bail!("no trained models found under {}", layout.models().display());
    }
    let path = reports.join("checks.json");
    write_json(&path, &checks)?;
    run.outputs.push(path);
    run.finish()?;
    for c in &checks {
        println!(
            "{} {}: {} (threshold {})",
            if c.pass { "PASS" } else { "FAIL" },
            c.name,
            c.value.map_or("-".into(), |v| format!("{v:.4}")),
            c.threshold
        );
    }
    let failed: Vec<&str> = checks.iter().filter(|c| !c.pass).map(|c| c.name.as_str()).collect();
    if !failed.is_empty() {
        return Err(CheckFailed(format!("{} checks failed: {}", failed.len(), failed.join(", "))).into());
    }
    Ok(())
}

fn grid(layout: &Layout, cfg: &RunConfig) -> Result<()> {
    let mut run = Run::new(layout, "grid-search", cfg.to_text());
    let (prepared, mut inputs) = load_prepared(layout)?;
    let (ae, bundle) = load_detector(layout)?;
    inputs.extend([layout.detector(), layout.autoencoder()]);
    run.inputs = inputs;
    let fit = score_set(&ae, &bundle, ocsvm_fit_windows(&prepared, bundle.fit_split)?)?;
    let eval: WindowSet = prepared.windows(&Scenario::DISRUPTED, Split::Test)?;
    let eval = score_set(&ae, &bundle, eval)?;
    let g = grid_search(&cfg.nu_grid, &cfg.gamma_grid, &fit.scores, &eval.windows, &eval.scores, &cfg.smo());
    let csv = layout.reports().join("grid.csv");
    let mut buf = Vec::new();
    g.write_csv(&mut buf)?;
    write_text(&csv, std::str::from_utf8(&buf)?)?;
    let json = layout.reports().join("grid.json");
    write_json(&json, &g)?;
    run.outputs.extend([csv, json]);
    run.finish()
}

