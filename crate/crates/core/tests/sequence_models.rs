use chaintwin::data::{Class, FeatureSubset, Split, WindowSet};
use chaintwin::pipeline::{evaluate_classifier, prepare, PrepConfig, Prepared};
use chaintwin::sequence::*;
use chaintwin::sim::{generate_scenario_dataset, Scenario, SimParams};
use std::sync::OnceLock;

fn prepared() -> &'static Prepared {
    static P: OnceLock<Prepared> = OnceLock::new();
    P.get_or_init(|| {
        let p = SimParams::default();
        let ds: Vec<_> = Scenario::ALL.iter().map(|&s| generate_scenario_dataset(&p, s, 5).unwrap()).collect();
        prepare(&ds, &PrepConfig::default()).unwrap()
    })
}

fn tiny(epochs: usize) -> RecurrentSpec {
    RecurrentSpec {
        units: 4,
        epochs,
        batch_size: 64,
        ..RecurrentSpec::classifier()
    }
}

/// Every fifth window, to keep training quick.
fn thin(set: WindowSet) -> WindowSet {
    let refs = set.refs.iter().copied().step_by(5).collect();
    WindowSet { refs, ..set }
}

#[test]
fn classifier_rejects_missing_classes() {
    let p = prepared();
    let normal_only = p.windows(&[Scenario::S0], Split::Train).unwrap();
    let err = train_classifier(&tiny(1), &normal_only, &normal_only, 1).unwrap_err().to_string();
    assert!(err.contains("absent") && err.contains("surge_demand=0"),"{err}");
}

#[test]
fn classifier_training_is_deterministic() {
    let p = prepared();
    let train = thin(p.windows(&Scenario::DISRUPTED, Split::Train).unwrap());
    let val = thin(p.windows(&Scenario::DISRUPTED, Split::Validation).unwrap());
    let test = p.windows(&Scenario::DISRUPTED, Split::Test).unwrap();
    let (a, ca) = train_classifier(&tiny(1), &train, &val, 9).unwrap();
    let (b, cb) = train_classifier(&tiny(1), &train, &val, 9).unwrap();
    assert_eq!(ca, cb);
    let (ra, rb) = (evaluate_classifier(&a, &test).unwrap(), evaluate_classifier(&b, &test).unwrap());
    assert_eq!(ra, rb);
    for c in Class::ALL {
        assert_eq!(ra.confusion.row_sum(c.index()), ra.support[c.index()]);
    }
    for i in (0..test.len()).step_by(97) {
        let (_, probs) = classify_window(&a, test.values(i)).unwrap();
        assert!((probs.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
}

#[test]
fn ttr_guards() {
    let p = prepared();
    let s1 = p.ttr_windows(Scenario::S1, Split::Train).unwrap();
    let s2 = p.ttr_windows(Scenario::S2, Split::Validation).unwrap();
    let all = FeatureSubset::default();
    let spec = RecurrentSpec { units: 4, epochs: 1, ..RecurrentSpec::ttr() };
    assert!(train_ttr(Scenario::S0, &spec, &all, &s1, &s1, 1).is_err());
    assert!(train_ttr(Scenario::S1, &spec, &all, &s1, &s2, 1).is_err());
    assert!(train_ttr(Scenario::S1, &spec, &all, &WindowSet::default(), &s1, 1).is_err());
    let with_zero = p.windows(&[Scenario::S1], Split::Train).unwrap();
    assert!(train_ttr(Scenario::S1, &spec, &all, &with_zero, &s1, 1).is_err());
}

#[test]
fn ttr_model_round_trip_and_clamp() {
    let p = prepared();
    let train = thin(p.ttr_windows(Scenario::S3, Split::Train).unwrap());
    let val = thin(p.ttr_windows(Scenario::S3, Split::Validation).unwrap());
    let features = FeatureSubset::new(vec![4, 5, 6, 7, 12]).unwrap();
    let spec = RecurrentSpec { units: 4, epochs: 1, ..RecurrentSpec::ttr() };
    let (mut model, _) = train_ttr(Scenario::S3, &spec, &features, &train, &val, 4).unwrap();
    let mean = (0..train.len()).map(|i| train.label(i).ttr).sum::<f64>() / train.len() as f64;
    assert!((model.target_scale - mean).abs() < 1e-9);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ttr.json");
    model.save(&path).unwrap();
    let back = TtrModel::load(&path).unwrap();
    assert_eq!(back, model);
    assert_eq!(back.scenario, Scenario::S3);
    assert_eq!(back.features, features);
    let test = p.ttr_windows(Scenario::S3, Split::Test).unwrap();
    let batch = back.predict_set(&test).unwrap();
    for i in (0..test.len()).step_by(37) {
        let one = predict_ttr(&back, test.values(i)).unwrap();
        assert!(one >= 0.0);
        assert!((one - batch[i]).abs() < 1e-9 * (1.0 + one));
    }

    // A strongly negative output bias must clamp to zero.
    let last = model.model.param_arrays_mut().into_iter().last().unwrap();
    last.iter_mut().for_each(|b| *b = -1e3);
    assert!(model.predict_set(&test).unwrap().iter().all(|&v| v == 0.0));
    assert!(predict_ttr(&model, &test.values(0)[..5]).is_err());
}
