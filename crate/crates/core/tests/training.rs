use mvp_core::data::{generate_synthetic, FeatureMatrix, Trial};
use mvp_core::model::FusionMode;
use mvp_core::tensor::backward_calls_on_this_thread;
use mvp_core::train::{cross_validate, evaluate_checkpoint, train_fold, write_run, RunConfig, Summary};
use mvp_core::Error;

const TINY: &str = r#"
dataset_tag = "synthetic"
epochs = 2
batch_size = 4
learning_rate = 0.001
[model]
n_heads = 1
n_layers = 1
model_dim = 4
ffn_dim = 8
token_count = 2
dropout = 0.1
[video]
conv_layers = [[4, 3]]
[physio]
conv_layers = [[2, 3], [4, 3]]
"#;

fn cfg(extra: &[&str]) -> RunConfig {
    let o: Vec<String> = extra.iter().map(|s| s.to_string()).collect();
    RunConfig::parse(TINY, &o).unwrap()
}

fn corpus() -> Vec<Trial> {
    generate_synthetic(5, 2, 21)
        .unwrap()
        .into_iter()
        .map(|mut t| {
            t.video = t.video.head(40);
            t.physio = t.physio.head(200);
            t
        })
        .collect()
}

#[test]
fn five_folds_give_five_reports_and_mean_summary() {
    let trials = corpus();
    let cv = cross_validate::<f64>(&trials, &cfg(&[])).unwrap();
    assert_eq!(cv.folds.len(), 5);
    let v: Vec<f64> = cv.folds.iter().map(|f| f.report.f1w_valence).collect();
    assert_eq!(cv.summary.valence.folds, v);
    assert!((cv.summary.valence.mean - v.iter().sum::<f64>() / 5.0).abs() < 1e-15);
    for f in &cv.folds {
        let r = &f.report;
        assert!((0.0..=1.0).contains(&r.f1w_valence) && (0.0..=1.0).contains(&r.f1w_arousal));
        let [sv, sa] = r.supports();
        assert_eq!(sv[0] + sv[1], r.n_test);
        assert_eq!(sa[0] + sa[1], r.n_test);
        assert_eq!(r.epoch_losses.len(), 2);
        assert!(r.epoch_losses.iter().all(|l| l.is_finite()));
    }
    assert_eq!(Summary::from_json(&cv.summary.to_json()).unwrap(), cv.summary);
}

#[test]
fn overlapping_subjects_are_rejected() {
    let trials = corpus();
    let refs: Vec<&Trial> = trials.iter().collect();
    let err = train_fold::<f64>(0, &refs[..6], &refs[4..], (40, 200), &cfg(&[])).err().unwrap();
    assert!(matches!(err, Error::Contract(_)), "{err}");
}

#[test]
fn zero_epochs_is_a_config_error() {
    let err = RunConfig::parse(TINY, &["epochs=0".into()]).unwrap_err();
    assert_eq!(err.category(), "config");
}

#[test]
fn evaluation_never_runs_backward() {
    let trials = corpus();
    let cv = cross_validate::<f64>(&trials, &cfg(&["folds=2"])).unwrap();
    // Folds may train on other threads; evaluation below runs on this one.
    let before = backward_calls_on_this_thread();
    let report = evaluate_checkpoint(&cv.folds[0].checkpoint, &trials).unwrap();
    assert_eq!(backward_calls_on_this_thread(), before);
    assert_eq!(report.n_trials, trials.len());
}

#[test]
fn checkpoint_evaluation_matches_the_fold_report() {
    let trials = corpus();
    let cv = cross_validate::<f64>(&trials, &cfg(&[])).unwrap();
    let f = &cv.folds[1];
    let test: Vec<Trial> = trials.iter().filter(|t| f.report.test_subjects.contains(&t.subject_id)).cloned().collect();
    let r = evaluate_checkpoint(&f.checkpoint, &test).unwrap();
    assert_eq!(r.f1w_valence, f.report.f1w_valence);
    assert_eq!(r.confusion_arousal, f.report.confusion_arousal);
}

#[test]
fn video_only_ignores_physio_corruption() {
    let trials = corpus();
    let corrupted: Vec<Trial> = trials
        .iter()
        .cloned()
        .map(|mut t| {
            let (r, c) = (t.physio.rows(), t.physio.cols());
            t.physio = FeatureMatrix::new(r, c, (0..r * c).map(|i| ((i * 7919) % 101) as f64 - 50.0).collect()).unwrap();
            t
        })
        .collect();
    let c = cfg(&["mode=\"video_only\""]);
    let a = cross_validate::<f64>(&trials, &c).unwrap();
    let b = cross_validate::<f64>(&corrupted, &c).unwrap();
    assert_eq!(a.summary, b.summary);
    for (x, y) in a.folds.iter().zip(&b.folds) {
        assert_eq!(x.report, y.report);
    }
    // The physio branch does see the change.
    let c = cfg(&["mode=\"physio_only\""]);
    let a = cross_validate::<f64>(&trials, &c).unwrap();
    let b = cross_validate::<f64>(&corrupted, &c).unwrap();
    assert_ne!(a.folds[0].report.epoch_losses, b.folds[0].report.epoch_losses);
}

#[test]
fn all_modes_populate_both_axes() {
    let trials = corpus();
    for mode in FusionMode::ALL {
        let s = cross_validate::<f64>(&trials, &cfg(&[&format!("mode=\"{mode}\"")])).unwrap().summary;
        assert_eq!(s.mode, mode);
        assert_eq!(s.valence.folds.len(), 5);
        assert_eq!(s.arousal.folds.len(), 5);
    }
}

#[test]
fn run_directory_is_reproducible() {
    let trials = corpus();
    let c = cfg(&[]);
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    for d in &dirs {
        write_run(d.path(), &c, &cross_validate::<f64>(&trials, &c).unwrap()).unwrap();
    }
    for name in ["config.toml", "summary.json", "summary.txt", "fold0/report.json", "fold4/model.ckpt"] {
        let a = std::fs::read(dirs[0].path().join(name)).unwrap();
        let b = std::fs::read(dirs[1].path().join(name)).unwrap();
        assert_eq!(a, b, "{name}");
    }
}

#[test]
fn f32_training_runs() {
    let trials = corpus();
    let cv = cross_validate::<f32>(&trials, &cfg(&["folds=2"])).unwrap();
    assert_eq!(cv.folds.len(), 2);
}
