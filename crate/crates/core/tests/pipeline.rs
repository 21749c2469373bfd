//! Stage-by-stage pipeline runs on small synthetic corpora.

mod common;

use eegspeech_core::acoustic::FeatureKind;
use eegspeech_core::dataio::Condition;
use eegspeech_core::eval::MetricsReport;
use eegspeech_core::pipeline::{
    read_matrix, run, run_all, Command, ConfigError, PipelineError, RunConfig, Selection, RESOLVED_CONFIG_FILE,
};

use common::{metrics_without_timestamps, small_config};

fn report(path: &std::path::Path) -> MetricsReport {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn full_run_writes_every_artifact() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), 24, 3, 3);
    let summaries = run_all(&cfg, &Selection::default()).unwrap();
    let names: Vec<&str> = summaries.iter().map(|s| s["command"].as_str().unwrap()).collect();
    assert_eq!(names, Command::PIPELINE.map(|c| c.name()));

    let root = dir.path();
    let id = "s1-spoken-000";
    assert_eq!(read_matrix(&root.join("clean").join(format!("{id}.bin"))).unwrap().dim(), (31, 2000));
    assert_eq!(read_matrix(&root.join("eeg_feats").join(format!("{id}.bin"))).unwrap().dim(), (62, 155));
    assert_eq!(read_matrix(&root.join("eeg_reduced").join(format!("{id}.bin"))).unwrap().dim(), (62, 30));
    assert_eq!(read_matrix(&root.join("audio15k").join(format!("{id}.bin"))).unwrap().dim(), (30000, 1));
    assert_eq!(read_matrix(&root.join("acoustic").join(format!("{id}.bin"))).unwrap().dim(), (62, 571));
    for s in 1..=4 {
        assert!(root.join(format!("kpca/s{s}.json")).is_file());
        let curve = std::fs::read_to_string(root.join(format!("kpca/s{s}_explained_variance.csv"))).unwrap();
        assert_eq!(curve.lines().count(), 31);
    }

    let synth = report(&root.join("metrics_synthesis.json"));
    let acoustic = report(&root.join("metrics_acoustic.json"));
    assert!(!synth.trials.is_empty());
    assert_eq!(acoustic.trials.len(), 16 * synth.trials.len());
    assert!(synth.trials.iter().all(|t| t.rmse.is_finite() && t.baseline_rmse > 0.0));
    assert_eq!(synth.metadata.seed, 11);
    assert_eq!(synth.metadata.config_hash, cfg.hash());
    for t in &synth.trials {
        let pred = read_matrix(&root.join("predictions").join(format!("{}.bin", t.id))).unwrap();
        assert_eq!(pred.dim(), (30000, 1));
        assert!(root.join("spectrograms").join(format!("{}_pred.pgm", t.id)).is_file());
        assert!(root.join("spectrograms").join(format!("{}_true.csv", t.id)).is_file());
    }
    let csv = std::fs::read_to_string(root.join("metrics_acoustic.csv")).unwrap();
    assert!(csv.starts_with("subject,condition,kind,rmse,baseline_rmse,n_trials"));

    // history CSVs and the echoed config
    let hist = std::fs::read_to_string(root.join("models/synth_s1-spoken_history.csv")).unwrap();
    assert!(hist.lines().any(|l| l.starts_with("epoch,train_loss,val_loss")));
    let echoed = std::fs::read_to_string(root.join(RESOLVED_CONFIG_FILE)).unwrap();
    assert_eq!(RunConfig::from_toml_str(&echoed).unwrap(), cfg);

    // rerunning a stage reproduces its outputs
    let before = std::fs::read(root.join("split.json")).unwrap();
    run(Command::Split, &cfg, &Selection::default()).unwrap();
    assert_eq!(std::fs::read(root.join("split.json")).unwrap(), before);
    let m1 = metrics_without_timestamps(&root.join("metrics_acoustic.json"));
    run(Command::EvalRegress, &cfg, &Selection::default()).unwrap();
    assert_eq!(metrics_without_timestamps(&root.join("metrics_acoustic.json")), m1);
}

#[test]
fn selection_restricts_trials_and_kind_restricts_training() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), 16, 1, 1);
    let all = Selection::default();
    for c in [Command::GenData, Command::Preprocess, Command::ExtractEegFeats, Command::Split, Command::FitKpca] {
        run(c, &cfg, &all).unwrap();
    }
    let sel = Selection {
        subject: Some(2),
        condition: Some(Condition::Listen),
        kind: None,
    };
    let s = run(Command::ExtractAcoustic, &cfg, &sel).unwrap();
    assert_eq!(s["trials"], 2);
    let done: Vec<String> = std::fs::read_dir(dir.path().join("acoustic"))
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    assert!(done.iter().all(|n| n.starts_with("s2-listen-")), "{done:?}");

    let one = Selection {
        kind: Some(FeatureKind::Rms),
        ..sel
    };
    let s = run(Command::TrainRegress, &cfg, &one).unwrap();
    assert_eq!(s["kinds"], serde_json::json!(["f5"]));
    assert!(dir.path().join("models/regress_s2-listen_f5.ckpt").is_file());
    assert!(!dir.path().join("models/regress_s2-listen_f4.ckpt").exists());

    let err = run(Command::EvalSynth, &cfg, &one).unwrap_err();
    assert!(matches!(err, PipelineError::Usage(_)), "{err}");
    assert_eq!(err.exit_code(), 1);
}

#[test]
fn missing_inputs_are_data_errors() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), 8, 1, 1);
    let err = run(Command::Preprocess, &cfg, &Selection::default()).unwrap_err();
    assert_eq!(err.exit_code(), 2, "{err}");
    run(Command::GenData, &cfg, &Selection::default()).unwrap();
    let err = run(Command::FitKpca, &cfg, &Selection::default()).unwrap_err();
    assert!(err.to_string().contains("run split first"), "{err}");
    let err = run(Command::ExtractEegFeats, &cfg, &Selection::default()).unwrap_err();
    assert!(err.to_string().contains("run preprocess first"), "{err}");
    let none = Selection {
        subject: Some(9),
        ..Selection::default()
    };
    assert_eq!(run(Command::Preprocess, &cfg, &none).unwrap_err().exit_code(), 2);
}

#[test]
fn grad_check_command_passes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), 8, 1, 1);
    let s = run(Command::GradCheck, &cfg, &Selection::default()).unwrap();
    assert!(s["max_rel_err"].as_f64().unwrap() < 1e-4, "{s}");
    assert!(s["layers"]["gru"].is_object());
}

#[test]
fn config_contract() {
    let d = RunConfig::from_toml_str("").unwrap();
    assert_eq!(d, RunConfig::defaults());
    assert_eq!((d.synthesis.filters1, d.synthesis.filters2, d.regression.hidden), (256, 32, 128));
    assert_eq!((d.synthesis.dropout, d.regression.dropout), (0.2, 0.2));
    assert_eq!((d.synthesis.batch_size, d.regression.epochs), (100, 500));

    let err = RunConfig::from_toml_str("[synthesis]\nepochs = -1\n").unwrap_err();
    assert!(matches!(err, ConfigError::Invalid { .. }));
    assert!(err.to_string().contains("synthesis.epochs"), "{err}");
    let err = RunConfig::from_toml_str("[regression]\nepochs = -1\n").unwrap_err();
    assert!(err.to_string().contains("regression.epochs"), "{err}");
    let err = RunConfig::from_toml_str("[synthesis]\nepoch = 3\n").unwrap_err();
    assert!(err.to_string().contains("epoch"), "{err}");

    let c = RunConfig::from_toml_str_with("[run]\nseed = 1\n", Some(42), Some("/tmp/elsewhere")).unwrap();
    assert_eq!(c.run.seed, 42);
    assert_eq!(c.data_root(), std::path::Path::new("/tmp/elsewhere/data"));
    let again = RunConfig::from_toml_str(&c.to_toml()).unwrap();
    assert_eq!(again, c);
    assert_eq!(again.to_toml(), c.to_toml());
}
