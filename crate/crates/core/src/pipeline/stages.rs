//! Implementations of the pipeline commands.

use std::collections::BTreeMap;
use std::path::Path;

use ndarray::{concatenate, s, Array2, Axis};
use serde_json::{json, Map, Value};

use super::{read_matrix, write_matrix, Grouping, Layout, PipelineError, RunConfig, Selection};
use crate::acoustic::{extract_acoustic_set, FeatureKind};
use crate::dataio::{
    generate_synthetic_dataset, make_split, read_wav, Condition, DatasetManifest, ManifestEntry,
    SplitAssignment, SynthConfig, EEG_RATE_HZ, MANIFEST_FILE, MODEL_AUDIO_RATE_HZ,
};
use crate::dsp::resample_poly;
use crate::eeg::{
    explained_variance_curve, extract_stat_features, kpca_fit, kpca_transform, preprocess_eeg,
    subsample_rows, CleanEeg, ProvenanceFlags,
};
use crate::eval::{
    evaluate_acoustic, evaluate_synthesis, export_spectrogram, AcousticTrial, MetricsReport,
    ReportMetadata, SynthesisTrial,
};
use crate::nn::{
    build_regression_model, build_synthesis_model, gradient_suite, load_checkpoint, predict_one,
    save_checkpoint, train_with_callback, AnyModel, Checkpoint, EpochRecord, RegressionModel,
    SeqPair, SynthesisModel, TrainHistory,
};
use crate::seed::{stage_seed, Stage};
use crate::standardize::Standardizer;

/// Acceptance bound for the gradient check.
const GRAD_TOL: f64 = 1e-4;
const GRAD_SHAPES: usize = 10;
const LOG_EVERY: usize = 100;

type Result<T> = std::result::Result<T, PipelineError>;

/// Group name for a trial: `all`, `s{n}` or `s{n}-{condition}`.
pub fn group_key(grouping: Grouping, subject: u8, condition: Condition) -> String {
    match grouping {
        Grouping::Pooled => "all".into(),
        Grouping::Subject => format!("s{subject}"),
        Grouping::SubjectCondition => format!("s{subject}-{condition}"),
    }
}

fn layout(cfg: &RunConfig) -> Layout {
    Layout::new(cfg.out_dir())
}

fn load_manifest(cfg: &RunConfig) -> Result<DatasetManifest> {
    let path = cfg.data_root().join(MANIFEST_FILE);
    if !path.is_file() {
        return Err(PipelineError::Data(format!(
            "{} not found (run gen-data or set run.data_root)",
            path.display()
        )));
    }
    Ok(DatasetManifest::load(&path)?)
}

fn selected<'a>(m: &'a DatasetManifest, sel: &Selection) -> Result<Vec<&'a ManifestEntry>> {
    let v: Vec<&ManifestEntry> = m.trials.iter().filter(|t| sel.matches(t.subject, t.condition)).collect();
    if v.is_empty() {
        return Err(PipelineError::Data("no trials match the subject/condition selection".into()));
    }
    Ok(v)
}

fn load_split(l: &Layout) -> Result<SplitAssignment> {
    let path = l.split();
    let text = std::fs::read_to_string(&path)
        .map_err(|e| PipelineError::Data(format!("{}: {e} (run split first)", path.display())))?;
    serde_json::from_str(&text).map_err(|e| PipelineError::Data(format!("{}: {e}", path.display())))
}

fn read_mat(path: &Path, produced_by: &str) -> Result<Array2<f64>> {
    read_matrix(path).map_err(|e| PipelineError::Data(format!("{}: {e} (run {produced_by} first)", path.display())))
}

fn write_mat(path: &Path, m: &Array2<f64>) -> Result<()> {
    write_matrix(path, m).map_err(|e| PipelineError::io(path, e))
}

fn write_json(path: &Path, v: &impl serde::Serialize) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| PipelineError::io(dir, e))?;
    }
    let text = serde_json::to_string_pretty(v).expect("serializable");
    std::fs::write(path, text + "\n").map_err(|e| PipelineError::io(path, e))
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path, produced_by: &str) -> Result<T> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| PipelineError::Data(format!("{}: {e} (run {produced_by} first)", path.display())))?;
    serde_json::from_str(&text).map_err(|e| PipelineError::Data(format!("{}: {e}", path.display())))
}

fn ensure_finite(what: &str, m: &Array2<f64>) -> Result<()> {
    if m.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(PipelineError::Numeric(format!("{what} contains non-finite values")))
    }
}

/// Trials of `entries` grouped by `grouping`, in manifest order.
fn group_entries<'a>(entries: &[&'a ManifestEntry], grouping: Grouping) -> BTreeMap<String, Vec<&'a ManifestEntry>> {
    let mut groups: BTreeMap<String, Vec<&ManifestEntry>> = BTreeMap::new();
    for &e in entries {
        groups.entry(group_key(grouping, e.subject, e.condition)).or_default().push(e);
    }
    groups
}

fn members<'a>(group: &[&'a ManifestEntry], ids: &[String]) -> Vec<&'a ManifestEntry> {
    group.iter().copied().filter(|e| ids.contains(&e.id)).collect()
}

fn metadata(cfg: &RunConfig, rmse_scale: &str) -> ReportMetadata {
    let now = std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    ReportMetadata {
        seed: cfg.run.seed,
        config_hash: cfg.hash(),
        rmse_scale: rmse_scale.into(),
        timestamps: BTreeMap::from([("written_unix".to_string(), now.to_string())]),
    }
}

fn log_epoch(label: &str) -> impl FnMut(&EpochRecord) + '_ {
    move |r| {
        if r.epoch == 1 || r.epoch % LOG_EVERY == 0 {
            log::info!(
                "{label}: epoch {} train {:.6}{}",
                r.epoch,
                r.train_loss,
                r.val_loss.map(|v| format!(" val {v:.6}")).unwrap_or_default()
            );
        }
    }
}

fn history_summary(h: &TrainHistory) -> Value {
    let last = h.records.last();
    json!({
        "first_train_loss": h.first_train_loss(),
        "final_train_loss": h.last_train_loss(),
        "final_val_loss": last.and_then(|r| r.val_loss),
    })
}

fn save_ckpt(path: &Path, model: AnyModel, meta: Map<String, Value>) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| PipelineError::io(dir, e))?;
    }
    Ok(save_checkpoint(path, &Checkpoint { model, meta })?)
}

fn meta_value<'a>(meta: &'a Map<String, Value>, key: &str, path: &Path) -> Result<&'a Value> {
    meta.get(key)
        .ok_or_else(|| PipelineError::Data(format!("{}: checkpoint metadata lacks {key:?}", path.display())))
}

fn meta_scaler(meta: &Map<String, Value>, key: &str, path: &Path) -> Result<Standardizer> {
    serde_json::from_value(meta_value(meta, key, path)?.clone())
        .map_err(|e| PipelineError::Data(format!("{}: bad {key}: {e}", path.display())))
}

pub(super) fn gen_data(cfg: &RunConfig) -> Result<Value> {
    let synth = SynthConfig {
        n_trials: cfg.data.n_trials as usize,
        duration_s: cfg.data.duration_s,
        seed: cfg.run.seed,
    };
    let root = cfg.data_root();
    let m = generate_synthetic_dataset(&synth, &root)?;
    Ok(json!({
        "trials": m.trials.len(),
        "duration_s": synth.duration_s,
        "data_root": root.display().to_string(),
    }))
}

pub(super) fn preprocess(cfg: &RunConfig, sel: &Selection) -> Result<Value> {
    let l = layout(cfg);
    let m = load_manifest(cfg)?;
    let mut report = BTreeMap::new();
    let mut removed = 0;
    for e in selected(&m, sel)? {
        let trial = m.load_trial(e)?;
        let opts = cfg.preprocess_options(stage_seed(cfg.run.seed, Stage::Ica, &e.id));
        let clean = preprocess_eeg(&trial.eeg, &opts)?;
        ensure_finite(&format!("cleaned EEG of {}", e.id), &clean.data)?;
        write_mat(&l.clean(&e.id), &clean.data)?;
        removed += clean.ica.as_ref().map_or(0, |i| i.removed.len());
        report.insert(e.id.clone(), json!({ "flags": clean.flags, "ica": clean.ica }));
    }
    // merge with entries from earlier runs on other selections
    let path = l.preprocess_report();
    let mut all: BTreeMap<String, Value> = if path.is_file() {
        read_json(&path, "preprocess").unwrap_or_default()
    } else {
        BTreeMap::new()
    };
    let n = report.len();
    all.extend(report);
    write_json(&path, &all)?;
    Ok(json!({ "trials": n, "ica_components_removed": removed }))
}

pub(super) fn extract_eeg_feats(cfg: &RunConfig, sel: &Selection) -> Result<Value> {
    let l = layout(cfg);
    let m = load_manifest(cfg)?;
    let grid = cfg.stat_grid();
    let mut frames = Vec::new();
    let mut dim = 0;
    for e in selected(&m, sel)? {
        let data = read_mat(&l.clean(&e.id), "preprocess")?;
        let clean = CleanEeg {
            data,
            sample_rate_hz: EEG_RATE_HZ,
            flags: ProvenanceFlags::default(),
            ica: None,
        };
        let feats = extract_stat_features(&clean, &grid)?.features;
        ensure_finite(&format!("EEG features of {}", e.id), &feats)?;
        frames.push(feats.nrows());
        dim = feats.ncols();
        write_mat(&l.eeg_feats(&e.id), &feats)?;
    }
    Ok(json!({
        "trials": frames.len(),
        "dim": dim,
        "hop": grid.hop,
        "window": grid.window_len,
        "effective_rate_hz": grid.effective_rate_hz(),
        "min_frames": frames.iter().min(),
        "max_frames": frames.iter().max(),
    }))
}

pub(super) fn split(cfg: &RunConfig) -> Result<Value> {
    let l = layout(cfg);
    let m = load_manifest(cfg)?;
    let a = make_split(&m.ids(), cfg.split_ratios(), cfg.run.seed)?;
    write_json(&l.split(), &a)?;
    let (train, val, test) = a.counts();
    Ok(json!({ "train": train, "val": val, "test": test, "path": l.split().display().to_string() }))
}

pub(super) fn fit_kpca(cfg: &RunConfig, sel: &Selection) -> Result<Value> {
    let l = layout(cfg);
    let m = load_manifest(cfg)?;
    let split = load_split(&l)?;
    let entries = selected(&m, sel)?;
    let mut summary = Map::new();
    for (group, all) in group_entries(&entries, cfg.kpca.grouping) {
        let train = members(&all, &split.train_ids);
        if train.is_empty() {
            return Err(PipelineError::Data(format!("KPCA group {group} has no training trials")));
        }
        let feats: Vec<Array2<f64>> = train
            .iter()
            .map(|e| read_mat(&l.eeg_feats(&e.id), "extract-eeg-feats"))
            .collect::<Result<_>>()?;
        let scaler = Standardizer::fit(feats.iter());
        let scaled: Vec<Array2<f64>> = feats.iter().map(|f| scaler.transform(f)).collect();
        let views: Vec<_> = scaled.iter().map(|f| f.view()).collect();
        let stacked = concatenate(Axis(0), &views).map_err(|e| PipelineError::Data(e.to_string()))?;
        let fit_rows = subsample_rows(
            &stacked,
            cfg.kpca.max_fit_frames as usize,
            stage_seed(cfg.run.seed, Stage::KpcaSubsample, &group),
        );
        let model = kpca_fit(&fit_rows, cfg.kpca.out_dim as usize, cfg.kernel())?;
        let path = l.kpca_model(&group);
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir).map_err(|e| PipelineError::io(dir, e))?;
        }
        model.save_json(&path).map_err(|e| PipelineError::io(&path, e))?;
        write_json(&l.kpca_scaler(&group), &scaler)?;
        let curve = explained_variance_curve(&model);
        let mut text = String::from("component,cumulative_fraction\n");
        for (i, v) in curve.iter().enumerate() {
            text.push_str(&format!("{},{v}\n", i + 1));
        }
        let cpath = l.kpca_curve(&group);
        std::fs::write(&cpath, text).map_err(|e| PipelineError::io(&cpath, e))?;

        for e in &all {
            let f = read_mat(&l.eeg_feats(&e.id), "extract-eeg-feats")?;
            let reduced = kpca_transform(&model, &scaler.transform(&f))?;
            ensure_finite(&format!("reduced features of {}", e.id), &reduced)?;
            write_mat(&l.reduced(&e.id), &reduced)?;
        }
        summary.insert(
            group,
            json!({
                "fit_frames": fit_rows.nrows(),
                "effective_dim": model.effective_dim,
                "explained_variance": curve.last(),
                "trials": all.len(),
            }),
        );
    }
    Ok(json!({ "groups": summary }))
}

pub(super) fn extract_acoustic(cfg: &RunConfig, sel: &Selection) -> Result<Value> {
    let l = layout(cfg);
    let m = load_manifest(cfg)?;
    let mut frames = Vec::new();
    for e in selected(&m, sel)? {
        let clip = read_wav(&m.wav_path(e))?;
        let audio = resample_poly(&clip.samples, clip.sample_rate_hz, MODEL_AUDIO_RATE_HZ)
            .map_err(|err| PipelineError::Data(format!("{}: {err}", e.id)))?;
        let n = audio.len();
        let set = extract_acoustic_set(&audio, MODEL_AUDIO_RATE_HZ, &cfg.acoustic)?;
        let feats = set.concatenated();
        ensure_finite(&format!("acoustic features of {}", e.id), &feats)?;
        write_mat(&l.audio15k(&e.id), &Array2::from_shape_vec((n, 1), audio).expect("n × 1"))?;
        write_mat(&l.acoustic(&e.id), &feats)?;
        frames.push(feats.nrows());
    }
    Ok(json!({
        "trials": frames.len(),
        "dim": crate::acoustic::TOTAL_ACOUSTIC_DIM,
        "sample_rate_hz": MODEL_AUDIO_RATE_HZ,
        "min_frames": frames.iter().min(),
        "max_frames": frames.iter().max(),
    }))
}

fn synth_pair(l: &Layout, e: &ManifestEntry) -> Result<SeqPair> {
    let clean = read_mat(&l.clean(&e.id), "preprocess")?;
    let target = read_mat(&l.audio15k(&e.id), "extract-acoustic")?;
    Ok(SeqPair {
        input: clean.t().as_standard_layout().into_owned(),
        target,
    })
}

pub(super) fn train_synth(cfg: &RunConfig, sel: &Selection) -> Result<Value> {
    let l = layout(cfg);
    let m = load_manifest(cfg)?;
    let split = load_split(&l)?;
    let entries = selected(&m, sel)?;
    let model_cfg = cfg.synthesis_model();
    let mut summary = Map::new();
    for (group, all) in group_entries(&entries, cfg.synthesis.grouping) {
        let train: Vec<SeqPair> = members(&all, &split.train_ids)
            .into_iter()
            .map(|e| synth_pair(&l, e))
            .collect::<Result<_>>()?;
        if train.is_empty() {
            log::warn!("synthesis group {group}: no training trials, skipped");
            continue;
        }
        let val: Vec<SeqPair> = members(&all, &split.val_ids)
            .into_iter()
            .map(|e| synth_pair(&l, e))
            .collect::<Result<_>>()?;
        let (sum, count) = train
            .iter()
            .fold((0.0, 0usize), |(s, c), p| (s + p.target.sum(), c + p.target.len()));
        let baseline_mean = sum / count as f64;

        let salt = format!("synth-{group}");
        let mut model: SynthesisModel = build_synthesis_model(&model_cfg, stage_seed(cfg.run.seed, Stage::Init, &salt))?;
        let tc = cfg.synthesis_train(stage_seed(cfg.run.seed, Stage::Shuffle, &salt));
        let history = train_with_callback(&mut model, &train, &val, &tc, log_epoch(&salt))?;

        history
            .write_csv(
                &{
                    let p = l.synth_history(&group);
                    if let Some(dir) = p.parent() {
                        std::fs::create_dir_all(dir).map_err(|e| PipelineError::io(dir, e))?;
                    }
                    p
                },
                &[
                    ("model", "synthesis".into()),
                    ("group", group.clone()),
                    ("epochs", tc.epochs.to_string()),
                    ("batch_size", tc.batch_size.to_string()),
                    ("lr", tc.adam.lr.to_string()),
                    ("seed", cfg.run.seed.to_string()),
                    ("train_trials", train.len().to_string()),
                    ("val_trials", val.len().to_string()),
                ],
            )?;
        let mut meta = Map::new();
        meta.insert("stage".into(), json!("synthesis"));
        meta.insert("group".into(), json!(group));
        meta.insert("baseline_mean".into(), json!(baseline_mean));
        meta.insert("epochs".into(), json!(tc.epochs));
        meta.insert("train_trials".into(), json!(train.len()));
        save_ckpt(&l.synth_checkpoint(&group), AnyModel::Synthesis(model), meta)?;
        summary.insert(group, history_summary(&history));
    }
    if summary.is_empty() {
        return Err(PipelineError::Data("no synthesis group has training trials".into()));
    }
    Ok(json!({
        "models": summary.len(),
        "epochs": cfg.synthesis.epochs,
        "parameters": model_cfg.param_count(),
        "groups": summary,
    }))
}

/// Column range of `kind` inside the concatenated 571-wide matrix.
fn kind_columns(kind: FeatureKind) -> std::ops::Range<usize> {
    let start: usize = FeatureKind::ALL[..kind.index() - 1].iter().map(|k| k.dim()).sum();
    start..start + kind.dim()
}

/// Reduced EEG and acoustic matrices of one trial, cut to common frames.
fn regress_inputs(l: &Layout, e: &ManifestEntry) -> Result<(Array2<f64>, Array2<f64>)> {
    let x = read_mat(&l.reduced(&e.id), "fit-kpca")?;
    let y = read_mat(&l.acoustic(&e.id), "extract-acoustic")?;
    let n = x.nrows().min(y.nrows());
    if n == 0 {
        return Err(PipelineError::Data(format!("trial {}: no frames", e.id)));
    }
    Ok((x.slice(s![..n, ..]).to_owned(), y.slice(s![..n, ..]).to_owned()))
}

fn kind_target(y: &Array2<f64>, kind: FeatureKind) -> Array2<f64> {
    y.slice(s![.., kind_columns(kind)]).to_owned()
}

pub(super) fn train_regress(cfg: &RunConfig, sel: &Selection) -> Result<Value> {
    let l = layout(cfg);
    let m = load_manifest(cfg)?;
    let split = load_split(&l)?;
    let entries = selected(&m, sel)?;
    let kinds: Vec<FeatureKind> = match sel.kind {
        Some(k) => vec![k],
        None => FeatureKind::ALL.to_vec(),
    };
    let mut summary = Map::new();
    for (group, all) in group_entries(&entries, cfg.regression.grouping) {
        let train: Vec<(Array2<f64>, Array2<f64>)> = members(&all, &split.train_ids)
            .into_iter()
            .map(|e| regress_inputs(&l, e))
            .collect::<Result<_>>()?;
        if train.is_empty() {
            log::warn!("regression group {group}: no training trials, skipped");
            continue;
        }
        let val: Vec<(Array2<f64>, Array2<f64>)> = members(&all, &split.val_ids)
            .into_iter()
            .map(|e| regress_inputs(&l, e))
            .collect::<Result<_>>()?;
        let in_scaler = Standardizer::fit(train.iter().map(|(x, _)| x));
        let mut group_summary = Map::new();
        for &kind in &kinds {
            let targets: Vec<Array2<f64>> = train.iter().map(|(_, y)| kind_target(y, kind)).collect();
            let out_scaler = Standardizer::fit(targets.iter());
            let to_pairs = |set: &[(Array2<f64>, Array2<f64>)]| -> Vec<SeqPair> {
                set.iter()
                    .map(|(x, y)| SeqPair {
                        input: in_scaler.transform(x),
                        target: out_scaler.transform(&kind_target(y, kind)),
                    })
                    .collect()
            };
            let (tp, vp) = (to_pairs(&train), to_pairs(&val));
            let salt = format!("regress-{group}-{}", kind.label());
            let mut model: RegressionModel = build_regression_model(
                &cfg.regression_model(kind.dim()),
                stage_seed(cfg.run.seed, Stage::Init, &salt),
            )?;
            let tc = cfg.regression_train(stage_seed(cfg.run.seed, Stage::Shuffle, &salt));
            let history = train_with_callback(&mut model, &tp, &vp, &tc, log_epoch(&salt))?;
            let hpath = l.regress_history(&group, kind);
            if let Some(dir) = hpath.parent() {
                std::fs::create_dir_all(dir).map_err(|e| PipelineError::io(dir, e))?;
            }
            history.write_csv(
                &hpath,
                &[
                    ("model", "regression".into()),
                    ("group", group.clone()),
                    ("kind", kind.label()),
                    ("epochs", tc.epochs.to_string()),
                    ("batch_size", tc.batch_size.to_string()),
                    ("lr", tc.adam.lr.to_string()),
                    ("seed", cfg.run.seed.to_string()),
                ],
            )?;
            let mut meta = Map::new();
            meta.insert("stage".into(), json!("regression"));
            meta.insert("group".into(), json!(group));
            meta.insert("kind".into(), json!(kind.label()));
            meta.insert("epochs".into(), json!(tc.epochs));
            meta.insert("input_scaler".into(), serde_json::to_value(&in_scaler).expect("serializable"));
            meta.insert("target_scaler".into(), serde_json::to_value(&out_scaler).expect("serializable"));
            save_ckpt(&l.regress_checkpoint(&group, kind), AnyModel::Regression(model), meta)?;
            group_summary.insert(kind.label(), history_summary(&history));
        }
        summary.insert(group, Value::Object(group_summary));
    }
    if summary.is_empty() {
        return Err(PipelineError::Data("no regression group has training trials".into()));
    }
    Ok(json!({
        "models": summary.values().map(|g| g.as_object().map_or(0, |o| o.len())).sum::<usize>(),
        "kinds": kinds.iter().map(|k| k.label()).collect::<Vec<_>>(),
        "epochs": cfg.regression.epochs,
        "groups": summary,
    }))
}

/// Selected test trials whose group had training trials (and hence a
/// trained model); test trials of untrainable groups are skipped.
fn test_entries<'a>(
    m: &'a DatasetManifest,
    sel: &Selection,
    split: &SplitAssignment,
    grouping: Grouping,
) -> Result<Vec<&'a ManifestEntry>> {
    let trained: std::collections::BTreeSet<String> = m
        .trials
        .iter()
        .filter(|e| split.train_ids.contains(&e.id))
        .map(|e| group_key(grouping, e.subject, e.condition))
        .collect();
    let mut v = Vec::new();
    for e in selected(m, sel)?.into_iter().filter(|e| split.test_ids.contains(&e.id)) {
        if trained.contains(&group_key(grouping, e.subject, e.condition)) {
            v.push(e);
        } else {
            log::warn!("test trial {}: its group had no training trials, skipped", e.id);
        }
    }
    if v.is_empty() {
        return Err(PipelineError::Data("no test trials match the selection".into()));
    }
    Ok(v)
}

fn merge(reports: Vec<MetricsReport>) -> Option<MetricsReport> {
    let mut it = reports.into_iter();
    let mut out = it.next()?;
    for r in it {
        out.rows.extend(r.rows);
        out.trials.extend(r.trials);
    }
    let order = |k: &Option<String>| {
        k.as_deref()
            .and_then(|s| s.parse::<FeatureKind>().ok())
            .map_or(0, |k| k.index())
    };
    out.rows.sort_by_key(|r| (r.subject, r.condition, order(&r.kind)));
    out.trials.sort_by(|a, b| (&a.id, order(&a.kind)).cmp(&(&b.id, order(&b.kind))));
    Some(out)
}

fn write_report(l: &Layout, scope: &str, report: &MetricsReport) -> Result<()> {
    report.write_json(&l.metrics(scope, "json"))?;
    report.write_csv(&l.metrics(scope, "csv"))?;
    Ok(())
}

fn mean(v: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        f64::NAN
    } else {
        s / n as f64
    }
}

pub(super) fn eval_synth(cfg: &RunConfig, sel: &Selection) -> Result<Value> {
    let l = layout(cfg);
    let m = load_manifest(cfg)?;
    let split = load_split(&l)?;
    let tests = test_entries(&m, sel, &split, cfg.synthesis.grouping)?;
    let mut reports = Vec::new();
    for (group, members) in group_entries(&tests, cfg.synthesis.grouping) {
        let path = l.synth_checkpoint(&group);
        let ckpt = load_checkpoint(&path)
            .map_err(|e| PipelineError::Data(format!("{e} (run train-synth first)")))?;
        let AnyModel::Synthesis(model) = ckpt.model else {
            return Err(PipelineError::Data(format!("{} is not a synthesis model", path.display())));
        };
        let baseline_mean = meta_value(&ckpt.meta, "baseline_mean", &path)?
            .as_f64()
            .ok_or_else(|| PipelineError::Data(format!("{}: baseline_mean is not a number", path.display())))?;
        let mut trials = Vec::new();
        for e in members {
            let pair = synth_pair(&l, e)?;
            let pred = predict_one(&model, &pair.input)?;
            ensure_finite(&format!("prediction for {}", e.id), &pred)?;
            write_mat(&l.prediction(&e.id), &pred)?;
            trials.push(SynthesisTrial {
                id: e.id.clone(),
                subject: e.subject,
                condition: e.condition,
                input: pair.input,
                target: pair.target.column(0).to_vec(),
            });
        }
        reports.push(evaluate_synthesis(
            &model,
            &trials,
            baseline_mean,
            metadata(cfg, "waveform on the training scale (peak-normalised audio in [-1, 1])"),
        )?);
    }
    let report = merge(reports).expect("at least one test trial");
    write_report(&l, "synthesis", &report)?;
    let rmse = mean(report.trials.iter().map(|t| t.rmse));
    let base = mean(report.trials.iter().map(|t| t.baseline_rmse));
    Ok(json!({
        "test_trials": report.trials.len(),
        "rmse": rmse,
        "baseline_rmse": base,
        "ratio": rmse / base,
        "path": l.metrics("synthesis", "json").display().to_string(),
    }))
}

/// Per kind, the root mean of squared per-trial RMSEs over all test trials
/// (model, baseline).
pub fn overall_by_kind(report: &MetricsReport) -> BTreeMap<FeatureKind, (f64, f64)> {
    let mut acc: BTreeMap<FeatureKind, (f64, f64, usize)> = BTreeMap::new();
    for t in &report.trials {
        if let Some(kind) = t.kind.as_deref().and_then(|k| k.parse::<FeatureKind>().ok()) {
            let a = acc.entry(kind).or_default();
            a.0 += t.rmse * t.rmse;
            a.1 += t.baseline_rmse * t.baseline_rmse;
            a.2 += 1;
        }
    }
    acc.into_iter()
        .map(|(k, (m, b, n))| (k, ((m / n as f64).sqrt(), (b / n as f64).sqrt())))
        .collect()
}

/// Number of kinds whose overall RMSE is below the mean-predictor baseline.
pub fn kinds_beating_baseline(report: &MetricsReport) -> usize {
    overall_by_kind(report).values().filter(|(m, b)| m < b).count()
}

pub(super) fn eval_regress(cfg: &RunConfig, sel: &Selection) -> Result<Value> {
    let l = layout(cfg);
    let m = load_manifest(cfg)?;
    let split = load_split(&l)?;
    let tests = test_entries(&m, sel, &split, cfg.regression.grouping)?;
    let mut reports = Vec::new();
    for (group, members) in group_entries(&tests, cfg.regression.grouping) {
        let mut models = BTreeMap::new();
        let mut baselines = BTreeMap::new();
        let mut out_scalers = BTreeMap::new();
        let mut in_scaler = None;
        for kind in FeatureKind::ALL {
            let path = l.regress_checkpoint(&group, kind);
            let ckpt = load_checkpoint(&path)
                .map_err(|e| PipelineError::Data(format!("{e} (run train-regress first)")))?;
            let AnyModel::Regression(model) = ckpt.model else {
                return Err(PipelineError::Data(format!("{} is not a regression model", path.display())));
            };
            if in_scaler.is_none() {
                in_scaler = Some(meta_scaler(&ckpt.meta, "input_scaler", &path)?);
            }
            out_scalers.insert(kind, meta_scaler(&ckpt.meta, "target_scaler", &path)?);
            // the training mean is zero on the standardized scale
            baselines.insert(kind, vec![0.0; kind.dim()]);
            models.insert(kind, model);
        }
        let in_scaler = in_scaler.expect("sixteen kinds loaded");
        let mut trials = Vec::new();
        for e in members {
            let (x, y) = regress_inputs(&l, e)?;
            let targets = FeatureKind::ALL
                .into_iter()
                .map(|k| (k, out_scalers[&k].transform(&kind_target(&y, k))))
                .collect();
            trials.push(AcousticTrial {
                id: e.id.clone(),
                subject: e.subject,
                condition: e.condition,
                input: in_scaler.transform(&x),
                targets,
            });
        }
        reports.push(evaluate_acoustic(
            &models,
            &baselines,
            &trials,
            metadata(cfg, "per-dimension z-scores fitted on the group's training frames"),
        )?);
    }
    let report = merge(reports).expect("at least one test trial");
    write_report(&l, "acoustic", &report)?;
    let per_kind: Map<String, Value> = overall_by_kind(&report)
        .into_iter()
        .map(|(k, (r, b))| (k.label(), json!({ "rmse": r, "baseline_rmse": b })))
        .collect();
    Ok(json!({
        "test_trials": report.trials.len() / FeatureKind::ALL.len(),
        "kinds_beating_baseline": kinds_beating_baseline(&report),
        "kinds": per_kind,
        "path": l.metrics("acoustic", "json").display().to_string(),
    }))
}

pub(super) fn export_spectrograms(cfg: &RunConfig, sel: &Selection) -> Result<Value> {
    let l = layout(cfg);
    let m = load_manifest(cfg)?;
    let split = load_split(&l)?;
    let fft = cfg.report.spectrogram_fft as usize;
    let hop = cfg.report.spectrogram_hop as usize;
    let mut files = Vec::new();
    for e in test_entries(&m, sel, &split, cfg.synthesis.grouping)? {
        let pred = read_mat(&l.prediction(&e.id), "eval-synth")?;
        let truth = read_mat(&l.audio15k(&e.id), "extract-acoustic")?;
        for (which, wave) in [("pred", pred), ("true", truth)] {
            let prefix = l.spectrogram_prefix(&e.id, which);
            if let Some(dir) = prefix.parent() {
                std::fs::create_dir_all(dir).map_err(|err| PipelineError::io(dir, err))?;
            }
            let out = export_spectrogram(wave.as_slice().expect("contiguous"), MODEL_AUDIO_RATE_HZ, fft, hop, &prefix)?;
            files.push(out.pgm_path.display().to_string());
        }
    }
    Ok(json!({ "images": files.len(), "fft_size": fft, "hop": hop, "files": files }))
}

pub(super) fn grad_check(cfg: &RunConfig) -> Result<Value> {
    let entries = gradient_suite(stage_seed(cfg.run.seed, Stage::Init, "grad-check"), GRAD_SHAPES);
    let max = entries.iter().map(|e| e.max_rel_err).fold(0.0, f64::max);
    let layers: Map<String, Value> = entries
        .iter()
        .map(|e| (e.layer.clone(), json!({ "max_rel_err": e.max_rel_err, "shapes": e.shapes })))
        .collect();
    if !(max < GRAD_TOL) {
        let worst = entries.iter().max_by(|a, b| a.max_rel_err.total_cmp(&b.max_rel_err)).expect("non-empty");
        return Err(PipelineError::Numeric(format!(
            "gradient check failed: {} max relative error {:.3e} at {}",
            worst.layer, worst.max_rel_err, worst.worst_shape
        )));
    }
    Ok(json!({ "max_rel_err": max, "tolerance": GRAD_TOL, "layers": layers }))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kind_columns_tile_571() {
        let mut next = 0;
        for k in FeatureKind::ALL {
            let r = kind_columns(k);
            assert_eq!(r.start, next);
            assert_eq!(r.len(), k.dim());
            next = r.end;
        }
        assert_eq!(next, 571);
    }

    #[test]
    fn group_keys() {
        assert_eq!(group_key(Grouping::Pooled, 2, Condition::Listen), "all");
        assert_eq!(group_key(Grouping::Subject, 2, Condition::Listen), "s2");
        assert_eq!(group_key(Grouping::SubjectCondition, 2, Condition::Listen), "s2-listen");
    }
}
