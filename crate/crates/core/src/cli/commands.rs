use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use super::config::ExperimentConfig;
use crate::data::labels::label_index;
use crate::data::{
    make_splits, official_split, parse_entry_csv, preprocess_eval, synth_dataset, AgeScaler, DatasetStats, GrayImage,
    ImageDataset, ImageSource, Record, SplitPlan, Subset, DISPLAY_NAMES, LABELS, NUM_PATHOLOGIES,
};
use crate::error::{Error, Result};
use crate::explain::grad_cam;
use crate::metrics::tables::{
    render_auc_table, render_correlation_table, split_tag, tag_setup, variant_grid, AucColumn, CellStyle, ColumnGroup,
    CROSS_VALIDATED, SINGLE_SPLIT,
};
use crate::metrics::{
    aggregate_folds, load_score_csv, mae, roc_auc, spearman_matrix, write_score_csv, youden_operating_point, EvalReport,
    ScoreSet, SpearmanMode,
};
use crate::model::{build_model, build_probe, Architecture, Checkpoint, Freeze, MetaFeatures, Model, ModelConfig, ProbeTarget};
use crate::tensor::Tensor;
use crate::train::{predict, train, TrainPlan};

/// Exclusive marker file held for the lifetime of a command writing `dir`.
pub struct RunLock {
    path: PathBuf,
}

impl RunLock {
    pub fn acquire(dir: &Path) -> Result<RunLock> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join(".lock");
        fs::OpenOptions::new()
            .write(true)
            .create_new(true)
            .open(&path)
            .map_err(|e| match e.kind() {
                std::io::ErrorKind::AlreadyExists => {
                    Error::Config(format!("{} is locked by another command", dir.display()))
                }
                _ => Error::io(&path, e),
            })?;
        Ok(RunLock { path })
    }
}

impl Drop for RunLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)? + "\n").map_err(|e| Error::io(path, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn records(cfg: &ExperimentConfig) -> Result<Vec<Record>> {
    parse_entry_csv(&cfg.csv()?)
}

fn load_split(cfg: &ExperimentConfig) -> Result<SplitPlan> {
    let path = cfg.split_path();
    if !path.is_file() {
        return Err(Error::Config(format!(
            "split plan {} not found; run `cxray split` first",
            path.display()
        )));
    }
    SplitPlan::load(&path)
}

/// Records and age scaler of one re-sample; the scaler is fitted on the
/// training subset.
struct Fold {
    records: Vec<Record>,
    split: SplitPlan,
    resample: usize,
    scaler: AgeScaler,
    images: PathBuf,
}

impl Fold {
    fn open(cfg: &ExperimentConfig, resample: usize) -> Result<Fold> {
        let records = records(cfg)?;
        let split = load_split(cfg)?;
        let rs = split.resample(resample)?;
        let train = rs.indices(&records, Subset::Train);
        if train.is_empty() {
            return Err(Error::Validation(format!("re-sample {resample} has no training images")));
        }
        let scaler = AgeScaler::fit(train.iter().map(|&i| records[i].age_years))?;
        Ok(Fold {
            images: cfg.images()?,
            records,
            split,
            resample,
            scaler,
        })
    }

    fn dataset(&self, subset: Subset, config: &ModelConfig) -> Result<ImageDataset> {
        let idx = self.split.resample(self.resample)?.indices(&self.records, subset);
        if idx.is_empty() {
            return Err(Error::Validation(format!(
                "re-sample {} has an empty {subset} subset",
                self.resample
            )));
        }
        ImageDataset::new(
            idx.iter().map(|&i| self.records[i].clone()).collect(),
            ImageSource::Directory(self.images.clone()),
            config.input_size,
            config.input_channels,
            self.scaler.clone(),
        )
    }
}

fn scores_for(model: &Model, tag: &str, fold: usize, data: &ImageDataset, batch: usize) -> Result<ScoreSet> {
    let p = predict(model, data, batch)?;
    ScoreSet::new(
        tag,
        fold,
        data.records.iter().map(|r| r.image.clone()).collect(),
        p.outputs,
        p.labels,
    )
}

pub fn cmd_synth(cfg: &ExperimentConfig, out: &Path) -> Result<()> {
    let corpus = synth_dataset(&cfg.synth()?, cfg.seed)?;
    let _lock = RunLock::acquire(out)?;
    corpus.write(out)?;
    println!(
        "wrote {} synthetic images of {} patients to {}",
        corpus.records.len(),
        corpus.spec.patients,
        out.display()
    );
    Ok(())
}

#[derive(Serialize)]
struct StatsFile<'a> {
    #[serde(flatten)]
    stats: &'a DatasetStats,
    gender_ratio: f64,
    view_ratio: f64,
}

pub fn cmd_stats(cfg: &ExperimentConfig, out: &Path) -> Result<()> {
    let stats = DatasetStats::compute(&records(cfg)?);
    create_dir(out)?;
    write_json(
        &out.join("stats.json"),
        &StatsFile {
            stats: &stats,
            gender_ratio: stats.gender_ratio(),
            view_ratio: stats.view_ratio(),
        },
    )?;
    let path = out.join("labels.csv");
    let mut w = csv::Writer::from_path(&path)?;
    w.write_record(["label", "count", "percent"])?;
    for k in 0..NUM_PATHOLOGIES {
        w.write_record([
            DISPLAY_NAMES[k].to_string(),
            stats.positives[k].to_string(),
            format!("{:.2}", stats.prevalence(k)),
        ])?;
    }
    w.flush().map_err(|e| Error::io(&path, e))?;
    println!("images {} patients {}", stats.images, stats.patients);
    for k in 0..NUM_PATHOLOGIES {
        println!("{:<20} {:>7}", DISPLAY_NAMES[k], stats.positives[k]);
    }
    println!(
        "female/male {}/{} ({:.2})  PA/AP {}/{} ({:.2})  age {:.2} +- {:.2}",
        stats.female,
        stats.male,
        stats.gender_ratio(),
        stats.pa,
        stats.ap,
        stats.view_ratio(),
        stats.age_mean,
        stats.age_std
    );
    if stats.ages_clamped > 0 {
        eprintln!("warning: {} ages above the plausible maximum were clamped", stats.ages_clamped);
    }
    Ok(())
}

pub fn cmd_split(cfg: &ExperimentConfig, official: Option<(PathBuf, PathBuf)>) -> Result<()> {
    let records = records(cfg)?;
    let official = official.or(match (cfg.map.path("data.train_val_list"), cfg.map.path("data.test_list")) {
        (Some(a), Some(b)) => Some((a, b)),
        _ => None,
    });
    let plan = match official {
        Some((tv, test)) => official_split(&records, &tv, &test, cfg.seed)?,
        None => make_splits(&records, cfg.seed)?,
    };
    let path = cfg.split_path();
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        create_dir(dir)?;
    }
    plan.save(&path)?;
    for r in &plan.resamples {
        let p = r.percentages();
        println!(
            "resample {}: patients {}/{}/{} images {}/{}/{} ({:.1}%/{:.1}%/{:.1}%)",
            r.index,
            r.patient_counts[0],
            r.patient_counts[1],
            r.patient_counts[2],
            r.images[0],
            r.images[1],
            r.images[2],
            p[0],
            p[1],
            p[2]
        );
    }
    println!("wrote {}", path.display());
    Ok(())
}

/// Tag recorded in the `train.json` next to a checkpoint.
fn run_tag(checkpoint: &Path) -> Option<String> {
    let text = fs::read_to_string(checkpoint.parent()?.join("train.json")).ok()?;
    let v: serde_json::Value = serde_json::from_str(&text).ok()?;
    v["tag"].as_str().map(str::to_string)
}

#[derive(Serialize)]
struct TrainSummary {
    tag: String,
    resample: usize,
    seed: u64,
    best_epoch: usize,
    best_val_loss: f64,
    epochs: usize,
    plan: PlanFile,
}

#[derive(Serialize)]
struct PlanFile {
    batch_size: usize,
    initial_lr: f64,
    plateau_factor: f64,
    patience: usize,
    min_lr: f64,
    max_epochs: usize,
    augment: bool,
}

impl From<&TrainPlan> for PlanFile {
    fn from(p: &TrainPlan) -> Self {
        PlanFile {
            batch_size: p.batch_size,
            initial_lr: p.initial_lr,
            plateau_factor: p.plateau_factor,
            patience: p.patience,
            min_lr: p.min_lr,
            max_epochs: p.max_epochs,
            augment: p.augment,
        }
    }
}

fn fresh_run_dir(dir: &Path) -> Result<RunLock> {
    let lock = RunLock::acquire(dir)?;
    if dir.join("model.json").exists() {
        return Err(Error::Config(format!(
            "{} already holds a trained model; choose another run.tag or output directory",
            dir.display()
        )));
    }
    Ok(lock)
}

pub fn cmd_train(cfg: &ExperimentConfig, resample: usize) -> Result<PathBuf> {
    let fold = Fold::open(cfg, resample)?;
    let config = cfg.model()?;
    let tag = cfg.tag()?;
    let mut model = build_model(&config, cfg.seed)?;
    if config.freeze != Freeze::None {
        let path = cfg.map.path("model.pretrained").ok_or_else(|| {
            Error::Config("off-the-shelf and fine-tuned runs need `model.pretrained`".into())
        })?;
        model.import_pretrained(&Checkpoint::load(&path)?)?;
    }
    let plan = cfg.plan(TrainPlan::for_model(&model, cfg.seed))?;
    let train_set = fold.dataset(Subset::Train, &config)?;
    let val_set = fold.dataset(Subset::Val, &config)?;
    let test_set = fold.dataset(Subset::Test, &config)?;
    let dir = cfg.out.join(&tag).join(format!("fold{resample}"));
    let _lock = fresh_run_dir(&dir)?;
    let outcome = match train(&mut model, &plan, &train_set, &val_set) {
        Ok(o) => o,
        Err(e @ Error::Diverged { .. }) => {
            model.save(&dir.join("model.json"))?;
            eprintln!("training diverged; kept the last good parameters in {}", dir.display());
            return Err(e);
        }
        Err(e) => return Err(e),
    };
    model.save(&dir.join("model.json"))?;
    outcome.history.save_csv(&dir.join("history.csv"))?;
    scores_for(&model, &tag, resample, &test_set, plan.eval_batch_size)?.save(&dir.join("scores.csv"))?;
    write_json(
        &dir.join("train.json"),
        &TrainSummary {
            tag: tag.clone(),
            resample,
            seed: cfg.seed,
            best_epoch: outcome.best_epoch,
            best_val_loss: outcome.best_val_loss,
            epochs: outcome.history.epochs.len(),
            plan: (&plan).into(),
        },
    )?;
    println!(
        "{tag} fold {resample}: best epoch {} of {}, validation loss {:.6}; wrote {}",
        outcome.best_epoch,
        outcome.history.epochs.len(),
        outcome.best_val_loss,
        dir.display()
    );
    Ok(dir)
}

fn report_from_sets(tag: &str, sets: &[ScoreSet]) -> Result<EvalReport> {
    let mut rows = Vec::new();
    for s in sets {
        let (row, warnings) = s.evaluate()?;
        for w in warnings {
            eprintln!("warning: {w}");
        }
        rows.push(row);
    }
    match rows.len() {
        0 => Err(Error::usage("nothing to evaluate")),
        1 => EvalReport::single(tag, &rows[0]),
        _ => aggregate_folds(tag, &rows),
    }
}

/// Group score sets by model, in first-seen order.
fn by_model(sets: Vec<ScoreSet>) -> Vec<(String, Vec<ScoreSet>)> {
    let mut out: Vec<(String, Vec<ScoreSet>)> = Vec::new();
    for s in sets {
        match out.iter_mut().find(|(m, _)| *m == s.model) {
            Some((_, v)) => v.push(s),
            None => out.push((s.model.clone(), vec![s])),
        }
    }
    out
}

pub fn write_report(report: &EvalReport, dir: &Path) -> Result<()> {
    create_dir(dir)?;
    let csv_path = dir.join("report.csv");
    let f = fs::File::create(&csv_path).map_err(|e| Error::io(&csv_path, e))?;
    report.write_csv(f)?;
    write_json(&dir.join("report.json"), report)?;
    let style = if report.average.folds > 1 { CROSS_VALIDATED } else { SINGLE_SPLIT };
    let text = render_auc_table(
        &[ColumnGroup {
            title: String::new(),
            columns: vec![AucColumn {
                header: report.tag.clone(),
                report: report.clone(),
            }],
        }],
        style,
    );
    write_text(&dir.join("report.txt"), &text)?;
    print!("{text}");
    Ok(())
}

pub fn cmd_eval(
    cfg: &ExperimentConfig,
    checkpoints: &[PathBuf],
    score_files: &[PathBuf],
    resample: Option<usize>,
    out: Option<&Path>,
) -> Result<()> {
    match (checkpoints.is_empty(), score_files.is_empty()) {
        (true, true) => return Err(Error::usage("eval needs --checkpoint or --scores")),
        (false, false) => return Err(Error::usage("use either --checkpoint or --scores, not both")),
        _ => {}
    }
    if !score_files.is_empty() {
        let mut sets = Vec::new();
        for p in score_files {
            sets.extend(load_score_csv(p)?);
        }
        for (tag, sets) in by_model(sets) {
            let dir = out.map(Path::to_path_buf).unwrap_or_else(|| cfg.out.join(&tag).join("eval"));
            let dir = if out.is_some() && score_files.len() > 1 { dir.join(&tag) } else { dir };
            write_report(&report_from_sets(&tag, &sets)?, &dir)?;
        }
        return Ok(());
    }
    if resample.is_some() && checkpoints.len() > 1 {
        return Err(Error::usage("--resample applies to a single checkpoint"));
    }
    let mut sets = Vec::new();
    let mut tag = None;
    for (k, path) in checkpoints.iter().enumerate() {
        let model = Model::load(path)?;
        let config = *model
            .architecture()
            .image_config()
            .filter(|_| matches!(model.architecture(), Architecture::Resnet { .. }))
            .ok_or_else(|| Error::usage(format!("{} is not an image classifier", path.display())))?;
        let fold_index = resample.unwrap_or(k);
        let fold = Fold::open(cfg, fold_index)?;
        let t = match cfg.map.get_str("run.tag") {
            Some(t) => t.to_string(),
            None => run_tag(path).unwrap_or_else(|| model.tag()),
        };
        if tag.get_or_insert_with(|| t.clone()) != &t {
            return Err(Error::usage("all checkpoints of one evaluation must share a tag"));
        }
        let batch = cfg.plan(TrainPlan::default())?.eval_batch_size;
        sets.push(scores_for(&model, &t, fold_index, &fold.dataset(Subset::Test, &config)?, batch)?);
    }
    let tag = tag.expect("at least one checkpoint");
    let dir = out.map(Path::to_path_buf).unwrap_or_else(|| cfg.out.join(&tag).join("eval"));
    let _lock = RunLock::acquire(&dir)?;
    let scores_path = dir.join("scores.csv");
    let f = fs::File::create(&scores_path).map_err(|e| Error::io(&scores_path, e))?;
    write_score_csv(&sets, f)?;
    write_report(&report_from_sets(&tag, &sets)?, &dir)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum TableStyle {
    /// Setups grouped without/with non-image features, values x100 with spread.
    CrossValidated,
    /// Networks as columns under their setup suffix, three decimals.
    Official,
}

pub fn render_table(style: TableStyle, reports: &[EvalReport]) -> Result<String> {
    let (groups, cells): (Vec<ColumnGroup>, CellStyle) = match style {
        TableStyle::CrossValidated => {
            let mut keyed = Vec::new();
            for r in reports {
                let (v, meta) = tag_setup(&r.tag)
                    .ok_or_else(|| Error::usage(format!("tag `{}` names no known setup", r.tag)))?;
                if keyed.iter().any(|(kv, km, _)| *kv == v && *km == meta) {
                    return Err(Error::usage(format!("two reports for the setup of `{}`", r.tag)));
                }
                keyed.push((v, meta, r.clone()));
            }
            (variant_grid(&keyed), CROSS_VALIDATED)
        }
        TableStyle::Official => {
            let mut groups: Vec<ColumnGroup> = Vec::new();
            for r in reports {
                let (net, suffix) = split_tag(&r.tag);
                let column = AucColumn {
                    header: net.to_string(),
                    report: r.clone(),
                };
                match groups.iter_mut().find(|g| g.title == suffix) {
                    Some(g) => g.columns.push(column),
                    None => groups.push(ColumnGroup {
                        title: suffix.to_string(),
                        columns: vec![column],
                    }),
                }
            }
            (groups, SINGLE_SPLIT)
        }
    };
    Ok(render_auc_table(&groups, cells))
}

pub fn cmd_table(style: TableStyle, report_files: &[PathBuf], out: Option<&Path>) -> Result<()> {
    let mut reports = Vec::new();
    for p in report_files {
        let text = fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
        reports.push(serde_json::from_str::<EvalReport>(&text)?);
    }
    let text = render_table(style, &reports)?;
    if let Some(path) = out {
        write_text(path, &text)?;
    }
    print!("{text}");
    Ok(())
}

pub fn cmd_compare(score_files: &[PathBuf], mode: SpearmanMode, out: &Path) -> Result<()> {
    let mut sets = Vec::new();
    for p in score_files {
        sets.extend(load_score_csv(p)?);
    }
    let models = by_model(sets);
    if models.len() < 2 {
        return Err(Error::usage("compare needs score sets of at least two models"));
    }
    let names: Vec<String> = models.iter().map(|(m, _)| m.clone()).collect();
    let sets: Vec<Vec<ScoreSet>> = models.into_iter().map(|(_, s)| s).collect();
    let matrix = spearman_matrix(&sets, mode)?;
    create_dir(out)?;
    let path = out.join("correlation.csv");
    let mut w = csv::Writer::from_path(&path)?;
    let mut header = vec!["model".to_string()];
    header.extend(names.iter().cloned());
    w.write_record(&header)?;
    for (name, row) in names.iter().zip(&matrix) {
        let mut rec = vec![name.clone()];
        rec.extend(row.iter().map(|v| format!("{v:.6}")));
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io(&path, e))?;
    // Group by metadata use when every tag names a known setup.
    let setups: Option<Vec<(crate::model::Variant, bool)>> = names.iter().map(|n| tag_setup(n)).collect();
    let groups: Vec<(String, Vec<String>)> = match setups {
        Some(s) if s.windows(2).all(|w| w[0].1 <= w[1].1) => {
            let mut g: Vec<(String, Vec<String>)> = Vec::new();
            for (v, meta) in s {
                let title = if meta { "With non-image features" } else { "Without non-image features" };
                match g.iter_mut().find(|(t, _)| t == title) {
                    Some((_, cols)) => cols.push(v.label().to_string()),
                    None => g.push((title.to_string(), vec![v.label().to_string()])),
                }
            }
            g
        }
        _ => vec![(String::new(), names.clone())],
    };
    let text = render_correlation_table(&groups, &matrix);
    write_text(&out.join("correlation.txt"), &text)?;
    print!("{text}");
    Ok(())
}

#[derive(Serialize)]
struct ProbeReport {
    tag: String,
    target: &'static str,
    resample: usize,
    test_examples: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    auc: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    threshold: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    sensitivity: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    specificity: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    mae_years: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    mae_std_years: Option<f64>,
}

pub fn cmd_probe(cfg: &ExperimentConfig, checkpoint: &Path, target: ProbeTarget, resample: usize) -> Result<PathBuf> {
    let base = Model::load(checkpoint)?;
    let config = match base.architecture() {
        Architecture::Resnet { config } => *config,
        _ => return Err(Error::usage("probes need a trained image classifier checkpoint")),
    };
    let mut probe = build_probe(&base, target, cfg.seed)?;
    let fold = Fold::open(cfg, resample)?;
    let plan = cfg.plan(TrainPlan::for_model(&probe, cfg.seed))?;
    let train_set = fold.dataset(Subset::Train, &config)?;
    let val_set = fold.dataset(Subset::Val, &config)?;
    let test_set = fold.dataset(Subset::Test, &config)?;
    let suffix = probe.tag().strip_prefix(&base.tag()).unwrap_or_default().to_string();
    let tag = match cfg.map.get_str("run.tag") {
        Some(t) => t.to_string(),
        None => run_tag(checkpoint).unwrap_or_else(|| base.tag()) + &suffix,
    };
    let dir = cfg.out.join(&tag).join(format!("fold{resample}"));
    let _lock = fresh_run_dir(&dir)?;
    let outcome = train(&mut probe, &plan, &train_set, &val_set)?;
    probe.save(&dir.join("model.json"))?;
    outcome.history.save_csv(&dir.join("history.csv"))?;
    let p = predict(&probe, &test_set, plan.eval_batch_size)?;
    let pred: Vec<f64> = p.output_column(0).iter().map(|&v| v as f64).collect();
    let mut report = ProbeReport {
        tag: tag.clone(),
        target: target.name(),
        resample,
        test_examples: p.rows,
        auc: None,
        threshold: None,
        sensitivity: None,
        specificity: None,
        mae_years: None,
        mae_std_years: None,
    };
    match target {
        ProbeTarget::Age => {
            let truth: Vec<f64> = p.meta_column(0).iter().map(|&v| v as f64).collect();
            let e = mae(&pred, &truth)?;
            report.mae_years = Some(fold.scaler.span_years(e.mean)?);
            report.mae_std_years = Some(fold.scaler.span_years(e.std)?);
            println!(
                "{tag}: MAE {:.2} +- {:.2} years",
                report.mae_years.unwrap_or_default(),
                report.mae_std_years.unwrap_or_default()
            );
        }
        ProbeTarget::Gender | ProbeTarget::View => {
            let col = if target == ProbeTarget::Gender { 1 } else { 2 };
            let truth: Vec<bool> = p.meta_column(col).iter().map(|&v| v > 0.5).collect();
            let auc = roc_auc(&pred, &truth)?;
            let op = youden_operating_point(&pred, &truth)?;
            report.auc = Some(auc);
            report.threshold = Some(op.threshold);
            report.sensitivity = Some(op.sensitivity);
            report.specificity = Some(op.specificity);
            println!(
                "{tag}: AUC {auc:.4}, sensitivity {:.1}%, specificity {:.1}% at threshold {:.4}",
                100.0 * op.sensitivity,
                100.0 * op.specificity,
                op.threshold
            );
        }
    }
    write_json(&dir.join("probe.json"), &report)?;
    Ok(dir)
}

/// Label index from a number or a label name.
pub fn parse_label(s: &str) -> Result<usize> {
    if let Ok(k) = s.trim().parse::<usize>() {
        return if k < LABELS.len() {
            Ok(k)
        } else {
            Err(Error::usage(format!("label index {k} outside [0, {})", LABELS.len())))
        };
    }
    label_index(s).ok_or_else(|| Error::usage(format!("unknown label `{s}`")))
}

pub fn cmd_gradcam(
    cfg: &ExperimentConfig,
    checkpoint: &Path,
    images: &[PathBuf],
    label: &str,
    resample: usize,
    out: &Path,
) -> Result<()> {
    let label = parse_label(label)?;
    let model = Model::load(checkpoint)?;
    let config = *model
        .architecture()
        .image_config()
        .ok_or_else(|| Error::usage("Grad-CAM needs an image model"))?;
    let fold = if model.architecture().uses_meta() {
        Some(Fold::open(cfg, resample)?)
    } else {
        None
    };
    create_dir(out)?;
    for path in images {
        let img = GrayImage::load(path)?;
        let plane = preprocess_eval(&img, config.input_size)?;
        let mut data = Vec::with_capacity(plane.len() * config.input_channels);
        for _ in 0..config.input_channels {
            data.extend_from_slice(&plane);
        }
        let x = Tensor::new(vec![1, config.input_channels, config.input_size, config.input_size], data)?;
        let name = path
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default();
        let meta = match &fold {
            Some(f) => {
                let r = f
                    .records
                    .iter()
                    .find(|r| r.image == name)
                    .ok_or_else(|| Error::usage(format!("{name} is not listed in data.csv; metadata unavailable")))?;
                Some(MetaFeatures::batch_tensor(&[MetaFeatures::new(
                    f.scaler.scale(r.age_years)?,
                    r.gender,
                    r.view,
                )?])?)
            }
            None => None,
        };
        let mut hm = grad_cam(&model, &x, meta.as_ref(), label)?.remove(0);
        hm.source = Some(path.display().to_string());
        let stem = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "image".into());
        hm.save_grid_csv(&out.join(format!("{stem}.grid.csv")))?;
        hm.save_png(&out.join(format!("{stem}.heatmap.png")))?;
        let base = GrayImage::new(config.input_size, config.input_size, plane.iter().map(|v| v * 255.0).collect())?;
        hm.save_overlay(&base, &out.join(format!("{stem}.overlay.png")))?;
        let (px, py) = hm.peak();
        println!("{name}: {} peak at ({px:.1}, {py:.1}) in input pixels", LABELS[label]);
    }
    Ok(())
}
