//! Run configuration, the epoch loop with best-validation checkpointing,
//! evaluation and k-fold cross-validation.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{batch_iter, stratified_kfold, AugmentConfig, Dataset, Fold};
use crate::error::{Error, Result};
use crate::metrics::{emit_report, MetricsReport, ReportFiles};
use crate::network::{
    Checkpoint, CheckpointMeta, LoadOptions, LoadReport, ModelConfig, ModelGraph, ModelKind, Role,
};
use crate::ops::{softmax, softmax_cross_entropy, BatchNormParams, Mode};
use crate::optim::{AdaBound, AdaBoundConfig};
use crate::seed;
use crate::tensor::Tensor;

pub const CHECKPOINT_FILE: &str = "best.ckpt";
pub const LAST_CHECKPOINT_FILE: &str = "last.ckpt";
pub const LOG_FILE: &str = "train_log.csv";
const EVAL_BATCH: usize = 32;
/// The default rate `1 - beta2 = 0.001` sized for 150 epochs, scaled to 30.
pub const DESK_BOUND_RATE: f64 = 0.001 * 150.0 / 30.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Profile {
    /// Full-size images and widths.
    Paper,
    /// 64x64 images, quarter widths, 30 epochs.
    Desk,
}

impl std::str::FromStr for Profile {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "paper" => Ok(Profile::Paper),
            "desk" => Ok(Profile::Desk),
            other => Err(Error::Config(format!("unknown profile {other:?} (expected desk or paper)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransferConfig {
    pub checkpoint: PathBuf,
    /// Name prefixes whose parameters stay fixed.
    #[serde(default)]
    pub freeze: Vec<String>,
    /// Name prefixes never loaded.
    #[serde(default = "default_skip")]
    pub skip: Vec<String>,
}

fn default_skip() -> Vec<String> {
    vec!["classifier".into()]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub model: ModelKind,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr1: f64,
    pub lr2: f64,
    /// AdaBound bound convergence rate; `1 - beta2` when unset.
    pub bound_rate: Option<f64>,
    pub seed: u64,
    /// Manifest file or the directory holding `manifest.csv`.
    pub dataset: PathBuf,
    pub image_size: usize,
    pub folds: usize,
    /// Fold used by single training runs.
    pub fold: usize,
    pub augment: bool,
    pub augmentation: AugmentConfig,
    /// Recompute batchnorm running statistics over the clean training
    /// images before every validation pass.
    pub precise_batchnorm: bool,
    /// Widths of the network; the input size follows `image_size`.
    pub network: ModelConfig,
    pub transfer: Option<TransferConfig>,
    pub out_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self::paper()
    }
}

impl RunConfig {
    pub fn paper() -> Self {
        Self {
            model: ModelKind::Proposed,
            epochs: 150,
            batch_size: 4,
            lr1: 0.001,
            lr2: 0.01,
            bound_rate: None,
            seed: 0,
            dataset: PathBuf::from("data"),
            image_size: 224,
            folds: 5,
            fold: 0,
            augment: true,
            augmentation: AugmentConfig::default(),
            precise_batchnorm: true,
            network: ModelConfig::paper(),
            transfer: None,
            out_dir: PathBuf::from("runs"),
        }
    }

    pub fn desk() -> Self {
        Self {
            epochs: 30,
            bound_rate: Some(DESK_BOUND_RATE),
            image_size: 64,
            augmentation: AugmentConfig::with_target(64),
            network: ModelConfig::desk(),
            ..Self::paper()
        }
    }

    pub fn for_profile(profile: Profile) -> Self {
        match profile {
            Profile::Paper => Self::paper(),
            Profile::Desk => Self::desk(),
        }
    }

    /// Profile defaults overlaid with the keys present in a JSON file.
    pub fn load(profile: Profile, path: Option<&Path>) -> Result<Self> {
        let mut value = serde_json::to_value(Self::for_profile(profile))?;
        if let Some(p) = path {
            let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            let overlay: serde_json::Value =
                serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?;
            if !overlay.is_object() {
                return Err(Error::Config(format!("{} must hold a JSON object", p.display())));
            }
            merge(&mut value, overlay);
        }
        let mut config: Self =
            serde_json::from_value(value).map_err(|e| Error::Config(format!("invalid run config: {e}")))?;
        config.sync_sizes();
        Ok(config)
    }

    /// Makes the network input and augmentation target follow `image_size`.
    pub fn sync_sizes(&mut self) {
        self.network.input_size = (self.image_size, self.image_size);
        self.augmentation.target_size = (self.image_size, self.image_size);
    }

    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            input_size: (self.image_size, self.image_size),
            ..self.network.clone()
        }
    }

    pub fn optimizer(&self) -> AdaBoundConfig {
        AdaBoundConfig {
            lr1: self.lr1,
            lr2: self.lr2,
            bound_rate: self.bound_rate,
            ..AdaBoundConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if self.image_size == 0 {
            return Err(Error::Config("image_size must be positive".into()));
        }
        if self.fold >= self.folds.max(1) {
            return Err(Error::Config(format!("fold {} outside 0..{}", self.fold, self.folds)));
        }
        self.optimizer().validate()?;
        self.augmentation.validate()?;
        self.model_config().validate()
    }
}

fn merge(base: &mut serde_json::Value, overlay: serde_json::Value) {
    match (base, overlay) {
        (serde_json::Value::Object(b), serde_json::Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) if slot.is_object() && v.is_object() => merge(slot, v),
                    _ => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: u64,
    pub train_loss: f64,
    pub train_acc: f64,
    pub val_loss: f64,
    pub val_acc: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalResult {
    pub loss: f64,
    pub accuracy: f64,
    /// Softmax probabilities per sample.
    pub scores: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
}

impl EvalResult {
    pub fn report(&self, fold: Option<usize>) -> Result<MetricsReport> {
        MetricsReport::from_scores(&self.scores, &self.labels, fold)
    }
}

/// Inference-mode pass over `indices` in order.
pub fn evaluate(model: &mut ModelGraph<f32>, dataset: &Dataset, indices: &[usize]) -> Result<EvalResult> {
    if indices.is_empty() {
        return Err(Error::Empty("nothing to evaluate".into()));
    }
    let mut loss = 0.0;
    let mut correct = 0usize;
    let mut scores = Vec::with_capacity(indices.len());
    let mut labels = Vec::with_capacity(indices.len());
    for batch in batch_iter(dataset, indices, EVAL_BATCH, None, None) {
        let (x, y) = batch?;
        let logits = model.predict(&x)?;
        let (l, _) = softmax_cross_entropy(&logits, &y)?;
        loss += l as f64 * y.len() as f64;
        let probs = softmax(&logits)?;
        let classes = probs.shape()[1];
        for (row, &label) in probs.data().chunks(classes).zip(&y) {
            let row: Vec<f64> = row.iter().map(|&p| p as f64).collect();
            correct += usize::from(argmax(&row) == label);
            scores.push(row);
        }
        labels.extend(y);
    }
    Ok(EvalResult {
        loss: loss / indices.len() as f64,
        accuracy: correct as f64 / indices.len() as f64,
        scores,
        labels,
    })
}

/// Replaces the running statistics of every unfrozen batchnorm layer with
/// the average of its batch statistics over `indices`, without augmentation.
pub fn recompute_batchnorm(model: &mut ModelGraph<f32>, dataset: &Dataset, indices: &[usize]) -> Result<()> {
    if indices.is_empty() {
        return Err(Error::Empty("no samples for batchnorm statistics".into()));
    }
    let frozen = model.frozen().clone();
    model.visit_mut(&mut |name, role, t| {
        let Some(layer) = name.strip_suffix(".running_mean").or_else(|| name.strip_suffix(".running_var")) else {
            return;
        };
        if role != Role::Buffer || frozen.contains(&format!("{layer}.gamma")) {
            return;
        }
        let fill = if name.ends_with("running_var") { 1.0 } else { 0.0 };
        t.data_mut().iter_mut().for_each(|v| *v = fill);
    });
    for (k, batch) in batch_iter(dataset, indices, EVAL_BATCH, None, None).enumerate() {
        let (x, _) = batch?;
        model.set_batchnorm_momentum(1.0 / (k + 1) as f64);
        model.forward(&x, Mode::Training)?;
    }
    model.set_batchnorm_momentum(BatchNormParams::<f32>::DEFAULT_MOMENTUM);
    model.clear_cache();
    Ok(())
}

fn argmax(row: &[f64]) -> usize {
    row.iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |best, (i, &v)| if v > best.1 { (i, v) } else { best })
        .0
}

fn count_correct(logits: &Tensor<f32>, labels: &[usize]) -> usize {
    let classes = logits.shape()[1];
    logits
        .data()
        .chunks(classes)
        .zip(labels)
        .filter(|(row, &l)| {
            let row: Vec<f64> = row.iter().map(|&v| v as f64).collect();
            argmax(&row) == l
        })
        .count()
}

pub struct TrainOutcome {
    pub log: Vec<EpochRecord>,
    /// 0 when no epoch ran.
    pub best_epoch: u64,
    pub best_val_acc: Option<f64>,
    /// Model holding the best-epoch weights.
    pub model: ModelGraph<f32>,
    pub checkpoint: PathBuf,
    /// Weights after the final epoch.
    pub last_checkpoint: PathBuf,
    pub log_path: PathBuf,
    pub transfer: Option<LoadReport>,
}

/// Builds the model of a run, transfer-loading if configured.
pub fn build_model(config: &RunConfig, fold: usize) -> Result<(ModelGraph<f32>, Option<LoadReport>)> {
    let mut model = ModelGraph::build(
        config.model,
        &config.model_config(),
        seed::derive_seed(config.seed, &[fold as u64, 0x1417]),
    )?;
    let report = match &config.transfer {
        Some(t) => {
            let ckpt = Checkpoint::read(&t.checkpoint)?;
            let options = LoadOptions {
                skip: t.skip.clone(),
                ..LoadOptions::transfer(t.freeze.clone())
            };
            Some(ckpt.apply(&mut model, &options)?)
        }
        None => None,
    };
    Ok((model, report))
}

fn write_log(path: &Path, log: &[EpochRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    if log.is_empty() {
        w.write_record(["epoch", "train_loss", "train_acc", "val_loss", "val_acc"])?;
    }
    for r in log {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn snapshot(model: &ModelGraph<f32>, config: &RunConfig, epoch: u64, fold: usize, val_acc: Option<f64>) -> Checkpoint {
    let mut meta = CheckpointMeta::new(config.model, &model.config().clone(), epoch, config.seed);
    meta.extra.insert("fold".into(), fold.into());
    if let Some(v) = val_acc {
        meta.extra.insert("val_acc".into(), v.into());
    }
    if !model.frozen().is_empty() {
        meta.extra.insert("frozen".into(), serde_json::json!(model.frozen()));
    }
    Checkpoint::from_model(model, meta)
}

/// Trains on `split.train`, selecting the epoch with the best accuracy on
/// `split.val` (ties keep the earlier epoch). Writes the best checkpoint
/// and the per-epoch log into `out_dir`.
pub fn train(
    config: &RunConfig,
    dataset: &Dataset,
    split: &Fold,
    fold: usize,
    out_dir: &Path,
    progress: &mut dyn FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    config.validate()?;
    if split.train.is_empty() {
        return Err(Error::Empty("training split is empty".into()));
    }
    if split.val.is_empty() {
        return Err(Error::Empty("validation split is empty".into()));
    }
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let checkpoint = out_dir.join(CHECKPOINT_FILE);
    let log_path = out_dir.join(LOG_FILE);

    let (mut model, transfer) = build_model(config, fold)?;
    let mut optimizer = AdaBound::<f32>::new(config.optimizer())?;
    let mut best = snapshot(&model, config, 0, fold, None);
    best.write(&checkpoint)?;
    let mut best_epoch = 0;
    let mut best_val_acc: Option<f64> = None;
    let mut log = Vec::with_capacity(config.epochs);
    write_log(&log_path, &log)?;
    let augment = config.augment.then_some(&config.augmentation);

    for epoch in 1..=config.epochs as u64 {
        let epoch_seed = seed::derive_seed(config.seed, &[fold as u64, epoch]);
        let (mut loss_sum, mut correct) = (0.0f64, 0usize);
        for (b, batch) in batch_iter(dataset, &split.train, config.batch_size, Some(epoch_seed), augment).enumerate() {
            let (x, y) = batch?;
            let logits = model.forward(&x, Mode::Training)?;
            let (loss, grad) = softmax_cross_entropy(&logits, &y)?;
            if !loss.is_finite() {
                model.clear_cache();
                return Err(Error::Numeric(format!("loss became {loss} at epoch {epoch}, batch {b}")));
            }
            loss_sum += loss as f64 * y.len() as f64;
            correct += count_correct(&logits, &y);
            let grads = model.backward(&grad)?;
            optimizer.step(&mut model, &grads)?;
        }
        if config.precise_batchnorm {
            recompute_batchnorm(&mut model, dataset, &split.train)?;
        }
        let val = evaluate(&mut model, dataset, &split.val)?;
        let record = EpochRecord {
            epoch,
            train_loss: loss_sum / split.train.len() as f64,
            train_acc: correct as f64 / split.train.len() as f64,
            val_loss: val.loss,
            val_acc: val.accuracy,
        };
        if best_val_acc.map_or(true, |b| record.val_acc > b) {
            best_val_acc = Some(record.val_acc);
            best_epoch = epoch;
            best = snapshot(&model, config, epoch, fold, Some(record.val_acc));
            best.write(&checkpoint)?;
        }
        progress(&record);
        log.push(record);
        write_log(&log_path, &log)?;
    }

    let last_checkpoint = out_dir.join(LAST_CHECKPOINT_FILE);
    snapshot(&model, config, config.epochs as u64, fold, log.last().map(|r| r.val_acc)).write(&last_checkpoint)?;
    best.apply(&mut model, &LoadOptions::strict())?;
    Ok(TrainOutcome {
        log,
        best_epoch,
        best_val_acc,
        model,
        checkpoint,
        last_checkpoint,
        log_path,
        transfer,
    })
}

pub struct FoldOutcome {
    pub train: TrainOutcome,
    pub test: MetricsReport,
}

/// Trains and tests one fold of the plan built from `config`.
pub fn run_fold(
    config: &RunConfig,
    dataset: &Dataset,
    split: &Fold,
    fold: usize,
    out_dir: &Path,
    progress: &mut dyn FnMut(&EpochRecord),
) -> Result<FoldOutcome> {
    let mut outcome = train(config, dataset, split, fold, out_dir, progress)?;
    let eval = evaluate(&mut outcome.model, dataset, &split.test)?;
    let mut report = eval.report(Some(fold))?;
    report.validation_accuracy = outcome.best_val_acc;
    report.parameters = Some(outcome.model.param_count());
    Ok(FoldOutcome { train: outcome, test: report })
}

pub struct CrossValidation {
    pub folds: Vec<FoldOutcome>,
    pub files: ReportFiles,
}

impl CrossValidation {
    pub fn reports(&self) -> Vec<MetricsReport> {
        self.folds.iter().map(|f| f.test.clone()).collect()
    }
}

/// Stratified k-fold training and testing; fold `f` writes to
/// `out_dir/fold{f}` and the aggregated report goes to `out_dir`.
pub fn cross_validate(
    config: &RunConfig,
    dataset: &Dataset,
    out_dir: &Path,
    progress: &mut dyn FnMut(usize, &EpochRecord),
) -> Result<CrossValidation> {
    if config.folds < 2 {
        return Err(Error::Config(format!("cross-validation needs at least 2 folds, got {}", config.folds)));
    }
    let plan = stratified_kfold(&dataset.labels(), config.folds, config.seed)?;
    let mut folds = Vec::with_capacity(plan.k);
    for (f, split) in plan.folds.iter().enumerate() {
        let dir = out_dir.join(format!("fold{f}"));
        let outcome = run_fold(config, dataset, split, f, &dir, &mut |r| progress(f, r))
            .map_err(|e| Error::InFold { fold: f, source: Box::new(e) })?;
        folds.push(outcome);
    }
    let reports: Vec<MetricsReport> = folds.iter().map(|f| f.test.clone()).collect();
    let files = emit_report(&reports, out_dir)?;
    Ok(CrossValidation { folds, files })
}

/// The fold plan used by single training runs.
pub fn single_split(config: &RunConfig, dataset: &Dataset) -> Result<Fold> {
    let k = config.folds.max(2);
    let mut plan = stratified_kfold(&dataset.labels(), k, config.seed)?;
    Ok(plan.folds.swap_remove(config.fold.min(k - 1)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn paper_defaults() {
        let c = RunConfig::default();
        assert_eq!((c.epochs, c.batch_size, c.lr1, c.lr2), (150, 4, 0.001, 0.01));
        assert_eq!(c.model, ModelKind::Proposed);
        let d = RunConfig::desk();
        assert_eq!((d.epochs, d.image_size, d.network.module_channels), (30, 64, [16, 32, 64]));
    }

    #[test]
    fn file_keys_override_profile_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.json");
        std::fs::write(&path, r#"{"epochs": 3, "network": {"module_channels": [4, 8, 8]}, "model": "light_resnet"}"#)
            .unwrap();
        let c = RunConfig::load(Profile::Desk, Some(&path)).unwrap();
        assert_eq!(c.epochs, 3);
        assert_eq!(c.model, ModelKind::LightResnet);
        assert_eq!(c.network.module_channels, [4, 8, 8]);
        assert_eq!(c.network.stem_channels, [8, 8, 16]);
        assert_eq!(c.image_size, 64);

        std::fs::write(&path, r#"{"epochs": "many"}"#).unwrap();
        assert!(matches!(RunConfig::load(Profile::Desk, Some(&path)), Err(Error::Config(_))));
    }

    #[test]
    fn fold_context_is_transparent() {
        let e = Error::InFold {
            fold: 2,
            source: Box::new(Error::Numeric("nan".into())),
        };
        assert!(matches!(e.root(), Error::Numeric(_)));
        assert!(e.to_string().starts_with("fold 2: "));
    }
}
