use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use pitnet::data::{Dataset, Manifest};
use pitnet::gradcheck::{run_gradcheck, GradcheckOptions};
use pitnet::metrics::{emit_report, format_table, summarize, MetricsReport};
use pitnet::network::{Checkpoint, LoadOptions, ModelGraph, ModelKind};
use pitnet::phantom::{generate_dataset, GenerateConfig, KudoClass};
use pitnet::train::{cross_validate, evaluate, run_fold, single_split, Profile, RunConfig, TransferConfig};
use pitnet::Error;

#[derive(Parser)]
#[command(name = "pitnet", version, about = "Pit-pattern classification of synthetic tactile images")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset (PNG images plus manifest.csv).
    Gen(GenArgs),
    /// Train one model on a single stratified split.
    Train(RunArgs),
    /// Stratified k-fold training and testing with an aggregated report.
    Xval(RunArgs),
    /// Evaluate a checkpoint on a manifest.
    Eval(EvalArgs),
    /// Finite-difference check of every backward pass.
    Gradcheck(GradcheckArgs),
    /// Aggregate report.json files from earlier runs.
    Report(ReportArgs),
}

#[derive(Args)]
struct Common {
    /// JSON file whose keys override the profile defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value = "paper")]
    profile: Profile,
}

#[derive(Args)]
struct GenArgs {
    #[command(flatten)]
    common: Common,
    /// Same count for every class instead of the default composition.
    #[arg(long)]
    per_class: Option<usize>,
    /// Side of the square images.
    #[arg(long)]
    size: Option<usize>,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    model: Option<ModelKind>,
    /// Manifest file or dataset directory.
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    /// Checkpoint to transfer-load (classifier skipped).
    #[arg(long)]
    transfer: Option<PathBuf>,
    /// Comma-separated name prefixes to freeze after transfer loading.
    #[arg(long, value_delimiter = ',')]
    freeze: Vec<String>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    dataset: PathBuf,
    /// Directory for report files.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Scale the conv weight gradient by 1.01 to show a failing check.
    #[arg(long, hide = true)]
    corrupt_conv: bool,
}

#[derive(Args)]
struct ReportArgs {
    /// report.json files or directories holding one.
    #[arg(required = true)]
    inputs: Vec<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

fn exit_code(e: &Error) -> u8 {
    match e.root() {
        Error::Config(_) | Error::Stratification { .. } => 1,
        Error::Numeric(_) | Error::DegenerateVariance(_) => 3,
        _ => 2,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let result = match cli.command {
        Command::Gen(a) => cmd_gen(a),
        Command::Train(a) => cmd_train(a),
        Command::Xval(a) => cmd_xval(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Gradcheck(a) => cmd_gradcheck(a),
        Command::Report(a) => cmd_report(a),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

type CmdResult = pitnet::Result<ExitCode>;

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> pitnet::Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

fn cmd_gen(a: GenArgs) -> CmdResult {
    let mut config = match (&a.common.config, a.common.profile) {
        (Some(path), _) => read_json::<GenerateConfig>(path)?,
        (None, Profile::Desk) => GenerateConfig {
            counts: [60; 4],
            ..GenerateConfig::for_size(64)
        },
        (None, Profile::Paper) => GenerateConfig::default(),
    };
    if let Some(size) = a.size {
        let framed = GenerateConfig::for_size(size);
        config.image_size = framed.image_size;
        config.canvas_size = framed.canvas_size;
        config.pixel_pitch_um = framed.pixel_pitch_um;
    }
    if let Some(n) = a.per_class {
        config.counts = [n; 4];
    }
    let out = a.common.out.unwrap_or_else(|| PathBuf::from("data"));
    let manifest = generate_dataset(&config, &out, a.common.seed.unwrap_or(0))?;
    println!(
        "wrote {} images ({}x{}) to {}",
        manifest.len(),
        config.image_size,
        config.image_size,
        out.display()
    );
    let counts = manifest.class_counts();
    let classes: Vec<String> = KudoClass::ALL
        .iter()
        .map(|k| format!("{}={}", k.letter(), counts[k.index()]))
        .collect();
    println!("classes: {}", classes.join(" "));
    let mut materials = std::collections::BTreeMap::<&str, usize>::new();
    let mut orientations = std::collections::BTreeMap::<&str, usize>::new();
    for r in &manifest.records {
        *materials.entry(r.material.name()).or_default() += 1;
        *orientations.entry(r.orientation.name()).or_default() += 1;
    }
    let fmt = |m: &std::collections::BTreeMap<&str, usize>| {
        m.iter().map(|(k, v)| format!("{k}={v}")).collect::<Vec<_>>().join(" ")
    };
    println!("materials: {}", fmt(&materials));
    println!("orientations: {}", fmt(&orientations));
    Ok(ExitCode::SUCCESS)
}

fn run_config(a: &RunArgs) -> pitnet::Result<RunConfig> {
    let mut c = RunConfig::load(a.common.profile, a.common.config.as_deref())?;
    if let Some(s) = a.common.seed {
        c.seed = s;
    }
    if let Some(o) = &a.common.out {
        c.out_dir = o.clone();
    }
    if let Some(m) = a.model {
        c.model = m;
    }
    if let Some(d) = &a.dataset {
        c.dataset = d.clone();
    }
    if let Some(e) = a.epochs {
        c.epochs = e;
    }
    if let Some(t) = &a.transfer {
        c.transfer = Some(TransferConfig {
            checkpoint: t.clone(),
            freeze: a.freeze.clone(),
            skip: vec!["classifier".into()],
        });
    } else if !a.freeze.is_empty() {
        match &mut c.transfer {
            Some(t) => t.freeze = a.freeze.clone(),
            None => return Err(Error::Config("--freeze needs --transfer".into())),
        }
    }
    c.validate()?;
    Ok(c)
}

fn load_dataset(path: &Path, size: usize) -> pitnet::Result<Dataset> {
    let manifest = Manifest::read(path)?;
    Dataset::load(&manifest, Some(size))
}

fn write_config(c: &RunConfig) -> pitnet::Result<()> {
    std::fs::create_dir_all(&c.out_dir).map_err(|e| Error::io(&c.out_dir, e))?;
    let path = c.out_dir.join("run.json");
    std::fs::write(&path, serde_json::to_string_pretty(c)?).map_err(|e| Error::io(&path, e))
}

fn print_epoch(prefix: &str, r: &pitnet::train::EpochRecord) {
    println!(
        "{prefix}epoch {:>3}  train loss {:.4} acc {:.3}  val loss {:.4} acc {:.3}",
        r.epoch, r.train_loss, r.train_acc, r.val_loss, r.val_acc
    );
}

fn cmd_train(a: RunArgs) -> CmdResult {
    let c = run_config(&a)?;
    let dataset = load_dataset(&c.dataset, c.image_size)?;
    write_config(&c)?;
    let split = single_split(&c, &dataset)?;
    println!(
        "{} on {} images: train {}, val {}, test {}",
        c.model,
        dataset.len(),
        split.train.len(),
        split.val.len(),
        split.test.len()
    );
    let out = run_fold(&c, &dataset, &split, c.fold, &c.out_dir, &mut |r| print_epoch("", r))?;
    if let Some(t) = &out.train.transfer {
        println!(
            "transfer: loaded {}, skipped {}, frozen {}",
            t.loaded.len(),
            t.skipped_names().join(","),
            t.frozen.len()
        );
    }
    match out.train.best_val_acc {
        Some(v) => println!("best epoch {} (val acc {v:.4})", out.train.best_epoch),
        None => println!("no epochs run; saved the initial weights"),
    }
    println!("test acc {:.4}", out.test.metrics.accuracy);
    emit_report(&[out.test], &c.out_dir)?;
    println!("checkpoint {}", out.train.checkpoint.display());
    Ok(ExitCode::SUCCESS)
}

fn cmd_xval(a: RunArgs) -> CmdResult {
    let c = run_config(&a)?;
    let dataset = load_dataset(&c.dataset, c.image_size)?;
    write_config(&c)?;
    let result = cross_validate(&c, &dataset, &c.out_dir, &mut |f, r| print_epoch(&format!("fold {f} "), r))?;
    for f in &result.folds {
        println!(
            "fold {}: test {} samples, acc {:.4}",
            f.test.fold.unwrap_or(0),
            f.test.samples,
            f.test.metrics.accuracy
        );
    }
    print!("{}", format_table(&summarize(&result.reports())));
    println!("report {}", result.files.json.display());
    Ok(ExitCode::SUCCESS)
}

fn cmd_eval(a: EvalArgs) -> CmdResult {
    let ckpt = Checkpoint::read(&a.checkpoint)?;
    let mut model = ModelGraph::<f32>::build(ckpt.meta.model, &ckpt.meta.config, 0)?;
    ckpt.apply(&mut model, &LoadOptions::strict())?;
    let dataset = load_dataset(&a.dataset, ckpt.meta.config.input_size.0)?;
    let indices: Vec<usize> = (0..dataset.len()).collect();
    let eval = evaluate(&mut model, &dataset, &indices)?;
    let report = eval.report(None)?;
    let m = &report.metrics;
    println!("samples {}  loss {:.4}", report.samples, eval.loss);
    println!(
        "accuracy {:.4}  sensitivity {:.4}  specificity {:.4}  precision {:.4}  f1 {:.4}",
        m.accuracy, m.sensitivity, m.specificity, m.precision, m.f1
    );
    if let Some(auc) = report.auc.macro_auc {
        println!("macro AUC {auc:.4}");
    }
    match &report.normalized_confusion {
        Some(n) => {
            println!("normalized confusion (rows predicted, columns true):");
            println!("      A      G      O      R");
            for (i, row) in n.iter().enumerate() {
                let cells: Vec<String> = row.iter().map(|v| format!("{v:.3}")).collect();
                println!("{}  {}", KudoClass::ALL[i].letter(), cells.join("  "));
            }
        }
        None => println!("normalized confusion undefined: some class has no samples"),
    }
    if let Some(dir) = a.out {
        let files = emit_report(&[report], &dir)?;
        println!("report {}", files.json.display());
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_gradcheck(a: GradcheckArgs) -> CmdResult {
    let start = std::time::Instant::now();
    let report = run_gradcheck(&GradcheckOptions {
        seed: a.seed,
        corrupt_conv_backward: a.corrupt_conv,
        ..Default::default()
    })?;
    print!("{}", report.table());
    println!("{:.1}s", start.elapsed().as_secs_f64());
    if report.passed() {
        return Ok(ExitCode::SUCCESS);
    }
    let names: Vec<&str> = report.failures().iter().map(|c| c.name.as_str()).collect();
    eprintln!("gradient check failed: {}", names.join(", "));
    Ok(ExitCode::from(3))
}

fn cmd_report(a: ReportArgs) -> CmdResult {
    let mut reports = Vec::new();
    for input in &a.inputs {
        let path = if input.is_dir() { input.join("report.json") } else { input.clone() };
        let value: serde_json::Value = read_json(&path)?;
        let folds: Vec<MetricsReport> = serde_json::from_value(value["folds"].clone())
            .map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
        reports.extend(folds);
    }
    let files = emit_report(&reports, &a.out)?;
    print!("{}", format_table(&summarize(&reports)));
    println!("report {}", files.json.display());
    Ok(ExitCode::SUCCESS)
}
