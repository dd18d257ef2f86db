use std::path::Path;
use std::time::Instant;

use pitnet::data::{holdout_split, stratified_kfold, Dataset};
use pitnet::gradcheck::{run_gradcheck, GradcheckOptions};
use pitnet::metrics::{auc_macro_ovr, classification_metrics, normalize_confusion, rank_auc, ConfusionMatrix};
use pitnet::network::{
    analytic_shapes, load_checkpoint, save_checkpoint, Checkpoint, LoadOptions, ModelConfig, ModelGraph,
    ModelKind, StoredTensor,
};
use pitnet::ops::{conv2d_forward, conv_output_extent, ConvGeometry, ConvParams};
use pitnet::optim::{adabound_update, bound_schedule, AdaBoundConfig, BoundMode};
use pitnet::phantom::analysis::{lattice_spacing, pit_stats};
use pitnet::phantom::{generate_dataset, synthesize_heightmap, GenerateConfig, KudoClass, Material, PhantomSpec};
use pitnet::train::{cross_validate, evaluate, run_fold, single_split, RunConfig, TransferConfig};
use pitnet::{Error, Result, Tensor};
use rand::Rng;

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: impl Into<String>) -> Result<Outcome> {
    Ok(Outcome {
        passed,
        detail: detail.into(),
    })
}

fn parameter_budget() -> Result<Outcome> {
    let cfg = ModelConfig::paper();
    let p = ModelGraph::<f32>::build(ModelKind::Proposed, &cfg, 0)?.param_count();
    let l = ModelGraph::<f32>::build(ModelKind::LightResnet, &cfg, 0)?.param_count();
    let within = |n: usize| (n as f64 / 2.8e6 - 1.0).abs() <= 0.025;
    outcome(within(p) && within(l), format!("proposed {p}, light_resnet {l} (2.8M +-2.5%)"))
}

fn shape_arithmetic() -> Result<Outcome> {
    let mut rng = pitnet::seed::rng(2, &[]);
    let mut checked = 0;
    while checked < 50 {
        let g = ConvGeometry::new(
            rng.gen_range(1..=5),
            rng.gen_range(1..=3),
            rng.gen_range(0..=3),
            rng.gen_range(1..=3),
        );
        let (h, w) = (rng.gen_range(1..=20), rng.gen_range(1..=20));
        let (Ok(oh), Ok(ow)) = (g.output_extent(h), g.output_extent(w)) else {
            continue;
        };
        let (cin, cout) = (rng.gen_range(1..=3), rng.gen_range(1..=3));
        let mut params = ConvParams::<f64>::zeros(cin, cout, g, true);
        params.weight.data_mut().iter_mut().for_each(|v| *v = rng.gen_range(-1.0..1.0));
        let x = Tensor::<f64>::from_fn(vec![2, cin, h, w], |_| rng.gen_range(-1.0..1.0));
        let y = conv2d_forward(&x, &params)?;
        if y.shape() != [2, cout, oh, ow] {
            return outcome(false, format!("{g:?} on {h}x{w}: predicted {oh}x{ow}, got {:?}", y.shape()));
        }
        checked += 1;
    }
    let cfg = ModelConfig::desk();
    let mut model = ModelGraph::<f32>::build(ModelKind::Proposed, &cfg, 0)?;
    model.predict(&Tensor::zeros(vec![1, 3, 64, 64]))?;
    let trace = model.last_trace();
    let extent = |n: &str| trace.iter().find(|(name, _)| name == n).map(|(_, s)| (s[2], s[3]));
    let preserved = extent("module2.1") == extent("module3.0") && extent("module3.0") == extent("module3.1");
    let analytic = analytic_shapes(ModelKind::Proposed, &cfg, 1)?.iter().map(|(_, s)| s[1..].to_vec()).collect::<Vec<_>>()
        == trace.iter().map(|(_, s)| s[1..].to_vec()).collect::<Vec<_>>();
    outcome(
        preserved && analytic && conv_output_extent(56, 3, 1, 2, 2)? == 56,
        format!("50 random geometries match; module3 extent {:?}", extent("module3.1")),
    )
}

fn gradient_suite() -> Result<Outcome> {
    let report = run_gradcheck(&GradcheckOptions::default())?;
    let worst_layer = report
        .checks
        .iter()
        .filter(|r| !r.name.starts_with("whole model"))
        .map(|r| r.max_rel_error)
        .fold(0.0, f64::max);
    let worst_model = report
        .checks
        .iter()
        .filter(|r| r.name.starts_with("whole model"))
        .map(|r| r.max_rel_error)
        .fold(0.0, f64::max);
    outcome(
        report.passed(),
        format!(
            "{} checks, layers max {worst_layer:.2e} (<1e-4), whole models max {worst_model:.2e} (<1e-3); \
             whole-model inputs 16x16 proposed / 48x48 light_resnet",
            report.checks.len()
        ),
    )
}

fn optimizer_oracles() -> Result<Outcome> {
    let mut rng = pitnet::seed::rng(4, &[]);
    let n = 20;
    let mut worst_adam: f64 = 0.0;
    let mut sgd_exact = true;
    for trial in 0..10 {
        let adam = AdaBoundConfig {
            bound_mode: BoundMode::AdamLimit,
            ..AdaBoundConfig::default()
        };
        let mut theta: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let (mut m, mut v) = (vec![0.0; n], vec![0.0; n]);
        let mut ref_theta = theta.clone();
        let (mut rm, mut rv) = (vec![0.0; n], vec![0.0; n]);
        for t in 1..=100u64 {
            let g: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0) * (1 + trial) as f64).collect();
            adabound_update(&mut theta, &g, &mut m, &mut v, t, &adam);
            // Adam with the bias correction folded into the step size.
            let alpha = adam.lr1 * (1.0 - adam.beta2.powi(t as i32)).sqrt() / (1.0 - adam.beta1.powi(t as i32));
            for i in 0..n {
                rm[i] = adam.beta1 * rm[i] + (1.0 - adam.beta1) * g[i];
                rv[i] = adam.beta2 * rv[i] + (1.0 - adam.beta2) * g[i] * g[i];
                ref_theta[i] -= alpha * rm[i] / (rv[i].sqrt() + adam.epsilon);
            }
            for i in 0..n {
                worst_adam = worst_adam.max((theta[i] - ref_theta[i]).abs());
            }
        }

        let sgd = AdaBoundConfig {
            bound_mode: BoundMode::SgdLimit,
            ..AdaBoundConfig::default()
        };
        let mut theta: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let (mut m, mut v) = (vec![0.0; n], vec![0.0; n]);
        let mut rm = vec![0.0; n];
        for t in 1..=100u64 {
            let g: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let before = theta.clone();
            adabound_update(&mut theta, &g, &mut m, &mut v, t, &sgd);
            for i in 0..n {
                rm[i] = sgd.beta1 * rm[i] + (1.0 - sgd.beta1) * g[i];
                sgd_exact &= theta[i] == before[i] - sgd.lr2 * rm[i];
            }
        }
    }
    let mut monotone = true;
    let mut prev = bound_schedule(1, 0.01, 0.999);
    for t in 2..=200_000u64 {
        let b = bound_schedule(t, 0.01, 0.999);
        monotone &= b.0 >= prev.0 && b.1 <= prev.1 && b.0 <= 0.01 && b.1 >= 0.01;
        prev = b;
    }
    let converged = (prev.0 - 0.01).abs() < 1e-4 && (prev.1 - 0.01).abs() < 1e-4;
    outcome(
        worst_adam <= 1e-12 && sgd_exact && monotone && converged,
        format!(
            "adam_limit max |diff| {worst_adam:.1e} (<=1e-12), sgd_limit exact {sgd_exact}, \
             bounds monotone {monotone}, at t=2e5 ({:.5}, {:.5})",
            prev.0, prev.1
        ),
    )
}

fn split_fidelity() -> Result<Outcome> {
    let labels: Vec<usize> = [57, 57, 55, 60]
        .iter()
        .enumerate()
        .flat_map(|(c, &n)| std::iter::repeat(c).take(n))
        .collect();
    let (train, test) = holdout_split(&labels, 0)?;
    let plan = stratified_kfold(&labels, 5, 0)?;
    let sizes: Vec<usize> = plan.folds.iter().map(|f| f.test.len()).collect();
    let per_class_ok = plan.folds.iter().all(|f| {
        (0..4).all(|c| {
            let n = f.test.iter().filter(|&&i| labels[i] == c).count();
            n == 11 || n == 12
        })
    });
    outcome(
        train.len() == 182 && test.len() == 47 && sizes.iter().all(|s| (45..=48).contains(s)) && per_class_ok,
        format!("holdout {}/{}, fold test sizes {sizes:?}", train.len(), test.len()),
    )
}

fn metric_oracles() -> Result<Outcome> {
    let mut rng = pitnet::seed::rng(6, &[]);
    let mut mismatches = 0;
    let mut worst_column: f64 = 0.0;
    let mut worst_auc: f64 = 0.0;
    let mut auc_sets = 0;
    for _ in 0..1000 {
        let n = rng.gen_range(1..=1000);
        let truth: Vec<usize> = (0..n).map(|_| rng.gen_range(0..4)).collect();
        let predicted: Vec<usize> = (0..n).map(|_| rng.gen_range(0..4)).collect();
        let cm = ConfusionMatrix::from_predictions(&predicted, &truth, 4)?;
        let m = classification_metrics(&cm)?;
        let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        let mut sums = [0.0; 4];
        for c in 0..4 {
            let (mut tp, mut fnn, mut fp, mut tn) = (0, 0, 0, 0);
            for (&p, &t) in predicted.iter().zip(&truth) {
                match (p == c, t == c) {
                    (true, true) => tp += 1,
                    (false, true) => fnn += 1,
                    (true, false) => fp += 1,
                    (false, false) => tn += 1,
                }
            }
            let sens = ratio(tp, tp + fnn);
            let prec = ratio(tp, tp + fp);
            let spec = ratio(tn, tn + fp);
            let f1 = if sens + prec > 0.0 { 2.0 * prec * sens / (prec + sens) } else { 0.0 };
            let got = &m.per_class[c];
            if (got.sensitivity, got.precision, got.specificity, got.f1) != (sens, prec, spec, f1) {
                mismatches += 1;
            }
            for (s, v) in sums.iter_mut().zip([sens, spec, prec, f1]) {
                *s += v;
            }
        }
        let correct = predicted.iter().zip(&truth).filter(|(p, t)| p == t).count();
        let macros = [m.sensitivity, m.specificity, m.precision, m.f1];
        if m.accuracy != correct as f64 / n as f64 || macros.iter().zip(&sums).any(|(a, s)| *a != s / 4.0) {
            mismatches += 1;
        }
        match normalize_confusion(&cm) {
            Ok(norm) => {
                for t in 0..4 {
                    let col: f64 = (0..4).map(|p| norm[p][t]).sum();
                    worst_column = worst_column.max((col - 1.0).abs());
                }
            }
            Err(Error::UndefinedColumn(t)) if !truth.contains(&t) => {}
            Err(e) => return Err(e),
        }
        if n <= 50 {
            auc_sets += 1;
            let scores: Vec<Vec<f64>> = (0..n)
                .map(|_| {
                    let raw: Vec<f64> = (0..4).map(|_| (rng.gen_range(0..8) as f64) + 0.5).collect();
                    let total: f64 = raw.iter().sum();
                    raw.iter().map(|r| r / total).collect()
                })
                .collect();
            let report = auc_macro_ovr(&scores, &truth)?;
            for c in 0..4 {
                let (mut wins, mut pairs) = (0.0, 0.0);
                for i in 0..n {
                    for j in 0..n {
                        if truth[i] == c && truth[j] != c {
                            pairs += 1.0;
                            let (a, b) = (scores[i][c], scores[j][c]);
                            wins += if a > b { 1.0 } else if a == b { 0.5 } else { 0.0 };
                        }
                    }
                }
                let positive: Vec<bool> = truth.iter().map(|&t| t == c).collect();
                let column: Vec<f64> = scores.iter().map(|s| s[c]).collect();
                match (report.per_class[c], rank_auc(&column, &positive)) {
                    (Some(a), Some(b)) if pairs > 0.0 => {
                        worst_auc = worst_auc.max((a - wins / pairs).abs()).max((b - wins / pairs).abs());
                    }
                    (None, None) if pairs == 0.0 => {}
                    _ => mismatches += 1,
                }
            }
        }
    }
    outcome(
        mismatches == 0 && worst_column <= 1e-12 && worst_auc <= 1e-12,
        format!(
            "1000 sets, {mismatches} metric mismatches, column sum error {worst_column:.1e}, \
             AUC vs pair enumeration {worst_auc:.1e} over {auc_sets} sets"
        ),
    )
}

fn generator_geometry() -> Result<Outcome> {
    let mut spacing = Vec::new();
    let mut depth_exact = true;
    for class in KudoClass::ALL {
        let mut per_class = Vec::new();
        for seed in 0..12 {
            let hm = synthesize_heightmap(&PhantomSpec::new(class, 1000 + seed), (256, 256), 25.0)?;
            depth_exact &= hm.min() == -500.0;
            if class == KudoClass::G {
                continue;
            }
            let centroids: Vec<_> = pit_stats(&hm, &Default::default()).pits.iter().map(|p| p.centroid).collect();
            if let Some(s) = lattice_spacing(&centroids) {
                per_class.push(s * hm.pixel_pitch_um);
            }
        }
        if !per_class.is_empty() {
            spacing.push((class, per_class.iter().sum::<f64>() / per_class.len() as f64));
        }
    }
    let spacing_ok = spacing.iter().all(|(_, s)| (s - 600.0).abs() <= 60.0);

    let dir = tempfile::tempdir().map_err(|e| Error::io(std::env::temp_dir(), e))?;
    let cfg = GenerateConfig {
        counts: [2, 2, 2, 2],
        ..GenerateConfig::for_size(64)
    };
    let a = generate_dataset(&cfg, &dir.path().join("a"), 77)?;
    generate_dataset(&cfg, &dir.path().join("b"), 77)?;
    let read = |sub: &str, f: &str| std::fs::read(dir.path().join(sub).join(f)).ok();
    let identical = read("a", "manifest.csv") == read("b", "manifest.csv")
        && a.records.iter().all(|r| read("a", &r.path).is_some() && read("a", &r.path) == read("b", &r.path));
    let listed: Vec<String> = spacing.iter().map(|(c, s)| format!("{}={s:.0}", c.letter())).collect();
    outcome(
        spacing_ok && depth_exact && identical,
        format!(
            "spacing um {} (600 +-10%), floors exactly -500 {depth_exact}, byte-identical regeneration {identical}",
            listed.join(" ")
        ),
    )
}

fn desk_dataset(dir: &Path, cfg: &GenerateConfig, seed: u64) -> Result<Dataset> {
    let manifest = generate_dataset(cfg, dir, seed)?;
    Dataset::load(&manifest, Some(cfg.image_size))
}

fn desk_generate() -> GenerateConfig {
    GenerateConfig {
        counts: [60; 4],
        ..GenerateConfig::for_size(64)
    }
}

fn desk_learning(root: &Path) -> Result<Outcome> {
    let start = Instant::now();
    let ds = desk_dataset(&root.join("desk"), &desk_generate(), 2023)?;
    let config = RunConfig::desk();
    let cv = cross_validate(&config, &ds, &root.join("desk_xval"), &mut |_, _| {})?;
    let plan = stratified_kfold(&ds.labels(), config.folds, config.seed)?;
    let holdout = &cv.folds[0];
    let mut model = ModelGraph::<f32>::build(config.model, &config.model_config(), 0)?;
    Checkpoint::read(&holdout.train.checkpoint)?.apply(&mut model, &LoadOptions::strict())?;
    let train_acc = evaluate(&mut model, &ds, &plan.folds[0].train)?.accuracy;
    let test_acc = holdout.test.metrics.accuracy;
    let fold_accs: Vec<f64> = cv.folds.iter().map(|f| f.test.metrics.accuracy).collect();
    let mean = fold_accs.iter().sum::<f64>() / fold_accs.len() as f64;
    let minutes = start.elapsed().as_secs_f64() / 60.0;
    let accs: Vec<String> = fold_accs.iter().map(|a| format!("{a:.3}")).collect();
    outcome(
        ds.len() == 240 && test_acc >= 0.90 && train_acc >= 0.95 && mean >= 0.85 && minutes <= 30.0,
        format!(
            "240 images 64x64, holdout test {test_acc:.3} (>=0.90), train {train_acc:.3} (>=0.95), \
             5-fold mean {mean:.3} (>=0.85) folds [{}], {minutes:.1} min",
            accs.join(", ")
        ),
    )
}

fn stored_bits(t: &StoredTensor) -> Vec<u64> {
    match t {
        StoredTensor::F32(t) => t.data().iter().map(|v| v.to_bits() as u64).collect(),
        StoredTensor::F64(t) => t.data().iter().map(|v| v.to_bits()).collect(),
    }
}

fn transfer_mechanism(root: &Path) -> Result<Outcome> {
    let start = Instant::now();
    let mut source_cfg = desk_generate();
    source_cfg.materials = vec![Material::A70];
    source_cfg.render.light_elevation_deg = 50.0;
    source_cfg.render.ambient = [0.1; 3];
    source_cfg.render.diffuse_gain = 0.8;
    let source = desk_dataset(&root.join("source"), &source_cfg, 7)?;
    let target = desk_dataset(&root.join("target"), &desk_generate(), 8)?;

    let pretrain = RunConfig {
        seed: 100,
        ..RunConfig::desk()
    };
    let split = single_split(&pretrain, &source)?;
    let pre = run_fold(&pretrain, &source, &split, 0, &root.join("pretrain"), &mut |_| {})?;
    let source_ckpt = Checkpoint::read(&pre.train.checkpoint)?;

    let mut wins = 0;
    let mut reports_ok = true;
    let mut frozen_ok = true;
    let mut pairs = Vec::new();
    for seed in 0..5u64 {
        let scratch = RunConfig {
            epochs: 5,
            seed,
            ..RunConfig::desk()
        };
        let split = single_split(&scratch, &target)?;
        let s = run_fold(&scratch, &target, &split, 0, &root.join(format!("scratch{seed}")), &mut |_| {})?;
        let tuned_cfg = RunConfig {
            epochs: 10,
            transfer: Some(TransferConfig {
                checkpoint: pre.train.checkpoint.clone(),
                freeze: vec!["stem".into()],
                skip: vec!["classifier".into()],
            }),
            ..scratch.clone()
        };
        let t = run_fold(&tuned_cfg, &target, &split, 0, &root.join(format!("tuned{seed}")), &mut |_| {})?;

        let report = t.train.transfer.as_ref().expect("transfer report");
        reports_ok &= report.skipped_names() == ["classifier.weight", "classifier.bias"]
            && !report.frozen.is_empty()
            && report.frozen.iter().all(|n| n.starts_with("stem."));
        let last = Checkpoint::read(&t.train.last_checkpoint)?;
        for (name, tensor) in &source_ckpt.tensors {
            if name.starts_with("stem.") {
                frozen_ok &= last.get(name).map(stored_bits) == Some(stored_bits(tensor));
            }
        }
        let (scratch_val, tuned_val) = (s.train.log[4].val_acc, t.train.log[4].val_acc);
        wins += usize::from(tuned_val >= scratch_val);
        pairs.push(format!("{tuned_val:.3}/{scratch_val:.3}"));
    }
    let minutes = start.elapsed().as_secs_f64() / 60.0;
    outcome(
        wins >= 4 && reports_ok && frozen_ok && minutes <= 20.0,
        format!(
            "fine-tuned >= scratch val acc at epoch 5 on {wins}/5 seeds (tuned/scratch {}), \
             skip report ok {reports_ok}, stem bit-identical after 10 epochs {frozen_ok}, {minutes:.1} min",
            pairs.join(" ")
        ),
    )
}

fn checkpoint_format(root: &Path) -> Result<Outcome> {
    let cfg = ModelConfig::desk();
    let model = ModelGraph::<f32>::build(ModelKind::Proposed, &cfg, 3)?;
    let path = root.join("roundtrip.ckpt");
    save_checkpoint(&model, &path, 1, 3)?;
    let mut other = ModelGraph::<f32>::build(ModelKind::Proposed, &cfg, 4)?;
    load_checkpoint(&path, &mut other, &LoadOptions::strict())?;
    let mut same = true;
    model.visit(&mut |name, _, t| {
        let o = other.tensor(name).expect("same names");
        same &= t.data().iter().zip(o.data()).all(|(a, b)| a.to_bits() == b.to_bits());
    });
    let mut bytes = std::fs::read(&path).map_err(|e| Error::io(&path, e))?;
    let rewritten = Checkpoint::from_bytes(&bytes)?.to_bytes()? == bytes;
    bytes[1] ^= 0xff;
    let rejected = matches!(Checkpoint::from_bytes(&bytes), Err(Error::Format(_)));
    outcome(
        same && rewritten && rejected,
        format!("bit-exact reload {same}, byte-stable rewrite {rewritten}, bad magic rejected {rejected}"),
    )
}

fn main() {
    let root = tempfile::tempdir().expect("temp dir");
    let root = root.path();
    type Check<'a> = Box<dyn Fn() -> Result<Outcome> + 'a>;
    let criteria: Vec<(&str, Check)> = vec![
        ("parameter budget", Box::new(parameter_budget)),
        ("shape arithmetic", Box::new(shape_arithmetic)),
        ("gradient suite", Box::new(gradient_suite)),
        ("optimizer oracles", Box::new(optimizer_oracles)),
        ("split fidelity", Box::new(split_fidelity)),
        ("metric oracles", Box::new(metric_oracles)),
        ("generator geometry", Box::new(generator_geometry)),
        ("desk-scale learning", Box::new(|| desk_learning(root))),
        ("transfer mechanism", Box::new(|| transfer_mechanism(root))),
        ("checkpoint format", Box::new(|| checkpoint_format(root))),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let (passed, detail) = match check() {
            Ok(o) => (o.passed, o.detail),
            Err(e) => (false, format!("error: {e}")),
        };
        failed += usize::from(!passed);
        println!(
            "criterion {:>2} {:<20} {}  {} [{:.1}s]",
            i + 1,
            name,
            if passed { "PASS" } else { "FAIL" },
            detail,
            start.elapsed().as_secs_f64()
        );
    }
    println!("acceptance: {} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
