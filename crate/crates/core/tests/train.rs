use pitnet::data::{batch_iter, Dataset};
use pitnet::network::{ModelConfig, ModelGraph, ModelKind, Role};
use pitnet::ops::{conv2d_forward, ConvParams};
use pitnet::phantom::{generate_dataset, GenerateConfig};
use pitnet::train::{recompute_batchnorm, RunConfig, DESK_BOUND_RATE};

fn tiny_dataset(dir: &std::path::Path) -> Dataset {
    let cfg = GenerateConfig {
        counts: [3, 3, 2, 2],
        ..GenerateConfig::for_size(32)
    };
    let manifest = generate_dataset(&cfg, dir, 11).unwrap();
    Dataset::load(&manifest, None).unwrap()
}

fn model() -> ModelGraph<f32> {
    let cfg = ModelConfig {
        input_size: (32, 32),
        stem_channels: [4, 4, 8],
        module_channels: [8, 8, 12],
        ..ModelConfig::paper()
    };
    ModelGraph::build(ModelKind::Proposed, &cfg, 3).unwrap()
}

fn buffers(m: &ModelGraph<f32>) -> Vec<(String, Vec<u32>)> {
    let mut out = Vec::new();
    m.visit(&mut |name, role, t| {
        if role == Role::Buffer {
            out.push((name.to_string(), t.data().iter().map(|v| v.to_bits()).collect()));
        }
    });
    out
}

#[test]
fn recomputed_stats_match_the_clean_batch() {
    let dir = tempfile::tempdir().unwrap();
    let ds = tiny_dataset(dir.path());
    let indices: Vec<usize> = (0..ds.len()).collect();
    let mut m = model();
    recompute_batchnorm(&mut m, &ds, &indices).unwrap();

    let (x, _) = batch_iter(&ds, &indices, indices.len(), None, None).next().unwrap().unwrap();
    let block = &m.stem()[0];
    let weight = m.tensor("stem.0.conv.weight").unwrap();
    let params = ConvParams {
        in_channels: 3,
        out_channels: block.out_channels(),
        geometry: block.geometry(),
        weight,
        bias: None,
    };
    let y = conv2d_forward(&x, &params).unwrap();
    let (n, c, h, w) = (y.shape()[0], y.shape()[1], y.shape()[2], y.shape()[3]);
    let mean = m.tensor("stem.0.bn.running_mean").unwrap();
    let var = m.tensor("stem.0.bn.running_var").unwrap();
    for ch in 0..c {
        let vals: Vec<f64> = (0..n)
            .flat_map(|i| {
                let y = &y;
                (0..h * w).map(move |p| y.data()[(i * c + ch) * h * w + p] as f64)
            })
            .collect();
        let mu = vals.iter().sum::<f64>() / vals.len() as f64;
        let unbiased = vals.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / (vals.len() - 1) as f64;
        assert!((mean.data()[ch] as f64 - mu).abs() < 1e-4 * (1.0 + mu.abs()));
        assert!((var.data()[ch] as f64 - unbiased).abs() < 1e-4 * (1.0 + unbiased));
    }

    let first = buffers(&m);
    recompute_batchnorm(&mut m, &ds, &indices).unwrap();
    assert_eq!(first, buffers(&m));
}

#[test]
fn frozen_layers_keep_their_statistics() {
    let dir = tempfile::tempdir().unwrap();
    let ds = tiny_dataset(dir.path());
    let mut m = model();
    m.visit_mut(&mut |_, role, t| {
        if role == Role::Buffer {
            t.data_mut().iter_mut().for_each(|v| *v = 0.5);
        }
    });
    m.freeze(&["stem".to_string()]);
    recompute_batchnorm(&mut m, &ds, &[0, 2, 4, 6]).unwrap();
    for (name, bits) in buffers(&m) {
        let untouched = bits.iter().all(|&b| b == 0.5f32.to_bits());
        assert_eq!(untouched, name.starts_with("stem."), "{name}");
    }
    assert!(recompute_batchnorm(&mut m, &ds, &[]).is_err());
}

#[test]
fn desk_bounds_converge_five_times_faster() {
    let desk = RunConfig::desk().optimizer();
    let paper = RunConfig::paper().optimizer();
    assert_eq!(paper.bound_rate, None);
    assert!((DESK_BOUND_RATE - 0.005).abs() < 1e-15);
    let (lo, hi) = desk.bounds(1140);
    let (plo, phi) = paper.bounds(5700);
    assert!((lo - plo).abs() < 1e-12 && (hi - phi).abs() < 1e-12);
}
