//! Whole-model properties: sampling, round trips and determinism.

use invflow::flow::{read_checkpoint, write_checkpoint, FlowModel, InitMode, ModelConfig};
use invflow::invconv::Variant;
use invflow::rng::{normal_vec, seeded};
use invflow::train::{batch_nll_grad, train, Dataset, TrainConfig};
use invflow::{Real, Tensor};
use statrs::distribution::{ContinuousCDF, Normal};

fn perturbed_model(seed: u64) -> FlowModel {
    let cfg = ModelConfig {
        height: 4,
        width: 4,
        channels: 2,
        levels: 2,
        depth: 2,
        hidden: 8,
        ..ModelConfig::default()
    };
    let mut rng = seeded(seed);
    let mut m = FlowModel::new(cfg, InitMode::Random, &mut rng).unwrap();
    m.reset_actnorm();
    let mut p = m.param_vector();
    let noise = normal_vec(&mut rng, p.len(), 0.05);
    p.iter_mut().zip(noise).for_each(|(v, n)| *v += n);
    m.set_param_vector(&p).unwrap();
    m
}

/// Kolmogorov–Smirnov distance of `v` from `N(0, std²)`.
fn ks_distance(mut v: Vec<Real>, std: Real) -> Real {
    v.sort_by(Real::total_cmp);
    let n = v.len() as Real;
    let dist = Normal::new(0.0, std).unwrap();
    v.iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = dist.cdf(x);
            (f - i as Real / n).abs().max(((i + 1) as Real / n - f).abs())
        })
        .fold(0.0, Real::max)
}

#[test]
fn encoded_samples_are_normal_at_the_temperature() {
    let m = perturbed_model(1);
    for t in [1.0, 0.5] {
        let xs = m.sample(300, t, &mut seeded(2)).unwrap();
        let mut top = Vec::new();
        for x in &xs {
            let (lp, latents) = m.logprob(x).unwrap();
            assert!(lp.is_finite());
            top.extend_from_slice(latents.parts.last().unwrap().data());
        }
        let d = ks_distance(top.clone(), t);
        let critical = 1.63 / (top.len() as Real).sqrt();
        assert!(d < critical, "T = {t}: KS distance {d} >= {critical}");
        assert!(ks_distance(top, 2.0 * t) > critical);
    }
}

#[test]
fn decode_inverts_encode() {
    let m = perturbed_model(3);
    let mut rng = seeded(4);
    for _ in 0..5 {
        let x = Tensor::new(&[4, 4, 2], normal_vec(&mut rng, 32, 0.5)).unwrap();
        let (_, z) = m.logprob(&x).unwrap();
        assert!(m.decode(&z).unwrap().max_abs_diff(&x).unwrap() < 1e-10);
    }
}

#[test]
fn gradients_do_not_depend_on_thread_count() {
    let m = perturbed_model(5);
    let mut rng = seeded(6);
    let batch: Vec<Tensor> = (0..21)
        .map(|_| Tensor::new(&[4, 4, 2], normal_vec(&mut rng, 32, 0.5)).unwrap())
        .collect();
    let run = |threads| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| batch_nll_grad(&m, &batch).unwrap())
    };
    let (a, b) = (run(1), run(4));
    assert_eq!(a.0.to_bits(), b.0.to_bits());
    assert!(a.1.iter().zip(&b.1).all(|(x, y)| x.to_bits() == y.to_bits()));
}

#[test]
fn training_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = TrainConfig::default();
    cfg.model.height = 4;
    cfg.model.width = 4;
    cfg.model.levels = 1;
    cfg.model.depth = 1;
    cfg.model.hidden = 8;
    cfg.model.variant = Variant::BlockTriangular;
    cfg.data.height = 4;
    cfg.data.width = 4;
    cfg.data.size = 32;
    cfg.batch_size = 8;
    cfg.epochs = 2;
    cfg.wall_clock = false;
    let data = Dataset::generate(&cfg.data).unwrap();
    let mut run = |name: &str| {
        cfg.checkpoint = dir.path().join(format!("{name}.ckpt"));
        cfg.metrics = dir.path().join(format!("{name}.csv"));
        let r = train(&cfg, &data, |_| {}).unwrap();
        (
            std::fs::read(&cfg.checkpoint).unwrap(),
            std::fs::read(&cfg.metrics).unwrap(),
            r,
        )
    };
    let (ck_a, csv_a, ra) = run("a");
    let (ck_b, csv_b, _) = run("b");
    assert_eq!(ck_a, ck_b);
    assert_eq!(csv_a, csv_b);
    assert_eq!(ra.epochs.len(), 2);
    let loaded = read_checkpoint(&ck_a, std::path::Path::new("a.ckpt")).unwrap();
    assert_eq!(write_checkpoint(&loaded).unwrap(), ck_a);
}
