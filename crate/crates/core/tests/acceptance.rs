//! Acceptance checks, one line each, with pinned tolerances.
//!
//! Runs without the libtest harness so the report is always printed. Exits
//! non-zero if a check fails, except for checks listed as known failures,
//! which are reported as such.

mod common;

use std::process::ExitCode;
use std::time::Instant;

use common::{det_cofactor, fd_logdet, fill_normal, log_abs_det, random_image, rel_err, strict_rel};
use invflow::bench::{run_bench, BenchConfig, Method};
use invflow::flow::{
    bits_per_dim, ActNorm, Conv1x1, Coupling, CouplingKind, FlowModel, InitMode, InvConvLayer, Layer,
    ModelConfig, Permutation, Split, Squeeze,
};
use invflow::invconv::{conv_forward, conv_inverse, ConvKernel, Variant};
use invflow::oracle::{build_matrix, check_triangular, Structure};
use invflow::rng::{normal_vec, seeded, uniform};
use invflow::train::gradcheck::{central_difference, compare, refine};
use invflow::train::{batch_nll, batch_nll_grad, evaluate, train, Dataset, DatasetKind, TrainConfig};
use invflow::{PadSpec, Real, Tensor};
use rand::Rng;
use statrs::distribution::{ContinuousCDF, Normal};

struct Outcome {
    id: &'static str,
    name: &'static str,
    pass: bool,
    detail: String,
}

/// Checks that cannot pass as specified; reported, not counted as failures.
const KNOWN_FAILURES: &[&str] = &["7b"];

fn timed(limit_s: Real, start: Instant) -> (bool, String) {
    let s = start.elapsed().as_secs_f64();
    (s < limit_s, format!("{s:.2} s, limit {limit_s} s"))
}

fn single_channel_kernel(rng: &mut impl Rng, zero_tap: bool) -> (ConvKernel, Real) {
    let mut k = ConvKernel::random(3, 1, Variant::MaskedTriangular, 0.5, 0.5, rng);
    if zero_tap {
        k.set_weight(2, 2, 0, 0, 0.0).unwrap();
    }
    let tap = k.weight(2, 2, 0, 0);
    (k, tap)
}

fn single_channel_determinant() -> Outcome {
    let start = Instant::now();
    let mut rng = seeded(101);
    let (mut worst, mut zeros_ok, mut cross_ok) = (0.0 as Real, true, true);
    for i in 0..200 {
        let (h, w) = (rng.random_range(2..=5), rng.random_range(2..=5));
        let (k, tap) = single_channel_kernel(&mut rng, i % 5 == 0);
        let m = build_matrix(&k, h, w, k.padding()).unwrap();
        let det = m.det().unwrap();
        let expect = tap.powi((h * w) as i32);
        let independent = log_abs_det(m.entries(), m.rows());
        if tap == 0.0 {
            zeros_ok &= det == 0.0 && independent == Real::NEG_INFINITY;
        } else {
            worst = worst.max(strict_rel(det, expect));
            cross_ok &= (independent - expect.abs().ln()).abs() < 1e-9 * (h * w) as Real;
        }
    }
    let (fast, t) = timed(10.0, start);
    Outcome {
        id: "1",
        name: "single-channel determinant equals the diagonal tap to the power HW",
        pass: worst < 1e-9 && zeros_ok && cross_ok && fast,
        detail: format!(
            "200 kernels, H,W in 2..5, worst rel err {worst:.1e} (tol 1e-9), zero tap gives det 0: {zeros_ok}, \
             independent elimination agrees: {cross_ok}, {t}"
        ),
    }
}

fn triangular_structure() -> Outcome {
    let start = Instant::now();
    let mut rng = seeded(102);
    let (mut top_left_pass, mut symmetric_fail, mut n) = (0, 0, 0);
    for k in [3, 5] {
        for _ in 0..50 {
            let (h, w) = (rng.random_range(2..=6), rng.random_range(2..=6));
            let kernel = ConvKernel::random(k, 1, Variant::MaskedTriangular, 0.5, 0.5, &mut rng);
            let tap = kernel.weight(k - 1, k - 1, 0, 0);
            let m = build_matrix(&kernel, h, w, PadSpec::top_left(k)).unwrap();
            let r = check_triangular(&m, Structure::Lower { period: 1 });
            if r.passed() && r.diagonal == vec![tap] {
                top_left_pass += 1;
            }
            let s = build_matrix(&kernel, h, w, PadSpec::same(k)).unwrap();
            if !check_triangular(&s, Structure::Lower { period: 1 }).passed() {
                symmetric_fail += 1;
            }
            n += 1;
        }
    }
    let (fast, t) = timed(5.0, start);
    Outcome {
        id: "2",
        name: "top-left padding gives a lower-triangular matrix, symmetric padding does not",
        pass: top_left_pass == n && symmetric_fail >= 1 && fast,
        detail: format!(
            "top-left: {top_left_pass}/{n} lower triangular with constant diagonal equal to the tap; \
             symmetric: {symmetric_fail}/{n} violate, {t}"
        ),
    }
}

fn multi_channel_determinant() -> Outcome {
    let mut rng = seeded(103);
    let (mut masked, mut block) = (0.0 as Real, 0.0 as Real);
    for c in [2, 3] {
        for _ in 0..20 {
            let (h, w) = (rng.random_range(2..=4), rng.random_range(2..=4));
            let hw = (h * w) as i32;

            let k = ConvKernel::random(3, c, Variant::MaskedTriangular, 0.3, 0.7, &mut rng);
            let d = k.diagonal_tap();
            let prod: Real = (0..c).map(|i| d[i * c + i]).product();
            let det = build_matrix(&k, h, w, k.padding()).unwrap().det().unwrap();
            masked = masked.max(strict_rel(det, prod.powi(hw)));

            let k = ConvKernel::random(3, c, Variant::BlockTriangular, 0.3, 0.7, &mut rng);
            let dd = det_cofactor(&k.diagonal_tap(), c);
            let det = build_matrix(&k, h, w, k.padding()).unwrap().det().unwrap();
            block = block.max(strict_rel(det, dd.powi(hw)));
        }
    }
    Outcome {
        id: "3",
        name: "multi-channel determinant: product of D_cc (masked), det D (block), to the power HW",
        pass: masked < 1e-9 && block < 1e-9,
        detail: format!("C in {{2, 3}}, 40 kernels each: masked worst {masked:.1e}, block worst {block:.1e} (tol 1e-9)"),
    }
}

fn inversion_round_trip() -> Outcome {
    let mut rng = seeded(104);
    let (mut worst, mut min_diag) = (0.0 as Real, Real::INFINITY);
    for i in 0..100 {
        let (h, w, c) = (rng.random_range(1..=16), rng.random_range(1..=16), rng.random_range(1..=4));
        let variant = if i % 2 == 0 {
            Variant::MaskedTriangular
        } else {
            Variant::BlockTriangular
        };
        // Initialization distribution (off-tap std 0.05, diagonal magnitude
        // in [1, 2)) scaled so the smallest allowed diagonal is m.
        let m = 0.1 + 0.9 * uniform(&mut rng);
        let base = ConvKernel::random(3, c, variant, 0.05, 1.0, &mut rng);
        let k = ConvKernel::new(3, c, variant, base.weights().iter().map(|v| v * m).collect()).unwrap();
        let d = k.diagonal_tap();
        min_diag = (0..c).fold(min_diag, |acc, i| acc.min(d[i * c + i].abs()));
        let x = random_image([h, w, c], 1.0, &mut rng);
        let back = conv_inverse(&conv_forward(&x, &k).unwrap(), &k).unwrap();
        worst = worst.max(back.max_abs_diff(&x).unwrap());
    }
    Outcome {
        id: "4",
        name: "inverse of forward recovers the input",
        pass: worst < 1e-8 && min_diag >= 0.1,
        detail: format!(
            "100 cases up to 16x16x4, both variants, smallest |D_cc| {min_diag:.3}: max abs err {worst:.1e} (tol 1e-8)"
        ),
    }
}

fn layer_log_determinants() -> Outcome {
    let mut rng = seeded(105);
    let mut worst: Vec<(&str, Real)> = Vec::new();
    let mut record = |name: &'static str, layer: &dyn Layer, x: &Tensor| {
        assert!(x.len() <= 32);
        let (_, ld) = layer.forward(x).unwrap();
        let fd = fd_logdet(x, |v| layer.forward(v).unwrap().0);
        let e = rel_err(ld, fd);
        match worst.iter_mut().find(|(n, _)| *n == name) {
            Some((_, w)) => *w = w.max(e),
            None => worst.push((name, e)),
        }
    };
    for _ in 0..3 {
        let scale: Vec<Real> = normal_vec(&mut rng, 4, 1.0).iter().map(|v| v.exp()).collect();
        let a = ActNorm::with_params(&scale, &normal_vec(&mut rng, 4, 1.0)).unwrap();
        record("actnorm", &a, &random_image([2, 4, 4], 1.0, &mut rng));

        let mut l = Conv1x1::random_orthogonal(4, &mut rng);
        fill_normal(l.params_mut(), 0.7, &mut rng);
        record("1x1", &l, &random_image([2, 2, 4], 1.0, &mut rng));

        let mut l = Coupling::new(CouplingKind::Affine, 4, 8, 2.0, &mut rng).unwrap();
        fill_normal(l.params_mut(), 0.4, &mut rng);
        record("affine", &l, &random_image([2, 2, 4], 1.0, &mut rng));

        let mut l = Coupling::new(CouplingKind::Quad, 8, 8, 2.0, &mut rng).unwrap();
        fill_normal(l.params_mut(), 0.4, &mut rng);
        record("quad", &l, &random_image([2, 2, 8], 1.0, &mut rng));

        for variant in [Variant::MaskedTriangular, Variant::BlockTriangular] {
            let mut l = InvConvLayer::new(3, 3, variant, 0.3, &mut rng);
            fill_normal(l.params_mut(), 0.3, &mut rng);
            record("invconv", &l, &random_image([3, 3, 3], 1.0, &mut rng));
        }

        record("squeeze", &Squeeze, &random_image([4, 2, 4], 1.0, &mut rng));
    }
    // A split's density factor is the log-determinant of its whitening map.
    let mut split_worst = 0.0 as Real;
    for _ in 0..3 {
        let mut s = Split::new(4).unwrap();
        fill_normal(s.params_mut(), 0.3, &mut rng);
        let x = random_image([2, 2, 4], 1.0, &mut rng);
        let (_, ld) = s.whiten(&x).unwrap();
        split_worst = split_worst.max(rel_err(ld, fd_logdet(&x, |v| s.whiten(v).unwrap().0)));
    }
    worst.push(("split", split_worst));
    let max = worst.iter().fold(0.0 as Real, |m, (_, e)| m.max(*e));
    let parts: Vec<String> = worst.iter().map(|(n, e)| format!("{n} {e:.1e}")).collect();
    Outcome {
        id: "5",
        name: "layer log-determinants match finite-difference Jacobians",
        pass: max < 1e-4,
        detail: format!("dims <= 32, worst rel err per layer: {} (tol 1e-4)", parts.join(", ")),
    }
}

fn gradient_check() -> Outcome {
    let start = Instant::now();
    let cfg = ModelConfig {
        height: 4,
        width: 4,
        channels: 4,
        levels: 2,
        depth: 2,
        hidden: 6,
        ..ModelConfig::default()
    };
    let mut worst = 0.0 as Real;
    let mut params = 0;
    for seed in 0..5 {
        let mut rng = seeded(seed);
        let mut batch: Vec<Tensor> = (0..32).map(|_| random_image([4, 4, 4], 0.3, &mut rng)).collect();
        let mut model = FlowModel::new(cfg.clone(), InitMode::Random, &mut rng).unwrap();
        model.initialize_actnorm(&batch).unwrap();
        batch.truncate(2);
        let mut theta = model.param_vector();
        let noise = normal_vec(&mut rng, theta.len(), 0.05);
        theta.iter_mut().zip(noise).for_each(|(v, n)| *v += n);
        model.set_param_vector(&theta).unwrap();

        let (_, analytic) = batch_nll_grad(&model, &batch).unwrap();
        let mut probe = model.clone();
        let mut f = |t: &[Real]| {
            probe.set_param_vector(t)?;
            batch_nll(&probe, &batch)
        };
        let mut numeric = central_difference(&theta, 1e-4, &mut f).unwrap();
        refine(&theta, &analytic, &mut numeric, 1e-4, 1e-4, &[3e-5, 1e-5, 3e-6], &mut f).unwrap();
        worst = worst.max(compare(&analytic, &numeric, 1e-4).rel_error);
        params = theta.len();
    }
    let (fast, t) = timed(120.0, start);
    Outcome {
        id: "6",
        name: "analytic gradients match central differences",
        pass: worst < 1e-4 && fast,
        detail: format!(
            "4x4x4, L=2, D=2, all {params} parameters, 5 seeds: worst rel err {worst:.1e} (tol 1e-4, floor 1e-4), {t}"
        ),
    }
}

fn density_integrates_to_one() -> Outcome {
    let cfg = ModelConfig {
        height: 1,
        width: 1,
        channels: 2,
        levels: 1,
        depth: 2,
        hidden: 8,
        squeeze: false,
        coupling: CouplingKind::Affine,
        permutation: Permutation::InvConv,
        ..ModelConfig::default()
    };
    let mut rng = seeded(107);
    let mut model = FlowModel::new(cfg, InitMode::Random, &mut rng).unwrap();
    model.reset_actnorm();
    let mut theta = model.param_vector();
    let noise = normal_vec(&mut rng, theta.len(), 0.3);
    theta.iter_mut().zip(noise).for_each(|(v, n)| *v += n);
    model.set_param_vector(&theta).unwrap();

    let (r, n) = (12.0 as Real, 801usize);
    let step = 2.0 * r / (n - 1) as Real;
    let mut total = 0.0;
    for i in 0..n {
        let row: Vec<Tensor> = (0..n)
            .map(|j| Tensor::new(&[1, 1, 2], vec![-r + i as Real * step, -r + j as Real * step]).unwrap())
            .collect();
        let lps = model.logprob_batch(&row).unwrap();
        let wi = if i == 0 || i == n - 1 { 0.5 } else { 1.0 };
        for (j, lp) in lps.iter().enumerate() {
            let wj = if j == 0 || j == n - 1 { 0.5 } else { 1.0 };
            total += wi * wj * lp.exp();
        }
    }
    let mass = total * step * step;
    Outcome {
        id: "7a",
        name: "model density integrates to one",
        pass: (mass - 1.0).abs() < 1e-3,
        detail: format!("1x1x2 model, trapezoid on [-12, 12]^2 with {n}^2 nodes: mass {mass:.6} (tol 1e-3)"),
    }
}

fn identity_model_on_uniform_noise() -> Outcome {
    let mut cfg = TrainConfig::default();
    cfg.data.kind = DatasetKind::Uniform;
    let data = Dataset::generate(&cfg.data).unwrap();
    let model = FlowModel::identity(cfg.model.clone(), &mut seeded(0)).unwrap();
    let bpd = evaluate(&model, &data, cfg.eval_seed).unwrap().bpd;
    // Identity map, standard normal prior, x ~ U[0, 1):
    // E[-ln p] = ½ln 2π + E[x²]/2 = ½ln 2π + 1/6 nats per dimension.
    let analytic = (0.5 * (2.0 * std::f64::consts::PI).ln() + 1.0 / 6.0 + (256.0 as Real).ln()) / std::f64::consts::LN_2;
    Outcome {
        id: "7b",
        name: "identity model on uniform 8-bit noise scores 8 bpd",
        pass: (bpd - 8.0).abs() <= 0.01,
        detail: format!(
            "measured {bpd:.4} bpd (target 8.00 +- 0.01); a standard-normal prior gives {analytic:.4} analytically, \
             the unit density on [0,1)^D gives {:.4}",
            bits_per_dim(0.0, data.dims())
        ),
    }
}

fn discrete_gaussian_entropy_bits(mean: Real, std: Real) -> Real {
    let n = Normal::new(mean, std).unwrap();
    (0..256)
        .map(|v| {
            let lo = if v == 0 { 0.0 } else { n.cdf(v as Real - 0.5) };
            let hi = if v == 255 { 1.0 } else { n.cdf(v as Real + 0.5) };
            let p = hi - lo;
            if p > 0.0 {
                -p * p.log2()
            } else {
                0.0
            }
        })
        .sum()
}

fn training() -> Outcome {
    let start = Instant::now();
    let dir = tempfile::tempdir().unwrap();

    let mut board = TrainConfig::default();
    board.checkpoint = dir.path().join("board.ckpt");
    board.metrics = dir.path().join("board.csv");
    let data = Dataset::generate(&board.data).unwrap();
    let r = train(&board, &data, |_| {}).unwrap();
    let (b0, b1) = (r.initial.bpd, r.epochs.last().unwrap().bpd);

    let mut gauss = TrainConfig::default();
    gauss.data.kind = DatasetKind::GaussianIid;
    gauss.data.size = 2048;
    gauss.model.hidden = 16;
    gauss.epochs = 5;
    gauss.checkpoint = dir.path().join("gauss.ckpt");
    gauss.metrics = dir.path().join("gauss.csv");
    let data = Dataset::generate(&gauss.data).unwrap();
    let r = train(&gauss, &data, |_| {}).unwrap();
    let g_final = r.epochs.last().unwrap().bpd;
    let mut held = gauss.data.clone();
    held.seed += 1000;
    held.size = 1024;
    let g_held = evaluate(&r.model, &Dataset::generate(&held).unwrap(), gauss.eval_seed).unwrap().bpd;
    let entropy = discrete_gaussian_entropy_bits(gauss.data.noise_mean, gauss.data.noise_std);

    let (fast, t) = timed(900.0, start);
    Outcome {
        id: "8",
        name: "training lowers bpd and reaches the entropy of iid data",
        pass: b0 - b1 >= 0.5 && (g_final - entropy).abs() <= 0.1 && (g_held - entropy).abs() <= 0.1 && fast,
        detail: format!(
            "checkerboard 8x8, 50 epochs: {b0:.4} -> {b1:.4} (drop {:.4}, need 0.5); iid Gaussian(128, 16): \
             final {g_final:.4}, held-out {g_held:.4}, entropy {entropy:.4} (tol 0.1); {t}",
            b0 - b1
        ),
    }
}

fn inversion_timing() -> Outcome {
    let sizes = [[32, 32, 12], [16, 16, 4]];
    let report = run_bench(&BenchConfig {
        sizes: sizes.to_vec(),
        repetitions: 5,
        threads: 1,
        methods: vec![Method::OursMasked, Method::Emerging],
        ..BenchConfig::default()
    })
    .unwrap();
    let ratios: Vec<Real> = sizes.iter().map(|s| report.emerging_ratio(*s).unwrap()).collect();
    Outcome {
        id: "9",
        name: "emerging / ours inversion time ratio",
        pass: ratios.iter().all(|r| (1.5..=2.5).contains(r)),
        detail: format!(
            "batch 100, 5 reps, 1 thread: 32x32x12 ratio {:.3}, 16x16x4 ratio {:.3} (range [1.5, 2.5])",
            ratios[0], ratios[1]
        ),
    }
}

fn main() -> ExitCode {
    let checks: [fn() -> Outcome; 10] = [
        single_channel_determinant,
        triangular_structure,
        multi_channel_determinant,
        inversion_round_trip,
        layer_log_determinants,
        gradient_check,
        density_integrates_to_one,
        identity_model_on_uniform_noise,
        training,
        inversion_timing,
    ];
    let mut failed = Vec::new();
    for check in checks {
        let o = check();
        let known = KNOWN_FAILURES.contains(&o.id);
        let status = match (o.pass, known) {
            (true, _) => "PASS",
            (false, true) => "FAIL (known)",
            (false, false) => "FAIL",
        };
        println!("[{}] {status}: {}. {}", o.id, o.name, o.detail);
        if !o.pass && !known {
            failed.push(o.id);
        }
    }
    if failed.is_empty() {
        println!("acceptance: ok");
        ExitCode::SUCCESS
    } else {
        println!("acceptance: failed {}", failed.join(", "));
        ExitCode::FAILURE
    }
}
