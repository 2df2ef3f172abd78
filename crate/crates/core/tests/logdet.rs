//! Every layer's reported log-determinant against the log-determinant of a
//! finite-difference Jacobian.

mod common;

use common::{fd_logdet, fill_normal, random_image, rel_err};
use invflow::flow::{squeeze, ActNorm, Conv1x1, Coupling, CouplingKind, InvConvLayer, Layer, Split, Squeeze};
use invflow::invconv::Variant;
use invflow::rng::seeded;
use invflow::{Real, Tensor};

const TOL: Real = 1e-4;

fn check_layer(name: &str, layer: &impl Layer, x: &Tensor) {
    let (_, ld) = layer.forward(x).unwrap();
    let fd = fd_logdet(x, |v| layer.forward(v).unwrap().0);
    assert!(rel_err(ld, fd) < TOL, "{name}: reported {ld}, finite differences {fd}");
}

#[test]
fn actnorm() {
    let mut rng = seeded(1);
    for seed in 0..3 {
        let scale: Vec<Real> = (0..4).map(|i| [0.5, -1.7, 2.2, 0.9][(i + seed) % 4]).collect();
        let l = ActNorm::with_params(&scale, &[0.1, -0.3, 0.0, 2.0]).unwrap();
        check_layer("actnorm", &l, &random_image([2, 3, 4], 1.0, &mut rng));
    }
}

#[test]
fn conv1x1() {
    let mut rng = seeded(2);
    for _ in 0..3 {
        let mut l = Conv1x1::random_orthogonal(4, &mut rng);
        fill_normal(l.params_mut(), 0.7, &mut rng);
        check_layer("1x1", &l, &random_image([2, 2, 4], 1.0, &mut rng));
    }
}

#[test]
fn couplings() {
    let mut rng = seeded(3);
    for (kind, c) in [(CouplingKind::Affine, 4), (CouplingKind::Quad, 8), (CouplingKind::Affine, 2)] {
        for _ in 0..3 {
            let mut l = Coupling::new(kind, c, 8, 2.0, &mut rng).unwrap();
            fill_normal(l.params_mut(), 0.4, &mut rng);
            let x = random_image([2, 2, c], 1.0, &mut rng);
            let (_, ld) = l.forward(&x).unwrap();
            assert!(ld.abs() > 1e-3, "coupling should not be volume preserving here");
            check_layer(kind.name(), &l, &x);
        }
    }
}

#[test]
fn invconv() {
    let mut rng = seeded(4);
    for variant in [Variant::MaskedTriangular, Variant::BlockTriangular] {
        for (k, shape) in [(3, [3, 3, 3]), (3, [4, 4, 2]), (5, [4, 2, 4]), (1, [2, 2, 4])] {
            let mut l = InvConvLayer::new(k, shape[2], variant, 0.3, &mut rng);
            fill_normal(l.params_mut(), 0.3, &mut rng);
            check_layer(variant.name(), &l, &random_image(shape, 1.0, &mut rng));
        }
    }
}

#[test]
fn squeeze_is_volume_preserving() {
    let x = random_image([4, 2, 4], 1.0, &mut seeded(5));
    check_layer("squeeze", &Squeeze, &x);
    assert!(fd_logdet(&x, |v| squeeze(v).unwrap()).abs() < 1e-9);
}

#[test]
fn split_whitening() {
    let mut rng = seeded(6);
    for shape in [[2, 2, 4], [1, 1, 8], [2, 4, 2]] {
        let mut s = Split::new(shape[2]).unwrap();
        fill_normal(s.params_mut(), 0.3, &mut rng);
        let x = random_image(shape, 1.0, &mut rng);
        let (_, ld) = s.whiten(&x).unwrap();
        let fd = fd_logdet(&x, |v| s.whiten(v).unwrap().0);
        assert!(rel_err(ld, fd) < TOL, "split: reported {ld}, finite differences {fd}");

        // The conditional density is the standard normal density of the
        // whitened latent times the whitening Jacobian.
        let (w, _) = s.whiten(&x).unwrap();
        let eps = w.split_channels(shape[2] / 2).unwrap().1;
        let (_, _, lp) = s.forward(&x).unwrap();
        let expect = invflow::flow::standard_normal_logp(&eps) + ld;
        assert!((lp - expect).abs() < 1e-10);
    }
}
