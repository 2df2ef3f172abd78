use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use invflow::flow::{save_checkpoint, FlowModel, ModelConfig};
use invflow::invconv::{ConvKernel, Variant};
use invflow::io::save_kernel;
use invflow::rng::seeded;

fn invflow(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_invflow")).args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn tiny_config(dir: &Path, extra: &str) -> String {
    let p = dir.join("tiny.cfg");
    let text = format!(
        "levels = 1\ndepth = 1\nhidden = 8\nheight = 4\nwidth = 4\ndataset_size = 24\nbatch_size = 8\nepochs = 2\n\
         wall_clock = false\ncheckpoint = {}\nmetrics = {}\n{extra}",
        dir.join("model.ckpt").display(),
        dir.join("metrics.csv").display()
    );
    fs::write(&p, text).unwrap();
    p.to_string_lossy().into_owned()
}

#[test]
fn missing_config_exits_1_naming_the_path() {
    let o = invflow(&["train", "--config", "/nonexistent/run.cfg"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("/nonexistent/run.cfg"), "{}", stderr(&o));
}

#[test]
fn bad_config_key_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path(), "learning_rate = 3\n");
    let o = invflow(&["train", "--config", &cfg]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("learning_rate"));
}

#[test]
fn train_is_reproducible_and_eval_matches() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path(), "");
    let o = invflow(&["--threads", "1", "train", "--config", &cfg]);
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = fs::read(dir.path().join("metrics.csv")).unwrap();
    let ckpt = fs::read(dir.path().join("model.ckpt")).unwrap();
    let text = String::from_utf8(csv.clone()).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "epoch,nll,bpd,wall_seconds,grad_norm");
    assert_eq!(lines.len(), 3, "exactly `epochs` data rows");

    let o = invflow(&["--threads", "1", "train", "--config", &cfg]);
    assert!(o.status.success());
    assert_eq!(fs::read(dir.path().join("metrics.csv")).unwrap(), csv);
    assert_eq!(fs::read(dir.path().join("model.ckpt")).unwrap(), ckpt);

    let last_bpd: f64 = lines[2].split(',').nth(2).unwrap().parse().unwrap();
    let ck = dir.path().join("model.ckpt");
    let o = invflow(&["eval", "--checkpoint", ck.to_str().unwrap(), "--config", &cfg]);
    assert!(o.status.success(), "{}", stderr(&o));
    let out = stdout(&o);
    let bpd: f64 = out
        .lines()
        .find_map(|l| l.strip_prefix("bpd "))
        .unwrap()
        .parse()
        .unwrap();
    assert!((bpd - last_bpd).abs() < 1e-9, "{bpd} vs {last_bpd}");
    let again = invflow(&["eval", "--checkpoint", ck.to_str().unwrap(), "--config", &cfg]);
    assert_eq!(stdout(&again), out);
}

#[test]
fn divergence_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path(), "lr = 1e300\n");
    let o = invflow(&["train", "--config", &cfg]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    assert!(stderr(&o).contains("diverged"));
    assert!(dir.path().join("model.ckpt").exists());
}

#[test]
fn eval_rejects_mismatched_dataset() {
    let dir = tempfile::tempdir().unwrap();
    let ck = dir.path().join("m.ckpt");
    let model = FlowModel::identity(ModelConfig::default(), &mut seeded(0)).unwrap();
    save_checkpoint(&model, &ck).unwrap();
    let cfg = tiny_config(dir.path(), "");
    let o = invflow(&["eval", "--checkpoint", ck.to_str().unwrap(), "--config", &cfg]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("shape"), "{}", stderr(&o));
}

#[test]
fn zero_temperature_identity_samples_are_black() {
    let dir = tempfile::tempdir().unwrap();
    let ck = dir.path().join("id.ckpt");
    let model = FlowModel::identity(ModelConfig::default(), &mut seeded(0)).unwrap();
    save_checkpoint(&model, &ck).unwrap();
    let out = dir.path().join("imgs");
    let o = invflow(&[
        "sample",
        "--checkpoint",
        ck.to_str().unwrap(),
        "--n",
        "100",
        "--temperature",
        "0",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(stdout(&o).lines().filter(|l| l.ends_with(" s")).count(), 1);
    assert_eq!(fs::read_dir(&out).unwrap().count(), 100);
    let img = invflow::io::read_pnm(out.join("sample_0000.pgm")).unwrap();
    assert!(img.pixels.iter().all(|&p| p == 0));
}

#[test]
fn corrupt_checkpoint_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let ck = dir.path().join("bad.ckpt");
    fs::write(&ck, b"NOTACKPT\x01\x00\x00\x00").unwrap();
    let o = invflow(&["sample", "--checkpoint", ck.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("bad.ckpt"));
}

#[test]
fn check_verdicts() {
    let dir = tempfile::tempdir().unwrap();
    let run = |name: &str, k: &ConvKernel| {
        let p = dir.path().join(name);
        save_kernel(&p, k).unwrap();
        let o = invflow(&["check", p.to_str().unwrap()]);
        assert!(o.status.success(), "{}", stderr(&o));
        stdout(&o)
    };

    let out = run("id.bin", &ConvKernel::identity(3, 2, Variant::MaskedTriangular));
    assert!(out.contains("invertible; logdet/pixel = 0"), "{out}");
    assert!(out.contains("agrees"), "{out}");

    let mut k = ConvKernel::random(3, 1, Variant::MaskedTriangular, 0.5, 0.5, &mut seeded(1));
    k.set_weight(2, 2, 0, 0, 0.0).unwrap();
    let out = run("zero.bin", &k);
    assert!(out.contains("singular: zero diagonal tap"), "{out}");
    assert!(out.contains("oracle det = 0e0"), "{out}");

    let mut k = ConvKernel::random(3, 2, Variant::BlockTriangular, 0.5, 0.5, &mut seeded(2));
    for (ci, co, v) in [(0, 0, 1.0), (0, 1, 2.0), (1, 0, 0.5), (1, 1, 1.0)] {
        k.set_weight(2, 2, ci, co, v).unwrap();
    }
    let out = run("block.bin", &k);
    assert!(out.contains("singular block"), "{out}");
    let det: f64 = out
        .lines()
        .find_map(|l| l.strip_prefix("oracle det = "))
        .and_then(|l| l.split(',').next())
        .unwrap()
        .parse()
        .unwrap();
    assert!(det.abs() < 1e-9, "{det}");
}

#[test]
fn malformed_fixture_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("k.bin");
    fs::write(&p, b"garbage").unwrap();
    fs::write(dir.path().join("k.bin.json"), r#"{"k": 3, "C": 1, "variant": "masked"}"#).unwrap();
    let o = invflow(&["check", p.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn bench_writes_csv() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("bench.csv");
    let o = invflow(&[
        "bench",
        "--sizes",
        "4x4x2,3x5x1",
        "--batch",
        "2",
        "--out",
        csv.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = fs::read_to_string(&csv).unwrap();
    assert!(text.starts_with("method,H,W,C,mean_s,std_s,ratio_vs_ours\n"));
    assert_eq!(text.lines().count(), 11);
    assert!(stdout(&o).contains("hash"));
}

#[test]
fn shipped_configs_parse() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut n = 0;
    for entry in fs::read_dir(&dir).unwrap() {
        let path = entry.unwrap().path();
        invflow::train::TrainConfig::load(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
        n += 1;
    }
    assert!(n >= 2);
}
