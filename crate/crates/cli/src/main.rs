use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use invflow::bench::{run_bench, BenchConfig, Method};
use invflow::flow::load_checkpoint;
use invflow::invconv::{conv_logdet, is_invertible, Invertibility, SINGULAR_TOL};
use invflow::io::{load_kernel, write_pnm};
use invflow::oracle::{check_kernel, SIZE_GUARD};
use invflow::rng::seeded;
use invflow::train::{evaluate, train, Dataset, TrainConfig};
use invflow::{Error, Real};

#[derive(Parser)]
#[command(name = "invflow", version, about = "Normalizing flows with invertible padded convolutions")]
struct Cli {
    /// Worker threads (default: all cores; bench defaults to 1).
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model from a key = value config file.
    Train(TrainArgs),
    /// Draw images from a checkpoint.
    Sample(SampleArgs),
    /// Mean bits per dimension of a checkpoint on the config's dataset.
    Eval(EvalArgs),
    /// Invertibility verdict and oracle cross-check of a kernel fixture.
    Check(CheckArgs),
    /// Time layer inversion methods.
    Bench(BenchArgs),
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    config: PathBuf,
    /// Overrides the config's seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the config's checkpoint path.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Overrides the config's metrics CSV path.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SampleArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long, default_value_t = 16)]
    n: usize,
    #[arg(long, default_value_t = 1.0)]
    temperature: Real,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory for sample_NNNN.pgm / .ppm.
    #[arg(long, default_value = "samples")]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Config whose dataset keys define the evaluation data.
    #[arg(long)]
    config: PathBuf,
    /// Dequantization seed (default: the config's eval_seed).
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct CheckArgs {
    /// Raw kernel tensor; its sidecar is the same path plus `.json`.
    kernel: PathBuf,
    /// Image size of the oracle cross-check, `HxW`.
    #[arg(long, default_value = "4x4", value_parser = parse_hw)]
    size: (usize, usize),
}

#[derive(Args)]
struct BenchArgs {
    /// Comma-separated `HxWxC` sizes.
    #[arg(long, default_value = "16x16x4,32x32x12", value_delimiter = ',', value_parser = parse_dims::<3>)]
    sizes: Vec<[usize; 3]>,
    #[arg(long, default_value_t = 5)]
    repetitions: usize,
    #[arg(long, default_value_t = 100)]
    batch: usize,
    #[arg(long, default_value_t = 3)]
    kernel_size: usize,
    /// Comma-separated subset of ours-masked, ours-block, emerging, 1x1, dense-solve.
    #[arg(long, value_delimiter = ',')]
    methods: Vec<Method>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// CSV output path; the CSV is printed when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse_dims<const N: usize>(s: &str) -> Result<[usize; N], String> {
    let parts: Vec<&str> = s.split('x').collect();
    if parts.len() != N {
        return Err(format!("expected {N} sizes separated by 'x', got {s:?}"));
    }
    let mut out = [0; N];
    for (o, p) in out.iter_mut().zip(parts) {
        *o = p.trim().parse().map_err(|e| format!("{p:?}: {e}"))?;
        if *o == 0 {
            return Err(format!("zero size in {s:?}"));
        }
    }
    Ok(out)
}

fn parse_hw(s: &str) -> Result<(usize, usize), String> {
    parse_dims::<2>(s).map(|[h, w]| (h, w))
}

fn global_threads(threads: Option<usize>) -> Result<(), Error> {
    if let Some(t) = threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()
            .map_err(|e| Error::Invalid(format!("thread pool: {e}")))?;
    }
    Ok(())
}

fn cmd_train(a: TrainArgs) -> Result<(), Error> {
    let mut cfg = TrainConfig::load(&a.config)?;
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if let Some(p) = a.checkpoint {
        cfg.checkpoint = p;
    }
    if let Some(p) = a.out {
        cfg.metrics = p;
    }
    let data = Dataset::generate(&cfg.data)?;
    println!(
        "training on {} {} images of {}x{}x{} for {} epochs",
        data.len(),
        cfg.data.kind,
        data.height,
        data.width,
        data.channels,
        cfg.epochs
    );
    let report = train(&cfg, &data, |m| {
        println!(
            "epoch {:>4}  nll {:>12.4}  bpd {:>8.4}  grad_norm {:>10.4}",
            m.epoch, m.nll, m.bpd, m.grad_norm
        );
    })?;
    println!(
        "bpd {:.4} -> {:.4}; checkpoint {}, metrics {}",
        report.initial.bpd,
        report.epochs.last().map_or(report.initial.bpd, |m| m.bpd),
        cfg.checkpoint.display(),
        cfg.metrics.display()
    );
    Ok(())
}

fn to_pixels(x: &[Real]) -> Vec<u8> {
    x.iter().map(|&v| (256.0 * v).round().clamp(0.0, 255.0) as u8).collect()
}

fn cmd_sample(a: SampleArgs) -> Result<(), Error> {
    let model = load_checkpoint(&a.checkpoint)?;
    let mut rng = seeded(a.seed);
    let start = Instant::now();
    let images = model.sample(a.n, a.temperature, &mut rng)?;
    let secs = start.elapsed().as_secs_f64();
    std::fs::create_dir_all(&a.out).map_err(|e| Error::Io {
        path: a.out.clone(),
        source: e,
    })?;
    let cfg = model.config();
    let ext = if cfg.channels == 1 { "pgm" } else { "ppm" };
    for (i, x) in images.iter().enumerate() {
        let path = a.out.join(format!("sample_{i:04}.{ext}"));
        write_pnm(&path, cfg.height, cfg.width, cfg.channels, &to_pixels(x.data()))?;
    }
    println!("sampled {} images in {secs:.6} s", images.len());
    Ok(())
}

fn cmd_eval(a: EvalArgs) -> Result<(), Error> {
    let cfg = TrainConfig::load(&a.config)?;
    let model = load_checkpoint(&a.checkpoint)?;
    let data = Dataset::generate(&cfg.data)?;
    let e = evaluate(&model, &data, a.seed.unwrap_or(cfg.eval_seed))?;
    println!("nll {}", e.nll);
    println!("bpd {}", e.bpd);
    Ok(())
}

fn cmd_check(a: CheckArgs) -> Result<(), Error> {
    let kernel = load_kernel(&a.kernel)?;
    let (k, c) = (kernel.k(), kernel.channels());
    println!("variant: {}, k = {k}, C = {c}", kernel.variant().name());
    let d = kernel.diagonal_tap();
    println!("diagonal tap D (rows ci, columns co):");
    for ci in 0..c {
        let row: Vec<String> = (0..c).map(|co| format!("{:>12.6}", d[ci * c + co])).collect();
        println!("  {}", row.join(" "));
    }
    let verdict = is_invertible(&kernel, SINGULAR_TOL);
    match &verdict {
        Invertibility::Yes => println!("invertible; logdet/pixel = {}", conv_logdet(&kernel, 1, 1)?),
        Invertibility::No(reason) => println!("singular: {reason}"),
    }
    let (h, w) = a.size;
    let n = h * w * c;
    if n > SIZE_GUARD {
        println!("oracle: skipped, n = {n} exceeds {SIZE_GUARD}");
        return Ok(());
    }
    let r = check_kernel(&kernel, h, w)?;
    println!("oracle on {h}x{w} (n = {n}): {}", r.triangular);
    println!(
        "oracle det = {:e}, ln|det| = {}, rank {}/{}",
        r.det, r.log_abs_det, r.rank, r.n
    );
    if verdict.is_yes() {
        let fast = conv_logdet(&kernel, h, w)?;
        let agree = (fast - r.log_abs_det).abs() <= 1e-9 * fast.abs().max(1.0);
        println!(
            "closed-form ln|det| = {fast}: {}",
            if agree { "agrees" } else { "DISAGREES" }
        );
    }
    Ok(())
}

fn cmd_bench(a: BenchArgs, threads: Option<usize>) -> Result<(), Error> {
    let cfg = BenchConfig {
        sizes: a.sizes,
        repetitions: a.repetitions,
        batch: a.batch,
        kernel_size: a.kernel_size,
        seed: a.seed,
        threads: threads.unwrap_or(1),
        methods: if a.methods.is_empty() {
            Method::ALL.to_vec()
        } else {
            a.methods
        },
    };
    let report = run_bench(&cfg)?;
    print!("{}", report.table());
    match a.out {
        Some(p) => std::fs::write(&p, report.to_csv()).map_err(|e| Error::Io { path: p, source: e })?,
        None => print!("{}", report.to_csv()),
    }
    Ok(())
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Diverged { .. } => 2,
        _ => 1,
    }
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Bench(a) => cmd_bench(a, cli.threads),
        cmd => {
            global_threads(cli.threads)?;
            match cmd {
                Command::Train(a) => cmd_train(a),
                Command::Sample(a) => cmd_sample(a),
                Command::Eval(a) => cmd_eval(a),
                Command::Check(a) => cmd_check(a),
                Command::Bench(_) => unreachable!(),
            }
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
