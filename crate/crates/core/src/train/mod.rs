//! Maximum-likelihood training.
//!
//! The objective is the mean negative log-likelihood of dequantized 8-bit
//! images, optimized with Adam on exact gradients from hand-written backward
//! passes ([`backward`]). Each epoch is followed by an evaluation over the
//! whole dataset with a fixed dequantization seed, which is what the metrics
//! log records.

pub mod adam;
pub mod backward;
pub mod config;
pub mod data;
pub mod gradcheck;

use std::fs::File;
use std::io::Write;
use std::time::Instant;

pub use adam::{clip_global_norm, global_norm, Adam};
pub use backward::{batch_nll, batch_nll_grad, logprob_backward, step_backward};
pub use config::{TrainConfig, KEYS};
pub use data::{dequantize, Dataset, DatasetKind, DatasetSpec};

use crate::flow::{bits_per_dim, save_checkpoint, FlowModel};
use crate::rng::seeded;
use crate::{Error, Real, Result};

pub const METRICS_HEADER: &str = "epoch,nll,bpd,wall_seconds,grad_norm";

/// Mean NLL (nats per image) and bits per dimension.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Evaluation {
    pub nll: Real,
    pub bpd: Real,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub nll: Real,
    pub bpd: Real,
    pub wall_seconds: Real,
    /// Mean pre-clipping gradient norm over the epoch's steps.
    pub grad_norm: Real,
}

impl EpochMetrics {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{:.6},{}",
            self.epoch, self.nll, self.bpd, self.wall_seconds, self.grad_norm
        )
    }
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    /// Evaluation after initialization, before the first update.
    pub initial: Evaluation,
    pub epochs: Vec<EpochMetrics>,
    pub model: FlowModel,
}

/// Evaluates every image once, dequantized with noise from `seed`.
pub fn evaluate(model: &FlowModel, dataset: &Dataset, seed: u64) -> Result<Evaluation> {
    if dataset.is_empty() {
        return Err(Error::Invalid("cannot evaluate on an empty dataset".into()));
    }
    let cfg = model.config();
    if (dataset.height, dataset.width, dataset.channels) != (cfg.height, cfg.width, cfg.channels) {
        return Err(Error::Shape(format!(
            "dataset is {}x{}x{}, model expects {}x{}x{}",
            dataset.height, dataset.width, dataset.channels, cfg.height, cfg.width, cfg.channels
        )));
    }
    let mut rng = seeded(seed);
    let idx: Vec<usize> = (0..dataset.len()).collect();
    let mut total = 0.0;
    for chunk in idx.chunks(256) {
        let batch = dataset.batch(chunk, &mut rng);
        total -= model.logprob_batch(&batch)?.iter().sum::<Real>();
    }
    let nll = total / dataset.len() as Real;
    Ok(Evaluation {
        nll,
        bpd: bits_per_dim(-nll, dataset.dims()),
    })
}

/// Builds the model, initializes it and trains for `cfg.epochs` epochs,
/// writing the metrics CSV and the final checkpoint. `on_epoch` sees epoch 0
/// (the initial evaluation, with zero wall time and gradient norm) and every
/// completed epoch.
///
/// On a non-finite loss, gradient or evaluation the last good parameters are
/// checkpointed and [`Error::Diverged`] is returned.
pub fn train(cfg: &TrainConfig, dataset: &Dataset, mut on_epoch: impl FnMut(&EpochMetrics)) -> Result<TrainReport> {
    cfg.validate()?;
    let mut rng = seeded(cfg.seed);
    let mut model = FlowModel::new(cfg.model.clone(), cfg.init, &mut rng)?;
    if cfg.actnorm_init {
        let order = dataset.shuffled(&mut rng);
        let first = &order[..cfg.batch_size.min(order.len())];
        model.initialize_actnorm(&dataset.batch(first, &mut rng))?;
    } else {
        model.reset_actnorm();
    }
    let initial = evaluate(&model, dataset, cfg.eval_seed)?;
    on_epoch(&EpochMetrics {
        epoch: 0,
        nll: initial.nll,
        bpd: initial.bpd,
        wall_seconds: 0.0,
        grad_norm: 0.0,
    });

    let mut metrics = File::create(&cfg.metrics).map_err(|e| Error::io(&cfg.metrics, e))?;
    writeln!(metrics, "{METRICS_HEADER}").map_err(|e| Error::io(&cfg.metrics, e))?;

    let mut opt = Adam::new(model.num_params(), cfg.lr);
    let mut params = model.param_vector();
    let mut epochs = Vec::with_capacity(cfg.epochs);
    let start = Instant::now();
    for epoch in 1..=cfg.epochs {
        let order = dataset.shuffled(&mut rng);
        let mut norms = 0.0;
        let mut steps = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            let batch = dataset.batch(chunk, &mut rng);
            let (nll, mut grads) = batch_nll_grad(&model, &batch)?;
            let norm = clip_global_norm(&mut grads, cfg.clip_norm);
            if !nll.is_finite() || !norm.is_finite() {
                save_checkpoint(&model, &cfg.checkpoint)?;
                return Err(Error::Diverged {
                    epoch,
                    reason: format!("loss {nll}, gradient norm {norm}"),
                });
            }
            let before = params.clone();
            opt.step(&mut params, &grads)?;
            model.set_param_vector(&params)?;
            if model.min_conv_diagonal().is_some_and(|d| !(d > 1e-12)) {
                model.set_param_vector(&before)?;
                save_checkpoint(&model, &cfg.checkpoint)?;
                return Err(Error::Diverged {
                    epoch,
                    reason: "convolution diagonal collapsed".into(),
                });
            }
            norms += norm;
            steps += 1;
        }
        let eval = match evaluate(&model, dataset, cfg.eval_seed) {
            Ok(e) if e.nll.is_finite() => e,
            other => {
                let reason = match other {
                    Ok(e) => format!("evaluation loss {}", e.nll),
                    Err(e) => e.to_string(),
                };
                save_checkpoint(&model, &cfg.checkpoint)?;
                return Err(Error::Diverged { epoch, reason });
            }
        };
        let m = EpochMetrics {
            epoch,
            nll: eval.nll,
            bpd: eval.bpd,
            wall_seconds: if cfg.wall_clock {
                start.elapsed().as_secs_f64() as Real
            } else {
                0.0
            },
            grad_norm: norms / steps.max(1) as Real,
        };
        writeln!(metrics, "{}", m.csv_row()).map_err(|e| Error::io(&cfg.metrics, e))?;
        on_epoch(&m);
        epochs.push(m);
    }
    save_checkpoint(&model, &cfg.checkpoint)?;
    Ok(TrainReport {
        initial,
        epochs,
        model,
    })
}
