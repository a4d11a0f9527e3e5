//! The training loop: sample, embed, record the objective, backpropagate,
//! step. Also held-out evaluation of a trained network.

use std::fmt::Write as _;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::objective::record_batch_loss;
use crate::autodiff::{EmbeddingNet, LinearDecay, Real, SgdMomentum, Tape, Tensor};
use crate::config::RunConfig;
use crate::data::{sample_batch, DatasetFile, PatchBatch, PatchPair};
use crate::error::{Error, Result};
use crate::eval::{evaluate, MetricReport};
use crate::linalg::DenseMatrix;
use crate::loss::LossReport;

/// RNG stream drawing training batches; stream 0 initializes the network.
const SAMPLING_STREAM: u64 = 1;
/// RNG stream drawing verification pairs at evaluation.
const EVAL_STREAM: u64 = 2;
/// RNG stream drawing single inspection batches.
const INSPECT_STREAM: u64 = 3;

/// One row of the training log.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainLogRow {
    pub iteration: u64,
    pub lambda: f64,
    pub loss: f64,
    pub mean_d_pos_euclid: f64,
    pub mean_d_pos_topo: f64,
    pub mean_d_neg: f64,
    pub active_triplets: usize,
}

impl TrainLogRow {
    pub const CSV_HEADER: &'static str =
        "iteration,lambda,loss,mean_d_pos_euclid,mean_d_pos_topo,mean_d_neg,active_triplets";

    pub fn from_report(iteration: u64, r: &LossReport) -> Self {
        Self {
            iteration,
            lambda: r.lambda,
            loss: r.loss,
            mean_d_pos_euclid: r.mean_d_pos_euclid,
            mean_d_pos_topo: r.mean_d_pos_topo,
            mean_d_neg: r.mean_d_neg,
            active_triplets: r.active_triplets,
        }
    }

    /// Floats use the shortest representation that parses back exactly.
    pub fn to_csv(&self) -> String {
        format!(
            "{},{},{},{},{},{},{}",
            self.iteration,
            self.lambda,
            self.loss,
            self.mean_d_pos_euclid,
            self.mean_d_pos_topo,
            self.mean_d_neg,
            self.active_triplets
        )
    }

    pub fn from_csv(line: &str) -> Result<Self> {
        let f: Vec<&str> = line.trim().split(',').collect();
        if f.len() != 7 {
            return Err(Error::InvalidInput(format!(
                "expected 7 log fields, got {}",
                f.len()
            )));
        }
        let bad = |i: usize| Error::InvalidInput(format!("bad log field {:?}", f[i]));
        let real = |i: usize| f[i].parse::<f64>().map_err(|_| bad(i));
        Ok(Self {
            iteration: f[0].parse().map_err(|_| bad(0))?,
            lambda: real(1)?,
            loss: real(2)?,
            mean_d_pos_euclid: real(3)?,
            mean_d_pos_topo: real(4)?,
            mean_d_neg: real(5)?,
            active_triplets: f[6].parse().map_err(|_| bad(6))?,
        })
    }
}

/// Renders rows as a CSV document with header.
pub fn log_to_csv(rows: &[TrainLogRow]) -> String {
    let mut s = String::with_capacity(64 * (rows.len() + 1));
    let _ = writeln!(s, "{}", TrainLogRow::CSV_HEADER);
    for r in rows {
        let _ = writeln!(s, "{}", r.to_csv());
    }
    s
}

#[derive(Debug, Clone)]
pub struct TrainOutcome<T> {
    pub net: EmbeddingNet<T>,
    pub log: Vec<TrainLogRow>,
}

fn is_numerical(e: &Error) -> bool {
    matches!(
        e,
        Error::SingularSystem { .. }
            | Error::DegenerateFit { .. }
            | Error::DegenerateDescriptor { .. }
            | Error::NonUnitRow { .. }
    )
}

/// Runs `(loss report, parameter gradient)` for one batch.
fn step_gradients<T: Real>(
    net: &EmbeddingNet<T>,
    batch: &PatchBatch,
    iteration: u64,
    cfg: &RunConfig,
) -> Result<(LossReport, Vec<T>)> {
    let mut tape = Tape::new();
    let params = net.record_params(&mut tape);
    let xa = tape.constant(Tensor::from_dense(&batch.anchors));
    let xp = tape.constant(Tensor::from_dense(&batch.positives));
    let a = net.forward_on(&mut tape, &params, xa)?;
    let p = net.forward_on(&mut tape, &params, xp)?;
    let rec = record_batch_loss(&mut tape, a, p, iteration, &cfg.loss)?;
    let grads = tape.backward_from(rec.loss, T::one());
    Ok((rec.report, net.gather_grads(&grads, &params)))
}

/// Trains a fresh network on the training split of `data`. `on_log` sees
/// every logged row as it is produced.
pub fn train<T: Real>(
    cfg: &RunConfig,
    data: &DatasetFile,
    mut on_log: impl FnMut(&TrainLogRow) + Send,
) -> Result<TrainOutcome<T>> {
    cfg.validate()?;
    let (train_pairs, _) = data.split(cfg.holdout)?;
    if cfg.batch_size > train_pairs.len() {
        return Err(Error::Config(format!(
            "batch_size {} exceeds the {} training scenes",
            cfg.batch_size,
            train_pairs.len()
        )));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers)
        .build()
        .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))?;
    pool.install(|| run_loop(cfg, data.dim(), train_pairs, &mut on_log))
}

fn run_loop<T: Real>(
    cfg: &RunConfig,
    input_dim: usize,
    pairs: &[PatchPair],
    on_log: &mut (impl FnMut(&TrainLogRow) + Send),
) -> Result<TrainOutcome<T>> {
    let mut net = EmbeddingNet::<T>::new(&cfg.widths(input_dim), cfg.seed)?;
    let mut opt = SgdMomentum::new(cfg.momentum, cfg.weight_decay);
    let lr = LinearDecay {
        start: cfg.lr_start,
        end: cfg.lr_end,
        total: cfg.iterations,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(SAMPLING_STREAM);
    let mut log = Vec::new();
    let mut last_good = None;

    for it in 0..cfg.iterations {
        let batch = sample_batch(pairs, cfg.batch_size, &mut rng)?;
        let diverged = Error::Divergence {
            iteration: it,
            last_good,
        };
        let (report, grads) = match step_gradients(&net, &batch, it, cfg) {
            Ok(v) => v,
            Err(e) if is_numerical(&e) => {
                log::warn!("iteration {it}: {e}");
                return Err(diverged);
            }
            Err(e) => return Err(e),
        };
        if !report.loss.is_finite() || grads.iter().any(|g| !g.is_finite()) {
            return Err(diverged);
        }
        if it % cfg.log_every == 0 || it + 1 == cfg.iterations {
            let row = TrainLogRow::from_report(it, &report);
            on_log(&row);
            log.push(row);
        }
        opt.step(&mut net, &grads, lr.at(it))?;
        last_good = Some(it);
    }
    Ok(TrainOutcome { net, log })
}

/// Stacks the views of `pairs` into anchor and positive matrices.
pub fn pair_matrices(pairs: &[PatchPair]) -> Result<(DenseMatrix, DenseMatrix)> {
    let refs: Vec<&PatchPair> = pairs.iter().collect();
    let b = PatchBatch::from_pairs(&refs)?;
    Ok((b.anchors, b.positives))
}

/// FPR95 and mAP of `net` on the held-out split. Verification pairs are
/// drawn from `seed`.
pub fn evaluate_held_out<T: Real>(
    net: &EmbeddingNet<T>,
    data: &DatasetFile,
    holdout: f64,
    negatives_per_positive: usize,
    seed: u64,
) -> Result<MetricReport> {
    let (train_pairs, test_pairs) = data.split(holdout)?;
    let pairs = if test_pairs.is_empty() {
        train_pairs
    } else {
        test_pairs
    };
    evaluate_pairs(net, data.dim(), pairs, negatives_per_positive, seed)
}

pub fn evaluate_pairs<T: Real>(
    net: &EmbeddingNet<T>,
    dim: usize,
    pairs: &[PatchPair],
    negatives_per_positive: usize,
    seed: u64,
) -> Result<MetricReport> {
    if dim != net.input_dim() {
        return Err(Error::InvalidInput(format!(
            "dataset patches have dimension {dim}, network expects {}",
            net.input_dim()
        )));
    }
    let (xa, xp) = pair_matrices(pairs)?;
    let a = net.embed(&xa)?;
    let p = net.embed(&xp)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(EVAL_STREAM);
    evaluate(&a, &p, negatives_per_positive, &mut rng)
}

/// Mean of `f` over the first `count` rows.
pub fn head_mean(log: &[TrainLogRow], count: usize, f: impl Fn(&TrainLogRow) -> f64) -> f64 {
    let head = &log[..count.min(log.len())];
    head.iter().map(f).sum::<f64>() / head.len() as f64
}

/// Seeded single batch for commands that look at one batch.
pub fn draw_batch(pairs: &[PatchPair], batch_size: usize, seed: u64) -> Result<PatchBatch> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(INSPECT_STREAM);
    sample_batch(pairs, batch_size, &mut rng)
}
