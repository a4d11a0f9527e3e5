//! Central finite-difference check of the recorded objective's gradient.
//!
//! The numeric side never touches the tape: it embeds with
//! [`EmbeddingNet::embed`] and evaluates [`crate::loss::batch_loss`]. In
//! detached mode the topology vectors are fitted once at the unperturbed
//! parameters and held fixed, matching what the analytic side treats as
//! constant.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::linalg::DenseMatrix;
use crate::loss::{batch_loss, batch_loss_with_topology, LossConfig, TopologyMode};
use crate::topology::{SetTopology, TopologyVector};

use super::objective::record_batch_loss;
use super::{DerivativeRule, EmbeddingNet, Tape, Tensor};

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    /// Largest `|analytic − numeric| / max(1, |analytic|, |numeric|)`.
    pub max_relative_error: f64,
    /// Name of the parameter attaining the maximum.
    pub worst_parameter: String,
    pub step_size: f64,
    /// Number of parameters compared.
    pub checked: usize,
}

#[derive(Debug, Clone)]
pub struct GradCheckOptions {
    pub step: f64,
    /// Above this many parameters a seeded subset of this size is checked.
    pub max_params: usize,
    pub seed: u64,
    pub iteration: u64,
    /// Derivative rule to corrupt on the analytic side (negative control).
    pub fault: Option<DerivativeRule>,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            step: 1e-5,
            max_params: 1000,
            seed: 0,
            iteration: 0,
            fault: None,
        }
    }
}

/// Gradient of the batch objective with respect to every parameter, in
/// [`EmbeddingNet::params_flat`] order, and the loss value.
pub fn analytic_gradients(
    net: &EmbeddingNet<f64>,
    patches_a: &DenseMatrix,
    patches_p: &DenseMatrix,
    cfg: &LossConfig,
    iteration: u64,
    fault: Option<DerivativeRule>,
) -> Result<(f64, Vec<f64>)> {
    let mut tape = Tape::new();
    if let Some(rule) = fault {
        tape.corrupt(rule);
    }
    let params = net.record_params(&mut tape);
    let xa = tape.constant(Tensor::from_dense(patches_a));
    let xp = tape.constant(Tensor::from_dense(patches_p));
    let a = net.forward_on(&mut tape, &params, xa)?;
    let p = net.forward_on(&mut tape, &params, xp)?;
    let rec = record_batch_loss(&mut tape, a, p, iteration, cfg)?;
    let grads = tape.backward_from(rec.loss, 1.0);
    Ok((rec.report.loss, net.gather_grads(&grads, &params)))
}

/// Loss of `net` on the batch, evaluated without a tape.
pub fn numeric_loss(
    net: &EmbeddingNet<f64>,
    patches_a: &DenseMatrix,
    patches_p: &DenseMatrix,
    cfg: &LossConfig,
    iteration: u64,
) -> Result<f64> {
    let a = net.embed(patches_a)?;
    let p = net.embed(patches_p)?;
    Ok(batch_loss(&a, &p, iteration, cfg)?.loss)
}

type FrozenTopology = (Vec<TopologyVector>, Vec<TopologyVector>);

fn frozen_topology(
    net: &EmbeddingNet<f64>,
    patches_a: &DenseMatrix,
    patches_p: &DenseMatrix,
    cfg: &LossConfig,
) -> Result<Option<FrozenTopology>> {
    if cfg.topology != TopologyMode::Detached {
        return Ok(None);
    }
    let ta = SetTopology::compute(&net.embed(patches_a)?, cfg.k, cfg.lle_eps)?;
    let tp = SetTopology::compute(&net.embed(patches_p)?, cfg.k, cfg.lle_eps)?;
    Ok(Some((ta.vectors, tp.vectors)))
}

fn probe_loss(
    net: &EmbeddingNet<f64>,
    patches_a: &DenseMatrix,
    patches_p: &DenseMatrix,
    cfg: &LossConfig,
    iteration: u64,
    frozen: Option<&FrozenTopology>,
) -> Result<f64> {
    match frozen {
        None => numeric_loss(net, patches_a, patches_p, cfg, iteration),
        Some((ta, tp)) => {
            let a = net.embed(patches_a)?;
            let p = net.embed(patches_p)?;
            Ok(batch_loss_with_topology(&a, &p, iteration, cfg, ta, tp)?.loss)
        }
    }
}

pub fn grad_check(
    net: &EmbeddingNet<f64>,
    patches_a: &DenseMatrix,
    patches_p: &DenseMatrix,
    cfg: &LossConfig,
    opts: &GradCheckOptions,
) -> Result<GradCheckReport> {
    let (_, analytic) =
        analytic_gradients(net, patches_a, patches_p, cfg, opts.iteration, opts.fault)?;
    let count = net.param_count();
    let indices: Vec<usize> = if count > opts.max_params {
        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
        let mut idx = sample(&mut rng, count, opts.max_params).into_vec();
        idx.sort_unstable();
        idx
    } else {
        (0..count).collect()
    };

    let frozen = frozen_topology(net, patches_a, patches_p, cfg)?;
    let base = net.params_flat();
    let mut probe = net.clone();
    let mut worst = (0.0f64, 0usize);
    for &i in &indices {
        let mut shifted = base.clone();
        shifted[i] = base[i] + opts.step;
        probe.set_params_flat(&shifted)?;
        let up = probe_loss(
            &probe,
            patches_a,
            patches_p,
            cfg,
            opts.iteration,
            frozen.as_ref(),
        )?;
        shifted[i] = base[i] - opts.step;
        probe.set_params_flat(&shifted)?;
        let down = probe_loss(
            &probe,
            patches_a,
            patches_p,
            cfg,
            opts.iteration,
            frozen.as_ref(),
        )?;
        let numeric = (up - down) / (2.0 * opts.step);
        let a = analytic[i];
        let err = (a - numeric).abs() / 1f64.max(a.abs()).max(numeric.abs());
        if err > worst.0 || !err.is_finite() {
            worst = (err, i);
        }
    }
    Ok(GradCheckReport {
        max_relative_error: worst.0,
        worst_parameter: net.parameter_name(worst.1),
        step_size: opts.step,
        checked: indices.len(),
    })
}

/// Small seeded network and patch batch for gradient checking: widths
/// `input → hidden → dim`, `n` pairs where each positive is a perturbed
/// copy of its anchor.
pub fn tiny_problem(
    seed: u64,
    widths: &[usize],
    n: usize,
) -> Result<(EmbeddingNet<f64>, DenseMatrix, DenseMatrix)> {
    let net = EmbeddingNet::new(widths, seed)?;
    let dim = widths[0];
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(1));
    let a: Vec<f64> = (0..n * dim).map(|_| rng.random_range(-1.0..1.0)).collect();
    let p: Vec<f64> = a.iter().map(|v| v + rng.random_range(-0.3..0.3)).collect();
    Ok((
        net,
        DenseMatrix::new(n, dim, a)?,
        DenseMatrix::new(n, dim, p)?,
    ))
}
