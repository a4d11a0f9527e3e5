//! Triplet objective with hardest-in-batch negatives and a positive term
//! fusing Euclidean and topology distance.
//!
//! For matched sets `A`, `P` of `n` unit descriptors:
//!
//! ```text
//! Γ⁺ᵢ = λ·d_E(aᵢ, pᵢ) + (1 − λ)·d_T(aᵢ, pᵢ)
//! Γ⁻ᵢ = min( min_{j≠i} d_E(aᵢ, pⱼ), min_{m≠i} d_E(aₘ, pᵢ) )
//! L   = (1/n)·Σᵢ max(0, margin + Γ⁺ᵢ − Γ⁻ᵢ)
//! ```
//!
//! `λ` follows a step schedule on the global iteration count. This module is
//! the straight evaluation of the objective; the differentiable version used
//! for training lives in [`crate::autodiff::objective`].

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::knn::{pairwise_distances, unit_distance, DistanceMatrix};
use crate::linalg::DenseMatrix;
use crate::topology::{topology_distance, SetTopology, TopologyVector, DEFAULT_LLE_EPS};

/// How the topology term participates in training.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TopologyMode {
    /// Gradients flow through the closed-form weight solve; neighbor sets
    /// are frozen per batch.
    #[default]
    ThroughWeights,
    /// Weights enter the loss as constants.
    Detached,
    /// Topology is never computed: plain Euclidean triplet loss.
    Off,
}

impl fmt::Display for TopologyMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TopologyMode::ThroughWeights => "through-weights",
            TopologyMode::Detached => "detached",
            TopologyMode::Off => "off",
        })
    }
}

impl FromStr for TopologyMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "through-weights" => Ok(TopologyMode::ThroughWeights),
            "detached" => Ok(TopologyMode::Detached),
            "off" => Ok(TopologyMode::Off),
            other => Err(Error::InvalidArgument(format!(
                "unknown topology mode '{other}' (expected through-weights, detached or off)"
            ))),
        }
    }
}

/// Source of the fusion weight `λ`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum LambdaMode {
    #[default]
    Dynamic,
    Fixed(f64),
}

impl fmt::Display for LambdaMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LambdaMode::Dynamic => f.write_str("dynamic"),
            LambdaMode::Fixed(v) => write!(f, "fixed:{v}"),
        }
    }
}

impl FromStr for LambdaMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "dynamic" {
            return Ok(LambdaMode::Dynamic);
        }
        let bad = || {
            Error::InvalidArgument(format!(
                "lambda mode '{s}' must be 'dynamic' or 'fixed:<v>' with v in [0, 1]"
            ))
        };
        let v: f64 = s
            .strip_prefix("fixed:")
            .ok_or_else(bad)?
            .parse()
            .map_err(|_| bad())?;
        if !(0.0..=1.0).contains(&v) {
            return Err(bad());
        }
        Ok(LambdaMode::Fixed(v))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossConfig {
    pub margin: f64,
    /// Neighbors per descriptor for the topology vectors.
    pub k: usize,
    /// Iterations before `λ` starts to decay.
    pub lambda_n0: u64,
    /// Iterations per decay step.
    pub lambda_step: u64,
    /// Decrement per decay step.
    pub lambda_r: f64,
    pub lambda_floor: f64,
    pub lambda_mode: LambdaMode,
    pub topology: TopologyMode,
    /// Relative regularizer of the affine fits.
    pub lle_eps: f64,
}

impl Default for LossConfig {
    /// Full-scale constants: k = 20, n₀ = 5·10⁴, N = 10⁴, r = 0.025, floor 0.5.
    fn default() -> Self {
        Self {
            margin: 1.0,
            k: 20,
            lambda_n0: 50_000,
            lambda_step: 10_000,
            lambda_r: 0.025,
            lambda_floor: 0.5,
            lambda_mode: LambdaMode::Dynamic,
            topology: TopologyMode::ThroughWeights,
            lle_eps: DEFAULT_LLE_EPS,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if !(self.margin > 0.0 && self.margin.is_finite()) {
            return fail(format!("margin must be > 0, got {}", self.margin));
        }
        if self.k == 0 {
            return fail("k must be >= 1".into());
        }
        if self.lambda_step == 0 {
            return fail("lambda step N must be >= 1".into());
        }
        if !(self.lambda_r > 0.0 && self.lambda_r.is_finite()) {
            return fail(format!("lambda decay r must be > 0, got {}", self.lambda_r));
        }
        if !(self.lambda_floor > 0.0 && self.lambda_floor <= 1.0) {
            return fail(format!(
                "lambda floor must lie in (0, 1], got {}",
                self.lambda_floor
            ));
        }
        if !(self.lle_eps >= 0.0 && self.lle_eps.is_finite()) {
            return fail(format!("lle_eps must be >= 0, got {}", self.lle_eps));
        }
        if let LambdaMode::Fixed(v) = self.lambda_mode {
            if !(0.0..=1.0).contains(&v) {
                return fail(format!("fixed lambda must lie in [0, 1], got {v}"));
            }
        }
        Ok(())
    }

    /// `λ` in effect at `iteration` for this configuration.
    pub fn lambda_at(&self, iteration: u64) -> f64 {
        match (self.topology, self.lambda_mode) {
            (TopologyMode::Off, _) => 1.0,
            (_, LambdaMode::Fixed(v)) => v,
            (_, LambdaMode::Dynamic) => lambda_schedule(iteration, self),
        }
    }
}

/// `λ = max(1 − ⌈max(0, n − n₀)/N⌉·r, floor)`.
pub fn lambda_schedule(iteration: u64, cfg: &LossConfig) -> f64 {
    let excess = iteration.saturating_sub(cfg.lambda_n0);
    let steps = excess.div_ceil(cfg.lambda_step.max(1));
    (1.0 - steps as f64 * cfg.lambda_r).max(cfg.lambda_floor)
}

/// `λ·d_E + (1 − λ)·d_T`.
#[inline]
pub fn fuse(d_euclid: f64, d_topo: f64, lambda: f64) -> f64 {
    lambda * d_euclid + (1.0 - lambda) * d_topo
}

/// Fused positive distance of one matching pair.
pub fn positive_distance(
    a: &[f64],
    p: &[f64],
    ta: &TopologyVector,
    tp: &TopologyVector,
    lambda: f64,
) -> Result<f64> {
    Ok(fuse(
        unit_distance(a, p),
        topology_distance(ta, tp)?,
        lambda,
    ))
}

/// Location and value of the hardest negative for index `i`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HardNegative {
    pub distance: f64,
    /// Anchor row of the chosen entry in the anchor/positive distance matrix.
    pub row: usize,
    /// Positive column of the chosen entry.
    pub col: usize,
}

/// Scans row `i` (excluding column `i`) then column `i` (excluding row
/// `i`); the first strict minimum wins.
pub fn hardest_negative_entry(i: usize, d_ap: &DistanceMatrix) -> Result<HardNegative> {
    let n = d_ap.rows();
    if n < 2 || d_ap.cols() != n {
        return Err(Error::InvalidBatch(format!(
            "hardest negative needs a square batch with n >= 2 (got {}x{})",
            d_ap.rows(),
            d_ap.cols()
        )));
    }
    if i >= n {
        return Err(Error::InvalidArgument(format!(
            "index {i} out of batch of {n}"
        )));
    }
    let mut best = HardNegative {
        distance: f64::INFINITY,
        row: i,
        col: i,
    };
    for j in (0..n).filter(|&j| j != i) {
        let d = d_ap.get(i, j);
        if d < best.distance {
            best = HardNegative {
                distance: d,
                row: i,
                col: j,
            };
        }
    }
    for m in (0..n).filter(|&m| m != i) {
        let d = d_ap.get(m, i);
        if d < best.distance {
            best = HardNegative {
                distance: d,
                row: m,
                col: i,
            };
        }
    }
    Ok(best)
}

/// `Γ⁻` for matching pair `i`.
pub fn hardest_negative(i: usize, d_ap: &DistanceMatrix) -> Result<f64> {
    hardest_negative_entry(i, d_ap).map(|h| h.distance)
}

/// Per-batch loss value with diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct LossReport {
    pub loss: f64,
    pub lambda: f64,
    pub mean_d_pos_euclid: f64,
    /// Zero when topology is off.
    pub mean_d_pos_topo: f64,
    pub mean_d_neg: f64,
    pub active_triplets: usize,
    /// Largest `d_T` in the batch; above 1 only with negative weights.
    pub max_d_pos_topo: f64,
}

/// Assembles the report from per-index terms, reducing in index order.
pub(crate) fn summarize(
    lambda: f64,
    d_euclid: &[f64],
    d_topo: Option<&[f64]>,
    d_neg: &[f64],
    hinge: &[f64],
) -> LossReport {
    let n = d_euclid.len() as f64;
    let mean = |v: &[f64]| v.iter().sum::<f64>() / n;
    LossReport {
        loss: mean(hinge),
        lambda,
        mean_d_pos_euclid: mean(d_euclid),
        mean_d_pos_topo: d_topo.map_or(0.0, mean),
        mean_d_neg: mean(d_neg),
        active_triplets: hinge.iter().filter(|h| **h > 0.0).count(),
        max_d_pos_topo: d_topo.map_or(0.0, |t| t.iter().copied().fold(0.0, f64::max)),
    }
}

/// Evaluates the objective on matched unit descriptor sets.
pub fn batch_loss(
    anchors: &DenseMatrix,
    positives: &DenseMatrix,
    iteration: u64,
    cfg: &LossConfig,
) -> Result<LossReport> {
    if cfg.topology == TopologyMode::Off {
        return evaluate(anchors, positives, iteration, cfg, None);
    }
    check_pairs(anchors, positives)?;
    let ta = SetTopology::compute(anchors, cfg.k, cfg.lle_eps)?;
    let tp = SetTopology::compute(positives, cfg.k, cfg.lle_eps)?;
    evaluate(
        anchors,
        positives,
        iteration,
        cfg,
        Some((&ta.vectors, &tp.vectors)),
    )
}

/// Evaluates the objective with topology vectors supplied by the caller
/// instead of fitted from `anchors` / `positives`.
pub fn batch_loss_with_topology(
    anchors: &DenseMatrix,
    positives: &DenseMatrix,
    iteration: u64,
    cfg: &LossConfig,
    ta: &[TopologyVector],
    tp: &[TopologyVector],
) -> Result<LossReport> {
    if ta.len() != anchors.rows() || tp.len() != positives.rows() {
        return Err(Error::InvalidBatch(
            "one topology vector per descriptor is required".into(),
        ));
    }
    evaluate(anchors, positives, iteration, cfg, Some((ta, tp)))
}

fn check_pairs(anchors: &DenseMatrix, positives: &DenseMatrix) -> Result<()> {
    let n = anchors.rows();
    if positives.rows() != n {
        return Err(Error::InvalidBatch(format!(
            "{n} anchors but {} positives",
            positives.rows()
        )));
    }
    if n < 2 {
        return Err(Error::InvalidBatch(format!(
            "batch of {n} has no negatives"
        )));
    }
    Ok(())
}

fn evaluate(
    anchors: &DenseMatrix,
    positives: &DenseMatrix,
    iteration: u64,
    cfg: &LossConfig,
    topology: Option<(&[TopologyVector], &[TopologyVector])>,
) -> Result<LossReport> {
    cfg.validate()?;
    check_pairs(anchors, positives)?;
    let n = anchors.rows();
    let d_ap = pairwise_distances(anchors, positives)?;
    let lambda = cfg.lambda_at(iteration);
    let d_euclid: Vec<f64> = (0..n).map(|i| d_ap.get(i, i)).collect();
    let d_neg: Vec<f64> = (0..n)
        .map(|i| hardest_negative(i, &d_ap))
        .collect::<Result<_>>()?;

    let d_topo = match topology {
        Some((ta, tp)) if cfg.topology != TopologyMode::Off => Some(
            ta.iter()
                .zip(tp)
                .map(|(a, p)| topology_distance(a, p))
                .collect::<Result<Vec<f64>>>()?,
        ),
        _ => None,
    };

    let hinge: Vec<f64> = (0..n)
        .map(|i| {
            let pos = match &d_topo {
                Some(t) => fuse(d_euclid[i], t[i], lambda),
                None => d_euclid[i],
            };
            (pos + cfg.margin - d_neg[i]).max(0.0)
        })
        .collect();
    Ok(summarize(
        lambda,
        &d_euclid,
        d_topo.as_deref(),
        &d_neg,
        &hinge,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::knn::top_k_within;
    use crate::linalg::{dot, l2_norm};
    use crate::topology::fit_weights;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn unit_rows(rng: &mut ChaCha8Rng, n: usize, dim: usize) -> DenseMatrix {
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|_| {
                let v: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
                let norm = l2_norm(&v);
                v.into_iter().map(|x| x / norm).collect()
            })
            .collect();
        DenseMatrix::from_rows(&rows).unwrap()
    }

    fn full_scale() -> LossConfig {
        LossConfig::default()
    }

    #[test]
    fn lambda_schedule_points() {
        let cfg = full_scale();
        assert_eq!(lambda_schedule(0, &cfg), 1.0);
        assert_eq!(lambda_schedule(50_000, &cfg), 1.0);
        assert!((lambda_schedule(50_001, &cfg) - 0.975).abs() < 1e-12);
        assert!((lambda_schedule(60_000, &cfg) - 0.975).abs() < 1e-12);
        assert!((lambda_schedule(60_001, &cfg) - 0.95).abs() < 1e-12);
        assert!((lambda_schedule(250_000, &cfg) - 0.5).abs() < 1e-12);
        assert_eq!(lambda_schedule(10_000_000, &cfg), 0.5);
    }

    #[test]
    fn lambda_modes() {
        let mut cfg = full_scale();
        cfg.lambda_mode = LambdaMode::Fixed(0.25);
        assert_eq!(cfg.lambda_at(0), 0.25);
        cfg.topology = TopologyMode::Off;
        assert_eq!(cfg.lambda_at(200_000), 1.0);
        assert_eq!(
            "fixed:1.0".parse::<LambdaMode>().unwrap(),
            LambdaMode::Fixed(1.0)
        );
        assert!("fixed:1.5".parse::<LambdaMode>().is_err());
        assert!("sometimes".parse::<LambdaMode>().is_err());
        assert_eq!(
            "detached".parse::<TopologyMode>().unwrap(),
            TopologyMode::Detached
        );
    }

    #[test]
    fn fusion_examples() {
        assert_eq!(fuse(0.4, 0.9, 1.0), 0.4);
        assert!((fuse(0.4, 0.2, 0.5) - 0.3).abs() < 1e-15);
        let a = [1.0, 0.0];
        let t = TopologyVector {
            length: 3,
            anchor_index: 0,
            support: vec![1, 2],
            values: vec![0.5, 0.5],
        };
        for lambda in [0.0, 0.3, 1.0] {
            assert_eq!(positive_distance(&a, &a, &t, &t, lambda).unwrap(), 0.0);
        }
    }

    #[test]
    fn hardest_negative_two_by_two() {
        let d = DistanceMatrix::from_entries(2, 2, vec![0.1, 0.7, 0.4, 0.2]).unwrap();
        // Non-matching entries touching 0: (0,1)=0.7, (1,0)=0.4.
        assert_eq!(hardest_negative(0, &d).unwrap(), 0.4);
        assert_eq!(hardest_negative(1, &d).unwrap(), 0.4);
        let e = hardest_negative_entry(0, &d).unwrap();
        assert_eq!((e.row, e.col), (1, 0));
    }

    #[test]
    fn hardest_negative_coincident_is_zero() {
        let a = DenseMatrix::from_rows(&[[1.0, 0.0], [0.0, 1.0]]).unwrap();
        let p = DenseMatrix::from_rows(&[[0.0, -1.0], [1.0, 0.0]]).unwrap();
        let d = pairwise_distances(&a, &p).unwrap();
        assert_eq!(hardest_negative(0, &d).unwrap(), 0.0);
    }

    #[test]
    fn hardest_negative_needs_two() {
        let d = DistanceMatrix::from_entries(1, 1, vec![0.0]).unwrap();
        assert!(matches!(
            hardest_negative(0, &d),
            Err(Error::InvalidBatch(_))
        ));
    }

    #[test]
    fn identical_sets_scan_row_and_column() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let a = unit_rows(&mut rng, 6, 4);
        let d = pairwise_distances(&a, &a).unwrap();
        for i in 0..6 {
            let oracle = (0..6)
                .filter(|&j| j != i)
                .flat_map(|j| [d.get(i, j), d.get(j, i)])
                .fold(f64::INFINITY, f64::min);
            assert_eq!(hardest_negative(i, &d).unwrap(), oracle);
        }
    }

    #[test]
    fn hinge_inactive_and_active() {
        // Orthogonal pairs: Γ⁻ = sqrt(2) everywhere, Γ⁺ = 0.
        let a =
            DenseMatrix::from_rows(&[[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]).unwrap();
        let mut cfg = full_scale();
        cfg.topology = TopologyMode::Off;
        cfg.margin = 1.0;
        let r = batch_loss(&a, &a, 0, &cfg).unwrap();
        assert_eq!(r.loss, 0.0);
        assert_eq!(r.active_triplets, 0);

        cfg.margin = 2.0;
        let r = batch_loss(&a, &a, 0, &cfg).unwrap();
        assert!((r.loss - (2.0 - 2f64.sqrt())).abs() < 1e-15);
        assert_eq!(r.active_triplets, 3);
    }

    #[test]
    fn half_margin_example() {
        // margin 1, Γ⁺ = 0.5, Γ⁻ = 1.0 for every pair.
        let d_e = [0.5f64, 0.5];
        let d_n = [1.0, 1.0];
        let hinge: Vec<f64> = (0..2).map(|i| (d_e[i] + 1.0 - d_n[i]).max(0.0)).collect();
        let r = summarize(1.0, &d_e, None, &d_n, &hinge);
        assert_eq!(r.loss, 0.5);
        assert_eq!(r.active_triplets, 2);
    }

    #[test]
    fn identical_sets_have_zero_positive_terms() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let a = unit_rows(&mut rng, 12, 6);
        let mut cfg = full_scale();
        cfg.k = 3;
        cfg.lambda_mode = LambdaMode::Fixed(0.5);
        let r = batch_loss(&a, &a, 0, &cfg).unwrap();
        assert!(r.mean_d_pos_euclid < 1e-7);
        assert_eq!(r.mean_d_pos_topo, 0.0);
        let d = pairwise_distances(&a, &a).unwrap();
        let expect: f64 = (0..12)
            .map(|i| (1.0 - hardest_negative(i, &d).unwrap() + d.get(i, i) * 0.5).max(0.0))
            .sum::<f64>()
            / 12.0;
        assert!((r.loss - expect).abs() < 1e-12);
    }

    /// Straight-line composition of the objective, one scalar at a time.
    fn reference_loss(a: &DenseMatrix, p: &DenseMatrix, cfg: &LossConfig, lambda: f64) -> f64 {
        let n = a.rows();
        let dist = |x: &[f64], y: &[f64]| (2.0 - 2.0 * dot(x, y)).max(0.0).sqrt();
        let topo = |x: &DenseMatrix| -> Vec<Vec<f64>> {
            let nn = top_k_within(x, cfg.k).unwrap();
            nn.iter()
                .map(|s| {
                    let local = x.select_rows(&s.neighbor_indices);
                    let w = fit_weights(s.anchor_index, x.row(s.anchor_index), &local, cfg.lle_eps)
                        .unwrap();
                    let mut dense = vec![0.0; n];
                    for (j, wj) in s.neighbor_indices.iter().zip(&w.weights) {
                        dense[*j] = *wj;
                    }
                    dense
                })
                .collect()
        };
        let (ta, tp) = (topo(a), topo(p));
        let mut total = 0.0;
        for i in 0..n {
            let de = dist(a.row(i), p.row(i));
            let dt: f64 = ta[i]
                .iter()
                .zip(&tp[i])
                .map(|(x, y)| (x - y).abs())
                .sum::<f64>()
                / 4.0;
            let mut neg = f64::INFINITY;
            for j in 0..n {
                if j != i {
                    neg = neg
                        .min(dist(a.row(i), p.row(j)))
                        .min(dist(a.row(j), p.row(i)));
                }
            }
            let pos = lambda * de + (1.0 - lambda) * dt;
            total += (cfg.margin + pos - neg).max(0.0);
        }
        total / n as f64
    }

    #[test]
    fn matches_reference_composition() {
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let mut cfg = full_scale();
        cfg.k = 2;
        cfg.lambda_mode = LambdaMode::Fixed(0.5);
        for _ in 0..20 {
            let a = unit_rows(&mut rng, 8, 5);
            let p = unit_rows(&mut rng, 8, 5);
            let r = batch_loss(&a, &p, 0, &cfg).unwrap();
            let oracle = reference_loss(&a, &p, &cfg, 0.5);
            assert!((r.loss - oracle).abs() < 1e-10, "{} vs {oracle}", r.loss);
        }
    }

    #[test]
    fn lambda_one_reduces_to_euclidean_triplet() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let a = unit_rows(&mut rng, 10, 4);
        let p = unit_rows(&mut rng, 10, 4);
        let mut cfg = full_scale();
        cfg.k = 3;
        cfg.topology = TopologyMode::Off;
        let off = batch_loss(&a, &p, 0, &cfg).unwrap();
        cfg.topology = TopologyMode::ThroughWeights;
        cfg.lambda_mode = LambdaMode::Fixed(1.0);
        let fixed = batch_loss(&a, &p, 0, &cfg).unwrap();
        assert!((off.loss - fixed.loss).abs() <= 1e-12);
        assert_eq!(off.loss.to_bits(), fixed.loss.to_bits());
    }

    #[test]
    fn rejects_mismatched_batches() {
        let a = DenseMatrix::from_rows(&[[1.0, 0.0], [0.0, 1.0]]).unwrap();
        let p = DenseMatrix::from_rows(&[[1.0, 0.0]]).unwrap();
        assert!(batch_loss(&a, &p, 0, &full_scale()).is_err());
    }

    proptest! {
        #[test]
        fn loss_invariant_to_pair_permutation(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let n = rng.random_range(4..12);
            let a = unit_rows(&mut rng, n, 5);
            let p = unit_rows(&mut rng, n, 5);
            let mut perm: Vec<usize> = (0..n).collect();
            for i in (1..n).rev() {
                perm.swap(i, rng.random_range(0..=i));
            }
            let mut cfg = full_scale();
            cfg.k = 2;
            cfg.lambda_mode = LambdaMode::Fixed(0.5);
            let base = batch_loss(&a, &p, 0, &cfg).unwrap();
            let moved = batch_loss(&a.select_rows(&perm), &p.select_rows(&perm), 0, &cfg).unwrap();
            prop_assert!((base.loss - moved.loss).abs() < 1e-10);
            prop_assert_eq!(base.active_triplets, moved.active_triplets);
        }

        #[test]
        fn loss_is_non_negative(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = unit_rows(&mut rng, 6, 3);
            let p = unit_rows(&mut rng, 6, 3);
            let mut cfg = full_scale();
            cfg.k = 2;
            let r = batch_loss(&a, &p, rng.random_range(0..300_000), &cfg).unwrap();
            prop_assert!(r.loss >= 0.0);
            prop_assert!((0.5..=1.0).contains(&r.lambda));
        }
    }
}
