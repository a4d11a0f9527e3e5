//! Locally linear topology of a descriptor set.
//!
//! Each descriptor is reconstructed as an affine combination of its `k`
//! nearest neighbors inside its own set:
//!
//! ```text
//! minimize ‖x − Σⱼ wⱼ·yⱼ‖²   subject to   Σⱼ wⱼ = 1
//! ```
//!
//! With `Z` the `k × D` matrix of rows `x − yⱼ` and `S = Z·Zᵀ` the objective
//! becomes `wᵀ·S·w`, whose constrained minimizer is
//! `w = S⁻¹·1 / (1ᵀ·S⁻¹·1)`. `S` is conditioned with a trace-relative
//! diagonal shift (see [`crate::linalg::RegularizedCholesky`]).
//!
//! The weights are scattered into a length-`n` sparse topology vector at the
//! neighbors' batch indices. Two topology vectors are compared by a quarter
//! of their l1 distance.

use std::fmt;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::knn::{top_k_within, NeighborSet};
use crate::linalg::{gram, l2_norm, DenseMatrix, RegularizedCholesky};

/// Default relative regularizer for `S`.
pub const DEFAULT_LLE_EPS: f64 = 1e-3;

/// Affine reconstruction weights of one anchor.
#[derive(Debug, Clone, PartialEq)]
pub struct LleWeights {
    pub anchor_index: usize,
    pub weights: Vec<f64>,
    /// `‖x − Σ wⱼ yⱼ‖` for the returned weights.
    pub residual: f64,
}

/// A solved affine fit, keeping what the reverse pass needs.
#[derive(Debug, Clone)]
pub struct AffineFit {
    anchor_index: usize,
    diffs: DenseMatrix,
    chol: RegularizedCholesky,
    /// `u = C⁻¹·1`.
    u: Vec<f64>,
    /// `1ᵀ·u`.
    total: f64,
    weights: Vec<f64>,
    residual: f64,
}

impl AffineFit {
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn residual(&self) -> f64 {
        self.residual
    }

    pub fn anchor_index(&self) -> usize {
        self.anchor_index
    }

    pub fn k(&self) -> usize {
        self.weights.len()
    }

    /// Relative regularizer actually applied to `S`.
    pub fn regularizer_eps(&self) -> f64 {
        self.chol.eps
    }

    pub fn to_weights(&self) -> LleWeights {
        LleWeights {
            anchor_index: self.anchor_index,
            weights: self.weights.clone(),
            residual: self.residual,
        }
    }

    /// Pulls a cotangent on the weights back to the anchor and neighbors.
    ///
    /// With `C = S + shift(S)·I`, `u = C⁻¹1` and `w = u / 1ᵀu`:
    ///
    /// * `ū = (ḡ − (ḡ·w)·1) / 1ᵀu`
    /// * `C̄ = −v·uᵀ` with `v = C⁻¹ū` (same factorization, `C` symmetric)
    /// * `S̄ = C̄ + (eps/k)·tr(C̄)·I` when the shift is trace-relative
    /// * `Z̄ = (S̄ + S̄ᵀ)·Z`, then `x̄ = Σⱼ z̄ⱼ` and `ȳⱼ = −z̄ⱼ`.
    ///
    /// Returns `(x̄, Ȳ)` with `Ȳ` shaped `k × D`. The neighbor indices are
    /// held fixed.
    pub fn backward(&self, grad_weights: &[f64]) -> (Vec<f64>, DenseMatrix) {
        let k = self.k();
        debug_assert_eq!(grad_weights.len(), k);
        let gw: f64 = grad_weights
            .iter()
            .zip(&self.weights)
            .map(|(g, w)| g * w)
            .sum();
        let u_bar: Vec<f64> = grad_weights.iter().map(|g| (g - gw) / self.total).collect();
        let v = self.chol.solve(&u_bar);

        // S̄ = −v·uᵀ (+ trace term); symmetrize for Z̄.
        let mut s_bar = DenseMatrix::zeros(k, k);
        for a in 0..k {
            for b in 0..k {
                s_bar[(a, b)] = -v[a] * self.u[b];
            }
        }
        if self.chol.trace_relative && self.chol.eps > 0.0 {
            let tr = s_bar.trace();
            let add = self.chol.eps / k as f64 * tr;
            for a in 0..k {
                s_bar[(a, a)] += add;
            }
        }

        let dim = self.diffs.cols();
        let mut grad_neighbors = DenseMatrix::zeros(k, dim);
        let mut grad_anchor = vec![0.0; dim];
        for a in 0..k {
            let out = grad_neighbors.row_mut(a);
            for b in 0..k {
                let c = s_bar[(a, b)] + s_bar[(b, a)];
                if c != 0.0 {
                    for (o, z) in out.iter_mut().zip(self.diffs.row(b)) {
                        *o += c * z;
                    }
                }
            }
            // z̄ₐ flows +1 into the anchor and −1 into neighbor a.
            for (g, o) in grad_anchor.iter_mut().zip(out.iter_mut()) {
                *g += *o;
                *o = -*o;
            }
        }
        (grad_anchor, grad_neighbors)
    }
}

/// Solves the sum-to-one least-squares fit of `anchor` by the rows of
/// `neighbors`.
pub fn fit_affine(
    anchor_index: usize,
    anchor: &[f64],
    neighbors: &DenseMatrix,
    eps: f64,
) -> Result<AffineFit> {
    let k = neighbors.rows();
    if k == 0 {
        return Err(Error::InvalidInput("affine fit needs k >= 1".into()));
    }
    if neighbors.cols() != anchor.len() {
        return Err(Error::InvalidInput(format!(
            "anchor has dimension {} but neighbors have {}",
            anchor.len(),
            neighbors.cols()
        )));
    }
    let mut diffs = neighbors.clone();
    for j in 0..k {
        for (d, a) in diffs.row_mut(j).iter_mut().zip(anchor) {
            *d = a - *d;
        }
    }
    let s = gram(&diffs)?;
    let chol = RegularizedCholesky::new(&s, eps)?;
    let u = chol.solve(&vec![1.0; k]);
    let total: f64 = u.iter().sum();
    if !(total.is_finite() && total != 0.0) || u.iter().any(|v| !v.is_finite()) {
        return Err(Error::DegenerateFit {
            anchor: anchor_index,
        });
    }
    let weights: Vec<f64> = u.iter().map(|v| v / total).collect();

    let mut recon = anchor.to_vec();
    for (j, w) in weights.iter().enumerate() {
        for (r, y) in recon.iter_mut().zip(neighbors.row(j)) {
            *r -= w * y;
        }
    }
    let residual = l2_norm(&recon);

    Ok(AffineFit {
        anchor_index,
        diffs,
        chol,
        u,
        total,
        weights,
        residual,
    })
}

/// Affine reconstruction weights of `anchor` from `neighbors` (`k × D`).
pub fn fit_weights(
    anchor_index: usize,
    anchor: &[f64],
    neighbors: &DenseMatrix,
    eps: f64,
) -> Result<LleWeights> {
    fit_affine(anchor_index, anchor, neighbors, eps).map(|f| f.to_weights())
}

/// Sparse length-`n` vector holding the weights at the neighbors' indices.
#[derive(Debug, Clone, PartialEq)]
pub struct TopologyVector {
    pub length: usize,
    pub anchor_index: usize,
    pub support: Vec<usize>,
    pub values: Vec<f64>,
}

impl TopologyVector {
    pub fn to_dense(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.length];
        for (&j, &v) in self.support.iter().zip(&self.values) {
            out[j] = v;
        }
        out
    }

    pub fn sum(&self) -> f64 {
        self.values.iter().sum()
    }

    fn sorted_entries(&self) -> Vec<(usize, f64)> {
        let mut e: Vec<(usize, f64)> = self
            .support
            .iter()
            .copied()
            .zip(self.values.iter().copied())
            .collect();
        e.sort_unstable_by_key(|p| p.0);
        e
    }
}

/// `anchor: (j:w) (j:w) …` in neighbor order.
impl fmt::Display for TopologyVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:", self.anchor_index)?;
        for (j, w) in self.support.iter().zip(&self.values) {
            write!(f, " ({j}:{w})")?;
        }
        Ok(())
    }
}

/// Scatters fitted weights into a topology vector of length `n`.
pub fn topology_vector(
    weights: &LleWeights,
    neighbor_indices: &[usize],
    n: usize,
) -> Result<TopologyVector> {
    if weights.weights.len() != neighbor_indices.len() {
        return Err(Error::InvalidInput(format!(
            "{} weights for {} neighbor indices",
            weights.weights.len(),
            neighbor_indices.len()
        )));
    }
    for (pos, &j) in neighbor_indices.iter().enumerate() {
        if j >= n {
            return Err(Error::InvalidInput(format!(
                "neighbor index {j} out of range for batch size {n}"
            )));
        }
        if j == weights.anchor_index {
            return Err(Error::InvalidInput(format!(
                "anchor {j} listed as its own neighbor"
            )));
        }
        if neighbor_indices[..pos].contains(&j) {
            return Err(Error::InvalidInput(format!("duplicate neighbor index {j}")));
        }
    }
    Ok(TopologyVector {
        length: n,
        anchor_index: weights.anchor_index,
        support: neighbor_indices.to_vec(),
        values: weights.weights.clone(),
    })
}

/// Merges the two supports in index order, calling `f(index, ta, tp)`.
fn for_each_union(ta: &TopologyVector, tp: &TopologyVector, mut f: impl FnMut(usize, f64, f64)) {
    let a = ta.sorted_entries();
    let p = tp.sorted_entries();
    let (mut i, mut j) = (0, 0);
    while i < a.len() || j < p.len() {
        match (a.get(i), p.get(j)) {
            (Some(&(ia, va)), Some(&(ip, vp))) if ia == ip => {
                f(ia, va, vp);
                i += 1;
                j += 1;
            }
            (Some(&(ia, va)), Some(&(ip, _))) if ia < ip => {
                f(ia, va, 0.0);
                i += 1;
            }
            (Some(&(ia, va)), None) => {
                f(ia, va, 0.0);
                i += 1;
            }
            (_, Some(&(ip, vp))) => {
                f(ip, 0.0, vp);
                j += 1;
            }
            (None, None) => unreachable!(),
        }
    }
}

fn check_lengths(ta: &TopologyVector, tp: &TopologyVector) -> Result<()> {
    if ta.length != tp.length {
        return Err(Error::InvalidInput(format!(
            "topology vectors have lengths {} and {}",
            ta.length, tp.length
        )));
    }
    Ok(())
}

/// `¼·‖ta − tp‖₁`, evaluated over the union of supports.
///
/// Weights are not sign-constrained, so the result can exceed 1.
pub fn topology_distance(ta: &TopologyVector, tp: &TopologyVector) -> Result<f64> {
    check_lengths(ta, tp)?;
    let mut l1 = 0.0;
    for_each_union(ta, tp, |_, a, p| l1 += (a - p).abs());
    Ok(0.25 * l1)
}

/// Subgradient of [`topology_distance`] with respect to `ta.values` and
/// `tp.values` (aligned with each support). `sign(0)` is taken as 0.
pub fn topology_distance_grad(
    ta: &TopologyVector,
    tp: &TopologyVector,
) -> Result<(Vec<f64>, Vec<f64>)> {
    check_lengths(ta, tp)?;
    let mut signs = Vec::with_capacity(ta.support.len() + tp.support.len());
    for_each_union(ta, tp, |j, a, p| {
        let d = a - p;
        let s = if d > 0.0 {
            0.25
        } else if d < 0.0 {
            -0.25
        } else {
            0.0
        };
        signs.push((j, s));
    });
    let lookup = |j: usize| {
        signs
            .binary_search_by_key(&j, |e| e.0)
            .map(|pos| signs[pos].1)
            .unwrap_or(0.0)
    };
    let ga = ta.support.iter().map(|&j| lookup(j)).collect();
    let gp = tp.support.iter().map(|&j| -lookup(j)).collect();
    Ok((ga, gp))
}

/// kNN graph, fits and topology vectors of one descriptor set.
#[derive(Debug, Clone)]
pub struct SetTopology {
    pub neighbors: Vec<NeighborSet>,
    pub fits: Vec<AffineFit>,
    pub vectors: Vec<TopologyVector>,
}

impl SetTopology {
    /// Builds the topology of the unit rows of `x` with `k` neighbors each.
    pub fn compute(x: &DenseMatrix, k: usize, eps: f64) -> Result<Self> {
        let neighbors = top_k_within(x, k)?;
        Self::with_neighbors(x, neighbors, eps)
    }

    /// Fits weights for a fixed neighbor graph.
    pub fn with_neighbors(x: &DenseMatrix, neighbors: Vec<NeighborSet>, eps: f64) -> Result<Self> {
        let n = x.rows();
        let solved: Vec<(AffineFit, TopologyVector)> = neighbors
            .par_iter()
            .map(|nb| {
                let local = x.select_rows(&nb.neighbor_indices);
                let fit = fit_affine(nb.anchor_index, x.row(nb.anchor_index), &local, eps)?;
                let tv = topology_vector(&fit.to_weights(), &nb.neighbor_indices, n)?;
                Ok((fit, tv))
            })
            .collect::<Result<_>>()?;
        let (fits, vectors) = solved.into_iter().unzip();
        Ok(Self {
            neighbors,
            fits,
            vectors,
        })
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }
}
