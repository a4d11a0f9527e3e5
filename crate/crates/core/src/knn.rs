//! Batch distances between unit descriptors and exact top-k selection.

use std::cmp::Ordering;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linalg::{dot, l2_norm, DenseMatrix};

/// Tolerance on `|‖x‖ − 1|` accepted for descriptor rows.
pub const UNIT_TOL: f64 = 1e-6;

/// Dense `rows × cols` matrix of descriptor-space distances.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceMatrix {
    rows: usize,
    cols: usize,
    entries: Vec<f64>,
}

impl DistanceMatrix {
    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[i * self.cols + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.entries[i * self.cols..(i + 1) * self.cols]
    }

    pub fn entries(&self) -> &[f64] {
        &self.entries
    }

    /// Wraps precomputed distances; entries must be finite and non-negative.
    pub fn from_entries(rows: usize, cols: usize, entries: Vec<f64>) -> Result<Self> {
        if entries.len() != rows * cols {
            return Err(Error::InvalidInput(format!(
                "{} entries for a {rows}x{cols} distance matrix",
                entries.len()
            )));
        }
        if entries.iter().any(|d| !(d.is_finite() && *d >= 0.0)) {
            return Err(Error::InvalidInput(
                "distances must be finite and non-negative".into(),
            ));
        }
        Ok(Self {
            rows,
            cols,
            entries,
        })
    }
}

/// `d(x, y) = sqrt(max(0, 2 − 2·xᵀy))` for unit vectors.
#[inline]
pub fn unit_distance(x: &[f64], y: &[f64]) -> f64 {
    (2.0 - 2.0 * dot(x, y)).max(0.0).sqrt()
}

/// Rejects rows whose norm is further than [`UNIT_TOL`] from 1.
pub fn check_unit_rows(x: &DenseMatrix) -> Result<()> {
    for (row, r) in x.row_iter().enumerate() {
        let norm = l2_norm(r);
        if !((norm - 1.0).abs() <= UNIT_TOL) {
            return Err(Error::NonUnitRow { row, norm });
        }
    }
    Ok(())
}

/// Distances between every row of `x` and every row of `y`.
pub fn pairwise_distances(x: &DenseMatrix, y: &DenseMatrix) -> Result<DistanceMatrix> {
    if x.cols() != y.cols() {
        return Err(Error::InvalidInput(format!(
            "descriptor dimensions differ: {} vs {}",
            x.cols(),
            y.cols()
        )));
    }
    check_unit_rows(x)?;
    check_unit_rows(y)?;
    let cols = y.rows();
    let entries: Vec<f64> = (0..x.rows())
        .into_par_iter()
        .flat_map_iter(|i| {
            let xi = x.row(i);
            (0..cols).map(move |j| unit_distance(xi, y.row(j)))
        })
        .collect();
    Ok(DistanceMatrix {
        rows: x.rows(),
        cols,
        entries,
    })
}

/// Within-set distances with the diagonal pinned to exactly zero.
pub fn within_distances(x: &DenseMatrix) -> Result<DistanceMatrix> {
    let mut d = pairwise_distances(x, x)?;
    for i in 0..d.rows {
        d.entries[i * d.cols + i] = 0.0;
    }
    Ok(d)
}

/// The `k` nearest other members of a set for one anchor.
#[derive(Debug, Clone, PartialEq)]
pub struct NeighborSet {
    pub anchor_index: usize,
    pub neighbor_indices: Vec<usize>,
    pub neighbor_distances: Vec<f64>,
}

impl NeighborSet {
    pub fn k(&self) -> usize {
        self.neighbor_indices.len()
    }
}

fn by_distance_then_index(a: &(f64, usize), b: &(f64, usize)) -> Ordering {
    a.0.total_cmp(&b.0).then(a.1.cmp(&b.1))
}

/// Selects the `k` nearest neighbors of row `anchor` from a distance row,
/// excluding the anchor itself. Ties go to the lower index.
pub fn select_k_nearest(anchor: usize, distances: &[f64], k: usize) -> NeighborSet {
    let mut cand: Vec<(f64, usize)> = distances
        .iter()
        .copied()
        .enumerate()
        .filter(|&(j, _)| j != anchor)
        .map(|(j, d)| (d, j))
        .collect();
    if k < cand.len() {
        cand.select_nth_unstable_by(k - 1, by_distance_then_index);
        cand.truncate(k);
    }
    cand.sort_unstable_by(by_distance_then_index);
    NeighborSet {
        anchor_index: anchor,
        neighbor_indices: cand.iter().map(|c| c.1).collect(),
        neighbor_distances: cand.iter().map(|c| c.0).collect(),
    }
}

/// For every row of `x`, its `k` nearest other rows.
pub fn top_k_within(x: &DenseMatrix, k: usize) -> Result<Vec<NeighborSet>> {
    let n = x.rows();
    if k == 0 || k >= n {
        return Err(Error::InvalidArgument(format!(
            "k must satisfy 1 <= k <= n-1 (k={k}, n={n})"
        )));
    }
    let d = within_distances(x)?;
    Ok((0..n)
        .into_par_iter()
        .map(|i| select_k_nearest(i, d.row(i), k))
        .collect())
}
