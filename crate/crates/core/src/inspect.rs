//! Per-index view of the topology of one batch: neighbor lists, weights,
//! Euclidean and topology distance of every matching pair.

use std::fmt::{self, Write as _};

use crate::error::{Error, Result};
use crate::knn::unit_distance;
use crate::linalg::DenseMatrix;
use crate::topology::{topology_distance, SetTopology, TopologyVector};

#[derive(Debug, Clone, PartialEq)]
pub struct InspectRow {
    pub index: usize,
    pub scene_id: u64,
    pub topology_a: TopologyVector,
    pub topology_p: TopologyVector,
    pub d_euclid: f64,
    pub d_topo: f64,
}

impl InspectRow {
    /// `d_T` beyond 1 is only reachable with negative weights.
    pub fn exceeds_one(&self) -> bool {
        self.d_topo > 1.0
    }
}

impl fmt::Display for InspectRow {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "index {} scene {} d_E={} d_T={}",
            self.index, self.scene_id, self.d_euclid, self.d_topo
        )?;
        if self.exceeds_one() {
            f.write_str(" [d_T > 1]")?;
        }
        write!(f, "\n  A {}\n  P {}", self.topology_a, self.topology_p)
    }
}

/// Inspects matched unit descriptors `a`, `p` with `k` neighbors.
pub fn inspect_batch(
    a: &DenseMatrix,
    p: &DenseMatrix,
    scene_ids: &[u64],
    k: usize,
    eps: f64,
) -> Result<Vec<InspectRow>> {
    if a.rows() != p.rows() || scene_ids.len() != a.rows() {
        return Err(Error::InvalidBatch(
            "inspection inputs disagree on batch size".into(),
        ));
    }
    let ta = SetTopology::compute(a, k, eps)?;
    let tp = SetTopology::compute(p, k, eps)?;
    ta.vectors
        .into_iter()
        .zip(tp.vectors)
        .enumerate()
        .map(|(i, (va, vp))| {
            Ok(InspectRow {
                index: i,
                scene_id: scene_ids[i],
                d_euclid: unit_distance(a.row(i), p.row(i)),
                d_topo: topology_distance(&va, &vp)?,
                topology_a: va,
                topology_p: vp,
            })
        })
        .collect()
}

pub const INSPECT_CSV_HEADER: &str =
    "index,scene_id,d_euclid,d_topo,exceeds_one,neighbors_a,weights_a,neighbors_p,weights_p";

fn joined<T: fmt::Display>(v: &[T]) -> String {
    let mut s = String::new();
    for (i, x) in v.iter().enumerate() {
        if i > 0 {
            s.push(';');
        }
        let _ = write!(s, "{x}");
    }
    s
}

/// CSV document, one row per index; lists are `;`-separated.
pub fn inspect_csv(rows: &[InspectRow]) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "{INSPECT_CSV_HEADER}");
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{}",
            r.index,
            r.scene_id,
            r.d_euclid,
            r.d_topo,
            r.exceeds_one(),
            joined(&r.topology_a.support),
            joined(&r.topology_a.values),
            joined(&r.topology_p.support),
            joined(&r.topology_p.values),
        );
    }
    s
}
