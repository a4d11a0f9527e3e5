//! Wengert list of tensor-valued primitives.
//!
//! Every primitive records its output value and whatever it needs for the
//! reverse sweep. Replay runs from the output node back to the leaves in
//! strict reverse recording order, so gradients are bitwise reproducible.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::knn::{DistanceMatrix, NeighborSet};
use crate::loss::hardest_negative_entry;
use crate::topology::{
    topology_distance, topology_distance_grad, topology_vector, AffineFit, LleWeights, SetTopology,
};

use super::{Real, Tensor};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Derivative rules that can be deliberately corrupted to prove that the
/// gradient check catches a wrong rule.
#[doc(hidden)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DerivativeRule {
    MatMul,
    Tanh,
    Normalize,
    Distance,
    AffineSolve,
    TopologyL1,
}

impl std::str::FromStr for DerivativeRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "matmul" => DerivativeRule::MatMul,
            "tanh" => DerivativeRule::Tanh,
            "normalize" => DerivativeRule::Normalize,
            "distance" => DerivativeRule::Distance,
            "affine-solve" => DerivativeRule::AffineSolve,
            "topology-l1" => DerivativeRule::TopologyL1,
            other => {
                return Err(Error::InvalidArgument(format!(
                    "unknown derivative rule '{other}'"
                )))
            }
        })
    }
}

enum Op<T> {
    Leaf,
    /// `x · wᵀ` with `x: n×in`, `w: out×in`.
    MatMulT(Var, Var),
    /// Adds a `1×c` row to every row.
    AddRow(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    AddScalar(Var),
    Tanh(Var),
    Relu(Var),
    Mean(Var),
    NormalizeRows {
        input: Var,
        norms: Vec<T>,
    },
    UnitDistances(Var, Var),
    Diagonal(Var),
    HardestNegatives {
        input: Var,
        picks: Vec<(usize, usize)>,
    },
    AffineWeights {
        input: Var,
        neighbors: Vec<Vec<usize>>,
        fits: Vec<AffineFit>,
    },
    TopologyDistances {
        wa: Var,
        wp: Var,
        /// Per-row subgradients on the two weight rows.
        local: Vec<(Vec<f64>, Vec<f64>)>,
    },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
}

/// Recording of one forward pass.
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
    fault: Option<DerivativeRule>,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Adjoints of every node reached by a reverse sweep.
#[derive(Debug, Clone)]
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
    shapes: Vec<(usize, usize)>,
}

impl<T: Real> Gradients<T> {
    /// Adjoint of `var`; zeros when the output does not depend on it.
    pub fn wrt(&self, var: Var) -> Tensor<T> {
        match self.grads.get(var.0) {
            Some(Some(g)) => g.clone(),
            _ => {
                let (r, c) = self.shapes.get(var.0).copied().unwrap_or((0, 0));
                Tensor::zeros(r, c)
            }
        }
    }

    pub fn get(&self, var: Var) -> Option<&Tensor<T>> {
        self.grads.get(var.0).and_then(Option::as_ref)
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }
}

fn accumulate<T: Real>(grads: &mut [Option<Tensor<T>>], var: Var, contrib: Tensor<T>) {
    match &mut grads[var.0] {
        Some(g) => g.add_assign(&contrib),
        slot @ None => *slot = Some(contrib),
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            fault: None,
        }
    }

    /// Makes the reverse rule of `rule` return a scaled (wrong) adjoint.
    #[doc(hidden)]
    pub fn corrupt(&mut self, rule: DerivativeRule) {
        self.fault = Some(rule);
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Drops every recorded node; existing [`Var`]s become invalid.
    pub fn clear(&mut self) {
        self.nodes.clear();
    }

    pub fn value(&self, var: Var) -> &Tensor<T> {
        &self.nodes[var.0].value
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    /// Parameter or input.
    pub fn leaf(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf)
    }

    /// Value that is never differentiated through.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value)
    }

    pub fn matmul_t(&mut self, x: Var, w: Var) -> Var {
        let (xv, wv) = (self.value(x), self.value(w));
        assert_eq!(xv.cols(), wv.cols(), "matmul_t inner dimensions");
        let (n, out) = (xv.rows(), wv.rows());
        let mut y = Tensor::zeros(n, out);
        for r in 0..n {
            let xr = xv.row(r);
            for o in 0..out {
                let mut acc = T::zero();
                for (&a, &b) in xr.iter().zip(wv.row(o)) {
                    acc += a * b;
                }
                y.set(r, o, acc);
            }
        }
        self.push(y, Op::MatMulT(x, w))
    }

    pub fn add_row(&mut self, x: Var, bias: Var) -> Var {
        let (xv, bv) = (self.value(x), self.value(bias));
        assert_eq!((1, xv.cols()), bv.shape(), "bias shape");
        let mut y = xv.clone();
        for r in 0..y.rows() {
            for (v, &b) in y.row_mut(r).iter_mut().zip(bv.row(0)) {
                *v += b;
            }
        }
        self.push(y, Op::AddRow(x, bias))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let y = self.value(a).zip_map(self.value(b), |x, y| x + y);
        self.push(y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let y = self.value(a).zip_map(self.value(b), |x, y| x - y);
        self.push(y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let y = self.value(a).zip_map(self.value(b), |x, y| x * y);
        self.push(y, Op::Mul(a, b))
    }

    pub fn scale(&mut self, x: Var, c: T) -> Var {
        let y = self.value(x).map(|v| v * c);
        self.push(y, Op::Scale(x, c))
    }

    pub fn add_scalar(&mut self, x: Var, c: T) -> Var {
        let y = self.value(x).map(|v| v + c);
        self.push(y, Op::AddScalar(x))
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let y = self.value(x).map(|v| v.tanh());
        self.push(y, Op::Tanh(x))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let y = self.value(x).map(|v| v.max(T::zero()));
        self.push(y, Op::Relu(x))
    }

    /// Mean over all entries, reduced in storage order.
    pub fn mean(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let total: T = xv.data().iter().copied().sum();
        let y = Tensor::scalar(total / T::cast(xv.len() as f64));
        self.push(y, Op::Mean(x))
    }

    /// Scales every row to unit l2 norm; a zero row is an error.
    pub fn normalize_rows(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        let mut y = xv.clone();
        let mut norms = Vec::with_capacity(xv.rows());
        for r in 0..xv.rows() {
            let norm = xv.row(r).iter().map(|&v| v * v).sum::<T>().sqrt();
            if !(norm > T::zero() && norm.is_finite()) {
                return Err(Error::DegenerateDescriptor { row: r });
            }
            y.row_mut(r).iter_mut().for_each(|v| *v = *v / norm);
            norms.push(norm);
        }
        Ok(self.push(y, Op::NormalizeRows { input: x, norms }))
    }

    /// `sqrt(max(0, 2 − 2·aᵢᵀpⱼ))` for every row pair.
    pub fn unit_distances(&mut self, a: Var, p: Var) -> Var {
        let (av, pv) = (self.value(a), self.value(p));
        assert_eq!(av.cols(), pv.cols(), "descriptor dimensions");
        let two = T::cast(2.0);
        let (n, m) = (av.rows(), pv.rows());
        let mut d = Tensor::zeros(n, m);
        for i in 0..n {
            for j in 0..m {
                let mut dot = T::zero();
                for (&x, &y) in av.row(i).iter().zip(pv.row(j)) {
                    dot += x * y;
                }
                d.set(i, j, (two - two * dot).max(T::zero()).sqrt());
            }
        }
        self.push(d, Op::UnitDistances(a, p))
    }

    /// Diagonal of a square matrix as an `n × 1` column.
    pub fn diagonal(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        assert!(xv.rows() == xv.cols(), "diagonal of a non-square tensor");
        let y = Tensor::new(xv.rows(), 1, (0..xv.rows()).map(|i| xv.get(i, i)).collect());
        self.push(y, Op::Diagonal(x))
    }

    /// Hardest non-matching distance per index of a square anchor/positive
    /// distance matrix, as an `n × 1` column.
    pub fn hardest_negatives(&mut self, d: Var) -> Result<Var> {
        let dv = self.value(d);
        let dm = DistanceMatrix::from_entries(
            dv.rows(),
            dv.cols(),
            dv.data().iter().map(|v| v.widen()).collect(),
        )?;
        let mut picks = Vec::with_capacity(dv.rows());
        let mut y = Tensor::zeros(dv.rows(), 1);
        for i in 0..dv.rows() {
            let h = hardest_negative_entry(i, &dm)?;
            y.set(i, 0, dv.get(h.row, h.col));
            picks.push((h.row, h.col));
        }
        Ok(self.push(y, Op::HardestNegatives { input: d, picks }))
    }

    /// Affine reconstruction weights of each row of `x` from the given
    /// (frozen) neighbor sets, as an `n × k` tensor. Differentiable.
    pub fn affine_weights(&mut self, x: Var, neighbors: &[NeighborSet], eps: f64) -> Result<Var> {
        let xd = self.value(x).to_dense()?;
        let k = neighbors.first().map_or(0, NeighborSet::k);
        if neighbors.len() != xd.rows() || neighbors.iter().any(|s| s.k() != k) {
            return Err(Error::InvalidInput(
                "one neighbor set of equal size per row is required".into(),
            ));
        }
        let topo = SetTopology::with_neighbors(&xd, neighbors.to_vec(), eps)?;
        let mut w = Tensor::zeros(xd.rows(), k);
        for (i, fit) in topo.fits.iter().enumerate() {
            for (s, &v) in fit.weights().iter().enumerate() {
                w.set(i, s, T::cast(v));
            }
        }
        let neighbor_idx = topo
            .neighbors
            .into_iter()
            .map(|s| s.neighbor_indices)
            .collect();
        Ok(self.push(
            w,
            Op::AffineWeights {
                input: x,
                neighbors: neighbor_idx,
                fits: topo.fits,
            },
        ))
    }

    /// `¼‖Tᵃᵢ − Tᵖᵢ‖₁` per row, where the topology vectors scatter the weight
    /// rows of `wa` / `wp` at the neighbor indices of `na` / `np`.
    pub fn topology_distances(
        &mut self,
        wa: Var,
        wp: Var,
        na: &[NeighborSet],
        np: &[NeighborSet],
    ) -> Result<Var> {
        let (av, pv) = (self.value(wa), self.value(wp));
        let n = av.rows();
        if pv.rows() != n || na.len() != n || np.len() != n {
            return Err(Error::InvalidInput(
                "topology inputs disagree on batch size".into(),
            ));
        }
        let as_weights = |t: &Tensor<T>, i: usize, anchor: usize| LleWeights {
            anchor_index: anchor,
            weights: t.row(i).iter().map(|v| v.widen()).collect(),
            residual: 0.0,
        };
        let mut y = Tensor::zeros(n, 1);
        let mut local = Vec::with_capacity(n);
        for i in 0..n {
            let ta = topology_vector(&as_weights(av, i, i), &na[i].neighbor_indices, n)?;
            let tp = topology_vector(&as_weights(pv, i, i), &np[i].neighbor_indices, n)?;
            y.set(i, 0, T::cast(topology_distance(&ta, &tp)?));
            local.push(topology_distance_grad(&ta, &tp)?);
        }
        Ok(self.push(y, Op::TopologyDistances { wa, wp, local }))
    }

    /// Reverse sweep from the last recorded node with the given adjoint.
    /// An empty tape yields empty gradients.
    pub fn backward(&self, loss_adjoint: T) -> Gradients<T> {
        match self.nodes.len() {
            0 => Gradients {
                grads: Vec::new(),
                shapes: Vec::new(),
            },
            len => self.backward_from(Var(len - 1), loss_adjoint),
        }
    }

    /// Reverse sweep seeding every entry of `output` with `adjoint`.
    pub fn backward_from(&self, output: Var, adjoint: T) -> Gradients<T> {
        let shapes: Vec<_> = self.nodes.iter().map(|n| n.value.shape()).collect();
        let mut grads: Vec<Option<Tensor<T>>> = vec![None; self.nodes.len()];
        let (r, c) = shapes[output.0];
        grads[output.0] = Some(Tensor::filled(r, c, adjoint));

        for idx in (0..=output.0).rev() {
            let Some(g) = grads[idx].take() else {
                continue;
            };
            self.reverse_rule(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Gradients { grads, shapes }
    }

    fn fault_factor(&self, rule: DerivativeRule) -> T {
        if self.fault == Some(rule) {
            T::cast(1.5)
        } else {
            T::one()
        }
    }

    fn reverse_rule(&self, idx: usize, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) {
        let node = &self.nodes[idx];
        let y = &node.value;
        match &node.op {
            Op::Leaf => {}
            &Op::MatMulT(x, w) => {
                let f = self.fault_factor(DerivativeRule::MatMul);
                let (xv, wv) = (self.value(x), self.value(w));
                let (n, inp, out) = (xv.rows(), xv.cols(), wv.rows());
                let mut gx = Tensor::zeros(n, inp);
                let mut gw = Tensor::zeros(out, inp);
                for r in 0..n {
                    for o in 0..out {
                        let go = g.get(r, o) * f;
                        if go == T::zero() {
                            continue;
                        }
                        for (acc, &wj) in gx.row_mut(r).iter_mut().zip(wv.row(o)) {
                            *acc += go * wj;
                        }
                        for (acc, &xj) in gw.row_mut(o).iter_mut().zip(xv.row(r)) {
                            *acc += go * xj;
                        }
                    }
                }
                accumulate(grads, x, gx);
                accumulate(grads, w, gw);
            }
            &Op::AddRow(x, b) => {
                let mut gb = Tensor::zeros(1, g.cols());
                for r in 0..g.rows() {
                    for (acc, &v) in gb.row_mut(0).iter_mut().zip(g.row(r)) {
                        *acc += v;
                    }
                }
                accumulate(grads, x, g.clone());
                accumulate(grads, b, gb);
            }
            &Op::Add(a, b) => {
                accumulate(grads, a, g.clone());
                accumulate(grads, b, g.clone());
            }
            &Op::Sub(a, b) => {
                accumulate(grads, a, g.clone());
                accumulate(grads, b, g.map(|v| -v));
            }
            &Op::Mul(a, b) => {
                let (av, bv) = (self.value(a), self.value(b));
                accumulate(grads, a, g.zip_map(bv, |gi, bi| gi * bi));
                accumulate(grads, b, g.zip_map(av, |gi, ai| gi * ai));
            }
            &Op::Scale(x, c) => accumulate(grads, x, g.map(|v| v * c)),
            &Op::AddScalar(x) => accumulate(grads, x, g.clone()),
            &Op::Tanh(x) => {
                let f = self.fault_factor(DerivativeRule::Tanh);
                accumulate(
                    grads,
                    x,
                    g.zip_map(y, |gi, yi| gi * (T::one() - yi * yi) * f),
                );
            }
            &Op::Relu(x) => {
                accumulate(
                    grads,
                    x,
                    g.zip_map(y, |gi, yi| if yi > T::zero() { gi } else { T::zero() }),
                );
            }
            &Op::Mean(x) => {
                let (r, c) = self.value(x).shape();
                let share = g.item() / T::cast((r * c) as f64);
                accumulate(grads, x, Tensor::filled(r, c, share));
            }
            Op::NormalizeRows { input, norms } => {
                let f = self.fault_factor(DerivativeRule::Normalize);
                let mut gx = Tensor::zeros(y.rows(), y.cols());
                for (r, &norm) in norms.iter().enumerate() {
                    let (yr, gr) = (y.row(r), g.row(r));
                    let along: T = yr.iter().zip(gr).map(|(&a, &b)| a * b).sum();
                    let inv = f / norm;
                    for ((o, &yi), &gi) in gx.row_mut(r).iter_mut().zip(yr).zip(gr) {
                        *o = (gi - along * yi) * inv;
                    }
                }
                accumulate(grads, *input, gx);
            }
            &Op::UnitDistances(a, p) => {
                let f = self.fault_factor(DerivativeRule::Distance);
                let (av, pv) = (self.value(a), self.value(p));
                let mut ga = Tensor::zeros(av.rows(), av.cols());
                let mut gp = Tensor::zeros(pv.rows(), pv.cols());
                for i in 0..av.rows() {
                    for j in 0..pv.rows() {
                        let (gij, dij) = (g.get(i, j), y.get(i, j));
                        // Zero where the clamp is active.
                        if gij == T::zero() || dij <= T::zero() {
                            continue;
                        }
                        let s = -gij / dij * f;
                        for (o, &pc) in ga.row_mut(i).iter_mut().zip(pv.row(j)) {
                            *o += s * pc;
                        }
                        for (o, &ac) in gp.row_mut(j).iter_mut().zip(av.row(i)) {
                            *o += s * ac;
                        }
                    }
                }
                accumulate(grads, a, ga);
                accumulate(grads, p, gp);
            }
            &Op::Diagonal(x) => {
                let n = g.rows();
                let mut gx = Tensor::zeros(n, n);
                for i in 0..n {
                    gx.set(i, i, g.get(i, 0));
                }
                accumulate(grads, x, gx);
            }
            Op::HardestNegatives { input, picks } => {
                let (r, c) = self.value(*input).shape();
                let mut gx = Tensor::zeros(r, c);
                for (i, &(row, col)) in picks.iter().enumerate() {
                    let cur = gx.get(row, col);
                    gx.set(row, col, cur + g.get(i, 0));
                }
                accumulate(grads, *input, gx);
            }
            Op::AffineWeights {
                input,
                neighbors,
                fits,
            } => {
                let f = self.fault_factor(DerivativeRule::AffineSolve).widen();
                let pulled: Vec<(Vec<f64>, crate::linalg::DenseMatrix)> = fits
                    .par_iter()
                    .enumerate()
                    .map(|(i, fit)| {
                        let gw: Vec<f64> = g.row(i).iter().map(|v| v.widen() * f).collect();
                        fit.backward(&gw)
                    })
                    .collect();
                let (r, c) = self.value(*input).shape();
                let mut gx = Tensor::zeros(r, c);
                for (i, (g_anchor, g_nb)) in pulled.iter().enumerate() {
                    for (o, &v) in gx.row_mut(i).iter_mut().zip(g_anchor) {
                        *o += T::cast(v);
                    }
                    for (s, &j) in neighbors[i].iter().enumerate() {
                        for (o, &v) in gx.row_mut(j).iter_mut().zip(g_nb.row(s)) {
                            *o += T::cast(v);
                        }
                    }
                }
                accumulate(grads, *input, gx);
            }
            Op::TopologyDistances { wa, wp, local } => {
                let f = self.fault_factor(DerivativeRule::TopologyL1).widen();
                let (ra, ca) = self.value(*wa).shape();
                let (rp, cp) = self.value(*wp).shape();
                let mut ga = Tensor::zeros(ra, ca);
                let mut gp = Tensor::zeros(rp, cp);
                for (i, (la, lp)) in local.iter().enumerate() {
                    let gi = g.get(i, 0).widen() * f;
                    for (s, &v) in la.iter().enumerate() {
                        ga.set(i, s, T::cast(gi * v));
                    }
                    for (s, &v) in lp.iter().enumerate() {
                        gp.set(i, s, T::cast(gi * v));
                    }
                }
                accumulate(grads, *wa, ga);
                accumulate(grads, *wp, gp);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn finite_diff(f: impl Fn(f64) -> f64, x: f64) -> f64 {
        let h = 1e-6;
        (f(x + h) - f(x - h)) / (2.0 * h)
    }

    #[test]
    fn square_of_parameter() {
        let mut tape = Tape::<f64>::new();
        let p = tape.leaf(Tensor::scalar(3.0));
        tape.mul(p, p);
        let g = tape.backward(1.0);
        assert_eq!(g.wrt(p).item(), 6.0);
    }

    #[test]
    fn empty_tape_is_a_no_op() {
        let tape = Tape::<f64>::new();
        let g = tape.backward(1.0);
        assert!(g.is_empty());
    }

    #[test]
    fn unreached_leaf_gets_zeros() {
        let mut tape = Tape::<f64>::new();
        let a = tape.leaf(Tensor::new(1, 2, vec![1.0, 2.0]));
        let b = tape.leaf(Tensor::scalar(4.0));
        tape.tanh(b);
        let g = tape.backward(1.0);
        assert_eq!(g.wrt(a), Tensor::zeros(1, 2));
        assert!(g.get(a).is_none());
    }

    #[test]
    fn scalar_chain_matches_finite_difference() {
        // f(x) = mean(relu(tanh(2x) * x + 0.1) - x)
        let f = |x: f64| ((2.0 * x).tanh() * x + 0.1).max(0.0) - x;
        for x0 in [-0.7, 0.2, 1.3] {
            let mut tape = Tape::<f64>::new();
            let x = tape.leaf(Tensor::scalar(x0));
            let s = tape.scale(x, 2.0);
            let t = tape.tanh(s);
            let m = tape.mul(t, x);
            let a = tape.add_scalar(m, 0.1);
            let r = tape.relu(a);
            let d = tape.sub(r, x);
            tape.mean(d);
            let g = tape.backward(1.0).wrt(x).item();
            assert!((g - finite_diff(f, x0)).abs() < 1e-8);
        }
    }

    #[test]
    fn matmul_and_bias() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::new(2, 3, vec![1.0, 2.0, 3.0, -1.0, 0.5, 0.0]));
        let w = tape.leaf(Tensor::new(2, 3, vec![0.1, 0.2, 0.3, -0.4, 0.5, 0.6]));
        let b = tape.leaf(Tensor::new(1, 2, vec![0.01, -0.02]));
        let y = tape.matmul_t(x, w);
        let z = tape.add_row(y, b);
        assert!((tape.value(z).get(0, 0) - (0.1 + 0.4 + 0.9 + 0.01)).abs() < 1e-15);
        tape.mean(z);
        let g = tape.backward(1.0);
        // d mean / d b = rows / (rows*cols) per column
        assert_eq!(g.wrt(b).data(), &[0.5, 0.5]);
        // d mean / d w[o, i] = Σ_r x[r, i] / 4
        assert!((g.wrt(w).get(0, 0) - 0.0).abs() < 1e-15);
        assert!((g.wrt(w).get(1, 1) - 2.5 / 4.0).abs() < 1e-15);
    }

    #[test]
    fn normalization_gradient_is_orthogonal_to_output() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::new(2, 3, vec![0.3, -1.2, 2.0, 0.5, 0.5, -0.1]));
        let y = tape.normalize_rows(x).unwrap();
        let yv = tape.value(y).clone();
        // Seed with the output itself: the pullback must vanish.
        let w = tape.constant(yv.clone());
        let prod = tape.mul(y, w);
        tape.mean(prod);
        let g = tape.backward(1.0).wrt(x);
        for r in 0..2 {
            let norm: f64 = g.row(r).iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!(norm <= 1e-8);
        }
    }

    #[test]
    fn zero_row_is_rejected() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::new(2, 2, vec![1.0, 0.0, 0.0, 0.0]));
        assert!(matches!(
            tape.normalize_rows(x),
            Err(Error::DegenerateDescriptor { row: 1 })
        ));
    }

    #[test]
    fn corrupted_rule_changes_gradient() {
        let run = |fault: Option<DerivativeRule>| {
            let mut tape = Tape::<f64>::new();
            if let Some(r) = fault {
                tape.corrupt(r);
            }
            let x = tape.leaf(Tensor::scalar(0.4));
            let t = tape.tanh(x);
            tape.mean(t);
            tape.backward(1.0).wrt(x).item()
        };
        assert_ne!(run(None), run(Some(DerivativeRule::Tanh)));
        assert_eq!(run(None), run(Some(DerivativeRule::Distance)));
    }
}
