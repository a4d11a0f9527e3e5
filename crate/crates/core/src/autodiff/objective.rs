//! The batch objective recorded on a tape, mirroring [`crate::loss::batch_loss`]
//! operation for operation so both paths agree on the value.

use crate::error::{Error, Result};
use crate::knn::{top_k_within, NeighborSet};
use crate::loss::{summarize, LossConfig, LossReport, TopologyMode};
use crate::topology::SetTopology;

use super::{Real, Tape, Tensor, Var};

/// Scalar loss node plus the diagnostics of the same evaluation.
#[derive(Debug, Clone)]
pub struct RecordedLoss {
    pub loss: Var,
    pub report: LossReport,
}

fn column<T: Real>(tape: &Tape<T>, v: Var) -> Vec<f64> {
    tape.value(v).data().iter().map(|x| x.widen()).collect()
}

fn neighbor_sets<T: Real>(tape: &Tape<T>, x: Var, k: usize) -> Result<Vec<NeighborSet>> {
    top_k_within(&tape.value(x).to_dense()?, k)
}

/// Weights of `x` over `neighbors`: differentiable, or constants when the
/// topology term is detached.
fn weights<T: Real>(
    tape: &mut Tape<T>,
    x: Var,
    neighbors: &[NeighborSet],
    cfg: &LossConfig,
) -> Result<Var> {
    match cfg.topology {
        TopologyMode::ThroughWeights => tape.affine_weights(x, neighbors, cfg.lle_eps),
        TopologyMode::Detached => {
            let xd = tape.value(x).to_dense()?;
            let topo = SetTopology::with_neighbors(&xd, neighbors.to_vec(), cfg.lle_eps)?;
            let k = neighbors.first().map_or(0, NeighborSet::k);
            let data = topo
                .fits
                .iter()
                .flat_map(|f| f.weights().iter().map(|&w| T::cast(w)))
                .collect();
            Ok(tape.constant(Tensor::new(neighbors.len(), k, data)))
        }
        TopologyMode::Off => unreachable!("weights requested with topology off"),
    }
}

/// Records the objective for unit descriptor nodes `a`, `p` (both `n × D`).
pub fn record_batch_loss<T: Real>(
    tape: &mut Tape<T>,
    a: Var,
    p: Var,
    iteration: u64,
    cfg: &LossConfig,
) -> Result<RecordedLoss> {
    cfg.validate()?;
    let n = tape.value(a).rows();
    if tape.value(p).rows() != n {
        return Err(Error::InvalidBatch(format!(
            "{n} anchors but {} positives",
            tape.value(p).rows()
        )));
    }
    if n < 2 {
        return Err(Error::InvalidBatch(format!(
            "batch of {n} has no negatives"
        )));
    }
    let lambda = cfg.lambda_at(iteration);
    let d_ap = tape.unit_distances(a, p);
    let d_euclid = tape.diagonal(d_ap);
    let d_neg = tape.hardest_negatives(d_ap)?;

    let (pos, d_topo) = if cfg.topology == TopologyMode::Off {
        (d_euclid, None)
    } else {
        let na = neighbor_sets(tape, a, cfg.k)?;
        let np = neighbor_sets(tape, p, cfg.k)?;
        let wa = weights(tape, a, &na, cfg)?;
        let wp = weights(tape, p, &np, cfg)?;
        let d_topo = tape.topology_distances(wa, wp, &na, &np)?;
        let e = tape.scale(d_euclid, T::cast(lambda));
        let t = tape.scale(d_topo, T::cast(1.0 - lambda));
        (tape.add(e, t), Some(d_topo))
    };
    let shifted = tape.add_scalar(pos, T::cast(cfg.margin));
    let slack = tape.sub(shifted, d_neg);
    let hinge = tape.relu(slack);
    let loss = tape.mean(hinge);

    let topo_values = d_topo.map(|t| column(tape, t));
    let mut report = summarize(
        lambda,
        &column(tape, d_euclid),
        topo_values.as_deref(),
        &column(tape, d_neg),
        &column(tape, hinge),
    );
    report.loss = tape.value(loss).item().widen();
    Ok(RecordedLoss { loss, report })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{l2_norm, DenseMatrix};
    use crate::loss::{batch_loss, LambdaMode};
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

    fn cfg(topology: TopologyMode, lambda: f64) -> LossConfig {
        LossConfig {
            k: 3,
            topology,
            lambda_mode: LambdaMode::Fixed(lambda),
            ..LossConfig::default()
        }
    }

    fn recorded(
        a: &DenseMatrix,
        p: &DenseMatrix,
        c: &LossConfig,
    ) -> (Tape<f64>, Var, Var, RecordedLoss) {
        let mut tape = Tape::new();
        let av = tape.leaf(Tensor::from_dense(a));
        let pv = tape.leaf(Tensor::from_dense(p));
        let r = record_batch_loss(&mut tape, av, pv, 0, c).unwrap();
        (tape, av, pv, r)
    }

    #[test]
    fn matches_straight_evaluation() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a = unit_rows(&mut rng, 10, 4);
        let p = unit_rows(&mut rng, 10, 4);
        for mode in [
            TopologyMode::ThroughWeights,
            TopologyMode::Detached,
            TopologyMode::Off,
        ] {
            let c = cfg(mode, 0.5);
            let (_, _, _, r) = recorded(&a, &p, &c);
            assert_eq!(r.report, batch_loss(&a, &p, 0, &c).unwrap(), "{mode}");
        }
    }

    #[test]
    fn modes_agree_on_value() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let a = unit_rows(&mut rng, 8, 5);
        let p = unit_rows(&mut rng, 8, 5);
        let (_, _, _, through) = recorded(&a, &p, &cfg(TopologyMode::ThroughWeights, 0.3));
        let (_, _, _, detached) = recorded(&a, &p, &cfg(TopologyMode::Detached, 0.3));
        assert_eq!(through.report, detached.report);
    }

    #[test]
    fn unit_lambda_topology_gradient_is_zero() {
        // With λ = 1 the descriptor gradient equals the topology-off gradient.
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let a = unit_rows(&mut rng, 8, 4);
        let p = unit_rows(&mut rng, 8, 4);
        let (t1, a1, p1, _) = recorded(&a, &p, &cfg(TopologyMode::ThroughWeights, 1.0));
        let (t0, a0, p0, _) = recorded(&a, &p, &cfg(TopologyMode::Off, 1.0));
        let (g1, g0) = (t1.backward(1.0), t0.backward(1.0));
        assert_eq!(g1.wrt(a1), g0.wrt(a0));
        assert_eq!(g1.wrt(p1), g0.wrt(p0));
    }

    #[test]
    fn detached_topology_gradient_matches_euclidean_part() {
        // Constant weights leave (1 − λ)·d_T without gradient, so the
        // descriptor gradient is off-mode minus (1 − λ)·∂mean(d_E).
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let a = unit_rows(&mut rng, 6, 3);
        let p = unit_rows(&mut rng, 6, 3);
        let mut det = cfg(TopologyMode::Detached, 0.4);
        det.margin = 10.0;
        let (td, ad, _, rd) = recorded(&a, &p, &det);
        assert_eq!(rd.report.active_triplets, 6);
        let gd = td.backward(1.0).wrt(ad);
        let mut off = cfg(TopologyMode::Off, 1.0);
        off.margin = 10.0;
        let (to, ao, _, _) = recorded(&a, &p, &off);
        let mut tape = Tape::new();
        let av = tape.leaf(Tensor::from_dense(&a));
        let pv = tape.constant(Tensor::from_dense(&p));
        let d = tape.unit_distances(av, pv);
        let diag = tape.diagonal(d);
        let m = tape.mean(diag);
        let gde = tape.backward_from(m, 1.0).wrt(av);
        let go = to.backward(1.0).wrt(ao);
        for i in 0..gd.len() {
            let expect = go.data()[i] - 0.6 * gde.data()[i];
            assert!((gd.data()[i] - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn single_pair_is_rejected() {
        let a = DenseMatrix::from_rows(&[[1.0, 0.0]]).unwrap();
        let mut tape = Tape::<f64>::new();
        let av = tape.leaf(Tensor::from_dense(&a));
        assert!(matches!(
            record_batch_loss(&mut tape, av, av, 0, &cfg(TopologyMode::Off, 1.0)),
            Err(Error::InvalidBatch(_))
        ));
    }
}
