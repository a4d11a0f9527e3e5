//! Verification and retrieval metrics for descriptor sets.

use rand::Rng;

use crate::error::{Error, Result};
use crate::knn::{pairwise_distances, unit_distance};
use crate::linalg::DenseMatrix;

/// One verification sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LabeledDistance {
    pub distance: f64,
    pub is_match: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricReport {
    pub fpr95: f64,
    pub map: f64,
    pub n_pos: usize,
    pub n_neg: usize,
}

fn split_classes(samples: &[LabeledDistance]) -> Result<(Vec<f64>, Vec<f64>)> {
    if let Some(s) = samples
        .iter()
        .find(|s| !(s.distance.is_finite() && s.distance >= 0.0))
    {
        return Err(Error::InvalidInput(format!(
            "distances must be finite and non-negative, got {}",
            s.distance
        )));
    }
    let (pos, neg): (Vec<&LabeledDistance>, Vec<_>) = samples.iter().partition(|s| s.is_match);
    if pos.is_empty() || neg.is_empty() {
        return Err(Error::InvalidInput(format!(
            "need at least one match and one non-match ({} / {})",
            pos.len(),
            neg.len()
        )));
    }
    Ok((
        pos.iter().map(|s| s.distance).collect(),
        neg.iter().map(|s| s.distance).collect(),
    ))
}

/// Smallest match distance `t` with `#{match ≤ t} ≥ 0.95·n_pos`.
pub fn recall95_threshold(samples: &[LabeledDistance]) -> Result<f64> {
    let (mut pos, _) = split_classes(samples)?;
    pos.sort_unstable_by(f64::total_cmp);
    let need = (95 * pos.len()).div_ceil(100);
    Ok(pos[need - 1])
}

/// Fraction of non-matches accepted at the 95 % recall threshold; samples
/// exactly at the threshold are accepted.
pub fn fpr95(samples: &[LabeledDistance]) -> Result<f64> {
    let t = recall95_threshold(samples)?;
    let (_, neg) = split_classes(samples)?;
    let accepted = neg.iter().filter(|&&d| d <= t).count();
    Ok(accepted as f64 / neg.len() as f64)
}

/// `(false positive rate, true positive rate)` at every distinct threshold,
/// ascending.
pub fn roc_points(samples: &[LabeledDistance]) -> Result<Vec<(f64, f64)>> {
    let (pos, neg) = split_classes(samples)?;
    let mut all: Vec<LabeledDistance> = samples.to_vec();
    all.sort_unstable_by(|a, b| a.distance.total_cmp(&b.distance));
    let (np, nn) = (pos.len() as f64, neg.len() as f64);
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut points = Vec::new();
    for (i, s) in all.iter().enumerate() {
        if s.is_match {
            tp += 1;
        } else {
            fp += 1;
        }
        if all
            .get(i + 1)
            .is_none_or(|next| next.distance != s.distance)
        {
            points.push((fp as f64 / nn, tp as f64 / np));
        }
    }
    Ok(points)
}

/// Mean over queries of `1/rank` of the true match. Gallery items at the
/// same distance as the true match rank ahead of it.
pub fn retrieval_map(
    queries: &DenseMatrix,
    gallery: &DenseMatrix,
    ground_truth: &[usize],
) -> Result<f64> {
    if ground_truth.len() != queries.rows() {
        return Err(Error::InvalidInput(format!(
            "{} ground-truth entries for {} queries",
            ground_truth.len(),
            queries.rows()
        )));
    }
    if queries.rows() == 0 {
        return Err(Error::InvalidInput("no queries".into()));
    }
    if let Some(&g) = ground_truth.iter().find(|&&g| g >= gallery.rows()) {
        return Err(Error::InvalidInput(format!(
            "ground-truth index {g} outside gallery of {}",
            gallery.rows()
        )));
    }
    let d = pairwise_distances(queries, gallery)?;
    let total: f64 = ground_truth
        .iter()
        .enumerate()
        .map(|(q, &g)| {
            let row = d.row(q);
            let truth = row[g];
            let ahead = row
                .iter()
                .enumerate()
                .filter(|&(j, &v)| j != g && v <= truth)
                .count();
            1.0 / (ahead + 1) as f64
        })
        .sum();
    Ok(total / queries.rows() as f64)
}

/// One matching pair per index plus `negatives_per_positive` non-matching
/// pairs `(aᵢ, pⱼ)`, `j ≠ i` drawn uniformly.
pub fn verification_pairs<R: Rng + ?Sized>(
    anchors: &DenseMatrix,
    positives: &DenseMatrix,
    negatives_per_positive: usize,
    rng: &mut R,
) -> Result<Vec<LabeledDistance>> {
    let n = anchors.rows();
    if positives.rows() != n || anchors.cols() != positives.cols() {
        return Err(Error::InvalidInput(
            "anchor and positive sets differ in shape".into(),
        ));
    }
    if negatives_per_positive > 0 && n < 2 {
        return Err(Error::InvalidInput(
            "negatives need at least two pairs".into(),
        ));
    }
    let mut out = Vec::with_capacity(n * (1 + negatives_per_positive));
    for i in 0..n {
        out.push(LabeledDistance {
            distance: unit_distance(anchors.row(i), positives.row(i)),
            is_match: true,
        });
        for _ in 0..negatives_per_positive {
            let mut j = rng.random_range(0..n - 1);
            if j >= i {
                j += 1;
            }
            out.push(LabeledDistance {
                distance: unit_distance(anchors.row(i), positives.row(j)),
                is_match: false,
            });
        }
    }
    Ok(out)
}

/// FPR95 over seeded verification pairs and mAP of anchors retrieving
/// their positives.
pub fn evaluate<R: Rng + ?Sized>(
    anchors: &DenseMatrix,
    positives: &DenseMatrix,
    negatives_per_positive: usize,
    rng: &mut R,
) -> Result<MetricReport> {
    let pairs = verification_pairs(anchors, positives, negatives_per_positive, rng)?;
    let n_pos = pairs.iter().filter(|s| s.is_match).count();
    let truth: Vec<usize> = (0..anchors.rows()).collect();
    Ok(MetricReport {
        fpr95: fpr95(&pairs)?,
        map: retrieval_map(anchors, positives, &truth)?,
        n_pos,
        n_neg: pairs.len() - n_pos,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::l2_norm;
    use proptest::prelude::{any, prop, prop_assert, prop_assert_eq, proptest};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn labeled(pos: &[f64], neg: &[f64]) -> Vec<LabeledDistance> {
        pos.iter()
            .map(|&d| LabeledDistance {
                distance: d,
                is_match: true,
            })
            .chain(neg.iter().map(|&d| LabeledDistance {
                distance: d,
                is_match: false,
            }))
            .collect()
    }

    /// Tries every candidate threshold in increasing order and stops at the
    /// first reaching 95 % recall.
    fn sweep_oracle(samples: &[LabeledDistance]) -> f64 {
        let mut cands: Vec<f64> = samples.iter().map(|s| s.distance).collect();
        cands.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let np = samples.iter().filter(|s| s.is_match).count() as f64;
        let nn = samples.len() as f64 - np;
        for t in cands {
            let tp = samples
                .iter()
                .filter(|s| s.is_match && s.distance <= t)
                .count() as f64;
            if tp / np >= 0.95 {
                let fp = samples
                    .iter()
                    .filter(|s| !s.is_match && s.distance <= t)
                    .count();
                return fp as f64 / nn;
            }
        }
        unreachable!()
    }

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

    /// Full sort of the gallery per query; the true match goes last among
    /// equal distances.
    fn ranking_oracle(q: &DenseMatrix, g: &DenseMatrix, truth: &[usize]) -> f64 {
        let mut total = 0.0;
        for (i, &t) in truth.iter().enumerate() {
            let mut order: Vec<(f64, bool)> = (0..g.rows())
                .map(|j| (unit_distance(q.row(i), g.row(j)), j == t))
                .collect();
            order.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
            let rank = order.iter().position(|o| o.1).unwrap() + 1;
            total += 1.0 / rank as f64;
        }
        total / truth.len() as f64
    }

    #[test]
    fn separated_and_degenerate() {
        assert_eq!(fpr95(&labeled(&[0.1, 0.2, 0.3], &[0.5, 0.9])).unwrap(), 0.0);
        assert_eq!(fpr95(&labeled(&[0.4; 5], &[0.4; 7])).unwrap(), 1.0);
        assert!(matches!(
            fpr95(&labeled(&[0.1], &[])),
            Err(Error::InvalidInput(_))
        ));
        assert!(matches!(
            fpr95(&labeled(&[], &[0.1])),
            Err(Error::InvalidInput(_))
        ));
    }

    #[test]
    fn threshold_index() {
        // 20 matches: 95 % recall needs 19 of them.
        let pos: Vec<f64> = (1..=20).map(|i| i as f64).collect();
        let s = labeled(&pos, &[18.5, 19.0, 19.5]);
        assert_eq!(recall95_threshold(&s).unwrap(), 19.0);
        assert!((fpr95(&s).unwrap() - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn seeded_matches_sweep() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..100 {
            let pos: Vec<f64> = (0..20).map(|_| rng.random_range(0.0..1.0)).collect();
            let neg: Vec<f64> = (0..20).map(|_| rng.random_range(0.3..1.3)).collect();
            let s = labeled(&pos, &neg);
            assert_eq!(fpr95(&s).unwrap(), sweep_oracle(&s));
        }
    }

    #[test]
    fn roc_ends_at_one() {
        let pts = roc_points(&labeled(&[0.1, 0.2], &[0.15, 0.3])).unwrap();
        assert_eq!(pts, vec![(0.0, 0.5), (0.5, 0.5), (0.5, 1.0), (1.0, 1.0)]);
    }

    #[test]
    fn map_examples() {
        let e = DenseMatrix::from_rows(&[[1.0, 0.0], [0.0, 1.0]]).unwrap();
        assert_eq!(retrieval_map(&e, &e, &[0, 1]).unwrap(), 1.0);
        assert_eq!(retrieval_map(&e, &e, &[1, 0]).unwrap(), 0.5);
        assert!(retrieval_map(&e, &e, &[0]).is_err());
        assert!(retrieval_map(&e, &e, &[0, 2]).is_err());
    }

    #[test]
    fn map_matches_ranking_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for _ in 0..100 {
            let q = unit_rows(&mut rng, 12, 4);
            let g = unit_rows(&mut rng, 15, 4);
            let truth: Vec<usize> = (0..12).map(|_| rng.random_range(0..15)).collect();
            assert_eq!(
                retrieval_map(&q, &g, &truth).unwrap(),
                ranking_oracle(&q, &g, &truth)
            );
        }
    }

    #[test]
    fn pair_counts_and_determinism() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = unit_rows(&mut rng, 10, 3);
        let p = unit_rows(&mut rng, 10, 3);
        let draw = |seed| {
            let mut r = ChaCha8Rng::seed_from_u64(seed);
            verification_pairs(&a, &p, 1, &mut r).unwrap()
        };
        let s = draw(5);
        assert_eq!(s.iter().filter(|x| x.is_match).count(), 10);
        assert_eq!(s.iter().filter(|x| !x.is_match).count(), 10);
        assert_eq!(s, draw(5));

        let same = DenseMatrix::from_rows(&[[0.0, 1.0]; 4]).unwrap();
        let z = verification_pairs(&same, &same, 3, &mut rng).unwrap();
        assert!(z.iter().all(|x| x.distance == 0.0));
    }

    proptest! {
        #[test]
        fn adding_far_negative_keeps_fpr_and_near_one_raises(
            pos in prop::collection::vec(0.0f64..1.0, 1..30),
            neg in prop::collection::vec(0.0f64..2.0, 1..30),
        ) {
            let base = labeled(&pos, &neg);
            let t = recall95_threshold(&base).unwrap();
            let f = fpr95(&base).unwrap();
            let mut far = base.clone();
            far.push(LabeledDistance { distance: t + 1.0, is_match: false });
            prop_assert!(fpr95(&far).unwrap() <= f);
            let mut near = base.clone();
            near.push(LabeledDistance { distance: t, is_match: false });
            prop_assert!(fpr95(&near).unwrap() >= f);
        }

        #[test]
        fn increasing_transform_invariance(
            pos in prop::collection::vec(0.0f64..1.0, 1..30),
            neg in prop::collection::vec(0.0f64..2.0, 1..30),
        ) {
            let base = labeled(&pos, &neg);
            let moved: Vec<LabeledDistance> = base
                .iter()
                .map(|s| LabeledDistance { distance: (3.0 * s.distance).exp(), ..*s })
                .collect();
            prop_assert_eq!(fpr95(&base).unwrap(), fpr95(&moved).unwrap());
        }

        #[test]
        fn map_gallery_permutation_invariance(seed in any::<u64>(), n in 2usize..16) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let q = unit_rows(&mut rng, n, 3);
            let g = unit_rows(&mut rng, n, 3);
            let truth: Vec<usize> = (0..n).collect();
            let mut perm: Vec<usize> = (0..n).collect();
            for i in (1..n).rev() {
                perm.swap(i, rng.random_range(0..=i));
            }
            // Gallery row r of the permuted set is original row perm[r].
            let shuffled = g.select_rows(&perm);
            let mut moved_truth = vec![0; n];
            for (r, &orig) in perm.iter().enumerate() {
                moved_truth[orig] = r;
            }
            prop_assert_eq!(
                retrieval_map(&q, &g, &truth).unwrap(),
                retrieval_map(&q, &shuffled, &moved_truth).unwrap()
            );
        }
    }
}
