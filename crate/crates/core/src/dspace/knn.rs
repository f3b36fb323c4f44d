use super::{sq_euclidean, DspaceError, TrainingSet};

/// Fraction of the `k` nearest training vectors (Euclidean, ties to the
/// lower patch id) that are positive. When the training set is smaller than
/// `k`, all of it is used and the fraction is taken over its size.
pub fn knn_score(t: &TrainingSet, s_x: &[f64], k: usize) -> Result<f64, DspaceError> {
    if k == 0 {
        return Err(DspaceError::Param("k must be at least 1".into()));
    }
    let dim = t.dim().ok_or(DspaceError::EmptyTraining)?;
    if s_x.len() != dim {
        return Err(DspaceError::DimensionMismatch { expected: dim, got: s_x.len() });
    }
    let mut dist: Vec<(f64, u32, bool)> =
        t.entries().iter().map(|e| (sq_euclidean(&e.vector, s_x), e.id, e.label.is_positive())).collect();
    let k = k.min(dist.len());
    let by_distance = |a: &(f64, u32, bool), b: &(f64, u32, bool)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
    if k < dist.len() {
        dist.select_nth_unstable_by(k - 1, by_distance);
    }
    let positives = dist[..k].iter().filter(|d| d.2).count();
    Ok(positives as f64 / k as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dspace::{Label, TrainingEntry};
    use proptest::prelude::*;

    fn set(points: &[(u32, bool, Vec<f64>)]) -> TrainingSet {
        TrainingSet::new(
            points.iter().map(|(id, p, v)| TrainingEntry { id: *id, label: Label::from_bool(*p), vector: v.clone() }).collect(),
        )
        .unwrap()
    }

    /// Sorts everything, which is the obvious reading of "k nearest".
    fn brute_force(points: &[(u32, bool, Vec<f64>)], x: &[f64], k: usize) -> f64 {
        let mut d: Vec<(f64, u32, bool)> = points
            .iter()
            .map(|(id, p, v)| (v.iter().zip(x).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt(), *id, *p))
            .collect();
        d.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
        let k = k.min(d.len());
        d[..k].iter().filter(|e| e.2).count() as f64 / k as f64
    }

    #[test]
    fn three_of_seven() {
        let mut pts: Vec<(u32, bool, Vec<f64>)> = (1..=7).map(|i| (i, i <= 3, vec![i as f64])).collect();
        pts.push((8, true, vec![100.0]));
        pts.push((9, true, vec![101.0]));
        assert_eq!(knn_score(&set(&pts), &[0.0], 7).unwrap(), 3.0 / 7.0);
        assert_eq!(knn_score(&set(&pts[..3]), &[0.0], 7).unwrap(), 1.0);
    }

    #[test]
    fn small_training_sets_renormalise() {
        let pts = vec![(1, true, vec![0.0]), (2, false, vec![1.0])];
        assert_eq!(knn_score(&set(&pts), &[0.0], 7).unwrap(), 0.5);
        assert!(matches!(knn_score(&TrainingSet::default(), &[0.0], 7), Err(DspaceError::EmptyTraining)));
        assert!(knn_score(&set(&pts), &[0.0, 1.0], 7).is_err());
        assert!(knn_score(&set(&pts), &[0.0], 0).is_err());
    }

    #[test]
    fn ties_go_to_lower_id() {
        // both at distance 1 from the origin; id 2 is positive, id 5 negative
        let pts = vec![(5, false, vec![-1.0]), (2, true, vec![1.0])];
        assert_eq!(knn_score(&set(&pts), &[0.0], 1).unwrap(), 1.0);
    }

    fn instance() -> impl Strategy<Value = (Vec<(u32, bool, Vec<f64>)>, Vec<f64>, usize)> {
        (1usize..4, 1usize..25).prop_flat_map(|(dim, n)| {
            (
                proptest::collection::vec((any::<bool>(), proptest::collection::vec(0u8..4, dim)), n),
                proptest::collection::vec(0u8..4, dim),
                1usize..10,
            )
                .prop_map(|(pts, x, k)| {
                    // small integer grids make distance ties common
                    let pts = pts
                        .into_iter()
                        .enumerate()
                        .map(|(i, (p, v))| (i as u32 + 1, p, v.into_iter().map(f64::from).collect()))
                        .collect();
                    (pts, x.into_iter().map(f64::from).collect(), k)
                })
        })
    }

    proptest! {
        #[test]
        fn matches_brute_force((pts, x, k) in instance(), seed in any::<u64>()) {
            let expected = brute_force(&pts, &x, k);
            prop_assert_eq!(knn_score(&set(&pts), &x, k).unwrap(), expected);
            // permuting the training order changes nothing
            let mut shuffled = pts.clone();
            let n = shuffled.len();
            for i in 0..n {
                shuffled.swap(i, (seed as usize).wrapping_mul(i + 7) % n);
            }
            prop_assert_eq!(knn_score(&set(&shuffled), &x, k).unwrap(), expected);
            // and so does a positive affine rescaling of every dissimilarity
            let warp = |v: &[f64]| v.iter().map(|d| 2.5 * d + 0.75).collect::<Vec<_>>();
            let warped: Vec<_> = pts.iter().map(|(id, p, v)| (*id, *p, warp(v))).collect();
            prop_assert_eq!(knn_score(&set(&warped), &warp(&x), k).unwrap(), expected);
        }
    }
}
