//! Average-linkage agglomerative clustering and medoid prototypes.

use super::{DspaceError, PrototypeKind, PrototypeSet};
use crate::dissim::DissimTable;
use crate::PatchId;

/// Clusters `ids` with average linkage until `n_clusters` remain.
///
/// `dist(a, b)` gives the dissimilarity between positions `a` and `b` of
/// `ids`; it is symmetrised as the mean of both directions. At each step the
/// closest pair of clusters merges; ties go to the pair whose smallest
/// member ids are lexicographically lowest, so the result depends only on
/// the ids and their pairwise values, not on their order. Each returned
/// cluster lists its ids ascending; clusters are ordered by smallest id.
pub fn average_linkage(
    ids: &[PatchId],
    dist: impl Fn(usize, usize) -> f64,
    n_clusters: usize,
) -> Result<Vec<Vec<PatchId>>, DspaceError> {
    let n = ids.len();
    if n_clusters == 0 || n < n_clusters {
        return Err(DspaceError::TooFewPatches { n, clusters: n_clusters });
    }
    // canonical order: by id
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by_key(|&i| ids[i]);
    let mut members: Vec<Vec<PatchId>> = order.iter().map(|&i| vec![ids[i]]).collect();
    let mut d = vec![0.0; n * n];
    for a in 0..n {
        for b in 0..n {
            if a != b {
                d[a * n + b] = 0.5 * (dist(order[a], order[b]) + dist(order[b], order[a]));
            }
        }
    }
    let mut alive: Vec<bool> = vec![true; n];
    for _ in 0..n - n_clusters {
        // live clusters are kept sorted by their smallest id, since a merged
        // cluster keeps the slot of its lower-id partner
        let mut best: Option<(f64, usize, usize)> = None;
        for a in (0..n).filter(|&a| alive[a]) {
            for b in (a + 1..n).filter(|&b| alive[b]) {
                let v = d[a * n + b];
                if best.is_none_or(|(bv, _, _)| v < bv) {
                    best = Some((v, a, b));
                }
            }
        }
        let (_, a, b) = best.expect("at least two live clusters");
        let (na, nb) = (members[a].len() as f64, members[b].len() as f64);
        for k in (0..n).filter(|&k| alive[k] && k != a && k != b) {
            let v = (na * d[a * n + k] + nb * d[b * n + k]) / (na + nb);
            d[a * n + k] = v;
            d[k * n + a] = v;
        }
        alive[b] = false;
        let moved = std::mem::take(&mut members[b]);
        members[a].extend(moved);
        members[a].sort_unstable();
    }
    Ok(members.into_iter().zip(alive).filter_map(|(m, live)| live.then_some(m)).collect())
}

/// Member minimising the average dissimilarity to the rest of `cluster`
/// (lower id on ties).
pub fn medoid(cluster: &[PatchId], dist: impl Fn(PatchId, PatchId) -> f64) -> PatchId {
    let n = cluster.len() as f64;
    let mut best = (f64::INFINITY, PatchId::MAX);
    for &i in cluster {
        let avg = cluster.iter().map(|&j| dist(i, j)).sum::<f64>() / n;
        if avg < best.0 || (avg == best.0 && i < best.1) {
            best = (avg, i);
        }
    }
    best.1
}

/// Medoids of an `n_clusters` average-linkage partition of the corpus,
/// ordered by id.
pub fn offline_prototypes(table: &DissimTable, n_clusters: usize) -> Result<PrototypeSet, DspaceError> {
    let ids: Vec<PatchId> = table.ids().collect();
    let clusters = average_linkage(&ids, |a, b| table.get(ids[a], ids[b]), n_clusters)?;
    let mut medoids: Vec<PatchId> = clusters.iter().map(|c| medoid(c, |a, b| table.get(a, b))).collect();
    medoids.sort_unstable();
    PrototypeSet::new(medoids, PrototypeKind::Offline)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dissim::DissimKind;
    use proptest::prelude::*;

    fn points_table(xs: &[f64]) -> DissimTable {
        let n = xs.len();
        let v = (0..n * n).map(|k| (xs[k / n] - xs[k % n]).abs()).collect();
        DissimTable::from_values(DissimKind::Spectral, n, v).unwrap()
    }

    #[test]
    fn every_patch_its_own_cluster() {
        let t = points_table(&[0.0, 1.0, 5.0, 6.0]);
        assert_eq!(offline_prototypes(&t, 4).unwrap().ids(), &[1, 2, 3, 4]);
        assert!(matches!(offline_prototypes(&t, 5), Err(DspaceError::TooFewPatches { n: 4, clusters: 5 })));
    }

    #[test]
    fn two_groups_give_brute_force_medoids() {
        let xs = [0.0, 0.3, 0.35, 1.0, 1.2, 10.0, 10.2, 11.0];
        let t = points_table(&xs);
        let ids: Vec<PatchId> = (1..=8).collect();
        let clusters = average_linkage(&ids, |a, b| t.get(ids[a], ids[b]), 2).unwrap();
        assert_eq!(clusters, vec![vec![1, 2, 3, 4, 5], vec![6, 7, 8]]);
        let p = offline_prototypes(&t, 2).unwrap();
        for (c, &m) in clusters.iter().zip(p.ids()) {
            // brute force over every member, averaging distances by hand
            let avg = |i: PatchId| c.iter().map(|&j| (xs[i as usize - 1] - xs[j as usize - 1]).abs()).sum::<f64>() / c.len() as f64;
            let best = c.iter().copied().min_by(|&a, &b| avg(a).partial_cmp(&avg(b)).unwrap().then(a.cmp(&b))).unwrap();
            assert_eq!(m, best);
        }
        assert_eq!(p.ids(), &[3, 7]);
    }

    #[test]
    fn singleton_medoid() {
        assert_eq!(medoid(&[7], |_, _| 0.0), 7);
    }

    #[test]
    fn hand_merge_sequence() {
        // 0,1,2,3,4.6: {1,2} (tie at 1, lowest pair), then {3,4} at 1, then
        // the two pairs at mean 2 beat {3,4}-5 at mean 2.1
        let t = points_table(&[0.0, 1.0, 2.0, 3.0, 4.6]);
        let ids: Vec<PatchId> = (1..=5).collect();
        let cut = |k| average_linkage(&ids, |a, b| t.get(ids[a], ids[b]), k).unwrap();
        assert_eq!(cut(3), vec![vec![1, 2], vec![3, 4], vec![5]]);
        assert_eq!(cut(2), vec![vec![1, 2, 3, 4], vec![5]]);
    }

    proptest! {
        #[test]
        fn order_invariance(xs in proptest::collection::vec(0u8..20, 3..12), k in 1usize..4, rot in 0usize..12) {
            let n = xs.len();
            let k = k.min(n);
            let ids: Vec<PatchId> = (1..=n as PatchId).collect();
            let d = |a: PatchId, b: PatchId| f64::from(xs[a as usize - 1].abs_diff(xs[b as usize - 1]));
            let base = average_linkage(&ids, |a, b| d(ids[a], ids[b]), k).unwrap();
            let mut perm = ids.clone();
            perm.rotate_left(rot % n);
            perm.reverse();
            let again = average_linkage(&perm, |a, b| d(perm[a], perm[b]), k).unwrap();
            prop_assert_eq!(&again, &base);
            let all: usize = base.iter().map(Vec::len).sum();
            prop_assert_eq!(all, n);
        }
    }
}
