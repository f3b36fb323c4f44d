//! Retrieval metrics and the simulated-user experiment harness.

mod experiment;

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

pub use experiment::{
    run_experiment, sweep_csv, CategoryReport, ExperimentConfig, ExperimentReport, QueryResult, SweepRow,
};

use crate::rf::RfError;
use crate::PatchId;

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("the relevant set is empty")]
    EmptyRelevant,
    #[error("cannot average an empty list")]
    EmptyList,
    #[error("scope {scope} is outside 1..={n}")]
    Scope { scope: usize, n: usize },
    #[error("relevant patch {0} is not in the ranking")]
    NotRanked(PatchId),
    #[error("patch {0} has no category")]
    Unlabelled(PatchId),
    #[error("labels do not match the dissimilarity table: {0}")]
    Mismatch(String),
    #[error(transparent)]
    Rf(#[from] RfError),
}

/// Precision and recall of the first `l` ranked ids.
pub fn precision_recall(order: &[PatchId], relevant: &HashSet<PatchId>, l: usize) -> Result<(f64, f64), EvalError> {
    if relevant.is_empty() {
        return Err(EvalError::EmptyRelevant);
    }
    if l == 0 || l > order.len() {
        return Err(EvalError::Scope { scope: l, n: order.len() });
    }
    let hits = order[..l].iter().filter(|id| relevant.contains(id)).count() as f64;
    Ok((hits / l as f64, hits / relevant.len() as f64))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrPoint {
    pub scope: usize,
    pub precision: f64,
    pub recall: f64,
}

/// Precision and recall at every scope `1..=N`.
pub fn pr_curve(order: &[PatchId], relevant: &HashSet<PatchId>) -> Result<Vec<PrPoint>, EvalError> {
    if relevant.is_empty() {
        return Err(EvalError::EmptyRelevant);
    }
    let total = relevant.len() as f64;
    let mut hits = 0usize;
    Ok(order
        .iter()
        .enumerate()
        .map(|(i, id)| {
            hits += usize::from(relevant.contains(id));
            PrPoint { scope: i + 1, precision: hits as f64 / (i + 1) as f64, recall: hits as f64 / total }
        })
        .collect())
}

/// `(Σᵢ ρᵢ − N_α(N_α − 1)/2) / (N · N_α)` with zero-based positions ρᵢ of
/// the relevant ids.
pub fn normalized_rank(order: &[PatchId], relevant: &HashSet<PatchId>) -> Result<f64, EvalError> {
    if relevant.is_empty() {
        return Err(EvalError::EmptyRelevant);
    }
    let mut sum = 0u64;
    let mut found = 0usize;
    for (pos, id) in order.iter().enumerate() {
        if relevant.contains(id) {
            sum += pos as u64;
            found += 1;
        }
    }
    if found != relevant.len() {
        let missing = relevant.iter().copied().filter(|id| !order.contains(id)).min().expect("some id missing");
        return Err(EvalError::NotRanked(missing));
    }
    let (n, na) = (order.len() as u64, found as u64);
    Ok((sum - na * (na - 1) / 2) as f64 / (n * na) as f64)
}

/// Average normalized rank.
pub fn anr(ranks: &[f64]) -> Result<f64, EvalError> {
    if ranks.is_empty() {
        return Err(EvalError::EmptyList);
    }
    Ok(ranks.iter().sum::<f64>() / ranks.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn set(ids: &[PatchId]) -> HashSet<PatchId> {
        ids.iter().copied().collect()
    }

    #[test]
    fn precision_recall_cases() {
        let order: Vec<PatchId> = (1..=30).collect();
        assert_eq!(precision_recall(&order, &set(&[1, 2, 3]), 3).unwrap(), (1.0, 1.0));
        // 5 of the first 10 relevant, 20 relevant in total
        let relevant: HashSet<PatchId> = [1, 3, 5, 7, 9].into_iter().chain(11..=25).collect();
        assert_eq!(precision_recall(&order, &relevant, 10).unwrap(), (0.5, 0.25));
        let (p, r) = precision_recall(&order, &relevant, 30).unwrap();
        assert_eq!((p, r), (20.0 / 30.0, 1.0));
        assert!(precision_recall(&order, &HashSet::new(), 3).is_err());
        assert!(precision_recall(&order, &relevant, 0).is_err());
        assert!(precision_recall(&order, &relevant, 31).is_err());
    }

    #[test]
    fn normalized_rank_cases() {
        let order: Vec<PatchId> = (1..=10).collect();
        assert_eq!(normalized_rank(&order, &set(&[1, 2, 3])).unwrap(), 0.0);
        // positions 0 and 5: (5 - 1) / 20
        assert_eq!(normalized_rank(&order, &set(&[1, 6])).unwrap(), 0.2);
        // last N_α positions give (N - N_α) / N
        assert_eq!(normalized_rank(&order, &set(&[8, 9, 10])).unwrap(), 0.7);
        assert!(matches!(normalized_rank(&order, &set(&[11])), Err(EvalError::NotRanked(11))));
        assert!(normalized_rank(&order, &HashSet::new()).is_err());
    }

    #[test]
    fn anr_cases() {
        assert_eq!(anr(&[0.0, 0.0]).unwrap(), 0.0);
        assert!((anr(&[0.2, 0.4]).unwrap() - 0.3).abs() < 1e-15);
        assert_eq!(anr(&[0.37]).unwrap(), 0.37);
        assert!(anr(&[]).is_err());
    }

    proptest! {
        #[test]
        fn curve_invariants(n in 2usize..40, seed in any::<u64>(), frac in 0.05f64..0.9) {
            let mut order: Vec<PatchId> = (1..=n as PatchId).collect();
            let mut s = seed;
            for i in (1..n).rev() {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                order.swap(i, (s >> 33) as usize % (i + 1));
            }
            let k = ((n as f64 * frac).ceil() as usize).max(1);
            let relevant: HashSet<PatchId> = (1..=k as PatchId).collect();
            let curve = pr_curve(&order, &relevant).unwrap();
            for w in curve.windows(2) {
                prop_assert!(w[1].recall >= w[0].recall);
            }
            for (l, pt) in curve.iter().enumerate() {
                let hits_p = pt.precision * (l + 1) as f64;
                let hits_r = pt.recall * k as f64;
                prop_assert!((hits_p - hits_p.round()).abs() < 1e-9);
                prop_assert!((hits_p - hits_r).abs() < 1e-9);
                let (p, r) = precision_recall(&order, &relevant, l + 1).unwrap();
                prop_assert_eq!((p, r), (pt.precision, pt.recall));
            }
            // shuffling non-relevant ids among their own slots keeps the rank
            let base = normalized_rank(&order, &relevant).unwrap();
            let mut moved = order.clone();
            let slots: Vec<usize> = (0..n).filter(|&i| !relevant.contains(&moved[i])).collect();
            if slots.len() > 1 {
                moved.swap(slots[0], slots[slots.len() - 1]);
            }
            prop_assert_eq!(normalized_rank(&moved, &relevant).unwrap(), base);
            prop_assert!((0.0..1.0).contains(&base));
        }
    }
}
