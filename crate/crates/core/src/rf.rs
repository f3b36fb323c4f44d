//! The zero query and the two-class relevance-feedback loop.
//!
//! A session starts from the ranking by dissimilarity to the query, hands
//! out `scope` patches for labelling, and on every round of labels rebuilds
//! the training set in the dissimilarity space, rescores the whole corpus
//! and picks the next patches to show.

use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dissim::{DissimKind, DissimTable};
use crate::dspace::{knn_score, svm_score, svm_train, DspaceError, Label, PrototypeKind, PrototypeSet, SvmParams, TrainingSet};
use crate::PatchId;

pub type PrototypePolicy = PrototypeKind;

#[derive(Debug, thiserror::Error)]
pub enum RfError {
    #[error("patch {0} is not in the corpus")]
    UnknownPatch(PatchId),
    #[error("scope {scope} is invalid for a corpus of {n} patches")]
    Scope { scope: usize, n: usize },
    #[error("session has stopped")]
    Stopped,
    #[error("labels do not match the retrieved set: {0}")]
    LabelMismatch(String),
    #[error("offline policy needs a prototype set")]
    MissingPrototypes,
    #[error("the dissimilarity table is for {table}, the session uses {session}")]
    KindMismatch { table: DissimKind, session: DissimKind },
    #[error(transparent)]
    Dspace(#[from] DspaceError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Relevance {
    Relevant,
    NonRelevant,
}

impl Relevance {
    pub fn label(self) -> Label {
        match self {
            Self::Relevant => Label::Positive,
            Self::NonRelevant => Label::Negative,
        }
    }
}

/// Which unlabelled patches are shown to the user.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Criterion {
    /// Best and worst ranked.
    Bw,
    /// Closest to the class boundary on either side.
    Al,
    /// Half best/worst, half boundary.
    BwAl,
}

impl Criterion {
    pub const ALL: [Criterion; 3] = [Self::Bw, Self::Al, Self::BwAl];

    pub fn name(self) -> &'static str {
        match self {
            Self::Bw => "bw",
            Self::Al => "al",
            Self::BwAl => "bw-al",
        }
    }

    /// Scope used in the reference protocol.
    pub fn default_scope(self) -> usize {
        match self {
            Self::Bw | Self::Al => 10,
            Self::BwAl => 12,
        }
    }
}

impl fmt::Display for Criterion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Criterion {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "bw" => Ok(Self::Bw),
            "al" => Ok(Self::Al),
            "bw-al" | "bw+al" => Ok(Self::BwAl),
            other => Err(format!("unknown criterion `{other}` (expected bw, al or bw-al)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum Classifier {
    Knn { k: usize },
    Svm(SvmParams),
    /// Uniform random scores; a baseline for the evaluation harness.
    Random { seed: u64 },
}

impl Classifier {
    pub fn name(&self) -> &'static str {
        match self {
            Self::Knn { .. } => "knn",
            Self::Svm(_) => "svm",
            Self::Random { .. } => "random",
        }
    }
}

impl Default for Classifier {
    fn default() -> Self {
        Self::Knn { k: 7 }
    }
}

impl fmt::Display for Classifier {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Knn { k } => write!(f, "{k}-nn"),
            other => f.write_str(other.name()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionConfig {
    pub kind: DissimKind,
    pub classifier: Classifier,
    pub policy: PrototypePolicy,
    pub criterion: Criterion,
    pub scope: usize,
    pub t_max: usize,
}

impl Default for SessionConfig {
    fn default() -> Self {
        Self {
            kind: DissimKind::Spectral,
            classifier: Classifier::default(),
            policy: PrototypePolicy::Online,
            criterion: Criterion::Al,
            scope: 10,
            t_max: 5,
        }
    }
}

/// Ω with the scores it was sorted by, position by position.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ranking {
    pub order: Vec<PatchId>,
    pub scores: Vec<f64>,
}

impl Ranking {
    /// Ascending by score, `first` leading, other ties to the lower id.
    fn ascending(scores: &[f64], first: PatchId) -> Self {
        let mut ids: Vec<PatchId> = (1..=scores.len() as PatchId).collect();
        ids.sort_by(|&a, &b| {
            (a != first)
                .cmp(&(b != first))
                .then(scores[a as usize - 1].total_cmp(&scores[b as usize - 1]))
                .then(a.cmp(&b))
        });
        Self::from_order(ids, scores)
    }

    /// Descending by score, ties to the lower id.
    pub fn descending(scores: &[f64]) -> Self {
        let mut ids: Vec<PatchId> = (1..=scores.len() as PatchId).collect();
        ids.sort_by(|&a, &b| scores[b as usize - 1].total_cmp(&scores[a as usize - 1]).then(a.cmp(&b)));
        Self::from_order(ids, scores)
    }

    fn from_order(order: Vec<PatchId>, by_id: &[f64]) -> Self {
        let scores = order.iter().map(|&id| by_id[id as usize - 1]).collect();
        Self { order, scores }
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    /// Zero-based position of every id, indexed by `id - 1`.
    pub fn positions(&self) -> Vec<usize> {
        let mut pos = vec![0; self.order.len()];
        for (p, &id) in self.order.iter().enumerate() {
            pos[id as usize - 1] = p;
        }
        pos
    }

    pub fn head(&self, limit: usize) -> impl Iterator<Item = (PatchId, f64)> + '_ {
        self.order.iter().copied().zip(self.scores.iter().copied()).take(limit)
    }
}

/// Ω⁰: dissimilarity to the query ascending with the query first, plus the
/// initial BW retrieval excluding the query.
pub fn zero_query(table: &DissimTable, query: PatchId, scope: usize) -> Result<(Ranking, Vec<PatchId>), RfError> {
    let n = table.len();
    if !table.contains(query) {
        return Err(RfError::UnknownPatch(query));
    }
    if scope == 0 || scope > n {
        return Err(RfError::Scope { scope, n });
    }
    let mut s = table.row(query).to_vec();
    s[query as usize - 1] = 0.0;
    let ranking = Ranking::ascending(&s, query);
    let retrieved = bw_pick(&ranking.order[1..], scope);
    Ok((ranking, retrieved))
}

/// First `ceil(l/2)` and last `floor(l/2)` of `ranked`; everything when
/// `ranked` is no longer than `l`.
fn bw_pick(ranked: &[PatchId], l: usize) -> Vec<PatchId> {
    if ranked.len() <= l {
        return ranked.to_vec();
    }
    let best = l - l / 2;
    let worst = l / 2;
    let mut out = ranked[..best].to_vec();
    out.extend(ranked[ranked.len() - worst..].iter().rev());
    out
}

/// The `l` unlabelled patches closest to 0.5, half from each side, with a
/// shortfall on one side filled from the other. `cands` must be unlabelled.
fn al_pick(cands: &[(PatchId, f64)], l: usize) -> Vec<PatchId> {
    let mut upper: Vec<(PatchId, f64)> = cands.iter().copied().filter(|c| c.1 >= 0.5).collect();
    let mut lower: Vec<(PatchId, f64)> = cands.iter().copied().filter(|c| c.1 < 0.5).collect();
    let by_ambiguity = |a: &(PatchId, f64), b: &(PatchId, f64)| (a.1 - 0.5).abs().total_cmp(&(b.1 - 0.5).abs()).then(a.0.cmp(&b.0));
    upper.sort_by(by_ambiguity);
    lower.sort_by(by_ambiguity);
    let want_up = l - l / 2;
    let want_low = l / 2;
    let take_up = want_up.min(upper.len()) + want_low.saturating_sub(lower.len());
    let take_low = want_low.min(lower.len()) + want_up.saturating_sub(upper.len());
    upper.iter().take(take_up).chain(lower.iter().take(take_low)).map(|c| c.0).collect()
}

/// Picks at most `l` unlabelled patches by `criterion`. `scores` is indexed
/// by `id - 1`, higher meaning more likely relevant.
pub fn select_retrieval(scores: &[f64], labeled: &HashSet<PatchId>, criterion: Criterion, l: usize) -> Vec<PatchId> {
    let ranking = Ranking::descending(scores);
    let ranked: Vec<PatchId> = ranking.order.iter().copied().filter(|id| !labeled.contains(id)).collect();
    if ranked.len() <= l {
        return ranked;
    }
    let cands: Vec<(PatchId, f64)> = ranked.iter().map(|&id| (id, scores[id as usize - 1])).collect();
    match criterion {
        Criterion::Bw => bw_pick(&ranked, l),
        Criterion::Al => al_pick(&cands, l),
        Criterion::BwAl => {
            let al_n = l / 2;
            let mut out = bw_pick(&ranked, l - al_n);
            let taken: HashSet<PatchId> = out.iter().copied().collect();
            let rest: Vec<(PatchId, f64)> = cands.into_iter().filter(|c| !taken.contains(&c.0)).collect();
            out.extend(al_pick(&rest, al_n));
            out
        }
    }
}

/// Result of one feedback round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationOutcome {
    pub iteration: usize,
    pub retrieved: Vec<PatchId>,
    pub stopped: bool,
    /// The classifier could not be trained and the zero ranking was reused.
    pub fallback: bool,
}

/// Complete state of one query; serialisable for persistence and replay.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RfSession {
    query: PatchId,
    config: SessionConfig,
    n: usize,
    iteration: usize,
    labels: Vec<(PatchId, Label)>,
    prototypes: Option<PrototypeSet>,
    ranking: Ranking,
    retrieved: Vec<PatchId>,
    stopped: bool,
    fallback: bool,
}

impl RfSession {
    /// Runs the zero query. `offline` is required for the offline policy and
    /// ignored for the online one.
    pub fn start(
        table: &DissimTable,
        query: PatchId,
        config: SessionConfig,
        offline: Option<PrototypeSet>,
    ) -> Result<Self, RfError> {
        if table.kind() != config.kind {
            return Err(RfError::KindMismatch { table: table.kind(), session: config.kind });
        }
        let prototypes = match config.policy {
            PrototypePolicy::Online => None,
            PrototypePolicy::Offline => {
                let p = offline.ok_or(RfError::MissingPrototypes)?;
                if let Some(&bad) = p.ids().iter().find(|&&id| !table.contains(id)) {
                    return Err(RfError::UnknownPatch(bad));
                }
                Some(p)
            }
        };
        let (ranking, retrieved) = zero_query(table, query, config.scope)?;
        let stopped = retrieved.is_empty() || config.t_max == 0;
        Ok(Self {
            query,
            n: table.len(),
            iteration: 0,
            labels: vec![(query, Label::Positive)],
            prototypes,
            ranking,
            retrieved: if stopped { Vec::new() } else { retrieved },
            stopped,
            fallback: false,
            config,
        })
    }

    pub fn query(&self) -> PatchId {
        self.query
    }

    pub fn config(&self) -> &SessionConfig {
        &self.config
    }

    pub fn iteration(&self) -> usize {
        self.iteration
    }

    pub fn ranking(&self) -> &Ranking {
        &self.ranking
    }

    pub fn retrieved(&self) -> &[PatchId] {
        &self.retrieved
    }

    pub fn labels(&self) -> &[(PatchId, Label)] {
        &self.labels
    }

    pub fn is_stopped(&self) -> bool {
        self.stopped
    }

    pub fn used_fallback(&self) -> bool {
        self.fallback
    }

    pub fn counts(&self) -> (usize, usize) {
        let pos = self.labels.iter().filter(|l| l.1.is_positive()).count();
        (pos, self.labels.len() - pos)
    }

    /// Prototypes in use: the labelled ids online, the fixed set offline.
    pub fn prototypes(&self) -> PrototypeSet {
        match &self.prototypes {
            Some(p) => p.clone(),
            None => PrototypeSet::new(self.labels.iter().map(|l| l.0).collect(), PrototypeKind::Online)
                .expect("labels are distinct and include the query"),
        }
    }

    /// Ends the session at the user's request.
    pub fn stop(&mut self) {
        self.stopped = true;
        self.retrieved.clear();
    }

    /// Absorbs labels for exactly the retrieved patches, retrains, reranks
    /// and selects the next retrieval. On error the session is unchanged.
    pub fn iterate(&mut self, table: &DissimTable, labels: &[(PatchId, Relevance)]) -> Result<IterationOutcome, RfError> {
        if self.stopped {
            return Err(RfError::Stopped);
        }
        if table.kind() != self.config.kind || table.len() != self.n {
            return Err(RfError::KindMismatch { table: table.kind(), session: self.config.kind });
        }
        let given = self.check_labels(labels)?;
        let mut next = self.clone();
        for &id in &self.retrieved {
            next.labels.push((id, given[&id].label()));
        }
        let prototypes = next.prototypes();
        let training = TrainingSet::from_table(table, &next.labels, &prototypes)?;
        let (scores, fallback) = next.score(table, &training, &prototypes)?;
        next.iteration += 1;
        next.ranking = Ranking::descending(&scores);
        next.fallback = fallback;
        let labeled: HashSet<PatchId> = next.labels.iter().map(|l| l.0).collect();
        next.retrieved = if next.iteration >= self.config.t_max {
            Vec::new()
        } else {
            select_retrieval(&scores, &labeled, self.config.criterion, self.config.scope)
        };
        next.stopped = next.iteration >= self.config.t_max || labeled.len() == self.n || next.retrieved.is_empty();
        *self = next;
        Ok(IterationOutcome {
            iteration: self.iteration,
            retrieved: self.retrieved.clone(),
            stopped: self.stopped,
            fallback,
        })
    }

    fn check_labels(&self, labels: &[(PatchId, Relevance)]) -> Result<std::collections::HashMap<PatchId, Relevance>, RfError> {
        let expected: HashSet<PatchId> = self.retrieved.iter().copied().collect();
        let mut given = std::collections::HashMap::new();
        for &(id, r) in labels {
            if !expected.contains(&id) {
                return Err(RfError::LabelMismatch(format!("patch {id} was not retrieved")));
            }
            if given.insert(id, r).is_some() {
                return Err(RfError::LabelMismatch(format!("patch {id} labelled twice")));
            }
        }
        if given.len() != expected.len() {
            return Err(RfError::LabelMismatch(format!("{} of {} retrieved patches labelled", given.len(), expected.len())));
        }
        Ok(given)
    }

    fn score(&self, table: &DissimTable, t: &TrainingSet, p: &PrototypeSet) -> Result<(Vec<f64>, bool), RfError> {
        let ids = table.ids();
        let vectors = ids.map(|id| crate::dspace::dissim_vector(table, id, p));
        match &self.config.classifier {
            Classifier::Knn { k } => Ok((vectors.map(|v| knn_score(t, &v?, *k).map_err(RfError::from)).collect::<Result<_, _>>()?, false)),
            Classifier::Svm(params) => match svm_train(t, params) {
                Ok(model) => Ok((vectors.map(|v| svm_score(&model, &v?).map_err(RfError::from)).collect::<Result<_, _>>()?, false)),
                Err(DspaceError::SingleClass(_)) => Ok((self.zero_scores(table), true)),
                Err(e) => Err(e.into()),
            },
            Classifier::Random { seed } => {
                let mix = seed ^ (u64::from(self.query) << 32) ^ (self.iteration as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
                let mut rng = ChaCha8Rng::seed_from_u64(mix);
                Ok(((0..self.n).map(|_| rng.random::<f64>()).collect(), false))
            }
        }
    }

    /// Zero-query dissimilarities mapped onto `[0, 1]` so that larger is
    /// better and the query scores 1.
    fn zero_scores(&self, table: &DissimTable) -> Vec<f64> {
        let mut s = table.row(self.query).to_vec();
        s[self.query as usize - 1] = 0.0;
        let max = s.iter().copied().fold(0.0, f64::max);
        s.iter().map(|v| if max > 0.0 { 1.0 - v / max } else { 1.0 }).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Points on a line; categories are the integer part of x / 10.
    fn line_table(xs: &[f64], kind: DissimKind) -> DissimTable {
        let n = xs.len();
        DissimTable::from_values(kind, n, (0..n * n).map(|k| (xs[k / n] - xs[k % n]).abs()).collect()).unwrap()
    }

    fn sim_labels(xs: &[f64], query: PatchId, ids: &[PatchId]) -> Vec<(PatchId, Relevance)> {
        let cat = |id: PatchId| (xs[id as usize - 1] / 10.0).floor();
        ids.iter()
            .map(|&id| (id, if cat(id) == cat(query) { Relevance::Relevant } else { Relevance::NonRelevant }))
            .collect()
    }

    fn scores_of(pairs: &[(PatchId, f64)]) -> Vec<f64> {
        let mut s = vec![0.0; pairs.len()];
        for &(id, v) in pairs {
            s[id as usize - 1] = v;
        }
        s
    }

    #[test]
    fn zero_query_puts_query_then_exact_matches_first() {
        let t = line_table(&[5.0, 1.0, 1.0, 9.0, 3.0], DissimKind::Spectral);
        let (r, retrieved) = zero_query(&t, 3, 2).unwrap();
        assert_eq!(r.order, vec![3, 2, 5, 1, 4]);
        assert!(r.scores.windows(2).all(|w| w[0] <= w[1]));
        assert_eq!(retrieved, vec![2, 4]);
        assert!(matches!(zero_query(&t, 9, 2), Err(RfError::UnknownPatch(9))));
        assert!(matches!(zero_query(&t, 1, 6), Err(RfError::Scope { .. })));
    }

    #[test]
    fn zero_query_matches_oracle_sort() {
        let xs: Vec<f64> = (0..30).map(|i| ((i * 7919) % 31) as f64 * 0.37).collect();
        let t = line_table(&xs, DissimKind::NddAvg);
        for q in [1, 7, 30] {
            let (r, _) = zero_query(&t, q, 10).unwrap();
            let mut oracle: Vec<(f64, PatchId)> =
                (1..=30).map(|id| ((xs[id as usize - 1] - xs[q as usize - 1]).abs(), id)).collect();
            oracle.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let oracle_order: Vec<PatchId> = oracle.iter().map(|o| o.1).collect();
            let mut expected = vec![q];
            expected.extend(oracle_order.into_iter().filter(|&id| id != q));
            assert_eq!(r.order, expected);
        }
    }

    #[test]
    fn bw_and_al_hand_cases() {
        // A..D = 1..4
        let none = HashSet::new();
        let s = scores_of(&[(1, 0.9), (2, 0.8), (3, 0.2), (4, 0.1)]);
        assert_eq!(select_retrieval(&s, &none, Criterion::Bw, 2), vec![1, 4]);
        let s = scores_of(&[(1, 0.9), (2, 0.55), (3, 0.45), (4, 0.1)]);
        let mut al = select_retrieval(&s, &none, Criterion::Al, 2);
        al.sort();
        assert_eq!(al, vec![2, 3]);
        // shortfall: nothing below 0.5, so both come from the upper side
        let s = scores_of(&[(1, 0.9), (2, 0.6), (3, 0.7), (4, 0.95)]);
        assert_eq!(select_retrieval(&s, &none, Criterion::Al, 2), vec![2, 3]);
        // labelled ids are never returned; fewer candidates than l returns all
        let labeled: HashSet<PatchId> = [1, 2, 3].into();
        assert_eq!(select_retrieval(&s, &labeled, Criterion::Bw, 2), vec![4]);
    }

    #[test]
    fn bw_al_splits_three_ways() {
        let s: Vec<f64> = (0..20).map(|i| i as f64 / 19.0).collect();
        let out = select_retrieval(&s, &HashSet::new(), Criterion::BwAl, 12);
        assert_eq!(out.len(), 12);
        assert_eq!(&out[..3], &[20, 19, 18]);
        assert_eq!(&out[3..6], &[1, 2, 3]);
        let mut al = out[6..].to_vec();
        al.sort();
        // 0.5 lies between ids 10 (0.474) and 11 (0.526)
        assert_eq!(al, vec![8, 9, 10, 11, 12, 13]);
    }

    /// Straightforward restatement of the selection rules.
    fn oracle(scores: &[f64], labeled: &HashSet<PatchId>, criterion: Criterion, l: usize) -> Vec<PatchId> {
        let mut ids: Vec<PatchId> = (1..=scores.len() as PatchId).filter(|id| !labeled.contains(id)).collect();
        let s = |id: PatchId| scores[id as usize - 1];
        ids.sort_by(|&a, &b| s(b).partial_cmp(&s(a)).unwrap().then(a.cmp(&b)));
        if ids.len() <= l {
            return ids;
        }
        let bw = |ids: &[PatchId], l: usize| {
            let mut v: Vec<PatchId> = ids[..(l + 1) / 2].to_vec();
            let mut tail: Vec<PatchId> = ids[ids.len() - l / 2..].to_vec();
            tail.reverse();
            v.extend(tail);
            v
        };
        let al = |ids: &[PatchId], l: usize| {
            let amb = |id: PatchId| (s(id) - 0.5).abs();
            let pick = |mut side: Vec<PatchId>| {
                side.sort_by(|&a, &b| amb(a).partial_cmp(&amb(b)).unwrap().then(a.cmp(&b)));
                side
            };
            let up = pick(ids.iter().copied().filter(|&i| s(i) >= 0.5).collect());
            let low = pick(ids.iter().copied().filter(|&i| s(i) < 0.5).collect());
            let (mut nu, mut nl) = ((l + 1) / 2, l / 2);
            if up.len() < nu {
                nl += nu - up.len();
                nu = up.len();
            }
            if low.len() < nl {
                nu += nl - low.len();
                nl = low.len();
            }
            let mut v: Vec<PatchId> = up[..nu.min(up.len())].to_vec();
            v.extend(&low[..nl.min(low.len())]);
            v
        };
        match criterion {
            Criterion::Bw => bw(&ids, l),
            Criterion::Al => al(&ids, l),
            Criterion::BwAl => {
                let mut v = bw(&ids, l - l / 2);
                let rest: Vec<PatchId> = ids.iter().copied().filter(|i| !v.contains(i)).collect();
                v.extend(al(&rest, l / 2));
                v
            }
        }
    }

    proptest! {
        #[test]
        fn selection_matches_oracle(
            raw in proptest::collection::vec(0u8..=20, 1..40),
            labeled_mask in proptest::collection::vec(any::<bool>(), 40),
            l in 1usize..14,
            c in 0usize..3,
        ) {
            // coarse scores produce plenty of ties
            let scores: Vec<f64> = raw.iter().map(|&v| f64::from(v) / 20.0).collect();
            let labeled: HashSet<PatchId> = (1..=scores.len() as PatchId).filter(|&id| labeled_mask[id as usize - 1]).collect();
            let criterion = Criterion::ALL[c];
            let got = select_retrieval(&scores, &labeled, criterion, l);
            prop_assert_eq!(&got, &oracle(&scores, &labeled, criterion, l));
            prop_assert!(got.iter().all(|id| !labeled.contains(id)));
            let unique: HashSet<_> = got.iter().collect();
            prop_assert_eq!(unique.len(), got.len());
        }
    }

    fn two_groups() -> Vec<f64> {
        (0..24).map(|i| if i % 2 == 0 { 1.0 + i as f64 * 0.1 } else { 11.0 + i as f64 * 0.1 }).collect()
    }

    fn run(config: SessionConfig, xs: &[f64], query: PatchId, offline: Option<PrototypeSet>) -> (RfSession, Vec<IterationOutcome>) {
        let t = line_table(xs, config.kind);
        let mut s = RfSession::start(&t, query, config, offline).unwrap();
        let mut outcomes = Vec::new();
        while !s.is_stopped() {
            let labels = sim_labels(xs, query, s.retrieved());
            outcomes.push(s.iterate(&t, &labels).unwrap());
        }
        (s, outcomes)
    }

    #[test]
    fn t_max_bounds_the_loop() {
        let xs: Vec<f64> = (0..60).map(|i| (i % 3) as f64 * 10.0 + (i as f64) * 0.01).collect();
        let cfg = SessionConfig { scope: 4, ..SessionConfig::default() };
        let (s, outcomes) = run(cfg, &xs, 1, None);
        assert_eq!(outcomes.len(), 5);
        assert!(outcomes.last().unwrap().stopped && outcomes[..4].iter().all(|o| !o.stopped));
        assert_eq!(s.iteration(), 5);
        let t = line_table(&xs, DissimKind::Spectral);
        let mut s = s;
        assert!(matches!(s.iterate(&t, &[]), Err(RfError::Stopped)));
    }

    #[test]
    fn separable_corpus_ranks_relevant_first() {
        let xs = two_groups();
        let cfg = SessionConfig { criterion: Criterion::Al, ..SessionConfig::default() };
        let (s, _) = run(cfg, &xs, 1, None);
        let relevant: HashSet<PatchId> = (1..=24).filter(|id| id % 2 == 1).collect();
        let head: HashSet<PatchId> = s.ranking().order[..12].iter().copied().collect();
        assert_eq!(head, relevant);
        assert!(s.ranking().scores.windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn exhausting_the_corpus_stops() {
        let xs = [0.0, 1.0, 20.0, 21.0, 40.0];
        let cfg = SessionConfig { scope: 2, t_max: 50, ..SessionConfig::default() };
        let (s, outcomes) = run(cfg, &xs, 1, None);
        assert_eq!(s.labels().len(), 5);
        assert_eq!(outcomes.len(), 2);
        assert!(outcomes.last().unwrap().stopped);
    }

    #[test]
    fn session_invariants_and_replay() {
        let xs = two_groups();
        for criterion in Criterion::ALL {
            for classifier in [Classifier::Knn { k: 7 }, Classifier::Svm(SvmParams::default()), Classifier::Random { seed: 4 }] {
                let cfg = SessionConfig { criterion, classifier, scope: criterion.default_scope(), ..SessionConfig::default() };
                let t = line_table(&xs, cfg.kind);
                let mut s = RfSession::start(&t, 4, cfg.clone(), None).unwrap();
                assert_eq!(s.labels()[0], (4, Label::Positive));
                let mut sizes = vec![s.labels().len()];
                while !s.is_stopped() {
                    let labels = sim_labels(&xs, 4, s.retrieved());
                    s.iterate(&t, &labels).unwrap();
                    let mut perm = s.ranking().order.clone();
                    perm.sort();
                    assert_eq!(perm, (1..=24).collect::<Vec<_>>());
                    let mut proto: Vec<PatchId> = s.prototypes().ids().to_vec();
                    let mut labeled: Vec<PatchId> = s.labels().iter().map(|l| l.0).collect();
                    proto.sort();
                    labeled.sort();
                    assert_eq!(proto, labeled);
                    assert!(s.retrieved().iter().all(|id| !labeled.contains(id)));
                    sizes.push(s.labels().len());
                }
                assert!(sizes.windows(2).all(|w| w[0] <= w[1]));
                let (again, _) = run(cfg, &xs, 4, None);
                assert_eq!(serde_json::to_string(&again).unwrap(), serde_json::to_string(&s).unwrap());
            }
        }
    }

    #[test]
    fn svm_falls_back_on_a_single_class() {
        // every retrieved patch is from the other category
        let xs = [0.0, 100.0, 101.0, 102.0, 103.0];
        let cfg = SessionConfig {
            classifier: Classifier::Svm(SvmParams::default()),
            scope: 2,
            ..SessionConfig::default()
        };
        let t = line_table(&xs, cfg.kind);
        let mut s = RfSession::start(&t, 1, cfg, None).unwrap();
        let labels: Vec<_> = s.retrieved().iter().map(|&id| (id, Relevance::Relevant)).collect();
        let out = s.iterate(&t, &labels).unwrap();
        assert!(out.fallback && s.used_fallback());
        let (zero, _) = zero_query(&t, 1, 2).unwrap();
        assert_eq!(s.ranking().order, zero.order);
    }

    #[test]
    fn bad_labels_leave_the_session_unchanged() {
        let xs = two_groups();
        let t = line_table(&xs, DissimKind::Spectral);
        let mut s = RfSession::start(&t, 1, SessionConfig::default(), None).unwrap();
        let before = s.clone();
        let mut labels = sim_labels(&xs, 1, s.retrieved());
        labels.pop();
        assert!(matches!(s.iterate(&t, &labels), Err(RfError::LabelMismatch(_))));
        labels.push((1, Relevance::Relevant));
        assert!(matches!(s.iterate(&t, &labels), Err(RfError::LabelMismatch(_))));
        assert_eq!(s, before);
        let wrong_kind = line_table(&xs, DissimKind::NddAvg);
        assert!(s.iterate(&wrong_kind, &sim_labels(&xs, 1, s.retrieved())).is_err());
    }

    #[test]
    fn offline_policy_uses_the_fixed_set() {
        let xs = two_groups();
        let p = PrototypeSet::new(vec![2, 3, 10], PrototypeKind::Offline).unwrap();
        let cfg = SessionConfig { policy: PrototypePolicy::Offline, ..SessionConfig::default() };
        let t = line_table(&xs, cfg.kind);
        assert!(matches!(RfSession::start(&t, 1, cfg.clone(), None), Err(RfError::MissingPrototypes)));
        let (s, _) = run(cfg, &xs, 1, Some(p.clone()));
        assert_eq!(s.prototypes(), p);
    }

    #[test]
    fn explicit_stop() {
        let xs = two_groups();
        let t = line_table(&xs, DissimKind::Spectral);
        let mut s = RfSession::start(&t, 1, SessionConfig::default(), None).unwrap();
        s.stop();
        assert!(s.is_stopped() && s.retrieved().is_empty());
        assert!(matches!(s.iterate(&t, &[]), Err(RfError::Stopped)));
    }

    #[test]
    fn names_parse() {
        for c in Criterion::ALL {
            assert_eq!(c.name().parse::<Criterion>().unwrap(), c);
        }
        assert_eq!("bw+al".parse::<Criterion>().unwrap(), Criterion::BwAl);
        let json = serde_json::to_string(&Classifier::Knn { k: 7 }).unwrap();
        assert_eq!(json, r#"{"type":"knn","k":7}"#);
        assert_eq!(serde_json::from_str::<Classifier>(&json).unwrap(), Classifier::Knn { k: 7 });
        assert_eq!(serde_json::to_string(&Relevance::NonRelevant).unwrap(), "\"non-relevant\"");
    }
}
