//! Dissimilarity-space representation: patches are described by their
//! dissimilarities to a prototype set, and two-class classifiers trained on
//! those vectors score membership in the positive class.

mod cluster;
mod knn;
mod svm;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use cluster::{average_linkage, medoid, offline_prototypes};
pub use knn::knn_score;
pub use svm::{platt_fit, svm_score, svm_train, svm_train_fixed, SvmModel, SvmParams};

use crate::dissim::{patch_dissim, DissimError, DissimKind, DissimTable, PatchFeatures};
use crate::PatchId;

#[derive(Debug, thiserror::Error)]
pub enum DspaceError {
    #[error("training set is empty")]
    EmptyTraining,
    #[error("training set has only {0} examples; both classes are required")]
    SingleClass(Label),
    #[error("patch {0} is not in the corpus")]
    UnknownId(PatchId),
    #[error("patch {0} appears twice")]
    DuplicateId(PatchId),
    #[error("cannot form {clusters} clusters from {n} patches")]
    TooFewPatches { n: usize, clusters: usize },
    #[error("vector of length {got}, expected {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("invalid parameter: {0}")]
    Param(String),
    #[error("prototype file line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error(transparent)]
    Dissim(#[from] DissimError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Label {
    Positive,
    Negative,
}

impl Label {
    pub fn from_bool(positive: bool) -> Self {
        if positive {
            Self::Positive
        } else {
            Self::Negative
        }
    }

    pub fn is_positive(self) -> bool {
        self == Self::Positive
    }

    pub fn sign(self) -> f64 {
        if self.is_positive() {
            1.0
        } else {
            -1.0
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(if self.is_positive() { "positive" } else { "negative" })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PrototypeKind {
    Online,
    Offline,
}

impl PrototypeKind {
    pub fn name(self) -> &'static str {
        match self {
            Self::Online => "online",
            Self::Offline => "offline",
        }
    }
}

impl fmt::Display for PrototypeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PrototypeKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "online" => Ok(Self::Online),
            "offline" => Ok(Self::Offline),
            other => Err(format!("unknown prototype policy `{other}` (expected online or offline)")),
        }
    }
}

/// Ordered, duplicate-free list of reference patches spanning the space.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PrototypeSet {
    ids: Vec<PatchId>,
    kind: PrototypeKind,
}

impl PrototypeSet {
    pub fn new(ids: Vec<PatchId>, kind: PrototypeKind) -> Result<Self, DspaceError> {
        if ids.is_empty() {
            return Err(DspaceError::Param("a prototype set needs at least one patch".into()));
        }
        let mut seen = std::collections::HashSet::new();
        if let Some(&d) = ids.iter().find(|id| !seen.insert(**id)) {
            return Err(DspaceError::DuplicateId(d));
        }
        Ok(Self { ids, kind })
    }

    pub fn ids(&self) -> &[PatchId] {
        &self.ids
    }

    pub fn kind(&self) -> PrototypeKind {
        self.kind
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// `patch_id,kind` rows, where `kind` is the dissimilarity the set was
    /// derived with.
    pub fn to_csv(&self, dissim: DissimKind) -> String {
        let mut out = String::from("patch_id,kind\n");
        for id in &self.ids {
            out.push_str(&format!("{id},{dissim}\n"));
        }
        out
    }

    pub fn from_csv(text: &str, kind: PrototypeKind) -> Result<(Self, DissimKind), DspaceError> {
        let err = |line: usize, msg: String| DspaceError::Parse { line, msg };
        let mut rows = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        match rows.next() {
            Some((_, h)) if h.trim() == "patch_id,kind" => {}
            _ => return Err(err(1, "expected header `patch_id,kind`".into())),
        }
        let mut ids = Vec::new();
        let mut dissim = None;
        for (i, line) in rows {
            let (id, k) = line.split_once(',').ok_or_else(|| err(i + 1, "expected two fields".into()))?;
            ids.push(id.trim().parse().map_err(|e| err(i + 1, format!("patch id: {e}")))?);
            let k: DissimKind = k.parse().map_err(|e| err(i + 1, e))?;
            if dissim.is_some_and(|d| d != k) {
                return Err(err(i + 1, "mixed dissimilarity kinds".into()));
            }
            dissim = Some(k);
        }
        let dissim = dissim.ok_or_else(|| err(2, "no prototypes".into()))?;
        Ok((Self::new(ids, kind)?, dissim))
    }
}

/// `s_x = [s(x, p₁), …, s(x, p_r)]`.
pub type DissimVector = Vec<f64>;

/// Row `x` of `D(X, P)` read from a precomputed table.
pub fn dissim_vector(table: &DissimTable, x: PatchId, prototypes: &PrototypeSet) -> Result<DissimVector, DspaceError> {
    check_ids(table, std::iter::once(x).chain(prototypes.ids().iter().copied()))?;
    let row = table.row(x);
    Ok(prototypes.ids().iter().map(|&p| row[p as usize - 1]).collect())
}

/// The `|X| × r` matrix `D(X, P)` read from a precomputed table.
pub fn dissim_matrix(table: &DissimTable, xs: &[PatchId], prototypes: &PrototypeSet) -> Result<Vec<DissimVector>, DspaceError> {
    xs.iter().map(|&x| dissim_vector(table, x, prototypes)).collect()
}

/// `D(X, P)` computed directly from features.
pub fn dissim_matrix_from_features(
    xs: &[&PatchFeatures],
    prototypes: &[&PatchFeatures],
    kind: DissimKind,
) -> Result<Vec<DissimVector>, DspaceError> {
    xs.iter()
        .map(|x| prototypes.iter().map(|p| patch_dissim(x, p, kind).map_err(DspaceError::from)).collect())
        .collect()
}

fn check_ids(table: &DissimTable, ids: impl IntoIterator<Item = PatchId>) -> Result<(), DspaceError> {
    for id in ids {
        if !table.contains(id) {
            return Err(DspaceError::UnknownId(id));
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingEntry {
    pub id: PatchId,
    pub label: Label,
    pub vector: DissimVector,
}

/// Labelled dissimilarity vectors `T = R ∪ NR`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainingSet {
    entries: Vec<TrainingEntry>,
}

impl TrainingSet {
    pub fn new(entries: Vec<TrainingEntry>) -> Result<Self, DspaceError> {
        let mut seen = std::collections::HashSet::new();
        if let Some(e) = entries.iter().find(|e| !seen.insert(e.id)) {
            return Err(DspaceError::DuplicateId(e.id));
        }
        if let Some(e) = entries.first() {
            let r = e.vector.len();
            if let Some(bad) = entries.iter().find(|e| e.vector.len() != r) {
                return Err(DspaceError::DimensionMismatch { expected: r, got: bad.vector.len() });
            }
        }
        Ok(Self { entries })
    }

    /// Builds the set for `labels` with vectors against `prototypes`.
    pub fn from_table(
        table: &DissimTable,
        labels: &[(PatchId, Label)],
        prototypes: &PrototypeSet,
    ) -> Result<Self, DspaceError> {
        let entries = labels
            .iter()
            .map(|&(id, label)| Ok(TrainingEntry { id, label, vector: dissim_vector(table, id, prototypes)? }))
            .collect::<Result<Vec<_>, DspaceError>>()?;
        Self::new(entries)
    }

    pub fn entries(&self) -> &[TrainingEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn dim(&self) -> Option<usize> {
        self.entries.first().map(|e| e.vector.len())
    }

    pub fn count(&self, label: Label) -> usize {
        self.entries.iter().filter(|e| e.label == label).count()
    }
}

pub(crate) fn sq_euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table() -> DissimTable {
        #[rustfmt::skip]
        let v = vec![
            0.0, 1.0, 2.0,
            1.0, 0.0, 3.0,
            2.0, 3.0, 0.0,
        ];
        DissimTable::from_values(DissimKind::Spectral, 3, v).unwrap()
    }

    #[test]
    fn matrix_shapes_and_values() {
        let t = table();
        let all = PrototypeSet::new(vec![1, 2, 3], PrototypeKind::Online).unwrap();
        let m = dissim_matrix(&t, &[1, 2, 3], &all).unwrap();
        assert!((0..3).all(|i| m[i][i] == 0.0));
        let p = PrototypeSet::new(vec![3, 1], PrototypeKind::Online).unwrap();
        assert_eq!(dissim_matrix(&t, &[1, 2, 3], &p).unwrap(), vec![vec![2.0, 0.0], vec![3.0, 1.0], vec![0.0, 2.0]]);
        let single = PrototypeSet::new(vec![2], PrototypeKind::Offline).unwrap();
        assert_eq!(dissim_matrix(&t, &[1, 3], &single).unwrap(), vec![vec![1.0], vec![3.0]]);
        assert!(matches!(dissim_vector(&t, 4, &single), Err(DspaceError::UnknownId(4))));
    }

    #[test]
    fn prototype_sets_validate_and_round_trip() {
        assert!(PrototypeSet::new(vec![], PrototypeKind::Online).is_err());
        assert!(matches!(PrototypeSet::new(vec![1, 2, 1], PrototypeKind::Online), Err(DspaceError::DuplicateId(1))));
        let p = PrototypeSet::new(vec![4, 2, 9], PrototypeKind::Offline).unwrap();
        let csv = p.to_csv(DissimKind::NddByband);
        assert_eq!(csv, "patch_id,kind\n4,ndd-byband\n2,ndd-byband\n9,ndd-byband\n");
        assert_eq!(PrototypeSet::from_csv(&csv, PrototypeKind::Offline).unwrap(), (p, DissimKind::NddByband));
        assert!(PrototypeSet::from_csv("patch_id,kind\n1,spectral\n2,ndd-avg\n", PrototypeKind::Offline).is_err());
    }

    #[test]
    fn training_set_checks() {
        let e = |id, label, vector| TrainingEntry { id, label, vector };
        assert!(TrainingSet::new(vec![e(1, Label::Positive, vec![0.0]), e(1, Label::Negative, vec![1.0])]).is_err());
        assert!(TrainingSet::new(vec![e(1, Label::Positive, vec![0.0]), e(2, Label::Negative, vec![1.0, 2.0])]).is_err());
        let t = TrainingSet::from_table(
            &table(),
            &[(1, Label::Positive), (3, Label::Negative)],
            &PrototypeSet::new(vec![1], PrototypeKind::Online).unwrap(),
        )
        .unwrap();
        assert_eq!((t.len(), t.dim(), t.count(Label::Negative)), (2, Some(1), 1));
    }
}
