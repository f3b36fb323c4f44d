//! Precomputed N×N dissimilarity tables and their CSV form.
//!
//! ```text
//! patch_id,1,2,...,N
//! 1,0,0.31,...
//! ```

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use super::{patch_dissim_with, DissimError, DissimKind, NddMode, PatchFeatures};
use crate::PatchId;

#[derive(Debug, thiserror::Error)]
pub enum TableError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error(transparent)]
    Dissim(#[from] DissimError),
}

/// Dissimilarities between every pair of patches `1..=N`, row-major by
/// `(id_a - 1, id_b - 1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DissimTable {
    kind: DissimKind,
    n: usize,
    values: Vec<f64>,
}

impl DissimTable {
    pub fn from_values(kind: DissimKind, n: usize, values: Vec<f64>) -> Result<Self, DissimError> {
        if n == 0 || values.len() != n * n {
            return Err(DissimError::Incompatible(format!("{} values for a {n}x{n} table", values.len())));
        }
        if values.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(DissimError::Domain("dissimilarities must be finite and nonnegative".into()));
        }
        Ok(Self { kind, n, values })
    }

    /// Computes every ordered pair. `features[i]` must describe patch `i + 1`.
    pub fn compute(features: &[PatchFeatures], kind: DissimKind, mode: NddMode) -> Result<Self, DissimError> {
        if let Some((i, f)) = features.iter().enumerate().find(|(i, f)| f.id as usize != i + 1) {
            return Err(DissimError::Incompatible(format!("feature {i} belongs to patch {}", f.id)));
        }
        let n = features.len();
        let rows: Vec<Vec<f64>> = features
            .par_iter()
            .map(|a| features.iter().map(|b| patch_dissim_with(a, b, kind, mode)).collect::<Result<_, _>>())
            .collect::<Result<_, _>>()?;
        Self::from_values(kind, n, rows.concat())
    }

    pub fn kind(&self) -> DissimKind {
        self.kind
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn ids(&self) -> impl Iterator<Item = PatchId> {
        1..=self.n as PatchId
    }

    pub fn contains(&self, id: PatchId) -> bool {
        id >= 1 && id as usize <= self.n
    }

    pub fn get(&self, a: PatchId, b: PatchId) -> f64 {
        self.values[(a as usize - 1) * self.n + (b as usize - 1)]
    }

    /// Dissimilarities from `a` to every patch, indexed by `id - 1`.
    pub fn row(&self, a: PatchId) -> &[f64] {
        let i = a as usize - 1;
        &self.values[i * self.n..(i + 1) * self.n]
    }

    pub fn max_asymmetry(&self) -> f64 {
        let mut worst = 0.0f64;
        for i in 0..self.n {
            for j in i + 1..self.n {
                worst = worst.max((self.values[i * self.n + j] - self.values[j * self.n + i]).abs());
            }
        }
        worst
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("patch_id");
        for id in self.ids() {
            out.push_str(&format!(",{id}"));
        }
        out.push('\n');
        for (i, row) in self.values.chunks_exact(self.n).enumerate() {
            out.push_str(&(i + 1).to_string());
            for v in row {
                // `{}` prints the shortest representation that round-trips
                out.push_str(&format!(",{v}"));
            }
            out.push('\n');
        }
        out
    }

    pub fn from_csv(kind: DissimKind, text: &str) -> Result<Self, TableError> {
        let err = |line: usize, msg: String| TableError::Parse { line, msg };
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (_, header) = lines.next().ok_or_else(|| err(1, "empty table".into()))?;
        let cols: Vec<&str> = header.split(',').map(str::trim).collect();
        if cols.first() != Some(&"patch_id") {
            return Err(err(1, "header must start with patch_id".into()));
        }
        let n = cols.len() - 1;
        for (j, c) in cols[1..].iter().enumerate() {
            if c.parse::<usize>().ok() != Some(j + 1) {
                return Err(err(1, format!("column {} should be patch {}", j + 1, j + 1)));
            }
        }
        let mut values = Vec::with_capacity(n * n);
        let mut rows = 0;
        for (lineno, line) in lines {
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            if fields.len() != n + 1 || fields[0].parse::<usize>().ok() != Some(rows + 1) {
                return Err(err(lineno + 1, format!("expected row for patch {} with {n} values", rows + 1)));
            }
            for f in &fields[1..] {
                values.push(f.parse::<f64>().map_err(|e| err(lineno + 1, format!("`{f}`: {e}")))?);
            }
            rows += 1;
        }
        if rows != n {
            return Err(err(0, format!("{rows} rows for {n} columns")));
        }
        Ok(Self::from_values(kind, n, values)?)
    }

    pub fn file_name(kind: DissimKind) -> String {
        format!("distmat_{kind}.csv")
    }

    pub fn save(&self, dir: &Path) -> Result<PathBuf, TableError> {
        let path = dir.join(Self::file_name(self.kind));
        fs::write(&path, self.to_csv()).map_err(|source| TableError::Io { path: path.clone(), source })?;
        Ok(path)
    }

    pub fn load(dir: &Path, kind: DissimKind) -> Result<Self, TableError> {
        let path = dir.join(Self::file_name(kind));
        let text = fs::read_to_string(&path).map_err(|source| TableError::Io { path, source })?;
        Self::from_csv(kind, &text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table() -> DissimTable {
        DissimTable::from_values(DissimKind::NddAvg, 3, vec![0.0, 0.1, 0.7, 0.1, 0.0, 1.0 / 3.0, 0.7, 1.0 / 3.0, 0.0]).unwrap()
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let t = table();
        let csv = t.to_csv();
        assert!(csv.starts_with("patch_id,1,2,3\n1,0,0.1,0.7\n"));
        assert_eq!(DissimTable::from_csv(DissimKind::NddAvg, &csv).unwrap(), t);
        let dir = tempfile::tempdir().unwrap();
        let path = t.save(dir.path()).unwrap();
        assert!(path.ends_with("distmat_ndd-avg.csv"));
        assert_eq!(DissimTable::load(dir.path(), DissimKind::NddAvg).unwrap(), t);
    }

    #[test]
    fn accessors() {
        let t = table();
        assert_eq!(t.get(3, 2), 1.0 / 3.0);
        assert_eq!(t.row(1), &[0.0, 0.1, 0.7]);
        assert_eq!(t.max_asymmetry(), 0.0);
        assert!(t.contains(3) && !t.contains(0) && !t.contains(4));
    }

    #[test]
    fn malformed_csv_is_rejected() {
        for bad in ["", "id,1\n1,0\n", "patch_id,1,2\n1,0,1\n", "patch_id,1\n1,x\n", "patch_id,1\n2,0\n", "patch_id,1\n1,-1\n"] {
            assert!(DissimTable::from_csv(DissimKind::Spectral, bad).is_err(), "{bad:?}");
        }
    }
}
