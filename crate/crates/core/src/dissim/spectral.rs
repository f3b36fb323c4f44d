//! Unmixing-based dissimilarities: endmember angles, the spectral
//! dissimilarity over row/column minima, and the abundance-weighted
//! spectral-spatial dissimilarity with MSHP significances.

use super::DissimError;
use crate::unmixing::{EndmemberSet, UnmixingChar};

/// Angle between two spectra in radians, in `[0, π]`.
pub fn angular_distance(a: &[f64], b: &[f64]) -> Result<f64, DissimError> {
    if a.len() != b.len() {
        return Err(DissimError::Domain(format!("spectra of length {} and {}", a.len(), b.len())));
    }
    let na = a.iter().map(|v| v * v).sum::<f64>().sqrt();
    let nb = b.iter().map(|v| v * v).sum::<f64>().sqrt();
    if !(na > 0.0 && nb > 0.0) {
        return Err(DissimError::Domain("zero spectrum has no angle".into()));
    }
    // arccos(cos θ) loses half the digits near θ = 0, so the angle is taken
    // from the chord lengths of the unit vectors: θ = 2·atan2(|u−v|, |u+v|).
    let (mut diff, mut sum) = (0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (u, v) = (x / na, y / nb);
        diff += (u - v) * (u - v);
        sum += (u + v) * (u + v);
    }
    Ok((2.0 * diff.sqrt().atan2(sum.sqrt())).clamp(0.0, std::f64::consts::PI))
}

/// `rows x cols` matrix of angles between two endmember sets.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralDistanceMatrix {
    rows: usize,
    cols: usize,
    values: Vec<f64>,
}

impl SpectralDistanceMatrix {
    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self, DissimError> {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        if r == 0 || c == 0 || rows.iter().any(|row| row.len() != c) {
            return Err(DissimError::Domain("distance matrix must be non-empty and rectangular".into()));
        }
        if rows.iter().flatten().any(|v| !(*v >= 0.0)) {
            return Err(DissimError::Domain("distances must be nonnegative".into()));
        }
        Ok(Self { rows: r, cols: c, values: rows.concat() })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.cols + j]
    }

    pub fn transpose(&self) -> Self {
        let mut values = Vec::with_capacity(self.values.len());
        for j in 0..self.cols {
            for i in 0..self.rows {
                values.push(self.get(i, j));
            }
        }
        Self { rows: self.cols, cols: self.rows, values }
    }

    pub fn max(&self) -> f64 {
        self.values.iter().cloned().fold(0.0, f64::max)
    }

    pub fn row_minima(&self) -> Vec<f64> {
        (0..self.rows)
            .map(|i| (0..self.cols).map(|j| self.get(i, j)).fold(f64::INFINITY, f64::min))
            .collect()
    }

    pub fn col_minima(&self) -> Vec<f64> {
        (0..self.cols)
            .map(|j| (0..self.rows).map(|i| self.get(i, j)).fold(f64::INFINITY, f64::min))
            .collect()
    }
}

pub fn sdm(a: &EndmemberSet, b: &EndmemberSet) -> Result<SpectralDistanceMatrix, DissimError> {
    let rows = a
        .vectors()
        .iter()
        .map(|ea| b.vectors().iter().map(|eb| angular_distance(ea, eb)).collect::<Result<Vec<_>, _>>())
        .collect::<Result<Vec<_>, _>>()?;
    SpectralDistanceMatrix::from_rows(rows)
}

fn l2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// ‖row minima‖₂ + ‖column minima‖₂ of the SDM.
pub fn spectral_dissim(a: &EndmemberSet, b: &EndmemberSet) -> Result<f64, DissimError> {
    let d = sdm(a, b)?;
    Ok(l2(&d.row_minima()) + l2(&d.col_minima()))
}

/// Mass assignment between the endmembers of two patches.
#[derive(Debug, Clone, PartialEq)]
pub struct SignificanceMatrix {
    rows: usize,
    cols: usize,
    values: Vec<f64>,
}

impl SignificanceMatrix {
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.cols + j]
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn total(&self) -> f64 {
        self.values.iter().sum()
    }

    pub fn row_sums(&self) -> Vec<f64> {
        self.values.chunks_exact(self.cols).map(|r| r.iter().sum()).collect()
    }

    pub fn col_sums(&self) -> Vec<f64> {
        (0..self.cols).map(|j| (0..self.rows).map(|i| self.get(i, j)).sum()).collect()
    }
}

const MASS_TOL: f64 = 1e-6;

fn check_mass(s: &[f64], name: &str) -> Result<f64, DissimError> {
    if s.iter().any(|v| !(*v >= 0.0)) {
        return Err(DissimError::Mass(format!("{name} has negative or NaN weights")));
    }
    let total: f64 = s.iter().sum();
    if (total - 1.0).abs() > MASS_TOL {
        return Err(DissimError::Mass(format!("{name} sums to {total}, expected 1")));
    }
    Ok(total)
}

/// Most-similar-highest-priority significances: cells are visited by
/// increasing distance (ties by row, then column) and each receives as much
/// of the remaining row and column mass as both still hold.
pub fn mshp_significance(d: &SpectralDistanceMatrix, s_a: &[f64], s_b: &[f64]) -> Result<SignificanceMatrix, DissimError> {
    if s_a.len() != d.rows || s_b.len() != d.cols {
        return Err(DissimError::Mass(format!(
            "weights of length {}/{} for a {}x{} matrix",
            s_a.len(),
            s_b.len(),
            d.rows,
            d.cols
        )));
    }
    let ta = check_mass(s_a, "row weights")?;
    let tb = check_mass(s_b, "column weights")?;
    if (ta - tb).abs() > MASS_TOL {
        return Err(DissimError::Mass(format!("row mass {ta} differs from column mass {tb}")));
    }
    let mut cells: Vec<(usize, usize)> = (0..d.rows).flat_map(|i| (0..d.cols).map(move |j| (i, j))).collect();
    cells.sort_by(|&(i1, j1), &(i2, j2)| d.get(i1, j1).total_cmp(&d.get(i2, j2)).then(i1.cmp(&i2)).then(j1.cmp(&j2)));
    let mut rem_a = s_a.to_vec();
    let mut rem_b = s_b.to_vec();
    let mut values = vec![0.0; d.rows * d.cols];
    for (i, j) in cells {
        let amount = rem_a[i].min(rem_b[j]);
        if amount > 0.0 {
            values[i * d.cols + j] = amount;
            rem_a[i] -= amount;
            rem_b[j] -= amount;
        }
    }
    Ok(SignificanceMatrix { rows: d.rows, cols: d.cols, values })
}

/// Σᵢⱼ rᵢⱼ dᵢⱼ with MSHP significances from the normalised average abundances.
pub fn spectral_spatial_dissim(a: &UnmixingChar, b: &UnmixingChar) -> Result<f64, DissimError> {
    let d = sdm(&a.endmembers, &b.endmembers)?;
    let r = mshp_significance(&d, &a.avg_abundance, &b.avg_abundance)?;
    Ok(r.values.iter().zip(&d.values).map(|(r, d)| r * d).sum())
}
