//! Vertex component analysis.
//!
//! Pixels are first projected onto a low-dimensional signal subspace, then
//! `m` pixels are picked one at a time: each step draws a Gaussian direction,
//! removes its component in the span of the pixels selected so far and keeps
//! the pixel with the largest absolute projection on what remains.
//!
//! The subspace step has two branches chosen by an SNR estimate against
//! `15 + 10·log10(m)` dB: a projective projection onto the top `m`
//! eigenvectors of the correlation matrix (high SNR) or a PCA projection of
//! the centred data onto `m − 1` components lifted by a constant coordinate
//! (low SNR).

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::UnmixError;

/// Subspace projection used before vertex selection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum SubspaceMode {
    /// Pick by SNR estimate.
    #[default]
    Auto,
    /// Force the centred PCA branch.
    Pca,
    /// Force the projective branch.
    Projective,
}

const RANK_TOL: f64 = 1e-12;

/// Deterministic part of VCA: the projected pixels, computed once per patch
/// and reused across seeded runs.
#[derive(Debug, Clone)]
pub struct VcaProjection {
    /// `m x N` projected pixels.
    projected: DMatrix<f64>,
    m: usize,
    snr_db: f64,
    used_projective: bool,
}

/// Eigenpairs of a symmetric matrix sorted by decreasing eigenvalue.
fn top_eigenvectors(mat: &DMatrix<f64>, k: usize) -> (Vec<f64>, DMatrix<f64>) {
    let eig = SymmetricEigen::new(mat.clone());
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let values = order.iter().take(k).map(|&i| eig.eigenvalues[i]).collect();
    let rows = mat.nrows();
    let vectors = DMatrix::from_fn(rows, k, |r, c| eig.eigenvectors[(r, order[c])]);
    (values, vectors)
}

impl VcaProjection {
    /// `pixels` is `q x N`, one column per pixel.
    pub fn new(pixels: &DMatrix<f64>, m: usize, mode: SubspaceMode) -> Result<Self, UnmixError> {
        let (q, n) = pixels.shape();
        if m == 0 || m > q || m > n {
            return Err(UnmixError::InvalidEndmemberCount { m, bands: q, pixels: n });
        }
        let first = pixels.column(0);
        if pixels.column_iter().all(|c| c == first) {
            return Err(UnmixError::Degenerate("all pixels are identical".into()));
        }
        let nf = n as f64;
        let corr = pixels * pixels.transpose() / nf;

        if m == 1 {
            let (values, u) = top_eigenvectors(&corr, 1);
            if !(values[0] > 0.0) {
                return Err(UnmixError::Degenerate("zero signal energy".into()));
            }
            let projected = u.transpose() * pixels;
            return Ok(Self { projected, m, snr_db: f64::INFINITY, used_projective: true });
        }

        let mean: DVector<f64> = pixels.column_mean();
        let centred = DMatrix::from_fn(q, n, |r, c| pixels[(r, c)] - mean[r]);
        let cov = &centred * centred.transpose() / nf;
        let (cov_values, cov_vectors) = top_eigenvectors(&cov, m);
        let xp = cov_vectors.transpose() * &centred;

        let p_y = pixels.norm_squared() / nf;
        let p_x = xp.norm_squared() / nf + mean.norm_squared();
        let denom = p_y - p_x;
        let snr_db = if denom <= 0.0 {
            f64::INFINITY
        } else {
            10.0 * ((p_x - m as f64 / q as f64 * p_y) / denom).log10()
        };
        let snr_db = if snr_db.is_nan() { f64::NEG_INFINITY } else { snr_db };
        let threshold = 15.0 + 10.0 * (m as f64).log10();
        let projective = match mode {
            SubspaceMode::Auto => snr_db > threshold,
            SubspaceMode::Pca => false,
            SubspaceMode::Projective => true,
        };

        let projected = if projective {
            let (values, ud) = top_eigenvectors(&corr, m);
            if !(values[m - 1] > RANK_TOL * values[0]) {
                return Err(UnmixError::Degenerate(format!("pixels span fewer than {m} dimensions")));
            }
            let x = ud.transpose() * pixels;
            let u: DVector<f64> = x.column_mean();
            let scale = x.column_iter().map(|c| c.norm()).fold(0.0, f64::max) * u.norm();
            let mut y = x.clone();
            for (j, mut col) in y.column_iter_mut().enumerate() {
                let d = x.column(j).dot(&u);
                if !(d.abs() > RANK_TOL * scale) {
                    return Err(UnmixError::Degenerate("projective projection is singular".into()));
                }
                col /= d;
            }
            y
        } else {
            if !(cov_values[m - 2] > RANK_TOL * cov_values[0]) {
                return Err(UnmixError::Degenerate(format!("pixels span fewer than {} affine dimensions", m - 1)));
            }
            let x = xp.rows(0, m - 1).into_owned();
            let c = x.column_iter().map(|col| col.norm()).fold(0.0, f64::max);
            let mut y = DMatrix::from_element(m, n, c);
            y.rows_mut(0, m - 1).copy_from(&x);
            y
        };
        Ok(Self { projected, m, snr_db, used_projective: projective })
    }

    pub fn snr_db(&self) -> f64 {
        self.snr_db
    }

    pub fn used_projective(&self) -> bool {
        self.used_projective
    }

    /// Pixel indices of the `m` selected vertices for the given seed.
    pub fn select(&self, seed: u64) -> Result<Vec<usize>, UnmixError> {
        let m = self.m;
        let y = &self.projected;
        if m == 1 {
            return Ok(vec![argmax_abs(y.row(0).iter().copied())]);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        // orthonormal basis of the span to remove; starts as the last axis
        let mut basis: Vec<DVector<f64>> = vec![{
            let mut e = DVector::zeros(m);
            e[m - 1] = 1.0;
            e
        }];
        let mut chosen = Vec::with_capacity(m);
        for step in 0..m {
            let mut f = None;
            for _ in 0..16 {
                let w = DVector::from_fn(m, |_, _| StandardNormal.sample(&mut rng));
                let mut r = w.clone();
                for b in &basis {
                    r -= b * b.dot(&r);
                }
                let norm = r.norm();
                if norm > 1e-10 * w.norm() {
                    f = Some(r / norm);
                    break;
                }
            }
            let f = f.ok_or_else(|| UnmixError::Degenerate("selected pixels span the whole subspace".into()))?;
            let v = f.transpose() * y;
            let k = argmax_abs(v.iter().copied());
            chosen.push(k);
            if step == 0 {
                basis.clear();
            }
            let mut col: DVector<f64> = y.column(k).into_owned();
            let orig = col.norm();
            for b in &basis {
                col -= b * b.dot(&col);
            }
            let nrm = col.norm();
            if nrm > 1e-10 * orig {
                basis.push(col / nrm);
            }
        }
        Ok(chosen)
    }
}

/// Index of the largest absolute value; ties resolve to the lowest index.
fn argmax_abs(values: impl Iterator<Item = f64>) -> usize {
    let mut best = (0, f64::NEG_INFINITY);
    for (i, v) in values.enumerate() {
        if v.abs() > best.1 {
            best = (i, v.abs());
        }
    }
    best.0
}

pub(crate) fn pixel_matrix(pixels: &[&[f64]]) -> DMatrix<f64> {
    let q = pixels.first().map_or(0, |p| p.len());
    DMatrix::from_fn(q, pixels.len(), |r, c| pixels[c][r])
}
