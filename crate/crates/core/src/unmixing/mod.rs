//! Endmember induction and abundance estimation.
//!
//! A patch is characterised by the endmembers VCA induces from it and the
//! nonnegative abundances NNLS assigns to every pixel. Because VCA is
//! stochastic, [`characterize`] repeats it over consecutive seeds and keeps
//! the run with the lowest mean per-pixel RMS reconstruction error.

mod cache;
mod nnls;
mod vca;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use cache::{cache_path, read_record, write_record, CacheKey};
pub use nnls::{nnls, Nnls};
pub use vca::{SubspaceMode, VcaProjection};

use crate::cube::Patch;

#[derive(Debug, Error)]
pub enum UnmixError {
    #[error("cannot extract {m} endmembers from {pixels} pixels with {bands} bands")]
    InvalidEndmemberCount { m: usize, bands: usize, pixels: usize },
    #[error("degenerate input: {0}")]
    Degenerate(String),
    #[error("invalid endmember set: {0}")]
    InvalidEndmembers(String),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("cache: {0}")]
    Cache(String),
    #[error("cache i/o: {0}")]
    Io(#[from] std::io::Error),
}

/// Induced endmember spectra `e_1..e_m`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EndmemberSet {
    vectors: Vec<Vec<f64>>,
}

impl EndmemberSet {
    pub fn new(vectors: Vec<Vec<f64>>) -> Result<Self, UnmixError> {
        let q = vectors.first().map(Vec::len).ok_or_else(|| UnmixError::InvalidEndmembers("empty set".into()))?;
        for (i, v) in vectors.iter().enumerate() {
            if v.len() != q || q == 0 {
                return Err(UnmixError::InvalidEndmembers(format!("endmember {i} has {} bands", v.len())));
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(UnmixError::InvalidEndmembers(format!("endmember {i} is not finite")));
            }
            if v.iter().all(|&x| x == 0.0) {
                return Err(UnmixError::InvalidEndmembers(format!("endmember {i} is zero")));
            }
        }
        Ok(Self { vectors })
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn bands(&self) -> usize {
        self.vectors[0].len()
    }

    pub fn vectors(&self) -> &[Vec<f64>] {
        &self.vectors
    }

    pub fn get(&self, i: usize) -> &[f64] {
        &self.vectors[i]
    }
}

/// Per-pixel abundance vectors, pixel-major: pixel `i` owns
/// `values[i*m..(i+1)*m]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AbundanceMaps {
    m: usize,
    values: Vec<f64>,
}

impl AbundanceMaps {
    pub fn new(m: usize, values: Vec<f64>) -> Result<Self, UnmixError> {
        if m == 0 || values.len() % m != 0 {
            return Err(UnmixError::DimensionMismatch(format!("{} values for {m} endmembers", values.len())));
        }
        if values.iter().any(|&v| !(v >= 0.0)) {
            return Err(UnmixError::InvalidEndmembers("negative or NaN abundance".into()));
        }
        Ok(Self { m, values })
    }

    pub fn n_endmembers(&self) -> usize {
        self.m
    }

    pub fn n_pixels(&self) -> usize {
        self.values.len() / self.m
    }

    pub fn pixel(&self, i: usize) -> &[f64] {
        &self.values[i * self.m..(i + 1) * self.m]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Abundance map of endmember `k` across all pixels.
    pub fn map(&self, k: usize) -> Vec<f64> {
        self.values.chunks_exact(self.m).map(|a| a[k]).collect()
    }

    /// Mean abundance per endmember, normalised to sum to one. All-zero
    /// abundances yield the uniform vector.
    pub fn normalized_average(&self) -> Vec<f64> {
        let mut avg = vec![0.0; self.m];
        for a in self.values.chunks_exact(self.m) {
            for (s, v) in avg.iter_mut().zip(a) {
                *s += v;
            }
        }
        let total: f64 = avg.iter().sum();
        if total > 0.0 {
            avg.iter_mut().for_each(|v| *v /= total);
        } else {
            avg.iter_mut().for_each(|v| *v = 1.0 / self.m as f64);
        }
        avg
    }
}

/// Spectral-spatial characterisation `(E, Φ)` of one patch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnmixingChar {
    pub endmembers: EndmemberSet,
    pub abundances: AbundanceMaps,
    /// Normalised average abundance per endmember; sums to one.
    pub avg_abundance: Vec<f64>,
    /// Reconstruction error of the kept run.
    pub error: f64,
}

impl UnmixingChar {
    pub fn from_parts(endmembers: EndmemberSet, abundances: AbundanceMaps, error: f64) -> Result<Self, UnmixError> {
        if endmembers.len() != abundances.n_endmembers() {
            return Err(UnmixError::DimensionMismatch("endmember and abundance counts differ".into()));
        }
        let avg_abundance = abundances.normalized_average();
        Ok(Self { endmembers, abundances, avg_abundance, error })
    }
}

/// VCA settings shared by every run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UnmixOptions {
    pub m: usize,
    pub runs: usize,
    pub seed: u64,
    pub mode: SubspaceMode,
}

impl Default for UnmixOptions {
    fn default() -> Self {
        Self { m: 5, runs: 20, seed: 1, mode: SubspaceMode::Auto }
    }
}

fn patch_pixels(patch: &Patch) -> Vec<&[f64]> {
    patch.cube.pixels().collect()
}

/// Selects `m` pixels as endmembers.
pub fn vca(pixels: &[&[f64]], m: usize, seed: u64, mode: SubspaceMode) -> Result<EndmemberSet, UnmixError> {
    if pixels.is_empty() {
        return Err(UnmixError::InvalidEndmemberCount { m, bands: 0, pixels: 0 });
    }
    let proj = VcaProjection::new(&vca::pixel_matrix(pixels), m, mode)?;
    let idx = proj.select(seed)?;
    EndmemberSet::new(idx.iter().map(|&i| pixels[i].to_vec()).collect())
}

/// NNLS abundances of every pixel against `endmembers`.
pub fn nnls_abundances(pixels: &[&[f64]], endmembers: &EndmemberSet) -> Result<AbundanceMaps, UnmixError> {
    if let Some(p) = pixels.iter().find(|p| p.len() != endmembers.bands()) {
        return Err(UnmixError::DimensionMismatch(format!(
            "pixel has {} bands, endmembers {}",
            p.len(),
            endmembers.bands()
        )));
    }
    let solver = Nnls::new(endmembers.vectors());
    let values = pixels.iter().flat_map(|p| solver.solve(p)).collect();
    AbundanceMaps::new(endmembers.len(), values)
}

/// Mean over pixels of the per-pixel RMS error of `Ĥ = Φ E`.
pub fn reconstruction_error(
    pixels: &[&[f64]],
    endmembers: &EndmemberSet,
    abundances: &AbundanceMaps,
) -> Result<f64, UnmixError> {
    if abundances.n_pixels() != pixels.len() || abundances.n_endmembers() != endmembers.len() {
        return Err(UnmixError::DimensionMismatch(format!(
            "{} pixels / {} endmembers vs abundances for {} / {}",
            pixels.len(),
            endmembers.len(),
            abundances.n_pixels(),
            abundances.n_endmembers()
        )));
    }
    if pixels.is_empty() {
        return Ok(0.0);
    }
    let q = endmembers.bands();
    let mut total = 0.0;
    for (i, p) in pixels.iter().enumerate() {
        if p.len() != q {
            return Err(UnmixError::DimensionMismatch("band count".into()));
        }
        let a = abundances.pixel(i);
        let sq: f64 = (0..q)
            .map(|j| {
                let h: f64 = a.iter().zip(endmembers.vectors()).map(|(w, e)| w * e[j]).sum();
                (p[j] - h).powi(2)
            })
            .sum();
        total += (sq / q as f64).sqrt();
    }
    Ok(total / pixels.len() as f64)
}

/// Runs VCA + NNLS for seeds `seed..seed+runs` and keeps the run with the
/// lowest reconstruction error (earliest on ties). Also returns every run's
/// error.
pub fn characterize_logged(patch: &Patch, opts: &UnmixOptions) -> Result<(UnmixingChar, Vec<f64>), UnmixError> {
    let pixels = patch_pixels(patch);
    let proj = VcaProjection::new(&vca::pixel_matrix(&pixels), opts.m, opts.mode)?;
    let mut best: Option<(f64, EndmemberSet, AbundanceMaps)> = None;
    let mut log = Vec::with_capacity(opts.runs.max(1));
    for r in 0..opts.runs.max(1) {
        let idx = proj.select(opts.seed.wrapping_add(r as u64))?;
        let e = EndmemberSet::new(idx.iter().map(|&i| pixels[i].to_vec()).collect())?;
        let a = nnls_abundances(&pixels, &e)?;
        let err = reconstruction_error(&pixels, &e, &a)?;
        log.push(err);
        if best.as_ref().is_none_or(|(b, _, _)| err < *b) {
            best = Some((err, e, a));
        }
    }
    let (err, e, a) = best.expect("at least one run");
    Ok((UnmixingChar::from_parts(e, a, err)?, log))
}

pub fn characterize(patch: &Patch, opts: &UnmixOptions) -> Result<UnmixingChar, UnmixError> {
    characterize_logged(patch, opts).map(|(c, _)| c)
}

/// Like [`characterize`], but when the patch spans fewer dimensions than
/// `opts.m` the endmember count is lowered until VCA succeeds.
pub fn characterize_adaptive(patch: &Patch, opts: &UnmixOptions) -> Result<UnmixingChar, UnmixError> {
    let mut o = *opts;
    loop {
        match characterize(patch, &o) {
            Err(UnmixError::Degenerate(_)) if o.m > 1 => o.m -= 1,
            other => return other,
        }
    }
}
