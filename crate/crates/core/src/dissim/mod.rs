//! The four patch dissimilarities and the per-patch features they need.

mod lzw;
mod spectral;
mod table;

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use lzw::{
    linearize, lzw_dictionary, ndd, ndd_concatenated, quantize, zigzag_order, Linearization, LzwDictionary, Symbol,
    SymbolString, DEFAULT_LEVELS,
};
pub use spectral::{
    angular_distance, mshp_significance, sdm, spectral_dissim, spectral_spatial_dissim, SignificanceMatrix,
    SpectralDistanceMatrix,
};
pub use table::{DissimTable, TableError};

use crate::cube::Patch;
use crate::unmixing::{self, CacheKey, UnmixError, UnmixOptions, UnmixingChar};

#[derive(Debug, thiserror::Error)]
pub enum DissimError {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("invalid abundance mass: {0}")]
    Mass(String),
    #[error("patch {id} has no features for {kind}")]
    MissingFeature { id: crate::PatchId, kind: DissimKind },
    #[error("dictionary distance between two empty signals is undefined")]
    UndefinedDistance,
    #[error("patches are not comparable: {0}")]
    Incompatible(String),
    #[error(transparent)]
    Unmix(#[from] UnmixError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DissimKind {
    Spectral,
    SpectralSpatial,
    NddAvg,
    NddByband,
}

impl DissimKind {
    pub const ALL: [DissimKind; 4] = [Self::Spectral, Self::SpectralSpatial, Self::NddAvg, Self::NddByband];

    pub fn name(self) -> &'static str {
        match self {
            Self::Spectral => "spectral",
            Self::SpectralSpatial => "spectral-spatial",
            Self::NddAvg => "ndd-avg",
            Self::NddByband => "ndd-byband",
        }
    }

    pub fn needs_unmixing(self) -> bool {
        matches!(self, Self::Spectral | Self::SpectralSpatial)
    }
}

impl fmt::Display for DissimKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for DissimKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s.trim())
            .ok_or_else(|| format!("unknown dissimilarity kind `{s}` (expected one of spectral, spectral-spatial, ndd-avg, ndd-byband)"))
    }
}

/// How the joint dictionary `D(x ∪ y)` of the NDD is formed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NddMode {
    /// Set union of the two separately extracted dictionaries.
    #[default]
    Union,
    /// Dictionary of the concatenated strings.
    Concatenation,
}

/// One linearised string and its dictionary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LzwFeature {
    pub string: SymbolString,
    pub dictionary: LzwDictionary,
}

impl LzwFeature {
    pub fn new(string: SymbolString) -> Self {
        let dictionary = lzw_dictionary(&string);
        Self { string, dictionary }
    }

    fn ndd(&self, other: &Self, mode: NddMode) -> Result<f64, DissimError> {
        match mode {
            NddMode::Union => ndd(&self.dictionary, &other.dictionary),
            NddMode::Concatenation => ndd_concatenated(&self.string, &other.string),
        }
    }
}

/// Everything the dissimilarities need from one patch. Absent members were
/// not requested at featurisation time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatchFeatures {
    pub id: crate::PatchId,
    pub unmixing: Option<UnmixingChar>,
    pub averaged: Option<LzwFeature>,
    pub by_band: Option<Vec<LzwFeature>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureOptions {
    pub unmix: UnmixOptions,
    pub levels: usize,
    pub kinds: Vec<DissimKind>,
}

impl Default for FeatureOptions {
    fn default() -> Self {
        Self { unmix: UnmixOptions::default(), levels: DEFAULT_LEVELS, kinds: DissimKind::ALL.to_vec() }
    }
}

impl PatchFeatures {
    /// Computes the features required by `opts.kinds`. The characterisation
    /// falls back to fewer endmembers on rank-deficient patches.
    pub fn compute(patch: &Patch, opts: &FeatureOptions) -> Result<Self, DissimError> {
        let unmixing = if opts.kinds.iter().any(|k| k.needs_unmixing()) {
            Some(unmixing::characterize_adaptive(patch, &opts.unmix)?)
        } else {
            None
        };
        Self::with_unmixing(patch, unmixing, opts)
    }

    fn with_unmixing(patch: &Patch, unmixing: Option<UnmixingChar>, opts: &FeatureOptions) -> Result<Self, DissimError> {
        let averaged = if opts.kinds.contains(&DissimKind::NddAvg) {
            let s = linearize(patch, Linearization::AveragedBand, opts.levels)?.pop().expect("one string");
            Some(LzwFeature::new(s))
        } else {
            None
        };
        let by_band = if opts.kinds.contains(&DissimKind::NddByband) {
            let strings = linearize(patch, Linearization::ByBand, opts.levels)?;
            Some(strings.into_iter().map(LzwFeature::new).collect())
        } else {
            None
        };
        Ok(Self { id: patch.id, unmixing, averaged, by_band })
    }

    pub fn has(&self, kind: DissimKind) -> bool {
        match kind {
            DissimKind::Spectral | DissimKind::SpectralSpatial => self.unmixing.is_some(),
            DissimKind::NddAvg => self.averaged.is_some(),
            DissimKind::NddByband => self.by_band.is_some(),
        }
    }
}

pub fn patch_dissim(a: &PatchFeatures, b: &PatchFeatures, kind: DissimKind) -> Result<f64, DissimError> {
    patch_dissim_with(a, b, kind, NddMode::Union)
}

pub fn patch_dissim_with(a: &PatchFeatures, b: &PatchFeatures, kind: DissimKind, mode: NddMode) -> Result<f64, DissimError> {
    let missing = |f: &PatchFeatures| DissimError::MissingFeature { id: f.id, kind };
    match kind {
        DissimKind::Spectral | DissimKind::SpectralSpatial => {
            let ua = a.unmixing.as_ref().ok_or_else(|| missing(a))?;
            let ub = b.unmixing.as_ref().ok_or_else(|| missing(b))?;
            if kind == DissimKind::Spectral {
                spectral_dissim(&ua.endmembers, &ub.endmembers)
            } else {
                spectral_spatial_dissim(ua, ub)
            }
        }
        DissimKind::NddAvg => {
            let fa = a.averaged.as_ref().ok_or_else(|| missing(a))?;
            let fb = b.averaged.as_ref().ok_or_else(|| missing(b))?;
            fa.ndd(fb, mode)
        }
        DissimKind::NddByband => {
            let fa = a.by_band.as_ref().ok_or_else(|| missing(a))?;
            let fb = b.by_band.as_ref().ok_or_else(|| missing(b))?;
            if fa.len() != fb.len() || fa.is_empty() {
                return Err(DissimError::Incompatible(format!("{} vs {} bands", fa.len(), fb.len())));
            }
            let mut total = 0.0;
            for (x, y) in fa.iter().zip(fb) {
                total += x.ndd(y, mode)?;
            }
            Ok(total / fa.len() as f64)
        }
    }
}

/// Featurises every patch in parallel. With a cache directory, the
/// characterisations are read from and written to flat records there, so an
/// interrupted run resumes without recomputing finished patches.
pub fn featurize_corpus(
    patches: &[Patch],
    opts: &FeatureOptions,
    cache_dir: Option<&Path>,
) -> Result<Vec<PatchFeatures>, DissimError> {
    patches.par_iter().map(|p| featurize_cached(p, opts, cache_dir)).collect()
}

fn featurize_cached(patch: &Patch, opts: &FeatureOptions, cache_dir: Option<&Path>) -> Result<PatchFeatures, DissimError> {
    let (Some(dir), true) = (cache_dir, opts.kinds.iter().any(|k| k.needs_unmixing())) else {
        return PatchFeatures::compute(patch, opts);
    };
    let key = CacheKey { patch_id: patch.id, m: opts.unmix.m as u32, seed: opts.unmix.seed };
    let path = unmixing::cache_path(dir, key);
    if path.exists() {
        if let Ok((k, runs, c)) = unmixing::read_record(&path) {
            if k == key && runs as usize == opts.unmix.runs && c.abundances.n_pixels() == patch.cube.n_pixels() {
                return PatchFeatures::with_unmixing(patch, Some(c), opts);
            }
        }
    }
    let c = unmixing::characterize_adaptive(patch, &opts.unmix)?;
    unmixing::write_record(&path, key, opts.unmix.runs as u32, &c)?;
    PatchFeatures::with_unmixing(patch, Some(c), opts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cube::{synth_corpus, SynthConfig};
    use crate::HyperCube;

    fn small_corpus() -> Vec<Patch> {
        synth_corpus(&SynthConfig::balanced(2, 2, 6, 8, 0.01, 3)).unwrap().0
    }

    fn quick() -> FeatureOptions {
        FeatureOptions { unmix: UnmixOptions { m: 3, runs: 2, ..Default::default() }, ..Default::default() }
    }

    #[test]
    fn kind_names_round_trip() {
        for k in DissimKind::ALL {
            assert_eq!(k.to_string().parse::<DissimKind>().unwrap(), k);
            assert_eq!(serde_json::to_string(&k).unwrap(), format!("\"{k}\""));
        }
        assert!("euclid".parse::<DissimKind>().is_err());
    }

    #[test]
    fn self_dissimilarity_is_zero_and_pairs_symmetric() {
        let patches = small_corpus();
        let feats = featurize_corpus(&patches, &quick(), None).unwrap();
        for k in DissimKind::ALL {
            assert!(patch_dissim(&feats[0], &feats[0], k).unwrap().abs() < 1e-12, "{k}");
            let ab = patch_dissim(&feats[0], &feats[1], k).unwrap();
            let ba = patch_dissim(&feats[1], &feats[0], k).unwrap();
            assert!(ab >= 0.0);
            if k != DissimKind::SpectralSpatial {
                assert_eq!(ab, ba, "{k}");
            }
        }
    }

    #[test]
    fn byband_on_single_band_equals_plain_ndd() {
        let cube = HyperCube::new(2, 3, 1, vec![0.0, 1.0, 4.0, 2.0, 2.0, 9.0]).unwrap();
        let other = HyperCube::new(2, 3, 1, vec![5.0, 1.0, 1.0, 2.0, 0.0, 3.0]).unwrap();
        let opts = FeatureOptions { kinds: vec![DissimKind::NddAvg, DissimKind::NddByband], ..Default::default() };
        let a = PatchFeatures::compute(&Patch { id: 1, cube, category: None }, &opts).unwrap();
        let b = PatchFeatures::compute(&Patch { id: 2, cube: other, category: None }, &opts).unwrap();
        let plain = ndd(&a.averaged.as_ref().unwrap().dictionary, &b.averaged.as_ref().unwrap().dictionary).unwrap();
        assert_eq!(patch_dissim(&a, &b, DissimKind::NddByband).unwrap(), plain);
        assert_eq!(patch_dissim(&a, &b, DissimKind::NddAvg).unwrap(), plain);
    }

    #[test]
    fn missing_features_are_reported() {
        let patches = small_corpus();
        let opts = FeatureOptions { kinds: vec![DissimKind::NddAvg], ..quick() };
        let f = PatchFeatures::compute(&patches[0], &opts).unwrap();
        assert!(f.unmixing.is_none() && f.by_band.is_none());
        assert!(matches!(
            patch_dissim(&f, &f, DissimKind::Spectral),
            Err(DissimError::MissingFeature { id: 1, kind: DissimKind::Spectral })
        ));
    }

    #[test]
    fn concatenation_mode_differs_but_stays_in_range() {
        let patches = small_corpus();
        let feats = featurize_corpus(&patches, &FeatureOptions { kinds: vec![DissimKind::NddAvg], ..quick() }, None).unwrap();
        let v = patch_dissim_with(&feats[0], &feats[1], DissimKind::NddAvg, NddMode::Concatenation).unwrap();
        assert!((0.0..=1.0).contains(&v));
    }

    #[test]
    fn cache_is_reused() {
        let dir = tempfile::tempdir().unwrap();
        let patches = small_corpus();
        let opts = quick();
        let first = featurize_corpus(&patches, &opts, Some(dir.path())).unwrap();
        let files = std::fs::read_dir(dir.path()).unwrap().count();
        assert_eq!(files, patches.len());
        let second = featurize_corpus(&patches, &opts, Some(dir.path())).unwrap();
        assert_eq!(first, second);
    }
}
