//! Hyperspectral cubes, patches and corpora.
//!
//! On disk a cube is a raw little-endian float file plus a `key: value`
//! header sidecar with the same stem and a `.hdr` extension:
//!
//! ```text
//! lines: 64
//! samples: 64
//! bands: 32
//! interleave: bsq
//! dtype: float32
//! ```
//!
//! In memory the data is kept pixel-interleaved (BIP) so that a pixel's
//! spectrum is a contiguous slice.

use std::collections::BTreeMap;
use std::fs;
use std::io::Cursor;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kv::{KvError, KvMap};
use crate::{CategoryId, PatchId};

#[derive(Debug, Error)]
pub enum CubeError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("missing header file {0}")]
    MissingHeader(PathBuf),
    #[error("header: {0}")]
    Header(#[from] KvError),
    #[error("invalid header: {0}")]
    BadHeader(String),
    #[error("raw file has {actual} bytes, header implies {expected}")]
    SizeMismatch { expected: u64, actual: u64 },
    #[error("non-finite value at flat index {0}")]
    NonFinite(usize),
    #[error("invalid dimensions: {0}")]
    InvalidDims(String),
    #[error("tile side {side} yields no patch from a {lines}x{samples} cube")]
    EmptyCorpus { side: usize, lines: usize, samples: usize },
    #[error("band index {band} out of range for {bands} bands")]
    BandOutOfRange { band: usize, bands: usize },
    #[error("labels: {0}")]
    Labels(String),
    #[error("png encoding failed: {0}")]
    Png(String),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CubeError + '_ {
    move |source| CubeError::Io { path: path.to_path_buf(), source }
}

/// Storage type of raw cube files.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DType {
    #[default]
    Float32,
    Float64,
}

impl DType {
    fn name(self) -> &'static str {
        match self {
            DType::Float32 => "float32",
            DType::Float64 => "float64",
        }
    }

    fn width(self) -> usize {
        match self {
            DType::Float32 => 4,
            DType::Float64 => 8,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Interleave {
    Bsq,
    Bil,
    Bip,
}

/// A `lines x samples x bands` reflectance cube.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HyperCube {
    lines: usize,
    samples: usize,
    bands: usize,
    /// Pixel-interleaved values: `data[(line * samples + sample) * bands + band]`.
    data: Vec<f64>,
}

impl HyperCube {
    /// Builds a cube from pixel-interleaved data.
    pub fn new(lines: usize, samples: usize, bands: usize, data: Vec<f64>) -> Result<Self, CubeError> {
        if bands == 0 {
            return Err(CubeError::InvalidDims("bands must be >= 1".into()));
        }
        if lines * samples * bands != data.len() {
            return Err(CubeError::InvalidDims(format!(
                "{lines}x{samples}x{bands} does not match {} values",
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(CubeError::NonFinite(i));
        }
        Ok(Self { lines, samples, bands, data })
    }

    /// Builds a cube from a list of pixel spectra in row-major order.
    pub fn from_pixels(lines: usize, samples: usize, pixels: &[Vec<f64>]) -> Result<Self, CubeError> {
        let bands = pixels.first().map_or(0, Vec::len);
        if pixels.iter().any(|p| p.len() != bands) {
            return Err(CubeError::InvalidDims("ragged pixel spectra".into()));
        }
        Self::new(lines, samples, bands, pixels.concat())
    }

    pub fn lines(&self) -> usize {
        self.lines
    }

    pub fn samples(&self) -> usize {
        self.samples
    }

    pub fn bands(&self) -> usize {
        self.bands
    }

    pub fn n_pixels(&self) -> usize {
        self.lines * self.samples
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn value(&self, line: usize, sample: usize, band: usize) -> f64 {
        self.data[(line * self.samples + sample) * self.bands + band]
    }

    /// Spectrum of the pixel at row-major index `i`.
    pub fn pixel(&self, i: usize) -> &[f64] {
        &self.data[i * self.bands..(i + 1) * self.bands]
    }

    pub fn pixel_at(&self, line: usize, sample: usize) -> &[f64] {
        self.pixel(line * self.samples + sample)
    }

    pub fn pixels(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.bands)
    }

    /// Copies a rectangular window.
    pub fn window(&self, line0: usize, sample0: usize, lines: usize, samples: usize) -> HyperCube {
        let mut data = Vec::with_capacity(lines * samples * self.bands);
        for l in line0..line0 + lines {
            let start = (l * self.samples + sample0) * self.bands;
            data.extend_from_slice(&self.data[start..start + samples * self.bands]);
        }
        HyperCube { lines, samples, bands: self.bands, data }
    }
}

fn header_path(raw: &Path) -> PathBuf {
    raw.with_extension("hdr")
}

/// Reads a cube from `path` (raw data) and its `.hdr` sidecar.
pub fn load_cube(path: &Path) -> Result<HyperCube, CubeError> {
    let hdr = header_path(path);
    if !hdr.exists() {
        return Err(CubeError::MissingHeader(hdr));
    }
    let kv = KvMap::parse(&fs::read_to_string(&hdr).map_err(io_err(&hdr))?)?;
    let lines: usize = kv.parse_required("lines")?;
    let samples: usize = kv.parse_required("samples")?;
    let bands: usize = kv.parse_required("bands")?;
    let interleave = match kv.require("interleave")?.to_ascii_lowercase().as_str() {
        "bsq" => Interleave::Bsq,
        "bil" => Interleave::Bil,
        "bip" => Interleave::Bip,
        other => return Err(CubeError::BadHeader(format!("unknown interleave {other:?}"))),
    };
    let dtype = match kv.get("dtype").unwrap_or("float32").to_ascii_lowercase().as_str() {
        "float32" | "f32" => DType::Float32,
        "float64" | "f64" => DType::Float64,
        other => return Err(CubeError::BadHeader(format!("unsupported dtype {other:?}"))),
    };
    if bands == 0 {
        return Err(CubeError::BadHeader("bands must be >= 1".into()));
    }
    let bytes = fs::read(path).map_err(io_err(path))?;
    let n = lines * samples * bands;
    let expected = (n * dtype.width()) as u64;
    if bytes.len() as u64 != expected {
        return Err(CubeError::SizeMismatch { expected, actual: bytes.len() as u64 });
    }
    let raw: Vec<f64> = match dtype {
        DType::Float32 => bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect(),
        DType::Float64 => bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect(),
    };
    if let Some(i) = raw.iter().position(|v| !v.is_finite()) {
        return Err(CubeError::NonFinite(i));
    }
    let mut data = vec![0.0; n];
    for l in 0..lines {
        for s in 0..samples {
            for b in 0..bands {
                let src = match interleave {
                    Interleave::Bsq => (b * lines + l) * samples + s,
                    Interleave::Bil => (l * bands + b) * samples + s,
                    Interleave::Bip => (l * samples + s) * bands + b,
                };
                data[(l * samples + s) * bands + b] = raw[src];
            }
        }
    }
    HyperCube::new(lines, samples, bands, data)
}

/// Writes a band-sequential cube to `path` plus its `.hdr` sidecar.
pub fn write_cube(path: &Path, cube: &HyperCube, dtype: DType) -> Result<(), CubeError> {
    let mut kv = KvMap::new();
    kv.insert("lines", cube.lines);
    kv.insert("samples", cube.samples);
    kv.insert("bands", cube.bands);
    kv.insert("interleave", "bsq");
    kv.insert("dtype", dtype.name());
    let mut bytes = Vec::with_capacity(cube.data.len() * dtype.width());
    for b in 0..cube.bands {
        for l in 0..cube.lines {
            for s in 0..cube.samples {
                let v = cube.value(l, s, b);
                match dtype {
                    DType::Float32 => bytes.extend_from_slice(&(v as f32).to_le_bytes()),
                    DType::Float64 => bytes.extend_from_slice(&v.to_le_bytes()),
                }
            }
        }
    }
    let hdr = header_path(path);
    fs::write(&hdr, kv.to_string()).map_err(io_err(&hdr))?;
    fs::write(path, bytes).map_err(io_err(path))
}

/// A fixed-size tile of a scene: the object being retrieved.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Patch {
    pub id: PatchId,
    pub cube: HyperCube,
    pub category: Option<CategoryId>,
}

/// Cuts non-overlapping `side x side` tiles in row-major order. Partial
/// tiles at the right and bottom margins are discarded. Ids start at 1.
pub fn tile(cube: &HyperCube, side: usize) -> Result<Vec<Patch>, CubeError> {
    if side == 0 {
        return Err(CubeError::InvalidDims("tile side must be >= 1".into()));
    }
    let rows = cube.lines / side;
    let cols = cube.samples / side;
    if rows == 0 || cols == 0 {
        return Err(CubeError::EmptyCorpus { side, lines: cube.lines, samples: cube.samples });
    }
    let mut out = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        for c in 0..cols {
            out.push(Patch {
                id: (out.len() + 1) as PatchId,
                cube: cube.window(r * side, c * side, side, side),
                category: None,
            });
        }
    }
    Ok(out)
}

/// Category assignment of every patch in a corpus.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CorpusLabels {
    pub categories: BTreeMap<PatchId, CategoryId>,
    pub names: BTreeMap<CategoryId, String>,
}

impl CorpusLabels {
    pub fn category(&self, id: PatchId) -> Option<CategoryId> {
        self.categories.get(&id).copied()
    }

    pub fn name(&self, category: CategoryId) -> String {
        self.names.get(&category).cloned().unwrap_or_else(|| format!("category-{category}"))
    }

    pub fn members(&self, category: CategoryId) -> Vec<PatchId> {
        self.categories.iter().filter(|(_, &c)| c == category).map(|(&id, _)| id).collect()
    }

    /// Distinct category ids in ascending order.
    pub fn category_ids(&self) -> Vec<CategoryId> {
        let mut ids: Vec<_> = self.categories.values().copied().collect();
        ids.sort_unstable();
        ids.dedup();
        ids
    }

    /// `patch_id,category` with a header row.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("patch_id,category\n");
        for (id, c) in &self.categories {
            s.push_str(&format!("{id},{c}\n"));
        }
        s
    }

    pub fn names_to_csv(&self) -> String {
        let mut s = String::from("category,name\n");
        for (c, n) in &self.names {
            s.push_str(&format!("{c},{n}\n"));
        }
        s
    }

    pub fn from_csv(text: &str) -> Result<Self, CubeError> {
        let mut categories = BTreeMap::new();
        for (n, line) in text.lines().enumerate().skip(1) {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let (id, cat) = line
                .split_once(',')
                .ok_or_else(|| CubeError::Labels(format!("line {}: {line:?}", n + 1)))?;
            let id: PatchId = id.trim().parse().map_err(|_| CubeError::Labels(format!("bad id {id:?}")))?;
            let cat: CategoryId =
                cat.trim().parse().map_err(|_| CubeError::Labels(format!("bad category {cat:?}")))?;
            if categories.insert(id, cat).is_some() {
                return Err(CubeError::Labels(format!("patch {id} listed twice")));
            }
        }
        Ok(Self { categories, names: BTreeMap::new() })
    }

    pub fn read_names_csv(&mut self, text: &str) -> Result<(), CubeError> {
        for line in text.lines().skip(1) {
            if let Some((c, name)) = line.split_once(',') {
                let c: CategoryId =
                    c.trim().parse().map_err(|_| CubeError::Labels(format!("bad category {c:?}")))?;
                self.names.insert(c, name.trim().to_string());
            }
        }
        Ok(())
    }

    /// Checks that every patch id in `ids` is labelled exactly once and no
    /// stray ids are present.
    pub fn validate(&self, ids: impl IntoIterator<Item = PatchId>) -> Result<(), CubeError> {
        let mut n = 0;
        for id in ids {
            n += 1;
            if !self.categories.contains_key(&id) {
                return Err(CubeError::Labels(format!("patch {id} has no label")));
            }
        }
        if n != self.categories.len() {
            return Err(CubeError::Labels(format!(
                "{} labels for {n} patches",
                self.categories.len()
            )));
        }
        Ok(())
    }
}

/// A set of equally sized patches with ids `1..=N` and optional labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub patches: Vec<Patch>,
    pub labels: Option<CorpusLabels>,
}

pub const SCENE_FILE: &str = "scene.raw";
pub const LABELS_FILE: &str = "labels.csv";
pub const NAMES_FILE: &str = "categories.csv";
pub const META_FILE: &str = "corpus.txt";

impl Corpus {
    pub fn new(mut patches: Vec<Patch>, labels: Option<CorpusLabels>) -> Result<Self, CubeError> {
        if patches.is_empty() {
            return Err(CubeError::InvalidDims("corpus has no patches".into()));
        }
        patches.sort_by_key(|p| p.id);
        let shape = (patches[0].cube.lines, patches[0].cube.samples, patches[0].cube.bands);
        for (i, p) in patches.iter().enumerate() {
            if p.id as usize != i + 1 {
                return Err(CubeError::InvalidDims(format!("patch ids must be 1..=N, found {}", p.id)));
            }
            if (p.cube.lines, p.cube.samples, p.cube.bands) != shape {
                return Err(CubeError::InvalidDims(format!("patch {} has a different shape", p.id)));
            }
        }
        if let Some(l) = &labels {
            l.validate(patches.iter().map(|p| p.id))?;
            for p in &mut patches {
                p.category = l.category(p.id);
            }
        }
        Ok(Self { patches, labels })
    }

    pub fn len(&self) -> usize {
        self.patches.len()
    }

    pub fn is_empty(&self) -> bool {
        self.patches.is_empty()
    }

    pub fn patch(&self, id: PatchId) -> Option<&Patch> {
        (id as usize).checked_sub(1).and_then(|i| self.patches.get(i))
    }

    pub fn bands(&self) -> usize {
        self.patches[0].cube.bands
    }

    /// `(lines, samples)` of every patch.
    pub fn patch_shape(&self) -> (usize, usize) {
        (self.patches[0].cube.lines, self.patches[0].cube.samples)
    }

    /// Stores the patches as a single-column mosaic so that `tile` recovers
    /// them in id order.
    pub fn save_dir(&self, dir: &Path, dtype: DType) -> Result<(), CubeError> {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
        let (lines, samples) = self.patch_shape();
        if lines != samples {
            return Err(CubeError::InvalidDims("only square patches can be stored".into()));
        }
        let mut data = Vec::with_capacity(self.len() * lines * samples * self.bands());
        for p in &self.patches {
            data.extend_from_slice(&p.cube.data);
        }
        let mosaic = HyperCube::new(self.len() * lines, samples, self.bands(), data)?;
        write_cube(&dir.join(SCENE_FILE), &mosaic, dtype)?;
        let mut meta = KvMap::new();
        meta.insert("patch_side", lines);
        meta.insert("patches", self.len());
        let path = dir.join(META_FILE);
        fs::write(&path, meta.to_string()).map_err(io_err(&path))?;
        if let Some(l) = &self.labels {
            let path = dir.join(LABELS_FILE);
            fs::write(&path, l.to_csv()).map_err(io_err(&path))?;
            let path = dir.join(NAMES_FILE);
            fs::write(&path, l.names_to_csv()).map_err(io_err(&path))?;
        }
        Ok(())
    }

    pub fn load_dir(dir: &Path) -> Result<Self, CubeError> {
        let meta_path = dir.join(META_FILE);
        let meta = KvMap::parse(&fs::read_to_string(&meta_path).map_err(io_err(&meta_path))?)?;
        let side: usize = meta.parse_required("patch_side")?;
        let cube = load_cube(&dir.join(SCENE_FILE))?;
        let patches = tile(&cube, side)?;
        let labels_path = dir.join(LABELS_FILE);
        let labels = if labels_path.exists() {
            let mut l = CorpusLabels::from_csv(&fs::read_to_string(&labels_path).map_err(io_err(&labels_path))?)?;
            let names_path = dir.join(NAMES_FILE);
            if names_path.exists() {
                l.read_names_csv(&fs::read_to_string(&names_path).map_err(io_err(&names_path))?)?;
            }
            Some(l)
        } else {
            None
        };
        Self::new(patches, labels)
    }
}

/// Parameters of the synthetic labelled corpus generator.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub patches_per_category: Vec<usize>,
    pub side: usize,
    pub bands: usize,
    pub noise_sigma: f64,
    pub seed: u64,
    /// Place one pure pixel of every endmember in each patch.
    pub pure_pixels: bool,
    /// How far categories are apart, in `[0, 1]`. Endmembers blend a
    /// library shared by all categories with category-specific signatures
    /// using this weight, and texture frequencies spread by the same factor.
    /// At 1 the categories share nothing.
    pub separation: f64,
}

impl SynthConfig {
    pub fn balanced(n_categories: usize, per_category: usize, side: usize, bands: usize, noise_sigma: f64, seed: u64) -> Self {
        Self {
            patches_per_category: vec![per_category; n_categories],
            side,
            bands,
            noise_sigma,
            seed,
            pure_pixels: true,
            separation: 1.0,
        }
    }
}

/// Planted ground truth of one synthetic patch.
#[derive(Debug, Clone)]
pub struct PlantedPatch {
    pub patch: Patch,
    pub endmembers: Vec<Vec<f64>>,
    /// Per pixel, one abundance per endmember (sums to one).
    pub abundances: Vec<Vec<f64>>,
}

/// Random smooth nonnegative spectrum: a floor plus a few Gaussian bumps.
pub fn random_signature(bands: usize, rng: &mut impl Rng) -> Vec<f64> {
    let floor = rng.random_range(0.05..0.2);
    let bumps: Vec<(f64, f64, f64)> = (0..3)
        .map(|_| {
            let centre = rng.random_range(0.0..bands as f64);
            let width = rng.random_range(bands as f64 / 16.0..bands as f64 / 4.0).max(0.5);
            (centre, width, rng.random_range(0.2..1.0))
        })
        .collect();
    (0..bands)
        .map(|b| {
            floor
                + bumps
                    .iter()
                    .map(|&(c, w, a)| a * (-((b as f64 - c) / w).powi(2) / 2.0).exp())
                    .sum::<f64>()
        })
        .collect()
}

/// Generates one patch as a convex mixture of `endmembers` with a smooth
/// spatial abundance field whose characteristic frequency is `cycles`
/// periods per patch side.
pub fn synth_mixture_patch(
    id: PatchId,
    endmembers: &[Vec<f64>],
    side: usize,
    cycles: f64,
    noise_sigma: f64,
    pure_pixels: bool,
    rng: &mut impl Rng,
) -> PlantedPatch {
    let m = endmembers.len();
    let bands = endmembers[0].len();
    let n = side * side;
    let waves: Vec<Vec<(f64, f64, f64)>> = (0..m)
        .map(|_| {
            (0..3)
                .map(|_| {
                    let theta = rng.random_range(0.0..std::f64::consts::TAU);
                    let f = cycles * rng.random_range(0.7..1.3) * std::f64::consts::TAU / side as f64;
                    (f * theta.cos(), f * theta.sin(), rng.random_range(0.0..std::f64::consts::TAU))
                })
                .collect()
        })
        .collect();
    let mut abundances: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            let (y, x) = ((i / side) as f64, (i % side) as f64);
            let logits: Vec<f64> = waves
                .iter()
                .map(|w| 2.0 * w.iter().map(|&(u, v, ph)| (u * x + v * y + ph).sin()).sum::<f64>())
                .collect();
            let mx = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = logits.iter().map(|l| (l - mx).exp()).collect();
            let s: f64 = e.iter().sum();
            e.into_iter().map(|v| v / s).collect()
        })
        .collect();
    if pure_pixels && m <= n {
        let mut positions: Vec<usize> = (0..n).collect();
        positions.shuffle(rng);
        for (k, &pos) in positions[..m].iter().enumerate() {
            abundances[pos] = (0..m).map(|j| if j == k { 1.0 } else { 0.0 }).collect();
        }
    }
    let normal = Normal::new(0.0, noise_sigma.max(0.0)).expect("valid sigma");
    let mut data = Vec::with_capacity(n * bands);
    for a in &abundances {
        for b in 0..bands {
            let clean: f64 = a.iter().zip(endmembers).map(|(w, e)| w * e[b]).sum();
            let v = if noise_sigma > 0.0 { clean + normal.sample(rng) } else { clean };
            data.push(v.max(0.0));
        }
    }
    let cube = HyperCube::new(side, side, bands, data).expect("consistent synthetic dims");
    PlantedPatch {
        patch: Patch { id, cube, category: None },
        endmembers: endmembers.to_vec(),
        abundances,
    }
}

/// Noiseless patch with `m` random endmembers and one pure pixel each.
pub fn synth_planted_patch(m: usize, side: usize, bands: usize, seed: u64) -> PlantedPatch {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let endmembers: Vec<Vec<f64>> = (0..m).map(|_| random_signature(bands, &mut rng)).collect();
    synth_mixture_patch(1, &endmembers, side, rng.random_range(1.0..4.0), 0.0, true, &mut rng)
}

/// Generates a labelled corpus. Each category owns 3 to 5 random
/// endmember signatures and a characteristic spatial frequency; category
/// membership is shuffled over the patch ids.
pub fn synth_corpus(config: &SynthConfig) -> Result<(Vec<Patch>, CorpusLabels), CubeError> {
    let counts = &config.patches_per_category;
    if counts.len() < 2 {
        return Err(CubeError::InvalidDims("need at least two categories".into()));
    }
    if counts.contains(&0) {
        return Err(CubeError::InvalidDims("every category needs at least one patch".into()));
    }
    if config.side == 0 || config.bands == 0 {
        return Err(CubeError::InvalidDims("side and bands must be >= 1".into()));
    }
    if !(0.0..=1.0).contains(&config.separation) {
        return Err(CubeError::InvalidDims("separation must lie in [0, 1]".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let n_cat = counts.len();
    let shared: Vec<Vec<f64>> = (0..5).map(|_| random_signature(config.bands, &mut rng)).collect();
    let sep = config.separation;
    let signatures: Vec<Vec<Vec<f64>>> = (0..n_cat)
        .map(|_| {
            let m = rng.random_range(3..=5);
            (0..m)
                .map(|k| {
                    let own = random_signature(config.bands, &mut rng);
                    own.iter().zip(&shared[k]).map(|(o, s)| sep * o + (1.0 - sep) * s).collect()
                })
                .collect()
        })
        .collect();
    let cycles: Vec<f64> = (0..n_cat).map(|c| 1.5 * 2f64.powf(sep * ((c % 4) as f64 - 1.0))).collect();

    let mut assignment: Vec<usize> = counts
        .iter()
        .enumerate()
        .flat_map(|(c, &k)| std::iter::repeat_n(c, k))
        .collect();
    assignment.shuffle(&mut rng);

    let mut labels = CorpusLabels::default();
    for c in 0..n_cat {
        labels.names.insert(c as CategoryId + 1, format!("category-{}", c + 1));
    }
    let mut patches = Vec::with_capacity(assignment.len());
    for (i, &c) in assignment.iter().enumerate() {
        let id = (i + 1) as PatchId;
        let mut planted = synth_mixture_patch(
            id,
            &signatures[c],
            config.side,
            cycles[c],
            config.noise_sigma,
            config.pure_pixels,
            &mut rng,
        );
        planted.patch.category = Some(c as CategoryId + 1);
        labels.categories.insert(id, c as CategoryId + 1);
        patches.push(planted.patch);
    }
    Ok((patches, labels))
}

/// 8-bit RGB raster.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RgbThumbnail {
    pub width: u32,
    pub height: u32,
    /// Row-major interleaved RGB bytes.
    pub rgb: Vec<u8>,
}

impl RgbThumbnail {
    pub fn to_png(&self) -> Result<Vec<u8>, CubeError> {
        let img = image::RgbImage::from_raw(self.width, self.height, self.rgb.clone())
            .ok_or_else(|| CubeError::Png("buffer size mismatch".into()))?;
        let mut out = Cursor::new(Vec::new());
        img.write_to(&mut out, image::ImageFormat::Png)
            .map_err(|e| CubeError::Png(e.to_string()))?;
        Ok(out.into_inner())
    }
}

/// False-colour composite with an independent min-max stretch per channel.
/// A constant channel renders as mid-gray (128).
pub fn render_rgb(patch: &Patch, bands: [usize; 3]) -> Result<RgbThumbnail, CubeError> {
    let cube = &patch.cube;
    for &b in &bands {
        if b >= cube.bands {
            return Err(CubeError::BandOutOfRange { band: b, bands: cube.bands });
        }
    }
    let stretch: Vec<(f64, f64)> = bands
        .iter()
        .map(|&b| {
            cube.pixels().map(|p| p[b]).fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
                (lo.min(v), hi.max(v))
            })
        })
        .collect();
    let mut rgb = Vec::with_capacity(cube.n_pixels() * 3);
    for p in cube.pixels() {
        for (c, &b) in bands.iter().enumerate() {
            let (lo, hi) = stretch[c];
            let byte = if hi > lo { ((p[b] - lo) / (hi - lo) * 255.0).round() as u8 } else { 128 };
            rgb.push(byte);
        }
    }
    Ok(RgbThumbnail { width: cube.samples as u32, height: cube.lines as u32, rgb })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(lines: usize, samples: usize, bands: usize) -> HyperCube {
        let data = (0..lines * samples * bands).map(|v| v as f64 * 0.5).collect();
        HyperCube::new(lines, samples, bands, data).unwrap()
    }

    #[test]
    fn load_tiny_cube() {
        let dir = tempfile::tempdir().unwrap();
        let raw = dir.path().join("c.raw");
        fs::write(dir.path().join("c.hdr"), "lines: 2\nsamples: 2\nbands: 1\ninterleave: bsq\ndtype: float32\n")
            .unwrap();
        let bytes: Vec<u8> = [1.0f32, 2.0, 3.0, 4.0].iter().flat_map(|v| v.to_le_bytes()).collect();
        fs::write(&raw, bytes).unwrap();
        let c = load_cube(&raw).unwrap();
        assert_eq!((c.lines(), c.samples(), c.bands()), (2, 2, 1));
        assert_eq!(c.data(), &[1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn size_mismatch_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let raw = dir.path().join("c.raw");
        fs::write(dir.path().join("c.hdr"), "lines: 2\nsamples: 2\nbands: 3\ninterleave: bsq\n").unwrap();
        fs::write(&raw, vec![0u8; 2 * 2 * 2 * 4]).unwrap();
        assert!(matches!(load_cube(&raw), Err(CubeError::SizeMismatch { expected: 48, actual: 32 })));
    }

    #[test]
    fn missing_header_and_non_finite() {
        let dir = tempfile::tempdir().unwrap();
        let raw = dir.path().join("c.raw");
        fs::write(&raw, [0u8; 4]).unwrap();
        assert!(matches!(load_cube(&raw), Err(CubeError::MissingHeader(_))));
        fs::write(dir.path().join("c.hdr"), "lines: 1\nsamples: 1\nbands: 1\ninterleave: bsq\n").unwrap();
        fs::write(&raw, f32::NAN.to_le_bytes()).unwrap();
        assert!(matches!(load_cube(&raw), Err(CubeError::NonFinite(0))));
    }

    #[test]
    fn write_then_load_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let c = ramp(3, 5, 4);
        let raw = dir.path().join("x.raw");
        write_cube(&raw, &c, DType::Float32).unwrap();
        assert_eq!(load_cube(&raw).unwrap(), c);
        let noisy = HyperCube::new(1, 2, 1, vec![0.1, std::f64::consts::PI]).unwrap();
        write_cube(&raw, &noisy, DType::Float64).unwrap();
        assert_eq!(load_cube(&raw).unwrap(), noisy);
    }

    #[test]
    fn bip_and_bil_headers() {
        let dir = tempfile::tempdir().unwrap();
        let raw = dir.path().join("c.raw");
        // 1 line, 2 samples, 2 bands: pixel0 = (1, 2), pixel1 = (3, 4)
        for (il, order) in [("bip", [1.0f32, 2.0, 3.0, 4.0]), ("bil", [1.0, 3.0, 2.0, 4.0])] {
            fs::write(dir.path().join("c.hdr"), format!("lines: 1\nsamples: 2\nbands: 2\ninterleave: {il}\n"))
                .unwrap();
            fs::write(&raw, order.iter().flat_map(|v| v.to_le_bytes()).collect::<Vec<u8>>()).unwrap();
            let c = load_cube(&raw).unwrap();
            assert_eq!(c.pixel(0), &[1.0, 2.0]);
            assert_eq!(c.pixel(1), &[3.0, 4.0]);
        }
    }

    #[test]
    fn tile_counts() {
        // floor(2878/64) * floor(512/64) = 44 * 8
        assert_eq!(2878 / 64 * (512 / 64), 352);
        let c = ramp(130, 70, 1);
        let tiles = tile(&c, 64).unwrap();
        assert_eq!(tiles.len(), 2);
        assert_eq!(tiles.iter().map(|t| t.id).collect::<Vec<_>>(), [1, 2]);

        let c = ramp(64, 64, 2);
        let tiles = tile(&c, 64).unwrap();
        assert_eq!(tiles.len(), 1);
        assert_eq!(tiles[0].cube, c);

        assert!(matches!(tile(&ramp(63, 64, 1), 64), Err(CubeError::EmptyCorpus { .. })));
        assert!(tile(&c, 0).is_err());
    }

    #[test]
    fn tiles_reassemble_to_cube() {
        let c = ramp(10, 7, 3);
        let side = 3;
        let tiles = tile(&c, side).unwrap();
        let cols = 7 / side;
        for t in &tiles {
            let (r, k) = ((t.id as usize - 1) / cols, (t.id as usize - 1) % cols);
            for l in 0..side {
                for s in 0..side {
                    for b in 0..3 {
                        assert_eq!(t.cube.value(l, s, b), c.value(r * side + l, k * side + s, b));
                    }
                }
            }
        }
    }

    #[test]
    fn synth_is_deterministic_and_partitions_ids() {
        let cfg = SynthConfig::balanced(3, 40, 4, 6, 0.01, 9);
        let (a, la) = synth_corpus(&cfg).unwrap();
        let (b, lb) = synth_corpus(&cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(la, lb);
        assert_eq!(a.len(), 120);
        assert_eq!(la.categories.len(), 120);
        assert!((1..=120).all(|id| la.categories.contains_key(&id)));
        for c in 1..=3 {
            assert_eq!(la.members(c).len(), 40);
        }
        assert!(a.iter().all(|p| p.cube.data().iter().all(|&v| v >= 0.0)));
    }

    #[test]
    fn synth_rejects_bad_config() {
        assert!(synth_corpus(&SynthConfig::balanced(1, 4, 4, 4, 0.0, 1)).is_err());
        let mut cfg = SynthConfig::balanced(2, 4, 4, 4, 0.0, 1);
        cfg.patches_per_category[1] = 0;
        assert!(synth_corpus(&cfg).is_err());
    }

    #[test]
    fn corpus_dir_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let (patches, labels) = synth_corpus(&SynthConfig::balanced(2, 3, 4, 5, 0.0, 3)).unwrap();
        let corpus = Corpus::new(patches, Some(labels)).unwrap();
        corpus.save_dir(dir.path(), DType::Float64).unwrap();
        let back = Corpus::load_dir(dir.path()).unwrap();
        assert_eq!(back, corpus);
    }

    #[test]
    fn labels_csv() {
        let l = CorpusLabels::from_csv("patch_id,category\n1,2\n2,1\n").unwrap();
        assert_eq!(l.category(1), Some(2));
        assert_eq!(CorpusLabels::from_csv(&l.to_csv()).unwrap(), l);
        assert!(CorpusLabels::from_csv("patch_id,category\n1,2\n1,3\n").is_err());
        assert!(l.validate([1, 2, 3]).is_err());
    }

    #[test]
    fn render_conventions() {
        let flat = Patch { id: 1, cube: HyperCube::new(2, 2, 3, vec![0.7; 12]).unwrap(), category: None };
        let t = render_rgb(&flat, [0, 1, 2]).unwrap();
        assert!(t.rgb.iter().all(|&v| v == 128));

        let p = Patch { id: 1, cube: ramp(3, 3, 4), category: None };
        let g = render_rgb(&p, [2, 2, 2]).unwrap();
        assert!(g.rgb.chunks(3).all(|px| px[0] == px[1] && px[1] == px[2]));
        assert_eq!(g.rgb[0], 0);
        assert_eq!(*g.rgb.last().unwrap(), 255);
        assert_eq!(render_rgb(&p, [0, 1, 3]).unwrap(), render_rgb(&p, [0, 1, 3]).unwrap());
        assert_eq!(render_rgb(&p, [0, 1, 3]).unwrap().to_png().unwrap(), render_rgb(&p, [0, 1, 3]).unwrap().to_png().unwrap());
        assert!(matches!(render_rgb(&p, [0, 4, 1]), Err(CubeError::BandOutOfRange { band: 4, .. })));
    }
}
