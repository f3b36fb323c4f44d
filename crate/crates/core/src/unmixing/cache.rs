//! Flat binary records of per-patch characterisations.
//!
//! Layout, little-endian:
//!
//! ```text
//! magic  b"HSUC"   version u32
//! patch_id u32     m u32     seed u64
//! endmembers u32   bands u32    pixels u32   runs u32
//! error f64
//! endmembers  m*bands f64 (endmember-major)
//! abundances  pixels*m f64 (pixel-major)
//! ```
//!
//! `endmembers` may be lower than the key's `m` when the count was reduced
//! for a rank-deficient patch. The normalised average abundance is
//! recomputed on read.

use std::fs;
use std::path::{Path, PathBuf};

use super::{AbundanceMaps, EndmemberSet, UnmixError, UnmixingChar};
use crate::PatchId;

const MAGIC: &[u8; 4] = b"HSUC";
const VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct CacheKey {
    pub patch_id: PatchId,
    pub m: u32,
    pub seed: u64,
}

pub fn cache_path(dir: &Path, key: CacheKey) -> PathBuf {
    dir.join(format!("patch_{:05}_m{}_s{}.bin", key.patch_id, key.m, key.seed))
}

pub fn write_record(path: &Path, key: CacheKey, runs: u32, c: &UnmixingChar) -> Result<(), UnmixError> {
    let m = c.endmembers.len();
    let q = c.endmembers.bands();
    let n = c.abundances.n_pixels();
    let mut buf = Vec::with_capacity(48 + 8 * (m * q + n * m));
    buf.extend_from_slice(MAGIC);
    for v in [VERSION, key.patch_id, key.m] {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    buf.extend_from_slice(&key.seed.to_le_bytes());
    for v in [m as u32, q as u32, n as u32, runs] {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    buf.extend_from_slice(&c.error.to_le_bytes());
    for e in c.endmembers.vectors() {
        for v in e {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    for v in c.abundances.values() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, &buf)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8], UnmixError> {
        let s = self
            .bytes
            .get(self.pos..self.pos + n)
            .ok_or_else(|| UnmixError::Cache("truncated record".into()))?;
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, UnmixError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, UnmixError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64, UnmixError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

/// Reads a record; returns its key, run count and characterisation.
pub fn read_record(path: &Path) -> Result<(CacheKey, u32, UnmixingChar), UnmixError> {
    let bytes = fs::read(path)?;
    if bytes.len() < 4 + 4 || &bytes[..4] != MAGIC {
        return Err(UnmixError::Cache(format!("{} is not a characterisation record", path.display())));
    }
    let mut r = Reader { bytes: &bytes, pos: 4 };
    let version = r.u32()?;
    if version != VERSION {
        return Err(UnmixError::Cache(format!("unsupported record version {version}")));
    }
    let key = CacheKey { patch_id: r.u32()?, m: r.u32()?, seed: r.u64()? };
    let m = r.u32()? as usize;
    let q = r.u32()? as usize;
    let n = r.u32()? as usize;
    let runs = r.u32()?;
    let error = r.f64()?;
    if m == 0 || bytes.len() - r.pos != 8 * (m * q + n * m) {
        return Err(UnmixError::Cache("record size does not match its header".into()));
    }
    let mut vectors = Vec::with_capacity(m);
    for _ in 0..m {
        vectors.push((0..q).map(|_| r.f64()).collect::<Result<Vec<_>, _>>()?);
    }
    let values = (0..n * m).map(|_| r.f64()).collect::<Result<Vec<_>, _>>()?;
    let c = UnmixingChar::from_parts(EndmemberSet::new(vectors)?, AbundanceMaps::new(m, values)?, error)?;
    Ok((key, runs, c))
}
