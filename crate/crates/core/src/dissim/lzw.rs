//! Dictionary-based dissimilarity: patches become symbol strings, an LZW
//! parse extracts their phrase dictionaries, and the normalized dictionary
//! distance compares dictionary cardinalities.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use super::DissimError;
use crate::cube::Patch;

pub type Symbol = u16;
pub type SymbolString = Vec<Symbol>;

/// How a patch is turned into strings.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Linearization {
    /// One string of per-pixel band means.
    AveragedBand,
    /// One string per band.
    ByBand,
}

pub const DEFAULT_LEVELS: usize = 256;

/// Uniform min-max quantisation to `levels` equal-width bins. A constant
/// input maps to symbol 0.
pub fn quantize(values: &[f64], levels: usize) -> SymbolString {
    let (lo, hi) = values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    if !(hi > lo) {
        return vec![0; values.len()];
    }
    let top = (levels - 1) as f64;
    values
        .iter()
        .map(|&v| ((v - lo) / (hi - lo) * levels as f64).floor().min(top) as Symbol)
        .collect()
}

/// Row-major boustrophedon order: even rows left to right, odd rows right
/// to left.
pub fn zigzag_order(lines: usize, samples: usize) -> impl Iterator<Item = usize> {
    (0..lines).flat_map(move |l| {
        (0..samples).map(move |s| l * samples + if l % 2 == 0 { s } else { samples - 1 - s })
    })
}

pub fn linearize(patch: &Patch, mode: Linearization, levels: usize) -> Result<Vec<SymbolString>, DissimError> {
    if !(2..=Symbol::MAX as usize + 1).contains(&levels) {
        return Err(DissimError::Domain(format!("quantisation levels must be in 2..=65536, got {levels}")));
    }
    let cube = &patch.cube;
    let order: Vec<usize> = zigzag_order(cube.lines(), cube.samples()).collect();
    Ok(match mode {
        Linearization::AveragedBand => {
            let q = cube.bands() as f64;
            let means: Vec<f64> = order.iter().map(|&i| cube.pixel(i).iter().sum::<f64>() / q).collect();
            vec![quantize(&means, levels)]
        }
        Linearization::ByBand => (0..cube.bands())
            .map(|b| {
                let vals: Vec<f64> = order.iter().map(|&i| cube.pixel(i)[b]).collect();
                quantize(&vals, levels)
            })
            .collect(),
    })
}

/// Set of distinct phrases, kept sorted for merge-based set operations.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct LzwDictionary {
    phrases: Vec<SymbolString>,
}

impl LzwDictionary {
    pub fn from_phrases(phrases: impl IntoIterator<Item = SymbolString>) -> Self {
        let mut phrases: Vec<SymbolString> = phrases.into_iter().collect();
        phrases.sort_unstable();
        phrases.dedup();
        Self { phrases }
    }

    pub fn len(&self) -> usize {
        self.phrases.len()
    }

    pub fn is_empty(&self) -> bool {
        self.phrases.is_empty()
    }

    pub fn contains(&self, phrase: &[Symbol]) -> bool {
        self.phrases.binary_search_by(|p| p.as_slice().cmp(phrase)).is_ok()
    }

    pub fn phrases(&self) -> &[SymbolString] {
        &self.phrases
    }

    pub fn intersection_len(&self, other: &Self) -> usize {
        let (mut i, mut j, mut n) = (0, 0, 0);
        while i < self.phrases.len() && j < other.phrases.len() {
            match self.phrases[i].cmp(&other.phrases[j]) {
                std::cmp::Ordering::Less => i += 1,
                std::cmp::Ordering::Greater => j += 1,
                std::cmp::Ordering::Equal => {
                    n += 1;
                    i += 1;
                    j += 1;
                }
            }
        }
        n
    }

    pub fn union_len(&self, other: &Self) -> usize {
        self.len() + other.len() - self.intersection_len(other)
    }
}

/// LZW parse of `s`. Every single symbol counts as known; whenever the
/// current phrase extended by the next symbol is unknown, the extension is
/// recorded and the phrase restarts at that symbol.
pub fn lzw_dictionary(s: &[Symbol]) -> LzwDictionary {
    let mut known: HashSet<&[Symbol]> = HashSet::new();
    let mut start = 0;
    for end in 1..=s.len() {
        let candidate = &s[start..end];
        if candidate.len() == 1 || known.contains(candidate) {
            continue;
        }
        known.insert(candidate);
        start = end - 1;
    }
    let singles = s.iter().map(|&c| vec![c]);
    LzwDictionary::from_phrases(singles.chain(known.into_iter().map(<[Symbol]>::to_vec)))
}

/// `(|Dx ∪ Dy| − min(|Dx|, |Dy|)) / max(|Dx|, |Dy|)`.
pub fn ndd(dx: &LzwDictionary, dy: &LzwDictionary) -> Result<f64, DissimError> {
    let (a, b) = (dx.len(), dy.len());
    if a == 0 && b == 0 {
        return Err(DissimError::UndefinedDistance);
    }
    Ok((dx.union_len(dy) - a.min(b)) as f64 / a.max(b) as f64)
}

/// NDD variant that takes `D(x ∪ y)` as the dictionary of the
/// concatenated strings. Clamped at zero.
pub fn ndd_concatenated(x: &[Symbol], y: &[Symbol]) -> Result<f64, DissimError> {
    let (dx, dy) = (lzw_dictionary(x), lzw_dictionary(y));
    let (a, b) = (dx.len(), dy.len());
    if a == 0 && b == 0 {
        return Err(DissimError::UndefinedDistance);
    }
    let joint = lzw_dictionary(&[x, y].concat()).len();
    Ok((joint as f64 - a.min(b) as f64).max(0.0) / a.max(b) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cube::HyperCube;

    fn s(text: &str) -> SymbolString {
        text.bytes().map(Symbol::from).collect()
    }

    fn dict(words: &[&str]) -> LzwDictionary {
        LzwDictionary::from_phrases(words.iter().map(|w| s(w)))
    }

    #[test]
    fn hand_parses() {
        assert!(lzw_dictionary(&[]).is_empty());
        assert_eq!(lzw_dictionary(&s("ababab")), dict(&["a", "b", "ab", "ba", "aba"]));
        assert_eq!(lzw_dictionary(&s("aaaa")), dict(&["a", "aa", "aaa"]));
        assert_eq!(lzw_dictionary(&s("a")), dict(&["a"]));
    }

    #[test]
    fn ndd_hand_values() {
        let a = lzw_dictionary(&s("aaaa"));
        let b = lzw_dictionary(&s("bbbb"));
        assert_eq!(ndd(&a, &b).unwrap(), 1.0);
        assert_eq!(ndd(&a, &a).unwrap(), 0.0);
        assert_eq!(ndd(&a, &LzwDictionary::default()).unwrap(), 1.0);
        assert!(matches!(
            ndd(&LzwDictionary::default(), &LzwDictionary::default()),
            Err(DissimError::UndefinedDistance)
        ));
        // {a,b,ab,ba,aba} vs {a,aa,aaa}: union 7, min 3, max 5
        assert_eq!(ndd(&lzw_dictionary(&s("ababab")), &a).unwrap(), 4.0 / 5.0);
    }

    #[test]
    fn concatenated_variant() {
        assert_eq!(ndd_concatenated(&s("aaaa"), &s("aaaa")).unwrap(), 1.0 / 3.0);
        assert!(ndd_concatenated(&[], &[]).is_err());
    }

    #[test]
    fn quantisation_and_zigzag() {
        // [[1,2],[3,4]] in zig-zag order is 1,2,4,3
        let cube = HyperCube::new(2, 2, 1, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let patch = Patch { id: 1, cube, category: None };
        let out = linearize(&patch, Linearization::AveragedBand, 4).unwrap();
        assert_eq!(out, vec![vec![0, 1, 3, 2]]);
        assert_eq!(linearize(&patch, Linearization::ByBand, 4).unwrap(), out);
        assert_eq!(zigzag_order(3, 3).collect::<Vec<_>>(), [0, 1, 2, 5, 4, 3, 6, 7, 8]);
        assert!(linearize(&patch, Linearization::ByBand, 1).is_err());
    }

    #[test]
    fn constant_and_multiband() {
        let flat = Patch { id: 1, cube: HyperCube::new(3, 3, 3, vec![2.5; 27]).unwrap(), category: None };
        assert_eq!(linearize(&flat, Linearization::AveragedBand, 256).unwrap(), vec![vec![0; 9]]);
        let strings = linearize(&flat, Linearization::ByBand, 256).unwrap();
        assert_eq!(strings.len(), 3);
        assert!(strings.iter().all(|s| s.len() == 9));
    }

    #[test]
    fn averaged_band_uses_pixel_means() {
        // pixel means 1, 2 (two bands each)
        let cube = HyperCube::new(1, 2, 2, vec![0.0, 2.0, 1.0, 3.0]).unwrap();
        let patch = Patch { id: 1, cube, category: None };
        assert_eq!(linearize(&patch, Linearization::AveragedBand, 2).unwrap(), vec![vec![0, 1]]);
    }
}
