//! Content-based retrieval of hyperspectral patches.
//!
//! The crate is organised along the retrieval pipeline:
//!
//! * [`cube`] loads, tiles, synthesises and renders hyperspectral cubes.
//! * [`unmixing`] induces endmembers with VCA and estimates abundances with
//!   active-set NNLS.
//! * [`dissim`] implements the spectral, spectral-spatial and dictionary
//!   (NDD) dissimilarities between patches.
//! * [`dspace`] maps patches into a dissimilarity space spanned by
//!   prototypes and scores them with kNN or an RBF SVM.
//! * [`rf`] runs the zero query and the relevance-feedback loop.
//! * [`eval`] computes precision/recall and normalized rank and drives the
//!   simulated-user experiments.

pub mod cube;
pub mod dissim;
pub mod dspace;
pub mod eval;
pub mod kv;
pub mod rf;
pub mod unmixing;

/// One-based identifier of a patch inside a corpus.
pub type PatchId = u32;

/// Identifier of an a priori category.
pub type CategoryId = u32;

pub use cube::{Corpus, CorpusLabels, HyperCube, Patch};
pub use dissim::{DissimKind, DissimTable, PatchFeatures};
pub use rf::{Classifier, Criterion, PrototypePolicy, Relevance, RfSession, SessionConfig};
