//! Batch pipeline behind the `hsrf` binary: corpus synthesis, unmixing
//! precomputation, dissimilarity tables, simulated-user experiments and the
//! HTTP server.
//!
//! Every knob lives in [`RunConfig`]. Values come from the built-in
//! defaults, then from an optional `key: value` file, then from flags.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};

use hsrf_core::cube::{synth_corpus, Corpus, DType, SynthConfig};
use hsrf_core::dissim::{featurize_corpus, FeatureOptions, NddMode, DEFAULT_LEVELS};
use hsrf_core::dspace::{offline_prototypes, SvmParams};
use hsrf_core::eval::{run_experiment, sweep_csv, ExperimentReport};
use hsrf_core::kv::KvMap;
use hsrf_core::rf::{Classifier, Criterion, PrototypePolicy, SessionConfig};
use hsrf_core::unmixing::UnmixOptions;
use hsrf_core::{DissimKind, DissimTable};

/// Failure classes, each with its own process exit code.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("computation failed: {0}")]
    Compute(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            Self::Config(_) => 2,
            Self::Data(_) => 3,
            Self::Compute(_) => 4,
        }
    }
}

fn config_err(e: impl std::fmt::Display) -> CliError {
    CliError::Config(e.to_string())
}

fn data_err(e: impl std::fmt::Display) -> CliError {
    CliError::Data(e.to_string())
}

fn compute_err(e: impl std::fmt::Display) -> CliError {
    CliError::Compute(e.to_string())
}

/// Classifier family named in configurations; `k` and `seed` come from
/// their own keys.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ClassifierName {
    Knn,
    Svm,
    Random,
}

impl std::str::FromStr for ClassifierName {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "knn" | "k-nn" => Ok(Self::Knn),
            "svm" => Ok(Self::Svm),
            "random" => Ok(Self::Random),
            other => Err(format!("unknown classifier `{other}` (expected knn, svm or random)")),
        }
    }
}

/// All pipeline settings. List-valued experiment keys span a sweep: every
/// combination of classifier, policy and criterion is run for every kind.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub corpus: Option<PathBuf>,
    /// Unmixing cache; `<corpus>/cache` when unset.
    pub cache: Option<PathBuf>,
    pub report: Option<PathBuf>,
    pub json: Option<PathBuf>,
    pub sessions: Option<PathBuf>,

    pub categories: usize,
    pub per_category: usize,
    /// Explicit per-category sizes; overrides `categories` and `per_category`.
    pub counts: Option<Vec<usize>>,
    pub side: usize,
    pub bands: usize,
    pub noise: f64,
    pub separation: f64,
    pub seed: u64,

    pub m: usize,
    pub runs: usize,
    pub vca_seed: u64,
    pub levels: usize,
    pub ndd_mode: NddMode,

    pub kinds: Vec<DissimKind>,
    pub classifiers: Vec<ClassifierName>,
    pub k: usize,
    pub policies: Vec<PrototypePolicy>,
    pub n_clusters: usize,
    pub criteria: Vec<Criterion>,
    /// One scope for every criterion; each criterion's default when unset.
    pub scope: Option<usize>,
    pub t_max: usize,

    pub threads: Option<usize>,
    pub addr: String,
    pub thumbnail_bands: Option<[usize; 3]>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let unmix = UnmixOptions::default();
        Self {
            corpus: None,
            cache: None,
            report: None,
            json: None,
            sessions: None,
            categories: 3,
            per_category: 40,
            counts: None,
            side: 16,
            bands: 32,
            noise: 0.5,
            separation: 0.25,
            seed: 1,
            m: unmix.m,
            runs: unmix.runs,
            vca_seed: unmix.seed,
            levels: DEFAULT_LEVELS,
            ndd_mode: NddMode::Union,
            kinds: DissimKind::ALL.to_vec(),
            classifiers: vec![ClassifierName::Knn],
            k: 7,
            policies: vec![PrototypePolicy::Online],
            n_clusters: 10,
            criteria: vec![Criterion::Al],
            scope: None,
            t_max: 5,
            threads: None,
            addr: "127.0.0.1:8080".into(),
            thumbnail_bands: None,
        }
    }
}

const KEYS: &[&str] = &[
    "corpus", "cache", "report", "json", "sessions", "categories", "per_category", "counts", "side", "bands", "noise",
    "separation", "seed", "m", "runs", "vca_seed", "levels", "ndd_mode", "kinds", "classifiers", "k", "policies",
    "n_clusters", "criteria", "scope", "t_max", "threads", "addr", "thumbnail_bands",
];

fn parse_mode(s: &str) -> Result<NddMode, CliError> {
    match s {
        "union" => Ok(NddMode::Union),
        "concatenation" | "concat" => Ok(NddMode::Concatenation),
        other => Err(config_err(format!("unknown ndd_mode `{other}` (expected union or concatenation)"))),
    }
}

fn parse_bands(s: &str) -> Result<[usize; 3], CliError> {
    let v: Vec<usize> = s
        .split(',')
        .map(|b| b.trim().parse().map_err(|_| config_err(format!("bad band index `{b}`"))))
        .collect::<Result<_, _>>()?;
    v.try_into().map_err(|_| config_err("thumbnail_bands needs exactly three indices"))
}

impl RunConfig {
    /// Applies every key of `kv` on top of `self`. Unknown keys are errors.
    pub fn apply_kv(&mut self, kv: &KvMap) -> Result<(), CliError> {
        if let Some(bad) = kv.keys().find(|k| !KEYS.contains(k)) {
            return Err(config_err(format!("unknown key `{bad}`")));
        }
        let e = config_err;
        macro_rules! set {
            ($field:ident) => {
                if let Some(v) = kv.parse_value(stringify!($field)).map_err(e)? {
                    self.$field = v;
                }
            };
            ($field:ident, some) => {
                if let Some(v) = kv.parse_value(stringify!($field)).map_err(e)? {
                    self.$field = Some(v);
                }
            };
            ($field:ident, list) => {
                if let Some(v) = kv.parse_list(stringify!($field)).map_err(e)? {
                    self.$field = v;
                }
            };
        }
        set!(corpus, some);
        set!(cache, some);
        set!(report, some);
        set!(json, some);
        set!(sessions, some);
        set!(categories);
        set!(per_category);
        if let Some(v) = kv.parse_list("counts").map_err(e)? {
            self.counts = Some(v);
        }
        set!(side);
        set!(bands);
        set!(noise);
        set!(separation);
        set!(seed);
        set!(m);
        set!(runs);
        set!(vca_seed);
        set!(levels);
        if let Some(v) = kv.get("ndd_mode") {
            self.ndd_mode = parse_mode(v)?;
        }
        set!(kinds, list);
        set!(classifiers, list);
        set!(k);
        set!(policies, list);
        set!(n_clusters);
        set!(criteria, list);
        set!(scope, some);
        set!(t_max);
        set!(threads, some);
        set!(addr);
        if let Some(v) = kv.get("thumbnail_bands") {
            self.thumbnail_bands = Some(parse_bands(v)?);
        }
        Ok(())
    }

    pub fn from_file(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path).map_err(|e| config_err(format!("cannot read {}: {e}", path.display())))?;
        let kv = KvMap::parse(&text).map_err(|e| config_err(format!("{}: {e}", path.display())))?;
        let mut c = Self::default();
        c.apply_kv(&kv)?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let check = |ok: bool, msg: &str| if ok { Ok(()) } else { Err(config_err(msg)) };
        check(!self.kinds.is_empty(), "kinds must not be empty")?;
        check(!self.classifiers.is_empty(), "classifiers must not be empty")?;
        check(!self.policies.is_empty(), "policies must not be empty")?;
        check(!self.criteria.is_empty(), "criteria must not be empty")?;
        check(self.k >= 1, "k must be >= 1")?;
        check(self.m >= 1 && self.runs >= 1, "m and runs must be >= 1")?;
        check(self.n_clusters >= 1, "n_clusters must be >= 1")?;
        check(self.scope != Some(0), "scope must be >= 1")?;
        check((2..=65536).contains(&self.levels), "levels must lie in 2..=65536")?;
        check(self.noise >= 0.0 && self.noise.is_finite(), "noise must be >= 0")?;
        check((0.0..=1.0).contains(&self.separation), "separation must lie in [0, 1]")?;
        check(self.threads != Some(0), "threads must be >= 1")
    }

    fn corpus_dir(&self) -> Result<&Path, CliError> {
        self.corpus.as_deref().ok_or_else(|| config_err("no corpus directory given (`corpus` key or --corpus)"))
    }

    fn cache_dir(&self) -> Result<PathBuf, CliError> {
        match &self.cache {
            Some(c) => Ok(c.clone()),
            None => Ok(self.corpus_dir()?.join("cache")),
        }
    }

    pub fn synth_config(&self) -> SynthConfig {
        let mut s = SynthConfig::balanced(self.categories, self.per_category, self.side, self.bands, self.noise, self.seed);
        if let Some(c) = &self.counts {
            s.patches_per_category = c.clone();
        }
        s.separation = self.separation;
        s
    }

    pub fn feature_options(&self, kinds: Vec<DissimKind>) -> FeatureOptions {
        FeatureOptions {
            unmix: UnmixOptions { m: self.m, runs: self.runs, seed: self.vca_seed, ..UnmixOptions::default() },
            levels: self.levels,
            kinds,
        }
    }

    /// Every session configuration of the sweep, kind-major.
    pub fn sessions(&self) -> Vec<SessionConfig> {
        let mut out = Vec::new();
        for &kind in &self.kinds {
            for &policy in &self.policies {
                for &c in &self.classifiers {
                    for &criterion in &self.criteria {
                        let classifier = match c {
                            ClassifierName::Knn => Classifier::Knn { k: self.k },
                            ClassifierName::Svm => Classifier::Svm(SvmParams::default()),
                            ClassifierName::Random => Classifier::Random { seed: self.seed },
                        };
                        out.push(SessionConfig {
                            kind,
                            classifier,
                            policy,
                            criterion,
                            scope: self.scope.unwrap_or(criterion.default_scope()),
                            t_max: self.t_max,
                        });
                    }
                }
            }
        }
        out
    }
}

#[derive(Debug, Parser)]
#[command(name = "hsrf", version, about = "Hyperspectral patch retrieval with relevance feedback")]
pub struct Cli {
    /// `key: value` run configuration; flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Worker threads for patch and query parallelism.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a labelled synthetic corpus directory.
    Synth(SynthArgs),
    /// Precompute the unmixing characterisation of every patch.
    Featurize(CorpusArgs),
    /// Compute and store one dissimilarity table per kind.
    Distmat(DistmatArgs),
    /// Run the simulated-user experiment sweep and write the ANR table.
    Experiment(ExperimentArgs),
    /// Serve the HTTP API.
    Serve(ServeArgs),
}

#[derive(Debug, Args)]
pub struct CorpusArgs {
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    #[arg(long)]
    pub cache: Option<PathBuf>,
    #[arg(long)]
    pub m: Option<usize>,
    #[arg(long)]
    pub runs: Option<usize>,
    #[arg(long)]
    pub vca_seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Output corpus directory.
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    #[arg(long)]
    pub categories: Option<usize>,
    #[arg(long)]
    pub per_category: Option<usize>,
    /// Comma-separated patch count per category.
    #[arg(long, value_delimiter = ',')]
    pub counts: Option<Vec<usize>>,
    #[arg(long)]
    pub side: Option<usize>,
    #[arg(long)]
    pub bands: Option<usize>,
    #[arg(long)]
    pub noise: Option<f64>,
    #[arg(long)]
    pub separation: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct DistmatArgs {
    #[command(flatten)]
    pub corpus: CorpusArgs,
    #[arg(long, value_delimiter = ',')]
    pub kinds: Option<Vec<DissimKind>>,
    #[arg(long)]
    pub levels: Option<usize>,
    /// `union` or `concatenation`.
    #[arg(long)]
    pub ndd_mode: Option<String>,
}

#[derive(Debug, Args)]
pub struct ExperimentArgs {
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    #[arg(long, value_delimiter = ',')]
    pub kinds: Option<Vec<DissimKind>>,
    #[arg(long, value_delimiter = ',')]
    pub classifiers: Option<Vec<ClassifierName>>,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    pub policies: Option<Vec<PrototypePolicy>>,
    #[arg(long)]
    pub n_clusters: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    pub criteria: Option<Vec<Criterion>>,
    #[arg(long)]
    pub scope: Option<usize>,
    #[arg(long)]
    pub t_max: Option<usize>,
    /// Seed of the random baseline classifier.
    #[arg(long)]
    pub seed: Option<u64>,
    /// ANR table CSV; stdout when unset.
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// Full reports with curves and trajectories as JSON.
    #[arg(long)]
    pub json: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    /// Corpus to load at start-up.
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    #[arg(long)]
    pub addr: Option<String>,
    #[arg(long)]
    pub sessions: Option<PathBuf>,
    #[arg(long)]
    pub n_clusters: Option<usize>,
    /// Red, green and blue band indices of thumbnails.
    #[arg(long)]
    pub thumbnail_bands: Option<String>,
}

macro_rules! flag {
    ($cfg:ident . $field:ident = $value:expr) => {
        if let Some(v) = $value {
            $cfg.$field = v;
        }
    };
    ($cfg:ident . $field:ident = Some $value:expr) => {
        if let Some(v) = $value {
            $cfg.$field = Some(v);
        }
    };
}

impl CorpusArgs {
    fn apply(&self, c: &mut RunConfig) {
        flag!(c.corpus = Some self.corpus.clone());
        flag!(c.cache = Some self.cache.clone());
        flag!(c.m = self.m);
        flag!(c.runs = self.runs);
        flag!(c.vca_seed = self.vca_seed);
    }
}

impl Cli {
    /// Defaults, then the config file, then flags.
    pub fn resolve(&self) -> Result<RunConfig, CliError> {
        let mut c = match &self.config {
            Some(path) => RunConfig::from_file(path)?,
            None => RunConfig::default(),
        };
        flag!(c.threads = Some self.threads);
        match &self.command {
            Command::Synth(a) => {
                flag!(c.corpus = Some a.corpus.clone());
                flag!(c.categories = a.categories);
                flag!(c.per_category = a.per_category);
                flag!(c.counts = Some a.counts.clone());
                flag!(c.side = a.side);
                flag!(c.bands = a.bands);
                flag!(c.noise = a.noise);
                flag!(c.separation = a.separation);
                flag!(c.seed = a.seed);
            }
            Command::Featurize(a) => a.apply(&mut c),
            Command::Distmat(a) => {
                a.corpus.apply(&mut c);
                flag!(c.kinds = a.kinds.clone());
                flag!(c.levels = a.levels);
                if let Some(m) = &a.ndd_mode {
                    c.ndd_mode = parse_mode(m)?;
                }
            }
            Command::Experiment(a) => {
                flag!(c.corpus = Some a.corpus.clone());
                flag!(c.kinds = a.kinds.clone());
                flag!(c.classifiers = a.classifiers.clone());
                flag!(c.k = a.k);
                flag!(c.policies = a.policies.clone());
                flag!(c.n_clusters = a.n_clusters);
                flag!(c.criteria = a.criteria.clone());
                flag!(c.scope = Some a.scope);
                flag!(c.t_max = a.t_max);
                flag!(c.seed = a.seed);
                flag!(c.report = Some a.report.clone());
                flag!(c.json = Some a.json.clone());
            }
            Command::Serve(a) => {
                flag!(c.corpus = Some a.corpus.clone());
                flag!(c.addr = a.addr.clone());
                flag!(c.sessions = Some a.sessions.clone());
                flag!(c.n_clusters = a.n_clusters);
                if let Some(b) = &a.thumbnail_bands {
                    c.thumbnail_bands = Some(parse_bands(b)?);
                }
            }
        }
        c.validate()?;
        Ok(c)
    }
}

/// Parses `args` (program name first) and runs the chosen command.
pub fn run<I, T>(args: I) -> Result<(), CliError>
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion) => {
            print!("{e}");
            return Ok(());
        }
        Err(e) => return Err(config_err(e.to_string().trim_end())),
    };
    let config = cli.resolve()?;
    if let Some(n) = config.threads {
        // a second call in the same process keeps the first pool
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    match cli.command {
        Command::Synth(_) => synth(&config).map(|_| ()),
        Command::Featurize(_) => featurize(&config).map(|_| ()),
        Command::Distmat(_) => distmat(&config).map(|_| ()),
        Command::Experiment(_) => experiment(&config).map(|_| ()),
        Command::Serve(_) => serve(&config),
    }
}

fn load_corpus(config: &RunConfig) -> Result<Corpus, CliError> {
    let dir = config.corpus_dir()?;
    Corpus::load_dir(dir).map_err(|e| data_err(format!("{}: {e}", dir.display())))
}

/// Writes the corpus directory and returns the number of patches.
pub fn synth(config: &RunConfig) -> Result<usize, CliError> {
    let dir = config.corpus_dir()?;
    let (patches, labels) = synth_corpus(&config.synth_config()).map_err(config_err)?;
    let corpus = Corpus::new(patches, Some(labels)).map_err(compute_err)?;
    corpus.save_dir(dir, DType::Float32).map_err(data_err)?;
    println!("wrote {} patches ({} bands) to {}", corpus.len(), corpus.bands(), dir.display());
    Ok(corpus.len())
}

fn cached_records(dir: &Path) -> usize {
    fs::read_dir(dir).map_or(0, |d| d.filter_map(Result::ok).filter(|e| e.path().is_file()).count())
}

/// Fills the unmixing cache; patches already cached are not recomputed.
/// Returns the number of newly computed patches.
pub fn featurize(config: &RunConfig) -> Result<usize, CliError> {
    let corpus = load_corpus(config)?;
    let cache = config.cache_dir()?;
    fs::create_dir_all(&cache).map_err(|e| data_err(format!("cannot create {}: {e}", cache.display())))?;
    let before = cached_records(&cache);
    let start = Instant::now();
    let opts = config.feature_options(vec![DissimKind::Spectral, DissimKind::SpectralSpatial]);
    featurize_corpus(&corpus.patches, &opts, Some(&cache)).map_err(compute_err)?;
    let fresh = cached_records(&cache).saturating_sub(before);
    println!(
        "characterised {} patches ({fresh} computed, {} cached) in {:.1?}",
        corpus.len(),
        corpus.len().saturating_sub(fresh),
        start.elapsed()
    );
    Ok(fresh)
}

/// Computes one table per configured kind and stores it in the corpus
/// directory.
pub fn distmat(config: &RunConfig) -> Result<Vec<PathBuf>, CliError> {
    let corpus = load_corpus(config)?;
    let dir = config.corpus_dir()?;
    let cache = config.cache_dir()?;
    let start = Instant::now();
    let feats = featurize_corpus(&corpus.patches, &config.feature_options(config.kinds.clone()), Some(&cache))
        .map_err(compute_err)?;
    let mut out = Vec::new();
    for &kind in &config.kinds {
        let table = DissimTable::compute(&feats, kind, config.ndd_mode).map_err(compute_err)?;
        let path = table.save(dir).map_err(data_err)?;
        println!("{kind}: {} x {} -> {} (asymmetry {:.3e})", table.len(), table.len(), path.display(), table.max_asymmetry());
        out.push(path);
    }
    tracing::info!(elapsed = ?start.elapsed(), "tables written");
    Ok(out)
}

/// Runs the sweep and writes the ANR table (and optionally JSON reports).
pub fn experiment(config: &RunConfig) -> Result<Vec<ExperimentReport>, CliError> {
    let dir = config.corpus_dir()?;
    let corpus = load_corpus(config)?;
    let labels = corpus.labels.as_ref().ok_or_else(|| data_err(format!("{} has no labels", dir.display())))?;
    let mut reports = Vec::new();
    for kind in &config.kinds {
        let table = DissimTable::load(dir, *kind).map_err(|e| data_err(format!("{e} (run `hsrf distmat` first)")))?;
        let offline = if config.policies.contains(&PrototypePolicy::Offline) {
            Some(offline_prototypes(&table, config.n_clusters.min(table.len())).map_err(compute_err)?)
        } else {
            None
        };
        for session in config.sessions().into_iter().filter(|s| s.kind == *kind) {
            let start = Instant::now();
            let report = run_experiment(&table, labels, offline.as_ref(), &session.clone().into()).map_err(compute_err)?;
            tracing::info!(
                kind = %session.kind,
                policy = %session.policy,
                classifier = %session.classifier,
                criterion = %session.criterion,
                zero = report.zero_query_anr(),
                last = report.final_anr(),
                elapsed = ?start.elapsed(),
                "configuration done"
            );
            reports.push(report);
        }
    }
    let csv = sweep_csv(&reports);
    match &config.report {
        Some(path) => fs::write(path, &csv).map_err(|e| data_err(format!("cannot write {}: {e}", path.display())))?,
        None => print!("{csv}"),
    }
    if let Some(path) = &config.json {
        let text = serde_json::to_string_pretty(&reports).map_err(compute_err)?;
        fs::write(path, text).map_err(|e| data_err(format!("cannot write {}: {e}", path.display())))?;
    }
    Ok(reports)
}

pub fn serve(config: &RunConfig) -> Result<(), CliError> {
    let mut sc = hsrf_server::ServerConfig::new(config.sessions.clone().unwrap_or_else(|| PathBuf::from("sessions")));
    sc.thumbnail_bands = config.thumbnail_bands;
    sc.n_clusters = config.n_clusters;
    let state = hsrf_server::AppState::new(sc).map_err(data_err)?;
    if let Some(dir) = &config.corpus {
        let loaded = hsrf_server::LoadedCorpus::load(dir, config.n_clusters).map_err(data_err)?;
        state.set_corpus(loaded);
    }
    let rt = tokio::runtime::Runtime::new().map_err(compute_err)?;
    rt.block_on(hsrf_server::serve(&config.addr, Arc::new(state))).map_err(compute_err)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn resolve(args: &[&str]) -> Result<RunConfig, CliError> {
        Cli::try_parse_from(std::iter::once("hsrf").chain(args.iter().copied())).unwrap().resolve()
    }

    #[test]
    fn defaults_follow_the_protocol() {
        let c = RunConfig::default();
        assert_eq!((c.k, c.t_max, c.runs, c.n_clusters), (7, 5, 20, 10));
        let scopes: Vec<usize> = [Criterion::Bw, Criterion::Al, Criterion::BwAl].iter().map(|c| c.default_scope()).collect();
        assert_eq!(scopes, [10, 10, 12]);
        assert_eq!(c.sessions().len(), 4);
        assert!(c.sessions().iter().all(|s| s.scope == 10 && s.classifier == Classifier::Knn { k: 7 }));
    }

    #[test]
    fn kv_then_flags() {
        let kv = KvMap::parse("corpus: /tmp/x\nk: 5\ncriteria: bw, al, bw-al\nkinds: spectral\nclassifiers: knn,svm\npolicies: online,offline\nthumbnail_bands: 1,2,3\nndd_mode: concatenation\n").unwrap();
        let mut c = RunConfig::default();
        c.apply_kv(&kv).unwrap();
        assert_eq!(c.k, 5);
        assert_eq!(c.corpus.as_deref(), Some(Path::new("/tmp/x")));
        assert_eq!(c.thumbnail_bands, Some([1, 2, 3]));
        assert_eq!(c.ndd_mode, NddMode::Concatenation);
        let sessions = c.sessions();
        assert_eq!(sessions.len(), 12);
        assert_eq!(sessions.iter().filter(|s| s.criterion == Criterion::BwAl && s.scope == 12).count(), 4);

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.txt");
        fs::write(&path, "k: 5\nt_max: 3\n").unwrap();
        let p = path.to_str().unwrap();
        let c = resolve(&["--config", p, "experiment", "--k", "9", "--corpus", "/tmp/y"]).unwrap();
        assert_eq!((c.k, c.t_max), (9, 3));
        assert_eq!(c.corpus.as_deref(), Some(Path::new("/tmp/y")));
    }

    #[test]
    fn config_errors() {
        let mut c = RunConfig::default();
        let bad = |text: &str| {
            let mut c = RunConfig::default();
            c.apply_kv(&KvMap::parse(text).unwrap()).and_then(|()| c.validate())
        };
        assert!(matches!(bad("colour: red"), Err(CliError::Config(_))));
        assert!(matches!(bad("k: seven"), Err(CliError::Config(_))));
        assert!(matches!(bad("k: 0"), Err(CliError::Config(_))));
        assert!(matches!(bad("criteria: sideways"), Err(CliError::Config(_))));
        assert!(matches!(bad("thumbnail_bands: 1,2"), Err(CliError::Config(_))));
        assert!(matches!(bad("separation: 2"), Err(CliError::Config(_))));
        c.kinds.clear();
        assert!(c.validate().is_err());
        assert_eq!(CliError::Data(String::new()).exit_code(), 3);
        assert_eq!(CliError::Compute(String::new()).exit_code(), 4);
    }
}
