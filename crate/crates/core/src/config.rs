//! Experiment configuration: a flat `section.key=value` text file, with
//! command-line overrides applied on top (overrides win).
//!
//! ```text
//! # comments start with '#'
//! run.seed=7
//! data.kind=inversion_pair
//! train.epochs=200
//! spem.alpha=0.4
//! ```
//!
//! Every random stream is derived from `run.seed` through
//! [`ExperimentConfig::seed_for`]; nothing reads the clock.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::baselines::BackgroundConfig;
use crate::data::{DatasetKind, PairSpec, SyntheticDatasetSpec};
use crate::embed::{EmbedderKind, ReActConfig};
use crate::error::{Error, Result};
use crate::eval::{BenchmarkConfig, BenchmarkPair, SuiteSettings};
use crate::flow::{FlowArch, MaskPattern, TrainConfig};
use crate::io::read_file;
use crate::rng::derive_seed;
use crate::spem::{Detector, SpemConfig};
use crate::theorems::SuiteConfig;

/// Raw key/value pairs in file order of precedence (later writes win).
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ConfigMap {
    entries: BTreeMap<String, String>,
}

impl ConfigMap {
    pub fn parse(text: &str, origin: &Path) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let parse_err = |reason: &str| Error::Parse {
                path: origin.to_path_buf(),
                line: i + 1,
                reason: reason.to_string(),
            };
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| parse_err("expected `section.key=value`"))?;
            let (k, v) = (k.trim(), v.trim());
            let valid = k.split_once('.').is_some_and(|(s, n)| {
                !s.is_empty() && !n.is_empty() && k.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '.')
            });
            if !valid {
                return Err(parse_err(&format!("malformed key `{k}`")));
            }
            if !KNOWN_KEYS.contains(&k) {
                return Err(parse_err(&format!("unknown key `{k}`")));
            }
            entries.insert(k.to_string(), v.to_string());
        }
        Ok(ConfigMap { entries })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = read_file(path)?;
        let text = String::from_utf8(bytes).map_err(|_| Error::Parse {
            path: path.to_path_buf(),
            line: 0,
            reason: "not valid UTF-8".into(),
        })?;
        Self::parse(&text, path)
    }

    /// Sets `key`, replacing any value from the file.
    pub fn set(&mut self, key: &str, value: impl Into<String>) -> Result<()> {
        if !KNOWN_KEYS.contains(&key) {
            return Err(Error::param("config", format!("unknown key `{key}`")));
        }
        self.entries.insert(key.to_string(), value.into());
        Ok(())
    }

    /// Applies a `key=value` override.
    pub fn set_pair(&mut self, pair: &str) -> Result<()> {
        let (k, v) = pair
            .split_once('=')
            .ok_or_else(|| Error::param("set", format!("expected key=value, got `{pair}`")))?;
        self.set(k.trim(), v.trim())
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }
}

/// Every key the configuration understands.
pub const KNOWN_KEYS: &[&str] = &[
    "run.seed",
    "run.output_dir",
    "run.detectors",
    "paths.model",
    "paths.bank",
    "paths.embedder",
    "paths.data",
    "paths.train_data",
    "data.kind",
    "data.n_train",
    "data.n_test",
    "data.mean",
    "data.variances",
    "data.weights",
    "data.means",
    "data.coarse_dims",
    "data.fine_dims",
    "data.s_min",
    "data.s_max",
    "data.rho",
    "data.ood_coarse_std",
    "data.ood_fine_std",
    "train.epochs",
    "train.batch_size",
    "train.learning_rate",
    "train.weight_decay",
    "train.lr_floor",
    "train.layers",
    "train.hidden",
    "train.mask",
    "train.log_scale_clamp",
    "spem.alpha",
    "spem.alpha_noise",
    "bank.embedder",
    "bank.dim",
    "bank.react_p",
    "bank.sample_count",
    "baselines.background_mu",
    "baselines.gmm_components",
    "sweep.kind",
    "sweep.sigma_grid",
    "sweep.alpha_grid",
    "benchmark.pairs",
    "theorems.instances",
    "theorems.decomposition_instances",
    "theorems.mc_samples",
    "theorems.fd_step",
];

/// Purposes a sub-seed is derived for.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SeedUse {
    Data = 1,
    Train = 2,
    Bank = 3,
    Spem = 4,
    Sweep = 5,
    Theorems = 6,
    Background = 7,
    Gmm = 8,
}

/// Mask choice for the coupling layers; `Auto` keeps the coarse block of
/// paired datasets together and falls back to halves.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MaskChoice {
    Auto,
    Fixed(MaskPattern),
}

impl FromStr for MaskChoice {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "auto" => Ok(MaskChoice::Auto),
            "halves" => Ok(MaskChoice::Fixed(MaskPattern::Halves)),
            _ => {
                let k = s
                    .strip_prefix("split:")
                    .and_then(|k| k.parse::<usize>().ok())
                    .ok_or_else(|| {
                        Error::param("train.mask", format!("expected auto, halves or split:K, got `{s}`"))
                    })?;
                Ok(MaskChoice::Fixed(MaskPattern::Split(k)))
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepKind {
    Sigma,
    Alpha,
}

impl FromStr for SweepKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sigma" => Ok(SweepKind::Sigma),
            "alpha" => Ok(SweepKind::Alpha),
            other => Err(Error::param(
                "sweep.kind",
                format!("expected sigma or alpha, got `{other}`"),
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Paths {
    pub model: Option<PathBuf>,
    pub bank: Option<PathBuf>,
    pub embedder: Option<PathBuf>,
    pub data: Option<PathBuf>,
    pub train_data: Option<PathBuf>,
    pub output_dir: Option<PathBuf>,
}

/// Fully parsed configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub paths: Paths,
    pub detectors: Vec<Detector>,
    /// Dataset kind name, as accepted by [`dataset_kind`].
    pub data_kind: String,
    pub data: SyntheticDatasetSpec,
    pub train: TrainConfig,
    pub mask: MaskChoice,
    pub spem: SpemConfig,
    pub embedder: EmbedderKind,
    pub embed_dim: Option<usize>,
    pub react: ReActConfig,
    pub background_mu: f64,
    pub gmm_components: usize,
    pub sweep_kind: SweepKind,
    pub sigma_grid: Vec<f64>,
    pub alpha_grid: Vec<f64>,
    pub benchmark_pairs: Vec<String>,
    pub theorems: SuiteConfig,
}

fn parse_value<T: FromStr>(key: &'static str, v: &str) -> Result<T> {
    v.parse::<T>()
        .map_err(|_| Error::param(key, format!("cannot parse `{v}`")))
}

fn parse_list<T: FromStr>(key: &'static str, v: &str) -> Result<Vec<T>> {
    if v.trim().is_empty() {
        return Ok(Vec::new());
    }
    v.split(',').map(|s| parse_value(key, s.trim())).collect()
}

fn parse_rows(key: &'static str, v: &str) -> Result<Vec<Vec<f64>>> {
    v.split(';').map(|r| parse_list(key, r)).collect()
}

/// Default σ grid for the perturbation sweep.
pub const DEFAULT_SIGMA_GRID: [f64; 8] = [0.0, 0.001, 0.002, 0.005, 0.01, 0.02, 0.05, 0.1];
/// Default α grid for the SPEM sensitivity sweep.
pub const DEFAULT_ALPHA_GRID: [f64; 9] = [0.0, 0.05, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.8];

/// Builds the dataset kind for a preset name using the `data.*` keys.
pub fn dataset_kind(name: &str, m: &ConfigMap) -> Result<DatasetKind> {
    let pair = |base: PairSpec| -> Result<DatasetKind> {
        let mut p = base;
        let f = |key: &'static str, slot: &mut f64| -> Result<()> {
            if let Some(v) = m.get(key) {
                *slot = parse_value(key, v)?;
            }
            Ok(())
        };
        if let Some(v) = m.get("data.coarse_dims") {
            p.coarse_dims = parse_value("data.coarse_dims", v)?;
        }
        if let Some(v) = m.get("data.fine_dims") {
            p.fine_dims = parse_value("data.fine_dims", v)?;
        }
        f("data.s_min", &mut p.s_min)?;
        f("data.s_max", &mut p.s_max)?;
        f("data.rho", &mut p.rho)?;
        // OOD widths apply to whichever preset is being built only when
        // the kind is the configured one; presets keep their own otherwise
        if m.get("data.kind").is_none_or(|k| k == name) {
            f("data.ood_coarse_std", &mut p.ood_coarse_std)?;
            f("data.ood_fine_std", &mut p.ood_fine_std)?;
        }
        Ok(DatasetKind::Pair(p))
    };
    match name {
        "inversion_pair" => pair(PairSpec::inversion()),
        "non_inversion_pair" => pair(PairSpec::non_inversion()),
        "gaussian" => {
            let mean: Vec<f64> = parse_list("data.mean", m.get("data.mean").unwrap_or("0,0"))?;
            let variances = match m.get("data.variances") {
                Some(v) => parse_list("data.variances", v)?,
                None => vec![1.0; mean.len()],
            };
            Ok(DatasetKind::Gaussian { mean, variances })
        }
        "gaussian_mixture" => {
            let means = parse_rows("data.means", m.get("data.means").unwrap_or("-3,0;3,0"))?;
            let k = means.len();
            let weights = match m.get("data.weights") {
                Some(v) => parse_list("data.weights", v)?,
                None => vec![1.0 / k as f64; k],
            };
            let variances = match m.get("data.variances") {
                Some(v) => parse_rows("data.variances", v)?,
                None => means.iter().map(|r| vec![1.0; r.len()]).collect(),
            };
            Ok(DatasetKind::GaussianMixture {
                weights,
                means,
                variances,
            })
        }
        other => Err(Error::param(
            "data.kind",
            format!("unknown kind `{other}` (gaussian, gaussian_mixture, inversion_pair, non_inversion_pair)"),
        )),
    }
}

impl ExperimentConfig {
    /// Parses and validates; `run.seed` is mandatory.
    pub fn from_map(m: &ConfigMap) -> Result<Self> {
        let seed: u64 = parse_value(
            "run.seed",
            m.get("run.seed")
                .ok_or_else(|| Error::param("run.seed", "a seed is required (--seed or run.seed)"))?,
        )?;
        let get = |k: &str| m.get(k);
        let path = |k: &str| get(k).map(PathBuf::from);
        macro_rules! val {
            ($key:literal, $default:expr) => {
                match get($key) {
                    Some(v) => parse_value($key, v)?,
                    None => $default,
                }
            };
        }
        let detectors: Vec<Detector> = match get("run.detectors") {
            Some(v) => parse_list("run.detectors", v)?,
            None => vec![Detector::Likelihood, Detector::Spem],
        };
        let data_kind = get("data.kind").unwrap_or("inversion_pair").to_string();
        let data = SyntheticDatasetSpec {
            kind: dataset_kind(&data_kind, m)?,
            n_train: val!("data.n_train", 10_000),
            n_test: val!("data.n_test", 10_000),
            seed: derive_seed(seed, SeedUse::Data as u64),
        };
        let arch = FlowArch {
            layers: val!("train.layers", 4),
            hidden: val!("train.hidden", 32),
            mask: MaskPattern::Halves,
            log_scale_clamp: val!("train.log_scale_clamp", 5.0),
        };
        let train = TrainConfig {
            arch,
            epochs: val!("train.epochs", 200),
            batch_size: val!("train.batch_size", 64),
            learning_rate: val!("train.learning_rate", 1e-3),
            weight_decay: val!("train.weight_decay", 1e-4),
            lr_floor: val!("train.lr_floor", 1e-6),
            seed: derive_seed(seed, SeedUse::Train as u64),
        };
        let spem = SpemConfig {
            alpha: val!("spem.alpha", 0.4),
            alpha_noise: val!("spem.alpha_noise", 0.1),
            seed: derive_seed(seed, SeedUse::Spem as u64),
        };
        let react = ReActConfig {
            p: val!("bank.react_p", 0.9),
            sample_count: val!("bank.sample_count", 1000),
            seed: derive_seed(seed, SeedUse::Bank as u64),
        };
        let embed_dim = match get("bank.dim") {
            Some(v) => Some(parse_value("bank.dim", v)?),
            None => None,
        };
        let cfg = ExperimentConfig {
            seed,
            paths: Paths {
                model: path("paths.model"),
                bank: path("paths.bank"),
                embedder: path("paths.embedder"),
                data: path("paths.data"),
                train_data: path("paths.train_data"),
                output_dir: path("run.output_dir"),
            },
            detectors,
            data_kind,
            data,
            train,
            mask: val!("train.mask", MaskChoice::Auto),
            spem,
            embedder: val!("bank.embedder", EmbedderKind::Identity),
            embed_dim,
            react,
            background_mu: val!("baselines.background_mu", 0.2),
            gmm_components: val!("baselines.gmm_components", 3),
            sweep_kind: val!("sweep.kind", SweepKind::Sigma),
            sigma_grid: match get("sweep.sigma_grid") {
                Some(v) => parse_list("sweep.sigma_grid", v)?,
                None => DEFAULT_SIGMA_GRID.to_vec(),
            },
            alpha_grid: match get("sweep.alpha_grid") {
                Some(v) => parse_list("sweep.alpha_grid", v)?,
                None => DEFAULT_ALPHA_GRID.to_vec(),
            },
            benchmark_pairs: match get("benchmark.pairs") {
                Some(v) => parse_list("benchmark.pairs", v)?,
                None => vec!["inversion_pair".into(), "non_inversion_pair".into()],
            },
            theorems: SuiteConfig {
                instances: val!("theorems.instances", 100),
                decomposition_instances: val!("theorems.decomposition_instances", 20),
                mc_samples: val!("theorems.mc_samples", 20_000),
                fd_step: val!("theorems.fd_step", 1e-6),
                seed: derive_seed(seed, SeedUse::Theorems as u64),
            },
        };
        for name in &cfg.benchmark_pairs {
            dataset_kind(name, m)?;
        }
        Ok(cfg)
    }

    pub fn seed_for(&self, purpose: SeedUse) -> u64 {
        derive_seed(self.seed, purpose as u64)
    }

    /// Training settings with the mask resolved for data of width `d`.
    pub fn train_config_for(&self, d: usize) -> TrainConfig {
        let mask = match self.mask {
            MaskChoice::Fixed(m) => m,
            MaskChoice::Auto => match &self.data.kind {
                DatasetKind::Pair(p) if p.dim() == d => MaskPattern::Split(p.coarse_dims),
                _ => MaskPattern::Halves,
            },
        };
        let mut t = self.train.clone();
        t.arch.mask = mask;
        t
    }

    pub fn suite_settings(&self) -> SuiteSettings {
        SuiteSettings {
            spem: self.spem.clone(),
            react: self.react.clone(),
            embedder: self.embedder,
            embed_dim: self.embed_dim,
            background: BackgroundConfig {
                mu: self.background_mu,
                range: None,
                train: self.train_config_for(self.data.kind.dim()),
                seed: self.seed_for(SeedUse::Background),
            },
            gmm_components: self.gmm_components,
            seed: self.seed_for(SeedUse::Gmm),
        }
    }

    /// Benchmark matrix over `benchmark.pairs`, each pair drawn with the
    /// configured sizes and data seed.
    pub fn benchmark(&self, m: &ConfigMap) -> Result<BenchmarkConfig> {
        let pairs = self
            .benchmark_pairs
            .iter()
            .map(|name| {
                Ok(BenchmarkPair {
                    name: name.clone(),
                    data: SyntheticDatasetSpec {
                        kind: dataset_kind(name, m)?,
                        ..self.data.clone()
                    },
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(BenchmarkConfig {
            pairs,
            detectors: self.detectors.clone(),
            train: self.train_config_for(self.data.kind.dim()),
            suite: self.suite_settings(),
            seed: self.seed,
        })
    }
}
