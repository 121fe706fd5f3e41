//! AUROC, ROC curves and the experiment protocols: σ-sweep, α-sweep,
//! controlled-λ comparison and the detector × dataset benchmark.

use crate::baselines::{
    complexity_score, fit_gmm, gmm_features, likelihood_ratio_score, likelihood_score, train_background_model,
    typicality_latent_score, BackgroundConfig, GmmModel, TypicalityReference, TypicalityVariant, UnitRange, CODEC_ID,
};
use crate::data::{fmt_f64, generate, SyntheticDatasetSpec};
use crate::embed::{build_memory_bank, fit_embedder, Embedder, EmbedderKind, MemoryBank, ReActConfig};
use crate::error::{ensure_finite, Error, Result};
use crate::flow::{train, FlowModel, TrainConfig};
use crate::rng::{derive_seed, Domain, Stream};
use crate::spem::{
    controlled_lambda_spem_score, similarity_score, spem_noise_score, spem_score, AnomalyScore, Detector, SpemConfig,
};
use crate::Batch;

/// Scores of both populations; higher means more anomalous.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreSet {
    pub id_scores: Vec<f64>,
    pub ood_scores: Vec<f64>,
}

impl ScoreSet {
    pub fn new(id_scores: Vec<f64>, ood_scores: Vec<f64>) -> Result<Self> {
        if id_scores.is_empty() {
            return Err(Error::Empty("in-distribution scores"));
        }
        if ood_scores.is_empty() {
            return Err(Error::Empty("out-of-distribution scores"));
        }
        ensure_finite(&id_scores, "in-distribution scores")?;
        ensure_finite(&ood_scores, "out-of-distribution scores")?;
        Ok(ScoreSet { id_scores, ood_scores })
    }

    pub fn from_scores(id: &[AnomalyScore], ood: &[AnomalyScore]) -> Result<Self> {
        Self::new(
            id.iter().map(|s| s.value).collect(),
            ood.iter().map(|s| s.value).collect(),
        )
    }
}

/// `P(ood > id) + ½ P(ood = id)` via mid-ranks, `O(n log n)`.
///
/// The numerator is accumulated as an exact integer (twice the
/// Mann-Whitney `U`), so the result is bitwise identical to
/// [`auroc_pairwise`].
pub fn auroc(s: &ScoreSet) -> Result<f64> {
    let (n1, n2) = (s.id_scores.len(), s.ood_scores.len());
    if n1 == 0 || n2 == 0 {
        return Err(Error::Empty("score set"));
    }
    let mut all: Vec<(f64, bool)> = s
        .id_scores
        .iter()
        .map(|&v| (v, false))
        .chain(s.ood_scores.iter().map(|&v| (v, true)))
        .collect();
    if all.iter().any(|(v, _)| !v.is_finite()) {
        return Err(Error::NonFinite { context: "scores" });
    }
    all.sort_by(|a, b| a.0.total_cmp(&b.0));
    // twice the rank sum of the OOD scores, with 1-based mid-ranks
    let mut twice_rank_sum: u128 = 0;
    let mut i = 0;
    while i < all.len() {
        let mut j = i;
        while j + 1 < all.len() && all[j + 1].0 == all[i].0 {
            j += 1;
        }
        let twice_mid = (i + j + 2) as u128;
        let ood_in_group = all[i..=j].iter().filter(|(_, o)| *o).count() as u128;
        twice_rank_sum += twice_mid * ood_in_group;
        i = j + 1;
    }
    let n2u = n2 as u128;
    let twice_u = twice_rank_sum - n2u * (n2u + 1);
    Ok(twice_u as f64 / (2 * n1 as u128 * n2u) as f64)
}

/// Reference `O(n1 n2)` pair count with half credit for ties.
pub fn auroc_pairwise(s: &ScoreSet) -> Result<f64> {
    let (n1, n2) = (s.id_scores.len(), s.ood_scores.len());
    if n1 == 0 || n2 == 0 {
        return Err(Error::Empty("score set"));
    }
    let mut twice: u128 = 0;
    for &o in &s.ood_scores {
        for &i in &s.id_scores {
            if o > i {
                twice += 2;
            } else if o == i {
                twice += 1;
            }
        }
    }
    Ok(twice as f64 / (2 * n1 as u128 * n2 as u128) as f64)
}

/// `(FPR, TPR)` points from `(0, 0)` to `(1, 1)`, one per distinct score
/// threshold, OOD being the positive class. Tied scores produce a single
/// diagonal step, so the trapezoid area equals [`auroc`].
pub fn roc_curve(s: &ScoreSet) -> Result<Vec<(f64, f64)>> {
    let (n1, n2) = (s.id_scores.len(), s.ood_scores.len());
    if n1 == 0 || n2 == 0 {
        return Err(Error::Empty("score set"));
    }
    let mut all: Vec<(f64, bool)> = s
        .id_scores
        .iter()
        .map(|&v| (v, false))
        .chain(s.ood_scores.iter().map(|&v| (v, true)))
        .collect();
    all.sort_by(|a, b| b.0.total_cmp(&a.0));
    let mut pts = vec![(0.0, 0.0)];
    let (mut fp, mut tp) = (0usize, 0usize);
    let mut i = 0;
    while i < all.len() {
        let mut j = i;
        while j < all.len() && all[j].0 == all[i].0 {
            if all[j].1 {
                tp += 1;
            } else {
                fp += 1;
            }
            j += 1;
        }
        pts.push((fp as f64 / n1 as f64, tp as f64 / n2 as f64));
        i = j;
    }
    Ok(pts)
}

pub fn trapezoid_area(curve: &[(f64, f64)]) -> f64 {
    curve
        .windows(2)
        .map(|w| (w[1].0 - w[0].0) * (w[1].1 + w[0].1) * 0.5)
        .sum()
}

/// AUROC per grid point for one detector.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult {
    pub grid: Vec<f64>,
    pub auroc: Vec<f64>,
    pub detector: String,
    pub seed: u64,
}

impl SweepResult {
    pub fn header() -> Vec<String> {
        ["grid", "auroc", "detector", "seed"]
            .iter()
            .map(|s| s.to_string())
            .collect()
    }

    pub fn rows(&self) -> Vec<Vec<String>> {
        self.grid
            .iter()
            .zip(&self.auroc)
            .map(|(g, a)| vec![fmt_f64(*g), fmt_f64(*a), self.detector.clone(), self.seed.to_string()])
            .collect()
    }
}

/// `v[i + 1] ≥ v[i] − tol` for every consecutive pair.
pub fn is_non_decreasing(values: &[f64], tol: f64) -> bool {
    values.windows(2).all(|w| w[1] >= w[0] - tol)
}

/// Range of the last quarter of the curve (at least two points when there
/// are two) below `tol`.
pub fn has_plateau(values: &[f64], tol: f64) -> bool {
    if values.is_empty() {
        return false;
    }
    let k = values.len().div_ceil(4).max(2).min(values.len());
    let tail = &values[values.len() - k..];
    let hi = tail.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lo = tail.iter().copied().fold(f64::INFINITY, f64::min);
    hi - lo < tol
}

fn check_grid(grid: &[f64], name: &'static str) -> Result<()> {
    if grid.is_empty() {
        return Err(Error::Empty("grid"));
    }
    if grid.iter().any(|g| !(g.is_finite() && *g >= 0.0)) {
        return Err(Error::param(name, "grid values must be non-negative and finite"));
    }
    Ok(())
}

fn nll_batch(model: &FlowModel, x: &Batch) -> Result<Vec<f64>> {
    Ok(model.log_likelihood_batch(x)?.into_iter().map(|v| -v).collect())
}

/// Likelihood AUROC when only the OOD set is perturbed by `N(0, σ² I)`.
/// OOD sample `i` reuses one standard-normal vector (stream `(seed, i)`)
/// across the whole grid, and `σ = 0` scores the raw inputs.
pub fn sigma_sweep(
    model: &FlowModel,
    id_test: &Batch,
    ood_test: &Batch,
    grid: &[f64],
    seed: u64,
) -> Result<SweepResult> {
    check_grid(grid, "sigma")?;
    let id_scores = nll_batch(model, id_test)?;
    let (n, d) = ood_test.dim();
    let mut noise = Batch::zeros((n, d));
    for (i, mut row) in noise.rows_mut().into_iter().enumerate() {
        let mut rng = Stream::new(seed, Domain::Sweep, i as u64);
        row.iter_mut().for_each(|v| *v = rng.standard_normal());
    }
    let mut aurocs = Vec::with_capacity(grid.len());
    for &sigma in grid {
        let ood_scores = if sigma == 0.0 {
            nll_batch(model, ood_test)?
        } else {
            nll_batch(model, &(ood_test + &(&noise * sigma)))?
        };
        aurocs.push(auroc(&ScoreSet::new(id_scores.clone(), ood_scores)?)?);
    }
    Ok(SweepResult {
        grid: grid.to_vec(),
        auroc: aurocs,
        detector: Detector::Likelihood.to_string(),
        seed,
    })
}

/// Trained flow plus the similarity machinery SPEM needs.
#[derive(Debug, Clone, Copy)]
pub struct SpemPipeline<'a> {
    pub model: &'a FlowModel,
    pub embedder: &'a Embedder,
    pub bank: &'a MemoryBank,
}

/// SPEM AUROC for each `α`. ID sample `i` has id `i`, OOD sample `i` has id
/// `n_id + i`, so noise draws are shared across the grid.
pub fn alpha_sweep(
    p: SpemPipeline<'_>,
    id_test: &Batch,
    ood_test: &Batch,
    grid: &[f64],
    seed: u64,
) -> Result<SweepResult> {
    check_grid(grid, "alpha")?;
    p.bank.check_embedder(p.embedder)?;
    let n_id = id_test.nrows() as u64;
    let mut aurocs = Vec::with_capacity(grid.len());
    for &alpha in grid {
        let cfg = SpemConfig {
            alpha,
            alpha_noise: alpha,
            seed,
        };
        let score = |x: &Batch, first: u64| -> Result<Vec<f64>> {
            x.rows()
                .into_iter()
                .enumerate()
                .map(|(i, r)| Ok(spem_score(p.model, p.bank, p.embedder, &cfg, &r.to_vec(), first + i as u64)?.value))
                .collect()
        };
        aurocs.push(auroc(&ScoreSet::new(score(id_test, 0)?, score(ood_test, n_id)?)?)?);
    }
    Ok(SweepResult {
        grid: grid.to_vec(),
        auroc: aurocs,
        detector: Detector::Spem.to_string(),
        seed,
    })
}

/// Per-repeat AUROCs of the controlled-λ protocol.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlledLambdaResult {
    pub lambda_auroc: Vec<f64>,
    pub spem_auroc: Vec<f64>,
}

impl ControlledLambdaResult {
    pub fn mean_lambda(&self) -> f64 {
        self.lambda_auroc.iter().sum::<f64>() / self.lambda_auroc.len() as f64
    }

    pub fn mean_spem(&self) -> f64 {
        self.spem_auroc.iter().sum::<f64>() / self.spem_auroc.len() as f64
    }
}

pub const CONTROLLED_LAMBDA_ID: (f64, f64) = (0.65, 0.05);
pub const CONTROLLED_LAMBDA_OOD: (f64, f64) = (0.60, 0.05);

/// Similarities drawn from `N(0.65, 0.05²)` for ID and `N(0.60, 0.05²)` for
/// OOD, clipped to `[0, 1]`, replace the memory bank. Each repeat compares
/// `−λ` as a score against SPEM driven by those λ values.
pub fn controlled_lambda_experiment(
    model: &FlowModel,
    id_test: &Batch,
    ood_test: &Batch,
    alpha: f64,
    n_repeats: usize,
    seed: u64,
) -> Result<ControlledLambdaResult> {
    if n_repeats == 0 {
        return Err(Error::param("n_repeats", "must be positive"));
    }
    let (n_id, n_ood) = (id_test.nrows(), ood_test.nrows());
    let mut out = ControlledLambdaResult {
        lambda_auroc: Vec::with_capacity(n_repeats),
        spem_auroc: Vec::with_capacity(n_repeats),
    };
    for r in 0..n_repeats as u64 {
        let draw = |side: u64, n: usize, (m, s): (f64, f64)| -> Vec<f64> {
            let mut rng = Stream::new(seed, Domain::Lambda, 2 * r + side);
            (0..n).map(|_| rng.normal(m, s).clamp(0.0, 1.0)).collect()
        };
        let l_id = draw(0, n_id, CONTROLLED_LAMBDA_ID);
        let l_ood = draw(1, n_ood, CONTROLLED_LAMBDA_OOD);
        let neg = |v: &[f64]| v.iter().map(|l| -l).collect::<Vec<_>>();
        out.lambda_auroc.push(auroc(&ScoreSet::new(neg(&l_id), neg(&l_ood))?)?);
        let cfg = SpemConfig {
            alpha,
            alpha_noise: alpha,
            seed: derive_seed(seed, r),
        };
        let score = |x: &Batch, lambdas: &[f64], first: u64| -> Result<Vec<f64>> {
            x.rows()
                .into_iter()
                .zip(lambdas)
                .enumerate()
                .map(|(i, (row, &l))| {
                    Ok(controlled_lambda_spem_score(model, &cfg, &row.to_vec(), l, first + i as u64)?.value)
                })
                .collect()
        };
        let s_id = score(id_test, &l_id, 0)?;
        let s_ood = score(ood_test, &l_ood, n_id as u64)?;
        out.spem_auroc.push(auroc(&ScoreSet::new(s_id, s_ood)?)?);
    }
    Ok(out)
}

/// Settings for fitting the auxiliary parts of a [`DetectorSuite`].
#[derive(Debug, Clone, PartialEq)]
pub struct SuiteSettings {
    pub spem: SpemConfig,
    pub react: ReActConfig,
    pub embedder: EmbedderKind,
    /// Embedding width; `None` keeps the input width.
    pub embed_dim: Option<usize>,
    pub background: BackgroundConfig,
    pub gmm_components: usize,
    pub seed: u64,
}

impl Default for SuiteSettings {
    fn default() -> Self {
        SuiteSettings {
            spem: SpemConfig::default(),
            react: ReActConfig::default(),
            embedder: EmbedderKind::Identity,
            embed_dim: None,
            background: BackgroundConfig::default(),
            gmm_components: 3,
            seed: 0,
        }
    }
}

/// A trained flow plus whatever each detector needs beyond it. Parts are
/// fitted only for the detectors requested.
#[derive(Debug, Clone)]
pub struct DetectorSuite {
    pub model: FlowModel,
    pub spem: SpemConfig,
    pub range: Option<UnitRange>,
    pub typicality: Option<TypicalityReference>,
    pub background: Option<FlowModel>,
    pub gmm: Option<GmmModel>,
    pub similarity: Option<(Embedder, MemoryBank)>,
}

fn needs_range(d: Detector) -> bool {
    matches!(d, Detector::Complexity | Detector::Gmm)
}

fn needs_bank(d: Detector) -> bool {
    matches!(d, Detector::Similarity | Detector::Spem | Detector::SpemNoise)
}

impl DetectorSuite {
    pub fn new(model: FlowModel, spem: SpemConfig) -> Self {
        DetectorSuite {
            model,
            spem,
            range: None,
            typicality: None,
            background: None,
            gmm: None,
            similarity: None,
        }
    }

    /// Uses an existing embedder and memory bank for the similarity-based
    /// detectors.
    pub fn with_bank(mut self, embedder: Embedder, bank: MemoryBank) -> Result<Self> {
        bank.check_embedder(&embedder)?;
        self.similarity = Some((embedder, bank));
        Ok(self)
    }

    /// Fits every part the listed detectors need from in-distribution
    /// training data. Parts already present are kept.
    pub fn fit(mut self, id_train: &Batch, detectors: &[Detector], s: &SuiteSettings) -> Result<Self> {
        if detectors.iter().any(|&d| needs_range(d)) && self.range.is_none() {
            self.range = Some(UnitRange::fit(id_train)?);
        }
        if detectors.contains(&Detector::TypicalityEntropy) && self.typicality.is_none() {
            self.typicality = Some(TypicalityReference::fit(&self.model, id_train)?);
        }
        if detectors.contains(&Detector::LikelihoodRatio) && self.background.is_none() {
            self.background = Some(train_background_model(id_train, &s.background)?);
        }
        if detectors.contains(&Detector::Gmm) && self.gmm.is_none() {
            let range = self.range.expect("range fitted above");
            let mut feats = Batch::zeros((id_train.nrows(), 2));
            for (i, row) in id_train.rows().into_iter().enumerate() {
                let f = gmm_features(&self.model, &range, &row.to_vec())?;
                feats[[i, 0]] = f[0];
                feats[[i, 1]] = f[1];
            }
            self.gmm = Some(fit_gmm(&feats, s.gmm_components, s.seed)?.0);
        }
        if detectors.iter().any(|&d| needs_bank(d)) && self.similarity.is_none() {
            let d_out = s.embed_dim.unwrap_or(id_train.ncols());
            let e = fit_embedder(id_train, s.embedder, d_out, s.seed)?;
            let bank = build_memory_bank(id_train, &e, &s.react)?;
            self.similarity = Some((e, bank));
        }
        Ok(self)
    }

    fn missing(what: &str, d: Detector) -> Error {
        Error::param(
            "detector",
            format!("`{d}` needs {what}, which this suite was not given"),
        )
    }

    /// Scores every row of `x`; row `i` has sample id `first_id + i`.
    pub fn score(&self, detector: Detector, x: &Batch, first_id: u64) -> Result<Vec<AnomalyScore>> {
        if x.ncols() != self.model.dim() {
            return Err(Error::Dimension {
                expected: self.model.dim(),
                got: x.ncols(),
            });
        }
        let m = &self.model;
        let mut out = Vec::with_capacity(x.nrows());
        for (i, row) in x.rows().into_iter().enumerate() {
            let v = row.to_vec();
            let id = first_id + i as u64;
            let s = match detector {
                Detector::Likelihood => likelihood_score(m, &v)?,
                Detector::Complexity => {
                    let r = self
                        .range
                        .as_ref()
                        .ok_or_else(|| Self::missing("a data range", detector))?;
                    complexity_score(m, &v, &r.quantize(&v)?)?
                }
                Detector::Typicality => typicality_latent_score(m, &v, TypicalityVariant::SqrtD)?,
                Detector::TypicalitySquared => typicality_latent_score(m, &v, TypicalityVariant::D)?,
                Detector::TypicalityEntropy => self
                    .typicality
                    .as_ref()
                    .ok_or_else(|| Self::missing("a training log-likelihood", detector))?
                    .score(m, &v)?,
                Detector::LikelihoodRatio => {
                    let bg = self
                        .background
                        .as_ref()
                        .ok_or_else(|| Self::missing("a background model", detector))?;
                    likelihood_ratio_score(m, bg, &v)?
                }
                Detector::Gmm => {
                    let (r, g) = self
                        .range
                        .as_ref()
                        .zip(self.gmm.as_ref())
                        .ok_or_else(|| Self::missing("a fitted mixture", detector))?;
                    g.score(&gmm_features(m, r, &v)?)?
                }
                Detector::Similarity | Detector::Spem | Detector::SpemNoise => {
                    let (e, b) = self
                        .similarity
                        .as_ref()
                        .ok_or_else(|| Self::missing("a memory bank", detector))?;
                    match detector {
                        Detector::Similarity => similarity_score(b, e, &v)?,
                        Detector::Spem => spem_score(m, b, e, &self.spem, &v, id)?,
                        _ => spem_noise_score(m, b, e, &self.spem, &v, id)?,
                    }
                }
            };
            out.push(s);
        }
        Ok(out)
    }
}

/// One named ID/OOD pair of the benchmark.
#[derive(Debug, Clone, PartialEq)]
pub struct BenchmarkPair {
    pub name: String,
    pub data: SyntheticDatasetSpec,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchmarkConfig {
    pub pairs: Vec<BenchmarkPair>,
    pub detectors: Vec<Detector>,
    pub train: TrainConfig,
    pub suite: SuiteSettings,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchmarkRow {
    pub pair: String,
    pub detector: Detector,
    pub auroc: f64,
    pub seed: u64,
    pub codec_id: String,
}

impl BenchmarkRow {
    pub fn header() -> Vec<String> {
        ["pair", "detector", "auroc", "seed", "codec_id"]
            .iter()
            .map(|s| s.to_string())
            .collect()
    }

    pub fn record(&self) -> Vec<String> {
        vec![
            self.pair.clone(),
            self.detector.to_string(),
            fmt_f64(self.auroc),
            self.seed.to_string(),
            self.codec_id.clone(),
        ]
    }
}

/// Scores every detector on every pair, one row per (pair, detector) in
/// configuration order. Pairs whose training split coincides share one
/// trained flow and suite.
pub fn benchmark_run(cfg: &BenchmarkConfig) -> Result<Vec<BenchmarkRow>> {
    if cfg.pairs.is_empty() {
        return Err(Error::Empty("benchmark pairs"));
    }
    if cfg.detectors.is_empty() {
        return Err(Error::Empty("benchmark detectors"));
    }
    let mut fitted: Vec<(Batch, DetectorSuite)> = Vec::new();
    let mut rows = Vec::new();
    for pair in &cfg.pairs {
        let data = generate(&pair.data)?;
        if data.test_ood.nrows() == 0 {
            return Err(Error::param(
                "pair",
                format!("`{}` has no out-of-distribution split", pair.name),
            ));
        }
        let idx = match fitted.iter().position(|(t, _)| *t == data.train) {
            Some(i) => i,
            None => {
                log::info!("benchmark: training flow for `{}`", pair.name);
                let (model, _) = train(&data.train, &cfg.train)?;
                let suite =
                    DetectorSuite::new(model, cfg.suite.spem.clone()).fit(&data.train, &cfg.detectors, &cfg.suite)?;
                fitted.push((data.train.clone(), suite));
                fitted.len() - 1
            }
        };
        let suite = &fitted[idx].1;
        let n_id = data.test_id.nrows() as u64;
        for &det in &cfg.detectors {
            let id = suite.score(det, &data.test_id, 0)?;
            let ood = suite.score(det, &data.test_ood, n_id)?;
            rows.push(BenchmarkRow {
                pair: pair.name.clone(),
                detector: det,
                auroc: auroc(&ScoreSet::from_scores(&id, &ood)?)?,
                seed: cfg.seed,
                codec_id: CODEC_ID.to_string(),
            });
        }
    }
    Ok(rows)
}
