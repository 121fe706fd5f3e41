//! Similarity-scaled perturbation scoring.
//!
//! A test point `x` with similarity `λ` to the in-distribution memory bank is
//! perturbed with `N(0, σ² I)`, `σ = (1 - λ) α`, before its likelihood is
//! evaluated. Highly familiar inputs are left almost untouched while
//! unfamiliar ones are smoothed, which raises the entropy of the OOD side.
//!
//! Every noise draw comes from the stream `(seed, domain, sample_id)`, so a
//! score depends only on the input, its id and the seed.

use std::fmt;
use std::str::FromStr;

use crate::embed::{Embedder, MemoryBank};
use crate::error::{Error, Result};
use crate::flow::FlowModel;
use crate::rng::{Domain, Stream};
use crate::Batch;

/// Every detector in the crate. Scores are oriented so that higher means
/// more anomalous.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Detector {
    Likelihood,
    Complexity,
    /// `|sqrt(d) - |z|^2|`
    Typicality,
    /// `|d - |z|^2|`, the shell-radius variant
    TypicalitySquared,
    TypicalityEntropy,
    LikelihoodRatio,
    Gmm,
    Similarity,
    Spem,
    SpemNoise,
}

impl Detector {
    pub const ALL: [Detector; 10] = [
        Detector::Likelihood,
        Detector::Complexity,
        Detector::Typicality,
        Detector::TypicalitySquared,
        Detector::TypicalityEntropy,
        Detector::LikelihoodRatio,
        Detector::Gmm,
        Detector::Similarity,
        Detector::Spem,
        Detector::SpemNoise,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Detector::Likelihood => "likelihood",
            Detector::Complexity => "complexity",
            Detector::Typicality => "typicality",
            Detector::TypicalitySquared => "typicality_squared",
            Detector::TypicalityEntropy => "typicality_entropy",
            Detector::LikelihoodRatio => "likelihood_ratio",
            Detector::Gmm => "gmm",
            Detector::Similarity => "similarity",
            Detector::Spem => "spem",
            Detector::SpemNoise => "spem_noise",
        }
    }
}

impl fmt::Display for Detector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Detector {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Detector::ALL
            .into_iter()
            .find(|d| d.name() == s)
            .ok_or_else(|| Error::param("detector", format!("unknown detector `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnomalyScore {
    pub detector: Detector,
    pub value: f64,
    /// Similarity used, for detectors that compute one.
    pub lambda: Option<f64>,
    /// Perturbation scale used, for perturbation-based detectors.
    pub sigma: Option<f64>,
}

impl AnomalyScore {
    pub fn plain(detector: Detector, value: f64) -> Self {
        AnomalyScore {
            detector,
            value,
            lambda: None,
            sigma: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpemConfig {
    pub alpha: f64,
    pub alpha_noise: f64,
    pub seed: u64,
}

impl Default for SpemConfig {
    fn default() -> Self {
        SpemConfig {
            alpha: 0.4,
            alpha_noise: 0.1,
            seed: 0,
        }
    }
}

/// `σ = (1 - λ) α` with `λ` clamped to `[0, 1]` first, so negative
/// similarities perturb no more than zero similarity does.
pub fn perturbation_sigma(lambda: f64, alpha: f64) -> Result<f64> {
    if !lambda.is_finite() {
        return Err(Error::NonFinite { context: "similarity" });
    }
    if !(alpha >= 0.0 && alpha.is_finite()) {
        return Err(Error::param("alpha", "must be non-negative and finite"));
    }
    Ok((1.0 - lambda.clamp(0.0, 1.0)) * alpha)
}

fn perturbed(x: &[f64], sigma: f64, seed: u64, domain: Domain, sample_id: u64) -> Vec<f64> {
    if sigma == 0.0 {
        return x.to_vec();
    }
    let mut rng = Stream::new(seed, domain, sample_id);
    x.iter().map(|v| v + sigma * rng.standard_normal()).collect()
}

/// Score with a known similarity; shared by [`spem_score`] and the
/// controlled-similarity protocol.
pub fn controlled_lambda_spem_score(
    model: &FlowModel,
    cfg: &SpemConfig,
    x: &[f64],
    lambda: f64,
    sample_id: u64,
) -> Result<AnomalyScore> {
    let lambda = lambda.clamp(0.0, 1.0);
    let sigma = perturbation_sigma(lambda, cfg.alpha)?;
    let xp = perturbed(x, sigma, cfg.seed, Domain::Perturb, sample_id);
    let ll = model.log_likelihood(&xp)?;
    Ok(AnomalyScore {
        detector: Detector::Spem,
        value: -ll,
        lambda: Some(lambda),
        sigma: Some(sigma),
    })
}

pub fn spem_score(
    model: &FlowModel,
    bank: &MemoryBank,
    embedder: &Embedder,
    cfg: &SpemConfig,
    x: &[f64],
    sample_id: u64,
) -> Result<AnomalyScore> {
    let lambda = bank.similarity(embedder, x)?;
    let sigma = perturbation_sigma(lambda, cfg.alpha)?;
    if x.len() != model.dim() {
        return Err(Error::Dimension {
            expected: model.dim(),
            got: x.len(),
        });
    }
    let xp = perturbed(x, sigma, cfg.seed, Domain::Perturb, sample_id);
    Ok(AnomalyScore {
        detector: Detector::Spem,
        value: -model.log_likelihood(&xp)?,
        lambda: Some(lambda),
        sigma: Some(sigma),
    })
}

/// Scores only the similarity-scaled noise: `x` contributes through `λ` and
/// nothing else. At `λ = 1` the noise is exactly the zero vector.
pub fn spem_noise_score(
    model: &FlowModel,
    bank: &MemoryBank,
    embedder: &Embedder,
    cfg: &SpemConfig,
    x: &[f64],
    sample_id: u64,
) -> Result<AnomalyScore> {
    let lambda = bank.similarity(embedder, x)?;
    let sigma = perturbation_sigma(lambda, cfg.alpha_noise)?;
    let zero = vec![0.0; model.dim()];
    let noise = perturbed(&zero, sigma, cfg.seed, Domain::SpemNoise, sample_id);
    Ok(AnomalyScore {
        detector: Detector::SpemNoise,
        value: -model.log_likelihood(&noise)?,
        lambda: Some(lambda),
        sigma: Some(sigma),
    })
}

/// `-λ`: less similar means more anomalous.
pub fn similarity_score(bank: &MemoryBank, embedder: &Embedder, x: &[f64]) -> Result<AnomalyScore> {
    let lambda = bank.similarity(embedder, x)?;
    Ok(AnomalyScore {
        detector: Detector::Similarity,
        value: -lambda,
        lambda: Some(lambda),
        sigma: None,
    })
}

/// Model, bank and embedder bundled for batch scoring.
pub struct SpemScorer<'a> {
    pub model: &'a FlowModel,
    pub bank: &'a MemoryBank,
    pub embedder: &'a Embedder,
    pub cfg: &'a SpemConfig,
}

impl SpemScorer<'_> {
    /// Scores each row with `detector`; row `i` uses sample id `first_id + i`.
    pub fn score_batch(&self, detector: Detector, x: &Batch, first_id: u64) -> Result<Vec<AnomalyScore>> {
        self.bank.check_embedder(self.embedder)?;
        x.rows()
            .into_iter()
            .enumerate()
            .map(|(i, row)| {
                let x = row.to_vec();
                let id = first_id + i as u64;
                match detector {
                    Detector::Spem => spem_score(self.model, self.bank, self.embedder, self.cfg, &x, id),
                    Detector::SpemNoise => spem_noise_score(self.model, self.bank, self.embedder, self.cfg, &x, id),
                    Detector::Similarity => similarity_score(self.bank, self.embedder, &x),
                    other => Err(Error::param(
                        "detector",
                        format!("`{other}` is not a similarity-based detector"),
                    )),
                }
            })
            .collect()
    }

    pub fn lambdas(&self, x: &Batch) -> Result<Vec<f64>> {
        x.rows()
            .into_iter()
            .map(|row| self.bank.similarity(self.embedder, &row.to_vec()))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embed::{build_memory_bank, ReActConfig};
    use crate::flow::FlowArch;
    use ndarray::{array, Array2};

    fn setup() -> (FlowModel, MemoryBank, Embedder, Batch) {
        let mut s = Stream::new(3, Domain::Data, 0);
        let data = Array2::from_shape_fn((40, 2), |_| s.standard_normal());
        let e = Embedder::identity(2).unwrap();
        let bank = build_memory_bank(&data, &e, &ReActConfig::default()).unwrap();
        let model = FlowModel::random(2, &FlowArch::default(), 0.3, 1).unwrap();
        (model, bank, e, data)
    }

    #[test]
    fn sigma_rule() {
        assert_eq!(perturbation_sigma(1.0, 0.4).unwrap(), 0.0);
        assert_eq!(perturbation_sigma(0.0, 0.4).unwrap(), 0.4);
        assert_eq!(perturbation_sigma(0.5, 0.4).unwrap(), 0.2);
        assert_eq!(perturbation_sigma(-0.3, 0.4).unwrap(), 0.4);
        assert!(perturbation_sigma(0.5, -1.0).is_err());
        assert!(perturbation_sigma(f64::NAN, 0.4).is_err());
    }

    #[test]
    fn sigma_monotone_in_lambda() {
        let mut prev = f64::INFINITY;
        for i in 0..=20 {
            let s = perturbation_sigma(-0.5 + i as f64 * 0.1, 0.4).unwrap();
            assert!(s <= prev);
            prev = s;
        }
    }

    #[test]
    fn bank_member_scores_raw_likelihood() {
        let (model, bank, e, _) = setup();
        let x = bank.row(0).to_vec();
        let cfg = SpemConfig::default();
        let s = spem_score(&model, &bank, &e, &cfg, &x, 5).unwrap();
        assert!((s.lambda.unwrap() - 1.0).abs() < 1e-12);
        let want = -model.log_likelihood(&x).unwrap();
        assert!((s.value - want).abs() < 1e-9);
        let c = controlled_lambda_spem_score(&model, &cfg, &x, 1.0, 5).unwrap();
        assert_eq!(c.value, want);
    }

    #[test]
    fn zero_alpha_equals_likelihood_bitwise() {
        let (model, bank, e, data) = setup();
        let cfg = SpemConfig {
            alpha: 0.0,
            ..SpemConfig::default()
        };
        for (i, row) in data.rows().into_iter().enumerate() {
            let x = row.to_vec();
            let s = spem_score(&model, &bank, &e, &cfg, &x, i as u64).unwrap();
            assert_eq!(s.value.to_bits(), (-model.log_likelihood(&x).unwrap()).to_bits());
        }
    }

    #[test]
    fn per_sample_determinism() {
        let (model, bank, e, _) = setup();
        let cfg = SpemConfig::default();
        let x = [-3.0, -4.0];
        let a = spem_score(&model, &bank, &e, &cfg, &x, 11).unwrap();
        let b = spem_score(&model, &bank, &e, &cfg, &x, 11).unwrap();
        let c = spem_score(&model, &bank, &e, &cfg, &x, 12).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.value, c.value);
    }

    #[test]
    fn noise_score_at_full_similarity_is_origin() {
        let (model, bank, e, _) = setup();
        let x = bank.row(1).to_vec();
        let s = spem_noise_score(&model, &bank, &e, &SpemConfig::default(), &x, 0).unwrap();
        let origin = -model.log_likelihood(&[0.0, 0.0]).unwrap();
        // λ may fall a rounding step short of 1, leaving σ ~ 1e-17
        assert!((s.value - origin).abs() < 1e-9);
    }

    #[test]
    fn noise_score_is_stochastic_and_ignores_content() {
        let (model, _, e, _) = setup();
        let bank = MemoryBank::from_embeddings(&array![[1.0, 0.0]], 10.0, e.fingerprint()).unwrap();
        let cfg = SpemConfig::default();
        let a = spem_noise_score(&model, &bank, &e, &cfg, &[0.0, 1.0], 1).unwrap();
        let b = spem_noise_score(&model, &bank, &e, &cfg, &[0.0, 1.0], 2).unwrap();
        assert_ne!(a.value, b.value);
        // same direction, same λ, same id: identical score regardless of magnitude
        let c = spem_noise_score(&model, &bank, &e, &cfg, &[0.0, 7.0], 1).unwrap();
        assert_eq!(a.value, c.value);
    }

    #[test]
    fn similarity_examples() {
        let e = Embedder::identity(2).unwrap();
        let bank = MemoryBank::from_embeddings(&array![[1.0, 0.0]], 10.0, e.fingerprint()).unwrap();
        assert_eq!(similarity_score(&bank, &e, &[2.0, 0.0]).unwrap().value, -1.0);
        assert_eq!(similarity_score(&bank, &e, &[0.0, 3.0]).unwrap().value, 0.0);
    }

    #[test]
    fn batch_matches_single_calls() {
        let (model, bank, e, data) = setup();
        let cfg = SpemConfig::default();
        let scorer = SpemScorer {
            model: &model,
            bank: &bank,
            embedder: &e,
            cfg: &cfg,
        };
        let scores = scorer.score_batch(Detector::Spem, &data, 100).unwrap();
        let single = spem_score(&model, &bank, &e, &cfg, &data.row(3).to_vec(), 103).unwrap();
        assert_eq!(scores[3], single);
        let sims = scorer.score_batch(Detector::Similarity, &data, 0).unwrap();
        let lam = scorer.lambdas(&data).unwrap();
        for (s, l) in sims.iter().zip(&lam) {
            assert_eq!(s.value, -l);
        }
        assert!(scorer.score_batch(Detector::Gmm, &data, 0).is_err());
    }

    #[test]
    fn detector_names_round_trip() {
        for d in Detector::ALL {
            assert_eq!(d.name().parse::<Detector>().unwrap(), d);
        }
        assert!("nope".parse::<Detector>().is_err());
    }
}
