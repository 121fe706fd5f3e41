//! Comparison detectors built on the flow: raw likelihood, compression
//! complexity, two typicality tests, likelihood ratio against a
//! background model, and a Gaussian mixture over (latent log-density, bits).

use std::f64::consts::LN_2;
use std::fmt::Write as _;
use std::io::Write as _;
use std::path::Path;

use flate2::write::DeflateEncoder;
use flate2::Compression;
use nalgebra::{DMatrix, DVector};

use crate::data::{fmt_f64, quantize};
use crate::error::{ensure_finite, ensure_finite_batch, Error, Result};
use crate::flow::{standard_normal_log_density, train, FlowModel, TrainConfig};
use crate::io::{read_file, write_atomic};
use crate::rng::{Domain, Stream};
use crate::spem::{AnomalyScore, Detector};
use crate::Batch;

/// Identifies the byte compressor behind [`compress_length`].
pub const CODEC_ID: &str = "deflate-raw-9";

/// `-log p(x)`.
pub fn likelihood_score(model: &FlowModel, x: &[f64]) -> Result<AnomalyScore> {
    Ok(AnomalyScore::plain(Detector::Likelihood, -model.log_likelihood(x)?))
}

/// Bit length of the raw-deflate (level 9) encoding of `bytes`.
pub fn compress_length(bytes: &[u8]) -> Result<u64> {
    if bytes.is_empty() {
        return Err(Error::Empty("compressor input"));
    }
    let mut enc = DeflateEncoder::new(Vec::new(), Compression::best());
    enc.write_all(bytes).map_err(|e| Error::io("compressing", e))?;
    let out = enc.finish().map_err(|e| Error::io("compressing", e))?;
    Ok(8 * out.len() as u64)
}

/// Affine map of data onto `[0, 1]`, fixed from in-distribution data, so
/// inputs can be quantised to bytes for the compressor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UnitRange {
    pub lo: f64,
    pub hi: f64,
}

impl UnitRange {
    /// Smallest and largest coordinate over the whole batch.
    pub fn fit(data: &Batch) -> Result<Self> {
        if data.is_empty() {
            return Err(Error::Empty("range data"));
        }
        ensure_finite_batch(data, "range data")?;
        let lo = data.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = data.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if hi <= lo {
            return Err(Error::param("range", "data is constant"));
        }
        Ok(UnitRange { lo, hi })
    }

    pub fn to_unit(&self, x: &[f64]) -> Vec<f64> {
        x.iter().map(|v| (v - self.lo) / (self.hi - self.lo)).collect()
    }

    pub fn quantize(&self, x: &[f64]) -> Result<Vec<u8>> {
        quantize(&self.to_unit(x))
    }
}

/// `-log2 p(x) - L(x)`: likelihood in bits minus the compressed length of
/// the quantised input.
pub fn complexity_score(model: &FlowModel, x: &[f64], x_quantized: &[u8]) -> Result<AnomalyScore> {
    let bits = compress_length(x_quantized)? as f64;
    let nll_bits = -model.log_likelihood(x)? / LN_2;
    Ok(AnomalyScore::plain(Detector::Complexity, nll_bits - bits))
}

/// Latent-norm typicality tests on `z = f(x)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TypicalityVariant {
    /// `|sqrt(d) - |z|^2|`
    SqrtD,
    /// `|d - |z|^2|`
    D,
}

pub fn typicality_latent_score(model: &FlowModel, x: &[f64], variant: TypicalityVariant) -> Result<AnomalyScore> {
    let (z, _) = model.forward(x)?;
    let sq: f64 = z.iter().map(|v| v * v).sum();
    let d = model.dim() as f64;
    Ok(match variant {
        TypicalityVariant::SqrtD => AnomalyScore::plain(Detector::Typicality, (d.sqrt() - sq).abs()),
        TypicalityVariant::D => AnomalyScore::plain(Detector::TypicalitySquared, (d - sq).abs()),
    })
}

/// Mean training log-likelihood, cached for the entropy typicality test.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TypicalityReference {
    pub mean_loglik: f64,
}

impl TypicalityReference {
    pub fn fit(model: &FlowModel, id_train: &Batch) -> Result<Self> {
        let ll = model.log_likelihood_batch(id_train)?;
        if ll.is_empty() {
            return Err(Error::Empty("typicality reference data"));
        }
        Ok(TypicalityReference {
            mean_loglik: ll.iter().sum::<f64>() / ll.len() as f64,
        })
    }

    /// `|E_train[log p] - log p(x)|`.
    pub fn score(&self, model: &FlowModel, x: &[f64]) -> Result<AnomalyScore> {
        let ll = model.log_likelihood(x)?;
        Ok(AnomalyScore::plain(
            Detector::TypicalityEntropy,
            (self.mean_loglik - ll).abs(),
        ))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BackgroundConfig {
    /// Per-coordinate replacement probability.
    pub mu: f64,
    /// Replacement values are uniform on this interval; `None` uses the
    /// data's own range.
    pub range: Option<(f64, f64)>,
    pub train: TrainConfig,
    pub seed: u64,
}

impl Default for BackgroundConfig {
    fn default() -> Self {
        BackgroundConfig {
            mu: 0.2,
            range: None,
            train: TrainConfig::default(),
            seed: 0,
        }
    }
}

/// Replaces each coordinate, independently with probability `mu`, by a
/// uniform draw over `range`. Row `i` uses its own stream.
pub fn corrupt_background(data: &Batch, mu: f64, range: (f64, f64), seed: u64) -> Result<Batch> {
    if !(0.0..=1.0).contains(&mu) {
        return Err(Error::param("mu", "must lie in [0, 1]"));
    }
    let (lo, hi) = range;
    if !(lo.is_finite() && hi.is_finite() && hi >= lo) {
        return Err(Error::param("range", "must be a finite interval"));
    }
    let mut out = data.clone();
    for (i, mut row) in out.rows_mut().into_iter().enumerate() {
        let mut rng = Stream::new(seed, Domain::Background, i as u64);
        for v in row.iter_mut() {
            // two draws per coordinate regardless of outcome keep streams aligned
            let hit = rng.uniform() < mu;
            let fresh = lo + (hi - lo) * rng.uniform();
            if hit {
                *v = fresh;
            }
        }
    }
    Ok(out)
}

pub fn train_background_model(id_data: &Batch, bg: &BackgroundConfig) -> Result<FlowModel> {
    let range = match bg.range {
        Some(r) => r,
        None => {
            let r = UnitRange::fit(id_data)?;
            (r.lo, r.hi)
        }
    };
    let corrupted = corrupt_background(id_data, bg.mu, range, bg.seed)?;
    Ok(train(&corrupted, &bg.train)?.0)
}

/// `-(log p(x) - log p_background(x))`.
pub fn likelihood_ratio_score(model: &FlowModel, bg_model: &FlowModel, x: &[f64]) -> Result<AnomalyScore> {
    let ratio = model.log_likelihood(x)? - bg_model.log_likelihood(x)?;
    Ok(AnomalyScore::plain(Detector::LikelihoodRatio, -ratio))
}

/// `(log N(z; 0, I), L(x))`: latent log-density without the Jacobian term
/// and compressed bit length.
pub fn gmm_features(model: &FlowModel, range: &UnitRange, x: &[f64]) -> Result<[f64; 2]> {
    let (z, _) = model.forward(x)?;
    let bits = compress_length(&range.quantize(x)?)? as f64;
    Ok([standard_normal_log_density(&z), bits])
}

const GMM_HEADER: &str = "spem-gmm 1";
pub const GMM_MAX_ITER: usize = 100;
pub const GMM_TOL: f64 = 1e-6;
const RIDGE: f64 = 1e-6;

/// Gaussian mixture with full covariances.
#[derive(Debug, Clone, PartialEq)]
pub struct GmmModel {
    pub weights: Vec<f64>,
    pub means: Vec<DVector<f64>>,
    pub covariances: Vec<DMatrix<f64>>,
}

/// Mean log-likelihood after each EM iteration (monotone non-decreasing).
pub type EmTrace = Vec<f64>;

struct Component {
    log_norm: f64,
    chol: nalgebra::Cholesky<f64, nalgebra::Dyn>,
}

impl GmmModel {
    pub fn dim(&self) -> usize {
        self.means.first().map_or(0, |m| m.len())
    }

    fn components(&self) -> Result<Vec<Component>> {
        let d = self.dim() as f64;
        self.covariances
            .iter()
            .zip(&self.weights)
            .map(|(cov, w)| {
                let chol = cholesky_with_ridge(cov)?;
                let log_det = 2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
                Ok(Component {
                    log_norm: w.ln() - 0.5 * (d * (2.0 * std::f64::consts::PI).ln() + log_det),
                    chol,
                })
            })
            .collect()
    }

    fn component_logs(&self, comps: &[Component], x: &DVector<f64>) -> Vec<f64> {
        comps
            .iter()
            .zip(&self.means)
            .map(|(c, m)| {
                let diff = x - m;
                let sol = c.chol.l().solve_lower_triangular(&diff).expect("non-singular factor");
                c.log_norm - 0.5 * sol.norm_squared()
            })
            .collect()
    }

    pub fn log_density(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.dim() {
            return Err(Error::Dimension {
                expected: self.dim(),
                got: x.len(),
            });
        }
        ensure_finite(x, "mixture input")?;
        let comps = self.components()?;
        Ok(log_sum_exp(
            &self.component_logs(&comps, &DVector::from_column_slice(x)),
        ))
    }

    /// Negative log-density under the mixture.
    pub fn score(&self, point: &[f64]) -> Result<AnomalyScore> {
        Ok(AnomalyScore::plain(Detector::Gmm, -self.log_density(point)?))
    }

    pub fn to_text(&self) -> String {
        let d = self.dim();
        let mut s = format!("{GMM_HEADER}\n{} {d}\n", self.weights.len());
        let join = |vals: &mut dyn Iterator<Item = f64>| vals.map(fmt_f64).collect::<Vec<_>>().join(" ");
        for k in 0..self.weights.len() {
            let _ = writeln!(s, "weight {}", fmt_f64(self.weights[k]));
            let _ = writeln!(s, "mean {}", join(&mut self.means[k].iter().copied()));
            // row-major
            let cov = &self.covariances[k];
            let _ = writeln!(s, "cov {}", join(&mut (0..d * d).map(|i| cov[(i / d, i % d)])));
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let bad = |msg: &str| Error::Format(format!("mixture model: {msg}"));
        let mut lines = text.lines();
        match lines.next() {
            Some(GMM_HEADER) => {}
            Some(h) if h.starts_with("spem-gmm ") => {
                let found = h["spem-gmm ".len()..].trim().parse().unwrap_or(0);
                return Err(Error::Version { expected: 1, found });
            }
            _ => return Err(bad("missing header")),
        }
        let dims: Vec<usize> = lines
            .next()
            .ok_or_else(|| bad("missing sizes"))?
            .split_whitespace()
            .map(|t| t.parse().map_err(|_| bad("bad size")))
            .collect::<Result<_>>()?;
        let [k, d] = dims[..] else {
            return Err(bad("sizes line needs two fields"));
        };
        if k == 0 || d == 0 {
            return Err(bad("empty model"));
        }
        let mut field = |name: &str, len: usize| -> Result<Vec<f64>> {
            let line = lines.next().ok_or_else(|| bad("truncated"))?;
            let mut toks = line.split_whitespace();
            if toks.next() != Some(name) {
                return Err(bad(&format!("expected `{name}` line")));
            }
            let vals: Vec<f64> = toks
                .map(|t| t.parse().map_err(|_| bad(&format!("bad number `{t}`"))))
                .collect::<Result<_>>()?;
            if vals.len() != len {
                return Err(bad(&format!("`{name}` needs {len} values")));
            }
            ensure_finite(&vals, "mixture parameters")?;
            Ok(vals)
        };
        let mut model = GmmModel {
            weights: Vec::with_capacity(k),
            means: Vec::with_capacity(k),
            covariances: Vec::with_capacity(k),
        };
        for _ in 0..k {
            model.weights.push(field("weight", 1)?[0]);
            model.means.push(DVector::from_vec(field("mean", d)?));
            model
                .covariances
                .push(DMatrix::from_row_slice(d, d, &field("cov", d * d)?));
        }
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.to_text().as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = read_file(path)?;
        let text = String::from_utf8(bytes).map_err(|_| Error::Format("mixture model: not UTF-8".into()))?;
        Self::from_text(&text)
    }
}

fn cholesky_with_ridge(cov: &DMatrix<f64>) -> Result<nalgebra::Cholesky<f64, nalgebra::Dyn>> {
    if let Some(c) = cov.clone().cholesky() {
        return Ok(c);
    }
    log::debug!("mixture: singular covariance, adding ridge {RIDGE}");
    let d = cov.nrows();
    (cov + DMatrix::identity(d, d) * RIDGE)
        .cholesky()
        .ok_or(Error::NonFinite {
            context: "mixture covariance",
        })
}

fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Fits a `k`-component mixture by EM, seeded k-means++ style: the first
/// centre is a uniformly chosen point, each further centre is drawn with
/// probability proportional to its squared distance to the nearest centre.
/// Stops after [`GMM_MAX_ITER`] iterations or when the mean log-likelihood
/// improves by less than [`GMM_TOL`].
pub fn fit_gmm(points: &Batch, k: usize, seed: u64) -> Result<(GmmModel, EmTrace)> {
    let (n, d) = points.dim();
    if k == 0 {
        return Err(Error::param("k", "must be positive"));
    }
    if n < 10 * k {
        return Err(Error::param("k", format!("need at least {} points, got {n}", 10 * k)));
    }
    ensure_finite_batch(points, "mixture data")?;
    let xs: Vec<DVector<f64>> = points
        .rows()
        .into_iter()
        .map(|r| DVector::from_iterator(d, r.iter().copied()))
        .collect();

    let mut rng = Stream::new(seed, Domain::Gmm, 0);
    let mut centres = vec![xs[rng.below(n)].clone()];
    let mut dist2: Vec<f64> = xs.iter().map(|x| (x - &centres[0]).norm_squared()).collect();
    while centres.len() < k {
        let total: f64 = dist2.iter().sum();
        let next = if total > 0.0 {
            let target = rng.uniform() * total;
            let mut acc = 0.0;
            let mut pick = n - 1;
            for (i, w) in dist2.iter().enumerate() {
                acc += w;
                if acc > target {
                    pick = i;
                    break;
                }
            }
            pick
        } else {
            rng.below(n)
        };
        centres.push(xs[next].clone());
        for (dd, x) in dist2.iter_mut().zip(&xs) {
            *dd = dd.min((x - &centres[centres.len() - 1]).norm_squared());
        }
    }

    let overall_mean = xs.iter().fold(DVector::zeros(d), |a, x| a + x) / n as f64;
    let overall_cov = xs.iter().fold(DMatrix::zeros(d, d), |a, x| {
        let c = x - &overall_mean;
        a + &c * c.transpose()
    }) / n as f64;
    let mut model = GmmModel {
        weights: vec![1.0 / k as f64; k],
        means: centres,
        covariances: vec![overall_cov; k],
    };

    let mut trace = Vec::new();
    let mut resp = vec![vec![0.0; k]; n];
    for _ in 0..GMM_MAX_ITER {
        // E step
        let comps = model.components()?;
        let mut total = 0.0;
        for (x, r) in xs.iter().zip(resp.iter_mut()) {
            let logs = model.component_logs(&comps, x);
            let lse = log_sum_exp(&logs);
            total += lse;
            for (rj, lj) in r.iter_mut().zip(&logs) {
                *rj = (lj - lse).exp();
            }
        }
        let mean_ll = total / n as f64;
        let converged = trace.last().is_some_and(|&prev: &f64| (mean_ll - prev).abs() < GMM_TOL);
        trace.push(mean_ll);
        if converged {
            break;
        }
        // M step
        for j in 0..k {
            let nk: f64 = resp.iter().map(|r| r[j]).sum();
            if nk <= f64::MIN_POSITIVE {
                log::warn!("mixture: component {j} lost all responsibility, keeping previous parameters");
                continue;
            }
            let mean = xs.iter().zip(&resp).fold(DVector::zeros(d), |a, (x, r)| a + x * r[j]) / nk;
            let cov = xs.iter().zip(&resp).fold(DMatrix::zeros(d, d), |a, (x, r)| {
                let c = x - &mean;
                a + (&c * c.transpose()) * r[j]
            }) / nk;
            model.weights[j] = nk / n as f64;
            model.means[j] = mean;
            model.covariances[j] = cov;
        }
    }
    Ok((model, trace))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::FlowArch;
    use ndarray::Array2;

    fn normal(n: usize, d: usize, seed: u64) -> Batch {
        let mut s = Stream::new(seed, Domain::Data, 0);
        Array2::from_shape_fn((n, d), |_| s.standard_normal())
    }

    #[test]
    fn likelihood_examples() {
        let m = FlowModel::identity(2).unwrap();
        let s = likelihood_score(&m, &[0.0, 0.0]).unwrap();
        assert!((s.value - 1.8378770664093453).abs() < 1e-12);
        let far = likelihood_score(&m, &[2.0, 1.0]).unwrap();
        assert!(far.value > s.value);
    }

    #[test]
    fn compression_ordering_and_determinism() {
        let flat = vec![7u8; 1024];
        let mut s = Stream::new(1, Domain::Data, 0);
        let noisy: Vec<u8> = (0..1024).map(|_| s.below(256) as u8).collect();
        assert!(compress_length(&flat).unwrap() < compress_length(&noisy).unwrap());
        assert_eq!(compress_length(&noisy).unwrap(), compress_length(&noisy).unwrap());
        assert!(compress_length(&[]).is_err());
    }

    #[test]
    fn compression_fixture() {
        let bytes: Vec<u8> = (0u32..256).map(|i| ((i * 37) % 251) as u8).collect();
        // pinned output of the raw deflate level-9 encoder
        assert_eq!(compress_length(&bytes).unwrap(), COMPRESS_FIXTURE_BITS);
        assert_eq!(
            compress_length(b"aaaaaaaaaaaaaaaaaaaaaaaa").unwrap(),
            COMPRESS_FIXTURE_RUN_BITS
        );
    }

    const COMPRESS_FIXTURE_BITS: u64 = 2088;
    const COMPRESS_FIXTURE_RUN_BITS: u64 = 40;

    #[test]
    fn complexity_is_likelihood_bits_minus_length() {
        let m = FlowModel::random(3, &FlowArch::default(), 0.2, 1).unwrap();
        let x = [0.1, 0.5, 0.9];
        let q = quantize(&x).unwrap();
        let c = complexity_score(&m, &x, &q).unwrap().value;
        let l = likelihood_score(&m, &x).unwrap().value;
        assert!((c - (l / LN_2 - compress_length(&q).unwrap() as f64)).abs() < 1e-12);
        // same likelihood, different byte content: scores differ by the length gap
        let q2 = vec![0u8, 0, 0];
        let c2 = complexity_score(&m, &x, &q2).unwrap().value;
        let gap = compress_length(&q).unwrap() as f64 - compress_length(&q2).unwrap() as f64;
        assert!((c2 - c - gap).abs() < 1e-12);
    }

    #[test]
    fn typicality_examples() {
        let m = FlowModel::identity(4).unwrap();
        let s = |x: &[f64], v| typicality_latent_score(&m, x, v).unwrap().value;
        let r = 2f64.sqrt() / 2.0;
        assert!(s(&[r, r, r, r], TypicalityVariant::SqrtD).abs() < 1e-12);
        assert_eq!(s(&[1.0; 4], TypicalityVariant::SqrtD), 2.0);
        assert_eq!(s(&[0.0; 4], TypicalityVariant::SqrtD), 2.0);
        assert_eq!(s(&[1.0; 4], TypicalityVariant::D), 0.0);
        assert_eq!(s(&[0.0; 4], TypicalityVariant::D), 4.0);
    }

    #[test]
    fn typicality_entropy_properties() {
        let m = FlowModel::random(2, &FlowArch::default(), 0.2, 3).unwrap();
        let train = normal(200, 2, 4);
        let reference = TypicalityReference::fit(&m, &train).unwrap();
        let ll = m.log_likelihood_batch(&train).unwrap();
        let recomputed = ll.iter().sum::<f64>() / ll.len() as f64;
        assert!((reference.mean_loglik - recomputed).abs() < 1e-12);
        for row in train.rows() {
            assert!(reference.score(&m, &row.to_vec()).unwrap().value >= 0.0);
        }
        // symmetric deviations around the cached mean score equally
        let id = FlowModel::identity(1).unwrap();
        let r = TypicalityReference {
            mean_loglik: id.log_likelihood(&[1.0]).unwrap(),
        };
        assert_eq!(r.score(&id, &[1.0]).unwrap().value, 0.0);
        assert_eq!(r.score(&id, &[-1.0]).unwrap().value, 0.0);
    }

    #[test]
    fn background_corruption_extremes() {
        let data = normal(50, 3, 1);
        assert_eq!(corrupt_background(&data, 0.0, (-1.0, 1.0), 2).unwrap(), data);
        let full = corrupt_background(&data, 1.0, (5.0, 6.0), 2).unwrap();
        assert!(full.iter().all(|&v| (5.0..6.0).contains(&v)));
        assert_eq!(
            corrupt_background(&data, 0.3, (5.0, 6.0), 9).unwrap(),
            corrupt_background(&data, 0.3, (5.0, 6.0), 9).unwrap()
        );
        assert!(corrupt_background(&data, 1.5, (0.0, 1.0), 0).is_err());
    }

    #[test]
    fn likelihood_ratio_properties() {
        let a = FlowModel::random(2, &FlowArch::default(), 0.2, 1).unwrap();
        let b = FlowModel::random(2, &FlowArch::default(), 0.2, 2).unwrap();
        let x = [0.3, -0.2];
        assert_eq!(likelihood_ratio_score(&a, &a, &x).unwrap().value, 0.0);
        let ab = likelihood_ratio_score(&a, &b, &x).unwrap().value;
        let ba = likelihood_ratio_score(&b, &a, &x).unwrap().value;
        assert!(ab != 0.0 && (ab + ba).abs() < 1e-12);
    }

    #[test]
    fn gmm_single_component_is_mle() {
        let x = normal(500, 2, 5);
        let (g, trace) = fit_gmm(&x, 1, 0).unwrap();
        let n = x.nrows() as f64;
        let mean = x.mean_axis(ndarray::Axis(0)).unwrap();
        for a in 0..2 {
            assert!((g.means[0][a] - mean[a]).abs() < 1e-8);
            for b in 0..2 {
                let c = x
                    .column(a)
                    .iter()
                    .zip(x.column(b))
                    .map(|(u, v)| (u - mean[a]) * (v - mean[b]))
                    .sum::<f64>()
                    / n;
                assert!((g.covariances[0][(a, b)] - c).abs() < 1e-8);
            }
        }
        assert!((g.weights[0] - 1.0).abs() < 1e-15);
        assert!(!trace.is_empty());
    }

    #[test]
    fn gmm_recovers_separated_clusters() {
        let mut s = Stream::new(3, Domain::Data, 0);
        let x = Array2::from_shape_fn((400, 2), |(i, _)| {
            s.standard_normal() * 0.5 + if i < 200 { -6.0 } else { 6.0 }
        });
        let (g, trace) = fit_gmm(&x, 2, 1).unwrap();
        let mut m: Vec<f64> = g.means.iter().map(|v| v[0]).collect();
        m.sort_by(f64::total_cmp);
        assert!((m[0] + 6.0).abs() < 0.1 && (m[1] - 6.0).abs() < 0.1, "{m:?}");
        for w in trace.windows(2) {
            assert!(w[1] >= w[0] - 1e-12);
        }
        let total: f64 = g.weights.iter().sum();
        assert!((total - 1.0).abs() < 1e-12);
        let near = g.score(&[-6.0, -6.0]).unwrap().value;
        let far = g.score(&[0.0, 20.0]).unwrap().value;
        assert!(far > near);
    }

    #[test]
    fn gmm_trace_monotone_three_components() {
        let x = normal(600, 2, 8);
        let (_, trace) = fit_gmm(&x, 3, 4).unwrap();
        for w in trace.windows(2) {
            assert!(w[1] >= w[0] - 1e-10, "{trace:?}");
        }
        assert!(fit_gmm(&normal(20, 2, 1), 3, 0).is_err());
    }

    #[test]
    fn gmm_singular_data_gets_ridge() {
        // all points on a line: covariance is rank one
        let x = Array2::from_shape_fn((100, 2), |(i, j)| i as f64 * if j == 0 { 1.0 } else { 2.0 });
        let (g, _) = fit_gmm(&x, 1, 0).unwrap();
        assert!(g.score(&[1.0, 2.0]).unwrap().value.is_finite());
    }

    #[test]
    fn gmm_text_round_trip() {
        let x = normal(300, 2, 2);
        let (g, _) = fit_gmm(&x, 3, 0).unwrap();
        let back = GmmModel::from_text(&g.to_text()).unwrap();
        assert_eq!(back, g);
        assert!(matches!(
            GmmModel::from_text("spem-gmm 7\n1 1\n"),
            Err(Error::Version { found: 7, .. })
        ));
        assert!(GmmModel::from_text("garbage").is_err());
        let truncated: String = g.to_text().lines().take(4).collect::<Vec<_>>().join("\n");
        assert!(GmmModel::from_text(&truncated).is_err());
    }

    #[test]
    fn unit_range_maps_extremes() {
        let data = ndarray::array![[-2.0, 0.0], [1.0, 2.0]];
        let r = UnitRange::fit(&data).unwrap();
        assert_eq!(r.to_unit(&[-2.0, 2.0]), vec![0.0, 1.0]);
        assert_eq!(r.quantize(&[-2.0, 0.0, 2.0, 9.0]).unwrap(), vec![0, 128, 255, 255]);
    }
}
