//! Differential entropy, entropy power, KL divergence and 2-Wasserstein
//! distance, analytically for diagonal Gaussians and by k-nearest-neighbour
//! estimation for samples. Everything is in nats.

use std::f64::consts::{E, PI};

use kdtree::distance::squared_euclidean;
use kdtree::KdTree;
use statrs::function::gamma::{digamma, ln_gamma};

use crate::error::{ensure_finite, ensure_finite_batch, Error, Result};
use crate::rng::{Domain, Stream};
use crate::Batch;

/// Smallest neighbour distance used by [`knn_entropy`]; coincident points
/// would otherwise contribute `log 0`.
pub const DISTANCE_FLOOR: f64 = 1e-12;

/// Gaussian with diagonal covariance.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianSpec {
    pub mean: Vec<f64>,
    pub variances: Vec<f64>,
}

impl GaussianSpec {
    pub fn new(mean: Vec<f64>, variances: Vec<f64>) -> Result<Self> {
        if mean.is_empty() {
            return Err(Error::param("mean", "dimension must be positive"));
        }
        if mean.len() != variances.len() {
            return Err(Error::Dimension {
                expected: mean.len(),
                got: variances.len(),
            });
        }
        ensure_finite(&mean, "Gaussian mean")?;
        ensure_finite(&variances, "Gaussian variances")?;
        if variances.iter().any(|&v| v <= 0.0) {
            return Err(Error::param("variances", "must be positive"));
        }
        Ok(GaussianSpec { mean, variances })
    }

    /// Zero-mean `N(0, var * I_d)`.
    pub fn isotropic(d: usize, var: f64) -> Result<Self> {
        Self::new(vec![0.0; d], vec![var; d])
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Adds `var` to every variance: the law of `X + N(0, var I)`.
    pub fn convolve(&self, var: f64) -> Result<Self> {
        Self::new(self.mean.clone(), self.variances.iter().map(|v| v + var).collect())
    }

    pub fn log_density(&self, x: &[f64]) -> f64 {
        let mut acc = -0.5 * self.dim() as f64 * (2.0 * PI).ln();
        for ((xi, m), v) in x.iter().zip(&self.mean).zip(&self.variances) {
            acc -= 0.5 * (v.ln() + (xi - m) * (xi - m) / v);
        }
        acc
    }

    pub fn sample(&self, rng: &mut Stream) -> Vec<f64> {
        self.mean
            .iter()
            .zip(&self.variances)
            .map(|(m, v)| m + v.sqrt() * rng.standard_normal())
            .collect()
    }
}

/// `(1/2) * sum_i log(2 pi e v_i)`.
pub fn gaussian_entropy(spec: &GaussianSpec) -> f64 {
    spec.variances.iter().map(|v| 0.5 * (2.0 * PI * E * v).ln()).sum()
}

/// `exp(2H/d) / (2 pi e)`; equals `σ²` for `N(0, σ² I_d)`.
pub fn entropy_power(h: f64, d: usize) -> f64 {
    (2.0 * h / d as f64).exp() / (2.0 * PI * E)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EntropyMethod {
    Analytic,
    Knn,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EntropyEstimate {
    pub value: f64,
    pub method: EntropyMethod,
    pub k: Option<usize>,
    pub n: usize,
    /// Standard error from the spread of the per-sample log-distance terms;
    /// zero for analytic values.
    pub std_error: f64,
}

impl EntropyEstimate {
    pub fn analytic(spec: &GaussianSpec) -> Self {
        EntropyEstimate {
            value: gaussian_entropy(spec),
            method: EntropyMethod::Analytic,
            k: None,
            n: 0,
            std_error: 0.0,
        }
    }
}

/// Log-volume of the unit ball in `R^d`.
fn log_unit_ball_volume(d: usize) -> f64 {
    let h = d as f64 / 2.0;
    h * PI.ln() - ln_gamma(h + 1.0)
}

/// Kozachenko-Leonenko estimate
/// `psi(n) - psi(k) + log V_d + (d/n) sum_i log eps_i`,
/// with `eps_i` the Euclidean distance from sample `i` to its `k`-th nearest
/// other sample.
pub fn knn_entropy(samples: &Batch, k: usize) -> Result<EntropyEstimate> {
    let (n, d) = samples.dim();
    if k == 0 {
        return Err(Error::param("k", "must be at least 1"));
    }
    if n <= k {
        return Err(Error::param("k", format!("need more than {k} samples, got {n}")));
    }
    if d == 0 {
        return Err(Error::param("samples", "dimension must be positive"));
    }
    ensure_finite_batch(samples, "entropy samples")?;
    let points: Vec<Vec<f64>> = samples.rows().into_iter().map(|r| r.to_vec()).collect();
    let mut tree = KdTree::with_capacity(d, 16);
    for (i, p) in points.iter().enumerate() {
        tree.add(p.as_slice(), i)
            .map_err(|e| Error::Format(format!("kd-tree insert: {e:?}")))?;
    }
    let mut floored = 0usize;
    let mut terms = Vec::with_capacity(n);
    for p in &points {
        // the query point itself comes back at distance 0, so ask for k + 1
        let found = tree
            .nearest(p.as_slice(), k + 1, &squared_euclidean)
            .map_err(|e| Error::Format(format!("kd-tree query: {e:?}")))?;
        let mut eps = found[k].0.sqrt();
        if eps < DISTANCE_FLOOR {
            eps = DISTANCE_FLOOR;
            floored += 1;
        }
        terms.push(d as f64 * eps.ln());
    }
    if floored > 0 {
        log::warn!("knn entropy: {floored} neighbour distances floored at {DISTANCE_FLOOR}");
    }
    let mean = terms.iter().sum::<f64>() / n as f64;
    let var = terms.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    let value = digamma(n as f64) - digamma(k as f64) + log_unit_ball_volume(d) + mean;
    Ok(EntropyEstimate {
        value,
        method: EntropyMethod::Knn,
        k: Some(k),
        n,
        std_error: (var / n as f64).sqrt(),
    })
}

/// `KL(p || q)` for diagonal Gaussians.
pub fn kl_gaussians(p: &GaussianSpec, q: &GaussianSpec) -> Result<f64> {
    if p.dim() != q.dim() {
        return Err(Error::Dimension {
            expected: p.dim(),
            got: q.dim(),
        });
    }
    let mut acc = 0.0;
    for i in 0..p.dim() {
        let (vp, vq) = (p.variances[i], q.variances[i]);
        let dm = q.mean[i] - p.mean[i];
        acc += vp / vq + dm * dm / vq - 1.0 + (vq / vp).ln();
    }
    Ok(0.5 * acc)
}

/// Monte-Carlo estimate of `E[scorer(X)]` with `X` drawn by `sampler`;
/// draw `i` uses stream `(seed, i)`. Returns `(mean, standard error)`, with
/// an infinite standard error when `n = 1`.
pub fn mc_expected_loglik<S, F>(sampler: S, scorer: F, n: usize, seed: u64) -> Result<(f64, f64)>
where
    S: Fn(&mut Stream) -> Vec<f64>,
    F: Fn(&[f64]) -> Result<f64>,
{
    if n == 0 {
        return Err(Error::param("n", "must be positive"));
    }
    let mut vals = Vec::with_capacity(n);
    for i in 0..n {
        let mut rng = Stream::new(seed, Domain::MonteCarlo, i as u64);
        let x = sampler(&mut rng);
        vals.push(scorer(&x)?);
    }
    ensure_finite(&vals, "Monte-Carlo log-likelihoods")?;
    let mean = vals.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return Ok((mean, f64::INFINITY));
    }
    let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    Ok((mean, (var / n as f64).sqrt()))
}

/// `W2(N(m, σ1² I), N(m, σ2² I)) = sqrt(d) |σ1 - σ2|`.
pub fn w2_gaussians_isotropic(sigma1: f64, sigma2: f64, d: usize) -> f64 {
    (d as f64).sqrt() * (sigma1 - sigma2).abs()
}

/// `W2` between diagonal Gaussians:
/// `sqrt(|m1 - m2|^2 + sum_i (sqrt(v1_i) - sqrt(v2_i))^2)`.
pub fn w2_gaussians_diagonal(p: &GaussianSpec, q: &GaussianSpec) -> Result<f64> {
    if p.dim() != q.dim() {
        return Err(Error::Dimension {
            expected: p.dim(),
            got: q.dim(),
        });
    }
    let mut acc = 0.0;
    for i in 0..p.dim() {
        acc += (p.mean[i] - q.mean[i]).powi(2);
        acc += (p.variances[i].sqrt() - q.variances[i].sqrt()).powi(2);
    }
    Ok(acc.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;

    fn normal_batch(n: usize, d: usize, scale: f64, seed: u64) -> Batch {
        let mut s = Stream::new(seed, Domain::Data, 0);
        Array2::from_shape_fn((n, d), |_| scale * s.standard_normal())
    }

    fn uniform_batch(n: usize, d: usize, seed: u64) -> Batch {
        let mut s = Stream::new(seed, Domain::Data, 0);
        Array2::from_shape_fn((n, d), |_| s.uniform())
    }

    #[test]
    fn gaussian_entropy_examples() {
        let unit = GaussianSpec::isotropic(1, 1.0 / (2.0 * PI * E)).unwrap();
        assert!(gaussian_entropy(&unit).abs() < 1e-15);
        let two = GaussianSpec::isotropic(2, 1.0).unwrap();
        assert!((gaussian_entropy(&two) - 2.8378770664093453).abs() < 1e-12);
        let diag = GaussianSpec::new(vec![0.0, 0.0], vec![1.0, 4.0]).unwrap();
        let want = 0.5 * ((2.0 * PI * E).ln() + (8.0 * PI * E).ln());
        assert!((gaussian_entropy(&diag) - want).abs() < 1e-12);
    }

    #[test]
    fn invalid_specs_rejected() {
        assert!(GaussianSpec::new(vec![0.0], vec![0.0]).is_err());
        assert!(GaussianSpec::new(vec![0.0], vec![1.0, 1.0]).is_err());
        assert!(GaussianSpec::new(vec![], vec![]).is_err());
    }

    #[test]
    fn entropy_power_examples() {
        let g = GaussianSpec::isotropic(3, 0.7).unwrap();
        assert!((entropy_power(gaussian_entropy(&g), 3) - 0.7).abs() < 1e-12);
        assert!((entropy_power(0.0, 1) - 1.0 / (2.0 * PI * E)).abs() < 1e-15);
        // Gaussian equality case of the entropy power inequality
        let x = GaussianSpec::isotropic(2, 0.3).unwrap();
        let z = GaussianSpec::isotropic(2, 1.1).unwrap();
        let sum = x.convolve(1.1).unwrap();
        let lhs = entropy_power(gaussian_entropy(&sum), 2);
        let rhs = entropy_power(gaussian_entropy(&x), 2) + entropy_power(gaussian_entropy(&z), 2);
        assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn knn_standard_normal() {
        let est = knn_entropy(&normal_batch(10_000, 1, 1.0, 1), 5).unwrap();
        assert!((est.value - 1.4189385332046727).abs() < 0.05, "{}", est.value);
        assert_eq!(est.k, Some(5));
        assert_eq!(est.n, 10_000);
    }

    #[test]
    fn knn_uniform() {
        let est = knn_entropy(&uniform_batch(10_000, 1, 2), 5).unwrap();
        assert!(est.value.abs() < 0.05, "{}", est.value);
    }

    #[test]
    fn knn_scaling_law() {
        let x = normal_batch(5_000, 2, 1.0, 3);
        let c = 3.0;
        let a = knn_entropy(&x, 5).unwrap().value;
        let b = knn_entropy(&(&x * c), 5).unwrap().value;
        assert!((b - a - 2.0 * c.ln()).abs() < 1e-9);
    }

    #[test]
    fn knn_error_shrinks_with_n() {
        let truth = gaussian_entropy(&GaussianSpec::isotropic(3, 1.0).unwrap());
        let err = |n| (knn_entropy(&normal_batch(n, 3, 1.0, 4), 5).unwrap().value - truth).abs();
        let (e3, e5) = (err(1_000), err(100_000));
        assert!(e5 < e3, "{e3} -> {e5}");
    }

    #[test]
    fn knn_duplicates_floored() {
        let x = Array2::from_shape_fn((20, 1), |(i, _)| (i / 10) as f64);
        let est = knn_entropy(&x, 3).unwrap();
        assert!(est.value.is_finite());
        assert!(knn_entropy(&x, 20).is_err());
        assert!(knn_entropy(&x, 0).is_err());
    }

    #[test]
    fn entropy_power_inequality_on_samples() {
        let n = 5_000;
        for cfg in 0..20u64 {
            let d = 1 + (cfg % 2) as usize;
            let sx = 0.2 + 0.15 * cfg as f64;
            let sz = 1.5 - 0.06 * cfg as f64;
            let x = if cfg % 3 == 0 {
                uniform_batch(n, d, 100 + cfg) * sx
            } else {
                normal_batch(n, d, sx, 100 + cfg)
            };
            let z = normal_batch(n, d, sz, 200 + cfg);
            let sum = &x + &z;
            let est = |b: &Batch| knn_entropy(b, 5).unwrap();
            let (hx, hz, hs) = (est(&x), est(&z), est(&sum));
            let np = |e: &EntropyEstimate| entropy_power(e.value, d);
            let se = |e: &EntropyEstimate| np(e) * 2.0 / d as f64 * e.std_error;
            let combined = (se(&hx).powi(2) + se(&hz).powi(2) + se(&hs).powi(2)).sqrt();
            assert!(
                np(&hs) >= np(&hx) + np(&hz) - 3.0 * combined,
                "config {cfg}: {} < {} + {}",
                np(&hs),
                np(&hx),
                np(&hz)
            );
        }
    }

    #[test]
    fn kl_examples() {
        let p = GaussianSpec::isotropic(1, 1.0).unwrap();
        let q = GaussianSpec::isotropic(1, 4.0).unwrap();
        assert_eq!(kl_gaussians(&p, &p).unwrap(), 0.0);
        let pq = kl_gaussians(&p, &q).unwrap();
        assert!((pq - 0.5 * (0.25 - 1.0 + 4f64.ln())).abs() < 1e-12);
        assert!((pq - 0.31814718055994535).abs() < 1e-12);
        assert!((pq - kl_gaussians(&q, &p).unwrap()).abs() > 0.1);
        let shifted = GaussianSpec::new(vec![1.0], vec![1.0]).unwrap();
        assert!(kl_gaussians(&p, &shifted).unwrap() > 0.0);
    }

    #[test]
    fn mc_loglik_matches_negative_entropy() {
        for d in [1, 3] {
            let p = GaussianSpec::isotropic(d, 1.0).unwrap();
            let (mean, se) = mc_expected_loglik(|r| p.sample(r), |x| Ok(p.log_density(x)), 20_000, 7).unwrap();
            assert!((mean + gaussian_entropy(&p)).abs() < 3.0 * se);
        }
        let p = GaussianSpec::isotropic(2, 0.5).unwrap();
        let one = mc_expected_loglik(|r| p.sample(r), |x| Ok(p.log_density(x)), 1, 7).unwrap();
        assert!(one.0.is_finite() && one.1.is_infinite());
        let a = mc_expected_loglik(|r| p.sample(r), |x| Ok(p.log_density(x)), 50, 9).unwrap();
        let b = mc_expected_loglik(|r| p.sample(r), |x| Ok(p.log_density(x)), 50, 9).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn w2_examples() {
        assert_eq!(w2_gaussians_isotropic(0.3, 0.3, 5), 0.0);
        assert_eq!(w2_gaussians_isotropic(1.0, 0.5, 4), 1.0);
        assert_eq!(w2_gaussians_isotropic(0.5, 1.0, 4), 1.0);
        let p = GaussianSpec::isotropic(4, 1.0).unwrap();
        let q = GaussianSpec::isotropic(4, 0.25).unwrap();
        assert!((w2_gaussians_diagonal(&p, &q).unwrap() - 1.0).abs() < 1e-15);
    }
}
