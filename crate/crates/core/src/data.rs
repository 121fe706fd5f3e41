//! Synthetic datasets with controlled entropy, (de)quantisation and CSV I/O.
//!
//! The paired datasets share one in-distribution law: `coarse` coordinates
//! are standard normal and the remaining `fine` coordinates are
//! `N(0, s(r)^2)` with `r` the norm of the coarse part and
//!
//! ```text
//! s(r) = s_min + (s_max - s_min) * (1 - exp(-r^2 / (2 rho^2)))
//! ```
//!
//! so the density is tall and thin near the coarse origin and broad
//! elsewhere. The inversion OOD set is a tight Gaussian sitting in that tall
//! region: lower entropy than ID, yet higher likelihood under any good model
//! of ID. The non-inversion OOD set is broader than ID.

use std::f64::consts::{E, PI};
use std::path::Path;

use ndarray::{Array2, ArrayView1};
use statrs::distribution::{Chi, Continuous};

use crate::error::{ensure_finite, Error, Result};
use crate::io::write_atomic;
use crate::rng::{Domain, Stream};
use crate::Batch;

/// Geometry of an ID/OOD pair (see the module docs).
#[derive(Debug, Clone, PartialEq)]
pub struct PairSpec {
    pub coarse_dims: usize,
    pub fine_dims: usize,
    pub s_min: f64,
    pub s_max: f64,
    pub rho: f64,
    pub ood_coarse_std: f64,
    pub ood_fine_std: f64,
}

impl PairSpec {
    /// OOD concentrated where the ID density peaks: `H(OOD) << H(ID)`.
    pub fn inversion() -> Self {
        PairSpec {
            coarse_dims: 2,
            fine_dims: 6,
            s_min: 0.005,
            s_max: 0.2,
            rho: 1.0,
            ood_coarse_std: 0.002,
            ood_fine_std: 0.002,
        }
    }

    /// OOD spread wider than ID in the fine directions: `H(OOD) > H(ID)`.
    pub fn non_inversion() -> Self {
        PairSpec {
            ood_coarse_std: 1.0,
            ood_fine_std: 0.5,
            ..Self::inversion()
        }
    }

    pub fn dim(&self) -> usize {
        self.coarse_dims + self.fine_dims
    }

    fn validate(&self) -> Result<()> {
        if self.coarse_dims == 0 || self.fine_dims == 0 {
            return Err(Error::param("dims", "coarse and fine parts must be non-empty"));
        }
        let positive = [
            ("s_min", self.s_min),
            ("s_max", self.s_max),
            ("rho", self.rho),
            ("ood_coarse_std", self.ood_coarse_std),
            ("ood_fine_std", self.ood_fine_std),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::param(name, "must be positive and finite"));
            }
        }
        if self.s_max < self.s_min {
            return Err(Error::param("s_max", "must be at least s_min"));
        }
        Ok(())
    }

    fn fine_std(&self, r2: f64) -> f64 {
        self.s_min + (self.s_max - self.s_min) * (1.0 - (-r2 / (2.0 * self.rho * self.rho)).exp())
    }

    fn sample_id(&self, rng: &mut Stream) -> Vec<f64> {
        let mut x = rng.normal_vec(self.dim());
        let r2: f64 = x[..self.coarse_dims].iter().map(|v| v * v).sum();
        let s = self.fine_std(r2);
        x[self.coarse_dims..].iter_mut().for_each(|v| *v *= s);
        x
    }

    fn sample_ood(&self, rng: &mut Stream) -> Vec<f64> {
        let mut x = rng.normal_vec(self.dim());
        for (j, v) in x.iter_mut().enumerate() {
            *v *= if j < self.coarse_dims {
                self.ood_coarse_std
            } else {
                self.ood_fine_std
            };
        }
        x
    }

    /// Exact log-density of the ID law.
    pub fn id_log_density(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.dim() {
            return Err(Error::Dimension {
                expected: self.dim(),
                got: x.len(),
            });
        }
        let (c, f) = x.split_at(self.coarse_dims);
        let r2: f64 = c.iter().map(|v| v * v).sum();
        let s = self.fine_std(r2);
        let fine_sq: f64 = f.iter().map(|v| v * v).sum();
        Ok(-0.5 * r2
            - self.fine_dims as f64 * s.ln()
            - 0.5 * fine_sq / (s * s)
            - 0.5 * self.dim() as f64 * (2.0 * PI).ln())
    }

    /// Differential entropy of the ID law in nats:
    /// `H(coarse) + fine_dims * (E[log s(r)] + log(2 pi e) / 2)`, with the
    /// expectation over the chi distribution of `r` by Simpson's rule.
    pub fn id_entropy(&self) -> f64 {
        let chi = Chi::new(self.coarse_dims as u64).expect("positive degrees of freedom");
        let upper = 12.0 + (self.coarse_dims as f64).sqrt() * 4.0;
        let n = 20_000;
        let h = upper / n as f64;
        let f = |r: f64| chi.pdf(r) * self.fine_std(r * r).ln();
        let mut acc = f(0.0) + f(upper);
        for i in 1..n {
            acc += if i % 2 == 1 { 4.0 } else { 2.0 } * f(i as f64 * h);
        }
        let mean_log_s = acc * h / 3.0;
        let half_log = 0.5 * (2.0 * PI * E).ln();
        self.coarse_dims as f64 * half_log + self.fine_dims as f64 * (mean_log_s + half_log)
    }

    pub fn ood_entropy(&self) -> f64 {
        let half_log = 0.5 * (2.0 * PI * E).ln();
        self.coarse_dims as f64 * (half_log + self.ood_coarse_std.ln())
            + self.fine_dims as f64 * (half_log + self.ood_fine_std.ln())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum DatasetKind {
    /// Diagonal Gaussian.
    Gaussian { mean: Vec<f64>, variances: Vec<f64> },
    /// Mixture of diagonal Gaussians.
    GaussianMixture {
        weights: Vec<f64>,
        means: Vec<Vec<f64>>,
        variances: Vec<Vec<f64>>,
    },
    /// ID/OOD pair; the preset names are `inversion_pair` and `non_inversion_pair`.
    Pair(PairSpec),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticDatasetSpec {
    pub kind: DatasetKind,
    pub n_train: usize,
    /// Size of each test split.
    pub n_test: usize,
    pub seed: u64,
}

/// `test_ood` is empty for single-distribution kinds.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub train: Batch,
    pub test_id: Batch,
    pub test_ood: Batch,
}

impl DatasetKind {
    pub fn dim(&self) -> usize {
        match self {
            DatasetKind::Gaussian { mean, .. } => mean.len(),
            DatasetKind::GaussianMixture { means, .. } => means.first().map_or(0, Vec::len),
            DatasetKind::Pair(p) => p.dim(),
        }
    }

    fn validate(&self) -> Result<()> {
        let check_var = |v: &[f64]| -> Result<()> {
            ensure_finite(v, "variances")?;
            if v.iter().any(|&s| s <= 0.0) {
                return Err(Error::param("variances", "must be positive"));
            }
            Ok(())
        };
        match self {
            DatasetKind::Gaussian { mean, variances } => {
                if mean.is_empty() {
                    return Err(Error::param("mean", "dimension must be positive"));
                }
                if variances.len() != mean.len() {
                    return Err(Error::Dimension {
                        expected: mean.len(),
                        got: variances.len(),
                    });
                }
                ensure_finite(mean, "mean")?;
                check_var(variances)
            }
            DatasetKind::GaussianMixture {
                weights,
                means,
                variances,
            } => {
                if weights.is_empty() || weights.len() != means.len() || weights.len() != variances.len() {
                    return Err(Error::param(
                        "weights",
                        "need one weight, mean and variance per component",
                    ));
                }
                ensure_finite(weights, "weights")?;
                let total: f64 = weights.iter().sum();
                if weights.iter().any(|&w| w < 0.0) || (total - 1.0).abs() > 1e-9 {
                    return Err(Error::param("weights", "must be non-negative and sum to 1"));
                }
                let d = self.dim();
                if d == 0 {
                    return Err(Error::param("means", "dimension must be positive"));
                }
                for (m, v) in means.iter().zip(variances) {
                    if m.len() != d || v.len() != d {
                        return Err(Error::Dimension {
                            expected: d,
                            got: m.len().max(v.len()),
                        });
                    }
                    ensure_finite(m, "means")?;
                    check_var(v)?;
                }
                Ok(())
            }
            DatasetKind::Pair(p) => p.validate(),
        }
    }

    fn sample_id(&self, rng: &mut Stream) -> Vec<f64> {
        match self {
            DatasetKind::Gaussian { mean, variances } => mean
                .iter()
                .zip(variances)
                .map(|(m, v)| m + v.sqrt() * rng.standard_normal())
                .collect(),
            DatasetKind::GaussianMixture {
                weights,
                means,
                variances,
            } => {
                let u = rng.uniform();
                let mut acc = 0.0;
                let mut comp = weights.len() - 1;
                for (k, w) in weights.iter().enumerate() {
                    acc += w;
                    if u < acc {
                        comp = k;
                        break;
                    }
                }
                means[comp]
                    .iter()
                    .zip(&variances[comp])
                    .map(|(m, v)| m + v.sqrt() * rng.standard_normal())
                    .collect()
            }
            DatasetKind::Pair(p) => p.sample_id(rng),
        }
    }
}

// stream index blocks for the three splits
const TEST_ID_BLOCK: u64 = 1 << 40;
const TEST_OOD_BLOCK: u64 = 2 << 40;

fn fill(n: usize, d: usize, mut row: impl FnMut(usize) -> Vec<f64>) -> Batch {
    let mut out = Array2::zeros((n, d));
    for i in 0..n {
        out.row_mut(i).assign(&ArrayView1::from(&row(i)));
    }
    out
}

/// Draws the train and test splits. Sample `i` of each split has its own
/// random stream, so enlarging a split never changes existing rows.
pub fn generate(spec: &SyntheticDatasetSpec) -> Result<Dataset> {
    spec.kind.validate()?;
    let d = spec.kind.dim();
    let kind = &spec.kind;
    let stream = |i: u64| Stream::new(spec.seed, Domain::Data, i);
    let train = fill(spec.n_train, d, |i| kind.sample_id(&mut stream(i as u64)));
    let test_id = fill(spec.n_test, d, |i| {
        kind.sample_id(&mut stream(TEST_ID_BLOCK + i as u64))
    });
    let test_ood = match kind {
        DatasetKind::Pair(p) => fill(spec.n_test, d, |i| p.sample_ood(&mut stream(TEST_OOD_BLOCK + i as u64))),
        _ => Array2::zeros((0, d)),
    };
    Ok(Dataset {
        train,
        test_id,
        test_ood,
    })
}

pub const BIN_WIDTH: f64 = 1.0 / 256.0;

/// Adds independent `U[0, 1/256)` noise to every coordinate; row `i` uses
/// its own stream.
pub fn dequantize(x: &Batch, seed: u64) -> Batch {
    let mut out = x.clone();
    for (i, mut row) in out.rows_mut().into_iter().enumerate() {
        let mut rng = Stream::new(seed, Domain::Dequantize, i as u64);
        row.iter_mut().for_each(|v| *v += BIN_WIDTH * rng.uniform());
    }
    out
}

/// Clamps to `[0, 1]`, scales by 255 and rounds half to even.
pub fn quantize(x: &[f64]) -> Result<Vec<u8>> {
    ensure_finite(x, "quantize input")?;
    Ok(x.iter()
        .map(|v| (v.clamp(0.0, 1.0) * 255.0).round_ties_even() as u8)
        .collect())
}

pub fn unquantize(q: &[u8]) -> Vec<f64> {
    q.iter().map(|&b| f64::from(b) / 255.0).collect()
}

/// A batch with an optional per-row split label, as stored on disk.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub x: Batch,
    pub split: Option<Vec<String>>,
}

impl Table {
    /// Rows labelled `label`, in file order, with their row indices.
    pub fn rows_with_split(&self, label: &str) -> (Batch, Vec<usize>) {
        let idx: Vec<usize> = match &self.split {
            Some(s) => (0..s.len()).filter(|&i| s[i] == label).collect(),
            None => Vec::new(),
        };
        (self.x.select(ndarray::Axis(0), &idx), idx)
    }
}

/// Renders a float so it parses back to the same bits.
pub fn fmt_f64(v: f64) -> String {
    format!("{v}")
}

pub fn csv_bytes(header: &[String], rows: &[Vec<String>]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let to_err = |e: csv::Error| Error::Format(format!("csv encoding: {e}"));
    w.write_record(header).map_err(to_err)?;
    for r in rows {
        w.write_record(r).map_err(to_err)?;
    }
    w.into_inner().map_err(|e| Error::Format(format!("csv encoding: {e}")))
}

pub fn write_csv(path: &Path, header: &[String], rows: &[Vec<String>]) -> Result<()> {
    write_atomic(path, &csv_bytes(header, rows)?)
}

pub fn batch_header(d: usize, with_split: bool) -> Vec<String> {
    let mut h: Vec<String> = (0..d).map(|j| format!("col_{j}")).collect();
    if with_split {
        h.push("split".into());
    }
    h
}

pub fn table_csv_bytes(t: &Table) -> Result<Vec<u8>> {
    let d = t.x.ncols();
    if let Some(s) = &t.split {
        if s.len() != t.x.nrows() {
            return Err(Error::Dimension {
                expected: t.x.nrows(),
                got: s.len(),
            });
        }
    }
    let rows: Vec<Vec<String>> =
        t.x.rows()
            .into_iter()
            .enumerate()
            .map(|(i, row)| {
                let mut r: Vec<String> = row.iter().map(|&v| fmt_f64(v)).collect();
                if let Some(s) = &t.split {
                    r.push(s[i].clone());
                }
                r
            })
            .collect();
    csv_bytes(&batch_header(d, t.split.is_some()), &rows)
}

pub fn save_csv(path: &Path, t: &Table) -> Result<()> {
    write_atomic(path, &table_csv_bytes(t)?)
}

/// Reads a `col_0..col_{d-1}[,split]` table. Errors carry the 1-based line.
pub fn load_csv(path: &Path) -> Result<Table> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    parse_csv(file, path)
}

fn parse_csv<R: std::io::Read>(reader: R, path: &Path) -> Result<Table> {
    let parse_err = |line: u64, reason: String| Error::Parse {
        path: path.to_path_buf(),
        line: line as usize,
        reason,
    };
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(reader);
    let header = rdr.headers().map_err(|e| parse_err(1, e.to_string()))?.clone();
    if header.is_empty() || (header.len() == 1 && header[0].is_empty()) {
        return Err(parse_err(1, "missing header".into()));
    }
    let has_split = header.iter().next_back() == Some("split");
    let d = header.len() - has_split as usize;
    for (j, name) in header.iter().take(d).enumerate() {
        if name != format!("col_{j}") {
            return Err(parse_err(1, format!("expected column `col_{j}`, found `{name}`")));
        }
    }
    let mut values = Vec::new();
    let mut split = Vec::new();
    let mut n = 0usize;
    for rec in rdr.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            parse_err(line, e.to_string())
        })?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.len() != header.len() {
            return Err(parse_err(
                line,
                format!("expected {} fields, found {}", header.len(), rec.len()),
            ));
        }
        for field in rec.iter().take(d) {
            let v: f64 = field
                .trim()
                .parse()
                .map_err(|_| parse_err(line, format!("not a number: `{field}`")))?;
            if !v.is_finite() {
                return Err(parse_err(line, format!("non-finite value `{field}`")));
            }
            values.push(v);
        }
        if has_split {
            split.push(rec[d].to_string());
        }
        n += 1;
    }
    let x = Array2::from_shape_vec((n, d), values).expect("row lengths checked");
    Ok(Table {
        x,
        split: has_split.then_some(split),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::entropy::knn_entropy;

    fn small_pair(seed: u64, kind: PairSpec) -> Dataset {
        generate(&SyntheticDatasetSpec {
            kind: DatasetKind::Pair(kind),
            n_train: 10,
            n_test: 3000,
            seed,
        })
        .unwrap()
    }

    #[test]
    fn gaussian_moments() {
        let spec = SyntheticDatasetSpec {
            kind: DatasetKind::Gaussian {
                mean: vec![1.0, -2.0],
                variances: vec![0.5, 2.0],
            },
            n_train: 20_000,
            n_test: 0,
            seed: 4,
        };
        let ds = generate(&spec).unwrap();
        assert_eq!(ds.test_id.nrows(), 0);
        for (j, (m, v)) in [(1.0, 0.5), (-2.0, 2.0)].into_iter().enumerate() {
            let col = ds.train.column(j);
            let mean = col.mean().unwrap();
            let var = col.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / col.len() as f64;
            assert!((mean - m).abs() < 0.05);
            assert!((var - v).abs() < 0.05);
        }
        assert_eq!(generate(&spec).unwrap(), ds);
    }

    #[test]
    fn mixture_weights_respected() {
        let spec = SyntheticDatasetSpec {
            kind: DatasetKind::GaussianMixture {
                weights: vec![0.25, 0.75],
                means: vec![vec![-10.0], vec![10.0]],
                variances: vec![vec![1.0], vec![1.0]],
            },
            n_train: 8000,
            n_test: 0,
            seed: 1,
        };
        let ds = generate(&spec).unwrap();
        let frac = ds.train.iter().filter(|&&v| v < 0.0).count() as f64 / 8000.0;
        assert!((frac - 0.25).abs() < 0.03);
        let bad = SyntheticDatasetSpec {
            kind: DatasetKind::GaussianMixture {
                weights: vec![0.5, 0.6],
                means: vec![vec![0.0], vec![1.0]],
                variances: vec![vec![1.0], vec![1.0]],
            },
            ..spec
        };
        assert!(generate(&bad).is_err());
    }

    #[test]
    fn empty_splits_are_valid() {
        let ds = generate(&SyntheticDatasetSpec {
            kind: DatasetKind::Pair(PairSpec::inversion()),
            n_train: 0,
            n_test: 0,
            seed: 0,
        })
        .unwrap();
        assert_eq!(ds.train.dim(), (0, 8));
        assert_eq!(ds.test_ood.dim(), (0, 8));
    }

    #[test]
    fn id_entropy_matches_monte_carlo() {
        let p = PairSpec::inversion();
        let ds = generate(&SyntheticDatasetSpec {
            kind: DatasetKind::Pair(p.clone()),
            n_train: 50_000,
            n_test: 0,
            seed: 2,
        })
        .unwrap();
        let ll: Vec<f64> = ds
            .train
            .rows()
            .into_iter()
            .map(|r| p.id_log_density(&r.to_vec()).unwrap())
            .collect();
        let mean = -ll.iter().sum::<f64>() / ll.len() as f64;
        let var = ll.iter().map(|v| (v + mean).powi(2)).sum::<f64>() / ll.len() as f64;
        let se = (var / ll.len() as f64).sqrt();
        assert!((mean - p.id_entropy()).abs() < 4.0 * se, "{mean} vs {}", p.id_entropy());
    }

    #[test]
    fn inversion_gap_over_seeds() {
        for seed in 0..10 {
            let ds = small_pair(seed, PairSpec::inversion());
            let h_id = knn_entropy(&ds.test_id, 5).unwrap().value;
            let h_ood = knn_entropy(&ds.test_ood, 5).unwrap().value;
            assert!(h_id - h_ood >= 1.0, "seed {seed}: {h_id} vs {h_ood}");
        }
        let p = PairSpec::non_inversion();
        assert!(p.ood_entropy() > p.id_entropy());
    }

    #[test]
    fn dequantize_bounds_and_mean() {
        let q = Array2::from_shape_fn((2000, 4), |(i, j)| ((i * 7 + j) % 256) as f64 / 255.0);
        let dq = dequantize(&q, 3);
        let mut shift = 0.0;
        for (a, b) in q.iter().zip(dq.iter()) {
            let u = b - a;
            assert!((0.0..BIN_WIDTH).contains(&u));
            shift += u;
        }
        shift /= q.len() as f64;
        assert!((shift - 1.0 / 512.0).abs() < 1e-4);
        assert_eq!(dequantize(&q, 3), dq);
    }

    #[test]
    fn quantize_rules() {
        assert_eq!(
            quantize(&[0.0, 1.0, 0.5, -3.0, 7.0]).unwrap(),
            vec![0, 255, 128, 0, 255]
        );
        let bytes: Vec<u8> = (0..=255).collect();
        assert_eq!(quantize(&unquantize(&bytes)).unwrap(), bytes);
        assert!(quantize(&[f64::NAN]).is_err());
    }

    #[test]
    fn csv_round_trip_is_lossless() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.csv");
        let x = ndarray::array![[0.1, -1e-300], [std::f64::consts::PI, 12345.678901234567]];
        let t = Table {
            x,
            split: Some(vec!["id".into(), "ood".into()]),
        };
        save_csv(&p, &t).unwrap();
        assert_eq!(load_csv(&p).unwrap(), t);
    }

    #[test]
    fn csv_errors_name_the_line() {
        let err = parse_csv("col_0,col_1\n1,2\n3,oops\n".as_bytes(), Path::new("x.csv")).unwrap_err();
        match err {
            Error::Parse { line, .. } => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
        let short = parse_csv("col_0,col_1\n1\n".as_bytes(), Path::new("x.csv")).unwrap_err();
        assert!(matches!(short, Error::Parse { line: 2, .. }));
        let header_only = parse_csv("col_0,col_1\n".as_bytes(), Path::new("x.csv")).unwrap();
        assert_eq!(header_only.x.dim(), (0, 2));
        assert!(parse_csv("a,b\n".as_bytes(), Path::new("x.csv")).is_err());
    }

    #[test]
    fn split_selection() {
        let t = Table {
            x: ndarray::array![[1.0], [2.0], [3.0]],
            split: Some(vec!["id".into(), "ood".into(), "id".into()]),
        };
        let (id, idx) = t.rows_with_split("id");
        assert_eq!(idx, vec![0, 2]);
        assert_eq!(id, ndarray::array![[1.0], [3.0]]);
    }
}
