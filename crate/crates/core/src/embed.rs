//! Embedders, ReAct rectification and the in-distribution memory bank that
//! supplies the similarity `λ` for SPEM.

use std::fmt;
use std::hash::Hasher;
use std::path::Path;
use std::str::FromStr;

use fnv::FnvHasher;
use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{ensure_finite, ensure_finite_batch, Error, Result};
use crate::io::{read_file, write_atomic, ByteReader, ByteWriter};
use crate::rng::{Domain, Stream};
use crate::Batch;

const BANK_MAGIC: &[u8; 8] = b"SPEMBANK";
const EMBEDDER_MAGIC: &[u8; 8] = b"SPEMEMBD";
const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EmbedderKind {
    Identity,
    RandomProjection,
    Pca,
}

impl EmbedderKind {
    fn tag(self) -> u32 {
        match self {
            EmbedderKind::Identity => 0,
            EmbedderKind::RandomProjection => 1,
            EmbedderKind::Pca => 2,
        }
    }

    fn from_tag(tag: u32) -> Result<Self> {
        match tag {
            0 => Ok(EmbedderKind::Identity),
            1 => Ok(EmbedderKind::RandomProjection),
            2 => Ok(EmbedderKind::Pca),
            t => Err(Error::Format(format!("unknown embedder kind {t}"))),
        }
    }
}

impl fmt::Display for EmbedderKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EmbedderKind::Identity => "identity",
            EmbedderKind::RandomProjection => "random_projection",
            EmbedderKind::Pca => "pca",
        })
    }
}

impl FromStr for EmbedderKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "identity" => Ok(EmbedderKind::Identity),
            "random_projection" => Ok(EmbedderKind::RandomProjection),
            "pca" => Ok(EmbedderKind::Pca),
            other => Err(Error::param("embedder", format!("unknown kind `{other}`"))),
        }
    }
}

/// A fixed map `R^d -> R^d'`: `matrix * (x - mean)`, with an empty matrix
/// meaning the identity and an empty mean meaning no centring.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedder {
    kind: EmbedderKind,
    d_in: usize,
    d_out: usize,
    seed: u64,
    mean: Vec<f64>,
    matrix: Vec<f64>,
}

/// Fits an embedder of the requested kind on in-distribution data.
pub fn fit_embedder(data: &Batch, kind: EmbedderKind, d_out: usize, seed: u64) -> Result<Embedder> {
    let (n, d) = data.dim();
    if n == 0 || d == 0 {
        return Err(Error::Empty("embedder training data"));
    }
    ensure_finite_batch(data, "embedder training data")?;
    if d_out == 0 {
        return Err(Error::param("d_out", "must be positive"));
    }
    let (mean, matrix) = match kind {
        EmbedderKind::Identity => {
            if d_out != d {
                return Err(Error::param("d_out", format!("identity needs d_out = {d}")));
            }
            (Vec::new(), Vec::new())
        }
        EmbedderKind::RandomProjection => {
            let mut rng = Stream::new(seed, Domain::Embedder, 0);
            let std = 1.0 / (d_out as f64).sqrt();
            let m = (0..d_out * d).map(|_| std * rng.standard_normal()).collect();
            (Vec::new(), m)
        }
        EmbedderKind::Pca => {
            if d_out > d {
                return Err(Error::param("d_out", format!("pca needs d_out <= {d}")));
            }
            pca(data, d_out)
        }
    };
    Ok(Embedder {
        kind,
        d_in: d,
        d_out,
        seed,
        mean,
        matrix,
    })
}

/// Mean and the top `k` covariance eigenvectors as rows, each signed so its
/// largest-magnitude entry is positive.
fn pca(data: &Batch, k: usize) -> (Vec<f64>, Vec<f64>) {
    let (n, d) = data.dim();
    let mean: Vec<f64> = (0..d).map(|j| data.column(j).sum() / n as f64).collect();
    let mut cov = DMatrix::<f64>::zeros(d, d);
    for row in data.rows() {
        for a in 0..d {
            let da = row[a] - mean[a];
            for b in a..d {
                cov[(a, b)] += da * (row[b] - mean[b]);
            }
        }
    }
    for a in 0..d {
        for b in a..d {
            let v = cov[(a, b)] / n as f64;
            cov[(a, b)] = v;
            cov[(b, a)] = v;
        }
    }
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]).then(i.cmp(&j)));
    let mut matrix = Vec::with_capacity(k * d);
    for &c in order.iter().take(k) {
        let col = eig.eigenvectors.column(c);
        let pivot = col
            .iter()
            .copied()
            .fold(0.0f64, |acc, v| if v.abs() > acc.abs() { v } else { acc });
        let sign = if pivot < 0.0 { -1.0 } else { 1.0 };
        matrix.extend(col.iter().map(|v| sign * v));
    }
    (mean, matrix)
}

impl Embedder {
    pub fn kind(&self) -> EmbedderKind {
        self.kind
    }

    pub fn input_dim(&self) -> usize {
        self.d_in
    }

    pub fn output_dim(&self) -> usize {
        self.d_out
    }

    /// Builds a projection embedder from an explicit `d_out x d_in` row-major matrix.
    pub fn from_matrix(d_in: usize, d_out: usize, matrix: Vec<f64>) -> Result<Self> {
        if d_in == 0 || d_out == 0 || matrix.len() != d_in * d_out {
            return Err(Error::param("matrix", format!("expected {d_out} x {d_in} entries")));
        }
        ensure_finite(&matrix, "embedding matrix")?;
        Ok(Embedder {
            kind: EmbedderKind::RandomProjection,
            d_in,
            d_out,
            seed: 0,
            mean: Vec::new(),
            matrix,
        })
    }

    pub fn identity(d: usize) -> Result<Self> {
        if d == 0 {
            return Err(Error::param("d", "must be positive"));
        }
        Ok(Embedder {
            kind: EmbedderKind::Identity,
            d_in: d,
            d_out: d,
            seed: 0,
            mean: Vec::new(),
            matrix: Vec::new(),
        })
    }

    pub fn embed(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.d_in {
            return Err(Error::Dimension {
                expected: self.d_in,
                got: x.len(),
            });
        }
        ensure_finite(x, "embedder input")?;
        if self.matrix.is_empty() {
            return Ok(x.to_vec());
        }
        let centred: Vec<f64> = if self.mean.is_empty() {
            x.to_vec()
        } else {
            x.iter().zip(&self.mean).map(|(a, m)| a - m).collect()
        };
        Ok(self
            .matrix
            .chunks_exact(self.d_in)
            .map(|row| row.iter().zip(&centred).map(|(w, v)| w * v).sum())
            .collect())
    }

    pub fn embed_batch(&self, x: &Batch) -> Result<Batch> {
        let mut out = Batch::zeros((x.nrows(), self.d_out));
        for (i, row) in x.rows().into_iter().enumerate() {
            let h = self.embed(&row.to_vec())?;
            out.row_mut(i).assign(&ndarray::ArrayView1::from(&h));
        }
        Ok(out)
    }

    /// 64-bit FNV-1a hash of the kind, dimensions, seed and parameters.
    pub fn fingerprint(&self) -> u64 {
        let mut h = FnvHasher::default();
        h.write(&self.kind.tag().to_le_bytes());
        h.write(&(self.d_in as u64).to_le_bytes());
        h.write(&(self.d_out as u64).to_le_bytes());
        h.write(&self.seed.to_le_bytes());
        for v in self.mean.iter().chain(&self.matrix) {
            h.write(&v.to_bits().to_le_bytes());
        }
        h.finish()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = ByteWriter::new();
        w.bytes(EMBEDDER_MAGIC);
        w.u32(FORMAT_VERSION);
        w.u32(self.kind.tag());
        w.u32(self.d_in as u32);
        w.u32(self.d_out as u32);
        w.u64(self.seed);
        w.u64(self.mean.len() as u64);
        w.f64s(&self.mean);
        w.u64(self.matrix.len() as u64);
        w.f64s(&self.matrix);
        w.finish()
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new(buf, "embedder");
        r.magic(EMBEDDER_MAGIC)?;
        r.version(FORMAT_VERSION)?;
        let kind = EmbedderKind::from_tag(r.u32()?)?;
        let d_in = r.u32()? as usize;
        let d_out = r.u32()? as usize;
        let seed = r.u64()?;
        let n_mean = r.u64()? as usize;
        let mean = r.f64s(n_mean)?;
        let n_matrix = r.u64()? as usize;
        let matrix = r.f64s(n_matrix)?;
        r.finish()?;
        let shape_ok = d_in > 0
            && d_out > 0
            && (mean.is_empty() || mean.len() == d_in)
            && (matrix.is_empty() && d_in == d_out || matrix.len() == d_in * d_out);
        if !shape_ok {
            return Err(Error::Format("embedder: inconsistent dimensions".into()));
        }
        Ok(Embedder {
            kind,
            d_in,
            d_out,
            seed,
            mean,
            matrix,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&read_file(path)?)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReActConfig {
    /// Quantile of pooled activations used as the clipping threshold.
    pub p: f64,
    /// Number of training rows sampled for calibration.
    pub sample_count: usize,
    pub seed: u64,
}

impl Default for ReActConfig {
    fn default() -> Self {
        ReActConfig {
            p: 0.9,
            sample_count: 1000,
            seed: 0,
        }
    }
}

/// Nearest-rank quantile: the `ceil(p * n)`-th smallest value (1-based).
pub fn nearest_rank_quantile(values: &[f64], p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::param("p", "must lie in (0, 1)"));
    }
    if values.is_empty() {
        return Err(Error::Empty("quantile input"));
    }
    ensure_finite(values, "quantile input")?;
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    // shave rounding noise so that e.g. 0.9 * 100 lands on rank 90
    let exact = p * n as f64;
    let rank = (exact - exact * 4.0 * f64::EPSILON).ceil() as usize;
    Ok(sorted[rank.clamp(1, n) - 1])
}

/// Clipping threshold `β`: the nearest-rank `p`-quantile of all activations
/// of up to `sample_count` randomly chosen rows, pooled across dimensions.
pub fn calibrate_react(e: &Embedder, data: &Batch, p: f64, sample_count: usize, seed: u64) -> Result<f64> {
    let n = data.nrows();
    if n == 0 {
        return Err(Error::Empty("calibration data"));
    }
    if sample_count == 0 {
        return Err(Error::param("sample_count", "must be positive"));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    let take = sample_count.min(n);
    let mut rng = Stream::new(seed, Domain::React, 0);
    // partial Fisher-Yates: the first `take` slots become a uniform sample
    for i in 0..take {
        let j = i + rng.below(n - i);
        idx.swap(i, j);
    }
    let mut pooled = Vec::with_capacity(take * e.output_dim());
    for &i in &idx[..take] {
        pooled.extend(e.embed(&data.row(i).to_vec())?);
    }
    nearest_rank_quantile(&pooled, p)
}

pub fn rectify(v: &[f64], beta: f64) -> Vec<f64> {
    v.iter().map(|&a| a.min(beta)).collect()
}

/// Rectified in-distribution embeddings with cached row norms.
#[derive(Debug, Clone, PartialEq)]
pub struct MemoryBank {
    dim: usize,
    beta: f64,
    fingerprint: u64,
    rows: Vec<f64>,
    norms: Vec<f64>,
}

/// Embeds and rectifies every row of `data`, calibrating `β` first.
pub fn build_memory_bank(data: &Batch, e: &Embedder, react: &ReActConfig) -> Result<MemoryBank> {
    let beta = calibrate_react(e, data, react.p, react.sample_count, react.seed)?;
    let embedded = e.embed_batch(data)?;
    MemoryBank::from_embeddings(&embedded, beta, e.fingerprint())
}

impl MemoryBank {
    /// Rectifies already-embedded rows at `beta`. Rows whose rectified norm
    /// is zero carry no direction and are dropped.
    pub fn from_embeddings(embedded: &Batch, beta: f64, fingerprint: u64) -> Result<Self> {
        if !beta.is_finite() {
            return Err(Error::NonFinite {
                context: "ReAct threshold",
            });
        }
        ensure_finite_batch(embedded, "bank embeddings")?;
        let dim = embedded.ncols();
        let mut rows = Vec::with_capacity(embedded.len());
        let mut norms = Vec::with_capacity(embedded.nrows());
        let mut dropped = 0usize;
        for row in embedded.rows() {
            let h = rectify(&row.to_vec(), beta);
            let norm = norm(&h);
            if norm == 0.0 {
                dropped += 1;
                continue;
            }
            rows.extend(h);
            norms.push(norm);
        }
        if dropped > 0 {
            log::warn!("memory bank: dropped {dropped} zero-norm rows");
        }
        if norms.is_empty() {
            return Err(Error::Empty("memory bank (every row has zero norm)"));
        }
        Ok(MemoryBank {
            dim,
            beta,
            fingerprint,
            rows,
            norms,
        })
    }

    pub fn len(&self) -> usize {
        self.norms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.norms.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn fingerprint(&self) -> u64 {
        self.fingerprint
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.rows[i * self.dim..(i + 1) * self.dim]
    }

    /// Largest cosine similarity between `h` and any stored row. A zero
    /// vector has no direction and gets `λ = 0`.
    pub fn max_cosine_similarity(&self, h: &[f64]) -> Result<f64> {
        if h.len() != self.dim {
            return Err(Error::Dimension {
                expected: self.dim,
                got: h.len(),
            });
        }
        ensure_finite(h, "test embedding")?;
        let hn = norm(h);
        if hn == 0.0 {
            return Ok(0.0);
        }
        let mut best = f64::NEG_INFINITY;
        for (row, &rn) in self.rows.chunks_exact(self.dim).zip(&self.norms) {
            let dot: f64 = row.iter().zip(h).map(|(a, b)| a * b).sum();
            best = best.max(dot / (hn * rn));
        }
        Ok(best.clamp(-1.0, 1.0))
    }

    pub fn check_embedder(&self, e: &Embedder) -> Result<()> {
        if e.fingerprint() != self.fingerprint {
            return Err(Error::Fingerprint {
                bank: self.fingerprint,
                embedder: e.fingerprint(),
            });
        }
        Ok(())
    }

    /// `λ(x)`: embed, rectify at the bank's `β`, then take the max cosine.
    pub fn similarity(&self, e: &Embedder, x: &[f64]) -> Result<f64> {
        self.check_embedder(e)?;
        let h = rectify(&e.embed(x)?, self.beta);
        self.max_cosine_similarity(&h)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = ByteWriter::new();
        w.bytes(BANK_MAGIC);
        w.u32(FORMAT_VERSION);
        w.u32(self.dim as u32);
        w.u64(self.len() as u64);
        w.f64(self.beta);
        w.u64(self.fingerprint);
        w.f64s(&self.rows);
        w.finish()
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new(buf, "memory bank");
        r.magic(BANK_MAGIC)?;
        r.version(FORMAT_VERSION)?;
        let dim = r.u32()? as usize;
        let n = r.u64()? as usize;
        let beta = r.f64()?;
        let fingerprint = r.u64()?;
        let total = n
            .checked_mul(dim)
            .ok_or_else(|| Error::Format("memory bank: size overflow".into()))?;
        let rows = r.f64s(total)?;
        r.finish()?;
        if dim == 0 || n == 0 {
            return Err(Error::Format("memory bank: empty".into()));
        }
        ensure_finite(&rows, "stored bank rows")?;
        let norms: Vec<f64> = rows.chunks_exact(dim).map(norm).collect();
        if norms.contains(&0.0) {
            return Err(Error::Format("memory bank: zero-norm row".into()));
        }
        Ok(MemoryBank {
            dim,
            beta,
            fingerprint,
            rows,
            norms,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&read_file(path)?)
    }

    /// Loads a bank and checks it was built with `e`.
    pub fn load_for(path: &Path, e: &Embedder) -> Result<Self> {
        let bank = Self::load(path)?;
        bank.check_embedder(e)?;
        Ok(bank)
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|a| a * a).sum::<f64>().sqrt()
}
