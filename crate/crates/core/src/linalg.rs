//! Dense symmetric linear algebra, seeded random streams and Gaussian sampling.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::{Error, Result};

/// Symmetric matrix with non-negative diagonal.
#[derive(Clone, Debug, PartialEq)]
pub struct SymMatrix {
    m: DMatrix<f64>,
}

impl SymMatrix {
    /// Checks exact symmetry and a non-negative diagonal.
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        let n = m.nrows();
        if n == 0 || m.ncols() != n {
            return Err(Error::DimensionMismatch(m.nrows(), m.ncols()));
        }
        for i in 0..n {
            if !(m[(i, i)] >= 0.0) {
                return Err(Error::InvalidArgument(format!(
                    "negative or NaN diagonal entry {} at {i}",
                    m[(i, i)]
                )));
            }
            for k in 0..i {
                if m[(i, k)] != m[(k, i)] {
                    return Err(Error::InvalidArgument(format!(
                        "matrix not symmetric at ({i}, {k})"
                    )));
                }
            }
        }
        Ok(Self { m })
    }

    /// Builds the matrix from its lower triangle; `f(i, k)` is called for `k <= i` only.
    pub fn from_lower_fn(dim: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        assert!(dim >= 1, "SymMatrix needs dim >= 1");
        let mut m = DMatrix::zeros(dim, dim);
        for i in 0..dim {
            for k in 0..=i {
                let v = f(i, k);
                m[(i, k)] = v;
                m[(k, i)] = v;
            }
        }
        for i in 0..dim {
            if m[(i, i)] < 0.0 {
                m[(i, i)] = 0.0;
            }
        }
        Self { m }
    }

    pub fn identity(dim: usize) -> Self {
        Self { m: DMatrix::identity(dim, dim) }
    }

    pub fn zeros(dim: usize) -> Self {
        Self { m: DMatrix::zeros(dim, dim) }
    }

    pub fn dim(&self) -> usize {
        self.m.nrows()
    }

    pub fn get(&self, i: usize, k: usize) -> f64 {
        self.m[(i, k)]
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.m
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.m
    }

    pub fn diag(&self) -> Vec<f64> {
        (0..self.dim()).map(|i| self.m[(i, i)]).collect()
    }

    pub fn trace(&self) -> f64 {
        self.m.trace()
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self { m: &self.m * c }
    }

    /// Principal sub-matrix over `idx`.
    pub fn select(&self, idx: &[usize]) -> Self {
        Self::from_lower_fn(idx.len(), |i, k| self.m[(idx[i], idx[k])])
    }
}

/// Relative jitter escalation used when a factorization fails.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct JitterPolicy {
    pub initial: f64,
    pub factor: f64,
    pub max: f64,
}

impl Default for JitterPolicy {
    fn default() -> Self {
        Self { initial: 1e-10, factor: 10.0, max: 1e-2 }
    }
}

impl JitterPolicy {
    /// Relative jitters tried in order, starting with none at all.
    pub fn schedule(&self) -> Vec<f64> {
        let mut out = vec![0.0];
        let mut j = self.initial;
        while j <= self.max * (1.0 + 1e-9) {
            out.push(j);
            j *= self.factor;
        }
        out
    }
}

/// Lower Cholesky factor of `K + jitter_used * scale * I`.
#[derive(Clone, Debug)]
pub struct CholeskyFactor {
    pub lower: DMatrix<f64>,
    /// Jitter relative to `scale`.
    pub jitter_used: f64,
    /// Mean diagonal of the input (1 when the diagonal is identically zero).
    pub scale: f64,
}

impl CholeskyFactor {
    pub fn dim(&self) -> usize {
        self.lower.nrows()
    }

    /// Absolute amount added to the diagonal.
    pub fn jitter_abs(&self) -> f64 {
        self.jitter_used * self.scale
    }

    pub fn reconstruct(&self) -> DMatrix<f64> {
        &self.lower * self.lower.transpose()
    }

    /// Solves `(L Lᵀ) X = B`.
    pub fn solve(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        let y = self
            .lower
            .solve_lower_triangular(b)
            .expect("cholesky factor has a positive diagonal");
        self.lower
            .tr_solve_lower_triangular(&y)
            .expect("cholesky factor has a positive diagonal")
    }

    pub fn solve_vec(&self, b: &DVector<f64>) -> DVector<f64> {
        let y = self
            .lower
            .solve_lower_triangular(b)
            .expect("cholesky factor has a positive diagonal");
        self.lower
            .tr_solve_lower_triangular(&y)
            .expect("cholesky factor has a positive diagonal")
    }

    /// Solves `L X = B`.
    pub fn solve_lower(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        self.lower
            .solve_lower_triangular(b)
            .expect("cholesky factor has a positive diagonal")
    }
}

fn try_cholesky(a: &DMatrix<f64>, tol: f64) -> Option<DMatrix<f64>> {
    let n = a.nrows();
    let mut l = DMatrix::<f64>::zeros(n, n);
    for j in 0..n {
        let mut d = a[(j, j)];
        for k in 0..j {
            d -= l[(j, k)] * l[(j, k)];
        }
        if !(d > tol) {
            return None;
        }
        let djj = d.sqrt();
        l[(j, j)] = djj;
        for i in (j + 1)..n {
            let mut s = a[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / djj;
        }
    }
    Some(l)
}

/// Cholesky factorization with the smallest jitter from `policy` that succeeds.
///
/// A pivot counts as positive only above `dim * eps * max_diag`, so a
/// rank-deficient input is jittered instead of factored through round-off.
pub fn cholesky_psd(k: &SymMatrix, policy: &JitterPolicy) -> Result<CholeskyFactor> {
    let n = k.dim();
    let mean_diag = k.trace() / n as f64;
    let scale = if mean_diag > 0.0 { mean_diag } else { 1.0 };
    let max_diag = k.diag().into_iter().fold(0.0_f64, f64::max).max(scale);
    let tol = n as f64 * f64::EPSILON * max_diag;
    for jitter in policy.schedule() {
        let mut a = k.as_matrix().clone();
        for i in 0..n {
            a[(i, i)] += jitter * scale;
        }
        if let Some(lower) = try_cholesky(&a, tol) {
            return Ok(CholeskyFactor { lower, jitter_used: jitter, scale });
        }
    }
    Err(Error::NotPositiveDefinite { max_jitter: policy.max })
}

/// Seeded counter-based random stream.
///
/// Identical `(seed, stream_id)` pairs yield identical sequences regardless
/// of which thread draws them.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct RngStream {
    pub seed: u64,
    pub stream_id: u64,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

impl RngStream {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        Self { seed, stream_id }
    }

    /// Child stream named by `label`; stable across platforms and runs.
    pub fn derive(&self, label: &str) -> Self {
        Self {
            seed: self.seed,
            stream_id: splitmix64(self.stream_id ^ fnv1a(label.as_bytes())),
        }
    }

    /// Child stream for replicate `index`.
    pub fn child(&self, index: u64) -> Self {
        Self {
            seed: self.seed,
            stream_id: splitmix64(self.stream_id.rotate_left(17) ^ splitmix64(index)),
        }
    }

    pub fn rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.stream_id);
        rng
    }
}

/// Where a sample set came from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Provenance {
    CnnPrior,
    GpPrior,
    Other,
}

/// `n` draws of `dim`-dimensional vectors, stored row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleSet {
    n: usize,
    dim: usize,
    data: Vec<f64>,
    pub provenance: Provenance,
}

impl SampleSet {
    pub fn from_flat(n: usize, dim: usize, data: Vec<f64>, provenance: Provenance) -> Self {
        assert_eq!(data.len(), n * dim, "flat sample buffer has wrong length");
        Self { n, dim, data, provenance }
    }

    pub fn from_rows(rows: &[Vec<f64>], provenance: Provenance) -> Result<Self> {
        let dim = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * dim);
        for r in rows {
            if r.len() != dim {
                return Err(Error::DimensionMismatch(dim, r.len()));
            }
            data.extend_from_slice(r);
        }
        Ok(Self { n: rows.len(), dim, data, provenance })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> + '_ {
        self.data.chunks_exact(self.dim.max(1)).take(self.n)
    }

    pub fn as_flat(&self) -> &[f64] {
        &self.data
    }

    /// Rows of `self` followed by rows of `other`.
    pub fn pooled(&self, other: &SampleSet) -> Result<SampleSet> {
        if self.dim != other.dim {
            return Err(Error::DimensionMismatch(self.dim, other.dim));
        }
        let mut data = self.data.clone();
        data.extend_from_slice(&other.data);
        Ok(Self { n: self.n + other.n, dim: self.dim, data, provenance: Provenance::Other })
    }

    /// Keeps only the listed columns.
    pub fn select_columns(&self, cols: &[usize]) -> SampleSet {
        let mut data = Vec::with_capacity(self.n * cols.len());
        for r in self.rows() {
            data.extend(cols.iter().map(|&c| r[c]));
        }
        Self { n: self.n, dim: cols.len(), data, provenance: self.provenance }
    }

    pub fn mean(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.dim];
        for r in self.rows() {
            for (a, b) in m.iter_mut().zip(r) {
                *a += b;
            }
        }
        m.iter_mut().for_each(|a| *a /= self.n as f64);
        m
    }

    /// Centered sample covariance with divisor `n - 1`.
    pub fn covariance(&self) -> DMatrix<f64> {
        let mean = self.mean();
        let mut c = DMatrix::zeros(self.dim, self.dim);
        for r in self.rows() {
            for i in 0..self.dim {
                let di = r[i] - mean[i];
                for k in 0..=i {
                    c[(i, k)] += di * (r[k] - mean[k]);
                }
            }
        }
        let denom = (self.n as f64 - 1.0).max(1.0);
        for i in 0..self.dim {
            for k in 0..=i {
                c[(i, k)] /= denom;
                c[(k, i)] = c[(i, k)];
            }
        }
        c
    }
}

/// Draws `n` rows `mean + L ε` for an existing factor.
pub fn sample_mvn_with_factor(
    mean: &[f64],
    factor: &CholeskyFactor,
    n: usize,
    stream: &RngStream,
) -> Result<SampleSet> {
    let d = factor.dim();
    if mean.len() != d {
        return Err(Error::DimensionMismatch(mean.len(), d));
    }
    if n == 0 {
        return Err(Error::InvalidArgument("sample count must be at least 1".into()));
    }
    let mut rng = stream.rng();
    let mut data = Vec::with_capacity(n * d);
    let mut eps = vec![0.0; d];
    for _ in 0..n {
        for e in eps.iter_mut() {
            *e = rng.sample(StandardNormal);
        }
        for i in 0..d {
            let mut v = mean[i];
            for k in 0..=i {
                v += factor.lower[(i, k)] * eps[k];
            }
            data.push(v);
        }
    }
    Ok(SampleSet::from_flat(n, d, data, Provenance::GpPrior))
}

/// Draws `n` rows from `N(mean, K)` using the default jitter schedule.
pub fn sample_mvn(mean: &[f64], k: &SymMatrix, n: usize, stream: &RngStream) -> Result<SampleSet> {
    if mean.len() != k.dim() {
        return Err(Error::DimensionMismatch(mean.len(), k.dim()));
    }
    let factor = cholesky_psd(k, &JitterPolicy::default())?;
    sample_mvn_with_factor(mean, &factor, n, stream)
}

pub(crate) fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Lower median of all pairwise Euclidean distances between rows.
pub fn median_heuristic_bandwidth(pooled: &SampleSet) -> Result<f64> {
    let n = pooled.n();
    if n < 2 {
        return Err(Error::InvalidArgument("bandwidth heuristic needs at least 2 rows".into()));
    }
    let mut d2 = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        let ri = pooled.row(i);
        for k in (i + 1)..n {
            d2.push(sq_dist(ri, pooled.row(k)));
        }
    }
    // the square root is monotone, so select on squared distances
    let mid = (d2.len() - 1) / 2;
    let (_, med, _) = d2.select_nth_unstable_by(mid, f64::total_cmp);
    let med = med.sqrt();
    if med > 0.0 {
        Ok(med)
    } else if d2.iter().any(|&v| v > 0.0) {
        // median is zero but some distance is not: fall back to the smallest positive one
        Ok(d2.iter().copied().filter(|&v| v > 0.0).fold(f64::INFINITY, f64::min).sqrt())
    } else {
        Err(Error::DegenerateSamples)
    }
}
