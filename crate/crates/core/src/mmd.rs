//! Unbiased squared maximum mean discrepancy with an RBF kernel.

use rand::seq::SliceRandom;

use crate::gp::gp_prior_sample;
use crate::kernels::rbf_kernel;
use crate::linalg::{median_heuristic_bandwidth, sq_dist, RngStream, SampleSet};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MmdEstimate {
    /// May be negative.
    pub mmd2: f64,
    pub bandwidth: f64,
    pub n_x: usize,
    pub n_y: usize,
    pub p_value: Option<f64>,
}

// Kernel values are summed in 2^-62 fixed point so that every partial sum is
// exact and the statistic does not depend on summation order.
const FIXED_ONE: f64 = (1u64 << 62) as f64;

struct PooledGram {
    n: usize,
    k: Vec<i64>,
    total_offdiag: i128,
}

impl PooledGram {
    fn new(pooled: &SampleSet, bandwidth: f64) -> Self {
        let n = pooled.n();
        let c = 1.0 / (2.0 * bandwidth * bandwidth);
        let mut k = vec![0i64; n * n];
        let mut total = 0i128;
        for i in 0..n {
            let ri = pooled.row(i);
            k[i * n + i] = FIXED_ONE as i64;
            for j in (i + 1)..n {
                let v = ((-sq_dist(ri, pooled.row(j)) * c).exp() * FIXED_ONE).round() as i64;
                k[i * n + j] = v;
                k[j * n + i] = v;
                total += 2 * i128::from(v);
            }
        }
        Self { n, k, total_offdiag: total }
    }

    fn within(&self, idx: &[usize]) -> i128 {
        let mut s = 0i128;
        for (a, &i) in idx.iter().enumerate() {
            let row = &self.k[i * self.n..(i + 1) * self.n];
            for &j in &idx[a + 1..] {
                s += i128::from(row[j]);
            }
        }
        2 * s
    }

    fn statistic(&self, x_idx: &[usize], y_idx: &[usize]) -> f64 {
        let (nx, ny) = (x_idx.len() as f64, y_idx.len() as f64);
        let sxx = self.within(x_idx);
        let syy = self.within(y_idx);
        let sxy = (self.total_offdiag - sxx - syy) / 2;
        sxx as f64 / FIXED_ONE / (nx * (nx - 1.0)) + syy as f64 / FIXED_ONE / (ny * (ny - 1.0))
            - 2.0 * sxy as f64 / FIXED_ONE / (nx * ny)
    }
}

fn check_inputs(x: &SampleSet, y: &SampleSet, bandwidth: f64) -> Result<SampleSet> {
    if x.dim() != y.dim() {
        return Err(Error::DimensionMismatch(x.dim(), y.dim()));
    }
    if x.n() < 2 || y.n() < 2 {
        return Err(Error::InvalidArgument("mmd needs at least 2 rows per sample".into()));
    }
    if !(bandwidth > 0.0) {
        return Err(Error::InvalidArgument(format!("bandwidth must be positive, got {bandwidth}")));
    }
    x.pooled(y)
}

/// Unbiased estimate of MMD² between the laws of `x` and `y`.
pub fn mmd2_unbiased(x: &SampleSet, y: &SampleSet, bandwidth: f64) -> Result<MmdEstimate> {
    let pooled = check_inputs(x, y, bandwidth)?;
    let gram = PooledGram::new(&pooled, bandwidth);
    let xi: Vec<usize> = (0..x.n()).collect();
    let yi: Vec<usize> = (x.n()..pooled.n()).collect();
    Ok(MmdEstimate {
        mmd2: gram.statistic(&xi, &yi),
        bandwidth,
        n_x: x.n(),
        n_y: y.n(),
        p_value: None,
    })
}

/// Median-heuristic bandwidth on the pooled rows.
pub fn pooled_bandwidth(x: &SampleSet, y: &SampleSet) -> Result<f64> {
    median_heuristic_bandwidth(&x.pooled(y)?)
}

pub fn mmd2_median(x: &SampleSet, y: &SampleSet) -> Result<MmdEstimate> {
    mmd2_unbiased(x, y, pooled_bandwidth(x, y)?)
}

/// Permutation test; `p = (#{perm stat >= observed} + 1) / (n_perm + 1)`.
pub fn mmd_permutation_test(
    x: &SampleSet,
    y: &SampleSet,
    bandwidth: f64,
    n_perm: usize,
    stream: &RngStream,
) -> Result<MmdEstimate> {
    if n_perm < 99 {
        return Err(Error::InvalidArgument(format!("n_perm must be >= 99, got {n_perm}")));
    }
    let pooled = check_inputs(x, y, bandwidth)?;
    let gram = PooledGram::new(&pooled, bandwidth);
    let nx = x.n();
    let mut idx: Vec<usize> = (0..pooled.n()).collect();
    let observed = gram.statistic(&idx[..nx], &idx[nx..]);
    let mut rng = stream.rng();
    let mut exceed = 0usize;
    for _ in 0..n_perm {
        idx.shuffle(&mut rng);
        if gram.statistic(&idx[..nx], &idx[nx..]) >= observed {
            exceed += 1;
        }
    }
    Ok(MmdEstimate {
        mmd2: observed,
        bandwidth,
        n_x: nx,
        n_y: y.n(),
        p_value: Some((exceed + 1) as f64 / (n_perm + 1) as f64),
    })
}

/// MMD² between GP draws with RBF kernels of two lengthscales on the grid `0..d`.
///
/// Returns the estimate and the larger of the two jitters used.
pub fn rbf_gp_mmd(
    d: usize,
    n: usize,
    lengthscale_a: f64,
    lengthscale_b: f64,
    stream: &RngStream,
) -> Result<(MmdEstimate, f64)> {
    if d < 2 || n < 2 {
        return Err(Error::InvalidArgument("baseline needs d >= 2 and n >= 2".into()));
    }
    let grid: Vec<Vec<f64>> = (0..d).map(|i| vec![i as f64]).collect();
    let a = gp_prior_sample(&rbf_kernel(&grid, lengthscale_a)?, n, &stream.derive("rbf_a"))?;
    let b = gp_prior_sample(&rbf_kernel(&grid, lengthscale_b)?, n, &stream.derive("rbf_b"))?;
    let est = mmd2_median(&a.samples, &b.samples)?;
    Ok((est, a.jitter_used.max(b.jitter_used)))
}

/// Reference curve: RBF GPs with lengthscales `√2` and `4√2`.
pub fn rbf_gp_baseline(d: usize, n: usize, stream: &RngStream) -> Result<(MmdEstimate, f64)> {
    let ls = std::f64::consts::SQRT_2;
    rbf_gp_mmd(d, n, ls, 4.0 * ls, stream)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{sample_mvn, Provenance, SymMatrix};

    fn set(rows: &[Vec<f64>]) -> SampleSet {
        SampleSet::from_rows(rows, Provenance::Other).unwrap()
    }

    #[test]
    fn hand_expansion() {
        // |a - b|^2 = 2 ln 2 with bandwidth 1 gives k(a, b) = 0.5
        let a = vec![0.0];
        let b = vec![(2.0 * 2f64.ln()).sqrt()];
        let x = set(&[a.clone(), b.clone()]);
        let est = mmd2_unbiased(&x, &x, 1.0).unwrap();
        assert!((est.mmd2 + 0.5).abs() < 1e-12, "{}", est.mmd2);
    }

    #[test]
    fn symmetric_exactly() {
        let x = sample_mvn(&[0.0; 3], &SymMatrix::identity(3), 40, &RngStream::new(0, 1)).unwrap();
        let y = sample_mvn(&[0.5; 3], &SymMatrix::identity(3), 30, &RngStream::new(0, 2)).unwrap();
        let a = mmd2_median(&x, &y).unwrap();
        let b = mmd2_median(&y, &x).unwrap();
        assert_eq!(a.mmd2, b.mmd2);
        assert_eq!(a.bandwidth, b.bandwidth);
    }

    #[test]
    fn matches_direct_double_sum() {
        let x = sample_mvn(&[0.0; 2], &SymMatrix::identity(2), 20, &RngStream::new(1, 1)).unwrap();
        let y = sample_mvn(&[1.0; 2], &SymMatrix::identity(2), 15, &RngStream::new(1, 2)).unwrap();
        let bw = 1.3;
        let k = |a: &[f64], b: &[f64]| {
            let d2: f64 = a.iter().zip(b).map(|(u, v)| (u - v) * (u - v)).sum();
            (-d2 / (2.0 * bw * bw)).exp()
        };
        let within = |s: &SampleSet| {
            let mut t = 0.0;
            for i in 0..s.n() {
                for j in 0..s.n() {
                    if i != j {
                        t += k(s.row(i), s.row(j));
                    }
                }
            }
            t / (s.n() * (s.n() - 1)) as f64
        };
        let mut cross = 0.0;
        for a in x.rows() {
            for b in y.rows() {
                cross += k(a, b);
            }
        }
        let expected = within(&x) + within(&y) - 2.0 * cross / (x.n() * y.n()) as f64;
        let got = mmd2_unbiased(&x, &y, bw).unwrap().mmd2;
        assert!((got - expected).abs() < 1e-12, "{got} vs {expected}");
    }

    #[test]
    fn unbiased_under_the_null() {
        let reps = 200;
        let base = RngStream::new(42, 0);
        let vals: Vec<f64> = (0..reps)
            .map(|r| {
                let s = base.child(r);
                let x = sample_mvn(&[0.0; 5], &SymMatrix::identity(5), 500, &s.derive("x")).unwrap();
                let y = sample_mvn(&[0.0; 5], &SymMatrix::identity(5), 500, &s.derive("y")).unwrap();
                mmd2_unbiased(&x, &y, 3.0).unwrap().mmd2
            })
            .collect();
        let n = reps as f64;
        let mean = vals.iter().sum::<f64>() / n;
        let sd = (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
        assert!(mean.abs() < 3.0 * sd / n.sqrt(), "mean {mean} se {}", sd / n.sqrt());
    }

    #[test]
    fn separated_supports() {
        let x = sample_mvn(&[0.0; 2], &SymMatrix::identity(2), 100, &RngStream::new(2, 1)).unwrap();
        let y = sample_mvn(&[100.0; 2], &SymMatrix::identity(2), 100, &RngStream::new(2, 2)).unwrap();
        let est = mmd2_unbiased(&x, &y, 1.0).unwrap();
        assert!(est.mmd2 > 0.0);
        let p = mmd_permutation_test(&x, &y, 1.0, 200, &RngStream::new(2, 3)).unwrap();
        assert_eq!(p.p_value, Some(1.0 / 201.0));
    }

    #[test]
    fn permutation_granularity_and_argument_checks() {
        let x = sample_mvn(&[0.0], &SymMatrix::identity(1), 20, &RngStream::new(3, 1)).unwrap();
        let y = sample_mvn(&[0.0], &SymMatrix::identity(1), 20, &RngStream::new(3, 2)).unwrap();
        let p = mmd_permutation_test(&x, &y, 1.0, 99, &RngStream::new(3, 3)).unwrap();
        let scaled = p.p_value.unwrap() * 100.0;
        assert!((scaled - scaled.round()).abs() < 1e-9);
        assert!(mmd_permutation_test(&x, &y, 1.0, 50, &RngStream::new(3, 3)).is_err());
        let z = sample_mvn(&[0.0; 2], &SymMatrix::identity(2), 20, &RngStream::new(3, 4)).unwrap();
        assert!(matches!(mmd2_unbiased(&x, &z, 1.0), Err(Error::DimensionMismatch(1, 2))));
    }

    #[test]
    fn permutation_test_is_calibrated() {
        let base = RngStream::new(7, 7);
        let mut rejections = 0;
        for r in 0..100 {
            let s = base.child(r);
            let x = sample_mvn(&[0.0; 3], &SymMatrix::identity(3), 50, &s.derive("x")).unwrap();
            let y = sample_mvn(&[0.0; 3], &SymMatrix::identity(3), 50, &s.derive("y")).unwrap();
            let bw = pooled_bandwidth(&x, &y).unwrap();
            let p = mmd_permutation_test(&x, &y, bw, 100, &s.derive("perm")).unwrap();
            if p.p_value.unwrap() <= 0.05 {
                rejections += 1;
            }
        }
        assert!(rejections <= 10, "{rejections} rejections in 100 null runs");
    }

    #[test]
    fn baseline_separates_lengthscales() {
        let base = RngStream::new(9, 0);
        let positive = (0..20)
            .filter(|&r| rbf_gp_baseline(50, 500, &base.child(r)).unwrap().0.mmd2 > 0.0)
            .count();
        assert!(positive >= 19);
        let (est, _) = rbf_gp_baseline(2, 10, &base).unwrap();
        assert!(est.mmd2.is_finite());
    }

    #[test]
    fn baseline_with_equal_lengthscales_is_centered() {
        let base = RngStream::new(10, 0);
        let vals: Vec<f64> = (0..40)
            .map(|r| rbf_gp_mmd(20, 100, 2.0, 2.0, &base.child(r)).unwrap().0.mmd2)
            .collect();
        let n = vals.len() as f64;
        let mean = vals.iter().sum::<f64>() / n;
        let sd = (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
        assert!(mean.abs() < 3.0 * sd / n.sqrt());
    }
}
