//! Zero-mean Gaussian-process prior sampling and exact posterior inference.

use nalgebra::{DMatrix, DVector};

use crate::linalg::{cholesky_psd, sample_mvn_with_factor, JitterPolicy, RngStream, SampleSet, SymMatrix};
use crate::{Error, Result};

#[derive(Clone, Debug)]
pub struct GpPriorSample {
    pub samples: SampleSet,
    pub jitter_used: f64,
}

/// `n` draws from `N(0, K)`.
pub fn gp_prior_sample(k: &SymMatrix, n: usize, stream: &RngStream) -> Result<GpPriorSample> {
    let factor = cholesky_psd(k, &JitterPolicy::default())?;
    let samples = sample_mvn_with_factor(&vec![0.0; k.dim()], &factor, n, stream)?;
    Ok(GpPriorSample { samples, jitter_used: factor.jitter_used })
}

/// Predictive mean and covariance at the test inputs.
#[derive(Clone, Debug)]
pub struct PosteriorResult {
    pub mean: Vec<f64>,
    pub cov: SymMatrix,
    pub sigma_eps2: f64,
    pub jitter_used: f64,
    /// Number of negative predictive variances clipped to zero.
    pub clipped: usize,
}

impl PosteriorResult {
    pub fn variances(&self) -> Vec<f64> {
        self.cov.diag()
    }
}

/// Posterior `f̄* = K_sx (K_xx + σ² I)⁻¹ y`, `cov = K_ss - K_sx (K_xx + σ² I)⁻¹ K_xs`.
///
/// Solves go through a jittered Cholesky factor; no matrix is inverted.
pub fn gp_posterior(
    k_xx: &SymMatrix,
    k_sx: &DMatrix<f64>,
    k_ss: &SymMatrix,
    y: &[f64],
    sigma_eps2: f64,
) -> Result<PosteriorResult> {
    let n = k_xx.dim();
    let s = k_ss.dim();
    if y.len() != n {
        return Err(Error::DimensionMismatch(y.len(), n));
    }
    if k_sx.nrows() != s || k_sx.ncols() != n {
        return Err(Error::DimensionMismatch(k_sx.nrows() * k_sx.ncols(), s * n));
    }
    if !(sigma_eps2 >= 0.0) {
        return Err(Error::InvalidArgument(format!("sigma_eps2 = {sigma_eps2}")));
    }
    let mut a = k_xx.as_matrix().clone();
    for i in 0..n {
        a[(i, i)] += sigma_eps2;
    }
    let factor = cholesky_psd(&SymMatrix::new(a)?, &JitterPolicy::default())?;
    let alpha = factor.solve_vec(&DVector::from_column_slice(y));
    let mean = (k_sx * alpha).iter().copied().collect();
    let v = factor.solve_lower(&k_sx.transpose());
    let reduction = v.transpose() * &v;
    let mut clipped = 0;
    let mut m = k_ss.as_matrix() - reduction;
    for i in 0..s {
        for k in 0..i {
            let avg = 0.5 * (m[(i, k)] + m[(k, i)]);
            m[(i, k)] = avg;
            m[(k, i)] = avg;
        }
        if m[(i, i)] < 0.0 {
            clipped += 1;
            m[(i, i)] = 0.0;
        }
    }
    Ok(PosteriorResult {
        mean,
        cov: SymMatrix::new(m)?,
        sigma_eps2,
        jitter_used: factor.jitter_used,
        clipped,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::rbf_kernel;
    use proptest::prelude::*;

    fn grid(pts: &[f64]) -> Vec<Vec<f64>> {
        pts.iter().map(|&p| vec![p]).collect()
    }

    fn blocks(train: &[f64], test: &[f64], ls: f64) -> (SymMatrix, DMatrix<f64>, SymMatrix) {
        let all: Vec<f64> = train.iter().chain(test).copied().collect();
        let k = rbf_kernel(&grid(&all), ls).unwrap();
        let n = train.len();
        let s = test.len();
        let kxx = SymMatrix::from_lower_fn(n, |i, j| k.get(i, j));
        let kss = SymMatrix::from_lower_fn(s, |i, j| k.get(n + i, n + j));
        let ksx = DMatrix::from_fn(s, n, |i, j| k.get(n + i, j));
        (kxx, ksx, kss)
    }

    #[test]
    fn identity_prior_rows() {
        let p = gp_prior_sample(&SymMatrix::identity(4), 500, &RngStream::new(0, 0)).unwrap();
        assert_eq!((p.samples.n(), p.samples.dim()), (500, 4));
        assert_eq!(p.jitter_used, 0.0);
    }

    #[test]
    fn agrees_with_explicit_inverse() {
        let (kxx, ksx, kss) = blocks(&[0.0, 0.8, 1.5, 3.1, 4.0], &[0.4, 2.2, 5.0], 1.1);
        let y = [0.2, -0.4, 1.0, 0.3, -1.2];
        let noise = 0.05;
        let post = gp_posterior(&kxx, &ksx, &kss, &y, noise).unwrap();
        let inv = (kxx.as_matrix() + DMatrix::identity(5, 5) * noise).try_inverse().unwrap();
        let mean = &ksx * &inv * DVector::from_column_slice(&y);
        let cov = kss.as_matrix() - &ksx * &inv * ksx.transpose();
        for i in 0..3 {
            assert!((post.mean[i] - mean[i]).abs() < 1e-8);
            for j in 0..3 {
                assert!((post.cov.get(i, j) - cov[(i, j)]).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn noiseless_interpolation() {
        let train = [0.0, 1.0, 2.5, 4.0];
        let (kxx, ksx, kss) = blocks(&train, &[2.5], 1.0);
        let y = [0.3, -1.0, 2.0, 0.5];
        let post = gp_posterior(&kxx, &ksx, &kss, &y, 0.0).unwrap();
        assert!((post.mean[0] - 2.0).abs() < 1e-6);
        assert!(post.variances()[0].abs() < 1e-6);
    }

    #[test]
    fn independent_test_point_recovers_prior() {
        let kxx = SymMatrix::identity(3);
        let kss = SymMatrix::from_lower_fn(2, |i, k| if i == k { 2.0 } else { 0.5 });
        let ksx = DMatrix::zeros(2, 3);
        let post = gp_posterior(&kxx, &ksx, &kss, &[1.0, 2.0, 3.0], 0.1).unwrap();
        assert_eq!(post.mean, vec![0.0, 0.0]);
        assert_eq!(post.cov, kss);
    }

    #[test]
    fn noise_increases_variance_at_training_inputs() {
        let train = [0.0, 0.7, 1.9, 3.0];
        let kxx = rbf_kernel(&grid(&train), 1.0).unwrap();
        let ksx = kxx.as_matrix().clone();
        let y = [1.0, 0.0, -1.0, 0.5];
        let a = gp_posterior(&kxx, &ksx, &kxx, &y, 0.0).unwrap();
        let b = gp_posterior(&kxx, &ksx, &kxx, &y, 0.2).unwrap();
        for (va, vb) in a.variances().iter().zip(b.variances()) {
            assert!(vb > *va);
        }
    }

    #[test]
    fn dimension_checks() {
        let kxx = SymMatrix::identity(2);
        let ksx = DMatrix::zeros(1, 2);
        let kss = SymMatrix::identity(1);
        assert!(gp_posterior(&kxx, &ksx, &kss, &[1.0], 0.0).is_err());
        assert!(gp_posterior(&kxx, &DMatrix::zeros(1, 3), &kss, &[1.0, 2.0], 0.0).is_err());
    }

    proptest! {
        #[test]
        fn posterior_shrinks_variance_and_is_linear_in_targets(
            train in proptest::collection::vec(-5.0f64..5.0, 2..7),
            test in proptest::collection::vec(-5.0f64..5.0, 1..4),
            y in proptest::collection::vec(-3.0f64..3.0, 7),
            alpha in -4.0f64..4.0,
            noise in 1e-3f64..1.0,
        ) {
            let (kxx, ksx, kss) = blocks(&train, &test, 1.3);
            let y = &y[..train.len()];
            let post = gp_posterior(&kxx, &ksx, &kss, y, noise).unwrap();
            for (i, v) in post.variances().iter().enumerate() {
                prop_assert!(*v <= kss.get(i, i) + 1e-8);
            }
            let ys: Vec<f64> = y.iter().map(|v| alpha * v).collect();
            let scaled = gp_posterior(&kxx, &ksx, &kss, &ys, noise).unwrap();
            for (a, b) in post.mean.iter().zip(&scaled.mean) {
                prop_assert!((b - alpha * a).abs() <= 1e-10 * (1.0 + a.abs() * alpha.abs()));
            }
        }
    }
}
