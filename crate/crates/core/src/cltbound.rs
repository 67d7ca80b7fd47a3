//! Lyapunov-type CLT error bound for the layer-1 convolutional sum, its iid
//! specialization, and a random half-space discrepancy surrogate.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::linalg::{cholesky_psd, JitterPolicy, RngStream, SampleSet, SymMatrix};
use crate::{Error, Result};

/// Largest accepted condition number of `Σ²`.
pub const MAX_CONDITION: f64 = 1e12;

/// Nodes and weights of the `n`-point Gauss–Hermite rule for weight `exp(-x²)`.
pub fn gauss_hermite(n: usize) -> (Vec<f64>, Vec<f64>) {
    let pim4 = std::f64::consts::PI.powf(-0.25);
    let m = n.div_ceil(2);
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    let mut z = 0.0f64;
    for i in 0..m {
        z = match i {
            0 => (2.0 * n as f64 + 1.0).sqrt() - 1.85575 * (2.0 * n as f64 + 1.0).powf(-0.16667),
            1 => z - 1.14 * (n as f64).powf(0.426) / z,
            2 => 1.86 * z - 0.86 * x[0],
            3 => 1.91 * z - 0.91 * x[1],
            _ => 2.0 * z - x[i - 2],
        };
        let mut pp = 0.0;
        for _ in 0..100 {
            let mut p1 = pim4;
            let mut p2 = 0.0;
            for j in 1..=n {
                let p3 = p2;
                p2 = p1;
                p1 = z * (2.0 / j as f64).sqrt() * p2 - ((j - 1) as f64 / j as f64).sqrt() * p3;
            }
            pp = (2.0 * n as f64).sqrt() * p2;
            let z1 = z;
            z = z1 - p1 / pp;
            if (z - z1).abs() <= 1e-15 * z.abs().max(1.0) {
                break;
            }
        }
        x[i] = z;
        x[n - 1 - i] = -z;
        w[i] = 2.0 / (pp * pp);
        w[n - 1 - i] = w[i];
    }
    (x, w)
}

/// `E|g|³` for standard normal `g`, by 64-node Gauss–Hermite quadrature.
pub fn gaussian_abs_third_moment() -> f64 {
    let (x, w) = gauss_hermite(64);
    let s: f64 = x.iter().zip(&w).map(|(xi, wi)| wi * (std::f64::consts::SQRT_2 * xi).abs().powi(3)).sum();
    s / std::f64::consts::PI.sqrt()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BoundMode {
    Layer1Conditional,
    Iid,
}

impl BoundMode {
    pub fn name(self) -> &'static str {
        match self {
            BoundMode::Layer1Conditional => "layer1_conditional",
            BoundMode::Iid => "iid",
        }
    }
}

/// Right-hand side of the bound, up to a universal constant set to 1.
#[derive(Clone, Debug, PartialEq)]
pub struct CltBoundReport {
    pub d_sub: usize,
    pub m: usize,
    pub sum_third_moments: f64,
    pub d_quarter_factor: f64,
    pub bound_value: f64,
    pub mode: BoundMode,
}

impl CltBoundReport {
    fn new(d_sub: usize, m: usize, sum_third_moments: f64, mode: BoundMode) -> Self {
        let d_quarter_factor = (d_sub as f64).powf(0.25);
        Self {
            d_sub,
            m,
            sum_third_moments,
            d_quarter_factor,
            bound_value: d_quarter_factor * sum_third_moments,
            mode,
        }
    }
}

/// Bound for the last `d_sub` causal layer-1 positions, `X_j = w_j v_j`.
pub fn layer1_bound(x: &[f64], m: usize, sigma_w2: f64, d_sub: usize) -> Result<CltBoundReport> {
    if m == 0 || d_sub == 0 {
        return Err(Error::InvalidArgument("M and d_sub must be positive".into()));
    }
    if !(sigma_w2 > 0.0) {
        return Err(Error::InvalidArgument(format!("sigma_w2 must be positive, got {sigma_w2}")));
    }
    if d_sub > x.len() {
        return Err(Error::InvalidArgument(format!("d_sub {d_sub} exceeds series length {}", x.len())));
    }
    if d_sub > m {
        return Err(Error::SingularCovariance(format!("rank at most M = {m} < d_sub = {d_sub}")));
    }
    let d = x.len();
    let first = d - d_sub;
    let vs: Vec<DVector<f64>> = (1..=m)
        .map(|j| DVector::from_fn(d_sub, |r, _| (first + r).checked_sub(j).map_or(0.0, |i| x[i])))
        .collect();
    let mut s2 = DMatrix::zeros(d_sub, d_sub);
    for v in &vs {
        s2 += v * v.transpose() * sigma_w2;
    }
    let eig = SymmetricEigen::new(s2.clone());
    let max = eig.eigenvalues.max();
    let min = eig.eigenvalues.min();
    if !(min > 0.0) || max / min > MAX_CONDITION {
        return Err(Error::SingularCovariance(format!("eigenvalues in [{min:e}, {max:e}]")));
    }
    let factor = cholesky_psd(&SymMatrix::new(s2)?, &JitterPolicy::default())?;
    let g3 = gaussian_abs_third_moment();
    let sigma3 = sigma_w2.powf(1.5);
    let sum: f64 = vs
        .iter()
        .map(|v| {
            let q = v.dot(&factor.solve_vec(v)).max(0.0);
            sigma3 * g3 * q.powf(1.5)
        })
        .sum();
    Ok(CltBoundReport::new(d_sub, m, sum, BoundMode::Layer1Conditional))
}

/// `d^{1/4} E|X₁|³ / √M` for standardized iid summands.
pub fn iid_bound(m: usize, d: usize, third_moment: f64) -> Result<CltBoundReport> {
    if m == 0 || d == 0 {
        return Err(Error::InvalidArgument("M and d must be positive".into()));
    }
    if !(third_moment > 0.0) {
        return Err(Error::InvalidArgument(format!("third moment must be positive, got {third_moment}")));
    }
    Ok(CltBoundReport::new(d, m, third_moment / (m as f64).sqrt(), BoundMode::Iid))
}

// Exact two-sample Kolmogorov–Smirnov statistic; ties are stepped over together.
fn ks_statistic(mut a: Vec<f64>, mut b: Vec<f64>) -> f64 {
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut best = 0.0f64;
    while i < a.len() || j < b.len() {
        let t = match (a.get(i), b.get(j)) {
            (Some(&u), Some(&v)) => u.min(v),
            (Some(&u), None) => u,
            (None, Some(&v)) => v,
            (None, None) => unreachable!(),
        };
        while i < a.len() && a[i] <= t {
            i += 1;
        }
        while j < b.len() && b[j] <= t {
            j += 1;
        }
        best = best.max((i as f64 / na - j as f64 / nb).abs());
    }
    best
}

/// Max over random unit directions `u` and thresholds `t` of
/// `|P̂(u·X ≤ t) − P̂(u·Y ≤ t)|`.
pub fn empirical_convex_discrepancy(
    x: &SampleSet,
    y: &SampleSet,
    n_halfspaces: usize,
    stream: &RngStream,
) -> Result<f64> {
    if x.dim() != y.dim() {
        return Err(Error::DimensionMismatch(x.dim(), y.dim()));
    }
    if n_halfspaces < 100 {
        return Err(Error::InvalidArgument(format!("n_halfspaces must be >= 100, got {n_halfspaces}")));
    }
    if x.n() == 0 || y.n() == 0 {
        return Err(Error::InvalidArgument("empty sample set".into()));
    }
    let dim = x.dim();
    let project = |s: &SampleSet, u: &[f64]| -> Vec<f64> {
        s.rows().map(|r| r.iter().zip(u).map(|(a, b)| a * b).sum()).collect()
    };
    let best = (0..n_halfspaces as u64)
        .into_par_iter()
        .map(|h| {
            let mut rng = stream.child(h).rng();
            let mut u: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
            let norm = u.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm > 0.0 {
                u.iter_mut().for_each(|v| *v /= norm);
            } else {
                u[0] = 1.0;
            }
            ks_statistic(project(x, &u), project(y, &u))
        })
        .reduce(|| 0.0, f64::max);
    Ok(best)
}
