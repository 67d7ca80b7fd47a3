//! Covariance kernels of random convolutional networks.
//!
//! Conditional on the input `x`, the first-layer pre-activations are exactly
//! Gaussian with covariance
//!
//! ```text
//! K¹_{ik} = σ_w² Σ_{j=1..M} x_{i-j} x_{k-j}
//! ```
//!
//! Deeper layers follow `K^l_{ik} = σ_w² Σ_j E[z^{l-1}_{i-j} z^{l-1}_{k-j}]`.
//! For ReLU the expectation under a bivariate normal has the arc-cosine
//! closed form `(1/2π) √(K_aa K_bb) (sin θ + (π - θ) cos θ)`; for the identity
//! it is the previous kernel itself; for tanh it is estimated by Monte Carlo.
//!
//! Position indexing mirrors [`crate::nets`]: under causal padding every
//! layer keeps all `d` positions and out-of-range taps contribute zero.

use std::f64::consts::PI;

use nalgebra::DMatrix;

use crate::linalg::{RngStream, SymMatrix};
use crate::nets::{forward, Activation, NetworkArch, Padding, Readout, WeightSample};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum KernelMethod {
    Analytic,
    Mc,
}

impl KernelMethod {
    pub fn name(self) -> &'static str {
        match self {
            KernelMethod::Analytic => "analytic",
            KernelMethod::Mc => "mc",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "analytic" => Some(KernelMethod::Analytic),
            "mc" => Some(KernelMethod::Mc),
            _ => None,
        }
    }
}

/// Covariance of one layer's pre-activations over output positions.
#[derive(Clone, Debug, PartialEq)]
pub struct KernelMatrix {
    pub k: SymMatrix,
    pub layer: usize,
    pub method: KernelMethod,
}

impl KernelMatrix {
    pub fn dim(&self) -> usize {
        self.k.dim()
    }

    /// Angle between positions `i` and `k`; `None` when either variance is zero.
    pub fn angle(&self, i: usize, k: usize) -> Option<f64> {
        let denom = (self.k.get(i, i) * self.k.get(k, k)).sqrt();
        (denom > 0.0).then(|| (self.k.get(i, k) / denom).clamp(-1.0, 1.0).acos())
    }

    /// Largest violation of `|K_ik| <= sqrt(K_ii K_kk)`.
    pub fn cauchy_schwarz_excess(&self) -> f64 {
        let n = self.dim();
        let mut worst = f64::NEG_INFINITY;
        for i in 0..n {
            for k in 0..n {
                let e = self.k.get(i, k).abs() - (self.k.get(i, i) * self.k.get(k, k)).sqrt();
                worst = worst.max(e);
            }
        }
        worst
    }
}

/// First-layer covariance between two inputs of equal length.
#[derive(Clone, Debug, PartialEq)]
pub struct CrossKernel {
    pub pp: SymMatrix,
    pub qq: SymMatrix,
    /// `pq[(i, k)] = E[a_i(x) a_k(x')]`.
    pub pq: DMatrix<f64>,
}

/// `sin θ + (π - θ) cos θ`.
#[inline]
pub fn arc_cosine_g(theta: f64) -> f64 {
    theta.sin() + (PI - theta) * theta.cos()
}

/// `E[relu(u) relu(v)]` for centered jointly normal `(u, v)`.
#[inline]
pub fn relu_expectation(kuu: f64, kvv: f64, kuv: f64) -> f64 {
    let s = (kuu * kvv).sqrt();
    if s > 0.0 {
        let theta = (kuv / s).clamp(-1.0, 1.0).acos();
        s * arc_cosine_g(theta) / (2.0 * PI)
    } else {
        0.0
    }
}

fn layer_one_matrix(
    x: &[f64],
    y: &[f64],
    width: usize,
    sigma_w2: f64,
    padding: Padding,
) -> Result<DMatrix<f64>> {
    let n = padding.out_len(x.len(), width)?;
    let mut k = DMatrix::zeros(n, n);
    for i in 0..n {
        for q in 0..n {
            let mut s = 0.0;
            for j in 1..=width {
                if let (Some(a), Some(b)) = (padding.source(i, j, width), padding.source(q, j, width)) {
                    s += x[a] * y[b];
                }
            }
            k[(i, q)] = sigma_w2 * s;
        }
    }
    Ok(k)
}

/// Exact first-layer kernel conditional on `x`.
pub fn k1_same_input(
    x: &[f64],
    width: usize,
    sigma_w2: f64,
    padding: Padding,
) -> Result<KernelMatrix> {
    let m = layer_one_matrix(x, x, width, sigma_w2, padding)?;
    Ok(KernelMatrix {
        k: SymMatrix::from_lower_fn(m.nrows(), |i, k| m[(i, k)]),
        layer: 1,
        method: KernelMethod::Analytic,
    })
}

pub fn k1_cross(
    x: &[f64],
    y: &[f64],
    width: usize,
    sigma_w2: f64,
    padding: Padding,
) -> Result<CrossKernel> {
    if x.len() != y.len() {
        return Err(Error::LengthMismatch(x.len(), y.len()));
    }
    Ok(CrossKernel {
        pp: k1_same_input(x, width, sigma_w2, padding)?.k,
        qq: k1_same_input(y, width, sigma_w2, padding)?.k,
        pq: layer_one_matrix(x, y, width, sigma_w2, padding)?,
    })
}

/// Sums a transformed previous-layer matrix over the receptive field.
fn receptive_sum(t: &DMatrix<f64>, width: usize, sigma_w2: f64, padding: Padding) -> Result<SymMatrix> {
    let n = padding.out_len(t.nrows(), width)?;
    Ok(SymMatrix::from_lower_fn(n, |i, k| {
        let mut s = 0.0;
        for j in 1..=width {
            if let (Some(a), Some(b)) = (padding.source(i, j, width), padding.source(k, j, width)) {
                s += t[(a, b)];
            }
        }
        sigma_w2 * s
    }))
}

fn check_referenced_variances(prev: &KernelMatrix, width: usize, padding: Padding) -> Result<()> {
    if padding == Padding::Valid {
        let n = padding.out_len(prev.dim(), width)?;
        for i in 0..n {
            for j in 1..=width {
                let a = padding.source(i, j, width).expect("valid taps are in range");
                if prev.k.get(a, a) <= 0.0 {
                    return Err(Error::ZeroVariancePosition(a));
                }
            }
        }
    }
    Ok(())
}

/// ReLU recursion step `K^{l-1} -> K^l`.
pub fn relu_next_kernel(
    prev: &KernelMatrix,
    width: usize,
    sigma_w2: f64,
    padding: Padding,
) -> Result<KernelMatrix> {
    check_referenced_variances(prev, width, padding)?;
    let n = prev.dim();
    let k = &prev.k;
    let mut t = DMatrix::zeros(n, n);
    for a in 0..n {
        for b in 0..=a {
            let v = relu_expectation(k.get(a, a), k.get(b, b), k.get(a, b));
            t[(a, b)] = v;
            t[(b, a)] = v;
        }
    }
    Ok(KernelMatrix {
        k: receptive_sum(&t, width, sigma_w2, padding)?,
        layer: prev.layer + 1,
        method: prev.method,
    })
}

/// Identity-activation recursion step.
pub fn linear_next_kernel(
    prev: &KernelMatrix,
    width: usize,
    sigma_w2: f64,
    padding: Padding,
) -> Result<KernelMatrix> {
    check_referenced_variances(prev, width, padding)?;
    Ok(KernelMatrix {
        k: receptive_sum(prev.k.as_matrix(), width, sigma_w2, padding)?,
        layer: prev.layer + 1,
        method: prev.method,
    })
}

/// Kernel of `a^L` by the closed-form recursion; tanh has none.
pub fn analytic_kernel(x: &[f64], arch: &NetworkArch) -> Result<KernelMatrix> {
    let step = match arch.activation {
        Activation::Relu => relu_next_kernel,
        Activation::Linear => linear_next_kernel,
        Activation::Tanh => {
            return Err(Error::InvalidArgument("no closed-form kernel for tanh".into()))
        }
    };
    let mut k = k1_same_input(x, arch.filter_width, arch.sigma_w2, arch.padding)?;
    for _ in 1..arch.depth {
        k = step(&k, arch.filter_width, arch.sigma_w2, arch.padding)?;
    }
    Ok(k)
}

/// Monte Carlo kernel estimate with per-entry standard errors.
#[derive(Clone, Debug)]
pub struct McKernel {
    pub kernel: KernelMatrix,
    pub std_err: DMatrix<f64>,
}

fn mc_moments(
    x: &[f64],
    arch: &NetworkArch,
    layer: usize,
    n_mc: usize,
    stream: &RngStream,
) -> Result<Vec<Vec<f64>>> {
    let lower = NetworkArch { depth: layer - 1, readout: Readout::LastPosition, ..*arch };
    let mut rng = stream.rng();
    let mut out = Vec::with_capacity(n_mc);
    for _ in 0..n_mc {
        let w = WeightSample::draw(&lower, x.len(), &mut rng)?;
        let fp = forward(x, &lower, &w)?;
        out.push(fp.post.last().expect("layer >= 2").clone());
    }
    Ok(out)
}

/// Estimates `K^layer` by sampling weights of layers `1..layer-1`.
///
/// Layer 1 needs no expectation and returns the exact kernel.
pub fn mc_kernel(
    x: &[f64],
    arch: &NetworkArch,
    layer: usize,
    n_mc: usize,
    stream: &RngStream,
) -> Result<KernelMatrix> {
    if layer == 0 || n_mc < 2 {
        return Err(Error::InvalidArgument("mc kernel needs layer >= 1 and n_mc >= 2".into()));
    }
    if layer == 1 {
        let mut k = k1_same_input(x, arch.filter_width, arch.sigma_w2, arch.padding)?;
        k.method = KernelMethod::Mc;
        return Ok(k);
    }
    let zs = mc_moments(x, arch, layer, n_mc, stream)?;
    let n = zs[0].len();
    let mut s = DMatrix::zeros(n, n);
    for z in &zs {
        for a in 0..n {
            if z[a] == 0.0 {
                continue;
            }
            for b in 0..=a {
                s[(a, b)] += z[a] * z[b];
            }
        }
    }
    for a in 0..n {
        for b in 0..=a {
            s[(a, b)] /= n_mc as f64;
            s[(b, a)] = s[(a, b)];
        }
    }
    Ok(KernelMatrix {
        k: receptive_sum(&s, arch.filter_width, arch.sigma_w2, arch.padding)?,
        layer,
        method: KernelMethod::Mc,
    })
}

/// [`mc_kernel`] that also returns the standard error of every entry.
pub fn mc_kernel_with_se(
    x: &[f64],
    arch: &NetworkArch,
    layer: usize,
    n_mc: usize,
    stream: &RngStream,
) -> Result<McKernel> {
    if layer < 2 || n_mc < 2 {
        return Err(Error::InvalidArgument("standard errors need layer >= 2 and n_mc >= 2".into()));
    }
    let zs = mc_moments(x, arch, layer, n_mc, stream)?;
    let n_prev = zs[0].len();
    let (width, padding) = (arch.filter_width, arch.padding);
    let n = padding.out_len(n_prev, width)?;
    let mut sum = DMatrix::<f64>::zeros(n, n);
    let mut sum2 = DMatrix::<f64>::zeros(n, n);
    for z in &zs {
        for i in 0..n {
            for k in 0..=i {
                let mut q = 0.0;
                for j in 1..=width {
                    if let (Some(a), Some(b)) = (padding.source(i, j, width), padding.source(k, j, width)) {
                        q += z[a] * z[b];
                    }
                }
                q *= arch.sigma_w2;
                sum[(i, k)] += q;
                sum2[(i, k)] += q * q;
            }
        }
    }
    let nf = n_mc as f64;
    let mut se = DMatrix::zeros(n, n);
    for i in 0..n {
        for k in 0..=i {
            let mean = sum[(i, k)] / nf;
            let var = ((sum2[(i, k)] / nf - mean * mean) * nf / (nf - 1.0)).max(0.0);
            se[(i, k)] = (var / nf).sqrt();
            se[(k, i)] = se[(i, k)];
        }
    }
    Ok(McKernel {
        kernel: KernelMatrix {
            k: SymMatrix::from_lower_fn(n, |i, k| sum[(i, k)] / nf),
            layer,
            method: KernelMethod::Mc,
        },
        std_err: se,
    })
}

/// [`mc_kernel`] for a tanh network.
pub fn mc_tanh_kernel(
    x: &[f64],
    arch: &NetworkArch,
    layer: usize,
    n_mc: usize,
    stream: &RngStream,
) -> Result<KernelMatrix> {
    let tanh = NetworkArch { activation: Activation::Tanh, ..*arch };
    mc_kernel(x, &tanh, layer, n_mc, stream)
}

/// Kernel of `a^L` by the requested method.
pub fn prior_kernel(
    x: &[f64],
    arch: &NetworkArch,
    method: KernelMethod,
    n_mc: usize,
    stream: &RngStream,
) -> Result<KernelMatrix> {
    match method {
        KernelMethod::Analytic => analytic_kernel(x, arch),
        KernelMethod::Mc => mc_kernel(x, arch, arch.depth, n_mc, stream),
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FnnKernelParams {
    pub sigma_b2: f64,
    pub nu_w2: f64,
    pub depth: usize,
}

impl FnnKernelParams {
    pub fn new(nu_w2: f64, depth: usize) -> Self {
        Self { sigma_b2: 0.0, nu_w2, depth }
    }
}

/// One level of the fully-connected ReLU recursion.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FnnLevel {
    pub value: f64,
    pub diag: f64,
    pub correlation: f64,
}

/// Fully-connected ReLU kernel between two unit-norm inputs at angle `theta`.
///
/// Each level sees unit variances: the value is `σ_b² + ν_w²/(2π) g(θ)` and
/// the next angle comes from the normalized correlation.
pub fn fnn_relu_kernel(theta: f64, params: &FnnKernelParams) -> Vec<FnnLevel> {
    let mut theta = theta;
    let diag = params.sigma_b2 + params.nu_w2 / 2.0;
    (0..params.depth)
        .map(|_| {
            let value = params.sigma_b2 + params.nu_w2 / (2.0 * PI) * arc_cosine_g(theta);
            let correlation = if diag > 0.0 { (value / diag).clamp(-1.0, 1.0) } else { 0.0 };
            theta = correlation.acos();
            FnnLevel { value, diag, correlation }
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AngularModel {
    Conv,
    Fnn,
}

impl AngularModel {
    pub fn name(self) -> &'static str {
        match self {
            AngularModel::Conv => "conv",
            AngularModel::Fnn => "fnn",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AngularPoint {
    pub model: AngularModel,
    pub depth: usize,
    pub theta1: f64,
    pub theta2: f64,
    pub value: f64,
}

/// Angular structure of the convolutional ReLU kernel.
///
/// The first filter tap sees unit-variance inputs at angle `theta1`, the
/// remaining `width - 1` taps at `theta2`. Level 1 averages the arc-cosine
/// transforms of those angles; deeper levels apply the same averaging to
/// the angle implied by the previous level, with unit-variance
/// renormalization as in [`fnn_relu_kernel`]. The fully-connected curve
/// uses `ν_w² = σ_w² M`, so the two models coincide when `theta1 == theta2`.
pub fn angular_kernel_curve(
    theta1_grid: &[f64],
    theta2: f64,
    depth: usize,
    width: usize,
    sigma_w2: f64,
) -> Result<Vec<AngularPoint>> {
    if width < 2 {
        return Err(Error::InvalidArgument("angular curve needs filter width >= 2".into()));
    }
    let in_range = |t: f64| (0.0..=PI).contains(&t);
    if !in_range(theta2) || !theta1_grid.iter().all(|&t| in_range(t)) {
        return Err(Error::InvalidArgument("angles must lie in [0, pi]".into()));
    }
    let m = width as f64;
    let diag = sigma_w2 * m / 2.0;
    let fnn = FnnKernelParams::new(sigma_w2 * m, depth);
    let mut out = Vec::with_capacity(2 * depth * theta1_grid.len());
    for &t1 in theta1_grid {
        let mut value = sigma_w2 / (2.0 * PI) * (arc_cosine_g(t1) + (m - 1.0) * arc_cosine_g(theta2));
        for level in 1..=depth {
            if level > 1 {
                let rho = if diag > 0.0 { (value / diag).clamp(-1.0, 1.0) } else { 0.0 };
                value = sigma_w2 * m / (2.0 * PI) * arc_cosine_g(rho.acos());
            }
            out.push(AngularPoint { model: AngularModel::Conv, depth: level, theta1: t1, theta2, value });
        }
        for (i, lvl) in fnn_relu_kernel(t1, &fnn).iter().enumerate() {
            out.push(AngularPoint {
                model: AngularModel::Fnn,
                depth: i + 1,
                theta1: t1,
                theta2,
                value: lvl.value,
            });
        }
    }
    Ok(out)
}

/// Max minus min of the curve values for one model and depth.
pub fn angular_spread(points: &[AngularPoint], model: AngularModel, depth: usize) -> f64 {
    let vals = points.iter().filter(|p| p.model == model && p.depth == depth).map(|p| p.value);
    let (lo, hi) = vals.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    hi - lo
}

/// `exp(-|p_i - p_k|² / (2 ℓ²))`.
pub fn rbf_kernel(points: &[Vec<f64>], lengthscale: f64) -> Result<SymMatrix> {
    if !(lengthscale > 0.0) {
        return Err(Error::InvalidArgument(format!("lengthscale must be positive, got {lengthscale}")));
    }
    let c = 1.0 / (2.0 * lengthscale * lengthscale);
    Ok(SymMatrix::from_lower_fn(points.len(), |i, k| {
        let d2: f64 = points[i].iter().zip(&points[k]).map(|(a, b)| (a - b) * (a - b)).sum();
        (-d2 * c).exp()
    }))
}

/// `E[z_i(x) z_i(x')]` for every first-layer position, given the cross kernel.
pub fn hidden_cross_moments(cross: &CrossKernel, activation: Activation) -> Result<Vec<f64>> {
    let n = cross.pp.dim();
    (0..n)
        .map(|i| {
            let (kpp, kqq, kpq) = (cross.pp.get(i, i), cross.qq.get(i, i), cross.pq[(i, i)]);
            match activation {
                Activation::Relu => Ok(relu_expectation(kpp, kqq, kpq)),
                Activation::Linear => Ok(kpq),
                Activation::Tanh => {
                    Err(Error::InvalidArgument("no closed-form readout kernel for tanh".into()))
                }
            }
        })
        .collect()
}

/// Kernel of a one-hidden-layer network with a linear readout:
/// `(σ_v² / N₁) Σ_i E[z_i(x) z_i(x')]`.
pub fn readout_kernel(hidden_moments: &[f64], sigma_v2: f64) -> f64 {
    if hidden_moments.is_empty() {
        return 0.0;
    }
    sigma_v2 / hidden_moments.len() as f64 * hidden_moments.iter().sum::<f64>()
}

/// Readout kernel between two inputs of a depth-1 architecture.
pub fn readout_kernel_pair(x: &[f64], y: &[f64], arch: &NetworkArch) -> Result<f64> {
    let sigma_v2 = match arch.readout {
        Readout::Linear { sigma_v2 } => sigma_v2,
        Readout::LastPosition => {
            return Err(Error::InvalidArgument("readout kernel needs a linear readout".into()))
        }
    };
    if arch.depth != 1 {
        return Err(Error::InvalidArgument("readout kernel is defined for one hidden layer".into()));
    }
    let cross = k1_cross(x, y, arch.filter_width, arch.sigma_w2, arch.padding)?;
    Ok(readout_kernel(&hidden_cross_moments(&cross, arch.activation)?, sigma_v2))
}

/// Gram matrix of [`readout_kernel_pair`] between two lists of inputs.
pub fn readout_gram(xs: &[Vec<f64>], ys: &[Vec<f64>], arch: &NetworkArch) -> Result<DMatrix<f64>> {
    let mut g = DMatrix::zeros(xs.len(), ys.len());
    for (i, x) in xs.iter().enumerate() {
        for (k, y) in ys.iter().enumerate() {
            g[(i, k)] = readout_kernel_pair(x, y, arch)?;
        }
    }
    Ok(g)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::inputs::gen_iid_gaussian;
    use proptest::prelude::*;

    #[test]
    fn k1_valid_hand_value() {
        let k = k1_same_input(&[1.0, 2.0, 3.0], 2, 1.0, Padding::Valid).unwrap();
        assert_eq!(k.dim(), 1);
        assert_eq!(k.k.get(0, 0), 5.0);
    }

    #[test]
    fn k1_zero_input() {
        let k = k1_same_input(&[0.0; 7], 3, 1.0, Padding::CausalSame).unwrap();
        assert!(k.k.as_matrix().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn k1_cross_reduces_and_vanishes() {
        let x = gen_iid_gaussian(9, &RngStream::new(0, 3)).values;
        let c = k1_cross(&x, &x, 3, 1.5, Padding::CausalSame).unwrap();
        let same = k1_same_input(&x, 3, 1.5, Padding::CausalSame).unwrap();
        assert_eq!(&c.pq, same.k.as_matrix());
        // width 1: the cross block is the outer product of the shifted inputs
        let a: Vec<f64> = (0..10).map(|i| 1.0 + i as f64).collect();
        let b: Vec<f64> = (0..10).map(|i| if i >= 5 { 2.0 } else { -0.5 }).collect();
        let c = k1_cross(&a, &b, 1, 1.5, Padding::CausalSame).unwrap();
        for i in 0..10 {
            for k in 0..10 {
                let expect = if i == 0 || k == 0 { 0.0 } else { 1.5 * a[i - 1] * b[k - 1] };
                assert_eq!(c.pq[(i, k)], expect);
            }
        }
        assert!(matches!(k1_cross(&a, &b[..9], 1, 1.0, Padding::CausalSame), Err(Error::LengthMismatch(..))));
    }

    #[test]
    fn relu_step_hand_example() {
        let prev = KernelMatrix { k: SymMatrix::identity(3), layer: 1, method: KernelMethod::Analytic };
        let k = relu_next_kernel(&prev, 1, 1.0, Padding::Valid).unwrap();
        let c = 1.0 / (2.0 * PI);
        assert_eq!(k.dim(), 2);
        assert!((k.k.get(0, 0) - 0.5).abs() < 1e-15);
        assert!((k.k.get(1, 1) - 0.5).abs() < 1e-15);
        assert!((k.k.get(0, 1) - c).abs() < 1e-15);
        assert_eq!(k.layer, 2);
    }

    #[test]
    fn relu_anticorrelated_pair_contributes_nothing() {
        assert!(relu_expectation(2.0, 3.0, -(6.0f64).sqrt()).abs() < 1e-15);
        assert!(arc_cosine_g(PI).abs() < 1e-15);
    }

    #[test]
    fn relu_diagonal_is_half_the_receptive_sum() {
        let x = gen_iid_gaussian(12, &RngStream::new(1, 1)).values;
        let k1 = k1_same_input(&x, 3, 1.0, Padding::CausalSame).unwrap();
        let k2 = relu_next_kernel(&k1, 3, 2.0, Padding::CausalSame).unwrap();
        for i in 0..12usize {
            let expect: f64 = (1..=3).filter_map(|j| i.checked_sub(j)).map(|a| k1.k.get(a, a)).sum::<f64>();
            assert!((k2.k.get(i, i) - expect).abs() < 1e-12 * (1.0 + expect));
        }
    }

    #[test]
    fn relu_valid_mode_rejects_zero_variance() {
        let prev = KernelMatrix {
            k: SymMatrix::from_lower_fn(3, |i, k| if i == k && i != 1 { 1.0 } else { 0.0 }),
            layer: 1,
            method: KernelMethod::Analytic,
        };
        assert!(matches!(
            relu_next_kernel(&prev, 1, 1.0, Padding::Valid),
            Err(Error::ZeroVariancePosition(1))
        ));
        assert!(relu_next_kernel(&prev, 1, 1.0, Padding::CausalSame).is_ok());
    }

    #[test]
    fn linear_step_hand_sums() {
        let prev = KernelMatrix { k: SymMatrix::identity(6), layer: 1, method: KernelMethod::Analytic };
        let k = linear_next_kernel(&prev, 2, 1.5, Padding::CausalSame).unwrap();
        for i in 2..6 {
            assert_eq!(k.k.get(i, i), 3.0);
            assert_eq!(k.k.get(i, i - 1), 0.0);
        }
        // M = 1 shifts the kernel by one position
        let x = gen_iid_gaussian(8, &RngStream::new(2, 2)).values;
        let k1 = k1_same_input(&x, 2, 1.0, Padding::CausalSame).unwrap();
        let k2 = linear_next_kernel(&k1, 1, 1.0, Padding::CausalSame).unwrap();
        for i in 1..8 {
            for q in 1..8 {
                assert_eq!(k2.k.get(i, q), k1.k.get(i - 1, q - 1));
            }
        }
    }

    #[test]
    fn mc_layer_one_is_exact() {
        let x = gen_iid_gaussian(10, &RngStream::new(2, 0)).values;
        let arch = NetworkArch::new(1, 3, 1.0, Activation::Relu);
        let mc = mc_kernel(&x, &arch, 1, 10, &RngStream::new(0, 0)).unwrap();
        let exact = k1_same_input(&x, 3, 1.0, Padding::CausalSame).unwrap();
        assert_eq!(mc.k, exact.k);
        assert_eq!(mc.method, KernelMethod::Mc);
    }

    #[test]
    fn mc_relu_layer_two_matches_recursion() {
        let x = gen_iid_gaussian(10, &RngStream::new(4, 0)).values;
        let arch = NetworkArch::new(2, 3, 1.0, Activation::Relu);
        let mc = mc_kernel_with_se(&x, &arch, 2, 100_000, &RngStream::new(4, 1)).unwrap();
        let exact = analytic_kernel(&x, &arch).unwrap();
        for i in 0..10 {
            for k in 0..10 {
                let diff = (mc.kernel.k.get(i, k) - exact.k.get(i, k)).abs();
                assert!(diff <= 5.0 * mc.std_err[(i, k)] + 1e-12, "({i},{k}) diff {diff}");
            }
        }
        // the cheap estimator sees the same draws
        let cheap = mc_kernel(&x, &arch, 2, 100_000, &RngStream::new(4, 1)).unwrap();
        for i in 0..10 {
            for k in 0..10 {
                assert!((cheap.k.get(i, k) - mc.kernel.k.get(i, k)).abs() < 1e-9 * (1.0 + exact.k.get(i, i)));
            }
        }
    }

    #[test]
    fn mc_deep_relu_is_finite() {
        let x = gen_iid_gaussian(20, &RngStream::new(5, 0)).values;
        let arch = NetworkArch::new(3, 2, 1.0, Activation::Relu);
        let k = mc_kernel(&x, &arch, 3, 1000, &RngStream::new(5, 1)).unwrap();
        assert!(k.k.as_matrix().iter().all(|v| v.is_finite()));
        assert_eq!(k.dim(), 20);
    }

    #[test]
    fn tanh_kernel_bounded() {
        let x = gen_iid_gaussian(15, &RngStream::new(6, 0)).values;
        let arch = NetworkArch::new(3, 4, 2.0, Activation::Tanh);
        let k = mc_tanh_kernel(&x, &arch, 3, 500, &RngStream::new(6, 1)).unwrap();
        assert!(k.k.as_matrix().iter().all(|v| v.abs() <= 2.0 * 4.0));
        let tiny = NetworkArch { sigma_w2: 1e-12, ..arch };
        let k0 = mc_tanh_kernel(&x, &tiny, 3, 100, &RngStream::new(6, 1)).unwrap();
        assert!(k0.k.as_matrix().iter().all(|v| v.abs() < 1e-20));
    }

    #[test]
    fn tanh_has_no_analytic_kernel() {
        let arch = NetworkArch::new(2, 2, 1.0, Activation::Tanh);
        assert!(analytic_kernel(&[1.0, 2.0, 3.0], &arch).is_err());
    }

    #[test]
    fn fnn_fixed_point_and_hand_step() {
        for lvl in fnn_relu_kernel(0.0, &FnnKernelParams::new(1.3, 6)) {
            assert!((lvl.correlation - 1.0).abs() < 1e-15);
        }
        let one = fnn_relu_kernel(PI / 2.0, &FnnKernelParams::new(2.0 * PI, 1))[0];
        assert!((one.value - 1.0).abs() < 1e-15);
        assert!((one.diag - PI).abs() < 1e-15);
        assert!((one.correlation - 1.0 / PI).abs() < 1e-15);
    }

    #[test]
    fn fnn_correlations_contract_towards_one() {
        let thetas: Vec<f64> = (1..64).map(|i| PI * i as f64 / 64.0).collect();
        let spread_at = |depth: usize| {
            let vals: Vec<f64> = thetas
                .iter()
                .map(|&t| fnn_relu_kernel(t, &FnnKernelParams::new(2.0, depth))[depth - 1].correlation)
                .collect();
            vals.iter().copied().fold(f64::MIN, f64::max) - vals.iter().copied().fold(f64::MAX, f64::min)
        };
        let mut prev = f64::INFINITY;
        for depth in 1..=8 {
            let s = spread_at(depth);
            assert!(s < prev, "depth {depth}: {s} !< {prev}");
            prev = s;
        }
        // the map rho -> (sqrt(1-rho^2) + (pi - acos rho) rho) / pi has its fixed point at 1
        // and converges only polynomially; iterating it directly gives the depth-8 spread
        let f = |r: f64| ((1.0 - r * r).max(0.0).sqrt() + (PI - r.acos()) * r) / PI;
        let (mut lo, mut hi) = ((PI * 63.0 / 64.0).cos(), (PI / 64.0).cos());
        for _ in 0..8 {
            lo = f(lo);
            hi = f(hi);
        }
        assert!((spread_at(8) - (hi - lo)).abs() < 1e-12);
    }

    #[test]
    fn angular_hand_value_and_equal_angle_reduction() {
        let pts = angular_kernel_curve(&[0.0], 0.0, 1, 2, 0.8).unwrap();
        let conv = pts.iter().find(|p| p.model == AngularModel::Conv).unwrap();
        assert!((conv.value - 0.8).abs() < 1e-15);
        let grid: Vec<f64> = (0..16).map(|i| PI * i as f64 / 15.0).collect();
        for &t in &grid {
            let pts = angular_kernel_curve(&[t], t, 4, 2, 0.8).unwrap();
            for d in 1..=4 {
                let c = pts.iter().find(|p| p.model == AngularModel::Conv && p.depth == d).unwrap();
                let f = pts.iter().find(|p| p.model == AngularModel::Fnn && p.depth == d).unwrap();
                assert!((c.value - f.value).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn angular_curve_flattens_with_depth() {
        let grid: Vec<f64> = (0..64).map(|i| PI * i as f64 / 63.0).collect();
        for theta2 in [0.5, 3.0] {
            let pts = angular_kernel_curve(&grid, theta2, 5, 2, 0.8).unwrap();
            let mut prev = f64::INFINITY;
            for d in 1..=5 {
                let s = angular_spread(&pts, AngularModel::Conv, d);
                assert!(s <= prev);
                prev = s;
            }
        }
    }

    #[test]
    fn rbf_closed_forms() {
        let ls = 2f64.sqrt();
        let pts = vec![vec![0.0], vec![ls * 2f64.sqrt()], vec![3.0]];
        let k = rbf_kernel(&pts, ls).unwrap();
        assert_eq!(k.get(2, 2), 1.0);
        assert!((k.get(0, 1) - (-1.0f64).exp()).abs() < 1e-15);
        let grid: Vec<Vec<f64>> = (0..50).map(|i| vec![i as f64]).collect();
        let g = rbf_kernel(&grid, ls).unwrap();
        assert!((g.get(0, 1) - (-0.25f64).exp()).abs() < 1e-15);
        assert!(rbf_kernel(&grid, 0.0).is_err());
    }

    #[test]
    fn readout_kernel_reductions() {
        let x = gen_iid_gaussian(9, &RngStream::new(3, 3)).values;
        let arch = NetworkArch::new(1, 3, 1.0, Activation::Relu)
            .with_padding(Padding::Valid)
            .with_readout(Readout::Linear { sigma_v2: 2.0 });
        let k = readout_kernel_pair(&x, &x, &arch).unwrap();
        let k1 = k1_same_input(&x, 3, 1.0, Padding::Valid).unwrap();
        let expect = 2.0 / 6.0 * k1.k.diag().iter().map(|v| v / 2.0).sum::<f64>();
        assert!((k - expect).abs() < 1e-12);
        let zero = NetworkArch { readout: Readout::Linear { sigma_v2: 0.0 }, ..arch };
        assert_eq!(readout_kernel_pair(&x, &x, &zero).unwrap(), 0.0);
        assert!(matches!(readout_kernel_pair(&x, &x[..8], &arch), Err(Error::LengthMismatch(..))));
    }

    proptest! {
        #[test]
        fn relu_step_is_positively_homogeneous(
            xs in proptest::collection::vec(-3.0f64..3.0, 8),
            c in 0.1f64..10.0,
        ) {
            let k1 = k1_same_input(&xs, 2, 1.0, Padding::CausalSame).unwrap();
            let scaled = KernelMatrix { k: k1.k.scaled(c), ..k1.clone() };
            let a = relu_next_kernel(&k1, 2, 1.0, Padding::CausalSame).unwrap();
            let b = relu_next_kernel(&scaled, 2, 1.0, Padding::CausalSame).unwrap();
            for i in 0..8 {
                for k in 0..8 {
                    let tol = 1e-10 * (1.0 + c * a.k.get(i, i).max(a.k.get(k, k)));
                    prop_assert!((b.k.get(i, k) - c * a.k.get(i, k)).abs() <= tol);
                }
            }
        }

        #[test]
        fn kernels_satisfy_cauchy_schwarz(
            xs in proptest::collection::vec(-3.0f64..3.0, 12),
            width in 1usize..5,
            depth in 1usize..5,
            relu in any::<bool>(),
        ) {
            let act = if relu { Activation::Relu } else { Activation::Linear };
            let arch = NetworkArch::new(depth, width, 1.0, act);
            let k = analytic_kernel(&xs, &arch).unwrap();
            let scale = k.k.diag().iter().copied().fold(1.0, f64::max);
            prop_assert!(k.cauchy_schwarz_excess() <= 1e-8 * scale);
            prop_assert!(crate::linalg::cholesky_psd(&k.k, &Default::default()).is_ok());
        }
    }
}
