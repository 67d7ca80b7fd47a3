//! Single-channel 1-D convolutional networks with Gaussian random weights.
//!
//! Layer `l` computes `a^l_i = Σ_{j=1..M} w^l_j z^{l-1}_{i-j}` followed by
//! `z^l = h(a^l)`, with `z^0 = x`. There are no biases. Under
//! [`Padding::CausalSame`] indices before the start of the sequence read as
//! zero and every layer keeps the input length; under [`Padding::Valid`]
//! only positions whose whole receptive field is in range are emitted.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::inputs::WindowedDataset;
use crate::linalg::{Provenance, RngStream, SampleSet};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Activation {
    Linear,
    Relu,
    Tanh,
}

impl Activation {
    pub fn apply(self, a: f64) -> f64 {
        match self {
            Activation::Linear => a,
            Activation::Relu => a.max(0.0),
            Activation::Tanh => a.tanh(),
        }
    }

    pub fn derivative(self, a: f64) -> f64 {
        match self {
            Activation::Linear => 1.0,
            Activation::Relu => {
                if a > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => {
                let t = a.tanh();
                1.0 - t * t
            }
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Linear => "linear",
            Activation::Relu => "relu",
            Activation::Tanh => "tanh",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "linear" => Some(Activation::Linear),
            "relu" => Some(Activation::Relu),
            "tanh" => Some(Activation::Tanh),
            _ => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Padding {
    CausalSame,
    Valid,
}

impl Padding {
    pub fn name(self) -> &'static str {
        match self {
            Padding::CausalSame => "causal_same",
            Padding::Valid => "valid",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "causal_same" => Some(Padding::CausalSame),
            "valid" => Some(Padding::Valid),
            _ => None,
        }
    }

    /// Output length of one layer applied to `n` positions.
    pub fn out_len(self, n: usize, width: usize) -> Result<usize> {
        match self {
            Padding::CausalSame => Ok(n),
            Padding::Valid if n > width => Ok(n - width),
            Padding::Valid => Err(Error::EmptyOutput { len: n, width }),
        }
    }

    /// Index in the previous layer read by output `p` through filter tap `j` (1-based).
    #[inline]
    pub fn source(self, p: usize, j: usize, width: usize) -> Option<usize> {
        match self {
            Padding::CausalSame => p.checked_sub(j),
            Padding::Valid => Some(p + width - j),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Readout {
    LastPosition,
    /// `ŷ = Σ_i v_i z^L_i` with `v_i ~ N(0, sigma_v2 / N_L)`.
    Linear { sigma_v2: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NetworkArch {
    pub depth: usize,
    pub filter_width: usize,
    pub sigma_w2: f64,
    pub activation: Activation,
    pub padding: Padding,
    pub readout: Readout,
}

impl NetworkArch {
    pub fn new(depth: usize, filter_width: usize, sigma_w2: f64, activation: Activation) -> Self {
        Self {
            depth,
            filter_width,
            sigma_w2,
            activation,
            padding: Padding::CausalSame,
            readout: Readout::LastPosition,
        }
    }

    pub fn with_padding(mut self, padding: Padding) -> Self {
        self.padding = padding;
        self
    }

    pub fn with_readout(mut self, readout: Readout) -> Self {
        self.readout = readout;
        self
    }

    /// Checks the architecture against an input of length `d` and returns
    /// the output length of every layer.
    pub fn layer_lengths(&self, d: usize) -> Result<Vec<usize>> {
        if self.depth == 0 || self.filter_width == 0 {
            return Err(Error::InvalidArgument("depth and filter width must be >= 1".into()));
        }
        if !(self.sigma_w2 >= 0.0) {
            return Err(Error::InvalidArgument(format!("sigma_w2 = {}", self.sigma_w2)));
        }
        if let Readout::Linear { sigma_v2 } = self.readout {
            if !(sigma_v2 >= 0.0) {
                return Err(Error::InvalidArgument(format!("sigma_v2 = {sigma_v2}")));
            }
        }
        let mut n = d;
        let mut out = Vec::with_capacity(self.depth);
        for _ in 0..self.depth {
            n = self.padding.out_len(n, self.filter_width)?;
            out.push(n);
        }
        Ok(out)
    }

    pub fn output_len(&self, d: usize) -> Result<usize> {
        Ok(*self.layer_lengths(d)?.last().expect("depth >= 1"))
    }
}

/// Filters of every layer plus optional readout weights.
#[derive(Clone, Debug, PartialEq)]
pub struct WeightSample {
    pub filters: Vec<Vec<f64>>,
    pub readout: Option<Vec<f64>>,
}

impl WeightSample {
    /// Draws filters from `N(0, sigma_w2)` and readout weights from `N(0, sigma_v2 / N_L)`.
    pub fn draw(arch: &NetworkArch, input_len: usize, rng: &mut ChaCha8Rng) -> Result<Self> {
        let n_out = arch.output_len(input_len)?;
        let sw = arch.sigma_w2.sqrt();
        let filters = (0..arch.depth)
            .map(|_| {
                (0..arch.filter_width)
                    .map(|_| sw * rng.sample::<f64, _>(StandardNormal))
                    .collect()
            })
            .collect();
        let readout = match arch.readout {
            Readout::LastPosition => None,
            Readout::Linear { sigma_v2 } => {
                let sv = (sigma_v2 / n_out as f64).sqrt();
                Some((0..n_out).map(|_| sv * rng.sample::<f64, _>(StandardNormal)).collect())
            }
        };
        Ok(Self { filters, readout })
    }

    pub fn num_params(&self) -> usize {
        self.filters.iter().map(Vec::len).sum::<usize>() + self.readout.as_ref().map_or(0, Vec::len)
    }

    /// Filters layer by layer, then readout.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut v: Vec<f64> = self.filters.iter().flatten().copied().collect();
        if let Some(r) = &self.readout {
            v.extend_from_slice(r);
        }
        v
    }

    pub fn from_flat_like(&self, flat: &[f64]) -> Self {
        assert_eq!(flat.len(), self.num_params());
        let mut it = flat.iter().copied();
        let filters = self.filters.iter().map(|f| it.by_ref().take(f.len()).collect()).collect();
        let readout = self.readout.as_ref().map(|r| it.by_ref().take(r.len()).collect());
        Self { filters, readout }
    }
}

/// One layer of the convolution `a_p = Σ_j w_j z_{src(p, j)}`.
pub fn causal_conv(z: &[f64], w: &[f64], padding: Padding) -> Result<Vec<f64>> {
    let m = w.len();
    let n_out = padding.out_len(z.len(), m)?;
    let mut a = vec![0.0; n_out];
    for (p, ap) in a.iter_mut().enumerate() {
        for (j, wj) in w.iter().enumerate() {
            if let Some(s) = padding.source(p, j + 1, m) {
                *ap += wj * z[s];
            }
        }
    }
    Ok(a)
}

/// Pre- and post-activations of every layer.
#[derive(Clone, Debug, PartialEq)]
pub struct ForwardPass {
    pub pre: Vec<Vec<f64>>,
    pub post: Vec<Vec<f64>>,
    /// Scalar readout output when the architecture has one.
    pub output: f64,
}

impl ForwardPass {
    /// `a^L`, the object whose law the GP kernel describes.
    pub fn last_pre_activation(&self) -> &[f64] {
        self.pre.last().expect("depth >= 1")
    }
}

pub fn forward(x: &[f64], arch: &NetworkArch, weights: &WeightSample) -> Result<ForwardPass> {
    if weights.filters.len() != arch.depth {
        return Err(Error::DimensionMismatch(weights.filters.len(), arch.depth));
    }
    let mut pre = Vec::with_capacity(arch.depth);
    let mut post: Vec<Vec<f64>> = Vec::with_capacity(arch.depth);
    for w in &weights.filters {
        let input = post.last().map_or(x, Vec::as_slice);
        let a = causal_conv(input, w, arch.padding)?;
        post.push(a.iter().map(|&v| arch.activation.apply(v)).collect());
        pre.push(a);
    }
    let output = match (&arch.readout, &weights.readout) {
        (Readout::Linear { .. }, Some(v)) => {
            let z = post.last().expect("depth >= 1");
            if v.len() != z.len() {
                return Err(Error::DimensionMismatch(v.len(), z.len()));
            }
            v.iter().zip(z).map(|(a, b)| a * b).sum()
        }
        (Readout::Linear { .. }, None) => {
            return Err(Error::InvalidArgument("linear readout needs readout weights".into()))
        }
        (Readout::LastPosition, _) => *pre.last().and_then(|a| a.last()).unwrap_or(&0.0),
    };
    Ok(ForwardPass { pre, post, output })
}

/// `n` independent networks applied to the same input; rows are `a^L`.
pub fn sample_cnn_prior(
    x: &[f64],
    arch: &NetworkArch,
    n: usize,
    stream: &RngStream,
) -> Result<SampleSet> {
    if n < 2 {
        return Err(Error::InvalidArgument("need at least 2 prior samples".into()));
    }
    let d_out = arch.output_len(x.len())?;
    let mut rng = stream.rng();
    let mut data = Vec::with_capacity(n * d_out);
    for _ in 0..n {
        let w = WeightSample::draw(arch, x.len(), &mut rng)?;
        data.extend_from_slice(forward(x, arch, &w)?.last_pre_activation());
    }
    Ok(SampleSet::from_flat(n, d_out, data, Provenance::CnnPrior))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrainHyper {
    pub lr: f64,
    pub steps: usize,
}

impl Default for TrainHyper {
    fn default() -> Self {
        Self { lr: 1e-2, steps: 2000 }
    }
}

/// Mean squared error over the dataset and its gradient (same layout as `weights`).
pub fn loss_and_grad(
    data: &WindowedDataset,
    arch: &NetworkArch,
    weights: &WeightSample,
) -> Result<(f64, WeightSample)> {
    let readout = weights
        .readout
        .as_ref()
        .ok_or_else(|| Error::InvalidArgument("training needs a linear readout".into()))?;
    let n = data.len() as f64;
    let m = arch.filter_width;
    let mut grad = WeightSample {
        filters: weights.filters.iter().map(|f| vec![0.0; f.len()]).collect(),
        readout: Some(vec![0.0; readout.len()]),
    };
    let mut loss = 0.0;
    for (x, &y) in data.windows.iter().zip(&data.targets) {
        let fp = forward(x, arch, weights)?;
        let r = fp.output - y;
        loss += r * r / n;
        let g = 2.0 * r / n;

        let z_last = fp.post.last().expect("depth >= 1");
        let gv = grad.readout.as_mut().expect("set above");
        for (gi, zi) in gv.iter_mut().zip(z_last) {
            *gi += g * zi;
        }
        let mut dz: Vec<f64> = readout.iter().map(|v| g * v).collect();
        for l in (0..arch.depth).rev() {
            let da: Vec<f64> = dz
                .iter()
                .zip(&fp.pre[l])
                .map(|(d, &a)| d * arch.activation.derivative(a))
                .collect();
            let input = if l == 0 { x.as_slice() } else { fp.post[l - 1].as_slice() };
            let mut dprev = vec![0.0; input.len()];
            let w = &weights.filters[l];
            let gw = &mut grad.filters[l];
            for (p, dap) in da.iter().enumerate() {
                if *dap == 0.0 {
                    continue;
                }
                for j in 0..m {
                    if let Some(s) = arch.padding.source(p, j + 1, m) {
                        gw[j] += dap * input[s];
                        dprev[s] += dap * w[j];
                    }
                }
            }
            dz = dprev;
        }
    }
    Ok((loss, grad))
}

pub fn mse(data: &WindowedDataset, arch: &NetworkArch, weights: &WeightSample) -> Result<f64> {
    let n = data.len() as f64;
    let mut loss = 0.0;
    for (x, &y) in data.windows.iter().zip(&data.targets) {
        let r = forward(x, arch, weights)?.output - y;
        loss += r * r / n;
    }
    Ok(loss)
}

/// Full-batch gradient descent from `init`.
pub fn train_from(
    data: &WindowedDataset,
    arch: &NetworkArch,
    hyper: &TrainHyper,
    init: WeightSample,
) -> Result<WeightSample> {
    if data.is_empty() {
        return Err(Error::InvalidArgument("empty training set".into()));
    }
    let mut w = init;
    for step in 0..hyper.steps {
        let (loss, g) = loss_and_grad(data, arch, &w)?;
        if !loss.is_finite() {
            return Err(Error::DivergedTraining { step, loss });
        }
        for (wf, gf) in w.filters.iter_mut().zip(&g.filters) {
            for (a, b) in wf.iter_mut().zip(gf) {
                *a -= hyper.lr * b;
            }
        }
        if let (Some(v), Some(gv)) = (w.readout.as_mut(), g.readout.as_ref()) {
            for (a, b) in v.iter_mut().zip(gv) {
                *a -= hyper.lr * b;
            }
        }
    }
    let final_loss = mse(data, arch, &w)?;
    if !final_loss.is_finite() {
        return Err(Error::DivergedTraining { step: hyper.steps, loss: final_loss });
    }
    Ok(w)
}

/// Prior-initialized full-batch gradient descent on the mean squared error.
pub fn train_cnn(
    data: &WindowedDataset,
    arch: &NetworkArch,
    hyper: &TrainHyper,
    stream: &RngStream,
) -> Result<WeightSample> {
    if !matches!(arch.readout, Readout::Linear { .. }) {
        return Err(Error::InvalidArgument("training needs a linear readout".into()));
    }
    if data.is_empty() {
        return Err(Error::InvalidArgument("empty training set".into()));
    }
    let init = WeightSample::draw(arch, data.window_len(), &mut stream.rng())?;
    train_from(data, arch, hyper, init)
}

pub fn predict(data: &WindowedDataset, arch: &NetworkArch, weights: &WeightSample) -> Result<Vec<f64>> {
    data.windows.iter().map(|x| Ok(forward(x, arch, weights)?.output)).collect()
}

/// Per-test-input prediction mean and unbiased variance across an ensemble.
#[derive(Clone, Debug, PartialEq)]
pub struct EnsembleStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
    pub members: usize,
}

/// Trains one member per stream in parallel.
pub fn ensemble_stats_with_streams(
    train: &WindowedDataset,
    test: &WindowedDataset,
    arch: &NetworkArch,
    hyper: &TrainHyper,
    streams: &[RngStream],
) -> Result<EnsembleStats> {
    if streams.len() < 2 {
        return Err(Error::InvalidArgument("ensemble needs at least 2 members".into()));
    }
    let preds: Vec<Vec<f64>> = streams
        .par_iter()
        .map(|s| {
            let w = train_cnn(train, arch, hyper, s)?;
            predict(test, arch, &w)
        })
        .collect::<Result<_>>()?;
    let k = preds.len() as f64;
    let n_test = test.len();
    let mut mean = vec![0.0; n_test];
    let mut var = vec![0.0; n_test];
    for t in 0..n_test {
        let m = preds.iter().map(|p| p[t]).sum::<f64>() / k;
        mean[t] = m;
        var[t] = preds.iter().map(|p| (p[t] - m) * (p[t] - m)).sum::<f64>() / (k - 1.0);
    }
    Ok(EnsembleStats { mean, var, members: preds.len() })
}

/// Ensemble of `members` networks with independent initializations.
pub fn ensemble_stats(
    train: &WindowedDataset,
    test: &WindowedDataset,
    arch: &NetworkArch,
    hyper: &TrainHyper,
    members: usize,
    stream: &RngStream,
) -> Result<EnsembleStats> {
    let streams: Vec<RngStream> = (0..members as u64).map(|i| stream.child(i)).collect();
    ensemble_stats_with_streams(train, test, arch, hyper, &streams)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::inputs::gen_iid_gaussian;

    #[test]
    fn conv_shift_by_one() {
        let a = causal_conv(&[1.0, 2.0, 3.0], &[1.0], Padding::CausalSame).unwrap();
        assert_eq!(a, vec![0.0, 1.0, 2.0]);
    }

    #[test]
    fn conv_valid_hand_value() {
        let a = causal_conv(&[1.0, 2.0, 3.0], &[1.0, 1.0], Padding::Valid).unwrap();
        assert_eq!(a, vec![3.0]);
        assert!(matches!(
            causal_conv(&[1.0, 2.0], &[1.0, 1.0], Padding::Valid),
            Err(Error::EmptyOutput { .. })
        ));
    }

    #[test]
    fn conv_null_filter() {
        let a = causal_conv(&[1.0, -2.0, 3.5, 4.0], &[0.0, 0.0], Padding::CausalSame).unwrap();
        assert!(a.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn single_linear_layer_is_the_convolution() {
        let x = gen_iid_gaussian(12, &RngStream::new(1, 1)).values;
        let arch = NetworkArch::new(1, 3, 1.0, Activation::Linear);
        let w = WeightSample::draw(&arch, 12, &mut RngStream::new(2, 2).rng()).unwrap();
        let fp = forward(&x, &arch, &w).unwrap();
        assert_eq!(fp.last_pre_activation(), causal_conv(&x, &w.filters[0], Padding::CausalSame).unwrap());
    }

    #[test]
    fn two_layer_relu_hand_trace() {
        let arch = NetworkArch::new(2, 1, 1.0, Activation::Relu);
        let w = WeightSample { filters: vec![vec![1.0], vec![1.0]], readout: None };
        let fp = forward(&[-1.0, 2.0], &arch, &w).unwrap();
        assert_eq!(fp.pre[0], vec![0.0, -1.0]);
        assert_eq!(fp.post[0], vec![0.0, 0.0]);
        assert_eq!(fp.pre[1], vec![0.0, 0.0]);
    }

    #[test]
    fn tanh_hidden_values_bounded() {
        let x: Vec<f64> = (0..20).map(|i| (i as f64 - 10.0) * 0.4).collect();
        let arch = NetworkArch::new(3, 4, 4.0, Activation::Tanh);
        let w = WeightSample::draw(&arch, 20, &mut RngStream::new(0, 9).rng()).unwrap();
        let fp = forward(&x, &arch, &w).unwrap();
        assert!(fp.post.iter().flatten().all(|z| z.abs() < 1.0));
    }

    #[test]
    fn layer_lengths_follow_padding() {
        let arch = NetworkArch::new(3, 4, 1.0, Activation::Relu);
        assert_eq!(arch.layer_lengths(20).unwrap(), vec![20, 20, 20]);
        let v = arch.with_padding(Padding::Valid);
        assert_eq!(v.layer_lengths(20).unwrap(), vec![16, 12, 8]);
        assert!(v.layer_lengths(12).is_err());
    }

    #[test]
    fn prior_samples_deterministic_and_null() {
        let x = gen_iid_gaussian(10, &RngStream::new(0, 0)).values;
        let arch = NetworkArch::new(2, 3, 1.0, Activation::Relu);
        let a = sample_cnn_prior(&x, &arch, 2, &RngStream::new(5, 5)).unwrap();
        let b = sample_cnn_prior(&x, &arch, 2, &RngStream::new(5, 5)).unwrap();
        assert_eq!(a, b);
        let null = NetworkArch::new(2, 3, 0.0, Activation::Relu);
        let z = sample_cnn_prior(&x, &null, 4, &RngStream::new(5, 5)).unwrap();
        assert!(z.as_flat().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn receptive_field_locality() {
        let d = 30;
        let arch = NetworkArch::new(3, 3, 1.0, Activation::Tanh);
        let w = WeightSample::draw(&arch, d, &mut RngStream::new(3, 3).rng()).unwrap();
        let x = gen_iid_gaussian(d, &RngStream::new(4, 4)).values;
        let base = forward(&x, &arch, &w).unwrap();
        for c in 0..d {
            let mut xp = x.clone();
            xp[c] += 1.0;
            let fp = forward(&xp, &arch, &w).unwrap();
            for l in 0..arch.depth {
                // layer l+1 output p depends on inputs p-(l+1)*M ..= p-(l+1)
                let lo = c + l + 1;
                let hi = c + (l + 1) * arch.filter_width;
                for p in 0..d {
                    if p < lo || p > hi {
                        assert_eq!(fp.pre[l][p], base.pre[l][p], "layer {l} pos {p} input {c}");
                    }
                }
            }
        }
    }

    fn toy_data(n: usize, w: usize, stream: &RngStream) -> WindowedDataset {
        let s = gen_iid_gaussian(n + w, stream);
        crate::inputs::make_windows(&s, w, 1).unwrap()
    }

    #[test]
    fn zero_steps_returns_init() {
        let data = toy_data(20, 6, &RngStream::new(1, 0));
        let arch = NetworkArch::new(1, 3, 1.0, Activation::Relu)
            .with_padding(Padding::Valid)
            .with_readout(Readout::Linear { sigma_v2: 1.0 });
        let hyper = TrainHyper { lr: 0.1, steps: 0 };
        let s = RngStream::new(7, 7);
        let init = WeightSample::draw(&arch, 6, &mut s.rng()).unwrap();
        assert_eq!(train_cnn(&data, &arch, &hyper, &s).unwrap(), init);
    }

    #[test]
    fn divergence_is_reported() {
        let data = toy_data(20, 6, &RngStream::new(1, 0));
        let arch = NetworkArch::new(2, 2, 1.0, Activation::Linear)
            .with_padding(Padding::Valid)
            .with_readout(Readout::Linear { sigma_v2: 1.0 });
        let hyper = TrainHyper { lr: 50.0, steps: 500 };
        assert!(matches!(
            train_cnn(&data, &arch, &hyper, &RngStream::new(1, 1)),
            Err(Error::DivergedTraining { .. })
        ));
    }

    #[test]
    fn training_requires_linear_readout() {
        let data = toy_data(5, 4, &RngStream::new(1, 0));
        let arch = NetworkArch::new(1, 2, 1.0, Activation::Relu);
        assert!(train_cnn(&data, &arch, &TrainHyper::default(), &RngStream::new(0, 0)).is_err());
    }

    #[test]
    fn identical_members_have_zero_variance() {
        let data = toy_data(30, 6, &RngStream::new(2, 0));
        let (train, test) = data.split_at(20);
        let arch = NetworkArch::new(1, 3, 1.0, Activation::Relu)
            .with_padding(Padding::Valid)
            .with_readout(Readout::Linear { sigma_v2: 1.0 });
        let hyper = TrainHyper { lr: 1e-2, steps: 50 };
        let s = RngStream::new(3, 3);
        let stats = ensemble_stats_with_streams(&train, &test, &arch, &hyper, &[s, s]).unwrap();
        assert!(stats.var.iter().all(|&v| v == 0.0));
        assert_eq!(stats.mean.len(), test.len());
    }

    #[test]
    fn flat_roundtrip() {
        let arch = NetworkArch::new(2, 3, 1.0, Activation::Relu)
            .with_readout(Readout::Linear { sigma_v2: 1.0 });
        let w = WeightSample::draw(&arch, 8, &mut RngStream::new(0, 1).rng()).unwrap();
        assert_eq!(w.from_flat_like(&w.to_flat()), w);
        assert_eq!(w.num_params(), 6 + 8);
    }
}
