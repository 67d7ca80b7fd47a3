//! Input series: iid Gaussian vectors, stationary AR(p) series and sliding
//! windows for forecasting.

use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::linalg::RngStream;
use crate::{Error, Result};

/// How an input series was generated.
#[derive(Clone, Debug, PartialEq)]
pub enum InputLaw {
    IidGaussian,
    Ar(ArSpec),
    /// Loaded from a user-supplied file.
    External,
}

impl InputLaw {
    pub fn tag(&self) -> &'static str {
        match self {
            InputLaw::IidGaussian => "iid_gaussian",
            InputLaw::Ar(_) => "ar",
            InputLaw::External => "external",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct InputSeries {
    pub values: Vec<f64>,
    pub law: InputLaw,
}

impl InputSeries {
    pub fn new(values: Vec<f64>) -> Self {
        Self { values, law: InputLaw::External }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Autoregressive model `x_t = Σ φ_j x_{t-j} + e_t`, `e_t ~ N(0, noise_sd²)`.
#[derive(Clone, Debug, PartialEq)]
pub struct ArSpec {
    pub coeffs: Vec<f64>,
    pub noise_sd: f64,
    pub burn_in: usize,
}

impl ArSpec {
    /// Checks stationarity and the burn-in floor.
    pub fn new(coeffs: Vec<f64>, noise_sd: f64, burn_in: usize) -> Result<Self> {
        if !(noise_sd > 0.0) {
            return Err(Error::InvalidArgument(format!("noise_sd must be positive, got {noise_sd}")));
        }
        if burn_in < 100 {
            return Err(Error::InvalidArgument(format!("burn_in must be >= 100, got {burn_in}")));
        }
        if !is_stationary(&coeffs) {
            return Err(Error::NonStationary(coeffs));
        }
        Ok(Self { coeffs, noise_sd, burn_in })
    }

    /// Unit innovations and 1000 burn-in steps.
    pub fn with_defaults(coeffs: Vec<f64>) -> Result<Self> {
        Self::new(coeffs, 1.0, 1000)
    }

    /// AR(2) series of the prior-discrepancy experiments.
    pub fn default_ar2() -> Self {
        Self::with_defaults(vec![-0.6, 0.2]).expect("stationary")
    }

    /// AR(3) series used for the posterior experiment.
    pub fn default_ar3() -> Self {
        Self::with_defaults(vec![0.5, -0.1, 0.2]).expect("stationary")
    }
}

/// Partial autocorrelations of an AR polynomial via the step-down recursion.
///
/// Returns `None` as soon as a reflection coefficient reaches magnitude 1.
pub fn partial_autocorrelations(coeffs: &[f64]) -> Option<Vec<f64>> {
    let mut a = coeffs.to_vec();
    let mut pacf = vec![0.0; a.len()];
    for k in (0..a.len()).rev() {
        let kappa = a[k];
        if !kappa.is_finite() || kappa.abs() >= 1.0 {
            return None;
        }
        pacf[k] = kappa;
        let denom = 1.0 - kappa * kappa;
        let prev: Vec<f64> = (0..k).map(|j| (a[j] + kappa * a[k - 1 - j]) / denom).collect();
        a.truncate(k);
        a.copy_from_slice(&prev);
    }
    Some(pacf)
}

/// True when every root of `1 - Σ φ_j z^j` lies outside the unit circle.
pub fn is_stationary(coeffs: &[f64]) -> bool {
    partial_autocorrelations(coeffs).is_some()
}

pub fn gen_iid_gaussian(d: usize, stream: &RngStream) -> InputSeries {
    let mut rng = stream.rng();
    let values = (0..d).map(|_| rng.sample(StandardNormal)).collect();
    InputSeries { values, law: InputLaw::IidGaussian }
}

/// Simulates `burn_in + d` steps from a zero state and keeps the last `d`.
pub fn gen_ar(spec: &ArSpec, d: usize, stream: &RngStream) -> Result<InputSeries> {
    if !is_stationary(&spec.coeffs) {
        return Err(Error::NonStationary(spec.coeffs.clone()));
    }
    let p = spec.coeffs.len();
    let total = spec.burn_in + d;
    let mut rng = stream.rng();
    let mut x = vec![0.0; total];
    for t in 0..total {
        let e: f64 = rng.sample(StandardNormal);
        let mut v = spec.noise_sd * e;
        for j in 1..=p.min(t) {
            v += spec.coeffs[j - 1] * x[t - j];
        }
        x[t] = v;
    }
    Ok(InputSeries { values: x.split_off(spec.burn_in), law: InputLaw::Ar(spec.clone()) })
}

/// Sliding windows with forecast targets.
#[derive(Clone, Debug, PartialEq)]
pub struct WindowedDataset {
    pub windows: Vec<Vec<f64>>,
    pub targets: Vec<f64>,
    /// Series index of each target.
    pub target_index: Vec<usize>,
    pub horizon: usize,
}

impl WindowedDataset {
    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn window_len(&self) -> usize {
        self.windows.first().map_or(0, Vec::len)
    }

    /// Splits into the first `n` pairs and the rest.
    pub fn split_at(&self, n: usize) -> (WindowedDataset, WindowedDataset) {
        let n = n.min(self.len());
        let part = |r: std::ops::Range<usize>| WindowedDataset {
            windows: self.windows[r.clone()].to_vec(),
            targets: self.targets[r.clone()].to_vec(),
            target_index: self.target_index[r].to_vec(),
            horizon: self.horizon,
        };
        (part(0..n), part(n..self.len()))
    }

    /// Appends a trailing zero to every window so that a strictly causal
    /// valid convolution reaches the last observed value.
    pub fn with_forecast_slot(&self) -> WindowedDataset {
        let mut out = self.clone();
        for w in &mut out.windows {
            w.push(0.0);
        }
        out
    }
}

/// Window `t` covers indices `t..t+w`; its target sits at `t + w - 1 + horizon`.
pub fn make_windows(series: &InputSeries, w: usize, horizon: usize) -> Result<WindowedDataset> {
    let d = series.len();
    if w == 0 || horizon == 0 || w + horizon > d {
        return Err(Error::WindowTooLong { window: w, horizon, len: d });
    }
    let count = d - w - horizon + 1;
    let mut ds = WindowedDataset {
        windows: Vec::with_capacity(count),
        targets: Vec::with_capacity(count),
        target_index: Vec::with_capacity(count),
        horizon,
    };
    for t in 0..count {
        let ti = t + w - 1 + horizon;
        ds.windows.push(series.values[t..t + w].to_vec());
        ds.targets.push(series.values[ti]);
        ds.target_index.push(ti);
    }
    Ok(ds)
}

/// Reads a single-column CSV with header `value`.
pub fn load_series_csv(path: &Path) -> Result<InputSeries> {
    let mut rdr = csv::ReaderBuilder::new().comment(Some(b'#')).from_path(path)?;
    let headers = rdr.headers()?.clone();
    if headers.len() != 1 || headers.get(0).map(str::trim) != Some("value") {
        return Err(Error::SchemaMismatch(format!(
            "expected a single `value` column, found {:?}",
            headers.iter().collect::<Vec<_>>()
        )));
    }
    let mut values = Vec::new();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let raw = rec.get(0).unwrap_or("").trim();
        let v: f64 = raw.parse().map_err(|_| {
            Error::SchemaMismatch(format!("row {}: `{raw}` is not a number", line + 1))
        })?;
        values.push(v);
    }
    if values.is_empty() {
        return Err(Error::SchemaMismatch("no data rows".into()));
    }
    Ok(InputSeries { values, law: InputLaw::External })
}
