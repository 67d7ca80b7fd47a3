use std::path::Path;

use super::config::ConfigMap;
use super::plot::{render_svg, PlotSpec};
use super::{fmt_f64, fmt_opt, write_atomic, write_csv_atomic, RunSummary};
use crate::gp::gp_posterior;
use crate::inputs::{gen_ar, make_windows, ArSpec, WindowedDataset};
use crate::kernels::readout_gram;
use crate::linalg::{RngStream, SymMatrix};
use crate::nets::{ensemble_stats, Activation, NetworkArch, Padding, Readout, TrainHyper};
use crate::{Error, Result};

pub const POSTERIOR_COLUMNS: [&str; 12] = [
    "t",
    "split",
    "y_true",
    "gp_mean",
    "gp_var",
    "ens_mean",
    "ens_var",
    "seed",
    "sigma_eps2",
    "jitter_used",
    "config_hash",
    "error",
];

#[derive(Clone, Debug)]
pub struct PosteriorConfig {
    pub d: usize,
    pub ar: ArSpec,
    pub window: usize,
    pub horizon: usize,
    pub n_train: usize,
    pub filter_width: usize,
    pub activation: Activation,
    pub sigma_w2: f64,
    pub sigma_v2: f64,
    pub sigma_eps2: f64,
    pub ensemble: usize,
    pub hyper: TrainHyper,
    pub hash: String,
}

impl PosteriorConfig {
    pub fn from_map(mut c: ConfigMap) -> Result<Self> {
        let d = c.positive_usize("d", 200)?;
        let coeffs = c.f64_list("ar_coeffs", "0.5,-0.1,0.2")?;
        let ar = ArSpec::with_defaults(coeffs).map_err(|e| Error::Config(format!("ar_coeffs: {e}")))?;
        let window = c.positive_usize("window", 8)?;
        let horizon = c.positive_usize("horizon", 1)?;
        let n_train = c.positive_usize("n_train", 150)?;
        let filter_width = c.positive_usize("filter_width", 3)?;
        let act = c.string("activation", "relu")?;
        let activation = match Activation::parse(&act) {
            Some(a @ (Activation::Relu | Activation::Linear)) => a,
            _ => return Err(Error::Config(format!("posterior activation must be relu or linear, got `{act}`"))),
        };
        let sigma_w2 = c.positive_f64("sigma_w2", 1.0)?;
        let sigma_v2 = c.positive_f64("sigma_v2", 1.0)?;
        let sigma_eps2 = c.f64_value("sigma_eps2", 1.0)?;
        if sigma_eps2 < 0.0 {
            return Err(Error::Config("`sigma_eps2` must be non-negative".into()));
        }
        let ensemble = c.positive_usize("ensemble", 100)?;
        let lr = c.positive_f64("lr", 1e-2)?;
        let steps = c.usize_value("steps", 2000)?;
        if ensemble < 2 {
            return Err(Error::Config("`ensemble` must be at least 2".into()));
        }
        if window + horizon > d {
            return Err(Error::Config(format!("window {window} + horizon {horizon} exceeds d = {d}")));
        }
        let n_windows = d - window - horizon + 1;
        if n_train >= n_windows {
            return Err(Error::Config(format!("n_train must be below the {n_windows} available windows")));
        }
        if filter_width > window {
            return Err(Error::Config("filter_width must not exceed window".into()));
        }
        let hash = c.finish("posterior")?;
        Ok(Self {
            d,
            ar,
            window,
            horizon,
            n_train,
            filter_width,
            activation,
            sigma_w2,
            sigma_v2,
            sigma_eps2,
            ensemble,
            hyper: TrainHyper { lr, steps },
            hash,
        })
    }

    /// One hidden layer, valid padding, linear readout over all hidden positions.
    pub fn arch(&self) -> NetworkArch {
        NetworkArch::new(1, self.filter_width, self.sigma_w2, self.activation)
            .with_padding(Padding::Valid)
            .with_readout(Readout::Linear { sigma_v2: self.sigma_v2 })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PosteriorRow {
    pub t: usize,
    pub train: bool,
    pub y_true: f64,
    pub gp_mean: Option<f64>,
    pub gp_var: Option<f64>,
    pub ens_mean: Option<f64>,
    pub ens_var: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct PosteriorOutcome {
    pub rows: Vec<PosteriorRow>,
    pub jitter_used: Option<f64>,
    pub errors: Vec<String>,
}

/// GP posterior and trained-ensemble statistics at every window.
///
/// Windows carry a trailing zero slot (see [`WindowedDataset::with_forecast_slot`]).
pub fn posterior_outcome(cfg: &PosteriorConfig, seed: u64) -> Result<PosteriorOutcome> {
    let base = RngStream::new(seed, 0);
    let series = gen_ar(&cfg.ar, cfg.d, &base.derive("input").derive("ar"))?;
    let data: WindowedDataset = make_windows(&series, cfg.window, cfg.horizon)?.with_forecast_slot();
    let (train, _) = data.split_at(cfg.n_train);
    let arch = cfg.arch();
    let mut errors = Vec::new();

    let gp = (|| -> Result<(Vec<f64>, Vec<f64>, f64)> {
        let kxx = SymMatrix::new(readout_gram(&train.windows, &train.windows, &arch)?)?;
        let ksx = readout_gram(&data.windows, &train.windows, &arch)?;
        let kss = SymMatrix::new(readout_gram(&data.windows, &data.windows, &arch)?)?;
        let post = gp_posterior(&kxx, &ksx, &kss, &train.targets, cfg.sigma_eps2)?;
        Ok((post.mean.clone(), post.variances(), post.jitter_used))
    })();
    let (gp_mean, gp_var, jitter) = match gp {
        Ok((m, v, j)) => (Some(m), Some(v), Some(j)),
        Err(e) => {
            errors.push(format!("gp: {e}"));
            (None, None, None)
        }
    };
    let ens = match ensemble_stats(&train, &data, &arch, &cfg.hyper, cfg.ensemble, &base.derive("ensemble")) {
        Ok(s) => Some(s),
        Err(e) => {
            errors.push(format!("ensemble: {e}"));
            None
        }
    };
    let rows = (0..data.len())
        .map(|i| PosteriorRow {
            t: data.target_index[i],
            train: i < cfg.n_train,
            y_true: data.targets[i],
            gp_mean: gp_mean.as_ref().map(|m| m[i]),
            gp_var: gp_var.as_ref().map(|v| v[i]),
            ens_mean: ens.as_ref().map(|s| s.mean[i]),
            ens_var: ens.as_ref().map(|s| s.var[i]),
        })
        .collect();
    Ok(PosteriorOutcome { rows, jitter_used: jitter, errors })
}

pub fn run_posterior_compare(cfg: &PosteriorConfig, out_dir: &Path, seed: u64) -> Result<RunSummary> {
    let outcome = posterior_outcome(cfg, seed)?;
    let error = outcome.errors.join("; ");
    let table: Vec<Vec<String>> = outcome
        .rows
        .iter()
        .map(|r| {
            vec![
                r.t.to_string(),
                if r.train { "train" } else { "test" }.to_string(),
                fmt_f64(r.y_true),
                fmt_opt(r.gp_mean),
                fmt_opt(r.gp_var),
                fmt_opt(r.ens_mean),
                fmt_opt(r.ens_var),
                seed.to_string(),
                fmt_f64(cfg.sigma_eps2),
                fmt_opt(outcome.jitter_used),
                cfg.hash.clone(),
                error.clone(),
            ]
        })
        .collect();
    let csv_path = out_dir.join("posterior.csv");
    let coeffs: Vec<String> = cfg.ar.coeffs.iter().map(|c| fmt_f64(*c)).collect();
    let meta = [
        ("experiment", "posterior".to_string()),
        ("config_hash", cfg.hash.clone()),
        ("ar_coeffs", coeffs.join(",")),
        ("ensemble", cfg.ensemble.to_string()),
    ];
    write_csv_atomic(&csv_path, &meta, &POSTERIOR_COLUMNS, &table)?;
    let mut files = vec![csv_path];
    // long format so that the plotter can draw one curve per source
    let header: Vec<String> = ["t", "source", "value"].iter().map(|s| s.to_string()).collect();
    let mut long = Vec::new();
    for r in &outcome.rows {
        long.push(vec![r.t.to_string(), "y_true".into(), fmt_f64(r.y_true)]);
        long.push(vec![r.t.to_string(), "gp_mean".into(), fmt_opt(r.gp_mean)]);
        long.push(vec![r.t.to_string(), "ens_mean".into(), fmt_opt(r.ens_mean)]);
    }
    let spec = PlotSpec {
        x: "t".into(),
        y: "value".into(),
        group: vec!["source".into()],
        title: "GP posterior mean and trained ensemble mean".into(),
        ..PlotSpec::default()
    };
    if let Ok(svg) = render_svg(&spec, &header, &long) {
        let p = out_dir.join("posterior.svg");
        write_atomic(&p, svg.as_bytes())?;
        files.push(p);
    }
    Ok(RunSummary {
        files,
        rows: outcome.rows.len(),
        failed_cells: usize::from(!outcome.errors.is_empty()),
        config_hash: cfg.hash.clone(),
    })
}
