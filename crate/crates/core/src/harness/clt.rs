use std::path::Path;

use rand::Rng;
use rand_distr::{Binomial, StandardNormal};
use rayon::prelude::*;

use super::config::ConfigMap;
use super::plot::{render_svg, PlotSpec};
use super::prior::InputLawSpec;
use super::{fmt_f64, fmt_opt, write_atomic, write_csv_atomic, RunSummary};
use crate::cltbound::{empirical_convex_discrepancy, iid_bound, layer1_bound, BoundMode, CltBoundReport};
use crate::gp::gp_prior_sample;
use crate::kernels::k1_same_input;
use crate::linalg::{Provenance, RngStream, SampleSet};
use crate::nets::{sample_cnn_prior, Activation, NetworkArch, Padding};
use crate::{Error, Result};

pub const CLT_COLUMNS: [&str; 13] = [
    "seed",
    "law",
    "M",
    "d_sub",
    "mode",
    "sum_third_moments",
    "d_quarter_factor",
    "bound_value",
    "empirical_discrepancy",
    "n_samples",
    "jitter_used",
    "config_hash",
    "error",
];

#[derive(Clone, Debug)]
pub struct CltConfig {
    pub filter_widths: Vec<usize>,
    pub d_subs: Vec<usize>,
    pub laws: Vec<InputLawSpec>,
    pub layer1: bool,
    pub iid: bool,
    pub d: usize,
    pub sigma_w2: f64,
    pub n_samples: usize,
    pub n_halfspaces: usize,
    pub replicates: usize,
    pub hash: String,
}

impl CltConfig {
    pub fn from_map(mut c: ConfigMap) -> Result<Self> {
        let filter_widths = c.positive_usize_list("filter_widths", "4,16,64,256")?;
        let d_subs = c.positive_usize_list("d_subs", "1,2,4")?;
        let laws = InputLawSpec::parse_all(&mut c, "laws", "iid,ar2")?;
        let modes = c.list("modes", "layer1_conditional,iid")?;
        let mut layer1 = false;
        let mut iid = false;
        for m in &modes {
            match m.as_str() {
                "layer1_conditional" => layer1 = true,
                "iid" => iid = true,
                other => return Err(Error::Config(format!("unknown mode `{other}`"))),
            }
        }
        let d = c.positive_usize("d", 300)?;
        let sigma_w2 = c.positive_f64("sigma_w2", 1.0)?;
        let n_samples = c.positive_usize("n_samples", 10_000)?;
        let n_halfspaces = c.positive_usize("n_halfspaces", 200)?;
        let replicates = c.positive_usize("replicates", 5)?;
        if n_halfspaces < 100 {
            return Err(Error::Config("`n_halfspaces` must be at least 100".into()));
        }
        if n_samples < 2 {
            return Err(Error::Config("`n_samples` must be at least 2".into()));
        }
        if d_subs.iter().any(|&s| s > d) {
            return Err(Error::Config("every d_sub must be at most d".into()));
        }
        let hash = c.finish("clt-bound")?;
        Ok(Self { filter_widths, d_subs, laws, layer1, iid, d, sigma_w2, n_samples, n_halfspaces, replicates, hash })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CltRow {
    pub seed: u64,
    pub law: String,
    pub m: usize,
    pub d_sub: usize,
    pub mode: BoundMode,
    pub report: Option<CltBoundReport>,
    pub empirical_discrepancy: Option<f64>,
    pub jitter_used: Option<f64>,
    pub error: Option<String>,
}

#[derive(Clone, Debug)]
enum Cell {
    Layer1 { seed: u64, law: usize, m: usize, d_sub: usize },
    Iid { seed: u64, m: usize, d_sub: usize },
}

fn layer1_cell(cfg: &CltConfig, seed: u64, law: &InputLawSpec, m: usize, d_sub: usize) -> Result<(CltBoundReport, f64, f64)> {
    let base = RngStream::new(seed, 0);
    let x = law.generate(cfg.d, &base)?;
    let report = layer1_bound(&x, m, cfg.sigma_w2, d_sub)?;
    // the last d_sub causal outputs only see the trailing d_sub + M inputs
    let offset = x.len().saturating_sub(d_sub + m);
    let xt = &x[offset..];
    let cols: Vec<usize> = (xt.len() - d_sub..xt.len()).collect();
    let key = format!("{}/{m}/{d_sub}", law.name());
    let arch = NetworkArch::new(1, m, cfg.sigma_w2, Activation::Linear).with_padding(Padding::CausalSame);
    let cnn = sample_cnn_prior(xt, &arch, cfg.n_samples, &base.derive(&format!("clt/cnn/{key}")))?.select_columns(&cols);
    let k = k1_same_input(xt, m, cfg.sigma_w2, Padding::CausalSame)?.k.select(&cols);
    let gp = gp_prior_sample(&k, cfg.n_samples, &base.derive(&format!("clt/gp/{key}")))?;
    let disc =
        empirical_convex_discrepancy(&cnn, &gp.samples, cfg.n_halfspaces, &base.derive(&format!("clt/dirs/{key}")))?;
    Ok((report, disc, gp.jitter_used))
}

fn iid_cell(cfg: &CltConfig, seed: u64, m: usize, d_sub: usize) -> Result<(CltBoundReport, f64, f64)> {
    let third = (d_sub as f64).powf(1.5);
    let report = iid_bound(m, d_sub, third)?;
    let base = RngStream::new(seed, 0);
    let key = format!("{m}/{d_sub}");
    let binom = Binomial::new(m as u64, 0.5).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let scale = 1.0 / (m as f64).sqrt();
    let n = cfg.n_samples;
    let mut rng = base.derive(&format!("clt/rademacher/{key}")).rng();
    let sums: Vec<f64> =
        (0..n * d_sub).map(|_| (2.0 * rng.sample(binom) as f64 - m as f64) * scale).collect();
    let mut rng = base.derive(&format!("clt/normal/{key}")).rng();
    let normal: Vec<f64> = (0..n * d_sub).map(|_| rng.sample(StandardNormal)).collect();
    let x = SampleSet::from_flat(n, d_sub, sums, Provenance::Other);
    let y = SampleSet::from_flat(n, d_sub, normal, Provenance::GpPrior);
    let disc = empirical_convex_discrepancy(&x, &y, cfg.n_halfspaces, &base.derive(&format!("clt/dirs/iid/{key}")))?;
    Ok((report, disc, 0.0))
}

/// All cells of the bound grid, sorted by mode, law, `M`, `d_sub` and seed.
pub fn clt_rows(cfg: &CltConfig, seed: u64) -> Vec<CltRow> {
    let mut cells = Vec::new();
    for rep in 0..cfg.replicates as u64 {
        for &m in &cfg.filter_widths {
            for &d_sub in &cfg.d_subs {
                if cfg.layer1 {
                    for law in 0..cfg.laws.len() {
                        cells.push(Cell::Layer1 { seed: seed + rep, law, m, d_sub });
                    }
                }
                if cfg.iid {
                    cells.push(Cell::Iid { seed: seed + rep, m, d_sub });
                }
            }
        }
    }
    let mut rows: Vec<CltRow> = cells
        .par_iter()
        .map(|cell| {
            let (seed, law, m, d_sub, mode, res) = match *cell {
                Cell::Layer1 { seed, law, m, d_sub } => {
                    let l = &cfg.laws[law];
                    (seed, l.name().to_string(), m, d_sub, BoundMode::Layer1Conditional, layer1_cell(cfg, seed, l, m, d_sub))
                }
                Cell::Iid { seed, m, d_sub } => {
                    (seed, "rademacher".to_string(), m, d_sub, BoundMode::Iid, iid_cell(cfg, seed, m, d_sub))
                }
            };
            let mut row = CltRow {
                seed,
                law,
                m,
                d_sub,
                mode,
                report: None,
                empirical_discrepancy: None,
                jitter_used: None,
                error: None,
            };
            match res {
                Ok((r, disc, jitter)) => {
                    row.report = Some(r);
                    row.empirical_discrepancy = Some(disc);
                    row.jitter_used = Some(jitter);
                }
                Err(e) => row.error = Some(e.to_string()),
            }
            row
        })
        .collect();
    rows.sort_by(|a, b| {
        (a.mode.name(), &a.law, a.m, a.d_sub, a.seed).cmp(&(b.mode.name(), &b.law, b.m, b.d_sub, b.seed))
    });
    rows
}

pub fn run_clt(cfg: &CltConfig, out_dir: &Path, seed: u64) -> Result<RunSummary> {
    let rows = clt_rows(cfg, seed);
    let table: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                r.seed.to_string(),
                r.law.clone(),
                r.m.to_string(),
                r.d_sub.to_string(),
                r.mode.name().to_string(),
                fmt_opt(r.report.as_ref().map(|x| x.sum_third_moments)),
                fmt_opt(r.report.as_ref().map(|x| x.d_quarter_factor)),
                fmt_opt(r.report.as_ref().map(|x| x.bound_value)),
                fmt_opt(r.empirical_discrepancy),
                cfg.n_samples.to_string(),
                fmt_opt(r.jitter_used),
                cfg.hash.clone(),
                r.error.clone().unwrap_or_default(),
            ]
        })
        .collect();
    let meta = [
        ("experiment", "clt-bound".to_string()),
        ("config_hash", cfg.hash.clone()),
        ("bound", "up to a universal constant set to 1".to_string()),
        ("sigma_w2", fmt_f64(cfg.sigma_w2)),
    ];
    let csv_path = out_dir.join("clt.csv");
    write_csv_atomic(&csv_path, &meta, &CLT_COLUMNS, &table)?;
    let mut files = vec![csv_path];
    let header: Vec<String> = CLT_COLUMNS.iter().map(|s| s.to_string()).collect();
    let spec = PlotSpec {
        x: "M".into(),
        y: "bound_value".into(),
        group: vec!["mode".into(), "law".into(), "d_sub".into()],
        title: "bound value (constant 1) against M".into(),
        ..PlotSpec::default()
    };
    if let Ok(svg) = render_svg(&spec, &header, &table) {
        let p = out_dir.join("clt.svg");
        write_atomic(&p, svg.as_bytes())?;
        files.push(p);
    }
    Ok(RunSummary {
        files,
        rows: rows.len(),
        failed_cells: rows.iter().filter(|r| r.error.is_some()).count(),
        config_hash: cfg.hash.clone(),
    })
}
