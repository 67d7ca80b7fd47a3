use std::path::Path;

use rayon::prelude::*;

use super::config::ConfigMap;
use super::plot::{render_svg, PlotSpec};
use super::{fmt_f64, fmt_opt, write_csv_atomic, RunSummary};
use crate::gp::gp_prior_sample;
use crate::inputs::{gen_ar, gen_iid_gaussian, ArSpec};
use crate::kernels::{prior_kernel, KernelMethod};
use crate::linalg::RngStream;
use crate::mmd::{mmd2_unbiased, mmd_permutation_test, pooled_bandwidth, rbf_gp_baseline};
use crate::nets::{sample_cnn_prior, Activation, NetworkArch, Padding};
use crate::{Error, Result};

pub const PRIOR_MMD_COLUMNS: [&str; 16] = [
    "seed",
    "law",
    "activation",
    "depth",
    "filter_width",
    "d",
    "sigma_w2",
    "kernel_method",
    "n_cnn",
    "n_gp",
    "bandwidth",
    "mmd2",
    "p_value",
    "jitter_used",
    "config_hash",
    "error",
];

#[derive(Clone, Debug, PartialEq)]
pub enum InputLawSpec {
    Iid,
    Ar(String, ArSpec),
}

impl InputLawSpec {
    pub fn name(&self) -> &str {
        match self {
            InputLawSpec::Iid => "iid",
            InputLawSpec::Ar(name, _) => name,
        }
    }

    pub(crate) fn generate(&self, d: usize, stream: &RngStream) -> Result<Vec<f64>> {
        let s = stream.derive("input").derive(self.name());
        Ok(match self {
            InputLawSpec::Iid => gen_iid_gaussian(d, &s).values,
            InputLawSpec::Ar(_, spec) => gen_ar(spec, d, &s)?.values,
        })
    }

    pub(crate) fn parse_all(cfg: &mut ConfigMap, key: &str, default: &str) -> Result<Vec<Self>> {
        let names = cfg.list(key, default)?;
        let ar2 = cfg.f64_list("ar2_coeffs", "-0.6,0.2")?;
        names
            .iter()
            .map(|n| match n.as_str() {
                "iid" => Ok(InputLawSpec::Iid),
                "ar2" => ArSpec::with_defaults(ar2.clone())
                    .map(|s| InputLawSpec::Ar("ar2".into(), s))
                    .map_err(|e| Error::Config(format!("ar2_coeffs: {e}"))),
                other => Err(Error::Config(format!("`{key}`: unknown law `{other}` (iid, ar2)"))),
            })
            .collect()
    }
}

#[derive(Clone, Debug)]
pub struct PriorMmdConfig {
    pub filter_widths: Vec<usize>,
    pub depths: Vec<usize>,
    pub activations: Vec<Activation>,
    pub kernel_methods: Vec<KernelMethod>,
    pub laws: Vec<InputLawSpec>,
    pub d: usize,
    pub sigma_w2: f64,
    pub padding: Padding,
    pub n_cnn: usize,
    pub n_gp: usize,
    pub n_mc: usize,
    pub replicates: usize,
    /// `0` disables the permutation test.
    pub n_perm: usize,
    pub baseline: bool,
    pub hash: String,
}

impl PriorMmdConfig {
    pub fn from_map(mut c: ConfigMap) -> Result<Self> {
        let filter_widths = c.positive_usize_list("filter_widths", "2,4,8,16,32,48")?;
        let depths = c.positive_usize_list("depths", "1,2,3,5")?;
        let activations = c
            .list("activations", "linear,relu,tanh")?
            .iter()
            .map(|s| Activation::parse(s).ok_or_else(|| Error::Config(format!("unknown activation `{s}`"))))
            .collect::<Result<_>>()?;
        let kernel_methods = c
            .list("kernel_methods", "analytic,mc")?
            .iter()
            .map(|s| KernelMethod::parse(s).ok_or_else(|| Error::Config(format!("unknown kernel method `{s}`"))))
            .collect::<Result<_>>()?;
        let laws = InputLawSpec::parse_all(&mut c, "laws", "iid,ar2")?;
        let d = c.positive_usize("d", 50)?;
        let sigma_w2 = c.positive_f64("sigma_w2", 1.0)?;
        let padding_name = c.string("padding", "causal_same")?;
        let padding =
            Padding::parse(&padding_name).ok_or_else(|| Error::Config(format!("unknown padding `{padding_name}`")))?;
        let n_cnn = c.positive_usize("n_cnn", 500)?;
        let n_gp = c.positive_usize("n_gp", 500)?;
        let n_mc = c.positive_usize("n_mc", 1000)?;
        let replicates = c.positive_usize("replicates", 10)?;
        let n_perm = c.usize_value("n_perm", 0)?;
        let baseline = c.bool_value("baseline", true)?;
        if n_cnn < 2 || n_gp < 2 || n_mc < 2 {
            return Err(Error::Config("n_cnn, n_gp and n_mc must be at least 2".into()));
        }
        if n_perm != 0 && n_perm < 99 {
            return Err(Error::Config("n_perm must be 0 or at least 99".into()));
        }
        let hash = c.finish("prior-mmd")?;
        Ok(Self {
            filter_widths,
            depths,
            activations,
            kernel_methods,
            laws,
            d,
            sigma_w2,
            padding,
            n_cnn,
            n_gp,
            n_mc,
            replicates,
            n_perm,
            baseline,
            hash,
        })
    }

    pub fn defaults() -> Self {
        Self::from_map(ConfigMap::default()).expect("defaults are valid")
    }
}

/// One grid cell's outcome.
#[derive(Clone, Debug, PartialEq)]
pub struct PriorMmdRow {
    pub seed: u64,
    pub law: String,
    pub activation: String,
    pub depth: usize,
    pub filter_width: usize,
    pub kernel_method: String,
    pub bandwidth: Option<f64>,
    pub mmd2: Option<f64>,
    pub p_value: Option<f64>,
    pub jitter_used: Option<f64>,
    pub error: Option<String>,
}

impl PriorMmdRow {
    fn sort_key(&self) -> (String, String, usize, usize, String, u64) {
        (
            self.law.clone(),
            self.activation.clone(),
            self.depth,
            self.filter_width,
            self.kernel_method.clone(),
            self.seed,
        )
    }
}

#[derive(Clone, Debug)]
struct Cell {
    seed: u64,
    law: usize,
    activation: Activation,
    depth: usize,
    width: usize,
    method: KernelMethod,
}

fn run_cell(cfg: &PriorMmdConfig, cell: &Cell) -> PriorMmdRow {
    let law = &cfg.laws[cell.law];
    let mut row = PriorMmdRow {
        seed: cell.seed,
        law: law.name().to_string(),
        activation: cell.activation.name().to_string(),
        depth: cell.depth,
        filter_width: cell.width,
        kernel_method: cell.method.name().to_string(),
        bandwidth: None,
        mmd2: None,
        p_value: None,
        jitter_used: None,
        error: None,
    };
    let outcome = (|| -> Result<(f64, f64, Option<f64>, f64)> {
        let base = RngStream::new(cell.seed, 0);
        let x = law.generate(cfg.d, &base)?;
        let arch = NetworkArch::new(cell.depth, cell.width, cfg.sigma_w2, cell.activation).with_padding(cfg.padding);
        let key = format!("{}/{}/{}/{}", law.name(), cell.activation.name(), cell.depth, cell.width);
        let cnn = sample_cnn_prior(&x, &arch, cfg.n_cnn, &base.derive(&format!("cnn/{key}")))?;
        let k = prior_kernel(&x, &arch, cell.method, cfg.n_mc, &base.derive(&format!("kernel/{key}")))?;
        let mkey = format!("{key}/{}", cell.method.name());
        let gp = gp_prior_sample(&k.k, cfg.n_gp, &base.derive(&format!("gp/{mkey}")))?;
        let bw = pooled_bandwidth(&cnn, &gp.samples)?;
        let est = if cfg.n_perm > 0 {
            mmd_permutation_test(&cnn, &gp.samples, bw, cfg.n_perm, &base.derive(&format!("perm/{mkey}")))?
        } else {
            mmd2_unbiased(&cnn, &gp.samples, bw)?
        };
        Ok((bw, est.mmd2, est.p_value, gp.jitter_used))
    })();
    match outcome {
        Ok((bw, mmd2, p, jitter)) => {
            row.bandwidth = Some(bw);
            row.mmd2 = Some(mmd2);
            row.p_value = p;
            row.jitter_used = Some(jitter);
        }
        Err(e) => row.error = Some(e.to_string()),
    }
    row
}

fn baseline_row(cfg: &PriorMmdConfig, seed: u64) -> PriorMmdRow {
    let mut row = PriorMmdRow {
        seed,
        law: "none".into(),
        activation: "rbf_baseline".into(),
        depth: 0,
        filter_width: 0,
        kernel_method: "rbf".into(),
        bandwidth: None,
        mmd2: None,
        p_value: None,
        jitter_used: None,
        error: None,
    };
    match rbf_gp_baseline(cfg.d, cfg.n_gp, &RngStream::new(seed, 0).derive("baseline")) {
        Ok((est, jitter)) => {
            row.bandwidth = Some(est.bandwidth);
            row.mmd2 = Some(est.mmd2);
            row.jitter_used = Some(jitter);
        }
        Err(e) => row.error = Some(e.to_string()),
    }
    row
}

/// Computes every grid row, sorted by key columns. Seeds are `seed..seed + replicates`.
pub fn prior_mmd_rows(cfg: &PriorMmdConfig, seed: u64) -> Vec<PriorMmdRow> {
    let mut cells = Vec::new();
    for rep in 0..cfg.replicates as u64 {
        for law in 0..cfg.laws.len() {
            for &activation in &cfg.activations {
                for &depth in &cfg.depths {
                    for &width in &cfg.filter_widths {
                        for &method in &cfg.kernel_methods {
                            // no closed form for tanh; its kernel comes from the mc rows
                            if activation == Activation::Tanh && method == KernelMethod::Analytic {
                                continue;
                            }
                            cells.push(Cell { seed: seed + rep, law, activation, depth, width, method });
                        }
                    }
                }
            }
        }
    }
    let mut rows: Vec<PriorMmdRow> = cells.par_iter().map(|c| run_cell(cfg, c)).collect();
    if cfg.baseline {
        let base: Vec<PriorMmdRow> =
            (0..cfg.replicates as u64).into_par_iter().map(|r| baseline_row(cfg, seed + r)).collect();
        rows.extend(base);
    }
    rows.sort_by_key(PriorMmdRow::sort_key);
    rows
}

pub fn run_prior_mmd_grid(cfg: &PriorMmdConfig, out_dir: &Path, seed: u64) -> Result<RunSummary> {
    let rows = prior_mmd_rows(cfg, seed);
    let table: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                r.seed.to_string(),
                r.law.clone(),
                r.activation.clone(),
                r.depth.to_string(),
                r.filter_width.to_string(),
                cfg.d.to_string(),
                fmt_f64(cfg.sigma_w2),
                r.kernel_method.clone(),
                cfg.n_cnn.to_string(),
                cfg.n_gp.to_string(),
                fmt_opt(r.bandwidth),
                fmt_opt(r.mmd2),
                fmt_opt(r.p_value),
                fmt_opt(r.jitter_used),
                cfg.hash.clone(),
                r.error.clone().unwrap_or_default(),
            ]
        })
        .collect();
    let csv_path = out_dir.join("prior_mmd.csv");
    let meta = [
        ("experiment", "prior-mmd".to_string()),
        ("config_hash", cfg.hash.clone()),
        ("padding", cfg.padding.name().to_string()),
    ];
    write_csv_atomic(&csv_path, &meta, &PRIOR_MMD_COLUMNS, &table)?;
    let spec = PlotSpec {
        x: "filter_width".into(),
        y: "mmd2".into(),
        group: vec!["activation".into(), "depth".into()],
        filters: vec![
            ("law".into(), cfg.laws[0].name().to_string()),
            ("kernel_method".into(), cfg.kernel_methods[0].name().to_string()),
        ],
        title: "median MMD² between CNN and GP priors".into(),
        ..PlotSpec::default()
    };
    let header: Vec<String> = PRIOR_MMD_COLUMNS.iter().map(|s| s.to_string()).collect();
    let svg_path = out_dir.join("prior_mmd.svg");
    let mut files = vec![csv_path];
    if let Ok(svg) = render_svg(&spec, &header, &table) {
        super::write_atomic(&svg_path, svg.as_bytes())?;
        files.push(svg_path);
    }
    Ok(RunSummary {
        files,
        rows: rows.len(),
        failed_cells: rows.iter().filter(|r| r.error.is_some()).count(),
        config_hash: cfg.hash.clone(),
    })
}
