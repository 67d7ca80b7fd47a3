use std::f64::consts::PI;
use std::path::Path;

use super::config::ConfigMap;
use super::plot::{render_svg, PlotSpec};
use super::{fmt_f64, write_atomic, write_csv_atomic, RunSummary};
use crate::kernels::{angular_kernel_curve, angular_spread, AngularModel, AngularPoint};
use crate::{Error, Result};

pub const ANGULAR_COLUMNS: [&str; 10] =
    ["model", "depth", "theta1", "theta2", "value", "filter_width", "sigma_w2", "seed", "jitter_used", "config_hash"];

pub const SPREAD_COLUMNS: [&str; 6] = ["model", "theta2", "depth", "spread", "seed", "config_hash"];

#[derive(Clone, Debug)]
pub struct AngularConfig {
    pub filter_width: usize,
    pub sigma_w2: f64,
    pub theta2: Vec<f64>,
    pub depth: usize,
    pub grid_points: usize,
    pub hash: String,
}

impl AngularConfig {
    pub fn from_map(mut c: ConfigMap) -> Result<Self> {
        let filter_width = c.positive_usize("filter_width", 2)?;
        if filter_width < 2 {
            return Err(Error::Config("`filter_width` must be at least 2".into()));
        }
        // default scaling keeps σ_w² M = 1.6
        let sigma_w2 = c.positive_f64("sigma_w2", 1.6 / filter_width as f64)?;
        let theta2 = c.f64_list("theta2", "0.5,3")?;
        if theta2.iter().any(|t| !(0.0..=PI).contains(t)) {
            return Err(Error::Config("`theta2` entries must lie in [0, pi]".into()));
        }
        let depth = c.positive_usize("depth", 5)?;
        let grid_points = c.positive_usize("grid_points", 64)?;
        if grid_points < 2 {
            return Err(Error::Config("`grid_points` must be at least 2".into()));
        }
        let hash = c.finish("angular")?;
        Ok(Self { filter_width, sigma_w2, theta2, depth, grid_points, hash })
    }

    pub fn theta1_grid(&self) -> Vec<f64> {
        let n = self.grid_points;
        (0..n).map(|i| PI * i as f64 / (n - 1) as f64).collect()
    }
}

/// Curve points for every `theta2`, sorted by model, `theta2`, depth and `theta1`.
pub fn angular_points(cfg: &AngularConfig) -> Result<Vec<AngularPoint>> {
    let grid = cfg.theta1_grid();
    let mut pts = Vec::new();
    for &t2 in &cfg.theta2 {
        pts.extend(angular_kernel_curve(&grid, t2, cfg.depth, cfg.filter_width, cfg.sigma_w2)?);
    }
    pts.sort_by(|a, b| {
        (a.model.name(), a.theta2, a.depth)
            .partial_cmp(&(b.model.name(), b.theta2, b.depth))
            .expect("finite")
            .then(a.theta1.total_cmp(&b.theta1))
    });
    Ok(pts)
}

pub fn run_angular(cfg: &AngularConfig, out_dir: &Path, seed: u64) -> Result<RunSummary> {
    let pts = angular_points(cfg)?;
    let table: Vec<Vec<String>> = pts
        .iter()
        .map(|p| {
            vec![
                p.model.name().to_string(),
                p.depth.to_string(),
                fmt_f64(p.theta1),
                fmt_f64(p.theta2),
                fmt_f64(p.value),
                cfg.filter_width.to_string(),
                fmt_f64(cfg.sigma_w2),
                seed.to_string(),
                "0".into(),
                cfg.hash.clone(),
            ]
        })
        .collect();
    let meta = [("experiment", "angular".to_string()), ("config_hash", cfg.hash.clone())];
    let csv_path = out_dir.join("angular.csv");
    write_csv_atomic(&csv_path, &meta, &ANGULAR_COLUMNS, &table)?;

    let mut spread_rows = Vec::new();
    for model in [AngularModel::Conv, AngularModel::Fnn] {
        for &t2 in &cfg.theta2 {
            let subset: Vec<AngularPoint> = pts.iter().filter(|p| p.theta2 == t2).copied().collect();
            for depth in 1..=cfg.depth {
                spread_rows.push(vec![
                    model.name().to_string(),
                    fmt_f64(t2),
                    depth.to_string(),
                    fmt_f64(angular_spread(&subset, model, depth)),
                    seed.to_string(),
                    cfg.hash.clone(),
                ]);
            }
        }
    }
    let spread_path = out_dir.join("angular_spread.csv");
    write_csv_atomic(&spread_path, &meta, &SPREAD_COLUMNS, &spread_rows)?;

    let header: Vec<String> = ANGULAR_COLUMNS.iter().map(|s| s.to_string()).collect();
    let mut files = vec![csv_path, spread_path];
    for (i, &t2) in cfg.theta2.iter().enumerate() {
        let spec = PlotSpec {
            x: "theta1".into(),
            y: "value".into(),
            group: vec!["model".into(), "depth".into()],
            filters: vec![("theta2".into(), fmt_f64(t2))],
            title: format!("kernel value against theta1, theta2 = {}", fmt_f64(t2)),
            ..PlotSpec::default()
        };
        let svg = render_svg(&spec, &header, &table)?;
        let p = out_dir.join(format!("angular_{i}.svg"));
        write_atomic(&p, svg.as_bytes())?;
        files.push(p);
    }
    Ok(RunSummary { files, rows: pts.len(), failed_cells: 0, config_hash: cfg.hash.clone() })
}
