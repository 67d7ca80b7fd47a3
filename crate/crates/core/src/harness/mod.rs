//! Experiment orchestration: config files, seeded grids, CSV and SVG output.
//!
//! Every experiment reads a flat `key = value` config, runs its cells in
//! parallel, sorts the rows by their key columns and writes the CSV (and a
//! default SVG) atomically into the output directory.

mod angular;
mod clt;
mod config;
mod plot;
mod posterior;
mod prior;

use std::io::Write;
use std::path::{Path, PathBuf};

pub use angular::{run_angular, AngularConfig};
pub use clt::{run_clt, CltConfig};
pub use config::ConfigMap;
pub use plot::{plot_csv, render_svg, PlotSpec};
pub use posterior::{run_posterior_compare, PosteriorConfig};
pub use prior::{prior_mmd_rows, run_prior_mmd_grid, PriorMmdConfig, PriorMmdRow};

use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Experiment {
    PriorMmd,
    Posterior,
    Angular,
    CltBound,
    Plot,
}

impl Experiment {
    pub fn name(self) -> &'static str {
        match self {
            Experiment::PriorMmd => "prior-mmd",
            Experiment::Posterior => "posterior",
            Experiment::Angular => "angular",
            Experiment::CltBound => "clt-bound",
            Experiment::Plot => "plot",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        [Self::PriorMmd, Self::Posterior, Self::Angular, Self::CltBound, Self::Plot]
            .into_iter()
            .find(|e| e.name() == s)
    }
}

/// What a run wrote and how many of its cells failed.
#[derive(Clone, Debug)]
pub struct RunSummary {
    pub files: Vec<PathBuf>,
    pub rows: usize,
    pub failed_cells: usize,
    pub config_hash: String,
}

/// Parses `config_text` for `experiment` and runs it into `out_dir`.
pub fn run_experiment(experiment: Experiment, config_text: &str, out_dir: &Path, seed: u64) -> Result<RunSummary> {
    std::fs::create_dir_all(out_dir)?;
    let map = ConfigMap::parse(config_text)?;
    match experiment {
        Experiment::PriorMmd => run_prior_mmd_grid(&PriorMmdConfig::from_map(map)?, out_dir, seed),
        Experiment::Posterior => run_posterior_compare(&PosteriorConfig::from_map(map)?, out_dir, seed),
        Experiment::Angular => run_angular(&AngularConfig::from_map(map)?, out_dir, seed),
        Experiment::CltBound => run_clt(&CltConfig::from_map(map)?, out_dir, seed),
        Experiment::Plot => {
            let spec = PlotSpec::from_map(map)?;
            let path = plot_csv(&spec, out_dir)?;
            Ok(RunSummary { files: vec![path], rows: 0, failed_cells: 0, config_hash: spec.config_hash })
        }
    }
}

/// Runs `f` on a pool with `jobs` workers (`0` keeps the global pool).
pub fn with_jobs<T: Send>(jobs: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    if jobs == 0 {
        return Ok(f());
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    Ok(pool.install(f))
}

/// Shortest round-trip decimal form, so equal values print identically.
pub(crate) fn fmt_f64(v: f64) -> String {
    if v.is_nan() {
        "NaN".into()
    } else {
        format!("{v}")
    }
}

pub(crate) fn fmt_opt(v: Option<f64>) -> String {
    v.map(fmt_f64).unwrap_or_default()
}

/// Writes `# key=value` metadata lines followed by a CSV table, atomically.
pub(crate) fn write_csv_atomic(
    path: &Path,
    meta: &[(&str, String)],
    header: &[&str],
    rows: &[Vec<String>],
) -> Result<()> {
    let mut buf = Vec::new();
    for (k, v) in meta {
        writeln!(buf, "# {k}={v}")?;
    }
    {
        let mut w = csv::Writer::from_writer(&mut buf);
        w.write_record(header)?;
        for r in rows {
            w.write_record(r)?;
        }
        w.flush()?;
    }
    write_atomic(path, &buf)
}

pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    #[cfg(unix)]
    {
        use std::os::unix::fs::PermissionsExt;
        tmp.as_file().set_permissions(std::fs::Permissions::from_mode(0o644))?;
    }
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}
