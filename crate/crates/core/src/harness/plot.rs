use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use super::config::ConfigMap;
use crate::{Error, Result};

/// Which columns to draw and how to group them.
///
/// Points sharing a group key and an x value are reduced to their median.
#[derive(Clone, Debug, PartialEq)]
pub struct PlotSpec {
    pub input: PathBuf,
    pub x: String,
    pub y: String,
    pub group: Vec<String>,
    /// `(column, value)` pairs a row must match.
    pub filters: Vec<(String, String)>,
    pub title: String,
    pub output: String,
    pub config_hash: String,
}

impl Default for PlotSpec {
    fn default() -> Self {
        Self {
            input: PathBuf::new(),
            x: String::new(),
            y: String::new(),
            group: Vec::new(),
            filters: Vec::new(),
            title: String::new(),
            output: "plot.svg".into(),
            config_hash: String::new(),
        }
    }
}

impl PlotSpec {
    pub fn from_map(mut c: ConfigMap) -> Result<Self> {
        let input = c
            .optional_string("input")
            .ok_or_else(|| Error::Config("plot needs `input = <csv path>`".into()))?;
        let x = c.optional_string("x").ok_or_else(|| Error::Config("plot needs `x`".into()))?;
        let y = c.optional_string("y").ok_or_else(|| Error::Config("plot needs `y`".into()))?;
        let group = match c.optional_string("group") {
            Some(g) => g.split(',').map(|s| s.trim().to_string()).filter(|s| !s.is_empty()).collect(),
            None => Vec::new(),
        };
        let filters = match c.optional_string("where") {
            Some(w) => w
                .split(',')
                .map(|f| {
                    f.split_once(':')
                        .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
                        .ok_or_else(|| Error::Config(format!("`where` entry `{f}` must be column:value")))
                })
                .collect::<Result<_>>()?,
            None => Vec::new(),
        };
        let title = c.string("title", &format!("{y} vs {x}"))?;
        let output = c.string("output", "plot.svg")?;
        if output.contains('/') || output.contains('\\') {
            return Err(Error::Config("`output` must be a file name".into()));
        }
        let config_hash = c.finish("plot")?;
        Ok(Self { input: PathBuf::from(input), x, y, group, filters, title, output, config_hash })
    }
}

/// Reads `spec.input` and writes `out_dir/spec.output`.
pub fn plot_csv(spec: &PlotSpec, out_dir: &Path) -> Result<PathBuf> {
    let mut rdr = csv::ReaderBuilder::new().comment(Some(b'#')).from_path(&spec.input)?;
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    let rows: Vec<Vec<String>> = rdr
        .records()
        .map(|r| r.map(|r| r.iter().map(str::to_string).collect()))
        .collect::<std::result::Result<_, _>>()?;
    let svg = render_svg(spec, &header, &rows)?;
    std::fs::create_dir_all(out_dir)?;
    let path = out_dir.join(&spec.output);
    super::write_atomic(&path, svg.as_bytes())?;
    Ok(path)
}

type Series = Vec<(String, Vec<(f64, f64)>)>;

fn aggregate(spec: &PlotSpec, header: &[String], rows: &[Vec<String>]) -> Result<Series> {
    let col = |name: &str| {
        header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::SchemaMismatch(format!("missing column `{name}`")))
    };
    let xi = col(&spec.x)?;
    let yi = col(&spec.y)?;
    let gi: Vec<usize> = spec.group.iter().map(|g| col(g)).collect::<Result<_>>()?;
    let fi: Vec<(usize, &str)> =
        spec.filters.iter().map(|(k, v)| Ok((col(k)?, v.as_str()))).collect::<Result<_>>()?;
    let num = |s: &str, name: &str| -> Result<f64> {
        s.parse()
            .map_err(|_| Error::SchemaMismatch(format!("column `{name}`: `{s}` is not a number")))
    };
    let mut groups: BTreeMap<Vec<String>, Vec<(f64, f64)>> = BTreeMap::new();
    for r in rows {
        if r.len() != header.len() {
            return Err(Error::SchemaMismatch(format!("row has {} fields, header has {}", r.len(), header.len())));
        }
        if fi.iter().any(|(i, v)| r[*i] != *v) || r[yi].is_empty() || r[xi].is_empty() {
            continue;
        }
        let key = gi.iter().map(|&i| r[i].clone()).collect();
        groups.entry(key).or_default().push((num(&r[xi], &spec.x)?, num(&r[yi], &spec.y)?));
    }
    if groups.is_empty() {
        return Err(Error::SchemaMismatch("no data rows to plot".into()));
    }
    let mut out = Vec::new();
    for (key, mut pts) in groups {
        pts.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
        let mut curve = Vec::new();
        let mut i = 0;
        while i < pts.len() {
            let mut j = i;
            while j < pts.len() && pts[j].0 == pts[i].0 {
                j += 1;
            }
            let ys: Vec<f64> = pts[i..j].iter().map(|p| p.1).collect();
            let n = ys.len();
            let med = if n % 2 == 1 { ys[n / 2] } else { 0.5 * (ys[n / 2 - 1] + ys[n / 2]) };
            curve.push((pts[i].0, med));
            i = j;
        }
        let label = spec.group.iter().zip(&key).map(|(g, v)| format!("{g}={v}")).collect::<Vec<_>>().join(" ");
        out.push((label, curve));
    }
    Ok(out)
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn tick_label(t: f64) -> String {
    let s = format!("{t:.6}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s == "-0" { "0".into() } else { s.to_string() }
}

fn nice_ticks(lo: f64, hi: f64) -> Vec<f64> {
    let span = hi - lo;
    let raw = span / 5.0;
    let mag = 10f64.powf(raw.log10().floor());
    let step = [1.0, 2.0, 5.0, 10.0].iter().map(|m| m * mag).find(|s| span / s <= 6.0).unwrap_or(10.0 * mag);
    let start = (lo / step).ceil() as i64;
    let end = (hi / step).floor() as i64;
    (start..=end).map(|k| k as f64 * step).collect()
}

const PALETTE: [&str; 10] =
    ["#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"];

/// Line plot of the median `y` per `x` for each group. Pure function of its inputs.
pub fn render_svg(spec: &PlotSpec, header: &[String], rows: &[Vec<String>]) -> Result<String> {
    let series = aggregate(spec, header, rows)?;
    let pts = series.iter().flat_map(|s| s.1.iter());
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in pts {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    if x1 - x0 <= 0.0 {
        x0 -= 0.5;
        x1 += 0.5;
    }
    if y1 - y0 <= 0.0 {
        let pad = if y0 == 0.0 { 1.0 } else { 0.05 * y0.abs() };
        y0 -= pad;
        y1 += pad;
    }
    let pad_y = 0.05 * (y1 - y0);
    y0 -= pad_y;
    y1 += pad_y;

    let (w, h) = (800.0, 480.0);
    let (left, right, top, bottom) = (70.0, 220.0, 40.0, 50.0);
    let pw = w - left - right;
    let ph = h - top - bottom;
    let sx = |x: f64| left + (x - x0) / (x1 - x0) * pw;
    let sy = |y: f64| top + (y1 - y) / (y1 - y0) * ph;

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{:.1}" y="22" text-anchor="middle" font-size="14">{}</text>"#,
        left + pw / 2.0,
        escape(&spec.title)
    );
    let _ = writeln!(
        s,
        r#"<rect x="{left}" y="{top}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#
    );
    for t in nice_ticks(x0, x1) {
        let px = sx(t);
        let _ = writeln!(
            s,
            r#"<line x1="{px:.2}" y1="{:.2}" x2="{px:.2}" y2="{:.2}" stroke="black"/><text x="{px:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
            top + ph,
            top + ph + 5.0,
            top + ph + 18.0,
            tick_label(t)
        );
    }
    for t in nice_ticks(y0, y1) {
        let py = sy(t);
        let _ = writeln!(
            s,
            r#"<line x1="{:.2}" y1="{py:.2}" x2="{left}" y2="{py:.2}" stroke="black"/><text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"#,
            left - 5.0,
            left - 8.0,
            py + 4.0,
            format!("{t:.3e}")
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
        left + pw / 2.0,
        h - 10.0,
        escape(&spec.x)
    );
    let _ = writeln!(
        s,
        r#"<text x="16" y="{:.1}" text-anchor="middle" transform="rotate(-90 16 {:.1})">{}</text>"#,
        top + ph / 2.0,
        top + ph / 2.0,
        escape(&spec.y)
    );
    for (i, (label, curve)) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let dash = if (i / PALETTE.len()) % 2 == 1 { r#" stroke-dasharray="5,3""# } else { "" };
        let path: Vec<String> = curve.iter().map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y))).collect();
        let _ = writeln!(
            s,
            r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="1.5"{dash}/>"#,
            path.join(" ")
        );
        for &(x, y) in curve {
            let _ = writeln!(s, r#"<circle cx="{:.2}" cy="{:.2}" r="2.5" fill="{color}"/>"#, sx(x), sy(y));
        }
        let ly = top + 10.0 + 16.0 * i as f64;
        let lx = left + pw + 12.0;
        let _ = writeln!(
            s,
            r#"<line x1="{lx:.1}" y1="{ly:.1}" x2="{:.1}" y2="{ly:.1}" stroke="{color}" stroke-width="2"{dash}/><text x="{:.1}" y="{:.1}">{}</text>"#,
            lx + 18.0,
            lx + 24.0,
            ly + 4.0,
            escape(if label.is_empty() { &spec.y } else { label })
        );
    }
    s.push_str("</svg>\n");
    Ok(s)
}
