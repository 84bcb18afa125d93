//! CSV tables with `#` metadata headers, and plain SVG line plots.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::config::Format;
use crate::error::{CliError, CliResult};

/// `key: value` lines written as `#` comments at the top of every file.
#[derive(Debug, Clone, Default)]
pub struct Metadata {
    entries: Vec<(String, String)>,
}

impl Metadata {
    pub fn push(&mut self, key: &str, value: impl ToString) {
        self.entries.push((key.to_string(), value.to_string()));
    }

    pub fn with(&self, key: &str, value: impl ToString) -> Self {
        let mut out = self.clone();
        out.push(key, value);
        out
    }

    fn write_to(&self, out: &mut String, prefix: &str, suffix: &str) {
        for (k, v) in &self.entries {
            let _ = writeln!(out, "{prefix}{k}: {v}{suffix}");
        }
    }
}

/// Shortest round-trip decimal form.
pub fn num(x: f64) -> String {
    format!("{x}")
}

/// `10 log10 x`, `None` for non-positive input.
pub fn db(x: f64) -> Option<f64> {
    (x > 0.0).then(|| 10.0 * x.log10())
}

pub struct Table {
    columns: Vec<String>,
    rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(columns: &[&str]) -> Self {
        Self { columns: columns.iter().map(|c| c.to_string()).collect(), rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<String>) {
        assert_eq!(row.len(), self.columns.len(), "row width");
        self.rows.push(row);
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn render(&self, meta: &Metadata) -> String {
        let mut out = String::new();
        meta.write_to(&mut out, "# ", "");
        out.push_str(&self.columns.join(","));
        out.push('\n');
        for row in &self.rows {
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Style {
    Line,
    Dashed,
    Markers,
}

pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
    pub style: Style,
}

impl Series {
    pub fn new(name: impl Into<String>, points: Vec<(f64, f64)>, style: Style) -> Self {
        Self { name: name.into(), points, style }
    }
}

pub struct Plot {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub log_x: bool,
    pub series: Vec<Series>,
}

const WIDTH: f64 = 760.0;
const HEIGHT: f64 = 480.0;
const LEFT: f64 = 80.0;
const RIGHT: f64 = 190.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 60.0;
const MAX_POINTS: usize = 2000;
const COLORS: [&str; 8] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf", "#8c564b", "#7f7f7f"];

fn nice_ticks(lo: f64, hi: f64) -> Vec<f64> {
    let span = hi - lo;
    let raw = span / 5.0;
    let mag = 10f64.powf(raw.log10().floor());
    let step = [1.0, 2.0, 5.0, 10.0].iter().map(|f| f * mag).find(|s| span / s <= 6.0).unwrap_or(10.0 * mag);
    let first = (lo / step).ceil() as i64;
    let last = (hi / step).floor() as i64;
    (first..=last).map(|i| i as f64 * step).collect()
}

fn label(x: f64) -> String {
    if x == 0.0 {
        return "0".into();
    }
    if x.abs() >= 1e4 || x.abs() < 1e-2 {
        format!("{x:.0e}")
    } else {
        let s = format!("{x:.3}");
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

impl Plot {
    /// Renders to a standalone SVG document. Non-finite points, and
    /// non-positive x on a log axis, are dropped; long series are thinned to
    /// at most 2000 points.
    pub fn render(&self, meta: &Metadata) -> String {
        let tx = |x: f64| if self.log_x { x.log10() } else { x };
        let series: Vec<(&Series, Vec<(f64, f64)>)> = self
            .series
            .iter()
            .map(|s| {
                let pts: Vec<(f64, f64)> = s
                    .points
                    .iter()
                    .filter(|(x, y)| x.is_finite() && y.is_finite() && (!self.log_x || *x > 0.0))
                    .map(|&(x, y)| (tx(x), y))
                    .collect();
                let stride = pts.len().div_ceil(MAX_POINTS).max(1);
                let mut thinned: Vec<(f64, f64)> = pts.iter().step_by(stride).copied().collect();
                if stride > 1 && pts.len() % stride != 1 {
                    thinned.push(*pts.last().unwrap());
                }
                (s, thinned)
            })
            .collect();

        let all = series.iter().flat_map(|(_, p)| p.iter());
        let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
        for &(x, y) in all {
            x0 = x0.min(x);
            x1 = x1.max(x);
            y0 = y0.min(y);
            y1 = y1.max(y);
        }
        if !x0.is_finite() {
            (x0, x1, y0, y1) = (0.0, 1.0, 0.0, 1.0);
        }
        if x1 - x0 < 1e-300 {
            x0 -= 0.5;
            x1 += 0.5;
        }
        let pad = ((y1 - y0) * 0.05).max(1e-12 * y1.abs().max(1.0));
        y0 -= pad;
        y1 += pad;

        let pw = WIDTH - LEFT - RIGHT;
        let ph = HEIGHT - TOP - BOTTOM;
        let px = |x: f64| LEFT + (x - x0) / (x1 - x0) * pw;
        let py = |y: f64| TOP + (y1 - y) / (y1 - y0) * ph;

        let mut out = String::new();
        meta.write_to(&mut out, "<!-- ", " -->");
        let _ = writeln!(
            out,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
        );
        let _ = writeln!(out, r#"<rect width="100%" height="100%" fill="white"/>"#);
        let _ = writeln!(
            out,
            r#"<text x="{}" y="24" text-anchor="middle" font-size="15">{}</text>"#,
            LEFT + pw / 2.0,
            escape(&self.title)
        );
        let _ = writeln!(out, r#"<rect x="{LEFT}" y="{TOP}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#);

        let decades: Vec<f64> = (x0.ceil() as i64..=x1.floor() as i64).map(|d| d as f64).collect();
        let log_decades = self.log_x && decades.len() >= 2;
        let x_ticks = if log_decades { decades } else { nice_ticks(x0, x1) };
        for t in x_ticks {
            let x = px(t);
            let text = match (self.log_x, log_decades) {
                (true, true) => format!("1e{t}"),
                (true, false) => label(10f64.powf(t)),
                _ => label(t),
            };
            let _ = writeln!(
                out,
                r##"<line x1="{x:.2}" y1="{TOP}" x2="{x:.2}" y2="{:.2}" stroke="#dddddd"/><text x="{x:.2}" y="{:.2}" text-anchor="middle">{text}</text>"##,
                TOP + ph,
                TOP + ph + 18.0
            );
        }
        for t in nice_ticks(y0, y1) {
            let y = py(t);
            let _ = writeln!(
                out,
                r##"<line x1="{LEFT}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="#dddddd"/><text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"##,
                LEFT + pw,
                LEFT - 6.0,
                y + 4.0,
                label(t)
            );
        }
        let _ = writeln!(
            out,
            r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
            LEFT + pw / 2.0,
            HEIGHT - 16.0,
            escape(&self.x_label)
        );
        let _ = writeln!(
            out,
            r#"<text transform="translate(20 {}) rotate(-90)" text-anchor="middle">{}</text>"#,
            TOP + ph / 2.0,
            escape(&self.y_label)
        );

        for (i, (s, pts)) in series.iter().enumerate() {
            let color = COLORS[i % COLORS.len()];
            match s.style {
                Style::Line | Style::Dashed => {
                    let dash = if s.style == Style::Dashed { r#" stroke-dasharray="6 4""# } else { "" };
                    let coords: Vec<String> = pts.iter().map(|&(x, y)| format!("{:.2},{:.2}", px(x), py(y))).collect();
                    let _ = writeln!(
                        out,
                        r#"<polyline fill="none" stroke="{color}" stroke-width="1.5"{dash} points="{}"/>"#,
                        coords.join(" ")
                    );
                }
                Style::Markers => {
                    for &(x, y) in pts {
                        let _ = writeln!(out, r#"<circle cx="{:.2}" cy="{:.2}" r="4" fill="{color}"/>"#, px(x), py(y));
                    }
                }
            }
            let ly = TOP + 14.0 + 18.0 * i as f64;
            let lx = WIDTH - RIGHT + 12.0;
            let _ = writeln!(
                out,
                r#"<line x1="{lx}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="3"/><text x="{}" y="{}">{}</text>"#,
                lx + 20.0,
                lx + 26.0,
                ly + 4.0,
                escape(&s.name)
            );
        }
        out.push_str("</svg>\n");
        out
    }
}

/// Files produced by a command, held in memory until everything succeeded.
pub struct Outputs {
    dir: PathBuf,
    formats: Vec<Format>,
    files: Vec<(PathBuf, String)>,
}

impl Outputs {
    pub fn new(dir: &Path, formats: &[Format]) -> Self {
        Self { dir: dir.to_path_buf(), formats: formats.to_vec(), files: Vec::new() }
    }

    pub fn csv(&mut self, name: &str, table: &Table, meta: &Metadata) {
        if self.formats.contains(&Format::Csv) {
            self.files.push((self.dir.join(format!("{name}.csv")), table.render(meta)));
        }
    }

    pub fn svg(&mut self, name: &str, plot: &Plot, meta: &Metadata) {
        if self.formats.contains(&Format::Svg) {
            self.files.push((self.dir.join(format!("{name}.svg")), plot.render(meta)));
        }
    }

    pub fn paths(&self) -> Vec<&Path> {
        self.files.iter().map(|(p, _)| p.as_path()).collect()
    }

    pub fn write_all(&self) -> CliResult<Vec<PathBuf>> {
        std::fs::create_dir_all(&self.dir)
            .map_err(|e| CliError::Output(format!("cannot create {}: {e}", self.dir.display())))?;
        for (path, body) in &self.files {
            std::fs::write(path, body)
                .map_err(|e| CliError::Output(format!("cannot write {}: {e}", path.display())))?;
        }
        Ok(self.files.iter().map(|(p, _)| p.clone()).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_has_metadata_then_header() {
        let mut meta = Metadata::default();
        meta.push("seed", 7);
        let mut t = Table::new(&["a", "b"]);
        t.push(vec![num(1.5), String::new()]);
        assert_eq!(t.render(&meta), "# seed: 7\na,b\n1.5,\n");
    }

    #[test]
    fn db_of_zero_is_absent() {
        assert_eq!(db(0.0), None);
        assert_eq!(db(100.0), Some(20.0));
    }

    #[test]
    fn svg_skips_non_finite_and_thins() {
        let points: Vec<(f64, f64)> = (0..10_000).map(|i| (i as f64, (i as f64).sqrt())).collect();
        let mut plot = Plot {
            title: "t <1>".into(),
            x_label: "x".into(),
            y_label: "y".into(),
            log_x: false,
            series: vec![Series::new("curve", points, Style::Line)],
        };
        plot.series.push(Series::new("bad", vec![(1.0, f64::NEG_INFINITY)], Style::Markers));
        let svg = plot.render(&Metadata::default());
        assert!(svg.contains("t &lt;1&gt;"));
        assert!(!svg.contains("NaN") && !svg.contains("inf"));
        let polyline = svg.lines().find(|l| l.starts_with("<polyline")).unwrap();
        let count = polyline.matches(',').count();
        assert!(count <= 2001 && count > 1000, "{count}");
    }

    #[test]
    fn ticks_cover_range() {
        let t = nice_ticks(-41.3, -18.2);
        assert!(t.len() >= 3 && t.len() <= 7);
        assert!(t.iter().all(|x| (-41.3..=-18.2).contains(x)));
    }
}
