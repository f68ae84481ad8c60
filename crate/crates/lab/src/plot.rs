//! Small deterministic SVG line plots.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use anyhow::{anyhow, Result};

use crate::io::read_csv;

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum PlotKind {
    Mthr,
    GeminiStyleError,
    Pieces,
}

#[derive(Debug, Clone)]
pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
    /// Points drawn hollow (e.g. "no threshold found"), as (x, label).
    pub open_points: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct Figure {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub series: Vec<Series>,
    pub note: Option<String>,
}

/// The CSV did not have the columns the plot kind needs.
#[derive(Debug)]
pub struct SchemaError(pub String);

impl std::fmt::Display for SchemaError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for SchemaError {}

const W: f64 = 640.0;
const H: f64 = 420.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 150.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 60.0;
const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];

fn nice_step(span: f64) -> f64 {
    let raw = span / 5.0;
    let mag = 10f64.powf(raw.log10().floor());
    let frac = raw / mag;
    let nice = if frac <= 1.0 {
        1.0
    } else if frac <= 2.0 {
        2.0
    } else if frac <= 5.0 {
        5.0
    } else {
        10.0
    };
    nice * mag
}

fn axis_range(values: impl Iterator<Item = f64>) -> (f64, f64, f64) {
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for v in values {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    if !lo.is_finite() {
        return (0.0, 1.0, 0.2);
    }
    lo = lo.min(0.0);
    if hi <= lo {
        hi = lo + 1.0;
    }
    let step = nice_step(hi - lo);
    ((lo / step).floor() * step, (hi / step).ceil() * step, step)
}

fn num(x: f64) -> String {
    let s = format!("{:.2}", x);
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s == "-0" {
        "0".to_string()
    } else {
        s.to_string()
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

pub fn render(fig: &Figure) -> String {
    let (x0, x1, xs) = axis_range(
        fig.series
            .iter()
            .flat_map(|s| s.points.iter().map(|p| p.0).chain(s.open_points.iter().copied())),
    );
    let has_open = fig.series.iter().any(|s| !s.open_points.is_empty());
    let (y0, mut y1, ys) = axis_range(fig.series.iter().flat_map(|s| s.points.iter().map(|p| p.1)));
    if has_open {
        y1 += ys;
    }
    let pw = W - LEFT - RIGHT;
    let ph = H - TOP - BOTTOM;
    let px = |x: f64| LEFT + (x - x0) / (x1 - x0) * pw;
    let py = |y: f64| TOP + ph - (y - y0) / (y1 - y0) * ph;

    let mut s = String::new();
    let _ = writeln!(
        s,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" viewBox=\"0 0 {W} {H}\" font-family=\"sans-serif\" font-size=\"12\">"
    );
    let _ = writeln!(s, "<rect x=\"0\" y=\"0\" width=\"{W}\" height=\"{H}\" fill=\"white\"/>");
    let _ = writeln!(
        s,
        "<text x=\"{:.1}\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">{}</text>",
        LEFT + pw / 2.0,
        escape(&fig.title)
    );
    let _ = writeln!(
        s,
        "<path d=\"M{:.1} {:.1} L{:.1} {:.1} L{:.1} {:.1}\" fill=\"none\" stroke=\"black\"/>",
        LEFT,
        TOP,
        LEFT,
        TOP + ph,
        LEFT + pw,
        TOP + ph
    );
    let mut x = x0;
    while x <= x1 + xs * 1e-9 {
        let _ = writeln!(
            s,
            "<line x1=\"{0:.1}\" y1=\"{1:.1}\" x2=\"{0:.1}\" y2=\"{2:.1}\" stroke=\"black\"/><text x=\"{0:.1}\" y=\"{3:.1}\" text-anchor=\"middle\">{4}</text>",
            px(x),
            TOP + ph,
            TOP + ph + 5.0,
            TOP + ph + 19.0,
            num(x)
        );
        x += xs;
    }
    let mut y = y0;
    while y <= y1 + ys * 1e-9 {
        let _ = writeln!(
            s,
            "<line x1=\"{0:.1}\" y1=\"{1:.1}\" x2=\"{2:.1}\" y2=\"{1:.1}\" stroke=\"black\"/><text x=\"{3:.1}\" y=\"{4:.1}\" text-anchor=\"end\">{5}</text>",
            LEFT - 5.0,
            py(y),
            LEFT,
            LEFT - 8.0,
            py(y) + 4.0,
            num(y)
        );
        y += ys;
    }
    let _ = writeln!(
        s,
        "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\">{}</text>",
        LEFT + pw / 2.0,
        H - 18.0,
        escape(&fig.x_label)
    );
    let _ = writeln!(
        s,
        "<text x=\"18\" y=\"{0:.1}\" text-anchor=\"middle\" transform=\"rotate(-90 18 {0:.1})\">{1}</text>",
        TOP + ph / 2.0,
        escape(&fig.y_label)
    );
    for (i, series) in fig.series.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        if series.points.len() > 1 {
            let path: Vec<String> = series
                .points
                .iter()
                .enumerate()
                .map(|(k, p)| format!("{}{:.1} {:.1}", if k == 0 { "M" } else { "L" }, px(p.0), py(p.1)))
                .collect();
            let _ = writeln!(s, "<path d=\"{}\" fill=\"none\" stroke=\"{}\" stroke-width=\"1.5\"/>", path.join(" "), color);
        }
        for p in &series.points {
            let _ = writeln!(s, "<circle cx=\"{:.1}\" cy=\"{:.1}\" r=\"3.5\" fill=\"{}\"/>", px(p.0), py(p.1), color);
        }
        for &ox in &series.open_points {
            let _ = writeln!(
                s,
                "<circle cx=\"{:.1}\" cy=\"{:.1}\" r=\"3.5\" fill=\"white\" stroke=\"{}\"/>",
                px(ox),
                py(y1),
                color
            );
        }
        let ly = TOP + 10.0 + 18.0 * i as f64;
        let _ = writeln!(
            s,
            "<line x1=\"{0:.1}\" y1=\"{1:.1}\" x2=\"{2:.1}\" y2=\"{1:.1}\" stroke=\"{3}\" stroke-width=\"2\"/><text x=\"{4:.1}\" y=\"{5:.1}\">{6}</text>",
            W - RIGHT + 12.0,
            ly,
            W - RIGHT + 32.0,
            color,
            W - RIGHT + 37.0,
            ly + 4.0,
            escape(&series.name)
        );
    }
    if has_open {
        let ly = TOP + 10.0 + 18.0 * fig.series.len() as f64;
        let _ = writeln!(
            s,
            "<text x=\"{:.1}\" y=\"{:.1}\">open: none in grid</text>",
            W - RIGHT + 12.0,
            ly + 4.0
        );
    }
    if let Some(note) = &fig.note {
        let _ = writeln!(s, "<text x=\"{:.1}\" y=\"{:.1}\">{}</text>", LEFT + 10.0, TOP + 14.0, escape(note));
    }
    s.push_str("</svg>\n");
    s
}

fn column(header: &[String], name: &str, path: &Path) -> Result<usize> {
    header
        .iter()
        .position(|h| h == name)
        .ok_or_else(|| anyhow!(SchemaError(format!("{} has no column {:?}", path.display(), name))))
}

fn parse(v: &str, path: &Path) -> Result<f64> {
    v.parse::<f64>()
        .map_err(|_| anyhow!(SchemaError(format!("{}: {:?} is not a number", path.display(), v))))
}

/// Least-squares slope of `y` against `x`.
pub fn slope(points: &[(f64, f64)]) -> f64 {
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = points.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    sxy / sxx
}

/// Builds the figure for `kind` from a CSV file.
pub fn figure_from_csv(path: &Path, kind: PlotKind) -> Result<Figure> {
    let (header, rows) = read_csv(path)?;
    if rows.is_empty() {
        return Err(anyhow!(SchemaError(format!("{} has no rows", path.display()))));
    }
    match kind {
        PlotKind::Mthr => {
            let (cd, ct) = (column(&header, "d", path)?, column(&header, "m_thr", path)?);
            let mut series = Series {
                name: "m_thr".into(),
                points: vec![],
                open_points: vec![],
            };
            for r in &rows {
                let d = parse(&r[cd], path)?;
                if r[ct] == crate::sweep::NONE_IN_GRID {
                    series.open_points.push(d);
                } else {
                    series.points.push((d, parse(&r[ct], path)?));
                }
            }
            Ok(Figure {
                title: "Threshold vocabulary size".into(),
                x_label: "model dimension d".into(),
                y_label: "m_thr(d)".into(),
                series: vec![series],
                note: None,
            })
        }
        PlotKind::GeminiStyleError => {
            let (cd, cm, ce) = (
                column(&header, "d", path)?,
                column(&header, "m", path)?,
                column(&header, "mean_abs_error", path)?,
            );
            let mut by_d: BTreeMap<u64, Vec<(f64, f64)>> = BTreeMap::new();
            for r in &rows {
                let d = parse(&r[cd], path)?;
                by_d.entry(d as u64)
                    .or_default()
                    .push((parse(&r[cm], path)?, parse(&r[ce], path)?));
            }
            Ok(Figure {
                title: "Counting error against vocabulary size".into(),
                x_label: "vocabulary size m".into(),
                y_label: "mean absolute error".into(),
                series: by_d
                    .into_iter()
                    .map(|(d, mut points)| {
                        points.sort_by(|a, b| a.0.total_cmp(&b.0));
                        Series {
                            name: format!("d = {}", d),
                            points,
                            open_points: vec![],
                        }
                    })
                    .collect(),
                note: None,
            })
        }
        PlotKind::Pieces => {
            let (cn, cp) = (column(&header, "n", path)?, column(&header, "pieces", path)?);
            let cl = column(&header, "lemma1_lower_bound", path).ok();
            let mut pieces = vec![];
            let mut lower = vec![];
            for r in &rows {
                let n = parse(&r[cn], path)?;
                pieces.push((n, parse(&r[cp], path)?));
                if let Some(c) = cl {
                    lower.push((n, parse(&r[c], path)?));
                }
            }
            pieces.sort_by(|a, b| a.0.total_cmp(&b.0));
            lower.sort_by(|a, b| a.0.total_cmp(&b.0));
            let note = (pieces.len() > 1).then(|| format!("least-squares slope {:.3} pieces per unit n", slope(&pieces)));
            let mut series = vec![Series {
                name: "min pieces".into(),
                points: pieces,
                open_points: vec![],
            }];
            if !lower.is_empty() {
                series.push(Series {
                    name: "(n-1)/3 bound".into(),
                    points: lower,
                    open_points: vec![],
                });
            }
            Ok(Figure {
                title: "Pieces needed for 1/x on [1/n, 1]".into(),
                x_label: "n".into(),
                y_label: "linear pieces".into(),
                series,
                note,
            })
        }
    }
}
