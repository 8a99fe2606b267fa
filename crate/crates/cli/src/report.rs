//! Wall-clock binning of episode rewards and the comparison plot.

use std::fmt::Write as _;
use std::path::Path;

use roboplanet::pipeline::MetricsRow;

use crate::CliError;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Bin {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
    /// `None` for an empty bin.
    pub mean: Option<f64>,
    /// Population standard deviation; `None` for an empty bin.
    pub std: Option<f64>,
}

impl Bin {
    pub fn center(&self) -> f64 {
        0.5 * (self.lo + self.hi)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BinnedSeries {
    pub label: String,
    pub budget_s: f64,
    pub bins: Vec<Bin>,
}

impl BinnedSeries {
    /// Mean of the last bin, if it has any points.
    pub fn final_mean(&self) -> Option<f64> {
        self.bins.last().and_then(|b| b.mean)
    }
}

fn edge(budget: f64, i: usize, n: usize) -> f64 {
    budget * i as f64 / n as f64
}

/// Bin of time `t`: `[lo, hi)` with the last bin closed at `budget`.
/// Times outside `[0, budget]` fall in no bin.
pub fn bin_index(t: f64, n_bins: usize, budget: f64) -> Option<usize> {
    if !(t >= 0.0 && t <= budget) {
        return None;
    }
    let mut i = ((t / budget) * n_bins as f64).floor() as usize;
    i = i.min(n_bins - 1);
    while i > 0 && t < edge(budget, i, n_bins) {
        i -= 1;
    }
    while i + 1 < n_bins && t >= edge(budget, i + 1, n_bins) {
        i += 1;
    }
    Some(i)
}

/// Pools `(time, reward)` points into `n_bins` equal bins over `[0, budget]`.
pub fn bin_points(
    points: impl IntoIterator<Item = (f64, f64)>,
    n_bins: usize,
    budget: f64,
) -> Result<Vec<Bin>, CliError> {
    if n_bins < 1 {
        return Err(CliError::Usage("--bins: must be at least 1".into()));
    }
    if !(budget > 0.0) {
        return Err(CliError::Usage("--budget-s: must be positive".into()));
    }
    let mut groups: Vec<Vec<f64>> = vec![Vec::new(); n_bins];
    for (t, r) in points {
        if let Some(i) = bin_index(t, n_bins, budget) {
            groups[i].push(r);
        }
    }
    Ok(groups
        .iter()
        .enumerate()
        .map(|(i, g)| {
            let n = g.len();
            let (mean, std) = if n == 0 {
                (None, None)
            } else {
                let m = g.iter().sum::<f64>() / n as f64;
                let var = g.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n as f64;
                (Some(m), Some(var.sqrt()))
            };
            Bin {
                lo: edge(budget, i, n_bins),
                hi: edge(budget, i + 1, n_bins),
                count: n,
                mean,
                std,
            }
        })
        .collect())
}

/// Bins episode rewards of one or more runs (seeds) under a shared label.
pub fn bin_metrics<'a>(
    runs: impl IntoIterator<Item = &'a [MetricsRow]>,
    n_bins: usize,
    budget: f64,
    label: &str,
) -> Result<BinnedSeries, CliError> {
    let points = runs
        .into_iter()
        .flat_map(|rows| rows.iter().map(|r| (r.wall_clock_s, r.episode_reward)));
    Ok(BinnedSeries {
        label: label.to_owned(),
        budget_s: budget,
        bins: bin_points(points, n_bins, budget)?,
    })
}

pub const SUMMARY_HEADER: &str = "label,bin,t_lo,t_hi,t_center,mean,std,count";

/// One line per (series, bin); empty bins leave mean and std blank.
pub fn summary_csv(series: &[BinnedSeries]) -> String {
    let mut out = format!("{SUMMARY_HEADER}\n");
    let opt = |v: Option<f64>| v.map(|x| format!("{x:?}")).unwrap_or_default();
    for s in series {
        for (i, b) in s.bins.iter().enumerate() {
            let _ = writeln!(
                out,
                "{},{i},{:?},{:?},{:?},{},{},{}",
                s.label,
                b.lo,
                b.hi,
                b.center(),
                opt(b.mean),
                opt(b.std),
                b.count
            );
        }
    }
    out
}

const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];
const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 440.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 170.0;
const TOP: f64 = 30.0;
const BOTTOM: f64 = 60.0;

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

/// Self-contained SVG: per series one polyline of bin means and one polygon
/// for the ±1 std band, drawn over non-empty bins only.
pub fn render_plot(series: &[BinnedSeries]) -> Result<String, CliError> {
    if series.is_empty() {
        return Err(CliError::Usage("plot: no series to draw".into()));
    }
    let t_max = series.iter().map(|s| s.budget_s).fold(0.0, f64::max);
    let (mut y_lo, mut y_hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for b in series.iter().flat_map(|s| &s.bins) {
        if let (Some(m), Some(sd)) = (b.mean, b.std) {
            y_lo = y_lo.min(m - sd);
            y_hi = y_hi.max(m + sd);
        }
    }
    if !y_lo.is_finite() {
        (y_lo, y_hi) = (0.0, 1.0);
    }
    if y_hi - y_lo < 1e-9 {
        y_hi = y_lo + 1.0;
    }
    let pad = 0.05 * (y_hi - y_lo);
    let (y_lo, y_hi) = (y_lo - pad, y_hi + pad);
    let plot_w = WIDTH - LEFT - RIGHT;
    let plot_h = HEIGHT - TOP - BOTTOM;
    let x = |t: f64| LEFT + plot_w * t / t_max;
    let y = |v: f64| TOP + plot_h * (1.0 - (v - y_lo) / (y_hi - y_lo));

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(svg, r#"<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
    let (x0, x1, y0, y1) = (LEFT, LEFT + plot_w, TOP + plot_h, TOP);
    let _ = writeln!(
        svg,
        r#"<g stroke="black" stroke-width="1"><line x1="{x0}" y1="{y0}" x2="{x1}" y2="{y0}"/><line x1="{x0}" y1="{y0}" x2="{x0}" y2="{y1}"/></g>"#
    );
    for k in 0..=5 {
        let t = t_max * k as f64 / 5.0;
        let v = y_lo + (y_hi - y_lo) * k as f64 / 5.0;
        let _ = writeln!(
            svg,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{:.0}</text>"#,
            x(t),
            y0 + 18.0,
            t
        );
        let _ = writeln!(
            svg,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{:.2}</text>"#,
            x0 - 6.0,
            y(v) + 4.0,
            v
        );
    }
    let _ = writeln!(
        svg,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">wall-clock seconds</text>"#,
        LEFT + plot_w / 2.0,
        HEIGHT - 15.0
    );
    let _ = writeln!(
        svg,
        r#"<text x="18" y="{:.2}" text-anchor="middle" transform="rotate(-90 18 {:.2})">episode reward</text>"#,
        TOP + plot_h / 2.0,
        TOP + plot_h / 2.0
    );

    for (k, s) in series.iter().enumerate() {
        let color = PALETTE[k % PALETTE.len()];
        let full: Vec<(f64, f64, f64)> = s
            .bins
            .iter()
            .filter_map(|b| Some((b.center(), b.mean?, b.std?)))
            .collect();
        let upper = full.iter().map(|(t, m, sd)| (x(*t), y(m + sd)));
        let lower = full.iter().rev().map(|(t, m, sd)| (x(*t), y(m - sd)));
        let band: Vec<String> = upper
            .chain(lower)
            .map(|(a, b)| format!("{a:.2},{b:.2}"))
            .collect();
        let line: Vec<String> = full
            .iter()
            .map(|(t, m, _)| format!("{:.2},{:.2}", x(*t), y(*m)))
            .collect();
        let label = escape(&s.label);
        let _ = writeln!(
            svg,
            r#"<polygon points="{}" fill="{color}" fill-opacity="0.2" stroke="none"><title>{label} ±1 std</title></polygon>"#,
            band.join(" ")
        );
        let _ = writeln!(
            svg,
            r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="2"><title>{label}</title></polyline>"#,
            line.join(" ")
        );
        let ly = TOP + 10.0 + 20.0 * k as f64;
        let lx = LEFT + plot_w + 15.0;
        let _ = writeln!(
            svg,
            r#"<rect x="{lx:.2}" y="{:.2}" width="20" height="4" fill="{color}"/><text x="{:.2}" y="{:.2}">{label}</text>"#,
            ly - 2.0,
            lx + 26.0,
            ly + 4.0
        );
    }
    svg.push_str("</svg>\n");
    Ok(svg)
}

pub fn emit_plot(series: &[BinnedSeries], path: &Path) -> Result<(), CliError> {
    let svg = render_plot(series)?;
    std::fs::write(path, svg).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}
