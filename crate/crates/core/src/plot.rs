//! Minimal SVG output: line plots (optionally log-log) and heatmaps.
//! Output is plain text with fixed-precision numbers so that equal inputs
//! give byte-identical files.

use std::fmt::Write as _;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 420.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 150.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 55.0;

const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f",
];

#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
}

impl Series {
    pub fn new(name: impl Into<String>, points: Vec<(f64, f64)>) -> Self {
        Series {
            name: name.into(),
            points,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct LinePlot {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub log_x: bool,
    pub log_y: bool,
    pub series: Vec<Series>,
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

struct Axis {
    log: bool,
    lo: f64,
    hi: f64,
}

impl Axis {
    fn fit(values: impl Iterator<Item = f64>, log: bool) -> Axis {
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for v in values {
            let v = if log { v.log10() } else { v };
            lo = lo.min(v);
            hi = hi.max(v);
        }
        if !lo.is_finite() {
            lo = 0.0;
            hi = 1.0;
        }
        if log {
            lo = lo.floor();
            hi = hi.ceil();
        }
        if hi - lo < 1e-12 {
            lo -= 0.5;
            hi += 0.5;
        }
        Axis { log, lo, hi }
    }

    fn frac(&self, v: f64) -> f64 {
        let v = if self.log { v.log10() } else { v };
        (v - self.lo) / (self.hi - self.lo)
    }

    fn ticks(&self) -> Vec<(f64, String)> {
        if self.log {
            let step = ((self.hi - self.lo) / 8.0).ceil().max(1.0) as i64;
            let (lo, hi) = (self.lo as i64, self.hi as i64);
            (lo..=hi)
                .step_by(step as usize)
                .map(|e| (10f64.powi(e as i32), format!("1e{e}")))
                .collect()
        } else {
            (0..=5)
                .map(|i| {
                    let v = self.lo + (self.hi - self.lo) * i as f64 / 5.0;
                    (v, format!("{v:.3}"))
                })
                .collect()
        }
    }

    fn usable(&self, v: f64) -> bool {
        v.is_finite() && (!self.log || v > 0.0)
    }
}

impl LinePlot {
    /// Points that cannot be drawn (non-finite, or non-positive on a log
    /// axis) are dropped.
    pub fn to_svg(&self) -> String {
        let probe_x = Axis { log: self.log_x, lo: 0.0, hi: 1.0 };
        let probe_y = Axis { log: self.log_y, lo: 0.0, hi: 1.0 };
        let kept: Vec<Vec<(f64, f64)>> = self
            .series
            .iter()
            .map(|s| {
                s.points
                    .iter()
                    .copied()
                    .filter(|&(x, y)| probe_x.usable(x) && probe_y.usable(y))
                    .collect()
            })
            .collect();
        let xa = Axis::fit(kept.iter().flatten().map(|p| p.0), self.log_x);
        let ya = Axis::fit(kept.iter().flatten().map(|p| p.1), self.log_y);
        let pw = WIDTH - LEFT - RIGHT;
        let ph = HEIGHT - TOP - BOTTOM;
        let px = |x: f64| LEFT + xa.frac(x) * pw;
        let py = |y: f64| TOP + (1.0 - ya.frac(y)) * ph;

        let mut s = String::new();
        let _ = writeln!(
            s,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" font-family="sans-serif" font-size="11">"#
        );
        let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="22" text-anchor="middle" font-size="14">{}</text>"#,
            LEFT + pw / 2.0,
            escape(&self.title)
        );
        let _ = writeln!(
            s,
            r#"<rect x="{LEFT}" y="{TOP}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#
        );
        for (v, label) in xa.ticks() {
            let x = px(v);
            let _ = writeln!(
                s,
                r##"<line x1="{x:.2}" y1="{:.2}" x2="{x:.2}" y2="{TOP}" stroke="#dddddd"/><text x="{x:.2}" y="{:.2}" text-anchor="middle">{label}</text>"##,
                TOP + ph,
                TOP + ph + 15.0
            );
        }
        for (v, label) in ya.ticks() {
            let y = py(v);
            let _ = writeln!(
                s,
                r##"<line x1="{LEFT}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="#dddddd"/><text x="{:.2}" y="{:.2}" text-anchor="end">{label}</text>"##,
                LEFT + pw,
                LEFT - 5.0,
                y + 4.0
            );
        }
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
            LEFT + pw / 2.0,
            HEIGHT - 12.0,
            escape(&self.x_label)
        );
        let _ = writeln!(
            s,
            r#"<text x="16" y="{:.1}" text-anchor="middle" transform="rotate(-90 16 {:.1})">{}</text>"#,
            TOP + ph / 2.0,
            TOP + ph / 2.0,
            escape(&self.y_label)
        );
        for (i, (series, pts)) in self.series.iter().zip(&kept).enumerate() {
            let color = PALETTE[i % PALETTE.len()];
            if pts.len() > 1 {
                let path: Vec<String> = pts.iter().map(|&(x, y)| format!("{:.2},{:.2}", px(x), py(y))).collect();
                let _ = writeln!(
                    s,
                    r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#,
                    path.join(" ")
                );
            }
            for &(x, y) in pts {
                let _ = writeln!(s, r#"<circle cx="{:.2}" cy="{:.2}" r="2.5" fill="{color}"/>"#, px(x), py(y));
            }
            let ly = TOP + 12.0 + 16.0 * i as f64;
            let lx = LEFT + pw + 10.0;
            let _ = writeln!(
                s,
                r#"<line x1="{lx:.1}" y1="{ly:.1}" x2="{:.1}" y2="{ly:.1}" stroke="{color}" stroke-width="2"/><text x="{:.1}" y="{:.1}">{}</text>"#,
                lx + 18.0,
                lx + 22.0,
                ly + 4.0,
                escape(&series.name)
            );
        }
        s.push_str("</svg>\n");
        s
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Heatmap {
    pub title: String,
    pub row_label: String,
    pub col_label: String,
    pub row_names: Vec<String>,
    pub col_names: Vec<String>,
    /// `values[row][col]`; NaN marks a missing cell.
    pub values: Vec<Vec<f64>>,
    /// Raster cells per grid interval. 1 draws flat cells.
    pub upsample: usize,
}

/// Bilinear interpolation of a grid at fractional coordinates. Missing
/// neighbours are ignored and their weight redistributed.
pub fn bilinear(values: &[Vec<f64>], r: f64, c: f64) -> f64 {
    let nr = values.len();
    let nc = values.first().map_or(0, Vec::len);
    if nr == 0 || nc == 0 {
        return f64::NAN;
    }
    let r = r.clamp(0.0, (nr - 1) as f64);
    let c = c.clamp(0.0, (nc - 1) as f64);
    let (r0, c0) = (r.floor() as usize, c.floor() as usize);
    let (r1, c1) = ((r0 + 1).min(nr - 1), (c0 + 1).min(nc - 1));
    let (fr, fc) = (r - r0 as f64, c - c0 as f64);
    let mut acc = 0.0;
    let mut wsum = 0.0;
    for (ri, wr) in [(r0, 1.0 - fr), (r1, fr)] {
        for (ci, wc) in [(c0, 1.0 - fc), (c1, fc)] {
            let w = wr * wc;
            let v = values[ri][ci];
            if w > 0.0 && v.is_finite() {
                acc += w * v;
                wsum += w;
            }
        }
    }
    if wsum > 0.0 {
        acc / wsum
    } else {
        f64::NAN
    }
}

fn colormap(t: f64) -> String {
    const STOPS: [(f64, [f64; 3]); 5] = [
        (0.0, [68.0, 1.0, 84.0]),
        (0.25, [59.0, 82.0, 139.0]),
        (0.5, [33.0, 145.0, 140.0]),
        (0.75, [94.0, 201.0, 98.0]),
        (1.0, [253.0, 231.0, 37.0]),
    ];
    let t = t.clamp(0.0, 1.0);
    let mut i = 0;
    while i + 2 < STOPS.len() && t > STOPS[i + 1].0 {
        i += 1;
    }
    let (t0, a) = STOPS[i];
    let (t1, b) = STOPS[i + 1];
    let f = (t - t0) / (t1 - t0);
    let c: Vec<u8> = (0..3).map(|k| (a[k] + f * (b[k] - a[k])).round() as u8).collect();
    format!("#{:02x}{:02x}{:02x}", c[0], c[1], c[2])
}

impl Heatmap {
    pub fn to_svg(&self) -> String {
        let nr = self.values.len();
        let nc = self.values.first().map_or(0, Vec::len);
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for v in self.values.iter().flatten().filter(|v| v.is_finite()) {
            lo = lo.min(*v);
            hi = hi.max(*v);
        }
        if !lo.is_finite() {
            lo = 0.0;
            hi = 1.0;
        }
        if hi - lo < 1e-12 {
            hi = lo + 1.0;
        }
        let pw = WIDTH - LEFT - RIGHT;
        let ph = HEIGHT - TOP - BOTTOM;
        let mut s = String::new();
        let _ = writeln!(
            s,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" font-family="sans-serif" font-size="11">"#
        );
        let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="22" text-anchor="middle" font-size="14">{}</text>"#,
            LEFT + pw / 2.0,
            escape(&self.title)
        );
        if nr > 0 && nc > 0 {
            let up = self.upsample.max(1);
            // Raster spans cell centres; flat cells when a dimension has one entry.
            let sr = if nr > 1 { (nr - 1) * up } else { 1 };
            let sc = if nc > 1 { (nc - 1) * up } else { 1 };
            let (cw, ch) = (pw / sc as f64, ph / sr as f64);
            for i in 0..sr {
                for j in 0..sc {
                    let r = if nr > 1 { (i as f64 + 0.5) / up as f64 } else { 0.0 };
                    let c = if nc > 1 { (j as f64 + 0.5) / up as f64 } else { 0.0 };
                    let v = bilinear(&self.values, r, c);
                    let fill = if v.is_finite() {
                        colormap((v - lo) / (hi - lo))
                    } else {
                        "#cccccc".to_string()
                    };
                    // Row 0 at the bottom.
                    let y = TOP + ph - (i + 1) as f64 * ch;
                    let _ = writeln!(
                        s,
                        r#"<rect x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="{fill}"/>"#,
                        LEFT + j as f64 * cw,
                        y,
                        cw + 0.3,
                        ch + 0.3
                    );
                }
            }
            let cx = |j: usize| if nc > 1 { LEFT + j as f64 * pw / (nc - 1) as f64 } else { LEFT + pw / 2.0 };
            let cy = |i: usize| if nr > 1 { TOP + ph - i as f64 * ph / (nr - 1) as f64 } else { TOP + ph / 2.0 };
            for (i, row) in self.values.iter().enumerate() {
                for (j, v) in row.iter().enumerate() {
                    let text = if v.is_finite() { format!("{v:.2}") } else { "NA".into() };
                    let _ = writeln!(
                        s,
                        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle" fill="white" stroke="black" stroke-width="0.3">{text}</text>"#,
                        cx(j),
                        cy(i) + 4.0
                    );
                }
            }
            for (j, name) in self.col_names.iter().enumerate().take(nc) {
                let _ = writeln!(
                    s,
                    r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
                    cx(j),
                    TOP + ph + 15.0,
                    escape(name)
                );
            }
            for (i, name) in self.row_names.iter().enumerate().take(nr) {
                let _ = writeln!(
                    s,
                    r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"#,
                    LEFT - 5.0,
                    cy(i) + 4.0,
                    escape(name)
                );
            }
        }
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
            LEFT + pw / 2.0,
            HEIGHT - 12.0,
            escape(&self.col_label)
        );
        let _ = writeln!(
            s,
            r#"<text x="16" y="{:.1}" text-anchor="middle" transform="rotate(-90 16 {:.1})">{}</text>"#,
            TOP + ph / 2.0,
            TOP + ph / 2.0,
            escape(&self.row_label)
        );
        let bx = LEFT + pw + 20.0;
        for k in 0..=10 {
            let t = k as f64 / 10.0;
            let _ = writeln!(
                s,
                r#"<rect x="{bx:.1}" y="{:.2}" width="16" height="{:.2}" fill="{}"/>"#,
                TOP + (1.0 - t) * ph * 10.0 / 11.0,
                ph / 11.0 + 0.3,
                colormap(t)
            );
        }
        let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}">{hi:.3}</text>"#, bx + 20.0, TOP + 10.0);
        let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}">{lo:.3}</text>"#, bx + 20.0, TOP + ph);
        s.push_str("</svg>\n");
        s
    }
}
