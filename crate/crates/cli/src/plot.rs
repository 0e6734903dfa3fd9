//! A small SVG plotting layer: line charts with an optional second axis,
//! heatmaps, and colored scatter plots. Output is deterministic text.

use std::fmt::Write;

const W: f64 = 760.0;
const H: f64 = 460.0;
const LEFT: f64 = 80.0;
const RIGHT: f64 = 80.0;
const TOP: f64 = 50.0;
const BOTTOM: f64 = 60.0;

pub const PALETTE: [&str; 6] = ["#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b"];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Axis {
    Left,
    Right,
}

#[derive(Clone, Debug)]
pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
    pub axis: Axis,
    pub dashed: bool,
    pub color: &'static str,
}

impl Series {
    pub fn new(name: &str, points: Vec<(f64, f64)>, axis: Axis, dashed: bool, color: &'static str) -> Self {
        Self {
            name: name.to_string(),
            points,
            axis,
            dashed,
            color,
        }
    }
}

#[derive(Clone, Copy, Debug, Default)]
pub struct Scale {
    pub log: bool,
}

#[derive(Clone, Debug, Default)]
pub struct LineChart {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    /// Label of the right axis; the axis is drawn only when some series uses it.
    pub y2_label: String,
    pub x_scale: Scale,
    pub y_scale: Scale,
    pub y2_scale: Scale,
    pub series: Vec<Series>,
    /// Vertical markers at data x positions.
    pub markers: Vec<(f64, String)>,
}

fn esc(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn fmt_num(v: f64) -> String {
    if v == 0.0 {
        return "0".into();
    }
    let a = v.abs();
    if !(1e-3..1e5).contains(&a) {
        format!("{v:.0e}")
    } else if a >= 100.0 {
        format!("{v:.0}")
    } else {
        let s = format!("{v:.3}");
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    }
}

/// Evenly spaced "nice" ticks covering `[lo, hi]`.
fn nice_ticks(lo: f64, hi: f64, target: usize) -> Vec<f64> {
    let span = hi - lo;
    if !(span > 0.0) {
        return vec![lo];
    }
    let raw = span / target.max(1) as f64;
    let mag = 10f64.powf(raw.log10().floor());
    let step = [1.0, 2.0, 5.0, 10.0]
        .iter()
        .map(|m| m * mag)
        .find(|s| span / s <= target as f64)
        .unwrap_or(10.0 * mag);
    let first = (lo / step).ceil() as i64;
    let last = (hi / step).floor() as i64;
    (first..=last).map(|k| k as f64 * step).collect()
}

/// Maps data to pixels along one axis.
#[derive(Clone, Copy, Debug)]
struct Mapper {
    lo: f64,
    hi: f64,
    log: bool,
    p0: f64,
    p1: f64,
}

impl Mapper {
    fn fit(values: impl Iterator<Item = f64>, log: bool, p0: f64, p1: f64) -> Self {
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for v in values.filter(|v| v.is_finite() && (!log || *v > 0.0)) {
            let t = if log { v.log10() } else { v };
            lo = lo.min(t);
            hi = hi.max(t);
        }
        if !lo.is_finite() {
            (lo, hi) = (0.0, 1.0);
        }
        if hi - lo < 1e-12 {
            let pad = if lo == 0.0 { 1.0 } else { lo.abs() * 0.1 };
            lo -= pad;
            hi += pad;
        } else if !log {
            let pad = 0.04 * (hi - lo);
            lo -= pad;
            hi += pad;
        }
        Self { lo, hi, log, p0, p1 }
    }

    fn map(&self, v: f64) -> Option<f64> {
        if !v.is_finite() || (self.log && v <= 0.0) {
            return None;
        }
        let t = if self.log { v.log10() } else { v };
        Some(self.p0 + (t - self.lo) / (self.hi - self.lo) * (self.p1 - self.p0))
    }

    fn ticks(&self) -> Vec<f64> {
        if self.log {
            let (a, b) = (self.lo.ceil() as i32, self.hi.floor() as i32);
            let every = ((b - a) / 8 + 1).max(1);
            (a..=b).step_by(every as usize).map(|e| 10f64.powi(e)).collect()
        } else {
            nice_ticks(self.lo, self.hi, 6)
        }
    }
}

fn header(out: &mut String, title: &str) {
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(out, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(
        out,
        r#"<text x="{}" y="28" text-anchor="middle" font-size="15">{}</text>"#,
        W / 2.0,
        esc(title)
    );
}

fn frame(out: &mut String) {
    let _ = writeln!(
        out,
        r#"<rect x="{LEFT}" y="{TOP}" width="{}" height="{}" fill="none" stroke="black"/>"#,
        W - LEFT - RIGHT,
        H - TOP - BOTTOM
    );
}

fn x_axis(out: &mut String, m: &Mapper, label: &str) {
    let y = H - BOTTOM;
    for t in m.ticks() {
        if let Some(x) = m.map(t) {
            let _ = writeln!(out, r#"<line x1="{x:.2}" y1="{y}" x2="{x:.2}" y2="{}" stroke="black"/>"#, y + 5.0);
            let _ = writeln!(
                out,
                r#"<text x="{x:.2}" y="{}" text-anchor="middle">{}</text>"#,
                y + 18.0,
                fmt_num(t)
            );
        }
    }
    let _ = writeln!(
        out,
        r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
        (LEFT + W - RIGHT) / 2.0,
        H - 18.0,
        esc(label)
    );
}

fn y_axis(out: &mut String, m: &Mapper, label: &str, axis: Axis) {
    let (x, dir, anchor, lx) = match axis {
        Axis::Left => (LEFT, -1.0, "end", 20.0),
        Axis::Right => (W - RIGHT, 1.0, "start", W - 16.0),
    };
    for t in m.ticks() {
        if let Some(y) = m.map(t) {
            let _ = writeln!(out, r#"<line x1="{x}" y1="{y:.2}" x2="{}" y2="{y:.2}" stroke="black"/>"#, x + 5.0 * dir);
            let _ = writeln!(
                out,
                r#"<text x="{}" y="{:.2}" text-anchor="{anchor}">{}</text>"#,
                x + 8.0 * dir,
                y + 4.0,
                fmt_num(t)
            );
        }
    }
    let cy = (TOP + H - BOTTOM) / 2.0;
    let _ = writeln!(
        out,
        r#"<text x="{lx}" y="{cy}" text-anchor="middle" transform="rotate(-90 {lx} {cy})">{}</text>"#,
        esc(label)
    );
}

fn polyline(out: &mut String, pts: &[(f64, f64)], color: &str, dashed: bool) {
    if pts.is_empty() {
        return;
    }
    let coords: Vec<String> = pts.iter().map(|(x, y)| format!("{x:.2},{y:.2}")).collect();
    let dash = if dashed { r#" stroke-dasharray="6 4""# } else { "" };
    let _ = writeln!(
        out,
        r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="1.5"{dash}/>"#,
        coords.join(" ")
    );
}

impl LineChart {
    pub fn render(&self) -> String {
        let mut out = String::new();
        header(&mut out, &self.title);
        let xm = Mapper::fit(
            self.series.iter().flat_map(|s| s.points.iter().map(|p| p.0)),
            self.x_scale.log,
            LEFT,
            W - RIGHT,
        );
        let on = |axis: Axis| self.series.iter().filter(move |s| s.axis == axis);
        let ym = Mapper::fit(
            on(Axis::Left).flat_map(|s| s.points.iter().map(|p| p.1)),
            self.y_scale.log,
            H - BOTTOM,
            TOP,
        );
        let y2m = Mapper::fit(
            on(Axis::Right).flat_map(|s| s.points.iter().map(|p| p.1)),
            self.y2_scale.log,
            H - BOTTOM,
            TOP,
        );
        frame(&mut out);
        x_axis(&mut out, &xm, &self.x_label);
        y_axis(&mut out, &ym, &self.y_label, Axis::Left);
        if on(Axis::Right).next().is_some() {
            y_axis(&mut out, &y2m, &self.y2_label, Axis::Right);
        }
        for s in &self.series {
            let m = if s.axis == Axis::Left { &ym } else { &y2m };
            // break the line at unplottable points
            let mut run = Vec::new();
            for &(x, y) in &s.points {
                match (xm.map(x), m.map(y)) {
                    (Some(px), Some(py)) => run.push((px, py)),
                    _ => {
                        polyline(&mut out, &run, s.color, s.dashed);
                        run.clear();
                    }
                }
            }
            polyline(&mut out, &run, s.color, s.dashed);
        }
        for (x, label) in &self.markers {
            if let Some(px) = xm.map(*x) {
                let _ = writeln!(
                    out,
                    r##"<line x1="{px:.2}" y1="{TOP}" x2="{px:.2}" y2="{}" stroke="#555" stroke-dasharray="2 3"/>"##,
                    H - BOTTOM
                );
                let _ = writeln!(
                    out,
                    r#"<text x="{:.2}" y="{}" font-size="11">{}</text>"#,
                    px + 3.0,
                    TOP + 14.0,
                    esc(label)
                );
            }
        }
        for (i, s) in self.series.iter().enumerate() {
            let y = TOP + 14.0 + 16.0 * i as f64;
            let x = LEFT + 12.0;
            let dash = if s.dashed { r#" stroke-dasharray="6 4""# } else { "" };
            let _ = writeln!(
                out,
                r#"<line x1="{x}" y1="{y}" x2="{}" y2="{y}" stroke="{}" stroke-width="2"{dash}/>"#,
                x + 24.0,
                s.color
            );
            let _ = writeln!(out, r#"<text x="{}" y="{}">{}</text>"#, x + 30.0, y + 4.0, esc(&s.name));
        }
        out.push_str("</svg>\n");
        out
    }
}

/// Linear blue-to-yellow ramp for `t ∈ [0, 1]`.
fn ramp(t: f64) -> String {
    let t = t.clamp(0.0, 1.0);
    let stops = [(68.0, 1.0, 84.0), (59.0, 82.0, 139.0), (33.0, 145.0, 140.0), (94.0, 201.0, 98.0), (253.0, 231.0, 37.0)];
    let pos = t * (stops.len() - 1) as f64;
    let i = (pos.floor() as usize).min(stops.len() - 2);
    let f = pos - i as f64;
    let lerp = |a: f64, b: f64| (a + (b - a) * f).round() as u8;
    let (a, b) = (stops[i], stops[i + 1]);
    format!("#{:02x}{:02x}{:02x}", lerp(a.0, b.0), lerp(a.1, b.1), lerp(a.2, b.2))
}

#[derive(Clone, Debug, Default)]
pub struct Heatmap {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub x_ticks: Vec<String>,
    pub y_ticks: Vec<String>,
    /// `values[row][col]`, row 0 at the bottom; `None` cells are grey.
    pub values: Vec<Vec<Option<f64>>>,
}

impl Heatmap {
    pub fn render(&self) -> String {
        let mut out = String::new();
        header(&mut out, &self.title);
        let rows = self.values.len().max(1);
        let cols = self.values.iter().map(Vec::len).max().unwrap_or(1).max(1);
        let finite: Vec<f64> = self.values.iter().flatten().flatten().copied().filter(|v| v.is_finite()).collect();
        let lo = finite.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = finite.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let cw = (W - LEFT - RIGHT) / cols as f64;
        let ch = (H - TOP - BOTTOM) / rows as f64;
        for (r, row) in self.values.iter().enumerate() {
            for (c, v) in row.iter().enumerate() {
                let x = LEFT + c as f64 * cw;
                let y = H - BOTTOM - (r + 1) as f64 * ch;
                let (fill, text) = match v {
                    Some(v) if v.is_finite() => {
                        let t = if hi > lo { (v - lo) / (hi - lo) } else { 0.5 };
                        (ramp(t), fmt_num(*v))
                    }
                    _ => ("#cccccc".to_string(), "n/a".to_string()),
                };
                let _ = writeln!(
                    out,
                    r#"<rect x="{x:.2}" y="{y:.2}" width="{cw:.2}" height="{ch:.2}" fill="{fill}" stroke="white"/>"#
                );
                let _ = writeln!(
                    out,
                    r#"<text x="{:.2}" y="{:.2}" text-anchor="middle" fill="black">{}</text>"#,
                    x + cw / 2.0,
                    y + ch / 2.0 + 4.0,
                    esc(&text)
                );
            }
        }
        frame(&mut out);
        for (c, t) in self.x_ticks.iter().enumerate() {
            let _ = writeln!(
                out,
                r#"<text x="{:.2}" y="{}" text-anchor="middle">{}</text>"#,
                LEFT + (c as f64 + 0.5) * cw,
                H - BOTTOM + 18.0,
                esc(t)
            );
        }
        for (r, t) in self.y_ticks.iter().enumerate() {
            let _ = writeln!(
                out,
                r#"<text x="{}" y="{:.2}" text-anchor="end">{}</text>"#,
                LEFT - 8.0,
                H - BOTTOM - (r as f64 + 0.5) * ch + 4.0,
                esc(t)
            );
        }
        let _ = writeln!(
            out,
            r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
            (LEFT + W - RIGHT) / 2.0,
            H - 18.0,
            esc(&self.x_label)
        );
        let cy = (TOP + H - BOTTOM) / 2.0;
        let _ = writeln!(
            out,
            r#"<text x="16" y="{cy}" text-anchor="middle" transform="rotate(-90 16 {cy})">{}</text>"#,
            esc(&self.y_label)
        );
        out.push_str("</svg>\n");
        out
    }
}

#[derive(Clone, Debug, Default)]
pub struct Scatter {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    /// Points colored along the ramp by their order.
    pub points: Vec<(f64, f64)>,
}

impl Scatter {
    pub fn render(&self) -> String {
        let mut out = String::new();
        header(&mut out, &self.title);
        let xm = Mapper::fit(self.points.iter().map(|p| p.0), false, LEFT, W - RIGHT);
        let ym = Mapper::fit(self.points.iter().map(|p| p.1), false, H - BOTTOM, TOP);
        frame(&mut out);
        x_axis(&mut out, &xm, &self.x_label);
        y_axis(&mut out, &ym, &self.y_label, Axis::Left);
        let n = self.points.len();
        for (i, &(x, y)) in self.points.iter().enumerate() {
            if let (Some(px), Some(py)) = (xm.map(x), ym.map(y)) {
                let t = if n > 1 { i as f64 / (n - 1) as f64 } else { 0.0 };
                let _ = writeln!(out, r#"<circle cx="{px:.2}" cy="{py:.2}" r="3" fill="{}"/>"#, ramp(t));
            }
        }
        out.push_str("</svg>\n");
        out
    }
}
