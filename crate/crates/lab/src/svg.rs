//! Minimal SVG plots: scatter, polylines and segments on linear or log axes.

use std::fmt::Write as _;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 480.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 150.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 55.0;

pub const PALETTE: [&str; 8] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f"];

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Mark {
    Dots { radius: f64 },
    Line,
    LineAndDots,
}

#[derive(Debug, Clone)]
struct Series {
    label: Option<String>,
    color: String,
    mark: Mark,
    points: Vec<(f64, f64)>,
}

#[derive(Debug, Clone)]
struct Segments {
    color: String,
    lines: Vec<((f64, f64), (f64, f64))>,
}

#[derive(Debug, Clone)]
pub struct Plot {
    title: String,
    x_label: String,
    y_label: String,
    x_log: bool,
    y_log: bool,
    x_range: Option<(f64, f64)>,
    y_range: Option<(f64, f64)>,
    series: Vec<Series>,
    segments: Vec<Segments>,
}

impl Plot {
    pub fn new(title: &str, x_label: &str, y_label: &str) -> Self {
        Plot {
            title: title.into(),
            x_label: x_label.into(),
            y_label: y_label.into(),
            x_log: false,
            y_log: false,
            x_range: None,
            y_range: None,
            series: Vec::new(),
            segments: Vec::new(),
        }
    }

    pub fn log_x(mut self) -> Self {
        self.x_log = true;
        self
    }

    pub fn log_y(mut self) -> Self {
        self.y_log = true;
        self
    }

    pub fn x_range(mut self, lo: f64, hi: f64) -> Self {
        self.x_range = Some((lo, hi));
        self
    }

    pub fn y_range(mut self, lo: f64, hi: f64) -> Self {
        self.y_range = Some((lo, hi));
        self
    }

    /// Adds a series; a `None` label keeps it out of the legend.
    pub fn series(&mut self, label: Option<&str>, color: &str, mark: Mark, points: Vec<(f64, f64)>) -> &mut Self {
        self.series.push(Series { label: label.map(Into::into), color: color.into(), mark, points });
        self
    }

    pub fn segments(&mut self, color: &str, lines: Vec<((f64, f64), (f64, f64))>) -> &mut Self {
        self.segments.push(Segments { color: color.into(), lines });
        self
    }

    fn usable(&self, v: f64, log: bool) -> bool {
        v.is_finite() && (!log || v > 0.0)
    }

    fn bounds(&self, axis: usize) -> (f64, f64) {
        let (fixed, log) = if axis == 0 { (self.x_range, self.x_log) } else { (self.y_range, self.y_log) };
        if let Some(r) = fixed {
            return r;
        }
        let pick = |p: &(f64, f64)| if axis == 0 { p.0 } else { p.1 };
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        let seg_points = self.segments.iter().flat_map(|s| s.lines.iter().flat_map(|(a, b)| [*a, *b]));
        for v in self.series.iter().flat_map(|s| s.points.iter().copied()).chain(seg_points).map(|p| pick(&p)) {
            if self.usable(v, log) {
                lo = lo.min(v);
                hi = hi.max(v);
            }
        }
        if !lo.is_finite() {
            return if log { (1.0, 10.0) } else { (0.0, 1.0) };
        }
        if log {
            (10f64.powf(lo.log10().floor()), 10f64.powf(hi.log10().ceil().max(lo.log10().floor() + 1.0)))
        } else if hi == lo {
            (lo - 0.5, hi + 0.5)
        } else {
            let pad = 0.05 * (hi - lo);
            (lo - pad, hi + pad)
        }
    }

    /// Renders the document. `stamp` goes into a leading comment.
    pub fn render(&self, stamp: Option<&str>) -> String {
        let (x0, x1) = self.bounds(0);
        let (y0, y1) = self.bounds(1);
        let (xl, yl) = (self.x_log, self.y_log);
        let plot_w = WIDTH - LEFT - RIGHT;
        let plot_h = HEIGHT - TOP - BOTTOM;
        let tx = |v: f64| {
            let f = if xl { (v.log10() - x0.log10()) / (x1.log10() - x0.log10()) } else { (v - x0) / (x1 - x0) };
            LEFT + f * plot_w
        };
        let ty = |v: f64| {
            let f = if yl { (v.log10() - y0.log10()) / (y1.log10() - y0.log10()) } else { (v - y0) / (y1 - y0) };
            TOP + (1.0 - f) * plot_h
        };

        let mut out = String::new();
        let _ = writeln!(out, r#"<?xml version="1.0" encoding="UTF-8"?>"#);
        if let Some(stamp) = stamp {
            let _ = writeln!(out, "<!-- generated {stamp} -->");
        }
        let _ = writeln!(
            out,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
        );
        let _ = writeln!(out, r#"<rect width="100%" height="100%" fill="white"/>"#);
        let _ =
            writeln!(out, r#"<text x="{}" y="22" text-anchor="middle" font-size="14">{}</text>"#, LEFT + plot_w / 2.0, escape(&self.title));
        let _ = writeln!(out, r##"<rect x="{LEFT}" y="{TOP}" width="{plot_w}" height="{plot_h}" fill="none" stroke="#333"/>"##);

        for v in ticks(x0, x1, xl) {
            let x = tx(v);
            let _ = writeln!(out, r##"<line x1="{x:.2}" y1="{}" x2="{x:.2}" y2="{}" stroke="#333"/>"##, TOP + plot_h, TOP + plot_h + 5.0);
            let _ = writeln!(out, r#"<text x="{x:.2}" y="{}" text-anchor="middle">{}</text>"#, TOP + plot_h + 18.0, tick_label(v, xl));
        }
        for v in ticks(y0, y1, yl) {
            let y = ty(v);
            let _ = writeln!(out, r##"<line x1="{}" y1="{y:.2}" x2="{LEFT}" y2="{y:.2}" stroke="#333"/>"##, LEFT - 5.0);
            let _ = writeln!(out, r#"<text x="{}" y="{:.2}" text-anchor="end">{}</text>"#, LEFT - 8.0, y + 4.0, tick_label(v, yl));
        }
        let _ = writeln!(
            out,
            r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
            LEFT + plot_w / 2.0,
            HEIGHT - 12.0,
            escape(&self.x_label)
        );
        let _ = writeln!(
            out,
            r#"<text x="16" y="{0}" text-anchor="middle" transform="rotate(-90 16 {0})">{1}</text>"#,
            TOP + plot_h / 2.0,
            escape(&self.y_label)
        );

        let _ = writeln!(out, r#"<clipPath id="area"><rect x="{LEFT}" y="{TOP}" width="{plot_w}" height="{plot_h}"/></clipPath>"#);
        let _ = writeln!(out, r#"<g clip-path="url(#area)">"#);
        for seg in &self.segments {
            for ((ax, ay), (bx, by)) in &seg.lines {
                if [*ax, *bx].iter().all(|v| self.usable(*v, xl)) && [*ay, *by].iter().all(|v| self.usable(*v, yl)) {
                    let _ = writeln!(
                        out,
                        r#"<line x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="{}" stroke-width="1"/>"#,
                        tx(*ax),
                        ty(*ay),
                        tx(*bx),
                        ty(*by),
                        seg.color
                    );
                }
            }
        }
        for s in &self.series {
            let pts: Vec<(f64, f64)> =
                s.points.iter().copied().filter(|(x, y)| self.usable(*x, xl) && self.usable(*y, yl)).map(|(x, y)| (tx(x), ty(y))).collect();
            if matches!(s.mark, Mark::Line | Mark::LineAndDots) && pts.len() > 1 {
                let path: Vec<String> = pts.iter().map(|(x, y)| format!("{x:.2},{y:.2}")).collect();
                let _ = writeln!(out, r#"<polyline fill="none" stroke="{}" stroke-width="1.2" points="{}"/>"#, s.color, path.join(" "));
            }
            let radius = match s.mark {
                Mark::Dots { radius } => Some(radius),
                Mark::LineAndDots => Some(3.0),
                Mark::Line => None,
            };
            if let Some(r) = radius {
                for (x, y) in &pts {
                    let _ = writeln!(out, r#"<circle cx="{x:.2}" cy="{y:.2}" r="{r}" fill="{}"/>"#, s.color);
                }
            }
        }
        let _ = writeln!(out, "</g>");

        let mut row = 0.0;
        for s in self.series.iter().filter(|s| s.label.is_some()) {
            let y = TOP + 12.0 + row * 18.0;
            let x = WIDTH - RIGHT + 12.0;
            let _ = writeln!(out, r#"<rect x="{x}" y="{}" width="12" height="12" fill="{}"/>"#, y - 10.0, s.color);
            let _ = writeln!(out, r#"<text x="{}" y="{y}">{}</text>"#, x + 18.0, escape(s.label.as_deref().unwrap_or_default()));
            row += 1.0;
        }
        out.push_str("</svg>\n");
        out
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn tick_label(v: f64, log: bool) -> String {
    if log {
        format!("1e{}", v.log10().round() as i32)
    } else {
        let s = format!("{:.3}", v);
        let s = s.trim_end_matches('0').trim_end_matches('.');
        if s == "-0" {
            "0".into()
        } else {
            s.into()
        }
    }
}

/// Decades for log axes, 1-2-5 steps for linear ones.
fn ticks(lo: f64, hi: f64, log: bool) -> Vec<f64> {
    if log {
        let (a, b) = (lo.log10().ceil() as i32, hi.log10().floor() as i32);
        let stride = ((b - a) / 8 + 1).max(1);
        return (a..=b).step_by(stride as usize).map(|k| 10f64.powi(k)).collect();
    }
    let raw = (hi - lo) / 6.0;
    let mag = 10f64.powf(raw.log10().floor());
    let step = [1.0, 2.0, 5.0, 10.0].iter().map(|m| m * mag).find(|s| *s >= raw).unwrap_or(10.0 * mag);
    let mut v = (lo / step).ceil() * step;
    let mut out = Vec::new();
    while v <= hi + 1e-9 * step {
        out.push(if v.abs() < 1e-12 * step { 0.0 } else { v });
        v += step;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn renders_series_and_legend() {
        let mut p = Plot::new("demo <1>", "x", "y");
        p.series(Some("data"), PALETTE[0], Mark::Dots { radius: 3.0 }, vec![(0.0, 0.0), (1.0, 2.0)]);
        p.series(None, PALETTE[1], Mark::Line, vec![(0.0, 1.0), (1.0, 1.0)]);
        p.segments("#999", vec![((0.0, 0.0), (1.0, 1.0))]);
        let svg = p.render(None);
        assert!(svg.starts_with("<?xml"));
        assert!(svg.trim_end().ends_with("</svg>"));
        assert_eq!(svg.matches("<circle").count(), 2);
        assert_eq!(svg.matches("<polyline").count(), 1);
        assert!(svg.contains("demo &lt;1&gt;"));
        assert!(!svg.contains("<!--"));
        assert!(p.render(Some("now")).contains("<!-- generated now -->"));
    }

    #[test]
    fn log_axes_skip_non_positive_values() {
        let mut p = Plot::new("t", "s", "d").log_y();
        p.series(Some("a"), PALETTE[0], Mark::LineAndDots, vec![(0.0, 1e-3), (1.0, 0.0), (2.0, 1.0)]);
        let svg = p.render(None);
        assert_eq!(svg.matches("<circle").count(), 2);
        assert!(svg.contains(">1e-3<"));
    }

    #[test]
    fn linear_ticks_are_round() {
        let t = ticks(0.0, 1.0, false);
        assert_eq!(t.len(), 6);
        for (k, v) in t.iter().enumerate() {
            assert!((v - 0.2 * k as f64).abs() < 1e-12);
        }
        assert_eq!(ticks(1e-5, 1e-1, true).len(), 5);
    }
}
