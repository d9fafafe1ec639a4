//! Minimal self-contained SVG charts. Output depends only on the data, so
//! identical inputs render byte-identical files.

use std::fmt::Write;

pub const WIDTH: f64 = 900.0;
pub const HEIGHT: f64 = 540.0;

const PALETTE: [&str; 10] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f",
    "#bcbd22", "#17becf",
];

const LEGEND_WIDTH: f64 = 190.0;

pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
}

fn escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            _ => out.push(c),
        }
    }
    out
}

fn color(i: usize) -> &'static str {
    PALETTE[i % PALETTE.len()]
}

fn tick_label(v: f64, span: f64) -> String {
    let decimals = if span >= 50.0 {
        0
    } else if span >= 5.0 {
        1
    } else if span >= 0.5 {
        2
    } else {
        3
    };
    let s = format!("{v:.decimals$}");
    // avoid "-0.00"
    if s.trim_start_matches('-').chars().all(|c| c == '0' || c == '.') {
        s.trim_start_matches('-').to_string()
    } else {
        s
    }
}

fn padded_range(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    if hi - lo <= f64::EPSILON * lo.abs().max(1.0) {
        let pad = if lo == 0.0 { 0.5 } else { 0.1 * lo.abs() };
        return (lo - pad, hi + pad);
    }
    let pad = 0.05 * (hi - lo);
    (lo - pad, hi + pad)
}

struct Panel {
    left: f64,
    top: f64,
    width: f64,
    height: f64,
    x: (f64, f64),
    y: (f64, f64),
}

impl Panel {
    fn sx(&self, x: f64) -> f64 {
        self.left + (x - self.x.0) / (self.x.1 - self.x.0) * self.width
    }

    fn sy(&self, y: f64) -> f64 {
        self.top + self.height - (y - self.y.0) / (self.y.1 - self.y.0) * self.height
    }

    fn axes(&self, doc: &mut Doc, x_label: &str, y_label: &str) {
        let (l, t, w, h) = (self.left, self.top, self.width, self.height);
        doc.push(format!(
            r##"<rect x="{l:.1}" y="{t:.1}" width="{w:.1}" height="{h:.1}" fill="none" stroke="#444" stroke-width="1"/>"##
        ));
        for i in 0..=4 {
            let f = i as f64 / 4.0;
            let xv = self.x.0 + f * (self.x.1 - self.x.0);
            let yv = self.y.0 + f * (self.y.1 - self.y.0);
            let px = self.sx(xv);
            let py = self.sy(yv);
            doc.push(format!(
                r##"<line x1="{px:.1}" y1="{:.1}" x2="{px:.1}" y2="{:.1}" stroke="#444"/>"##,
                t + h,
                t + h + 5.0
            ));
            doc.text(px, t + h + 18.0, "middle", 11, &tick_label(xv, self.x.1 - self.x.0));
            doc.push(format!(
                r##"<line x1="{l:.1}" y1="{py:.1}" x2="{:.1}" y2="{py:.1}" stroke="#ddd"/>"##,
                l + w
            ));
            doc.text(l - 6.0, py + 4.0, "end", 11, &tick_label(yv, self.y.1 - self.y.0));
        }
        doc.text(l + w / 2.0, t + h + 38.0, "middle", 13, x_label);
        let (cx, cy) = (l - 50.0, t + h / 2.0);
        doc.push(format!(
            r#"<text x="{cx:.1}" y="{cy:.1}" text-anchor="middle" font-size="13" transform="rotate(-90 {cx:.1} {cy:.1})">{}</text>"#,
            escape(y_label)
        ));
    }

    fn hline(&self, doc: &mut Doc, y: f64, stroke: &str) {
        if y > self.y.0 && y < self.y.1 {
            let py = self.sy(y);
            doc.push(format!(
                r#"<line x1="{:.1}" y1="{py:.1}" x2="{:.1}" y2="{py:.1}" stroke="{stroke}" stroke-dasharray="4 3"/>"#,
                self.left,
                self.left + self.width
            ));
        }
    }
}

struct Doc {
    body: String,
}

impl Doc {
    fn new(title: &str) -> Self {
        let mut body = String::new();
        let _ = writeln!(
            body,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif">"#
        );
        let _ = writeln!(body, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
        let mut doc = Doc { body };
        doc.text(WIDTH / 2.0, 26.0, "middle", 16, title);
        doc
    }

    fn push(&mut self, element: String) {
        self.body.push_str(&element);
        self.body.push('\n');
    }

    fn text(&mut self, x: f64, y: f64, anchor: &str, size: u32, s: &str) {
        self.push(format!(
            r#"<text x="{x:.1}" y="{y:.1}" text-anchor="{anchor}" font-size="{size}">{}</text>"#,
            escape(s)
        ));
    }

    fn legend(&mut self, labels: &[&str], left: f64, top: f64) {
        let max_rows = ((HEIGHT - top - 20.0) / 16.0) as usize;
        for (i, label) in labels.iter().enumerate().take(max_rows) {
            let y = top + 16.0 * i as f64;
            self.push(format!(
                r#"<rect x="{left:.1}" y="{:.1}" width="10" height="10" fill="{}"/>"#,
                y - 9.0,
                color(i)
            ));
            self.text(left + 16.0, y, "start", 11, label);
        }
        if labels.len() > max_rows {
            let y = top + 16.0 * max_rows as f64;
            self.text(left, y, "start", 11, &format!("+{} more", labels.len() - max_rows));
        }
    }

    fn finish(mut self) -> String {
        self.body.push_str("</svg>\n");
        self.body
    }
}

fn polyline(doc: &mut Doc, panel: &Panel, points: &[(f64, f64)], stroke: &str) {
    let finite: Vec<_> = points
        .iter()
        .filter(|(x, y)| x.is_finite() && y.is_finite())
        .collect();
    let mut path = String::new();
    for (i, &&(x, y)) in finite.iter().enumerate() {
        let _ = write!(path, "{}{:.1},{:.1}", if i == 0 { "" } else { " " }, panel.sx(x), panel.sy(y));
    }
    doc.push(format!(
        r#"<polyline points="{path}" fill="none" stroke="{stroke}" stroke-width="2"/>"#
    ));
    for &&(x, y) in &finite {
        doc.push(format!(
            r#"<circle cx="{:.1}" cy="{:.1}" r="3" fill="{stroke}"/>"#,
            panel.sx(x),
            panel.sy(y)
        ));
    }
}

fn plot_panel(left: f64, width: f64, series: &[Series]) -> Panel {
    let xs = series.iter().flat_map(|s| s.points.iter().map(|p| p.0));
    let ys = series.iter().flat_map(|s| s.points.iter().map(|p| p.1));
    Panel {
        left,
        top: 50.0,
        width,
        height: HEIGHT - 110.0,
        x: padded_range(xs),
        y: padded_range(ys),
    }
}

/// One line per series on shared axes, legend on the right.
pub fn line_chart(title: &str, x_label: &str, y_label: &str, series: &[Series]) -> String {
    let mut doc = Doc::new(title);
    let panel = plot_panel(80.0, WIDTH - 80.0 - LEGEND_WIDTH - 20.0, series);
    panel.axes(&mut doc, x_label, y_label);
    for (i, s) in series.iter().enumerate() {
        polyline(&mut doc, &panel, &s.points, color(i));
    }
    let labels: Vec<&str> = series.iter().map(|s| s.label.as_str()).collect();
    doc.legend(&labels, WIDTH - LEGEND_WIDTH, 60.0);
    doc.finish()
}

/// Two side-by-side single-series line panels.
pub fn twin_line_chart(
    title: &str,
    x_label: &str,
    left: (&str, &[(f64, f64)]),
    right: (&str, &[(f64, f64)]),
) -> String {
    let mut doc = Doc::new(title);
    let width = (WIDTH - 80.0 - 100.0 - 20.0) / 2.0;
    for (i, (y_label, points)) in [left, right].into_iter().enumerate() {
        let series = [Series {
            label: y_label.to_string(),
            points: points.to_vec(),
        }];
        let panel = plot_panel(80.0 + i as f64 * (width + 100.0), width, &series);
        panel.axes(&mut doc, x_label, y_label);
        polyline(&mut doc, &panel, points, color(i));
    }
    doc.finish()
}

/// Vertical bars with a zero baseline; positive bars in one color,
/// non-positive in another.
pub fn bar_chart(title: &str, y_label: &str, bars: &[(String, f64)]) -> String {
    let mut doc = Doc::new(title);
    let values = bars.iter().map(|b| b.1).chain([0.0]);
    let panel = Panel {
        left: 80.0,
        top: 50.0,
        width: WIDTH - 110.0,
        height: HEIGHT - 170.0,
        x: (0.0, bars.len().max(1) as f64),
        y: padded_range(values),
    };
    let (l, t, w, h) = (panel.left, panel.top, panel.width, panel.height);
    doc.push(format!(
        r##"<rect x="{l:.1}" y="{t:.1}" width="{w:.1}" height="{h:.1}" fill="none" stroke="#444"/>"##
    ));
    for i in 0..=4 {
        let yv = panel.y.0 + i as f64 / 4.0 * (panel.y.1 - panel.y.0);
        let py = panel.sy(yv);
        doc.push(format!(
            r##"<line x1="{l:.1}" y1="{py:.1}" x2="{:.1}" y2="{py:.1}" stroke="#ddd"/>"##,
            l + w
        ));
        doc.text(l - 6.0, py + 4.0, "end", 11, &tick_label(yv, panel.y.1 - panel.y.0));
    }
    let (cx, cy) = (l - 50.0, t + h / 2.0);
    doc.push(format!(
        r#"<text x="{cx:.1}" y="{cy:.1}" text-anchor="middle" font-size="13" transform="rotate(-90 {cx:.1} {cy:.1})">{}</text>"#,
        escape(y_label)
    ));
    panel.hline(&mut doc, 0.0, "#444");
    let zero = panel.sy(0.0);
    for (i, (label, v)) in bars.iter().enumerate() {
        let x0 = panel.sx(i as f64 + 0.15);
        let x1 = panel.sx(i as f64 + 0.85);
        let y = panel.sy(*v);
        let (top, height) = if y < zero { (y, zero - y) } else { (zero, y - zero) };
        let fill = if *v > 0.0 { PALETTE[0] } else { PALETTE[1] };
        doc.push(format!(
            r#"<rect x="{x0:.1}" y="{top:.1}" width="{:.1}" height="{height:.1}" fill="{fill}"/>"#,
            x1 - x0
        ));
        let cx = (x0 + x1) / 2.0;
        let ly = t + h + 12.0;
        doc.push(format!(
            r#"<text x="{cx:.1}" y="{ly:.1}" text-anchor="end" font-size="10" transform="rotate(-45 {cx:.1} {ly:.1})">{}</text>"#,
            escape(label)
        ));
    }
    doc.finish()
}

/// Counts of `values` in `bins` equal-width bins over `range`; values on the
/// upper edge fall in the last bin. A dashed line marks `marker`.
pub fn histogram(
    title: &str,
    x_label: &str,
    values: &[f64],
    bins: usize,
    range: (f64, f64),
    marker: Option<f64>,
) -> String {
    let mut counts = vec![0usize; bins];
    let width = (range.1 - range.0) / bins as f64;
    for &v in values.iter().filter(|v| v.is_finite()) {
        let b = (((v - range.0) / width).floor().max(0.0) as usize).min(bins - 1);
        counts[b] += 1;
    }
    let mut doc = Doc::new(title);
    let max = counts.iter().copied().max().unwrap_or(0).max(1) as f64;
    let panel = Panel {
        left: 80.0,
        top: 50.0,
        width: WIDTH - 110.0,
        height: HEIGHT - 110.0,
        x: range,
        y: (0.0, max * 1.1),
    };
    panel.axes(&mut doc, x_label, "count");
    for (i, &c) in counts.iter().enumerate() {
        if c == 0 {
            continue;
        }
        let x0 = panel.sx(range.0 + i as f64 * width);
        let x1 = panel.sx(range.0 + (i + 1) as f64 * width);
        let y = panel.sy(c as f64);
        doc.push(format!(
            r##"<rect x="{:.1}" y="{y:.1}" width="{:.1}" height="{:.1}" fill="{}" stroke="white"/>"##,
            x0,
            x1 - x0,
            panel.sy(0.0) - y,
            PALETTE[0]
        ));
    }
    if let Some(m) = marker.filter(|m| m.is_finite()) {
        let px = panel.sx(m);
        doc.push(format!(
            r##"<line x1="{px:.1}" y1="{:.1}" x2="{px:.1}" y2="{:.1}" stroke="{}" stroke-width="2" stroke-dasharray="6 4"/>"##,
            panel.top,
            panel.top + panel.height,
            PALETTE[1]
        ));
        doc.text(px + 4.0, panel.top + 14.0, "start", 11, &format!("median {m:.3}"));
    }
    doc.finish()
}

/// Points only, one color per series.
pub fn scatter(title: &str, x_label: &str, y_label: &str, series: &[Series]) -> String {
    let mut doc = Doc::new(title);
    let panel = plot_panel(80.0, WIDTH - 80.0 - LEGEND_WIDTH - 20.0, series);
    panel.axes(&mut doc, x_label, y_label);
    for (i, s) in series.iter().enumerate() {
        for &(x, y) in s.points.iter().filter(|(x, y)| x.is_finite() && y.is_finite()) {
            doc.push(format!(
                r#"<circle cx="{:.1}" cy="{:.1}" r="4" fill="{}" fill-opacity="0.8"/>"#,
                panel.sx(x),
                panel.sy(y),
                color(i)
            ));
        }
    }
    let labels: Vec<&str> = series.iter().map(|s| s.label.as_str()).collect();
    doc.legend(&labels, WIDTH - LEGEND_WIDTH, 60.0);
    doc.finish()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn series() -> Vec<Series> {
        vec![Series {
            label: "a<b".into(),
            points: vec![(0.0, 1.0), (50.0, 2.0), (100.0, f64::NAN)],
        }]
    }

    #[test]
    fn fixed_size_and_escaped() {
        let svg = line_chart("t & u", "x", "y", &series());
        assert!(svg.starts_with(r#"<svg xmlns="http://www.w3.org/2000/svg" width="900" height="540""#));
        assert!(svg.contains("a&lt;b"));
        assert!(svg.contains("t &amp; u"));
        assert!(!svg.contains("NaN"));
        assert!(svg.ends_with("</svg>\n"));
    }

    #[test]
    fn deterministic() {
        assert_eq!(line_chart("t", "x", "y", &series()), line_chart("t", "x", "y", &series()));
        let h = |v: &[f64]| histogram("h", "r", v, 20, (-1.0, 1.0), Some(0.5));
        assert_eq!(h(&[1.0, -1.0, 0.5]), h(&[1.0, -1.0, 0.5]));
    }

    #[test]
    fn degenerate_inputs_render() {
        let flat = [Series {
            label: "flat".into(),
            points: vec![(0.0, 0.3), (1.0, 0.3)],
        }];
        assert!(!line_chart("t", "x", "y", &flat).contains("NaN"));
        assert!(!bar_chart("b", "%", &[]).contains("NaN"));
        assert!(!histogram("h", "r", &[], 10, (-1.0, 1.0), None).contains("NaN"));
        assert!(!scatter("s", "x", "y", &[]).contains("NaN"));
    }

    #[test]
    fn tick_labels() {
        assert_eq!(tick_label(-0.0001, 1.0), "0.00");
        assert_eq!(tick_label(12.345, 100.0), "12");
        assert_eq!(tick_label(0.12345, 0.1), "0.123");
    }
}
