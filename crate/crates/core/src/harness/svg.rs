//! Minimal standalone SVG line and grouped-bar charts.

use std::fmt::Write;

const W: f64 = 640.0;
const H: f64 = 400.0;
const LEFT: f64 = 64.0;
const RIGHT: f64 = 150.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 56.0;
const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"];

#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn fmt_tick(v: f64) -> String {
    if v.abs() >= 100.0 || v.fract() == 0.0 {
        format!("{v:.0}")
    } else {
        format!("{v:.2}")
    }
}

struct Frame {
    x0: f64,
    x1: f64,
    y0: f64,
    y1: f64,
}

impl Frame {
    fn px(&self, x: f64) -> f64 {
        LEFT + (x - self.x0) / (self.x1 - self.x0).max(1e-12) * (W - LEFT - RIGHT)
    }

    fn py(&self, y: f64) -> f64 {
        H - BOTTOM - (y - self.y0) / (self.y1 - self.y0).max(1e-12) * (H - TOP - BOTTOM)
    }
}

fn header(out: &mut String, title: &str, x_label: &str, y_label: &str) {
    let _ = write!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">
<rect width="{W}" height="{H}" fill="white"/>
<text x="{}" y="22" text-anchor="middle" font-size="15">{}</text>
<text x="{}" y="{}" text-anchor="middle">{}</text>
<text x="16" y="{}" text-anchor="middle" transform="rotate(-90 16 {})">{}</text>
"#,
        (W - RIGHT + LEFT) / 2.0,
        escape(title),
        (W - RIGHT + LEFT) / 2.0,
        H - 12.0,
        escape(x_label),
        (H - BOTTOM + TOP) / 2.0,
        (H - BOTTOM + TOP) / 2.0,
        escape(y_label),
    );
}

fn axes(out: &mut String, f: &Frame, x_ticks: &[(f64, String)]) {
    let _ = writeln!(
        out,
        r#"<path d="M{l} {t} V{b} H{r}" fill="none" stroke="black"/>"#,
        l = LEFT,
        t = TOP,
        b = H - BOTTOM,
        r = W - RIGHT
    );
    for i in 0..=4 {
        let y = f.y0 + (f.y1 - f.y0) * i as f64 / 4.0;
        let py = f.py(y);
        let _ = writeln!(
            out,
            r##"<line x1="{LEFT}" y1="{py:.1}" x2="{:.1}" y2="{py:.1}" stroke="#ddd"/><text x="{:.1}" y="{:.1}" text-anchor="end">{}</text>"##,
            W - RIGHT,
            LEFT - 6.0,
            py + 4.0,
            fmt_tick(y)
        );
    }
    for (x, label) in x_ticks {
        let px = f.px(*x);
        let _ = writeln!(
            out,
            r#"<text x="{px:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
            H - BOTTOM + 16.0,
            escape(label)
        );
    }
}

fn legend(out: &mut String, names: &[&str]) {
    for (i, name) in names.iter().enumerate() {
        let y = TOP + 10.0 + 18.0 * i as f64;
        let _ = writeln!(
            out,
            r#"<rect x="{:.1}" y="{:.1}" width="12" height="12" fill="{}"/><text x="{:.1}" y="{:.1}">{}</text>"#,
            W - RIGHT + 12.0,
            y - 10.0,
            COLORS[i % COLORS.len()],
            W - RIGHT + 30.0,
            y,
            escape(name)
        );
    }
}

fn y_range(values: impl Iterator<Item = f64>, zero_based: bool) -> (f64, f64) {
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for v in values.filter(|v| v.is_finite()) {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    if zero_based {
        lo = lo.min(0.0);
    }
    if hi - lo < 1e-9 {
        hi = lo + 1.0;
    }
    (lo, hi)
}

/// Line chart; `log2_x` spaces the x axis logarithmically (slice sizes).
pub fn line_chart(title: &str, x_label: &str, y_label: &str, series: &[Series], log2_x: bool) -> String {
    let tx = |x: f64| if log2_x { x.max(1e-12).log2() } else { x };
    let xs: Vec<f64> = series.iter().flat_map(|s| s.points.iter().map(|p| p.0)).collect();
    let (x0, x1) = y_range(xs.iter().map(|&x| tx(x)), false);
    let (y0, y1) = y_range(series.iter().flat_map(|s| s.points.iter().map(|p| p.1)), true);
    let f = Frame { x0, x1, y0, y1 };
    let mut ticks: Vec<f64> = xs.clone();
    ticks.sort_by(f64::total_cmp);
    ticks.dedup();
    let ticks: Vec<(f64, String)> = ticks.into_iter().map(|x| (tx(x), fmt_tick(x))).collect();
    let mut out = String::new();
    header(&mut out, title, x_label, y_label);
    axes(&mut out, &f, &ticks);
    for (i, s) in series.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        let pts: Vec<String> = s
            .points
            .iter()
            .filter(|p| p.1.is_finite())
            .map(|&(x, y)| format!("{:.1},{:.1}", f.px(tx(x)), f.py(y)))
            .collect();
        let _ = writeln!(
            out,
            r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="2"/>"#,
            pts.join(" ")
        );
        for p in &pts {
            let (x, y) = p.split_once(',').expect("formatted pair");
            let _ = writeln!(out, r#"<circle cx="{x}" cy="{y}" r="3" fill="{color}"/>"#);
        }
    }
    let names: Vec<&str> = series.iter().map(|s| s.name.as_str()).collect();
    legend(&mut out, &names);
    out.push_str("</svg>\n");
    out
}

/// Grouped bars: `categories` along x, one bar per series in each group.
pub fn bar_chart(title: &str, x_label: &str, y_label: &str, categories: &[String], series: &[(String, Vec<f64>)]) -> String {
    let (y0, y1) = y_range(series.iter().flat_map(|s| s.1.iter().copied()), true);
    let n = categories.len().max(1) as f64;
    let f = Frame {
        x0: 0.0,
        x1: n,
        y0,
        y1,
    };
    let ticks: Vec<(f64, String)> = categories
        .iter()
        .enumerate()
        .map(|(i, c)| (i as f64 + 0.5, c.clone()))
        .collect();
    let mut out = String::new();
    header(&mut out, title, x_label, y_label);
    axes(&mut out, &f, &ticks);
    let group = (f.px(1.0) - f.px(0.0)) * 0.8;
    let bar = group / series.len().max(1) as f64;
    for (k, (_, values)) in series.iter().enumerate() {
        let color = COLORS[k % COLORS.len()];
        for (i, &v) in values.iter().enumerate() {
            let x = f.px(i as f64 + 0.1) + bar * k as f64;
            let (ya, yb) = (f.py(v.max(y0)), f.py(y0.max(0.0)));
            let _ = writeln!(
                out,
                r#"<rect x="{x:.1}" y="{:.1}" width="{:.1}" height="{:.1}" fill="{color}"/>"#,
                ya.min(yb),
                bar.max(0.5),
                (yb - ya).abs()
            );
        }
    }
    let names: Vec<&str> = series.iter().map(|s| s.0.as_str()).collect();
    legend(&mut out, &names);
    out.push_str("</svg>\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn charts_are_well_formed() {
        let s = line_chart(
            "F1 <by> slice",
            "slice",
            "F1",
            &[Series {
                name: "a".into(),
                points: vec![(1.0, 0.2), (4.0, 0.5), (64.0, f64::NAN)],
            }],
            true,
        );
        assert!(s.starts_with("<svg") && s.trim_end().ends_with("</svg>"));
        assert!(s.contains("F1 &lt;by&gt; slice"));
        assert_eq!(s.matches("<circle").count(), 2);
        let b = bar_chart("h", "x", "y", &["0".into(), "8".into()], &[("e".into(), vec![3.0, 1.0]), ("f".into(), vec![0.0, 2.0])]);
        assert_eq!(b.matches("<rect").count(), 1 + 4 + 2);
        assert!(!b.contains("NaN"));
    }
}
