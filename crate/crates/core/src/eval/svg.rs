use std::fmt::Write as _;

use super::{PrPoint, RocPoint};

const SIZE: f64 = 480.0;
const MARGIN: f64 = 56.0;
const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];

/// One labelled curve in unit coordinates.
#[derive(Clone, Debug, PartialEq)]
pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
    /// AUC or AP shown in the legend.
    pub area: f64,
}

impl Series {
    pub fn from_roc(label: &str, points: &[RocPoint], auc: f64) -> Self {
        Self {
            label: label.to_string(),
            points: points.iter().map(|p| (p.fpr, p.tpr)).collect(),
            area: auc,
        }
    }

    pub fn from_pr(label: &str, points: &[PrPoint], ap: f64) -> Self {
        let mut pts = vec![(0.0, points.first().map_or(1.0, |p| p.precision))];
        pts.extend(points.iter().map(|p| (p.recall, p.precision)));
        Self {
            label: label.to_string(),
            points: pts,
            area: ap,
        }
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn render(title: &str, x_label: &str, y_label: &str, area_label: &str, series: &[Series], diagonal: bool) -> String {
    let w = SIZE + 2.0 * MARGIN;
    let px = |x: f64| MARGIN + x * SIZE;
    let py = |y: f64| MARGIN + (1.0 - y) * SIZE;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{w}" viewBox="0 0 {w} {w}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="24" text-anchor="middle" font-size="15">{}</text>"#, w / 2.0, escape(title));
    for i in 0..=10 {
        let t = f64::from(i) / 10.0;
        let _ = writeln!(
            s,
            r##"<line x1="{x}" y1="{y0}" x2="{x}" y2="{y1}" stroke="#e5e5e5"/><line x1="{x0}" y1="{y}" x2="{x1}" y2="{y}" stroke="#e5e5e5"/>"##,
            x = px(t),
            y = py(t),
            x0 = px(0.0),
            x1 = px(1.0),
            y0 = py(0.0),
            y1 = py(1.0)
        );
        if i % 2 == 0 {
            let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">{t:.1}</text>"#, px(t), py(0.0) + 16.0);
            let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="end">{t:.1}</text>"#, px(0.0) - 6.0, py(t) + 4.0);
        }
    }
    let _ = writeln!(
        s,
        r#"<rect x="{MARGIN}" y="{MARGIN}" width="{SIZE}" height="{SIZE}" fill="none" stroke="black"/>"#
    );
    if diagonal {
        let _ = writeln!(
            s,
            r##"<line x1="{}" y1="{}" x2="{}" y2="{}" stroke="#999" stroke-dasharray="4 4"/>"##,
            px(0.0),
            py(0.0),
            px(1.0),
            py(1.0)
        );
    }
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#, w / 2.0, w - 12.0, escape(x_label));
    let _ = writeln!(
        s,
        r#"<text x="16" y="{0}" text-anchor="middle" transform="rotate(-90 16 {0})">{1}</text>"#,
        w / 2.0,
        escape(y_label)
    );
    for (i, ser) in series.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        let path: Vec<String> = ser
            .points
            .iter()
            .map(|&(x, y)| format!("{:.2},{:.2}", px(x), py(y)))
            .collect();
        let _ = writeln!(
            s,
            r#"<polyline fill="none" stroke="{color}" stroke-width="2" points="{}"/>"#,
            path.join(" ")
        );
        let ly = py(0.0) - 14.0 - 18.0 * (series.len() - 1 - i) as f64;
        let lx = px(0.0) + SIZE * 0.42;
        let _ = writeln!(
            s,
            r#"<line x1="{lx}" y1="{}" x2="{}" y2="{}" stroke="{color}" stroke-width="2"/><text x="{}" y="{}">{} ({area_label} {:.3})</text>"#,
            ly - 4.0,
            lx + 20.0,
            ly - 4.0,
            lx + 26.0,
            ly,
            escape(&ser.label),
            ser.area
        );
    }
    s.push_str("</svg>\n");
    s
}

pub fn render_roc_svg(title: &str, series: &[Series]) -> String {
    render(title, "false positive rate", "true positive rate", "AUC", series, true)
}

pub fn render_pr_svg(title: &str, series: &[Series]) -> String {
    render(title, "recall", "precision", "AP", series, false)
}
