use std::fmt::Write as _;

use super::sweep::SweepResult;

const W: f64 = 640.0;
const H: f64 = 400.0;
const LEFT: f64 = 60.0;
const RIGHT: f64 = 130.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 50.0;
const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Median test mean F1 per setting as a line, with the min-max range over
/// seeds shaded. Settings are placed at even spacing in the order of the
/// first result.
pub fn sweep_svg(results: &[SweepResult], title: &str) -> String {
    let settings: Vec<&str> = results.first().map(|r| r.points.iter().map(|p| p.setting.as_str()).collect()).unwrap_or_default();
    let n = settings.len().max(1);
    let plot_w = W - LEFT - RIGHT;
    let plot_h = H - TOP - BOTTOM;
    let x = |i: usize| LEFT + if n == 1 { plot_w / 2.0 } else { plot_w * i as f64 / (n - 1) as f64 };
    let y = |v: f64| TOP + plot_h * (1.0 - v.clamp(0.0, 1.0));

    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#);
    let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="22" text-anchor="middle" font-size="14">{}</text>"#, LEFT + plot_w / 2.0, escape(title));
    for k in 0..=5 {
        let v = k as f64 / 5.0;
        let _ = writeln!(
            s,
            r##"<line x1="{LEFT}" y1="{0:.1}" x2="{1:.1}" y2="{0:.1}" stroke="#ddd"/><text x="{2}" y="{3:.1}" text-anchor="end">{v:.1}</text>"##,
            y(v),
            LEFT + plot_w,
            LEFT - 6.0,
            y(v) + 4.0
        );
    }
    for (i, label) in settings.iter().enumerate() {
        let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#, x(i), TOP + plot_h + 18.0, escape(label));
    }
    let _ = writeln!(s, r#"<text x="16" y="{:.1}" transform="rotate(-90 16 {:.1})" text-anchor="middle">mean F1</text>"#, TOP + plot_h / 2.0, TOP + plot_h / 2.0);
    let _ = writeln!(s, r##"<rect x="{LEFT}" y="{TOP}" width="{plot_w}" height="{plot_h}" fill="none" stroke="#333"/>"##);

    for (ci, r) in results.iter().enumerate() {
        let color = COLORS[ci % COLORS.len()];
        let pts: Vec<(usize, &crate::eval::SweepPoint)> =
            r.points.iter().filter_map(|p| settings.iter().position(|&st| st == p.setting).map(|i| (i, p))).collect();
        if pts.is_empty() {
            continue;
        }
        let upper = pts.iter().map(|(i, p)| format!("{:.1},{:.1}", x(*i), y(p.summary.max)));
        let lower = pts.iter().rev().map(|(i, p)| format!("{:.1},{:.1}", x(*i), y(p.summary.min)));
        let band: Vec<String> = upper.chain(lower).collect();
        let _ = writeln!(s, r#"<polygon points="{}" fill="{color}" fill-opacity="0.18" stroke="none"/>"#, band.join(" "));
        let line: Vec<String> = pts.iter().map(|(i, p)| format!("{:.1},{:.1}", x(*i), y(p.summary.median))).collect();
        let _ = writeln!(s, r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="2"/>"#, line.join(" "));
        for (i, p) in &pts {
            let _ = writeln!(s, r#"<circle cx="{:.1}" cy="{:.1}" r="3" fill="{color}"/>"#, x(*i), y(p.summary.median));
        }
        let ly = TOP + 10.0 + 18.0 * ci as f64;
        let lx = W - RIGHT + 12.0;
        let _ = writeln!(
            s,
            r#"<line x1="{lx}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="2"/><text x="{}" y="{}">{}</text>"#,
            lx + 18.0,
            lx + 24.0,
            ly + 4.0,
            escape(&r.arm)
        );
    }
    s.push_str("</svg>\n");
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::{summarize, SweepAxis, SweepPoint};

    fn curve(arm: &str, values: &[(&str, &[f64])]) -> SweepResult {
        SweepResult {
            axis: SweepAxis::KHorizon,
            arm: arm.into(),
            points: values
                .iter()
                .map(|(s, v)| SweepPoint {
                    setting: s.to_string(),
                    seeds: (0..v.len() as u64).collect(),
                    mean_f1: v.to_vec(),
                    summary: summarize(v),
                    pretext_step_accuracy: None,
                    reports: Vec::new(),
                })
                .collect(),
        }
    }

    #[test]
    fn one_band_and_line_per_curve() {
        let a = curve("cpc", &[("2", &[0.5, 0.6]), ("8", &[0.7, 0.8])]);
        let b = curve("random <init>", &[("2", &[0.2]), ("8", &[0.3])]);
        let svg = sweep_svg(&[a, b], "K & F1");
        assert!(svg.starts_with("<svg"));
        assert!(svg.trim_end().ends_with("</svg>"));
        assert_eq!(svg.matches("<polygon").count(), 2);
        assert_eq!(svg.matches("<polyline").count(), 2);
        assert!(svg.contains("random &lt;init&gt;"));
        assert!(svg.contains("K &amp; F1"));
    }
}
