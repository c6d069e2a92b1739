//! Self-contained SVG line plots of reward curves with min-max bands.

use std::fmt::Write;

/// One series: per-epoch mean with its min-max band.
#[derive(Debug, Clone, PartialEq)]
pub struct Band {
    pub label: String,
    pub epochs: Vec<usize>,
    pub mean: Vec<f64>,
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

const COLORS: [&str; 6] = ["#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b"];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Reward axis spans [y_min, y_max]; epochs fill the x axis.
pub fn reward_plot_svg(title: &str, series: &[Band], y_min: f64, y_max: f64) -> String {
    let (w, h) = (720.0, 420.0);
    let (left, right, top, bottom) = (60.0, 160.0, 40.0, 50.0);
    let pw = w - left - right;
    let ph = h - top - bottom;
    let last_epoch = series
        .iter()
        .flat_map(|s| s.epochs.iter().copied())
        .max()
        .unwrap_or(1)
        .max(1) as f64;
    let x = |e: f64| left + pw * e / last_epoch;
    let y = |v: f64| top + ph * (1.0 - (v.clamp(y_min, y_max) - y_min) / (y_max - y_min));
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="24" text-anchor="middle" font-size="14">{}</text>"#, left + pw / 2.0, escape(title));
    // axes and ticks
    let _ = writeln!(
        s,
        r#"<path d="M{left} {top} V{} H{}" fill="none" stroke="black"/>"#,
        top + ph,
        left + pw
    );
    for i in 0..=4 {
        let v = y_min + (y_max - y_min) * i as f64 / 4.0;
        let _ = writeln!(
            s,
            r##"<line x1="{left}" x2="{}" y1="{yy:.1}" y2="{yy:.1}" stroke="#ddd"/><text x="{}" y="{:.1}" text-anchor="end">{v:.2}</text>"##,
            left + pw,
            left - 6.0,
            y(v) + 4.0,
            yy = y(v)
        );
    }
    for i in 0..=5 {
        let e = last_epoch * i as f64 / 5.0;
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{}" text-anchor="middle">{:.0}</text>"#,
            x(e),
            top + ph + 18.0,
            e
        );
    }
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">epoch</text>"#, left + pw / 2.0, h - 10.0);
    let _ = writeln!(
        s,
        r#"<text x="16" y="{}" text-anchor="middle" transform="rotate(-90 16 {})">mean evaluation reward</text>"#,
        top + ph / 2.0,
        top + ph / 2.0
    );
    for (i, b) in series.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        if !b.epochs.is_empty() {
            let mut d = String::new();
            for (j, e) in b.epochs.iter().enumerate() {
                let _ = write!(d, "{}{:.1} {:.1} ", if j == 0 { "M" } else { "L" }, x(*e as f64), y(b.max[j]));
            }
            for (j, e) in b.epochs.iter().enumerate().rev() {
                let _ = write!(d, "L{:.1} {:.1} ", x(*e as f64), y(b.min[j]));
            }
            let _ = writeln!(s, r#"<path d="{}Z" fill="{color}" fill-opacity="0.2" stroke="none"/>"#, d);
            let pts: Vec<String> = b
                .epochs
                .iter()
                .zip(&b.mean)
                .map(|(e, m)| format!("{:.1},{:.1}", x(*e as f64), y(*m)))
                .collect();
            let _ = writeln!(s, r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="2"/>"#, pts.join(" "));
        }
        let ly = top + 16.0 + 20.0 * i as f64;
        let lx = left + pw + 12.0;
        let _ = writeln!(
            s,
            r#"<line x1="{lx}" x2="{}" y1="{ly}" y2="{ly}" stroke="{color}" stroke-width="2"/><text x="{}" y="{}">{}</text>"#,
            lx + 20.0,
            lx + 26.0,
            ly + 4.0,
            escape(&b.label)
        );
    }
    s.push_str("</svg>\n");
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn svg_is_self_contained() {
        let b = Band {
            label: "image <beta 3>".into(),
            epochs: vec![0, 1, 2],
            mean: vec![0.0, 0.5, 1.0],
            min: vec![-1.0, 0.0, 0.8],
            max: vec![0.5, 1.0, 1.0],
        };
        let svg = reward_plot_svg("rewards", &[b], -1.0, 1.0);
        assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
        assert!(svg.contains("polyline") && svg.contains("fill-opacity"));
        assert!(svg.contains("&lt;beta 3&gt;"));
        assert!(!svg.contains("href"));
    }
}
