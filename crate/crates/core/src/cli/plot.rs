//! Minimal SVG output: Kaplan-Meier step curves with shaded bands and ROC
//! curves with the chance diagonal.

use std::fmt::Write;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 420.0;
const LEFT: f64 = 64.0;
const RIGHT: f64 = 24.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 52.0;
const COLORS: [&str; 4] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd"];

pub struct StepSeries<'a> {
    pub label: &'a str,
    /// (time, survival, lo, hi) at each step, starting from time 0.
    pub points: Vec<(f64, f64, f64, f64)>,
}

struct Frame {
    x_max: f64,
    y_min: f64,
    y_max: f64,
}

impl Frame {
    fn x(&self, v: f64) -> f64 {
        LEFT + v / self.x_max * (WIDTH - LEFT - RIGHT)
    }

    fn y(&self, v: f64) -> f64 {
        TOP + (self.y_max - v) / (self.y_max - self.y_min) * (HEIGHT - TOP - BOTTOM)
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn open(svg: &mut String, title: &str) {
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="22" text-anchor="middle" font-size="14">{}</text>"#,
        WIDTH / 2.0,
        escape(title)
    );
}

fn axes(svg: &mut String, f: &Frame, x_label: &str, y_label: &str, y_ticks: &[f64]) {
    let (x0, x1) = (f.x(0.0), f.x(f.x_max));
    let (y0, y1) = (f.y(f.y_min), f.y(f.y_max));
    let _ = writeln!(svg, r#"<path d="M{x0:.1},{y1:.1} V{y0:.1} H{x1:.1}" fill="none" stroke="black"/>"#);
    for &t in y_ticks {
        let y = f.y(t);
        let _ = writeln!(
            svg,
            r#"<line x1="{:.1}" y1="{y:.1}" x2="{x0:.1}" y2="{y:.1}" stroke="black"/><text x="{:.1}" y="{:.1}" text-anchor="end">{t:.2}</text>"#,
            x0 - 4.0,
            x0 - 7.0,
            y + 4.0
        );
    }
    for k in 0..=5 {
        let v = f.x_max * k as f64 / 5.0;
        let x = f.x(v);
        let _ = writeln!(
            svg,
            r#"<line x1="{x:.1}" y1="{y0:.1}" x2="{x:.1}" y2="{:.1}" stroke="black"/><text x="{x:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
            y0 + 4.0,
            y0 + 18.0,
            tick_label(v)
        );
    }
    let _ = writeln!(
        svg,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
        (x0 + x1) / 2.0,
        HEIGHT - 12.0,
        escape(x_label)
    );
    let _ = writeln!(
        svg,
        r#"<text transform="translate(16,{:.1}) rotate(-90)" text-anchor="middle">{}</text>"#,
        (y0 + y1) / 2.0,
        escape(y_label)
    );
}

fn tick_label(v: f64) -> String {
    if (v - v.round()).abs() < 1e-9 {
        format!("{}", v.round())
    } else {
        format!("{v:.2}")
    }
}

fn legend(svg: &mut String, labels: &[String]) {
    for (k, label) in labels.iter().enumerate() {
        let y = TOP + 14.0 + 18.0 * k as f64;
        let x = WIDTH - RIGHT - 170.0;
        let _ = writeln!(
            svg,
            r#"<line x1="{x:.1}" y1="{y:.1}" x2="{:.1}" y2="{y:.1}" stroke="{}" stroke-width="2"/><text x="{:.1}" y="{:.1}">{}</text>"#,
            x + 22.0,
            COLORS[k % COLORS.len()],
            x + 28.0,
            y + 4.0,
            escape(label)
        );
    }
}

/// Survival step curves. The y-axis starts at the lowest band value shown,
/// rounded down to a tenth.
pub fn km_svg(series: &[StepSeries], title: &str, x_label: &str) -> String {
    let x_max = series
        .iter()
        .flat_map(|s| s.points.iter().map(|p| p.0))
        .fold(1.0, f64::max);
    let lowest = series
        .iter()
        .flat_map(|s| s.points.iter().map(|p| p.2.min(p.1)))
        .fold(1.0, f64::min);
    let y_min = ((lowest * 10.0).floor() / 10.0).clamp(0.0, 0.9);
    let f = Frame { x_max, y_min, y_max: 1.0 };
    let mut svg = String::new();
    open(&mut svg, title);
    let ticks: Vec<f64> = (0..=5).map(|k| y_min + (1.0 - y_min) * k as f64 / 5.0).collect();
    axes(&mut svg, &f, x_label, "Delirium-free probability", &ticks);
    for (k, s) in series.iter().enumerate() {
        let color = COLORS[k % COLORS.len()];
        if s.points.is_empty() {
            continue;
        }
        // band polygon: upper edge forward, lower edge back
        let mut band = String::new();
        let mut upper = Vec::new();
        let mut lower = Vec::new();
        for (i, p) in s.points.iter().enumerate() {
            let next_t = s.points.get(i + 1).map_or(x_max, |n| n.0);
            upper.push((p.0, p.3));
            upper.push((next_t, p.3));
            lower.push((p.0, p.2));
            lower.push((next_t, p.2));
        }
        for (i, (t, v)) in upper.iter().chain(lower.iter().rev()).enumerate() {
            let _ = write!(band, "{}{:.2},{:.2} ", if i == 0 { "M" } else { "L" }, f.x(*t), f.y(*v));
        }
        let _ = writeln!(svg, r#"<path d="{}Z" fill="{color}" fill-opacity="0.15" stroke="none"/>"#, band);
        let mut line = String::new();
        for (i, p) in s.points.iter().enumerate() {
            let next_t = s.points.get(i + 1).map_or(x_max, |n| n.0);
            let cmd = if i == 0 { "M" } else { "L" };
            let _ = write!(line, "{cmd}{:.2},{:.2} L{:.2},{:.2} ", f.x(p.0), f.y(p.1), f.x(next_t), f.y(p.1));
        }
        let _ = writeln!(svg, r#"<path d="{line}" fill="none" stroke="{color}" stroke-width="2"/>"#);
    }
    legend(&mut svg, &series.iter().map(|s| s.label.to_string()).collect::<Vec<_>>());
    svg.push_str("</svg>\n");
    svg
}

/// ROC curve through `(fpr, tpr)` points with the chance diagonal.
pub fn roc_svg(points: &[(f64, f64)], auroc: f64, title: &str) -> String {
    let f = Frame { x_max: 1.0, y_min: 0.0, y_max: 1.0 };
    let mut svg = String::new();
    open(&mut svg, title);
    let ticks: Vec<f64> = (0..=5).map(|k| k as f64 / 5.0).collect();
    axes(&mut svg, &f, "False positive rate", "True positive rate", &ticks);
    let _ = writeln!(
        svg,
        r#"<line x1="{:.1}" y1="{:.1}" x2="{:.1}" y2="{:.1}" stroke="gray" stroke-dasharray="5,4"/>"#,
        f.x(0.0),
        f.y(0.0),
        f.x(1.0),
        f.y(1.0)
    );
    let mut line = String::new();
    for (i, (x, y)) in points.iter().enumerate() {
        let _ = write!(line, "{}{:.2},{:.2} ", if i == 0 { "M" } else { "L" }, f.x(*x), f.y(*y));
    }
    let _ = writeln!(svg, r#"<path d="{line}" fill="none" stroke="{}" stroke-width="2"/>"#, COLORS[0]);
    legend(&mut svg, &[format!("LSTM (AUROC {auroc:.3})"), "Chance".to_string()]);
    svg.push_str("</svg>\n");
    svg
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn km_plot_is_well_formed() {
        let s = StepSeries {
            label: "MCI <n=3>",
            points: vec![(0.0, 1.0, 1.0, 1.0), (2.0, 0.66, 0.2, 0.9), (5.0, 0.33, 0.05, 0.7)],
        };
        let svg = km_svg(&[s], "Time to delirium", "Months");
        assert!(svg.starts_with("<svg"));
        assert!(svg.trim_end().ends_with("</svg>"));
        assert!(svg.contains("MCI &lt;n=3&gt;"));
        assert_eq!(svg.matches("<path").count(), 3);
    }

    #[test]
    fn roc_plot_has_diagonal() {
        let svg = roc_svg(&[(0.0, 0.0), (0.2, 0.8), (1.0, 1.0)], 0.8, "ROC");
        assert!(svg.contains("stroke-dasharray"));
        assert!(svg.contains("AUROC 0.800"));
    }
}
