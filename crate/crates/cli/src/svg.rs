use std::fmt::Write as _;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 480.0;
const MARGIN: f64 = 56.0;

fn ticks(lo: f64, hi: f64) -> Vec<f64> {
    let span = (hi - lo).max(f64::MIN_POSITIVE);
    let raw = span / 5.0;
    let mag = 10f64.powf(raw.log10().floor());
    let step = [1.0, 2.0, 5.0, 10.0].iter().map(|m| m * mag).find(|s| span / s <= 6.0).unwrap_or(10.0 * mag);
    let first = (lo / step).ceil() as i64;
    let last = (hi / step).floor() as i64;
    (first..=last).map(|i| i as f64 * step).collect()
}

fn padded(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    if !lo.is_finite() {
        return (-1.0, 1.0);
    }
    let pad = ((hi - lo) * 0.05).max(1e-9);
    (lo - pad, hi + pad)
}

/// Scatter plot of `(x, y)` points with axes and labels.
pub fn scatter(points: &[(f64, f64)], x_label: &str, y_label: &str, title: &str) -> String {
    let (x0, x1) = padded(points.iter().map(|p| p.0));
    let (y0, y1) = padded(points.iter().map(|p| p.1));
    let sx = |x: f64| MARGIN + (x - x0) / (x1 - x0) * (WIDTH - 2.0 * MARGIN);
    let sy = |y: f64| HEIGHT - MARGIN - (y - y0) / (y1 - y0) * (HEIGHT - 2.0 * MARGIN);

    let mut s = String::new();
    writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#).unwrap();
    writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#).unwrap();
    writeln!(s, r#"<text x="{}" y="24" text-anchor="middle" font-size="15">{title}</text>"#, WIDTH / 2.0).unwrap();
    let (left, right, top, bottom) = (MARGIN, WIDTH - MARGIN, MARGIN, HEIGHT - MARGIN);
    writeln!(s, r#"<rect x="{left}" y="{top}" width="{}" height="{}" fill="none" stroke="black"/>"#, right - left, bottom - top)
        .unwrap();
    for t in ticks(x0, x1) {
        let x = sx(t);
        writeln!(s, r##"<line x1="{x:.2}" y1="{top}" x2="{x:.2}" y2="{bottom}" stroke="#ddd"/>"##).unwrap();
        writeln!(s, r#"<text x="{x:.2}" y="{}" text-anchor="middle">{}</text>"#, bottom + 16.0, label(t)).unwrap();
    }
    for t in ticks(y0, y1) {
        let y = sy(t);
        writeln!(s, r##"<line x1="{left}" y1="{y:.2}" x2="{right}" y2="{y:.2}" stroke="#ddd"/>"##).unwrap();
        writeln!(s, r#"<text x="{}" y="{:.2}" text-anchor="end">{}</text>"#, left - 6.0, y + 4.0, label(t)).unwrap();
    }
    if x0 < 0.0 && x1 > 0.0 {
        writeln!(s, r##"<line x1="{0:.2}" y1="{top}" x2="{0:.2}" y2="{bottom}" stroke="#888" stroke-dasharray="4 3"/>"##, sx(0.0))
            .unwrap();
    }
    if y0 < 0.0 && y1 > 0.0 {
        writeln!(s, r##"<line x1="{left}" y1="{0:.2}" x2="{right}" y2="{0:.2}" stroke="#888" stroke-dasharray="4 3"/>"##, sy(0.0))
            .unwrap();
    }
    for &(x, y) in points {
        writeln!(s, r##"<circle cx="{:.2}" cy="{:.2}" r="2.5" fill="#1f6fb4" fill-opacity="0.7"/>"##, sx(x), sy(y)).unwrap();
    }
    writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">{x_label}</text>"#, WIDTH / 2.0, HEIGHT - 14.0).unwrap();
    writeln!(
        s,
        r#"<text x="16" y="{0}" text-anchor="middle" transform="rotate(-90 16 {0})">{y_label}</text>"#,
        HEIGHT / 2.0
    )
    .unwrap();
    s.push_str("</svg>\n");
    s
}

fn label(v: f64) -> String {
    let r = (v * 1e6).round() / 1e6;
    if r == 0.0 {
        "0".into()
    } else {
        format!("{r}")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ticks_are_round_and_inside() {
        assert_eq!(ticks(0.0, 10.0), vec![0.0, 2.0, 4.0, 6.0, 8.0, 10.0]);
        let t = ticks(-3.3, 7.1);
        assert!(t.iter().all(|v| (-3.3..=7.1).contains(v)));
        assert!(t.len() >= 3);
    }

    #[test]
    fn one_circle_per_point() {
        let s = scatter(&[(0.0, 1.0), (2.0, -1.0), (1.0, 0.5)], "Dim1", "Dim2", "scores");
        assert_eq!(s.matches("<circle").count(), 3);
        assert!(s.starts_with("<svg") && s.ends_with("</svg>\n"));
        assert!(s.contains(">Dim1<") && s.contains(">Dim2<"));
    }

    #[test]
    fn empty_plot_is_valid() {
        assert_eq!(scatter(&[], "x", "y", "t").matches("<circle").count(), 0);
    }
}
