//! Minimal SVG figures: the error histogram and a profile comparison.

use std::fmt::Write;

pub const BIN_WIDTH: f64 = 0.1;

const WIDTH: f64 = 480.0;
const HEIGHT: f64 = 320.0;
const MARGIN: f64 = 48.0;

/// Counts per `BIN_WIDTH` bin starting at zero; non-finite values are skipped.
pub fn bin_counts(values: &[f64]) -> Vec<usize> {
    let finite: Vec<f64> = values.iter().copied().filter(|v| v.is_finite() && *v >= 0.0).collect();
    let max = finite.iter().copied().fold(0.0, f64::max);
    let n_bins = ((max / BIN_WIDTH).floor() as usize + 1).max(1);
    let mut counts = vec![0; n_bins];
    for v in finite {
        counts[((v / BIN_WIDTH).floor() as usize).min(n_bins - 1)] += 1;
    }
    counts
}

fn header(title: &str) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(s, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="18" text-anchor="middle" font-size="13">{}</text>"#, WIDTH / 2.0, escape(title));
    let (x0, y0, x1) = (MARGIN, HEIGHT - MARGIN, WIDTH - MARGIN / 2.0);
    let _ = writeln!(s, r#"<line x1="{x0}" y1="{y0}" x2="{x1}" y2="{y0}" stroke="black"/>"#);
    let _ = writeln!(s, r#"<line x1="{x0}" y1="{y0}" x2="{x0}" y2="{}" stroke="black"/>"#, MARGIN / 2.0 + 8.0);
    s
}

fn escape(text: &str) -> String {
    text.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Histogram of RMS errors in `BIN_WIDTH` bins with the mean as a dashed line.
pub fn histogram(values: &[f64], title: &str) -> String {
    let counts = bin_counts(values);
    let finite: Vec<f64> = values.iter().copied().filter(|v| v.is_finite()).collect();
    let mean = if finite.is_empty() { 0.0 } else { finite.iter().sum::<f64>() / finite.len() as f64 };
    let top = counts.iter().copied().max().unwrap_or(0).max(1) as f64;
    let x_max = counts.len() as f64 * BIN_WIDTH;
    let (x0, y0) = (MARGIN, HEIGHT - MARGIN);
    let plot_w = WIDTH - 1.5 * MARGIN;
    let plot_h = HEIGHT - 1.5 * MARGIN - 8.0;
    let sx = |v: f64| x0 + v / x_max * plot_w;
    let sy = |c: f64| y0 - c / top * plot_h;

    let mut s = header(title);
    for (i, &c) in counts.iter().enumerate() {
        if c == 0 {
            continue;
        }
        let left = sx(i as f64 * BIN_WIDTH);
        let _ = writeln!(
            s,
            r##"<rect x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="#4a7fb5" stroke="white"/>"##,
            left,
            sy(c as f64),
            sx((i + 1) as f64 * BIN_WIDTH) - left,
            y0 - sy(c as f64)
        );
    }
    let mx = sx(mean);
    let _ = writeln!(
        s,
        r#"<line x1="{mx:.2}" y1="{y0}" x2="{mx:.2}" y2="{:.2}" stroke="black" stroke-dasharray="5,4"/>"#,
        sy(top)
    );
    let _ = writeln!(s, r#"<text x="{:.2}" y="{:.2}">mean {mean:.3} m/s</text>"#, mx + 4.0, sy(top) + 10.0);
    let step = (x_max / 5.0 / BIN_WIDTH).ceil().max(1.0) * BIN_WIDTH;
    let mut tick = 0.0;
    while tick <= x_max + 1e-9 {
        let _ = writeln!(s, r#"<text x="{:.2}" y="{}" text-anchor="middle">{tick:.1}</text>"#, sx(tick), y0 + 14.0);
        tick += step;
    }
    let _ = writeln!(s, r#"<text x="{:.2}" y="{}" text-anchor="middle">RMS error (m/s)</text>"#, x0 + plot_w / 2.0, HEIGHT - 8.0);
    let _ = writeln!(s, r#"<text x="{}" y="{:.2}" text-anchor="end">{}</text>"#, x0 - 4.0, sy(top) + 4.0, top as usize);
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="end">0</text>"#, x0 - 4.0, y0);
    s.push_str("</svg>\n");
    s
}

/// Speed against depth (depth increasing downward) for named profiles.
pub fn profiles(depths: &[f64], series: &[(&str, &[f64])], title: &str) -> String {
    const COLORS: [&str; 4] = ["black", "#d0542c", "#4a7fb5", "#5a9e4b"];
    let all = series.iter().flat_map(|(_, v)| v.iter().copied()).filter(|v| v.is_finite());
    let (lo, hi) = all.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    let (lo, hi) = if lo < hi { (lo, hi) } else { (lo - 1.0, lo + 1.0) };
    let z_max = depths.last().copied().unwrap_or(1.0).max(f64::MIN_POSITIVE);
    let (x0, y_top) = (MARGIN, MARGIN / 2.0 + 8.0);
    let plot_w = WIDTH - 1.5 * MARGIN;
    let plot_h = HEIGHT - 1.5 * MARGIN - 8.0;
    let sx = |c: f64| x0 + (c - lo) / (hi - lo) * plot_w;
    let sy = |z: f64| y_top + z / z_max * plot_h;

    let mut s = header(title);
    for (k, (name, speeds)) in series.iter().enumerate() {
        let color = COLORS[k % COLORS.len()];
        let points: Vec<String> =
            depths.iter().zip(speeds.iter()).map(|(z, c)| format!("{:.2},{:.2}", sx(*c), sy(*z))).collect();
        let _ = writeln!(s, r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#, points.join(" "));
        let _ = writeln!(s, r#"<text x="{:.2}" y="{:.2}" fill="{color}">{}</text>"#, x0 + 8.0, y_top + 14.0 * (k + 1) as f64, escape(name));
    }
    let (y0, x1) = (HEIGHT - MARGIN, WIDTH - MARGIN / 2.0);
    let _ = writeln!(s, r#"<text x="{x0}" y="{}" text-anchor="middle">{lo:.1}</text>"#, y0 + 14.0);
    let _ = writeln!(s, r#"<text x="{x1}" y="{}" text-anchor="middle">{hi:.1}</text>"#, y0 + 14.0);
    let _ = writeln!(s, r#"<text x="{:.2}" y="{}" text-anchor="middle">sound speed (m/s), depth 0 to {z_max} m downward</text>"#, x0 + plot_w / 2.0, HEIGHT - 8.0);
    s.push_str("</svg>\n");
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bins_are_a_tenth_wide() {
        assert_eq!(bin_counts(&[0.05, 0.15, 0.19, 0.31, f64::NAN]), vec![1, 2, 0, 1]);
        assert_eq!(bin_counts(&[]), vec![0]);
    }

    #[test]
    fn histogram_marks_the_mean() {
        let svg = histogram(&[0.8, 0.9, 1.0], "errors");
        assert!(svg.starts_with("<svg"));
        assert!(svg.contains("stroke-dasharray"));
        assert!(svg.contains("mean 0.900 m/s"));
        assert_eq!(svg.matches("<rect").count(), 1 + 3);
    }

    #[test]
    fn profile_plot_has_one_line_per_series() {
        let z = [0.0, 1.0, 2.0];
        let svg = profiles(&z, &[("true", &[1480.0, 1481.0, 1479.0]), ("inverted", &[1480.5, 1480.0, 1479.5])], "t");
        assert_eq!(svg.matches("<polyline").count(), 2);
    }
}
