//! Minimal standalone SVG plots. Output depends only on the input values.

use std::fmt::Write as _;

const SIZE: f64 = 480.0;
const MARGIN: f64 = 48.0;
const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];

struct Axis {
    lo: f64,
    hi: f64,
}

impl Axis {
    fn fit(values: impl Iterator<Item = f64>) -> Axis {
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for v in values.filter(|v| v.is_finite()) {
            lo = lo.min(v);
            hi = hi.max(v);
        }
        if !lo.is_finite() {
            return Axis { lo: 0.0, hi: 1.0 };
        }
        if hi - lo < 1e-12 {
            return Axis { lo: lo - 0.5, hi: hi + 0.5 };
        }
        Axis { lo, hi }
    }

    fn to_px(&self, v: f64, flip: bool) -> f64 {
        let t = (v - self.lo) / (self.hi - self.lo);
        let t = if flip { 1.0 - t } else { t };
        MARGIN + t * (SIZE - 2.0 * MARGIN)
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

fn header(title: &str, x: &Axis, y: &Axis) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{SIZE}" height="{SIZE}" viewBox="0 0 {SIZE} {SIZE}">"#
    );
    let _ = writeln!(s, r#"<rect x="0" y="0" width="{SIZE}" height="{SIZE}" fill="white"/>"#);
    let inner = SIZE - 2.0 * MARGIN;
    let _ = writeln!(
        s,
        r#"<rect x="{MARGIN}" y="{MARGIN}" width="{inner}" height="{inner}" fill="none" stroke="black" stroke-width="1"/>"#
    );
    let _ = writeln!(
        s,
        r#"<text x="{}" y="24" font-family="sans-serif" font-size="14" text-anchor="middle">{}</text>"#,
        SIZE / 2.0,
        escape(title)
    );
    let lab = |s: &mut String, px: f64, py: f64, anchor: &str, v: f64| {
        let _ = writeln!(
            s,
            r#"<text x="{px:.2}" y="{py:.2}" font-family="sans-serif" font-size="10" text-anchor="{anchor}">{v:.4}</text>"#
        );
    };
    lab(&mut s, MARGIN, SIZE - MARGIN + 14.0, "start", x.lo);
    lab(&mut s, SIZE - MARGIN, SIZE - MARGIN + 14.0, "end", x.hi);
    lab(&mut s, MARGIN - 4.0, SIZE - MARGIN, "end", y.lo);
    lab(&mut s, MARGIN - 4.0, MARGIN + 10.0, "end", y.hi);
    s
}

/// Blue-to-yellow ramp.
fn ramp(t: f64) -> String {
    let t = t.clamp(0.0, 1.0);
    let (a, b) = ([0x2c, 0x3e, 0x9e], [0xf2, 0xd0, 0x2e]);
    let c: Vec<u8> = (0..3).map(|i| (a[i] as f64 + t * (b[i] as f64 - a[i] as f64)).round() as u8).collect();
    format!("#{:02x}{:02x}{:02x}", c[0], c[1], c[2])
}

/// Scatter plot with one `<circle>` per finite point, optionally coloured.
pub fn scatter(xs: &[f64], ys: &[f64], color: Option<&[f64]>, title: &str) -> String {
    let x = Axis::fit(xs.iter().copied());
    let y = Axis::fit(ys.iter().copied());
    let c = color.map(|c| Axis::fit(c.iter().copied()));
    let mut s = header(title, &x, &y);
    for (i, (&px, &py)) in xs.iter().zip(ys).enumerate() {
        if !(px.is_finite() && py.is_finite()) {
            continue;
        }
        let fill = match (color, &c) {
            (Some(col), Some(ax)) => ramp((col[i] - ax.lo) / (ax.hi - ax.lo)),
            _ => PALETTE[0].to_string(),
        };
        let _ = writeln!(
            s,
            r#"<circle cx="{:.2}" cy="{:.2}" r="2.5" fill="{fill}" fill-opacity="0.8"/>"#,
            x.to_px(px, false),
            y.to_px(py, true)
        );
    }
    s.push_str("</svg>\n");
    s
}

/// Line plot with one `<polyline>` per series against the shared `xs`.
pub fn lines(xs: &[f64], series: &[(String, Vec<f64>)], title: &str) -> String {
    let x = Axis::fit(xs.iter().copied());
    let y = Axis::fit(series.iter().flat_map(|(_, v)| v.iter().copied()));
    let mut s = header(title, &x, &y);
    for (k, (name, ys)) in series.iter().enumerate() {
        let colour = PALETTE[k % PALETTE.len()];
        let pts: Vec<String> = xs
            .iter()
            .zip(ys)
            .filter(|(a, b)| a.is_finite() && b.is_finite())
            .map(|(&a, &b)| format!("{:.2},{:.2}", x.to_px(a, false), y.to_px(b, true)))
            .collect();
        let _ =
            writeln!(s, r#"<polyline points="{}" fill="none" stroke="{colour}" stroke-width="1.5"/>"#, pts.join(" "));
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" font-family="sans-serif" font-size="11" fill="{colour}">{}</text>"#,
            SIZE - MARGIN - 80.0,
            MARGIN + 16.0 + 14.0 * k as f64,
            escape(name)
        );
    }
    s.push_str("</svg>\n");
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_circle_per_point() {
        let s = scatter(&[0.0, 1.0, 2.0], &[1.0, 0.0, 1.0], None, "t");
        assert_eq!(s.matches("<circle").count(), 3);
        assert!(s.starts_with("<svg") && s.ends_with("</svg>\n"));
    }

    #[test]
    fn one_polyline_per_series() {
        let series = vec![("a".to_string(), vec![1.0, 2.0]), ("b".to_string(), vec![3.0, 1.0])];
        let s = lines(&[0.0, 1.0], &series, "t");
        assert_eq!(s.matches("<polyline").count(), 2);
    }

    #[test]
    fn deterministic_and_escaped() {
        let a = scatter(&[0.5], &[0.25], Some(&[1.0]), "a < b & c");
        assert_eq!(a, scatter(&[0.5], &[0.25], Some(&[1.0]), "a < b & c"));
        assert!(a.contains("a &lt; b &amp; c"));
    }

    #[test]
    fn colour_ramp_endpoints() {
        assert_eq!(ramp(0.0), "#2c3e9e");
        assert_eq!(ramp(1.0), "#f2d02e");
    }
}
