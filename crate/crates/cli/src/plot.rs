//! Self-contained SVG plots: log-x scatter of (x, loss) points, the fitted
//! law curve, and a dashed asymptote line. The raw data rides along in an
//! SVG comment so figures diff cleanly; identical inputs produce identical
//! bytes.

use desklab_core::scalinglaw::PowerLawFit;
use std::fmt::Write;

const W: f64 = 640.0;
const H: f64 = 440.0;
const ML: f64 = 70.0; // margins
const MR: f64 = 20.0;
const MT: f64 = 30.0;
const MB: f64 = 50.0;

fn fnum(v: f64) -> String {
    format!("{v:.6}")
}

/// Render one fitted law. `x_label` names the scaling axis.
pub fn plot_fit(fit: &PowerLawFit, title: &str, x_label: &str) -> String {
    let pts = &fit.points;
    assert!(!pts.is_empty(), "cannot plot a fit without points");
    let x_min = pts.iter().map(|p| p.0).fold(f64::INFINITY, f64::min);
    let x_max = pts.iter().map(|p| p.0).fold(f64::NEG_INFINITY, f64::max);
    let (lx0, lx1) = (x_min.log10() - 0.08, x_max.log10() + 0.08);
    let mut y_min = fit.e.min(pts.iter().map(|p| p.1).fold(f64::INFINITY, f64::min));
    let mut y_max = pts.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max);
    let pad = ((y_max - y_min) * 0.08).max(1e-6);
    y_min -= pad;
    y_max += pad;

    let sx = |x: f64| ML + (x.log10() - lx0) / (lx1 - lx0) * (W - ML - MR);
    let sy = |y: f64| H - MB - (y - y_min) / (y_max - y_min) * (H - MT - MB);

    let mut s = String::new();
    writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">"#
    )
    .unwrap();
    writeln!(s, "<!-- data: A={} alpha={} E={} sse={}", fnum(fit.a), fnum(fit.alpha), fnum(fit.e), fnum(fit.residual_sse)).unwrap();
    for (x, y) in pts {
        writeln!(s, "  point {} {}", fnum(*x), fnum(*y)).unwrap();
    }
    writeln!(s, "-->").unwrap();
    writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#).unwrap();
    writeln!(
        s,
        r#"<text x="{}" y="20" text-anchor="middle" font-family="monospace" font-size="14">{}</text>"#,
        W / 2.0,
        title
    )
    .unwrap();

    // axes
    writeln!(
        s,
        r#"<line x1="{ML}" y1="{}" x2="{}" y2="{}" stroke="black"/>"#,
        H - MB,
        W - MR,
        H - MB
    )
    .unwrap();
    writeln!(s, r#"<line x1="{ML}" y1="{MT}" x2="{ML}" y2="{}" stroke="black"/>"#, H - MB).unwrap();
    writeln!(
        s,
        r#"<text x="{}" y="{}" text-anchor="middle" font-family="monospace" font-size="12">{} (log scale)</text>"#,
        (ML + W - MR) / 2.0,
        H - 12.0,
        x_label
    )
    .unwrap();
    writeln!(
        s,
        r#"<text x="16" y="{}" text-anchor="middle" font-family="monospace" font-size="12" transform="rotate(-90 16 {})">val loss (nats/token)</text>"#,
        (MT + H - MB) / 2.0,
        (MT + H - MB) / 2.0
    )
    .unwrap();

    // y tick labels at min/max, x ticks at each decade point
    for y in [y_min + pad, y_max - pad] {
        writeln!(
            s,
            r#"<text x="{}" y="{}" text-anchor="end" font-family="monospace" font-size="10">{}</text>"#,
            ML - 4.0,
            sy(y) + 3.0,
            fnum(y)
        )
        .unwrap();
    }
    for (x, _) in pts {
        writeln!(
            s,
            r#"<text x="{}" y="{}" text-anchor="middle" font-family="monospace" font-size="10">{}</text>"#,
            sx(*x),
            H - MB + 14.0,
            format_x(*x)
        )
        .unwrap();
    }

    // law curve sampled uniformly in log x
    let mut path = String::from("M");
    for i in 0..=128 {
        let lx = lx0 + (lx1 - lx0) * i as f64 / 128.0;
        let x = 10f64.powf(lx);
        let y = fit.predict(x).clamp(y_min, y_max);
        write!(path, " {} {}", fnum(sx(x)), fnum(sy(y))).unwrap();
    }
    writeln!(s, r##"<path d="{path}" fill="none" stroke="#7040a0" stroke-width="1.5"/>"##).unwrap();

    // dashed asymptote
    writeln!(
        s,
        r##"<line x1="{ML}" y1="{}" x2="{}" y2="{}" stroke="#202020" stroke-dasharray="6 4"/>"##,
        fnum(sy(fit.e)),
        W - MR,
        fnum(sy(fit.e))
    )
    .unwrap();
    writeln!(
        s,
        r#"<text x="{}" y="{}" text-anchor="end" font-family="monospace" font-size="11">E = {}</text>"#,
        W - MR - 4.0,
        fnum(sy(fit.e) - 5.0),
        fnum(fit.e)
    )
    .unwrap();

    // one marker per fitted point
    for (x, y) in pts {
        writeln!(
            s,
            r##"<circle cx="{}" cy="{}" r="4" fill="#d03050" stroke="black" stroke-width="0.5"/>"##,
            fnum(sx(*x)),
            fnum(sy(*y))
        )
        .unwrap();
    }
    writeln!(s, "</svg>").unwrap();
    s
}

fn format_x(x: f64) -> String {
    fn trim(v: f64) -> String {
        let s = format!("{v:.2}");
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    }
    if x >= 1e9 {
        format!("{}B", trim(x / 1e9))
    } else if x >= 1e6 {
        format!("{}M", trim(x / 1e6))
    } else if x >= 1e3 {
        format!("{}K", trim(x / 1e3))
    } else {
        trim(x)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fit() -> PowerLawFit {
        PowerLawFit {
            a: 0.05,
            alpha: 1.02,
            e: 3.43,
            residual_sse: 1e-12,
            points: vec![(0.15, 3.767), (0.3, 3.594), (0.6, 3.510), (1.4, 3.464)],
            converged: true,
        }
    }

    #[test]
    fn one_marker_per_point_and_deterministic() {
        let svg = plot_fit(&fit(), "law", "params");
        assert_eq!(svg.matches("<circle").count(), 4);
        assert!(svg.contains("stroke-dasharray"), "asymptote line present");
        assert_eq!(svg, plot_fit(&fit(), "law", "params"));
    }

    #[test]
    fn embedded_data_table_lists_points() {
        let svg = plot_fit(&fit(), "law", "params");
        assert!(svg.contains("point 0.150000 3.767000"));
        assert!(svg.contains("A=0.050000"));
    }
}
