//! SVG output: Gantt charts of schedules and scatter plots of fronts.
//!
//! Output is a pure function of the input, with coordinates printed to two
//! decimals, so identical inputs give byte-identical files.

use std::fmt::Write as _;

use crate::metrics::ReferencePoint;
use crate::problem::{ScheduleTensor, THETA_W};

const CELL_W: f64 = 18.0;
const CELL_H: f64 = 14.0;
const LEFT: f64 = 56.0;
const PANEL_GAP: f64 = 22.0;

/// Light-to-dark blue; inactive cells stay white.
fn blue(x: f64) -> String {
    if !(x >= THETA_W) {
        return "#ffffff".to_string();
    }
    let u = x.clamp(0.0, 1.0);
    let lerp = |a: f64, b: f64| (a + (b - a) * u).round() as u8;
    format!("#{:02x}{:02x}{:02x}", lerp(222.0, 8.0), lerp(235.0, 48.0), lerp(247.0, 107.0))
}

/// One panel per component tank; rows are product tanks, columns periods,
/// and the fill darkens with the intensity (and hence the flow).
pub fn gantt_svg(s: &ScheduleTensor) -> String {
    let (n_ct, n_pt, n) = s.shape();
    let panel_h = n_pt as f64 * CELL_H;
    let width = LEFT + n as f64 * CELL_W + 10.0;
    let height = 20.0 + n_ct as f64 * (panel_h + PANEL_GAP);
    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width:.2}" height="{height:.2}" font-family="sans-serif" font-size="10">"#
    );
    for i in 0..n_ct {
        let top = 20.0 + i as f64 * (panel_h + PANEL_GAP);
        let _ = writeln!(out, r#"<text x="4" y="{:.2}">CT {}</text>"#, top - 6.0, i + 1);
        for j in 0..n_pt {
            let y = top + j as f64 * CELL_H;
            let _ = writeln!(out, r#"<text x="20" y="{:.2}">PT {}</text>"#, y + CELL_H - 3.0, j + 1);
            for t in 0..n {
                let x = LEFT + t as f64 * CELL_W;
                let _ = writeln!(
                    out,
                    r##"<rect x="{x:.2}" y="{y:.2}" width="{CELL_W:.2}" height="{CELL_H:.2}" fill="{}" stroke="#c8c8c8" stroke-width="0.5"/>"##,
                    blue(s.get(i, j, t))
                );
            }
        }
    }
    out.push_str("</svg>\n");
    out
}

/// A named set of objective points drawn in one color.
pub struct Series<'a> {
    pub name: &'a str,
    pub points: &'a [[f64; 2]],
}

const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"];

/// Scatter of `(E_blend, E_yield)` points. Axes span the reference box when
/// given, otherwise the data; points outside the axes are drawn on the edge.
pub fn front_svg(series: &[Series], reference: Option<ReferencePoint>) -> String {
    let (w, h, m) = (480.0, 360.0, 50.0);
    let (mut xmax, mut ymax) = match reference {
        Some(r) => (r.r1, r.r2),
        None => {
            let all = series.iter().flat_map(|s| s.points.iter());
            all.fold((0.0f64, 0.0f64), |(a, b), p| (a.max(p[0]), b.max(p[1])))
        }
    };
    if !(xmax > 0.0) {
        xmax = 1.0;
    }
    if !(ymax > 0.0) {
        ymax = 1.0;
    }
    let px = |v: f64| m + (v / xmax).clamp(0.0, 1.0) * (w - 2.0 * m);
    let py = |v: f64| h - m - (v / ymax).clamp(0.0, 1.0) * (h - 2.0 * m);
    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w:.2}" height="{h:.2}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(
        out,
        r##"<rect x="{m:.2}" y="{m:.2}" width="{:.2}" height="{:.2}" fill="none" stroke="#333333"/>"##,
        w - 2.0 * m,
        h - 2.0 * m
    );
    let _ = writeln!(out, r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">E_blend</text>"#, w / 2.0, h - 12.0);
    let _ = writeln!(
        out,
        r#"<text x="14" y="{:.2}" text-anchor="middle" transform="rotate(-90 14 {:.2})">E_yield</text>"#,
        h / 2.0,
        h / 2.0
    );
    let _ = writeln!(out, r#"<text x="{m:.2}" y="{:.2}" text-anchor="middle">0</text>"#, h - m + 14.0);
    let _ = writeln!(out, r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{xmax:.4}</text>"#, w - m, h - m + 14.0);
    let _ = writeln!(out, r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{ymax:.4}</text>"#, m - 4.0, m + 4.0);
    for (k, s) in series.iter().enumerate() {
        let color = PALETTE[k % PALETTE.len()];
        let _ = writeln!(
            out,
            r#"<text x="{:.2}" y="{:.2}" fill="{color}">{}</text>"#,
            w - m - 90.0,
            m + 14.0 + 14.0 * k as f64,
            s.name
        );
        for p in s.points {
            let _ = writeln!(out, r#"<circle cx="{:.2}" cy="{:.2}" r="3" fill="{color}"/>"#, px(p[0]), py(p[1]));
        }
    }
    out.push_str("</svg>\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_schedule_is_a_blank_grid() {
        let svg = gantt_svg(&ScheduleTensor::zeros(2, 3, 4));
        assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
        assert_eq!(svg.matches("<rect").count(), 24);
        assert_eq!(svg.matches(r##"fill="#ffffff""##).count(), 24);
    }

    #[test]
    fn darker_cells_for_larger_flows() {
        assert_eq!(blue(1.0), "#08306b");
        assert_eq!(blue(0.01), "#ffffff");
        assert_ne!(blue(0.5), blue(0.9));
    }

    #[test]
    fn front_plot_has_one_marker_per_point() {
        let pts = [[0.1, 1.0], [0.2, 0.5]];
        let svg = front_svg(&[Series { name: "dmo", points: &pts }], Some(ReferencePoint { r1: 0.3, r2: 3.0 }));
        assert_eq!(svg.matches("<circle").count(), 2);
    }
}
