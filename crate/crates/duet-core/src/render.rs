//! Static SVG rendering of a fitted cluster map: one marker per spot
//! colored by cluster, a legend, and a pie glyph per cluster showing its
//! centroid composition. Output is deterministic for fixed input.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{DuetError, Result};
use crate::types::FitResult;

const PALETTE: [&str; 12] = [
    "#4e79a7", "#f28e2b", "#e15759", "#76b7b2", "#59a14f", "#edc948",
    "#b07aa1", "#ff9da7", "#9c755f", "#bab0ac", "#1170aa", "#a3cce9",
];

fn color(cluster: usize) -> &'static str {
    PALETTE[(cluster - 1) % PALETTE.len()]
}

fn fmt(v: f64) -> String {
    format!("{v:.4}")
}

/// Renders the cluster map to an SVG string.
pub fn render_map_string(result: &FitResult, coords: &[(f64, f64)]) -> Result<String> {
    let n = result.theta_hat.n_spots();
    if coords.len() != n {
        return Err(DuetError::invalid(format!(
            "{} coordinates for {} fitted spots",
            coords.len(),
            n
        )));
    }
    let labels = result.clusters.labels();
    let centroids = result.clusters.centroids();
    let c = result.clusters.n_clusters();

    let (mut min_x, mut max_x) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut min_y, mut max_y) = (f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in coords {
        min_x = min_x.min(x);
        max_x = max_x.max(x);
        min_y = min_y.min(y);
        max_y = max_y.max(y);
    }
    let span_x = (max_x - min_x).max(1.0);
    let span_y = (max_y - min_y).max(1.0);
    let plot = 520.0;
    let margin = 30.0;
    let scale = (plot - 2.0 * margin) / span_x.max(span_y);
    let radius = (scale * 0.38).clamp(1.5, 14.0);
    let panel = 240.0;
    let glyph_r: f64 = 26.0;
    let row_h = (2.0 * glyph_r + 16.0).max(40.0);
    let height = plot.max(margin + c as f64 * row_h + margin);

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#,
        w = fmt(plot + panel),
        h = fmt(height),
    );
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);

    // spots
    for (i, &(x, y)) in coords.iter().enumerate() {
        let px = margin + (x - min_x) * scale;
        // flip y so larger y plots upward
        let py = plot - margin - (y - min_y) * scale;
        let _ = writeln!(
            svg,
            r#"<circle cx="{}" cy="{}" r="{}" fill="{}"/>"#,
            fmt(px),
            fmt(py),
            fmt(radius),
            color(labels[i]),
        );
    }

    // legend with composition glyphs
    for cl in 1..=c {
        let cx = plot + 40.0;
        let cy = margin + (cl as f64 - 0.5) * row_h;
        let members = labels.iter().filter(|&&l| l == cl).count();
        draw_pie(&mut svg, cx, cy, glyph_r, centroids.row(cl - 1).as_slice().unwrap());
        let _ = writeln!(
            svg,
            r#"<rect x="{}" y="{}" width="12" height="12" fill="{}"/>"#,
            fmt(cx + glyph_r + 12.0),
            fmt(cy - 6.0),
            color(cl),
        );
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{}" font-family="sans-serif" font-size="13">cluster {} ({} spots)</text>"#,
            fmt(cx + glyph_r + 30.0),
            fmt(cy + 5.0),
            cl,
            members,
        );
    }

    svg.push_str("</svg>\n");
    Ok(svg)
}

/// Pie glyph of a composition vector; slices follow type order and share the
/// spot palette.
fn draw_pie(svg: &mut String, cx: f64, cy: f64, r: f64, fractions: &[f64]) {
    let mut start = -std::f64::consts::FRAC_PI_2;
    for (k, &frac) in fractions.iter().enumerate() {
        if frac <= 0.0 {
            continue;
        }
        let fill = PALETTE[k % PALETTE.len()];
        if frac >= 0.999 {
            let _ = writeln!(
                svg,
                r#"<circle cx="{}" cy="{}" r="{}" fill="{}" stroke="white"/>"#,
                fmt(cx),
                fmt(cy),
                fmt(r),
                fill,
            );
            start += frac * std::f64::consts::TAU;
            continue;
        }
        let end = start + frac * std::f64::consts::TAU;
        let (x1, y1) = (cx + r * start.cos(), cy + r * start.sin());
        let (x2, y2) = (cx + r * end.cos(), cy + r * end.sin());
        let large = if frac > 0.5 { 1 } else { 0 };
        let _ = writeln!(
            svg,
            r#"<path d="M {} {} L {} {} A {} {} 0 {} 1 {} {} Z" fill="{}" stroke="white" stroke-width="0.5"/>"#,
            fmt(cx),
            fmt(cy),
            fmt(x1),
            fmt(y1),
            fmt(r),
            fmt(r),
            large,
            fmt(x2),
            fmt(y2),
            fill,
        );
        start = end;
    }
}

/// Renders to a file.
pub fn render_map(result: &FitResult, coords: &[(f64, f64)], out_svg: &Path) -> Result<()> {
    let svg = render_map_string(result, coords)?;
    std::fs::write(out_svg, svg).map_err(|e| DuetError::io(out_svg, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use crate::types::{ClusterAssignment, CompositionMatrix, SizeFactors};

    fn fit_with_clusters(labels: Vec<usize>, centroids: ndarray::Array2<f64>) -> FitResult {
        let n = labels.len();
        let k = centroids.ncols();
        FitResult {
            theta_hat: CompositionMatrix::uniform(n, k).unwrap(),
            s_hat: SizeFactors::new(ndarray::Array1::ones(n)).unwrap(),
            clusters: ClusterAssignment::new(labels, centroids).unwrap(),
            lambda: 0.1,
            objective_trace: vec![1.0],
            converged: true,
            admm_converged: true,
            iterations: 1,
        }
    }

    #[test]
    fn single_cluster_single_glyph() {
        let fit = fit_with_clusters(vec![1, 1], array![[0.5, 0.5]]);
        let svg = render_map_string(&fit, &[(0.0, 0.0), (1.0, 0.0)]).unwrap();
        assert_eq!(svg.matches("cluster ").count(), 1);
        assert!(svg.contains("cluster 1 (2 spots)"));
    }

    #[test]
    fn legend_entry_per_cluster_and_determinism() {
        let fit = fit_with_clusters(
            vec![1, 2, 3, 1],
            array![[1.0, 0.0], [0.0, 1.0], [0.5, 0.5]],
        );
        let coords = [(0.0, 0.0), (1.0, 0.0), (0.0, 1.0), (1.0, 1.0)];
        let a = render_map_string(&fit, &coords).unwrap();
        assert_eq!(a.matches("<text").count(), 3);
        let b = render_map_string(&fit, &coords).unwrap();
        assert_eq!(a, b, "identical inputs give byte-identical output");
    }

    #[test]
    fn coordinate_count_mismatch() {
        let fit = fit_with_clusters(vec![1, 1], array![[0.5, 0.5]]);
        assert!(render_map_string(&fit, &[(0.0, 0.0)]).is_err());
    }
}
