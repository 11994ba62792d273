use super::ForegroundPolygon;
use crate::geometry::Rect;

/// Horizontal scanlines sampled per rectangle. Coverage along each scanline
/// is exact, so vertical polygon edges introduce no error.
pub const OVERLAP_SCANLINES: usize = 64;

struct Edge {
    x0: f64,
    y0: f64,
    x1: f64,
    y1: f64,
    winding: i32,
}

/// Fraction of `rect` covered by `poly` (non-zero winding, so holes
/// subtract). Rasterised on [`OVERLAP_SCANLINES`] rows.
pub fn overlap_fraction(poly: &ForegroundPolygon, rect: Rect) -> f64 {
    if rect.w == 0 || rect.h == 0 {
        return 0.0;
    }
    let (rx0, ry0) = (f64::from(rect.x), f64::from(rect.y));
    let (rx1, ry1) = (rx0 + f64::from(rect.w), ry0 + f64::from(rect.h));
    let Some((bx0, by0, bx1, by1)) = poly.bounds() else {
        return 0.0;
    };
    if bx1 <= rx0 || bx0 >= rx1 || by1 <= ry0 || by0 >= ry1 {
        return 0.0;
    }

    let mut edges = Vec::new();
    for ring in &poly.rings {
        let n = ring.len();
        for i in 0..n {
            let [x0, y0] = ring[i];
            let [x1, y1] = ring[(i + 1) % n];
            if y0 == y1 || y0.max(y1) <= ry0 || y0.min(y1) >= ry1 {
                continue;
            }
            edges.push(Edge {
                x0,
                y0,
                x1,
                y1,
                winding: if y1 > y0 { 1 } else { -1 },
            });
        }
    }

    let row_h = (ry1 - ry0) / OVERLAP_SCANLINES as f64;
    let width = rx1 - rx0;
    let mut crossings: Vec<(f64, i32)> = Vec::new();
    let mut covered = 0.0;
    for r in 0..OVERLAP_SCANLINES {
        let y = ry0 + (r as f64 + 0.5) * row_h;
        crossings.clear();
        for e in &edges {
            let (lo, hi) = if e.y0 < e.y1 { (e.y0, e.y1) } else { (e.y1, e.y0) };
            if y >= lo && y < hi {
                let x = e.x0 + (y - e.y0) * (e.x1 - e.x0) / (e.y1 - e.y0);
                crossings.push((x, e.winding));
            }
        }
        crossings.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut winding = 0;
        let mut span_start = 0.0;
        let mut row = 0.0;
        for &(x, w) in &crossings {
            let was_inside = winding != 0;
            winding += w;
            let inside = winding != 0;
            if !was_inside && inside {
                span_start = x;
            } else if was_inside && !inside {
                row += (x.min(rx1) - span_start.max(rx0)).max(0.0);
            }
        }
        covered += row / width;
    }
    (covered / OVERLAP_SCANLINES as f64).clamp(0.0, 1.0)
}
