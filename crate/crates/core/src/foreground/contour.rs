//! Marching-squares contour tracing.
//!
//! Sample points are pixel centres; the mask is padded with background so
//! every contour closes. Crossings sit at edge midpoints, so all vertices
//! are exact in doubled integer coordinates. Saddle cells join the two
//! foreground corners, matching the 8-connected component labelling used
//! for the speckle filter.

use std::collections::HashMap;

use super::{BinaryMask, ForegroundError, ForegroundPolygon, Point};

pub const DEFAULT_MIN_REGION_PX: f64 = 64.0;

type P2 = (i64, i64);

/// Drop 8-connected foreground components smaller than `min_px` pixels.
fn filter_small_components(mask: &BinaryMask, min_px: f64) -> Vec<bool> {
    let (w, h) = (mask.width() as usize, mask.height() as usize);
    let mut keep = mask.bits().to_vec();
    let mut label = vec![false; w * h];
    let mut stack = Vec::new();
    let mut component = Vec::new();
    for start in 0..w * h {
        if !keep[start] || label[start] {
            continue;
        }
        component.clear();
        label[start] = true;
        stack.push(start);
        while let Some(i) = stack.pop() {
            component.push(i);
            let (x, y) = ((i % w) as i64, (i / w) as i64);
            for dy in -1..=1 {
                for dx in -1..=1 {
                    let (nx, ny) = (x + dx, y + dy);
                    if nx < 0 || ny < 0 || nx >= w as i64 || ny >= h as i64 {
                        continue;
                    }
                    let j = ny as usize * w + nx as usize;
                    if keep[j] && !label[j] {
                        label[j] = true;
                        stack.push(j);
                    }
                }
            }
        }
        if (component.len() as f64) < min_px {
            for &i in &component {
                keep[i] = false;
            }
        }
    }
    keep
}

fn cross(a: P2, b: P2, p: P2) -> i64 {
    (b.0 - a.0) * (p.1 - a.1) - (b.1 - a.1) * (p.0 - a.0)
}

/// Oriented segments with foreground on the positive-cross side.
fn march(w: i64, h: i64, fg: impl Fn(i64, i64) -> bool) -> HashMap<P2, P2> {
    let mut next = HashMap::new();
    let mut push = |a: P2, b: P2, probe: P2, probe_is_fg: bool| {
        let (a, b) = if (cross(a, b, probe) > 0) == probe_is_fg { (a, b) } else { (b, a) };
        let prev = next.insert(a, b);
        debug_assert!(prev.is_none(), "vertex visited twice");
    };
    for cj in -1..h {
        for ci in -1..w {
            let tl = fg(ci, cj);
            let tr = fg(ci + 1, cj);
            let br = fg(ci + 1, cj + 1);
            let bl = fg(ci, cj + 1);
            if tl == tr && tr == br && br == bl {
                continue;
            }
            // Doubled coordinates: pixel (i, j) has its centre at (2i+1, 2j+1).
            let corner_tl = (2 * ci + 1, 2 * cj + 1);
            let corner_tr = (2 * ci + 3, 2 * cj + 1);
            let corner_br = (2 * ci + 3, 2 * cj + 3);
            let corner_bl = (2 * ci + 1, 2 * cj + 3);
            let top = (2 * ci + 2, 2 * cj + 1);
            let right = (2 * ci + 3, 2 * cj + 2);
            let bottom = (2 * ci + 2, 2 * cj + 3);
            let left = (2 * ci + 1, 2 * cj + 2);
            if tl == br && tr == bl {
                // Saddle: cut off the two background corners.
                if tl {
                    push(top, right, corner_tr, false);
                    push(bottom, left, corner_bl, false);
                } else {
                    push(top, left, corner_tl, false);
                    push(right, bottom, corner_br, false);
                }
                continue;
            }
            let mut ends = Vec::with_capacity(2);
            if tl != tr {
                ends.push(top);
            }
            if tr != br {
                ends.push(right);
            }
            if br != bl {
                ends.push(bottom);
            }
            if bl != tl {
                ends.push(left);
            }
            debug_assert_eq!(ends.len(), 2);
            let probe = [(tl, corner_tl), (tr, corner_tr), (br, corner_br), (bl, corner_bl)]
                .into_iter()
                .find(|(v, _)| *v)
                .map(|(_, c)| c)
                .expect("mixed cell has a foreground corner");
            push(ends[0], ends[1], probe, true);
        }
    }
    next
}

fn chain(mut next: HashMap<P2, P2>) -> Vec<Vec<P2>> {
    let mut rings = Vec::new();
    let mut starts: Vec<P2> = next.keys().copied().collect();
    starts.sort_unstable();
    for start in starts {
        let Some(mut cur) = next.remove(&start) else { continue };
        let mut ring = vec![start];
        while cur != start {
            ring.push(cur);
            cur = next.remove(&cur).expect("contours are closed");
        }
        rings.push(simplify_collinear(ring));
    }
    rings
}

fn simplify_collinear(ring: Vec<P2>) -> Vec<P2> {
    let n = ring.len();
    if n < 4 {
        return ring;
    }
    let mut out: Vec<P2> = Vec::with_capacity(n);
    for i in 0..n {
        let prev = ring[(i + n - 1) % n];
        let next = ring[(i + 1) % n];
        if cross(prev, ring[i], next) != 0 {
            out.push(ring[i]);
        }
    }
    out
}

/// Trace the foreground of `mask` into rings in level-0 coordinates.
/// Components smaller than `min_region_px` thumbnail pixels are dropped.
pub fn polygon_from_mask(mask: &BinaryMask, min_region_px: f64) -> Result<ForegroundPolygon, ForegroundError> {
    let kept = filter_small_components(mask, min_region_px);
    let (w, h) = (i64::from(mask.width()), i64::from(mask.height()));
    let segments = march(w, h, |x, y| x >= 0 && y >= 0 && x < w && y < h && kept[(y * w + x) as usize]);
    let to_level0 = 0.5 / mask.scale();
    let rings: Vec<Vec<Point>> = chain(segments)
        .into_iter()
        .map(|ring| {
            ring.into_iter()
                .map(|(x, y)| [x as f64 * to_level0, y as f64 * to_level0])
                .collect()
        })
        .collect();
    if rings.is_empty() {
        return Err(ForegroundError::EmptyForeground);
    }
    Ok(ForegroundPolygon::new(String::new(), mask.scale(), rings))
}
