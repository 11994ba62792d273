//! Tissue masks, polygons and the foreground admission test.
//!
//! A [`BinaryMask`] lives at thumbnail scale. [`polygon_from_mask`] traces it
//! with marching squares into a [`ForegroundPolygon`] in level-0 pixel
//! coordinates, and [`overlap_fraction`] estimates how much of a candidate
//! patch rectangle that polygon covers.

mod contour;
mod mask;
mod overlap;

use std::path::Path;

use serde::{Deserialize, Serialize};

pub use contour::{polygon_from_mask, DEFAULT_MIN_REGION_PX};
pub use mask::{mask_from_rgb, BinaryMask, DEFAULT_LUMINANCE_THRESHOLD};
pub use overlap::{overlap_fraction, OVERLAP_SCANLINES};

use crate::store::{Store, StoreError};

#[derive(Debug, thiserror::Error)]
pub enum ForegroundError {
    #[error("no foreground region survived filtering")]
    EmptyForeground,
    #[error("invalid polygon: {0}")]
    InvalidPolygon(String),
    #[error("invalid mask: {0}")]
    InvalidMask(String),
    #[error("i/o error on {path}: {message}")]
    Io { path: String, message: String },
    #[error(transparent)]
    Store(#[from] StoreError),
}

pub type Point = [f64; 2];

/// Closed rings in level-0 pixel coordinates. Rings are stored without a
/// repeated closing vertex. Outer boundaries have positive shoelace area
/// (counter-clockwise with the y axis pointing up); holes are negative.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForegroundPolygon {
    #[serde(default)]
    pub slide_id: String,
    /// Thumbnail pixels per level-0 pixel.
    pub source_scale: f64,
    pub rings: Vec<Vec<Point>>,
}

/// Shoelace signed area of an implicitly closed ring.
pub fn signed_area(ring: &[Point]) -> f64 {
    let n = ring.len();
    let mut acc = 0.0;
    for i in 0..n {
        let [x0, y0] = ring[i];
        let [x1, y1] = ring[(i + 1) % n];
        acc += x0 * y1 - x1 * y0;
    }
    acc / 2.0
}

impl ForegroundPolygon {
    pub fn new(slide_id: impl Into<String>, source_scale: f64, rings: Vec<Vec<Point>>) -> Self {
        let mut rings = rings;
        for ring in &mut rings {
            if ring.len() > 1 && ring.first() == ring.last() {
                ring.pop();
            }
        }
        Self {
            slide_id: slide_id.into(),
            source_scale,
            rings,
        }
    }

    /// Axis-aligned rectangle `[x0, x1) x [y0, y1)` as a single outer ring.
    pub fn rectangle(slide_id: impl Into<String>, x0: f64, y0: f64, x1: f64, y1: f64) -> Self {
        Self::new(slide_id, 1.0, vec![vec![[x0, y0], [x1, y0], [x1, y1], [x0, y1]]])
    }

    pub fn is_empty(&self) -> bool {
        self.rings.is_empty()
    }

    pub fn area(&self) -> f64 {
        self.rings.iter().map(|r| signed_area(r)).sum()
    }

    /// `(min_x, min_y, max_x, max_y)` over all vertices.
    pub fn bounds(&self) -> Option<(f64, f64, f64, f64)> {
        let mut it = self.rings.iter().flatten();
        let first = it.next()?;
        let init = (first[0], first[1], first[0], first[1]);
        Some(it.fold(init, |(a, b, c, d), p| (a.min(p[0]), b.min(p[1]), c.max(p[0]), d.max(p[1]))))
    }

    pub fn translated(&self, dx: f64, dy: f64) -> Self {
        Self {
            slide_id: self.slide_id.clone(),
            source_scale: self.source_scale,
            rings: self
                .rings
                .iter()
                .map(|r| r.iter().map(|p| [p[0] + dx, p[1] + dy]).collect())
                .collect(),
        }
    }

    pub fn validate(&self) -> Result<(), ForegroundError> {
        if self.rings.is_empty() {
            return Err(ForegroundError::EmptyForeground);
        }
        for (i, ring) in self.rings.iter().enumerate() {
            if ring.len() < 3 {
                return Err(ForegroundError::InvalidPolygon(format!("ring {i} has {} points", ring.len())));
            }
            if ring.iter().flatten().any(|v| !v.is_finite()) {
                return Err(ForegroundError::InvalidPolygon(format!("ring {i} has non-finite coordinates")));
            }
        }
        if !(self.area() > 0.0) {
            return Err(ForegroundError::InvalidPolygon(format!(
                "total signed area {} is not positive",
                self.area()
            )));
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<(), ForegroundError> {
        let doc = serde_json::to_vec(self).expect("polygon serialises");
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            std::fs::create_dir_all(parent).map_err(|e| io_err(parent, e))?;
        }
        std::fs::write(path, doc).map_err(|e| io_err(path, e))
    }

    pub fn load(path: &Path) -> Result<Self, ForegroundError> {
        let raw = std::fs::read(path).map_err(|e| io_err(path, e))?;
        let poly: Self = serde_json::from_slice(&raw)
            .map_err(|e| ForegroundError::InvalidPolygon(format!("{}: {e}", path.display())))?;
        Ok(Self::new(poly.slide_id, poly.source_scale, poly.rings))
    }
}

fn io_err(path: &Path, e: std::io::Error) -> ForegroundError {
    ForegroundError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    }
}

/// Threshold fallback: mask the coarsest pyramid level and trace it.
pub fn polygon_for_slide(
    store: &Store,
    record: &crate::store::SlideRecord,
    luminance_threshold: f64,
    min_region_px: f64,
) -> Result<ForegroundPolygon, ForegroundError> {
    let level = record.levels.len() - 1;
    let thumb = store.read_level(record, level)?;
    let mask = mask_from_rgb(&thumb, luminance_threshold, 1.0 / record.levels[level].downsample);
    let mut poly = polygon_from_mask(&mask, min_region_px)?;
    poly.slide_id = record.slide_id.clone();
    Ok(poly)
}
