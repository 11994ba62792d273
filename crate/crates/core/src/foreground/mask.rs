use std::path::Path;

use image::{GrayImage, Luma, RgbImage};

use super::ForegroundError;

pub const DEFAULT_LUMINANCE_THRESHOLD: f64 = 0.9;

/// Row-major foreground bitmap at thumbnail resolution.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMask {
    width: u32,
    height: u32,
    bits: Vec<bool>,
    /// Thumbnail pixels per level-0 pixel, stored as its bit pattern so the
    /// mask stays `Eq`.
    scale_bits: u64,
}

impl BinaryMask {
    pub fn new(width: u32, height: u32, bits: Vec<bool>, scale: f64) -> Result<Self, ForegroundError> {
        if width == 0 || height == 0 {
            return Err(ForegroundError::InvalidMask("mask must be at least 1x1".into()));
        }
        if bits.len() != width as usize * height as usize {
            return Err(ForegroundError::InvalidMask(format!(
                "{} bits for a {width}x{height} mask",
                bits.len()
            )));
        }
        if !(scale.is_finite() && scale > 0.0) {
            return Err(ForegroundError::InvalidMask(format!("scale must be positive, got {scale}")));
        }
        Ok(Self {
            width,
            height,
            bits,
            scale_bits: scale.to_bits(),
        })
    }

    pub fn from_fn(width: u32, height: u32, scale: f64, f: impl Fn(u32, u32) -> bool) -> Result<Self, ForegroundError> {
        let bits = (0..height).flat_map(|y| (0..width).map(move |x| (x, y))).map(|(x, y)| f(x, y)).collect();
        Self::new(width, height, bits, scale)
    }

    /// Any non-zero pixel is foreground.
    pub fn from_gray(img: &GrayImage, scale: f64) -> Result<Self, ForegroundError> {
        Self::from_fn(img.width(), img.height(), scale, |x, y| img.get_pixel(x, y)[0] != 0)
    }

    /// Load a mask image (PNG or anything `image` reads); a pixel with any
    /// non-zero colour channel counts as foreground. Alpha is ignored.
    pub fn load_png(path: &Path, scale: f64) -> Result<Self, ForegroundError> {
        let img = image::open(path).map_err(|e| ForegroundError::InvalidMask(format!("{}: {e}", path.display())))?;
        let rgb = img.into_rgb8();
        Self::from_fn(rgb.width(), rgb.height(), scale, |x, y| rgb.get_pixel(x, y).0.iter().any(|&c| c != 0))
    }

    pub fn save_png(&self, path: &Path) -> Result<(), ForegroundError> {
        self.to_gray().save(path).map_err(|e| ForegroundError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })
    }

    pub fn to_gray(&self) -> GrayImage {
        GrayImage::from_fn(self.width, self.height, |x, y| Luma([if self.get(x, y) { 255 } else { 0 }]))
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn scale(&self) -> f64 {
        f64::from_bits(self.scale_bits)
    }

    pub fn get(&self, x: u32, y: u32) -> bool {
        self.bits[y as usize * self.width as usize + x as usize]
    }

    /// Like [`get`](Self::get) but anything outside the mask is background.
    pub fn get_padded(&self, x: i64, y: i64) -> bool {
        x >= 0 && y >= 0 && x < i64::from(self.width) && y < i64::from(self.height) && self.get(x as u32, y as u32)
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }
}

/// Dark-on-bright tissue detection: a pixel is foreground when its relative
/// luminance `(0.2126 R + 0.7152 G + 0.0722 B) / 255` is below `threshold`.
pub fn mask_from_rgb(thumbnail: &RgbImage, threshold: f64, scale: f64) -> BinaryMask {
    let bits = thumbnail
        .pixels()
        .map(|p| {
            let lum = (0.2126 * f64::from(p[0]) + 0.7152 * f64::from(p[1]) + 0.0722 * f64::from(p[2])) / 255.0;
            lum < threshold
        })
        .collect();
    BinaryMask::new(thumbnail.width(), thumbnail.height(), bits, scale).expect("thumbnail has valid dimensions")
}
