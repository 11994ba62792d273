use image::{Rgb, RgbImage};

use super::record::{select_level, SlideRecord, TileKey};
use super::{Result, Store, StoreError};
use crate::geometry::{round_half_away, Rect};

/// Copy the `w` x `h` window at (`x0`, `y0`) of `level` out of its tiles.
/// Pixels past the right/bottom edge replicate the last column/row.
pub(super) fn assemble_window(
    store: &Store,
    record: &SlideRecord,
    level: usize,
    x0: u32,
    y0: u32,
    w: u32,
    h: u32,
) -> Result<RgbImage> {
    let info = record.levels[level];
    let ts = record.tile_size;
    let mut out = RgbImage::new(w, h);
    if x0 >= info.width || y0 >= info.height {
        return Err(StoreError::OutOfBounds {
            slide_id: record.slide_id.clone(),
            detail: format!("window origin ({x0}, {y0}) outside level {level} ({}x{})", info.width, info.height),
        });
    }
    let x_end = (x0 + w).min(info.width);
    let y_end = (y0 + h).min(info.height);
    let row_bytes = w as usize * 3;
    {
        let buf: &mut [u8] = &mut out;
        for ty in y0 / ts..=(y_end - 1) / ts {
            for tx in x0 / ts..=(x_end - 1) / ts {
                let tile = store.fetch_chunk(record, TileKey::new(level as u32, tx, ty))?;
                let (tile_x, tile_y) = (tx * ts, ty * ts);
                let cx0 = x0.max(tile_x);
                let cx1 = x_end.min(tile_x + tile.width());
                let cy0 = y0.max(tile_y);
                let cy1 = y_end.min(tile_y + tile.height());
                let tile_row = tile.width() as usize * 3;
                let n = (cx1 - cx0) as usize * 3;
                for y in cy0..cy1 {
                    let src = (y - tile_y) as usize * tile_row + (cx0 - tile_x) as usize * 3;
                    let dst = (y - y0) as usize * row_bytes + (cx0 - x0) as usize * 3;
                    buf[dst..dst + n].copy_from_slice(&tile.as_raw()[src..src + n]);
                }
            }
        }
    }
    let valid_w = x_end - x0;
    let valid_h = y_end - y0;
    if valid_w < w {
        for y in 0..valid_h {
            let edge = *out.get_pixel(valid_w - 1, y);
            for x in valid_w..w {
                out.put_pixel(x, y, edge);
            }
        }
    }
    if valid_h < h {
        let last = (valid_h - 1) as usize * row_bytes;
        let buf: &mut [u8] = &mut out;
        let (head, tail) = buf.split_at_mut(valid_h as usize * row_bytes);
        let edge_row = &head[last..last + row_bytes];
        for row in tail.chunks_exact_mut(row_bytes) {
            row.copy_from_slice(edge_row);
        }
    }
    Ok(out)
}

pub(super) fn read_region(
    store: &Store,
    record: &SlideRecord,
    rect: Rect,
    target_mpp: f64,
    out_size: u32,
) -> Result<RgbImage> {
    if out_size == 0 {
        return Err(StoreError::InvalidArgument("out_size must be at least 1".into()));
    }
    if !(target_mpp.is_finite() && target_mpp > 0.0) {
        return Err(StoreError::InvalidArgument(format!("target_mpp must be positive, got {target_mpp}")));
    }
    if !rect.fits_within(record.width(), record.height()) {
        return Err(StoreError::OutOfBounds {
            slide_id: record.slide_id.clone(),
            detail: format!(
                "rect x={} y={} w={} h={} outside {}x{}",
                rect.x,
                rect.y,
                rect.w,
                rect.h,
                record.width(),
                record.height()
            ),
        });
    }
    let level = select_level(record, target_mpp);
    let info = record.levels[level];
    let side = round_half_away(f64::from(out_size) * target_mpp / info.mpp).max(1.0) as u32;
    let lx = (f64::from(rect.x) / info.downsample).floor() as u32;
    let ly = (f64::from(rect.y) / info.downsample).floor() as u32;
    if u64::from(lx) + u64::from(side) > u64::from(info.width) + 1
        || u64::from(ly) + u64::from(side) > u64::from(info.height) + 1
    {
        return Err(StoreError::OutOfBounds {
            slide_id: record.slide_id.clone(),
            detail: format!(
                "source window {side}px at ({lx}, {ly}) overruns level {level} ({}x{}) by more than 1px",
                info.width, info.height
            ),
        });
    }
    let window = assemble_window(store, record, level, lx, ly, side, side)?;
    if side == out_size {
        Ok(window)
    } else {
        Ok(resize_bilinear(&window, out_size, out_size))
    }
}

/// Bilinear resampling with pixel-centre alignment and edge clamping.
pub fn resize_bilinear(src: &RgbImage, dst_w: u32, dst_h: u32) -> RgbImage {
    let (sw, sh) = src.dimensions();
    if (sw, sh) == (dst_w, dst_h) {
        return src.clone();
    }
    let taps = |src_len: u32, dst_len: u32| -> Vec<(usize, usize, f32)> {
        let scale = f64::from(src_len) / f64::from(dst_len);
        (0..dst_len)
            .map(|d| {
                let f = ((f64::from(d) + 0.5) * scale - 0.5).clamp(0.0, f64::from(src_len - 1));
                let i0 = f.floor() as usize;
                let i1 = (i0 + 1).min(src_len as usize - 1);
                (i0, i1, (f - i0 as f64) as f32)
            })
            .collect()
    };
    let xs = taps(sw, dst_w);
    let ys = taps(sh, dst_h);
    let raw = src.as_raw();
    let stride = sw as usize * 3;
    let mut out = RgbImage::new(dst_w, dst_h);
    for (dy, &(y0, y1, fy)) in ys.iter().enumerate() {
        for (dx, &(x0, x1, fx)) in xs.iter().enumerate() {
            let mut px = [0u8; 3];
            for (c, v) in px.iter_mut().enumerate() {
                let p = |y: usize, x: usize| f32::from(raw[y * stride + x * 3 + c]);
                let top = p(y0, x0) + (p(y0, x1) - p(y0, x0)) * fx;
                let bottom = p(y1, x0) + (p(y1, x1) - p(y1, x0)) * fx;
                *v = (top + (bottom - top) * fy + 0.5).clamp(0.0, 255.0) as u8;
            }
            out.put_pixel(dx as u32, dy as u32, Rgb(px));
        }
    }
    out
}

/// Box-filter downsampling by an integer factor. Output dimensions are
/// `ceil(dim / factor)`; partial blocks at the edges average the pixels they
/// cover.
pub fn box_downsample(src: &RgbImage, factor: u32) -> RgbImage {
    assert!(factor >= 1);
    let (sw, sh) = src.dimensions();
    let (dw, dh) = (sw.div_ceil(factor), sh.div_ceil(factor));
    let mut out = RgbImage::new(dw, dh);
    for dy in 0..dh {
        let ys = dy * factor..((dy + 1) * factor).min(sh);
        for dx in 0..dw {
            let xs = dx * factor..((dx + 1) * factor).min(sw);
            let n = (ys.len() * xs.len()) as u32;
            let mut sum = [0u32; 3];
            for y in ys.clone() {
                for x in xs.clone() {
                    let p = src.get_pixel(x, y);
                    for c in 0..3 {
                        sum[c] += u32::from(p[c]);
                    }
                }
            }
            out.put_pixel(dx, dy, Rgb(sum.map(|s| ((s + n / 2) / n) as u8)));
        }
    }
    out
}
