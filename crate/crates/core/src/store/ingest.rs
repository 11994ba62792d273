use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use image::{Rgb, RgbImage};

use super::codec::encode_tile;
use super::record::{ChunkLocator, Codec, IndexEntry, LevelInfo, SlideRecord, StoreIndex, TileKey};
use super::region::box_downsample;
use super::{Result, StoreError};
use crate::rng::CounterRng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ChunkLayout {
    /// One file per chunk (inline-file locators).
    #[default]
    Files,
    /// All chunks of a slide concatenated into one blob (byte-range locators).
    Packed,
}

#[derive(Debug, Clone)]
pub struct IngestOptions {
    pub slide_id: String,
    pub base_mpp: f64,
    pub tile_size: u32,
    pub downsample_factor: u32,
    pub codec: Codec,
    pub layout: ChunkLayout,
}

impl IngestOptions {
    pub fn new(slide_id: impl Into<String>, base_mpp: f64) -> Self {
        Self {
            slide_id: slide_id.into(),
            base_mpp,
            tile_size: 256,
            downsample_factor: 2,
            codec: Codec::Raw,
            layout: ChunkLayout::Files,
        }
    }
}

/// Repeatedly box-downsample until one more downsampling step would fit
/// within a single tile.
pub fn build_pyramid(image: &RgbImage, tile_size: u32, factor: u32) -> Vec<RgbImage> {
    let mut levels = vec![image.clone()];
    loop {
        let last = levels.last().expect("non-empty");
        let max_dim = u64::from(last.width().max(last.height()));
        if max_dim * u64::from(factor) <= u64::from(tile_size) || max_dim <= 1 {
            break;
        }
        let next = box_downsample(last, factor);
        levels.push(next);
    }
    levels
}

fn check_slide_id(id: &str) -> Result<()> {
    let ok = !id.is_empty()
        && id != "."
        && id != ".."
        && id.chars().all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.'));
    if ok {
        Ok(())
    } else {
        Err(StoreError::InvalidArgument(format!(
            "slide id {id:?} must be non-empty and use only [A-Za-z0-9._-]"
        )))
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| StoreError::io(parent, e))?;
    }
    fs::write(path, bytes).map_err(|e| StoreError::io(path, e))
}

/// Tile `image` into a pyramid under the store at `root`, creating the store
/// if needed, and register the slide in `index.json`.
pub fn ingest_image(root: &Path, image: &RgbImage, opts: &IngestOptions) -> Result<SlideRecord> {
    check_slide_id(&opts.slide_id)?;
    if image.width() == 0 || image.height() == 0 {
        return Err(StoreError::InvalidArgument("image has zero size".into()));
    }
    if opts.tile_size < 16 {
        return Err(StoreError::InvalidArgument(format!("tile_size must be >= 16, got {}", opts.tile_size)));
    }
    if opts.downsample_factor < 2 {
        return Err(StoreError::InvalidArgument(format!(
            "downsample factor must be >= 2, got {}",
            opts.downsample_factor
        )));
    }
    if !(opts.base_mpp.is_finite() && opts.base_mpp > 0.0) {
        return Err(StoreError::InvalidArgument(format!("base_mpp must be positive, got {}", opts.base_mpp)));
    }
    fs::create_dir_all(root).map_err(|e| StoreError::io(root, e))?;

    let pyramid = build_pyramid(image, opts.tile_size, opts.downsample_factor);
    let id = &opts.slide_id;
    let chunk_dir = root.join("chunks").join(id);
    if chunk_dir.exists() {
        fs::remove_dir_all(&chunk_dir).map_err(|e| StoreError::io(&chunk_dir, e))?;
    }

    let mut levels = Vec::with_capacity(pyramid.len());
    let mut record = SlideRecord {
        slide_id: id.clone(),
        base_mpp: opts.base_mpp,
        levels: Vec::new(),
        tile_size: opts.tile_size,
        chunks: Default::default(),
    };
    let mut ds = 1.0;
    for img in &pyramid {
        levels.push(LevelInfo {
            width: img.width(),
            height: img.height(),
            mpp: opts.base_mpp * ds,
            downsample: ds,
        });
        ds *= f64::from(opts.downsample_factor);
    }
    record.levels = levels;

    let blob_rel = format!("chunks/{id}.bin");
    let mut blob = match opts.layout {
        ChunkLayout::Packed => {
            let path = root.join(&blob_rel);
            fs::create_dir_all(path.parent().expect("has parent")).map_err(|e| StoreError::io(root, e))?;
            Some((BufWriter::new(File::create(&path).map_err(|e| StoreError::io(&path, e))?), 0u64))
        }
        ChunkLayout::Files => None,
    };

    let ts = opts.tile_size;
    for (level, img) in pyramid.iter().enumerate() {
        let (nx, ny) = record.tile_grid(level);
        for ty in 0..ny {
            for tx in 0..nx {
                let key = TileKey::new(level as u32, tx, ty);
                let (w, h) = record.tile_dims(key).expect("inside grid");
                let tile = image::imageops::crop_imm(img, tx * ts, ty * ts, w, h).to_image();
                let bytes = encode_tile(&tile, opts.codec).map_err(|message| StoreError::Decode {
                    slide_id: id.clone(),
                    key,
                    message: format!("encode failed: {message}"),
                })?;
                let locator = match &mut blob {
                    None => {
                        let rel = format!("chunks/{id}/{level}/{tx}_{ty}.{}", opts.codec.extension());
                        write_file(&root.join(&rel), &bytes)?;
                        ChunkLocator::InlineFile {
                            path: rel,
                            codec: opts.codec,
                        }
                    }
                    Some((writer, offset)) => {
                        writer
                            .write_all(&bytes)
                            .map_err(|e| StoreError::io(root.join(&blob_rel), e))?;
                        let loc = ChunkLocator::ByteRange {
                            url: blob_rel.clone(),
                            offset: *offset,
                            length: bytes.len() as u64,
                            codec: opts.codec,
                        };
                        *offset += bytes.len() as u64;
                        loc
                    }
                };
                record.chunks.insert(key, locator);
            }
        }
    }
    if let Some((mut writer, _)) = blob {
        writer.flush().map_err(|e| StoreError::io(root.join(&blob_rel), e))?;
    }
    record.validate()?;

    let meta_rel = format!("slides/{id}.json");
    let doc = serde_json::to_vec_pretty(&record).expect("record serialises");
    write_file(&root.join(&meta_rel), &doc)?;

    let index_path = root.join("index.json");
    let mut index = if index_path.exists() {
        let raw = fs::read(&index_path).map_err(|e| StoreError::io(&index_path, e))?;
        let index: StoreIndex = serde_json::from_slice(&raw).map_err(|e| StoreError::Metadata {
            what: "index.json".into(),
            message: e.to_string(),
        })?;
        index.validate()?;
        index
    } else {
        StoreIndex::default()
    };
    index.slides.retain(|e| e.slide_id != *id);
    index.slides.push(IndexEntry {
        slide_id: id.clone(),
        metadata: meta_rel,
    });
    write_file(&index_path, &serde_json::to_vec_pretty(&index).expect("index serialises"))?;
    Ok(record)
}

/// Procedural stand-in for a tissue scan: dark textured blobs on a bright
/// background. Deterministic in `seed`.
pub fn synthetic_tissue_image(width: u32, height: u32, seed: u64) -> RgbImage {
    let mut rng = CounterRng::new(seed).substream("synthetic-tissue");
    let n_blobs = 3 + rng.below(5) as usize;
    let (fw, fh) = (f64::from(width), f64::from(height));
    let blobs: Vec<(f64, f64, f64, f64, [f64; 3])> = (0..n_blobs)
        .map(|_| {
            let cx = rng.uniform(0.15, 0.85) * fw;
            let cy = rng.uniform(0.15, 0.85) * fh;
            let rx = rng.uniform(0.08, 0.25) * fw;
            let ry = rng.uniform(0.08, 0.25) * fh;
            let color = [rng.uniform(120.0, 200.0), rng.uniform(40.0, 110.0), rng.uniform(120.0, 190.0)];
            (cx, cy, rx, ry, color)
        })
        .collect();
    let noise = rng.substream("texture");
    RgbImage::from_fn(width, height, |x, y| {
        let (px, py) = (f64::from(x), f64::from(y));
        let grain = (noise.at(u64::from(y) << 32 | u64::from(x)) >> 58) as f64 - 32.0;
        for (cx, cy, rx, ry, color) in &blobs {
            let d = ((px - cx) / rx).powi(2) + ((py - cy) / ry).powi(2);
            if d <= 1.0 {
                return Rgb(color.map(|c| (c + grain).clamp(0.0, 255.0) as u8));
            }
        }
        let bg = (242.0 + grain / 8.0).clamp(0.0, 255.0) as u8;
        Rgb([bg, bg, bg])
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pyramid_for_1000x800_has_four_levels() {
        let img = RgbImage::new(1000, 800);
        let dims: Vec<_> = build_pyramid(&img, 256, 2).iter().map(|l| l.dimensions()).collect();
        assert_eq!(dims, vec![(1000, 800), (500, 400), (250, 200), (125, 100)]);
    }

    #[test]
    fn small_image_is_a_single_level() {
        let img = RgbImage::new(100, 100);
        assert_eq!(build_pyramid(&img, 256, 2).len(), 1);
    }

    #[test]
    fn rejects_bad_arguments() {
        let dir = tempfile::tempdir().unwrap();
        let img = RgbImage::new(32, 32);
        let mut opts = IngestOptions::new("a", 0.25);
        opts.tile_size = 8;
        assert!(matches!(ingest_image(dir.path(), &img, &opts), Err(StoreError::InvalidArgument(_))));
        let opts = IngestOptions::new("../escape", 0.25);
        assert!(ingest_image(dir.path(), &img, &opts).is_err());
        let opts = IngestOptions::new("a", 0.25);
        assert!(ingest_image(dir.path(), &RgbImage::new(0, 0), &opts).is_err());
    }

    #[test]
    fn unwritable_destination_is_io_error() {
        let dir = tempfile::tempdir().unwrap();
        let file = dir.path().join("plain-file");
        fs::write(&file, b"x").unwrap();
        let err = ingest_image(&file, &RgbImage::new(32, 32), &IngestOptions::new("a", 0.25)).unwrap_err();
        assert!(matches!(err, StoreError::Io { .. }), "{err}");
    }

    #[test]
    fn synthetic_image_is_deterministic_and_has_tissue() {
        let a = synthetic_tissue_image(128, 96, 5);
        assert_eq!(a, synthetic_tissue_image(128, 96, 5));
        assert_ne!(a, synthetic_tissue_image(128, 96, 6));
        let dark = a.pixels().filter(|p| p[1] < 150).count();
        assert!(dark > 128 * 96 / 50);
    }
}
