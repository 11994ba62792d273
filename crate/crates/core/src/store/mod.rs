//! Chunked multi-resolution image store.
//!
//! On disk (or behind an HTTP server) a store looks like:
//!
//! ```text
//! <root>/index.json                         StoreIndex
//! <root>/slides/<id>.json                   SlideRecord
//! <root>/chunks/<id>/<level>/<tx>_<ty>.<ext> inline-file chunks
//! <root>/chunks/<id>.bin                    packed chunks (byte-range locators)
//! ```
//!
//! Chunk locators are resolved through a [`Transport`], decoded, and kept in a
//! byte-bounded [`TileCache`]. Region reads pick the pyramid level closest to
//! the requested resolution in log space and resample the window bilinearly.

mod cache;
mod codec;
mod error;
mod ingest;
mod record;
mod region;
mod transport;

use std::path::Path;
use std::sync::Arc;
use std::thread;
use std::time::Duration;

use image::RgbImage;

pub use cache::{CacheKey, CacheStats, TileCache};
pub use codec::{decode_tile, encode_tile};
pub use error::StoreError;
pub use ingest::{build_pyramid, ingest_image, synthetic_tissue_image, ChunkLayout, IngestOptions};
pub use record::{
    select_level, ChunkLocator, Codec, IndexEntry, LevelInfo, SlideRecord, StoreIndex, TileKey,
    STORE_FORMAT_VERSION,
};
pub use region::{box_downsample, resize_bilinear};
pub use transport::{
    HttpTransport, InstrumentedTransport, LocalTransport, Transport, TransportError,
    TransportErrorKind,
};

use crate::geometry::Rect;

pub type Result<T, E = StoreError> = std::result::Result<T, E>;

/// Default tile cache capacity: 256 MiB.
pub const DEFAULT_CACHE_BYTES: u64 = 256 << 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RetryPolicy {
    pub attempts: u32,
    pub initial_backoff: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            attempts: 3,
            initial_backoff: Duration::from_millis(100),
        }
    }
}

pub struct Store {
    root: String,
    transport: Arc<dyn Transport>,
    cache: TileCache,
    retry: RetryPolicy,
    index: StoreIndex,
}

impl std::fmt::Debug for Store {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Store")
            .field("root", &self.root)
            .field("transport", &self.transport.describe())
            .field("slides", &self.index.slides.len())
            .finish()
    }
}

impl Store {
    /// Open a store rooted at a local directory or an `http(s)://` base URL.
    pub fn open(root: &str, cache_bytes: u64) -> Result<Self> {
        let transport: Arc<dyn Transport> = if root.starts_with("http://") || root.starts_with("https://") {
            Arc::new(HttpTransport::new(root))
        } else {
            let path = Path::new(root);
            if !path.is_dir() {
                return Err(StoreError::StoreNotFound(root.to_string()));
            }
            Arc::new(LocalTransport::new(path))
        };
        Self::with_transport(root, transport, cache_bytes)
    }

    pub fn with_transport(root: &str, transport: Arc<dyn Transport>, cache_bytes: u64) -> Result<Self> {
        let raw = transport.get("index.json").map_err(|e| match e.kind {
            TransportErrorKind::NotFound => StoreError::StoreNotFound(format!("{root}/index.json")),
            _ => StoreError::Transport {
                what: "index.json".into(),
                attempts: 1,
                message: e.message,
            },
        })?;
        let index: StoreIndex = serde_json::from_slice(&raw).map_err(|e| StoreError::Metadata {
            what: "index.json".into(),
            message: e.to_string(),
        })?;
        index.validate()?;
        Ok(Self {
            root: root.to_string(),
            transport,
            cache: TileCache::new(cache_bytes),
            retry: RetryPolicy::default(),
            index,
        })
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub fn root(&self) -> &str {
        &self.root
    }

    pub fn index(&self) -> &StoreIndex {
        &self.index
    }

    pub fn slide_ids(&self) -> Vec<String> {
        self.index.slides.iter().map(|e| e.slide_id.clone()).collect()
    }

    pub fn cache(&self) -> &TileCache {
        &self.cache
    }

    /// Load and eagerly validate a slide's metadata.
    pub fn open_slide(&self, slide_id: &str) -> Result<SlideRecord> {
        let entry = self
            .index
            .slides
            .iter()
            .find(|e| e.slide_id == slide_id)
            .ok_or_else(|| StoreError::SlideNotFound(slide_id.to_string()))?;
        let raw = self.transport.get(&entry.metadata).map_err(|e| match e.kind {
            TransportErrorKind::NotFound => StoreError::SlideNotFound(slide_id.to_string()),
            _ => StoreError::Transport {
                what: entry.metadata.clone(),
                attempts: 1,
                message: e.message,
            },
        })?;
        let record: SlideRecord = serde_json::from_slice(&raw).map_err(|e| StoreError::Metadata {
            what: entry.metadata.clone(),
            message: e.to_string(),
        })?;
        if record.slide_id != slide_id {
            return Err(StoreError::Integrity {
                slide_id: slide_id.to_string(),
                detail: format!("metadata names slide {:?}", record.slide_id),
            });
        }
        record.validate()?;
        Ok(record)
    }

    /// Fetch and decode one tile, going through the cache.
    pub fn fetch_chunk(&self, record: &SlideRecord, key: TileKey) -> Result<Arc<RgbImage>> {
        let (tw, th) = record.tile_dims(key).ok_or_else(|| StoreError::OutOfBounds {
            slide_id: record.slide_id.clone(),
            detail: format!("tile {key} outside the tile grid"),
        })?;
        let cache_key = CacheKey::new(&record.slide_id, key);
        if let Some(tile) = self.cache.get(&cache_key) {
            return Ok(tile);
        }
        let locator = record.chunks.get(&key).ok_or_else(|| StoreError::MissingChunk {
            slide_id: record.slide_id.clone(),
            key,
        })?;
        let bytes = self.read_locator(locator)?;
        let tile = decode_tile(&bytes, locator.codec(), tw, th).map_err(|message| StoreError::Decode {
            slide_id: record.slide_id.clone(),
            key,
            message,
        })?;
        let tile = Arc::new(tile);
        self.cache.insert(cache_key, Arc::clone(&tile));
        Ok(tile)
    }

    fn read_locator(&self, locator: &ChunkLocator) -> Result<Vec<u8>> {
        let mut backoff = self.retry.initial_backoff;
        let attempts = self.retry.attempts.max(1);
        let mut attempt = 0;
        loop {
            attempt += 1;
            let res = match locator {
                ChunkLocator::InlineFile { path, .. } => self.transport.get(path),
                ChunkLocator::ByteRange { url, offset, length, .. } => {
                    self.transport.get_range(url, *offset, *length)
                }
            };
            match res {
                Ok(bytes) => return Ok(bytes),
                Err(e) if e.kind == TransportErrorKind::Retryable && attempt < attempts => {
                    log::debug!("retrying {} after {:?}: {}", locator.target(), backoff, e.message);
                    thread::sleep(backoff);
                    backoff *= 2;
                }
                Err(e) => {
                    return Err(StoreError::Transport {
                        what: locator.target().to_string(),
                        attempts: attempt,
                        message: e.message,
                    })
                }
            }
        }
    }

    /// Read a whole pyramid level; intended for thumbnails.
    pub fn read_level(&self, record: &SlideRecord, level: usize) -> Result<RgbImage> {
        let info = record.levels.get(level).ok_or_else(|| StoreError::OutOfBounds {
            slide_id: record.slide_id.clone(),
            detail: format!("level {level} of {}", record.levels.len()),
        })?;
        region::assemble_window(self, record, level, 0, 0, info.width, info.height)
    }

    /// Read `rect` (level-0 coordinates) at `target_mpp`, producing an
    /// `out_size` x `out_size` patch.
    pub fn read_region(&self, record: &SlideRecord, rect: Rect, target_mpp: f64, out_size: u32) -> Result<RgbImage> {
        region::read_region(self, record, rect, target_mpp, out_size)
    }
}

/// Convenience wrapper: open the store at `root` and load `slide_id`.
pub fn open_slide(root: &str, slide_id: &str) -> Result<SlideRecord> {
    Store::open(root, 0)?.open_slide(slide_id)
}
