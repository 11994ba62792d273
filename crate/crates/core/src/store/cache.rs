//! Byte-bounded LRU cache of decoded tiles.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use image::RgbImage;
use lru::LruCache;

use super::record::TileKey;

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct CacheKey {
    pub slide_id: Arc<str>,
    pub tile: TileKey,
}

impl CacheKey {
    pub fn new(slide_id: &str, tile: TileKey) -> Self {
        Self {
            slide_id: Arc::from(slide_id),
            tile,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct CacheStats {
    pub hits: u64,
    pub misses: u64,
    pub bytes: u64,
    pub entries: usize,
}

impl CacheStats {
    pub fn hit_rate(&self) -> f64 {
        let total = self.hits + self.misses;
        if total == 0 {
            0.0
        } else {
            self.hits as f64 / total as f64
        }
    }
}

struct Inner {
    lru: LruCache<CacheKey, Arc<RgbImage>>,
    bytes: u64,
}

/// Shared, internally synchronised tile cache. Total decoded bytes never
/// exceed `byte_capacity`; tiles larger than the capacity are not cached.
pub struct TileCache {
    capacity: u64,
    inner: Mutex<Inner>,
    hits: AtomicU64,
    misses: AtomicU64,
}

fn tile_bytes(tile: &RgbImage) -> u64 {
    tile.as_raw().len() as u64
}

impl TileCache {
    pub fn new(byte_capacity: u64) -> Self {
        Self {
            capacity: byte_capacity,
            inner: Mutex::new(Inner {
                lru: LruCache::unbounded(),
                bytes: 0,
            }),
            hits: AtomicU64::new(0),
            misses: AtomicU64::new(0),
        }
    }

    pub fn capacity(&self) -> u64 {
        self.capacity
    }

    /// Look up a tile; a hit refreshes its recency.
    pub fn get(&self, key: &CacheKey) -> Option<Arc<RgbImage>> {
        let mut inner = self.inner.lock().expect("tile cache poisoned");
        match inner.lru.get(key) {
            Some(tile) => {
                self.hits.fetch_add(1, Ordering::Relaxed);
                Some(Arc::clone(tile))
            }
            None => {
                self.misses.fetch_add(1, Ordering::Relaxed);
                None
            }
        }
    }

    pub fn contains(&self, key: &CacheKey) -> bool {
        self.inner.lock().expect("tile cache poisoned").lru.contains(key)
    }

    pub fn insert(&self, key: CacheKey, tile: Arc<RgbImage>) {
        let size = tile_bytes(&tile);
        if size > self.capacity {
            return;
        }
        let mut inner = self.inner.lock().expect("tile cache poisoned");
        if let Some(old) = inner.lru.put(key, tile) {
            inner.bytes -= tile_bytes(&old);
        }
        inner.bytes += size;
        while inner.bytes > self.capacity {
            match inner.lru.pop_lru() {
                Some((_, evicted)) => inner.bytes -= tile_bytes(&evicted),
                None => break,
            }
        }
    }

    pub fn stats(&self) -> CacheStats {
        let inner = self.inner.lock().expect("tile cache poisoned");
        CacheStats {
            hits: self.hits.load(Ordering::Relaxed),
            misses: self.misses.load(Ordering::Relaxed),
            bytes: inner.bytes,
            entries: inner.lru.len(),
        }
    }

    pub fn clear(&self) {
        let mut inner = self.inner.lock().expect("tile cache poisoned");
        inner.lru.clear();
        inner.bytes = 0;
    }
}
