use std::collections::{BTreeMap, HashSet};
use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::StoreError;

pub const STORE_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Codec {
    Raw,
    Png,
    Jpeg,
}

impl Codec {
    pub fn extension(self) -> &'static str {
        match self {
            Codec::Raw => "raw",
            Codec::Png => "png",
            Codec::Jpeg => "jpg",
        }
    }
}

impl std::str::FromStr for Codec {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "raw" => Ok(Codec::Raw),
            "png" => Ok(Codec::Png),
            "jpeg" | "jpg" => Ok(Codec::Jpeg),
            other => Err(format!("unknown codec {other:?} (expected raw, png or jpeg)")),
        }
    }
}

/// Where the encoded bytes of one tile live.
///
/// Paths and URLs are relative to the store root unless they are absolute
/// `http(s)://` URLs.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ChunkLocator {
    InlineFile { path: String, codec: Codec },
    ByteRange { url: String, offset: u64, length: u64, codec: Codec },
}

impl ChunkLocator {
    pub fn codec(&self) -> Codec {
        match self {
            ChunkLocator::InlineFile { codec, .. } | ChunkLocator::ByteRange { codec, .. } => *codec,
        }
    }

    pub fn target(&self) -> &str {
        match self {
            ChunkLocator::InlineFile { path, .. } => path,
            ChunkLocator::ByteRange { url, .. } => url,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct TileKey {
    pub level: u32,
    pub tx: u32,
    pub ty: u32,
}

impl TileKey {
    pub const fn new(level: u32, tx: u32, ty: u32) -> Self {
        Self { level, tx, ty }
    }
}

impl fmt::Display for TileKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(level {}, tx {}, ty {})", self.level, self.tx, self.ty)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LevelInfo {
    pub width: u32,
    pub height: u32,
    pub mpp: f64,
    pub downsample: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlideRecord {
    pub slide_id: String,
    pub base_mpp: f64,
    pub levels: Vec<LevelInfo>,
    pub tile_size: u32,
    #[serde(serialize_with = "ser_chunks", deserialize_with = "de_chunks")]
    pub chunks: BTreeMap<TileKey, ChunkLocator>,
}

#[derive(Serialize, Deserialize)]
struct ChunkEntry {
    level: u32,
    tx: u32,
    ty: u32,
    #[serde(flatten)]
    locator: ChunkLocator,
}

fn ser_chunks<S: Serializer>(chunks: &BTreeMap<TileKey, ChunkLocator>, s: S) -> Result<S::Ok, S::Error> {
    s.collect_seq(chunks.iter().map(|(k, l)| ChunkEntry {
        level: k.level,
        tx: k.tx,
        ty: k.ty,
        locator: l.clone(),
    }))
}

fn de_chunks<'de, D: Deserializer<'de>>(d: D) -> Result<BTreeMap<TileKey, ChunkLocator>, D::Error> {
    let entries = Vec::<ChunkEntry>::deserialize(d)?;
    let mut map = BTreeMap::new();
    for e in entries {
        let key = TileKey::new(e.level, e.tx, e.ty);
        if map.insert(key, e.locator).is_some() {
            return Err(serde::de::Error::custom(format!("duplicate chunk entry {key}")));
        }
    }
    Ok(map)
}

impl SlideRecord {
    pub fn width(&self) -> u32 {
        self.levels[0].width
    }

    pub fn height(&self) -> u32 {
        self.levels[0].height
    }

    /// Number of tiles along x and y at `level`.
    pub fn tile_grid(&self, level: usize) -> (u32, u32) {
        let info = &self.levels[level];
        (info.width.div_ceil(self.tile_size), info.height.div_ceil(self.tile_size))
    }

    /// Pixel dimensions of a tile; edge tiles are cropped to the level bounds.
    pub fn tile_dims(&self, key: TileKey) -> Option<(u32, u32)> {
        let info = self.levels.get(key.level as usize)?;
        let (nx, ny) = self.tile_grid(key.level as usize);
        if key.tx >= nx || key.ty >= ny {
            return None;
        }
        let x0 = key.tx * self.tile_size;
        let y0 = key.ty * self.tile_size;
        Some(((info.width - x0).min(self.tile_size), (info.height - y0).min(self.tile_size)))
    }

    pub fn level_mpps(&self) -> Vec<f64> {
        self.levels.iter().map(|l| l.mpp).collect()
    }

    /// Check every structural invariant, reporting the first violation.
    pub fn validate(&self) -> Result<(), StoreError> {
        let fail = |detail: String| {
            Err(StoreError::Integrity {
                slide_id: self.slide_id.clone(),
                detail,
            })
        };
        if self.slide_id.is_empty() {
            return fail("empty slide id".into());
        }
        if !(self.base_mpp.is_finite() && self.base_mpp > 0.0) {
            return fail(format!("base_mpp must be positive, got {}", self.base_mpp));
        }
        if self.tile_size == 0 {
            return fail("tile_size must be positive".into());
        }
        let Some(l0) = self.levels.first() else {
            return fail("no levels".into());
        };
        if l0.downsample != 1.0 {
            return fail(format!("level 0 downsample must be 1, got {}", l0.downsample));
        }
        if l0.width == 0 || l0.height == 0 {
            return fail("level 0 has zero size".into());
        }
        for (i, level) in self.levels.iter().enumerate() {
            if !(level.downsample.is_finite() && level.downsample >= 1.0) {
                return fail(format!("level {i} downsample {} is invalid", level.downsample));
            }
            let expected_mpp = self.base_mpp * level.downsample;
            if (level.mpp - expected_mpp).abs() > 1e-9 * expected_mpp {
                return fail(format!(
                    "level {i} mpp {} != base_mpp x downsample = {expected_mpp}",
                    level.mpp
                ));
            }
            if i > 0 && level.mpp <= self.levels[i - 1].mpp {
                return fail(format!("levels not sorted by increasing mpp at level {i}"));
            }
            let ew = (f64::from(l0.width) / level.downsample).ceil();
            let eh = (f64::from(l0.height) / level.downsample).ceil();
            if (f64::from(level.width) - ew).abs() > 1.0 || (f64::from(level.height) - eh).abs() > 1.0 {
                return fail(format!(
                    "level {i} dimensions {}x{} inconsistent with downsample {} (expected about {ew}x{eh})",
                    level.width, level.height, level.downsample
                ));
            }
        }
        let mut expected = 0usize;
        for level in 0..self.levels.len() {
            let (nx, ny) = self.tile_grid(level);
            for ty in 0..ny {
                for tx in 0..nx {
                    let key = TileKey::new(level as u32, tx, ty);
                    let Some(loc) = self.chunks.get(&key) else {
                        return Err(StoreError::MissingChunk {
                            slide_id: self.slide_id.clone(),
                            key,
                        });
                    };
                    expected += 1;
                    if let ChunkLocator::ByteRange { length, codec, .. } = loc {
                        if *length == 0 {
                            return fail(format!("chunk {key} has zero length"));
                        }
                        if *codec == Codec::Raw {
                            let (w, h) = self.tile_dims(key).expect("key inside grid");
                            let want = u64::from(w) * u64::from(h) * 3;
                            if *length != want {
                                return fail(format!("raw chunk {key} has length {length}, expected {want}"));
                            }
                        }
                    }
                }
            }
        }
        if self.chunks.len() != expected {
            let stray = self
                .chunks
                .keys()
                .find(|k| self.tile_dims(**k).is_none())
                .copied();
            return fail(match stray {
                Some(k) => format!("chunk {k} lies outside the tile grid"),
                None => "unexpected chunk entries".into(),
            });
        }
        Ok(())
    }
}

/// Pick the level whose mpp is closest to `target_mpp` in log space. Ties go
/// to the finer level.
pub fn select_level(record: &SlideRecord, target_mpp: f64) -> usize {
    let mut best = 0;
    let mut best_dist = f64::INFINITY;
    // Levels are sorted by increasing mpp, so a strict improvement test keeps
    // the finer level on ties.
    for (i, level) in record.levels.iter().enumerate() {
        let dist = (level.mpp / target_mpp).ln().abs();
        if dist < best_dist - 1e-12 {
            best = i;
            best_dist = dist;
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IndexEntry {
    pub slide_id: String,
    /// Path of the slide's metadata document, relative to the store root.
    pub metadata: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StoreIndex {
    pub format_version: u32,
    pub slides: Vec<IndexEntry>,
}

impl Default for StoreIndex {
    fn default() -> Self {
        Self {
            format_version: STORE_FORMAT_VERSION,
            slides: Vec::new(),
        }
    }
}

impl StoreIndex {
    pub fn validate(&self) -> Result<(), StoreError> {
        if self.format_version != STORE_FORMAT_VERSION {
            return Err(StoreError::Metadata {
                what: "index.json".into(),
                message: format!(
                    "unsupported format_version {} (expected {STORE_FORMAT_VERSION})",
                    self.format_version
                ),
            });
        }
        let mut seen = HashSet::new();
        for e in &self.slides {
            if !seen.insert(e.slide_id.as_str()) {
                return Err(StoreError::Metadata {
                    what: "index.json".into(),
                    message: format!("duplicate slide id {:?}", e.slide_id),
                });
            }
        }
        Ok(())
    }
}
