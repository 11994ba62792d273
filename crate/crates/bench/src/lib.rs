//! Fixtures shared by the criterion benches.

use patchforge_core::foreground::ForegroundPolygon;
use patchforge_core::metrics::EmbeddingMatrix;
use patchforge_core::rng::CounterRng;
use patchforge_core::store::{ingest_image, synthetic_tissue_image, IngestOptions, SlideRecord, Store};
use tempfile::TempDir;

/// A single procedural slide on disk; the directory lives as long as this.
pub struct SlideFixture {
    pub store: Store,
    pub record: SlideRecord,
    _dir: TempDir,
}

pub fn slide_fixture(size: u32, tile_size: u32, cache_bytes: u64) -> SlideFixture {
    let dir = tempfile::tempdir().expect("tempdir");
    let mut opts = IngestOptions::new("bench", 0.25);
    opts.tile_size = tile_size;
    ingest_image(dir.path(), &synthetic_tissue_image(size, size, 11), &opts).expect("ingest");
    let store = Store::open(dir.path().to_str().expect("utf-8 path"), cache_bytes).expect("open store");
    let record = store.open_slide("bench").expect("open slide");
    SlideFixture {
        store,
        record,
        _dir: dir,
    }
}

/// Gaussian `n x k` embeddings.
pub fn random_embeddings(n: usize, k: usize, seed: u64) -> EmbeddingMatrix {
    let mut rng = CounterRng::new(seed);
    EmbeddingMatrix::new(n, k, (0..n * k).map(|_| rng.normal()).collect()).expect("finite values")
}

/// A star-shaped polygon with `vertices` points and a square hole.
pub fn star_polygon(vertices: usize, radius: f64) -> ForegroundPolygon {
    let outer = (0..vertices)
        .map(|i| {
            let t = std::f64::consts::TAU * i as f64 / vertices as f64;
            let r = if i % 2 == 0 { radius } else { radius * 0.6 };
            [radius + r * t.cos(), radius + r * t.sin()]
        })
        .collect();
    let (c, h) = (radius, radius * 0.1);
    let hole = vec![[c - h, c - h], [c - h, c + h], [c + h, c + h], [c + h, c - h]];
    ForegroundPolygon::new("bench", 1.0, vec![outer, hole])
}
