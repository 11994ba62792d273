//! Throughput benchmark over a procedural store with injected fetch latency.

use std::path::Path;
use std::sync::Arc;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use super::{run_loader, LoaderConfig, PipelineError};
use crate::foreground::{polygon_for_slide, DEFAULT_LUMINANCE_THRESHOLD, DEFAULT_MIN_REGION_PX};
use crate::sampler::{EpochStream, PatchSpec, SamplerConfig, SlideEntry};
use crate::store::{ingest_image, synthetic_tissue_image, IngestOptions, InstrumentedTransport, LocalTransport, SlideRecord, Store};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BenchConfig {
    pub slides: usize,
    pub slide_size: u32,
    pub tile_size: u32,
    pub base_mpp: f64,
    pub latency_ms: f64,
    pub patches: u64,
    pub seed: u64,
    pub sampler: SamplerConfig,
    pub loader: LoaderConfig,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            slides: 2,
            slide_size: 4096,
            tile_size: 256,
            base_mpp: 0.25,
            latency_ms: 5.0,
            patches: 256,
            seed: 0,
            sampler: SamplerConfig::default(),
            loader: LoaderConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub patches_per_sec: f64,
    pub p50_latency_ms: f64,
    pub p99_latency_ms: f64,
    pub cache_hit_rate: f64,
    pub patches: u64,
    pub failures: u64,
    pub wall_secs: f64,
}

/// Ingest `n` procedural slides named `synth-000`, `synth-001`, ...
pub fn build_synthetic_store(
    root: &Path,
    n: usize,
    size: u32,
    tile_size: u32,
    base_mpp: f64,
    seed: u64,
) -> Result<Vec<SlideRecord>, PipelineError> {
    (0..n)
        .map(|i| {
            let img = synthetic_tissue_image(size, size, seed.wrapping_add(i as u64));
            let mut opts = IngestOptions::new(format!("synth-{i:03}"), base_mpp);
            opts.tile_size = tile_size;
            Ok(ingest_image(root, &img, &opts)?)
        })
        .collect()
}

/// Nearest-rank percentile of sorted `v`.
fn percentile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return 0.0;
    }
    let rank = (q * sorted.len() as f64).ceil().max(1.0) as usize;
    sorted[rank.min(sorted.len()) - 1]
}

/// Build a synthetic store under `root`, sample `config.patches` specs and
/// time the loader over them.
pub fn run_benchmark(root: &Path, config: &BenchConfig) -> Result<BenchReport, PipelineError> {
    let records = build_synthetic_store(root, config.slides, config.slide_size, config.tile_size, config.base_mpp, config.seed)?;
    let root_str = root.to_string_lossy().to_string();
    let plain = Store::open(&root_str, config.loader.cache_bytes)?;
    let mut slides = Vec::with_capacity(records.len());
    for r in &records {
        let poly = polygon_for_slide(&plain, r, DEFAULT_LUMINANCE_THRESHOLD, DEFAULT_MIN_REGION_PX)
            .map_err(|e| PipelineError::InvalidConfig(format!("slide {}: {e}", r.slide_id)))?;
        slides.push(SlideEntry::new(r, poly));
    }
    let sampler = SamplerConfig {
        epoch_size: config.patches,
        seed: config.seed,
        ..config.sampler.clone()
    };
    let specs: Vec<PatchSpec> = EpochStream::new(sampler, slides)
        .and_then(|s| s.collect())
        .map_err(|e| PipelineError::InvalidConfig(e.to_string()))?;

    let latency = Duration::from_secs_f64(config.latency_ms.max(0.0) / 1000.0);
    let transport = Arc::new(InstrumentedTransport::new(LocalTransport::new(root), latency));
    let store = Arc::new(Store::with_transport(&root_str, transport, config.loader.cache_bytes)?);
    let start = Instant::now();
    let mut loader = run_loader(specs, Arc::clone(&store), &config.loader)?;
    let mut latencies = Vec::new();
    for item in loader.by_ref() {
        match item {
            Ok(p) => latencies.push(p.latency.as_secs_f64() * 1000.0),
            Err(f) => return Err(PipelineError::InvalidConfig(f.to_string())),
        }
    }
    let wall = start.elapsed().as_secs_f64();
    let failures = loader.failures().len() as u64;
    latencies.sort_by(f64::total_cmp);
    let n = latencies.len() as u64;
    Ok(BenchReport {
        patches_per_sec: if wall > 0.0 { n as f64 / wall } else { 0.0 },
        p50_latency_ms: percentile(&latencies, 0.50),
        p99_latency_ms: percentile(&latencies, 0.99),
        cache_hit_rate: store.cache().stats().hit_rate(),
        patches: n,
        failures,
        wall_secs: wall,
    })
}
