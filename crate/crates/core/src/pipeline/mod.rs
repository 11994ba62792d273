//! Concurrent patch loading.
//!
//! [`run_loader`] takes a stream of [`PatchSpec`]s and a shared [`Store`] and
//! returns an iterator of assembled patches. One producer thread feeds a
//! bounded job queue drained by `concurrency` workers. Every dispatched spec
//! holds a permit until the consumer takes its result, so at most
//! `prefetch_depth` patches are ever in flight or buffered.

mod bench;
mod pack;

use std::collections::{BTreeMap, HashMap};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use crossbeam_channel::{bounded, unbounded, Receiver, Sender};
use image::RgbImage;
use serde::{Deserialize, Serialize};

pub use bench::{build_synthetic_store, run_benchmark, BenchConfig, BenchReport};
pub use pack::{read_patch_pack, write_patch_pack, PackData, PackDtype, PackWriter, PatchPack, PACK_HEADER_LEN, PACK_MAGIC};

use crate::sampler::PatchSpec;
use crate::store::{SlideRecord, Store, StoreError, DEFAULT_CACHE_BYTES};

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("invalid loader config: {0}")]
    InvalidConfig(String),
    #[error("patch pack {path}: {message}")]
    Format { path: String, message: String },
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Store(#[from] StoreError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ErrorPolicy {
    /// Drop failed patches, keep going, report them at the end.
    #[default]
    SkipAndReport,
    /// Yield the first failure and stop.
    FailFast,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LoaderConfig {
    pub concurrency: usize,
    pub prefetch_depth: usize,
    pub ordered: bool,
    /// Tile cache capacity for stores opened on behalf of the loader.
    pub cache_bytes: u64,
    pub error_policy: ErrorPolicy,
}

impl Default for LoaderConfig {
    fn default() -> Self {
        Self {
            concurrency: 4,
            prefetch_depth: 16,
            ordered: true,
            cache_bytes: DEFAULT_CACHE_BYTES,
            error_policy: ErrorPolicy::SkipAndReport,
        }
    }
}

impl LoaderConfig {
    pub fn validate(&self) -> Result<(), PipelineError> {
        if self.concurrency == 0 {
            return Err(PipelineError::InvalidConfig("concurrency must be >= 1".into()));
        }
        if self.prefetch_depth < self.concurrency {
            return Err(PipelineError::InvalidConfig(format!(
                "prefetch_depth {} is smaller than concurrency {}",
                self.prefetch_depth, self.concurrency
            )));
        }
        Ok(())
    }
}

/// `v -> (v/255 - 0.5)/0.5`.
pub fn normalize_value(v: u8) -> f32 {
    (f32::from(v) / 255.0 - 0.5) / 0.5
}

/// Row-major HWC floats in `[-1, 1]`.
pub fn normalize_patch(pixels: &RgbImage) -> Vec<f32> {
    pixels.as_raw().iter().map(|&v| normalize_value(v)).collect()
}

#[derive(Debug, Clone)]
pub struct LoadedPatch {
    pub spec: PatchSpec,
    pub pixels: RgbImage,
    /// Time a worker spent assembling this patch.
    pub latency: Duration,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PatchFailure {
    pub spec: PatchSpec,
    pub error: String,
}

impl std::fmt::Display for PatchFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "patch seq {} on slide {}: {}", self.spec.seq, self.spec.slide_id, self.error)
    }
}

impl std::error::Error for PatchFailure {}

/// Assembles one patch exactly as a serial caller would.
pub fn load_patch(store: &Store, record: &SlideRecord, spec: &PatchSpec) -> Result<RgbImage, StoreError> {
    store.read_region(record, spec.rect(), spec.target_mpp, spec.out_size)
}

struct Records {
    store: Arc<Store>,
    opened: Mutex<HashMap<String, Arc<SlideRecord>>>,
}

impl Records {
    fn get(&self, slide_id: &str) -> Result<Arc<SlideRecord>, StoreError> {
        if let Some(r) = self.opened.lock().expect("record map poisoned").get(slide_id) {
            return Ok(Arc::clone(r));
        }
        let record = Arc::new(self.store.open_slide(slide_id)?);
        self.opened
            .lock()
            .expect("record map poisoned")
            .insert(slide_id.to_string(), Arc::clone(&record));
        Ok(record)
    }
}

type WorkerResult = (u64, Result<LoadedPatch, PatchFailure>);

/// Output side of a running loader.
pub struct Loader {
    results: Receiver<WorkerResult>,
    permits: Option<Sender<()>>,
    reorder: BTreeMap<u64, Result<LoadedPatch, PatchFailure>>,
    next_index: u64,
    ordered: bool,
    policy: ErrorPolicy,
    failures: Vec<PatchFailure>,
    outstanding: Arc<AtomicUsize>,
    peak_outstanding: Arc<AtomicUsize>,
    threads: Vec<JoinHandle<()>>,
    done: bool,
}

/// Start loading `specs` from `store`.
pub fn run_loader<I>(specs: I, store: Arc<Store>, config: &LoaderConfig) -> Result<Loader, PipelineError>
where
    I: IntoIterator<Item = PatchSpec>,
    I::IntoIter: Send + 'static,
{
    config.validate()?;
    let (permit_tx, permit_rx) = bounded::<()>(config.prefetch_depth);
    for _ in 0..config.prefetch_depth {
        permit_tx.send(()).expect("permit channel has room");
    }
    let (job_tx, job_rx) = bounded::<(u64, PatchSpec)>(config.concurrency);
    let (result_tx, result_rx) = unbounded::<WorkerResult>();
    let outstanding = Arc::new(AtomicUsize::new(0));
    let peak = Arc::new(AtomicUsize::new(0));

    let mut threads = Vec::with_capacity(config.concurrency + 1);
    let iter = specs.into_iter();
    {
        let outstanding = Arc::clone(&outstanding);
        let peak = Arc::clone(&peak);
        threads.push(std::thread::spawn(move || {
            for (index, spec) in (0u64..).zip(iter) {
                if permit_rx.recv().is_err() {
                    return;
                }
                let now = outstanding.fetch_add(1, Ordering::SeqCst) + 1;
                peak.fetch_max(now, Ordering::SeqCst);
                if job_tx.send((index, spec)).is_err() {
                    return;
                }
            }
        }));
    }
    let records = Arc::new(Records {
        store,
        opened: Mutex::new(HashMap::new()),
    });
    for _ in 0..config.concurrency {
        let jobs = job_rx.clone();
        let results = result_tx.clone();
        let records = Arc::clone(&records);
        threads.push(std::thread::spawn(move || {
            for (index, spec) in jobs {
                let start = Instant::now();
                let out = records
                    .get(&spec.slide_id)
                    .and_then(|record| load_patch(&records.store, &record, &spec))
                    .map_err(|e| e.to_string());
                let item = match out {
                    Ok(pixels) => Ok(LoadedPatch {
                        spec,
                        pixels,
                        latency: start.elapsed(),
                    }),
                    Err(error) => Err(PatchFailure { spec, error }),
                };
                if results.send((index, item)).is_err() {
                    return;
                }
            }
        }));
    }
    Ok(Loader {
        results: result_rx,
        permits: Some(permit_tx),
        reorder: BTreeMap::new(),
        next_index: 0,
        ordered: config.ordered,
        policy: config.error_policy,
        failures: Vec::new(),
        outstanding,
        peak_outstanding: peak,
        threads,
        done: false,
    })
}

impl Loader {
    /// Failures skipped so far under [`ErrorPolicy::SkipAndReport`].
    pub fn failures(&self) -> &[PatchFailure] {
        &self.failures
    }

    /// Highest number of dispatched-but-unconsumed patches seen.
    pub fn peak_buffered(&self) -> usize {
        self.peak_outstanding.load(Ordering::SeqCst)
    }

    fn next_raw(&mut self) -> Option<Result<LoadedPatch, PatchFailure>> {
        let item = if self.ordered {
            loop {
                if let Some(item) = self.reorder.remove(&self.next_index) {
                    self.next_index += 1;
                    break item;
                }
                let (index, item) = self.results.recv().ok()?;
                self.reorder.insert(index, item);
            }
        } else {
            self.results.recv().ok()?.1
        };
        self.outstanding.fetch_sub(1, Ordering::SeqCst);
        if let Some(p) = &self.permits {
            let _ = p.send(());
        }
        Some(item)
    }

    fn shutdown(&mut self) {
        self.done = true;
        self.permits = None;
        // Drain so workers blocked on nothing can finish; results are unbounded.
        while self.results.try_recv().is_ok() {}
    }
}

impl Iterator for Loader {
    type Item = Result<LoadedPatch, PatchFailure>;

    fn next(&mut self) -> Option<Self::Item> {
        while !self.done {
            match self.next_raw() {
                None => {
                    self.done = true;
                    return None;
                }
                Some(Ok(p)) => return Some(Ok(p)),
                Some(Err(f)) => match self.policy {
                    ErrorPolicy::FailFast => {
                        self.shutdown();
                        return Some(Err(f));
                    }
                    ErrorPolicy::SkipAndReport => {
                        log::warn!("{f}");
                        self.failures.push(f);
                    }
                },
            }
        }
        None
    }
}

impl Drop for Loader {
    fn drop(&mut self) {
        self.permits = None;
        // Closing the results side makes busy workers exit after their job.
        let (_, dead) = unbounded();
        self.results = dead;
        for t in self.threads.drain(..) {
            let _ = t.join();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalization_endpoints() {
        assert_eq!(normalize_value(0), -1.0);
        assert_eq!(normalize_value(255), 1.0);
        assert!((normalize_value(128) - 0.003_921_569).abs() < 1e-6);
    }

    #[test]
    fn config_invariants() {
        assert!(LoaderConfig::default().validate().is_ok());
        let bad = LoaderConfig {
            concurrency: 8,
            prefetch_depth: 4,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let zero = LoaderConfig {
            concurrency: 0,
            ..Default::default()
        };
        assert!(zero.validate().is_err());
    }
}
