//! Deterministic patch streams.
//!
//! A stream draws a slide (uniformly or by weight), a target resolution from
//! a weighted mpp mixture, and patch positions uniformly among those that
//! touch the slide's foreground bounding box, accepting the first candidate whose foreground
//! overlap reaches `min_foreground`. Every purpose (slide choice, mpp, coords,
//! cache replay) has its own counter-based substream, so a given
//! `(seed, config, slides)` triple always yields the same manifest.

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::foreground::{overlap_fraction, ForegroundPolygon};
use crate::geometry::{round_half_away, Rect};
use crate::rng::CounterRng;
use crate::store::SlideRecord;

/// One "ImageNet epoch" worth of patches.
pub const IMAGENET_EPOCH: u64 = 1_280_000;

#[derive(Debug, thiserror::Error)]
pub enum SamplerError {
    #[error("invalid sampler config: {0}")]
    InvalidConfig(String),
    #[error("no acceptable patch on slide {slide_id} after {attempts} attempts")]
    ExhaustedAttempts { slide_id: String, attempts: u32 },
    #[error("no samplable slide: {0}")]
    NoSamplableSlide(String),
    #[error("manifest {path} line {line}: {message}")]
    Manifest { path: String, line: usize, message: String },
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MppTarget {
    pub mpp: f64,
    pub weight: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SlideStrategy {
    #[default]
    Uniform,
    Weighted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplerConfig {
    pub patch_size: u32,
    pub min_foreground: f64,
    pub target_mpps: Vec<MppTarget>,
    pub slide_strategy: SlideStrategy,
    pub slide_weights: Option<Vec<f64>>,
    pub epoch_size: u64,
    pub seed: u64,
    pub max_attempts_per_slide: u32,
}

impl Default for SamplerConfig {
    /// 256 px patches, 40% foreground, equal mix of 40x/20x/10x/5x
    /// (0.25/0.5/1.0/2.0 um/px), one ImageNet epoch.
    fn default() -> Self {
        Self {
            patch_size: 256,
            min_foreground: 0.40,
            target_mpps: [0.25, 0.5, 1.0, 2.0]
                .into_iter()
                .map(|mpp| MppTarget { mpp, weight: 1.0 })
                .collect(),
            slide_strategy: SlideStrategy::Uniform,
            slide_weights: None,
            epoch_size: IMAGENET_EPOCH,
            seed: 0,
            max_attempts_per_slide: 100,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<(), SamplerError> {
        let bad = |m: String| Err(SamplerError::InvalidConfig(m));
        if self.patch_size == 0 {
            return bad("patch_size must be >= 1".into());
        }
        if !(0.0..=1.0).contains(&self.min_foreground) {
            return bad(format!("min_foreground {} outside [0, 1]", self.min_foreground));
        }
        if self.epoch_size == 0 {
            return bad("epoch_size must be >= 1".into());
        }
        if self.max_attempts_per_slide == 0 {
            return bad("max_attempts_per_slide must be >= 1".into());
        }
        if self.target_mpps.is_empty() {
            return bad("target_mpps is empty".into());
        }
        for t in &self.target_mpps {
            if !(t.mpp.is_finite() && t.mpp > 0.0) {
                return bad(format!("target mpp {} must be positive", t.mpp));
            }
            if !(t.weight.is_finite() && t.weight >= 0.0) {
                return bad(format!("mpp weight {} must be >= 0", t.weight));
            }
        }
        if self.target_mpps.iter().all(|t| t.weight == 0.0) {
            return bad("all mpp weights are zero".into());
        }
        if let Some(w) = &self.slide_weights {
            if w.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
                return bad("slide weights must be finite and >= 0".into());
            }
            if w.iter().all(|v| *v == 0.0) {
                return bad("all slide weights are zero".into());
            }
        } else if self.slide_strategy == SlideStrategy::Weighted {
            return bad("weighted slide strategy needs slide_weights".into());
        }
        Ok(())
    }
}

/// One patch to extract. `width`/`height` are the level-0 footprint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatchSpec {
    pub slide_id: String,
    pub x: u32,
    pub y: u32,
    pub width: u32,
    pub height: u32,
    pub target_mpp: f64,
    pub out_size: u32,
    pub seq: u64,
}

/// Identity of a patch independent of its stream position.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct PatchKey {
    pub slide_id: String,
    pub rect: Rect,
    pub mpp_bits: u64,
    pub out_size: u32,
}

impl PatchSpec {
    pub fn rect(&self) -> Rect {
        Rect::new(self.x, self.y, self.width, self.height)
    }

    pub fn key(&self) -> PatchKey {
        PatchKey {
            slide_id: self.slide_id.clone(),
            rect: self.rect(),
            mpp_bits: self.target_mpp.to_bits(),
            out_size: self.out_size,
        }
    }
}

/// Level-0 side length covered by an `out_size` patch at `target_mpp`.
pub fn footprint(out_size: u32, target_mpp: f64, base_mpp: f64) -> u32 {
    round_half_away(f64::from(out_size) * target_mpp / base_mpp).max(1.0) as u32
}

/// What the sampler needs to know about a slide.
#[derive(Debug, Clone)]
pub struct SlideEntry {
    pub slide_id: String,
    pub width: u32,
    pub height: u32,
    pub base_mpp: f64,
    pub polygon: ForegroundPolygon,
}

impl SlideEntry {
    pub fn new(record: &SlideRecord, polygon: ForegroundPolygon) -> Self {
        Self {
            slide_id: record.slide_id.clone(),
            width: record.width(),
            height: record.height(),
            base_mpp: record.base_mpp,
            polygon,
        }
    }
}

/// Independent substreams, one per sampling purpose.
#[derive(Debug, Clone)]
pub struct SamplerStreams {
    pub slide: CounterRng,
    pub mpp: CounterRng,
    pub coords: CounterRng,
    pub cache: CounterRng,
}

impl SamplerStreams {
    pub fn new(seed: u64) -> Self {
        let root = CounterRng::new(seed);
        Self {
            slide: root.substream("slide"),
            mpp: root.substream("mpp"),
            coords: root.substream("coords"),
            cache: root.substream("cache"),
        }
    }
}

fn slide_weights(config: &SamplerConfig, n: usize) -> Result<Vec<f64>, SamplerError> {
    match (&config.slide_weights, config.slide_strategy) {
        (Some(w), SlideStrategy::Weighted) => {
            if w.len() != n {
                return Err(SamplerError::InvalidConfig(format!("{} slide weights for {n} slides", w.len())));
            }
            Ok(w.clone())
        }
        _ => Ok(vec![1.0; n]),
    }
}

/// Draw a slide index: uniform, or proportional to `slide_weights`.
pub fn sample_slide(config: &SamplerConfig, n_slides: usize, rng: &mut CounterRng) -> Result<usize, SamplerError> {
    if n_slides == 0 {
        return Err(SamplerError::NoSamplableSlide("no slides given".into()));
    }
    match config.slide_strategy {
        SlideStrategy::Uniform => Ok(rng.below(n_slides as u64) as usize),
        SlideStrategy::Weighted => {
            let w = slide_weights(config, n_slides)?;
            rng.weighted_index(&w)
                .ok_or_else(|| SamplerError::InvalidConfig("all slide weights are zero".into()))
        }
    }
}

/// Rejection-sample one patch on `slide`. The returned spec has `seq` 0.
pub fn sample_patch(
    slide: &SlideEntry,
    config: &SamplerConfig,
    streams: &mut SamplerStreams,
) -> Result<PatchSpec, SamplerError> {
    let exhausted = |attempts| SamplerError::ExhaustedAttempts {
        slide_id: slide.slide_id.clone(),
        attempts,
    };
    let Some((bx0, by0, bx1, by1)) = slide.polygon.bounds() else {
        return Err(exhausted(0));
    };
    let weights: Vec<f64> = config.target_mpps.iter().map(|t| t.weight).collect();
    let pick = streams
        .mpp
        .weighted_index(&weights)
        .ok_or_else(|| SamplerError::InvalidConfig("all mpp weights are zero".into()))?;
    let target_mpp = config.target_mpps[pick].mpp;
    let side = footprint(config.patch_size, target_mpp, slide.base_mpp);
    if side > slide.width || side > slide.height {
        return Err(exhausted(0));
    }
    // Top-left corners range over every position that fits inside the slide
    // and touches the foreground bounding box.
    let span = |lo: f64, hi: f64, extent: u32| {
        let max = i64::from(extent - side);
        let a = ((lo - f64::from(side)).floor() as i64 + 1).clamp(0, max);
        let b = (hi.ceil() as i64 - 1).clamp(0, max);
        (a.min(b), b)
    };
    let (x_lo, x_hi) = span(bx0, bx1, slide.width);
    let (y_lo, y_hi) = span(by0, by1, slide.height);
    for _ in 0..config.max_attempts_per_slide {
        let x = streams.coords.range_inclusive(x_lo, x_hi) as u32;
        let y = streams.coords.range_inclusive(y_lo, y_hi) as u32;
        let rect = Rect::new(x, y, side, side);
        if overlap_fraction(&slide.polygon, rect) >= config.min_foreground {
            return Ok(PatchSpec {
                slide_id: slide.slide_id.clone(),
                x,
                y,
                width: side,
                height: side,
                target_mpp,
                out_size: config.patch_size,
                seq: 0,
            });
        }
    }
    Err(exhausted(config.max_attempts_per_slide))
}

/// Offsets `0, stride, 2*stride, ...` for which a `size` window still fits
/// inside `extent`.
pub fn grid_positions(extent: u32, size: u32, stride: u32) -> Vec<u32> {
    assert!(stride >= 1, "stride must be >= 1");
    if size == 0 || size > extent {
        return Vec::new();
    }
    (0..=(extent - size) / stride).map(|i| i * stride).collect()
}

/// Grid patches over a whole slide at `target_mpp`. `stride` is in output
/// pixels, like `out_size`. Patches below `min_foreground` overlap are
/// skipped when a polygon is given.
pub fn grid_specs(
    slide: &SlideEntry,
    target_mpp: f64,
    out_size: u32,
    stride: u32,
    min_foreground: Option<f64>,
) -> Vec<PatchSpec> {
    let side = footprint(out_size, target_mpp, slide.base_mpp);
    let step = footprint(stride, target_mpp, slide.base_mpp);
    let xs = grid_positions(slide.width, side, step);
    let ys = grid_positions(slide.height, side, step);
    let mut out = Vec::new();
    for &y in &ys {
        for &x in &xs {
            let rect = Rect::new(x, y, side, side);
            if let Some(min) = min_foreground {
                if overlap_fraction(&slide.polygon, rect) < min {
                    continue;
                }
            }
            out.push(PatchSpec {
                slide_id: slide.slide_id.clone(),
                x,
                y,
                width: side,
                height: side,
                target_mpp,
                out_size,
                seq: out.len() as u64,
            });
        }
    }
    out
}

/// Exactly `epoch_size` accepted patches, numbered from 0. Slides whose
/// rejection sampling runs out of attempts are redrawn without counting.
#[derive(Debug, Clone)]
pub struct EpochStream {
    config: SamplerConfig,
    slides: Vec<SlideEntry>,
    streams: SamplerStreams,
    emitted: u64,
    failure_limit: u64,
    done: bool,
}

impl EpochStream {
    pub fn new(config: SamplerConfig, slides: Vec<SlideEntry>) -> Result<Self, SamplerError> {
        config.validate()?;
        if slides.is_empty() {
            return Err(SamplerError::NoSamplableSlide("no slides given".into()));
        }
        let weights = slide_weights(&config, slides.len())?;
        let samplable = slides
            .iter()
            .zip(&weights)
            .any(|(s, &w)| w > 0.0 && !s.polygon.is_empty() && s.polygon.area() > 0.0);
        if !samplable {
            return Err(SamplerError::NoSamplableSlide(
                "every slide has zero weight or an empty foreground polygon".into(),
            ));
        }
        let failure_limit = (20 * slides.len() as u64).max(1000);
        let streams = SamplerStreams::new(config.seed);
        Ok(Self {
            config,
            slides,
            streams,
            emitted: 0,
            failure_limit,
            done: false,
        })
    }

    /// Shard `shard` of a parallel run: same config with seed `seed + shard`.
    pub fn shard(mut config: SamplerConfig, slides: Vec<SlideEntry>, shard: u64) -> Result<Self, SamplerError> {
        config.seed = config.seed.wrapping_add(shard);
        Self::new(config, slides)
    }

    pub fn config(&self) -> &SamplerConfig {
        &self.config
    }

    pub fn remaining(&self) -> u64 {
        self.config.epoch_size - self.emitted
    }
}

impl Iterator for EpochStream {
    type Item = Result<PatchSpec, SamplerError>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.done || self.emitted >= self.config.epoch_size {
            return None;
        }
        let mut failures = 0u64;
        loop {
            let idx = match sample_slide(&self.config, self.slides.len(), &mut self.streams.slide) {
                Ok(i) => i,
                Err(e) => {
                    self.done = true;
                    return Some(Err(e));
                }
            };
            match sample_patch(&self.slides[idx], &self.config, &mut self.streams) {
                Ok(mut spec) => {
                    spec.seq = self.emitted;
                    self.emitted += 1;
                    return Some(Ok(spec));
                }
                Err(SamplerError::ExhaustedAttempts { .. }) => {
                    failures += 1;
                    if failures >= self.failure_limit {
                        self.done = true;
                        return Some(Err(SamplerError::NoSamplableSlide(format!(
                            "{failures} consecutive slide draws produced no acceptable patch"
                        ))));
                    }
                }
                Err(e) => {
                    self.done = true;
                    return Some(Err(e));
                }
            }
        }
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        let r = usize::try_from(self.remaining()).unwrap_or(usize::MAX);
        (0, Some(r))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Cap {
    Limited(usize),
    Unlimited,
}

impl std::str::FromStr for Cap {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "inf" | "unlimited" => Ok(Cap::Unlimited),
            n => match n.parse::<usize>() {
                Ok(0) => Err("cap must be >= 1 or 'inf'".into()),
                Ok(v) => Ok(Cap::Limited(v)),
                Err(e) => Err(format!("bad cap {n:?}: {e}")),
            },
        }
    }
}

/// Limits a stream to at most `cap` distinct patches: the first `cap` specs
/// pass through and are remembered, after which every emitted spec is a
/// uniform draw from the remembered set. The stream keeps the length of
/// the inner stream; `seq` is renumbered by emission position.
pub struct CappedStream<I> {
    inner: I,
    cap: Cap,
    stored: Vec<PatchSpec>,
    rng: CounterRng,
    position: u64,
}

impl<I> CappedStream<I>
where
    I: Iterator<Item = Result<PatchSpec, SamplerError>>,
{
    pub fn new(inner: I, cap: Cap, rng: CounterRng) -> Self {
        Self {
            inner,
            cap,
            stored: Vec::new(),
            rng,
            position: 0,
        }
    }

    pub fn stored(&self) -> &[PatchSpec] {
        &self.stored
    }
}

impl<I> Iterator for CappedStream<I>
where
    I: Iterator<Item = Result<PatchSpec, SamplerError>>,
{
    type Item = Result<PatchSpec, SamplerError>;

    fn next(&mut self) -> Option<Self::Item> {
        let fresh = match self.inner.next()? {
            Ok(spec) => spec,
            Err(e) => return Some(Err(e)),
        };
        let mut spec = match self.cap {
            Cap::Unlimited => fresh,
            Cap::Limited(cap) if self.stored.len() < cap => {
                self.stored.push(fresh.clone());
                fresh
            }
            Cap::Limited(_) => {
                let i = self.rng.below(self.stored.len() as u64) as usize;
                self.stored[i].clone()
            }
        };
        spec.seq = self.position;
        self.position += 1;
        Some(Ok(spec))
    }
}

pub fn capped_stream<I>(inner: I, cap: Cap, seed: u64) -> CappedStream<I>
where
    I: Iterator<Item = Result<PatchSpec, SamplerError>>,
{
    CappedStream::new(inner, cap, SamplerStreams::new(seed).cache)
}

/// Count of distinct patches in `specs`.
pub fn distinct_count<'a>(specs: impl IntoIterator<Item = &'a PatchSpec>) -> usize {
    specs.into_iter().map(PatchSpec::key).collect::<HashSet<_>>().len()
}

/// JSONL manifest, one spec per line.
pub fn write_manifest<'a>(path: &Path, specs: impl IntoIterator<Item = &'a PatchSpec>) -> Result<u64, SamplerError> {
    let io = |source| SamplerError::Io {
        path: path.display().to_string(),
        source,
    };
    let mut w = BufWriter::new(File::create(path).map_err(io)?);
    let mut n = 0;
    for spec in specs {
        serde_json::to_writer(&mut w, spec).expect("spec serialises");
        w.write_all(b"\n").map_err(io)?;
        n += 1;
    }
    w.flush().map_err(io)?;
    Ok(n)
}

pub fn read_manifest(path: &Path) -> Result<Vec<PatchSpec>, SamplerError> {
    let io = |source| SamplerError::Io {
        path: path.display().to_string(),
        source,
    };
    let reader = BufReader::new(File::open(path).map_err(io)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(io)?;
        if line.trim().is_empty() {
            continue;
        }
        let spec: PatchSpec = serde_json::from_str(&line).map_err(|e| SamplerError::Manifest {
            path: path.display().to_string(),
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push(spec);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn full_slide(id: &str, w: u32, h: u32) -> SlideEntry {
        SlideEntry {
            slide_id: id.into(),
            width: w,
            height: h,
            base_mpp: 0.25,
            polygon: ForegroundPolygon::rectangle(id, 0.0, 0.0, f64::from(w), f64::from(h)),
        }
    }

    fn small_config(epoch: u64, seed: u64) -> SamplerConfig {
        SamplerConfig {
            epoch_size: epoch,
            seed,
            ..Default::default()
        }
    }

    #[test]
    fn default_epoch_is_imagenet_sized() {
        assert_eq!(SamplerConfig::default().epoch_size, 1_280_000);
        assert_eq!(SamplerConfig::default().min_foreground, 0.40);
        assert_eq!(SamplerConfig::default().patch_size, 256);
    }

    #[test]
    fn grid_examples() {
        assert_eq!(grid_positions(1000, 224, 194), vec![0, 194, 388, 582, 776]);
        assert_eq!(grid_positions(224, 224, 1), vec![0]);
        assert_eq!(grid_positions(10, 4, 4), vec![0, 4]);
        assert!(grid_positions(10, 11, 4).is_empty());
    }

    #[test]
    fn weights_select_only_nonzero_slide() {
        let config = SamplerConfig {
            slide_strategy: SlideStrategy::Weighted,
            slide_weights: Some(vec![0.0, 1.0]),
            ..Default::default()
        };
        let mut rng = CounterRng::new(5);
        for _ in 0..500 {
            assert_eq!(sample_slide(&config, 2, &mut rng).unwrap(), 1);
        }
        let single = SamplerConfig::default();
        assert_eq!(sample_slide(&single, 1, &mut rng).unwrap(), 0);
    }

    #[test]
    fn uniform_slide_frequencies() {
        let config = SamplerConfig::default();
        let mut rng = CounterRng::new(11);
        let mut counts = [0usize; 4];
        for _ in 0..40_000 {
            counts[sample_slide(&config, 4, &mut rng).unwrap()] += 1;
        }
        for c in counts {
            assert!((c as f64 / 40_000.0 - 0.25).abs() <= 0.01, "{counts:?}");
        }
    }

    #[test]
    fn all_zero_weights_rejected() {
        let config = SamplerConfig {
            slide_strategy: SlideStrategy::Weighted,
            slide_weights: Some(vec![0.0, 0.0]),
            ..Default::default()
        };
        assert!(matches!(config.validate(), Err(SamplerError::InvalidConfig(_))));
    }

    #[test]
    fn full_polygon_accepts_first_candidate() {
        let slide = full_slide("s", 4096, 4096);
        let config = SamplerConfig::default();
        let mut streams = SamplerStreams::new(1);
        let before = streams.coords.position();
        let spec = sample_patch(&slide, &config, &mut streams).unwrap();
        assert_eq!(streams.coords.position() - before, 2);
        assert_eq!(overlap_fraction(&slide.polygon, spec.rect()), 1.0);
        assert_eq!(spec.width, footprint(256, spec.target_mpp, 0.25));
    }

    #[test]
    fn empty_polygon_exhausts() {
        let mut slide = full_slide("s", 1024, 1024);
        slide.polygon.rings.clear();
        let mut streams = SamplerStreams::new(1);
        assert!(matches!(
            sample_patch(&slide, &SamplerConfig::default(), &mut streams),
            Err(SamplerError::ExhaustedAttempts { .. })
        ));
    }

    #[test]
    fn epoch_counts_and_determinism() {
        let slides = vec![full_slide("a", 4096, 4096), full_slide("b", 3000, 5000)];
        let run = |seed| -> Vec<PatchSpec> {
            EpochStream::new(small_config(10, seed), slides.clone())
                .unwrap()
                .collect::<Result<_, _>>()
                .unwrap()
        };
        let a = run(1);
        assert_eq!(a.len(), 10);
        assert_eq!(a.iter().map(|s| s.seq).collect::<Vec<_>>(), (0..10).collect::<Vec<_>>());
        assert_eq!(a, run(1));
        assert_ne!(a, run(2));
    }

    #[test]
    fn unsamplable_slide_set_errors() {
        let mut s = full_slide("a", 512, 512);
        s.polygon.rings.clear();
        assert!(matches!(
            EpochStream::new(small_config(5, 0), vec![s]),
            Err(SamplerError::NoSamplableSlide(_))
        ));
        assert!(EpochStream::new(small_config(5, 0), vec![]).is_err());
    }

    #[test]
    fn skipped_slides_do_not_count() {
        // Slide "tiny" is too small for any footprint; slide "ok" always works.
        let tiny = full_slide("tiny", 100, 100);
        let ok = full_slide("ok", 4096, 4096);
        let specs: Vec<_> = EpochStream::new(small_config(50, 3), vec![tiny, ok])
            .unwrap()
            .collect::<Result<_, _>>()
            .unwrap();
        assert_eq!(specs.len(), 50);
        assert!(specs.iter().all(|s| s.slide_id == "ok"));
    }

    #[test]
    fn zero_weight_slides_are_never_emitted() {
        let slides: Vec<_> = (0..10).map(|i| full_slide(&format!("s{i}"), 4096, 4096)).collect();
        let mut weights = vec![0.0; 10];
        weights[3] = 1.0;
        let config = SamplerConfig {
            slide_strategy: SlideStrategy::Weighted,
            slide_weights: Some(weights),
            ..small_config(200, 4)
        };
        for spec in EpochStream::new(config, slides).unwrap() {
            assert_eq!(spec.unwrap().slide_id, "s3");
        }
    }

    #[test]
    fn cap_one_repeats_the_first_patch() {
        let slides = vec![full_slide("a", 4096, 4096)];
        let inner = EpochStream::new(small_config(20, 9), slides).unwrap();
        let out: Vec<_> = capped_stream(inner, Cap::Limited(1), 9)
            .collect::<Result<Vec<_>, _>>()
            .unwrap();
        assert_eq!(out.len(), 20);
        assert!(out.iter().all(|s| s.key() == out[0].key()));
        assert_eq!(out.last().unwrap().seq, 19);
    }

    #[test]
    fn manifest_roundtrip_and_line_format() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.jsonl");
        let spec = PatchSpec {
            slide_id: "a".into(),
            x: 1,
            y: 2,
            width: 512,
            height: 512,
            target_mpp: 0.5,
            out_size: 256,
            seq: 0,
        };
        write_manifest(&path, [&spec]).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(
            text,
            "{\"slide_id\":\"a\",\"x\":1,\"y\":2,\"width\":512,\"height\":512,\"target_mpp\":0.5,\"out_size\":256,\"seq\":0}\n"
        );
        assert_eq!(read_manifest(&path).unwrap(), vec![spec]);
        std::fs::write(&path, "{\"slide_id\":1}\n").unwrap();
        assert!(matches!(read_manifest(&path), Err(SamplerError::Manifest { line: 1, .. })));
    }

    #[test]
    fn cap_parse() {
        assert_eq!("inf".parse::<Cap>().unwrap(), Cap::Unlimited);
        assert_eq!("1000".parse::<Cap>().unwrap(), Cap::Limited(1000));
        assert!("0".parse::<Cap>().is_err());
    }
}
