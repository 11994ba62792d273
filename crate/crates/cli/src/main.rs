//! `patchforge` command-line tool.

mod config;

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use patchforge_core::foreground::{
    mask_from_rgb, polygon_for_slide, polygon_from_mask, BinaryMask, ForegroundPolygon, DEFAULT_LUMINANCE_THRESHOLD,
    DEFAULT_MIN_REGION_PX,
};
use patchforge_core::metrics::{odcorr, rankme, read_embeddings, read_labels};
use patchforge_core::pipeline::{run_benchmark, run_loader, BenchConfig, ErrorPolicy, LoaderConfig, PackDtype, PackWriter};
use patchforge_core::probe::{encode_labels, run_probe, split_stratified_grouped, LabeledSet, ProbeConfig};
use patchforge_core::sampler::{
    capped_stream, grid_specs, read_manifest, write_manifest, Cap, EpochStream, MppTarget, PatchSpec, SamplerConfig,
    SlideEntry, SlideStrategy,
};
use patchforge_core::store::{
    ingest_image, synthetic_tissue_image, ChunkLayout, Codec, IngestOptions, SlideRecord, Store, DEFAULT_CACHE_BYTES,
};

#[derive(Parser, Debug)]
#[command(name = "patchforge", version, about = "Online patch extraction, embedding metrics and linear probing")]
#[command(args_override_self = true)]
struct Cli {
    /// JSON file of default flag values; explicit flags take precedence.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    /// Tile cache capacity in bytes.
    #[arg(long, global = true, env = "PATCHFORGE_CACHE_BYTES", default_value_t = DEFAULT_CACHE_BYTES)]
    cache_bytes: u64,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Tile an image (or a procedural one) into a store.
    Ingest(IngestArgs),
    /// Threshold a slide's thumbnail into a binary tissue mask PNG.
    Mask(MaskArgs),
    /// Trace a foreground polygon for a slide.
    Polygon(PolygonArgs),
    /// Write a random patch manifest (one JSON spec per line).
    Sample(SampleArgs),
    /// Write a regular-grid patch manifest for one slide.
    Grid(GridArgs),
    /// Load the patches of a manifest into a KPB1 pack.
    Load(LoadArgs),
    /// Measure loader throughput on a synthetic store.
    Bench(BenchArgs),
    /// Unsupervised embedding metrics.
    #[command(subcommand)]
    Metrics(MetricsCommand),
    /// Linear probe on frozen embeddings.
    Probe(ProbeArgs),
}

#[derive(Args, Debug)]
struct IngestArgs {
    #[arg(long)]
    store: PathBuf,
    #[arg(long)]
    slide_id: String,
    /// Source image (PNG, JPEG, ...).
    #[arg(long, conflicts_with = "synthetic", required_unless_present = "synthetic")]
    image: Option<PathBuf>,
    /// Generate a procedural slide of WIDTHxHEIGHT instead of reading an image.
    #[arg(long, value_name = "WxH")]
    synthetic: Option<String>,
    /// Level-0 microns per pixel.
    #[arg(long, default_value_t = 0.25)]
    mpp: f64,
    #[arg(long, default_value_t = 256)]
    tile_size: u32,
    #[arg(long, default_value_t = 2)]
    downsample: u32,
    #[arg(long, default_value = "raw")]
    codec: Codec,
    /// `files` (one file per chunk) or `packed` (one blob, byte ranges).
    #[arg(long, default_value = "files")]
    layout: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Debug)]
struct MaskArgs {
    #[arg(long)]
    store: String,
    #[arg(long)]
    slide: String,
    #[arg(long, default_value_t = DEFAULT_LUMINANCE_THRESHOLD)]
    threshold: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct PolygonArgs {
    #[arg(long)]
    store: String,
    #[arg(long)]
    slide: String,
    /// Precomputed mask PNG; without it the thumbnail is thresholded.
    #[arg(long)]
    mask: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_LUMINANCE_THRESHOLD)]
    threshold: f64,
    /// Drop regions smaller than this many mask pixels.
    #[arg(long, default_value_t = DEFAULT_MIN_REGION_PX)]
    min_region: f64,
    /// Defaults to `<store>/polygons/<slide>.json`.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SampleArgs {
    #[arg(long)]
    store: String,
    /// Slides to sample from; default is every slide in the store.
    #[arg(long, value_delimiter = ',')]
    slides: Vec<String>,
    /// Patches to emit.
    #[arg(long, visible_alias = "count", default_value_t = patchforge_core::sampler::IMAGENET_EPOCH)]
    epoch_size: u64,
    /// Target resolution `MPP[:WEIGHT]`; repeat for a mixture.
    #[arg(long = "mpp", value_parser = parse_mpp)]
    mpps: Vec<MppTarget>,
    /// Output patch side in pixels.
    #[arg(long, default_value_t = 256)]
    size: u32,
    #[arg(long, default_value_t = 0.40)]
    min_foreground: f64,
    #[arg(long, default_value_t = 100)]
    max_attempts: u32,
    /// Per-slide sampling weights, in the order of `--slides` (or the index).
    #[arg(long, value_delimiter = ',')]
    slide_weights: Vec<f64>,
    /// Distinct-patch cap (`inf` for none).
    #[arg(long, default_value = "inf")]
    cap: Cap,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Worker shard; shards use seeds `seed + shard`.
    #[arg(long, default_value_t = 0)]
    shard: u64,
    #[arg(long, required_unless_present = "dry_run")]
    out: Option<PathBuf>,
    /// Validate inputs and exit without sampling.
    #[arg(long)]
    dry_run: bool,
}

#[derive(Args, Debug)]
struct GridArgs {
    #[arg(long)]
    store: String,
    #[arg(long)]
    slide: String,
    #[arg(long)]
    mpp: f64,
    #[arg(long, default_value_t = 224)]
    size: u32,
    /// Step between patches in output pixels; defaults to `--size`.
    #[arg(long)]
    stride: Option<u32>,
    /// Skip patches below this polygon overlap.
    #[arg(long)]
    min_foreground: Option<f64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct LoadArgs {
    #[arg(long)]
    store: String,
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long, required_unless_present = "dry_run")]
    out: Option<PathBuf>,
    #[arg(long, default_value = "u8")]
    dtype: PackDtype,
    #[arg(long, default_value_t = 4)]
    concurrency: usize,
    #[arg(long, default_value_t = 16)]
    prefetch: usize,
    /// Emit in completion order instead of manifest order.
    #[arg(long)]
    unordered: bool,
    /// Abort on the first failed patch instead of skipping it.
    #[arg(long)]
    fail_fast: bool,
    #[arg(long)]
    dry_run: bool,
}

#[derive(Args, Debug)]
struct BenchArgs {
    /// Where to build the synthetic store; a temporary directory by default.
    #[arg(long)]
    workdir: Option<PathBuf>,
    #[arg(long, default_value_t = 2)]
    slides: usize,
    #[arg(long, default_value_t = 4096)]
    slide_size: u32,
    #[arg(long, default_value_t = 256)]
    tile_size: u32,
    /// Injected latency per chunk read.
    #[arg(long, default_value_t = 5.0)]
    latency_ms: f64,
    #[arg(long, default_value_t = 256)]
    patches: u64,
    #[arg(long, default_value_t = 256)]
    size: u32,
    #[arg(long, default_value_t = 4)]
    concurrency: usize,
    #[arg(long, default_value_t = 16)]
    prefetch: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Also write the JSON report here.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum MetricsCommand {
    /// Off-diagonal correlation of sample embeddings.
    Odcorr(EmbeddingsArg),
    /// Effective rank of the embedding matrix.
    Rankme(EmbeddingsArg),
}

#[derive(Args, Debug)]
struct EmbeddingsArg {
    /// KEM1 embedding file.
    #[arg(long)]
    embeddings: PathBuf,
}

#[derive(Args, Debug)]
struct ProbeArgs {
    #[arg(long)]
    embeddings: PathBuf,
    /// JSONL sidecar with `row`, `label` and `group`.
    #[arg(long)]
    labels: PathBuf,
    /// Train/validation/test fractions.
    #[arg(long, value_delimiter = ',', default_values_t = vec![0.6, 0.2, 0.2])]
    fractions: Vec<f64>,
    #[arg(long, default_value_t = 4096)]
    batch_size: usize,
    #[arg(long, default_value_t = 0.01)]
    base_lr: f64,
    /// Batch size at which `--base-lr` applies; the lr scales linearly from it.
    #[arg(long, default_value_t = 4096)]
    base_batch_size: usize,
    #[arg(long, default_value_t = 12_500)]
    total_steps: u64,
    #[arg(long, default_value_t = 5)]
    runs: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse_mpp(s: &str) -> Result<MppTarget, String> {
    let (m, w) = match s.split_once(':') {
        Some((m, w)) => (m, w.parse::<f64>().map_err(|e| format!("bad weight {w:?}: {e}"))?),
        None => (s, 1.0),
    };
    let mpp = m.parse::<f64>().map_err(|e| format!("bad mpp {m:?}: {e}"))?;
    if !(mpp.is_finite() && mpp > 0.0) {
        return Err(format!("mpp must be positive, got {mpp}"));
    }
    Ok(MppTarget { mpp, weight: w })
}

fn open_store(root: &str, cache_bytes: u64) -> Result<Store> {
    Store::open(root, cache_bytes).with_context(|| format!("opening store {root}"))
}

fn polygon_path(root: &str, slide: &str) -> PathBuf {
    Path::new(root).join("polygons").join(format!("{slide}.json"))
}

/// Saved polygon if there is one, otherwise the thumbnail threshold.
fn slide_polygon(store: &Store, record: &SlideRecord) -> Result<ForegroundPolygon> {
    let saved = polygon_path(store.root(), &record.slide_id);
    if !store.root().starts_with("http") && saved.exists() {
        return ForegroundPolygon::load(&saved).with_context(|| format!("loading {}", saved.display()));
    }
    polygon_for_slide(store, record, DEFAULT_LUMINANCE_THRESHOLD, DEFAULT_MIN_REGION_PX)
        .with_context(|| format!("tracing foreground of slide {}", record.slide_id))
}

fn cmd_ingest(a: IngestArgs) -> Result<()> {
    let img = match (&a.image, &a.synthetic) {
        (Some(p), _) => image::open(p).with_context(|| format!("reading {}", p.display()))?.to_rgb8(),
        (None, Some(dims)) => {
            let (w, h) = dims
                .split_once(['x', 'X'])
                .and_then(|(w, h)| Some((w.parse().ok()?, h.parse().ok()?)))
                .with_context(|| format!("--synthetic expects WIDTHxHEIGHT, got {dims:?}"))?;
            synthetic_tissue_image(w, h, a.seed)
        }
        (None, None) => bail!("one of --image or --synthetic is required"),
    };
    let mut opts = IngestOptions::new(a.slide_id, a.mpp);
    opts.tile_size = a.tile_size;
    opts.downsample_factor = a.downsample;
    opts.codec = a.codec;
    opts.layout = match a.layout.as_str() {
        "files" => ChunkLayout::Files,
        "packed" => ChunkLayout::Packed,
        other => bail!("unknown layout {other:?} (expected files or packed)"),
    };
    let rec = ingest_image(&a.store, &img, &opts)?;
    println!(
        "slide={} levels={} width={} height={} chunks={}",
        rec.slide_id,
        rec.levels.len(),
        rec.width(),
        rec.height(),
        rec.chunks.len()
    );
    Ok(())
}

fn cmd_mask(a: MaskArgs, cache: u64) -> Result<()> {
    let store = open_store(&a.store, cache)?;
    let rec = store.open_slide(&a.slide)?;
    let level = rec.levels.len() - 1;
    let thumb = store.read_level(&rec, level)?;
    let mask = mask_from_rgb(&thumb, a.threshold, 1.0 / rec.levels[level].downsample);
    mask.save_png(&a.out)?;
    let frac = mask.count() as f64 / (f64::from(mask.width()) * f64::from(mask.height()));
    println!("foreground_fraction={frac:.6}");
    Ok(())
}

fn cmd_polygon(a: PolygonArgs, cache: u64) -> Result<()> {
    let store = open_store(&a.store, cache)?;
    let rec = store.open_slide(&a.slide)?;
    let poly = match &a.mask {
        Some(path) => {
            let probe = BinaryMask::load_png(path, 1.0)?;
            let mask = BinaryMask::load_png(path, f64::from(probe.width()) / f64::from(rec.width()))?;
            let mut p = polygon_from_mask(&mask, a.min_region)?;
            p.slide_id = rec.slide_id.clone();
            p
        }
        None => {
            let level = rec.levels.len() - 1;
            let thumb = store.read_level(&rec, level)?;
            let mask = mask_from_rgb(&thumb, a.threshold, 1.0 / rec.levels[level].downsample);
            let mut p = polygon_from_mask(&mask, a.min_region)?;
            p.slide_id = rec.slide_id.clone();
            p
        }
    };
    let out = a.out.unwrap_or_else(|| polygon_path(&a.store, &a.slide));
    if let Some(parent) = out.parent() {
        std::fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    poly.save(&out)?;
    println!("rings={} area={:.6} out={}", poly.rings.len(), poly.area(), out.display());
    Ok(())
}

fn cmd_sample(a: SampleArgs, cache: u64) -> Result<()> {
    let store = open_store(&a.store, cache)?;
    let ids = if a.slides.is_empty() { store.slide_ids() } else { a.slides.clone() };
    if ids.is_empty() {
        bail!("store {} has no slides", a.store);
    }
    let mut config = SamplerConfig {
        patch_size: a.size,
        min_foreground: a.min_foreground,
        epoch_size: a.epoch_size,
        seed: a.seed,
        max_attempts_per_slide: a.max_attempts,
        ..Default::default()
    };
    if !a.mpps.is_empty() {
        config.target_mpps = a.mpps.clone();
    }
    if !a.slide_weights.is_empty() {
        config.slide_strategy = SlideStrategy::Weighted;
        config.slide_weights = Some(a.slide_weights.clone());
    }
    config.validate()?;
    let mut slides = Vec::with_capacity(ids.len());
    for id in &ids {
        let rec = store.open_slide(id)?;
        let poly = slide_polygon(&store, &rec)?;
        slides.push(SlideEntry::new(&rec, poly));
    }
    let stream = EpochStream::shard(config, slides, a.shard)?;
    if a.dry_run {
        println!("dry_run=ok slides={} patches=0", ids.len());
        return Ok(());
    }
    let out = a.out.expect("clap requires --out without --dry-run");
    let specs: Vec<PatchSpec> = capped_stream(stream, a.cap, a.seed.wrapping_add(a.shard)).collect::<Result<_, _>>()?;
    write_manifest(&out, &specs)?;
    println!("patches={} out={}", specs.len(), out.display());
    Ok(())
}

fn cmd_grid(a: GridArgs, cache: u64) -> Result<()> {
    let store = open_store(&a.store, cache)?;
    let rec = store.open_slide(&a.slide)?;
    let poly = match a.min_foreground {
        Some(_) => slide_polygon(&store, &rec)?,
        None => ForegroundPolygon::rectangle(&rec.slide_id, 0.0, 0.0, f64::from(rec.width()), f64::from(rec.height())),
    };
    if a.size == 0 || a.stride == Some(0) {
        bail!("--size and --stride must be >= 1");
    }
    let slide = SlideEntry::new(&rec, poly);
    let specs = grid_specs(&slide, a.mpp, a.size, a.stride.unwrap_or(a.size), a.min_foreground);
    write_manifest(&a.out, &specs)?;
    println!("patches={} out={}", specs.len(), a.out.display());
    Ok(())
}

fn cmd_load(a: LoadArgs, cache: u64) -> Result<()> {
    let specs = read_manifest(&a.manifest)?;
    let store = Arc::new(open_store(&a.store, cache)?);
    let config = LoaderConfig {
        concurrency: a.concurrency,
        prefetch_depth: a.prefetch,
        ordered: !a.unordered,
        cache_bytes: cache,
        error_policy: if a.fail_fast { ErrorPolicy::FailFast } else { ErrorPolicy::SkipAndReport },
    };
    config.validate()?;
    let sizes: std::collections::BTreeSet<u32> = specs.iter().map(|s| s.out_size).collect();
    if sizes.len() > 1 {
        bail!("manifest mixes output sizes {sizes:?}; a pack holds one size");
    }
    for id in specs.iter().map(|s| s.slide_id.as_str()).collect::<std::collections::BTreeSet<_>>() {
        store.open_slide(id)?;
    }
    if a.dry_run {
        println!("dry_run=ok specs={} patches=0", specs.len());
        return Ok(());
    }
    let out = a.out.expect("clap requires --out without --dry-run");
    let out_size = sizes.into_iter().next().unwrap_or(0);
    let mut writer = PackWriter::create(&out, out_size, a.dtype)?;
    let mut loader = run_loader(specs, Arc::clone(&store), &config)?;
    for item in loader.by_ref() {
        let p = item?;
        writer.push(&p.spec, &p.pixels)?;
    }
    let failures = loader.failures().to_vec();
    let n = writer.finish()?;
    for f in &failures {
        eprintln!("warning: skipped {f}");
    }
    println!("patches={n} failures={} out={}", failures.len(), out.display());
    Ok(())
}

fn cmd_bench(a: BenchArgs, cache: u64) -> Result<()> {
    let tmp;
    let root = match &a.workdir {
        Some(p) => {
            std::fs::create_dir_all(p).with_context(|| format!("creating {}", p.display()))?;
            p.clone()
        }
        None => {
            tmp = tempfile::tempdir().context("creating a temporary directory")?;
            tmp.path().to_path_buf()
        }
    };
    let config = BenchConfig {
        slides: a.slides,
        slide_size: a.slide_size,
        tile_size: a.tile_size,
        latency_ms: a.latency_ms,
        patches: a.patches,
        seed: a.seed,
        sampler: SamplerConfig {
            patch_size: a.size,
            ..Default::default()
        },
        loader: LoaderConfig {
            concurrency: a.concurrency,
            prefetch_depth: a.prefetch,
            cache_bytes: cache,
            ..Default::default()
        },
        ..Default::default()
    };
    let report = run_benchmark(&root, &config)?;
    let json = serde_json::json!({
        "patches_per_sec": format!("{:.6}", report.patches_per_sec).parse::<f64>()?,
        "p50_latency_ms": format!("{:.6}", report.p50_latency_ms).parse::<f64>()?,
        "p99_latency_ms": format!("{:.6}", report.p99_latency_ms).parse::<f64>()?,
        "cache_hit_rate": format!("{:.6}", report.cache_hit_rate).parse::<f64>()?,
    });
    let text = serde_json::to_string_pretty(&json)?;
    if let Some(out) = &a.out {
        std::fs::write(out, &text).with_context(|| format!("writing {}", out.display()))?;
    }
    println!("{text}");
    Ok(())
}

fn cmd_metrics(m: MetricsCommand) -> Result<()> {
    match m {
        MetricsCommand::Odcorr(a) => println!("odcorr={:.6}", odcorr(&read_embeddings(&a.embeddings)?)?),
        MetricsCommand::Rankme(a) => println!("rankme={:.6}", rankme(&read_embeddings(&a.embeddings)?)?),
    }
    Ok(())
}

fn cmd_probe(a: ProbeArgs) -> Result<()> {
    let x = read_embeddings(&a.embeddings)?;
    let rows = read_labels(&a.labels)?;
    if rows.len() != x.n_samples() {
        bail!("{} labels for {} embeddings", rows.len(), x.n_samples());
    }
    if a.fractions.len() != 3 {
        bail!("--fractions needs three values (train,val,test)");
    }
    let labels: Vec<String> = rows.iter().map(|r| r.label.clone()).collect();
    let groups: Vec<String> = rows.iter().map(|r| r.group.clone()).collect();
    let (y, classes) = encode_labels(&labels);
    let split = split_stratified_grouped(&y, &groups, &a.fractions, a.seed)?;
    for w in &split.warnings {
        eprintln!("warning: {w}");
    }
    let all = LabeledSet::new(x, y)?;
    let part = |s: usize| all.subset(&split.indices(s));
    let (train, val) = (part(0)?, part(1)?);
    let test_idx = split.indices(2);
    let test = if test_idx.is_empty() { None } else { Some(all.subset(&test_idx)?) };
    let config = ProbeConfig {
        batch_size: a.batch_size,
        base_lr: a.base_lr,
        total_steps: a.total_steps,
        runs: a.runs,
        base_batch_size: a.base_batch_size,
        ..Default::default()
    };
    let result = run_probe(&train, &val, test.as_ref(), &config, a.seed)?;
    if let Some(out) = &a.out {
        let mut v = serde_json::to_value(&result)?;
        v["classes"] = serde_json::json!(classes);
        std::fs::write(out, serde_json::to_string_pretty(&v)?).with_context(|| format!("writing {}", out.display()))?;
    }
    for (i, r) in result.runs.iter().enumerate() {
        println!(
            "run={i} balanced_accuracy={:.6} steps={} early_stopped={}",
            r.balanced_accuracy(),
            r.steps,
            r.early_stopped
        );
    }
    println!("mean={:.6} std={:.6}", result.mean, result.std);
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let cache = cli.cache_bytes;
    match cli.command {
        Command::Ingest(a) => cmd_ingest(a),
        Command::Mask(a) => cmd_mask(a, cache),
        Command::Polygon(a) => cmd_polygon(a, cache),
        Command::Sample(a) => cmd_sample(a, cache),
        Command::Grid(a) => cmd_grid(a, cache),
        Command::Load(a) => cmd_load(a, cache),
        Command::Bench(a) => cmd_bench(a, cache),
        Command::Metrics(m) => cmd_metrics(m),
        Command::Probe(a) => cmd_probe(a),
    }
}

fn fail(e: &anyhow::Error) -> ExitCode {
    let msg = format!("{e:#}").replace('\n', " ");
    let _ = writeln!(std::io::stderr(), "error: {msg}");
    ExitCode::from(1)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let argv = match config::merge(std::env::args().collect()) {
        Ok(a) => a,
        Err(e) => return fail(&e),
    };
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => fail(&e),
    }
}
