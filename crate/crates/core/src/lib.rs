//! Online patch extraction from tiled image pyramids.
//!
//! The crate is organised around the path a training patch takes:
//!
//! - [`store`]: chunked pyramid store (ingest, chunk locators, byte-range
//!   transports, LRU tile cache, region reads at arbitrary magnification).
//! - [`foreground`]: tissue masks, contour tracing into polygons and the
//!   area-overlap admission test.
//! - [`sampler`]: deterministic streams of [`PatchSpec`]s (slide choice,
//!   rejection sampling, mixed magnifications, grids, capped caches).
//! - [`pipeline`]: concurrent bounded-prefetch loader, normalisation and the
//!   `KPB1` patch pack format, plus a latency-injecting benchmark harness.
//! - [`metrics`]: ODCorr and RankMe over embedding matrices (`KEM1` files).
//! - [`probe`]: the fixed linear-probing protocol.

pub mod foreground;
pub mod geometry;
pub mod metrics;
pub mod pipeline;
pub mod probe;
pub mod rng;
pub mod sampler;
pub mod store;

pub use foreground::{BinaryMask, ForegroundPolygon};
pub use geometry::Rect;
pub use metrics::EmbeddingMatrix;
pub use pipeline::{LoaderConfig, PatchPack};
pub use probe::{ProbeConfig, ProbeResult};
pub use rng::CounterRng;
pub use sampler::{PatchSpec, SamplerConfig};
pub use store::{ChunkLocator, Codec, SlideRecord, Store, TileCache};
