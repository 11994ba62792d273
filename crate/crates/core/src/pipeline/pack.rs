//! `KPB1` patch packs.
//!
//! Layout (little-endian): magic `KPB1`, u32 count, u32 out_size,
//! u32 channels (always 3), u32 dtype (0 = u8, 1 = f32), then
//! `count * out_size^2 * 3` values, row-major HWC per patch. The patch specs
//! go to a JSONL sidecar at `<path>.jsonl`.

use std::fs::File;
use std::io::{BufWriter, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use image::RgbImage;

use super::{normalize_patch, PipelineError};
use crate::sampler::{read_manifest, PatchSpec};

pub const PACK_MAGIC: &[u8; 4] = b"KPB1";
pub const PACK_HEADER_LEN: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PackDtype {
    U8,
    /// Normalized to `[-1, 1]`.
    F32,
}

impl PackDtype {
    fn tag(self) -> u32 {
        match self {
            PackDtype::U8 => 0,
            PackDtype::F32 => 1,
        }
    }

    fn width(self) -> usize {
        match self {
            PackDtype::U8 => 1,
            PackDtype::F32 => 4,
        }
    }
}

impl std::str::FromStr for PackDtype {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "u8" => Ok(PackDtype::U8),
            "f32" => Ok(PackDtype::F32),
            other => Err(format!("unknown dtype {other:?} (expected u8 or f32)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum PackData {
    U8(Vec<u8>),
    F32(Vec<f32>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct PatchPack {
    pub count: u32,
    pub out_size: u32,
    pub data: PackData,
    /// Empty when there is no sidecar.
    pub specs: Vec<PatchSpec>,
}

impl PatchPack {
    pub fn dtype(&self) -> PackDtype {
        match self.data {
            PackData::U8(_) => PackDtype::U8,
            PackData::F32(_) => PackDtype::F32,
        }
    }

    pub fn values_per_patch(&self) -> usize {
        self.out_size as usize * self.out_size as usize * 3
    }

    /// Pixels of patch `i`; only for `u8` packs.
    pub fn patch_u8(&self, i: usize) -> Option<RgbImage> {
        let n = self.values_per_patch();
        match &self.data {
            PackData::U8(v) if i < self.count as usize => {
                RgbImage::from_raw(self.out_size, self.out_size, v[i * n..(i + 1) * n].to_vec())
            }
            _ => None,
        }
    }
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".jsonl");
    PathBuf::from(s)
}

/// Streaming pack writer. The header count is patched in by [`finish`](Self::finish).
pub struct PackWriter {
    path: PathBuf,
    out: BufWriter<File>,
    sidecar: BufWriter<File>,
    out_size: u32,
    dtype: PackDtype,
    count: u32,
}

impl PackWriter {
    pub fn create(path: &Path, out_size: u32, dtype: PackDtype) -> Result<Self, PipelineError> {
        let io = |source| PipelineError::Io {
            path: path.display().to_string(),
            source,
        };
        let mut out = BufWriter::new(File::create(path).map_err(io)?);
        let side_path = sidecar_path(path);
        let sidecar = BufWriter::new(File::create(&side_path).map_err(|source| PipelineError::Io {
            path: side_path.display().to_string(),
            source,
        })?);
        let mut header = Vec::with_capacity(PACK_HEADER_LEN);
        header.extend_from_slice(PACK_MAGIC);
        for v in [0u32, out_size, 3, dtype.tag()] {
            header.extend_from_slice(&v.to_le_bytes());
        }
        out.write_all(&header).map_err(io)?;
        Ok(Self {
            path: path.to_path_buf(),
            out,
            sidecar,
            out_size,
            dtype,
            count: 0,
        })
    }

    fn io(&self, source: std::io::Error) -> PipelineError {
        PipelineError::Io {
            path: self.path.display().to_string(),
            source,
        }
    }

    pub fn push(&mut self, spec: &PatchSpec, pixels: &RgbImage) -> Result<(), PipelineError> {
        if pixels.width() != self.out_size || pixels.height() != self.out_size {
            return Err(PipelineError::Format {
                path: self.path.display().to_string(),
                message: format!(
                    "mixed sizes: patch is {}x{}, pack holds {}x{}",
                    pixels.width(),
                    pixels.height(),
                    self.out_size,
                    self.out_size
                ),
            });
        }
        let res = match self.dtype {
            PackDtype::U8 => self.out.write_all(pixels.as_raw()),
            PackDtype::F32 => {
                let bytes: Vec<u8> = normalize_patch(pixels).iter().flat_map(|v| v.to_le_bytes()).collect();
                self.out.write_all(&bytes)
            }
        };
        res.map_err(|e| self.io(e))?;
        serde_json::to_writer(&mut self.sidecar, spec).expect("spec serialises");
        self.sidecar.write_all(b"\n").map_err(|e| self.io(e))?;
        self.count += 1;
        Ok(())
    }

    pub fn count(&self) -> u32 {
        self.count
    }

    pub fn finish(mut self) -> Result<u32, PipelineError> {
        let count = self.count;
        self.sidecar.flush().map_err(|e| self.io(e))?;
        self.out.flush().map_err(|e| self.io(e))?;
        let file = self.out.get_mut();
        file.seek(SeekFrom::Start(4)).map_err(|e| self.io(e))?;
        let file = self.out.get_mut();
        let r = file.write_all(&count.to_le_bytes()).and_then(|_| file.sync_all());
        r.map_err(|e| self.io(e))?;
        Ok(count)
    }
}

pub fn write_patch_pack<'a>(
    path: &Path,
    patches: impl IntoIterator<Item = (&'a PatchSpec, &'a RgbImage)>,
    dtype: PackDtype,
) -> Result<u32, PipelineError> {
    let mut it = patches.into_iter().peekable();
    let out_size = it.peek().map(|(_, img)| img.width()).unwrap_or(0);
    let mut w = PackWriter::create(path, out_size, dtype)?;
    for (spec, img) in it {
        w.push(spec, img)?;
    }
    w.finish()
}

pub fn read_patch_pack(path: &Path) -> Result<PatchPack, PipelineError> {
    let fmt = |message: String| PipelineError::Format {
        path: path.display().to_string(),
        message,
    };
    let bytes = std::fs::read(path).map_err(|source| PipelineError::Io {
        path: path.display().to_string(),
        source,
    })?;
    if bytes.len() < PACK_HEADER_LEN {
        return Err(fmt(format!("file is {} bytes, shorter than the header", bytes.len())));
    }
    if &bytes[..4] != PACK_MAGIC {
        return Err(fmt(format!("bad magic {:?}", String::from_utf8_lossy(&bytes[..4]))));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().expect("4 bytes"));
    let (count, out_size, channels, tag) = (word(0), word(1), word(2), word(3));
    if channels != 3 {
        return Err(fmt(format!("channels = {channels}, expected 3")));
    }
    let dtype = match tag {
        0 => PackDtype::U8,
        1 => PackDtype::F32,
        t => return Err(fmt(format!("unknown dtype tag {t}"))),
    };
    let values = count as usize * out_size as usize * out_size as usize * 3;
    let expected = values * dtype.width();
    let payload = &bytes[PACK_HEADER_LEN..];
    if payload.len() < expected {
        return Err(fmt(format!(
            "truncated payload: header promises {count} patches ({expected} bytes), found {} bytes",
            payload.len()
        )));
    }
    if payload.len() > expected {
        return Err(fmt(format!("{} trailing bytes after payload", payload.len() - expected)));
    }
    let data = match dtype {
        PackDtype::U8 => PackData::U8(payload.to_vec()),
        PackDtype::F32 => PackData::F32(
            payload
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                .collect(),
        ),
    };
    let side = sidecar_path(path);
    let specs = if side.exists() {
        read_manifest(&side).map_err(|e| fmt(format!("sidecar: {e}")))?
    } else {
        Vec::new()
    };
    if !specs.is_empty() && specs.len() != count as usize {
        return Err(fmt(format!("sidecar lists {} specs for {count} patches", specs.len())));
    }
    Ok(PatchPack {
        count,
        out_size,
        data,
        specs,
    })
}
