//! Lossless per-frame crop archive.
//!
//! Layout (little endian): magic `TCQLCROP`, `u32` version, `u32` crop size,
//! `f64` extent in source pixels, `u32` trajectory count; then per trajectory
//! a `u32`-length UTF-8 id, `i64` first frame, `u32` frame count and
//! `frames × 3 × size × size` bytes of channel-major RGB.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use thiserror::Error;

use super::{render_crop, SynthCorpus};

pub const ARCHIVE_MAGIC: &[u8; 8] = b"TCQLCROP";
pub const ARCHIVE_VERSION: u32 = 1;
const MAX_CROP_SIZE: u32 = 1024;

#[derive(Debug, Error)]
pub enum CropArchiveError {
    #[error("not a crop archive")]
    BadMagic,
    #[error("unsupported crop archive version {0}")]
    UnsupportedVersion(u32),
    #[error("crop archive truncated at byte {0}")]
    Truncated(usize),
    #[error("invalid crop archive: {0}")]
    Invalid(String),
    #[error("no scene texture for scene {0}")]
    MissingScene(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Debug, PartialEq)]
pub struct CropArchive {
    pub size: usize,
    pub extent_px: f64,
    entries: BTreeMap<String, (i64, Vec<u8>)>,
}

impl CropArchive {
    pub fn new(size: usize, extent_px: f64) -> Self {
        Self {
            size,
            extent_px,
            entries: BTreeMap::new(),
        }
    }

    fn tile_len(&self) -> usize {
        3 * self.size * self.size
    }

    /// Renders every dense frame of every trajectory in the corpus.
    pub fn render(corpus: &SynthCorpus, size: usize, extent_px: f64) -> Result<Self, CropArchiveError> {
        let trajs: Vec<_> = corpus.all().collect();
        let rendered: Vec<(String, i64, Vec<u8>)> = trajs
            .par_iter()
            .map(|t| {
                let scene = corpus
                    .scenes
                    .get(&t.scene_id)
                    .ok_or_else(|| CropArchiveError::MissingScene(t.scene_id.clone()))?;
                let mut bytes = Vec::with_capacity(t.dense.len() * 3 * size * size);
                for s in &t.dense {
                    // dense frames are contiguous, so every lookup succeeds
                    bytes.extend(render_crop(scene, t, s.frame, extent_px, size).unwrap_or_default());
                }
                Ok((t.id.clone(), t.first_frame(), bytes))
            })
            .collect::<Result<_, CropArchiveError>>()?;
        let mut archive = Self::new(size, extent_px);
        for (id, first, bytes) in rendered {
            archive.entries.insert(id, (first, bytes));
        }
        Ok(archive)
    }

    pub fn insert(&mut self, id: impl Into<String>, first_frame: i64, tiles: Vec<u8>) -> Result<(), CropArchiveError> {
        if tiles.len() % self.tile_len() != 0 {
            return Err(CropArchiveError::Invalid("tile bytes not a multiple of the tile size".into()));
        }
        self.entries.insert(id.into(), (first_frame, tiles));
        Ok(())
    }

    /// Channel-major RGB bytes of one crop.
    pub fn crop(&self, id: &str, frame: i64) -> Option<&[u8]> {
        let (first, bytes) = self.entries.get(id)?;
        let idx = usize::try_from(frame - first).ok()?;
        let n = self.tile_len();
        bytes.get(idx * n..(idx + 1) * n)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(ARCHIVE_MAGIC);
        out.extend_from_slice(&ARCHIVE_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.size as u32).to_le_bytes());
        out.extend_from_slice(&self.extent_px.to_le_bytes());
        out.extend_from_slice(&(self.entries.len() as u32).to_le_bytes());
        for (id, (first, bytes)) in &self.entries {
            out.extend_from_slice(&(id.len() as u32).to_le_bytes());
            out.extend_from_slice(id.as_bytes());
            out.extend_from_slice(&first.to_le_bytes());
            out.extend_from_slice(&((bytes.len() / self.tile_len()) as u32).to_le_bytes());
            out.extend_from_slice(bytes);
        }
        out
    }

    pub fn write(&self, path: &Path) -> Result<(), CropArchiveError> {
        let tmp = path.with_extension("tmp");
        fs::write(&tmp, self.encode())?;
        fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self, CropArchiveError> {
        decode_crop_archive(&fs::read(path)?)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CropArchiveError> {
        let end = self.pos.checked_add(n).filter(|e| *e <= self.bytes.len()).ok_or(CropArchiveError::Truncated(self.pos))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, CropArchiveError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn i64(&mut self) -> Result<i64, CropArchiveError> {
        Ok(i64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64(&mut self) -> Result<f64, CropArchiveError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

pub fn decode_crop_archive(bytes: &[u8]) -> Result<CropArchive, CropArchiveError> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(8).map_err(|_| CropArchiveError::BadMagic)? != ARCHIVE_MAGIC {
        return Err(CropArchiveError::BadMagic);
    }
    let version = r.u32()?;
    if version != ARCHIVE_VERSION {
        return Err(CropArchiveError::UnsupportedVersion(version));
    }
    let size = r.u32()?;
    if size == 0 || size > MAX_CROP_SIZE {
        return Err(CropArchiveError::Invalid(format!("crop size {size}")));
    }
    let extent_px = r.f64()?;
    if !(extent_px.is_finite() && extent_px > 0.0) {
        return Err(CropArchiveError::Invalid("extent must be positive".into()));
    }
    let mut archive = CropArchive::new(size as usize, extent_px);
    let count = r.u32()?;
    for _ in 0..count {
        let id_len = r.u32()? as usize;
        let id = std::str::from_utf8(r.take(id_len)?)
            .map_err(|_| CropArchiveError::Invalid("id is not UTF-8".into()))?
            .to_string();
        let first = r.i64()?;
        let frames = r.u32()? as usize;
        let n = frames.checked_mul(archive.tile_len()).ok_or(CropArchiveError::Truncated(r.pos))?;
        let tiles = r.take(n)?.to_vec();
        if archive.entries.insert(id.clone(), (first, tiles)).is_some() {
            return Err(CropArchiveError::Invalid(format!("duplicate id {id}")));
        }
    }
    if r.pos != bytes.len() {
        return Err(CropArchiveError::Invalid("trailing bytes".into()));
    }
    Ok(archive)
}
