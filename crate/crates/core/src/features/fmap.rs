//! `FMAP` binary feature-pyramid files.
//!
//! Layout, all little-endian: magic `b"FMAP"`, `u32` version (1), `u32`
//! level count, then per level `u32 h`, `u32 w`, `u32 d` followed by
//! `h * w * d` `f32` values in `(row, col, channel)` order.

use std::io::Write;
use std::path::Path;

use super::map::FeatureMap;
use super::pyramid::FeaturePyramid;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"FMAP";
pub const VERSION: u32 = 1;

pub fn encode_pyramid(pyramid: &FeaturePyramid) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(pyramid.levels().len() as u32).to_le_bytes());
    for level in pyramid.levels() {
        for dim in [level.height(), level.width(), level.channels()] {
            out.extend_from_slice(&(dim as u32).to_le_bytes());
        }
        out.reserve(level.data().len() * 4);
        for &x in level.data() {
            out.extend_from_slice(&(x as f32).to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize, what: &str) -> Result<&[u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::Format(format!("truncated file while reading {what} at byte {}", self.pos)));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }
}

pub fn decode_pyramid(bytes: &[u8]) -> Result<FeaturePyramid> {
    let mut rd = Reader { bytes, pos: 0 };
    if rd.take(4, "magic")? != MAGIC {
        return Err(Error::Format("bad magic, not an FMAP file".into()));
    }
    let version = rd.u32("version")?;
    if version != VERSION {
        return Err(Error::Format(format!("unsupported FMAP version {version}")));
    }
    let count = rd.u32("level count")? as usize;
    let mut levels = Vec::with_capacity(count.min(16));
    for l in 0..count {
        let h = rd.u32("level header")? as usize;
        let w = rd.u32("level header")? as usize;
        let d = rd.u32("level header")? as usize;
        let n =
            h.checked_mul(w).and_then(|x| x.checked_mul(d)).ok_or_else(|| Error::Format(format!("level {} dimensions overflow", l + 1)))?;
        let raw = rd.take(n.checked_mul(4).ok_or_else(|| Error::Format("size overflow".into()))?, "values")?;
        let data = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64).collect();
        let map = FeatureMap::new(w, h, d, data).map_err(|e| Error::Format(format!("level {}: {e}", l + 1)))?;
        levels.push(map);
    }
    if rd.pos != bytes.len() {
        return Err(Error::Format(format!("{} trailing bytes", bytes.len() - rd.pos)));
    }
    FeaturePyramid::new(levels)
}

pub fn save_feature_pyramid(path: impl AsRef<Path>, pyramid: &FeaturePyramid) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_pyramid(pyramid);
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&bytes).map_err(|e| Error::io(path, e))
}

pub fn load_feature_pyramid(path: impl AsRef<Path>) -> Result<FeaturePyramid> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_pyramid(&bytes).map_err(|e| match e {
        Error::Format(msg) => Error::Format(format!("{}: {msg}", path.display())),
        other => other,
    })
}
