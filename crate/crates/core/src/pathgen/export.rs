//! Path export: one CSV per path, or a binary ensemble container.
//!
//! Container layout, all integers and floats little-endian:
//!
//! ```text
//! magic        8 bytes  b"CPSPATHS"
//! version      u32      1
//! n_paths      u64
//! n_steps      u64
//! horizon      f64
//! per path:
//!   seed       u64
//!   tag_len    u32, then tag_len bytes of UTF-8
//!   values     (n_steps + 1) x f64
//!   n_knots    u64, then n_knots x (t f64, value f64)
//! ```

use std::io::{self, Read, Write};

use super::{Knot, SamplePath, TimeGrid};
use crate::error::{Error, Result};

pub const ENSEMBLE_MAGIC: &[u8; 8] = b"CPSPATHS";
pub const ENSEMBLE_VERSION: u32 = 1;

fn io_err(e: io::Error) -> Error {
    Error::Configuration(format!("i/o: {e}"))
}

/// Write `t,value` rows for the grid values of one path.
pub fn write_path_csv<W: Write>(path: &SamplePath, mut out: W) -> Result<()> {
    writeln!(out, "t,value").map_err(io_err)?;
    for (t, v) in path.grid.times().zip(&path.values) {
        writeln!(out, "{t},{v}").map_err(io_err)?;
    }
    Ok(())
}

pub fn write_ensemble<W: Write>(paths: &[SamplePath], mut out: W) -> Result<()> {
    let grid =
        paths.first().map(|p| p.grid).ok_or_else(|| Error::Parameter("cannot export an empty ensemble".into()))?;
    if paths.iter().any(|p| p.grid != grid) {
        return Err(Error::Parameter("ensemble paths must share one grid".into()));
    }
    let mut buf = Vec::new();
    buf.extend_from_slice(ENSEMBLE_MAGIC);
    buf.extend_from_slice(&ENSEMBLE_VERSION.to_le_bytes());
    buf.extend_from_slice(&(paths.len() as u64).to_le_bytes());
    buf.extend_from_slice(&(grid.n_steps() as u64).to_le_bytes());
    buf.extend_from_slice(&grid.horizon().to_le_bytes());
    for p in paths {
        buf.extend_from_slice(&p.seed.to_le_bytes());
        buf.extend_from_slice(&(p.model_tag.len() as u32).to_le_bytes());
        buf.extend_from_slice(p.model_tag.as_bytes());
        for v in &p.values {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        buf.extend_from_slice(&(p.extra_knots.len() as u64).to_le_bytes());
        for k in &p.extra_knots {
            buf.extend_from_slice(&k.t.to_le_bytes());
            buf.extend_from_slice(&k.value.to_le_bytes());
        }
    }
    out.write_all(&buf).map_err(io_err)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Configuration(format!("ensemble container truncated at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

pub fn read_ensemble<R: Read>(mut input: R) -> Result<Vec<SamplePath>> {
    let mut bytes = Vec::new();
    input.read_to_end(&mut bytes).map_err(io_err)?;
    let mut c = Cursor { bytes: &bytes, pos: 0 };
    if c.take(8)? != ENSEMBLE_MAGIC {
        return Err(Error::Configuration("not an ensemble container (bad magic)".into()));
    }
    let version = c.u32()?;
    if version != ENSEMBLE_VERSION {
        return Err(Error::Configuration(format!("unsupported container version {version}")));
    }
    let n_paths = c.u64()? as usize;
    let n_steps = c.u64()? as usize;
    let grid = TimeGrid::new(c.f64()?, n_steps)?;
    let mut paths = Vec::with_capacity(n_paths.min(1 << 20));
    for _ in 0..n_paths {
        let seed = c.u64()?;
        let tag_len = c.u32()? as usize;
        let tag = std::str::from_utf8(c.take(tag_len)?)
            .map_err(|e| Error::Configuration(format!("model tag is not UTF-8: {e}")))?
            .to_string();
        let values = (0..=n_steps).map(|_| c.f64()).collect::<Result<Vec<_>>>()?;
        let n_knots = c.u64()? as usize;
        let extra_knots =
            (0..n_knots).map(|_| Ok(Knot { t: c.f64()?, value: c.f64()? })).collect::<Result<Vec<_>>>()?;
        let mut p = SamplePath::new(grid, values, seed, tag)?;
        p.extra_knots = extra_knots;
        paths.push(p);
    }
    if c.pos != bytes.len() {
        return Err(Error::Configuration("trailing bytes after ensemble container".into()));
    }
    Ok(paths)
}
