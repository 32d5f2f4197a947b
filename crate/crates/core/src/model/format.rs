//! Binary model file.
//!
//! Little-endian throughout:
//!
//! ```text
//! "MPS1"            4 bytes magic
//! version   u32     = 1
//! n_sites   u32     M
//! bits      u32     m
//! x_min     f64
//! x_max     f64
//! bond_dims u32 × (M + 1)
//! tensors   f64 row-major per site, index order (left, physical, right)
//! ```

use std::path::Path;

use super::{DiscretizationMap, Mps, SiteTensor};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"MPS1";
pub const VERSION: u32 = 1;

pub fn to_bytes(mps: &Mps) -> Vec<u8> {
    let dims = mps.bond_dims();
    let n_values: usize = mps.sites().iter().map(|s| s.data().len()).sum();
    let mut out = Vec::with_capacity(36 + 4 * dims.len() + 8 * n_values);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(mps.n_sites() as u32).to_le_bytes());
    out.extend_from_slice(&mps.disc().bits().to_le_bytes());
    out.extend_from_slice(&mps.disc().x_min().to_le_bytes());
    out.extend_from_slice(&mps.disc().x_max().to_le_bytes());
    for d in dims {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for site in mps.sites() {
        for x in site.data() {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    out
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, field: &str) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::format(field, "file truncated"));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, field: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, field)?.try_into().expect("4 bytes")))
    }

    fn f64(&mut self, field: &str) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8, field)?.try_into().expect("8 bytes")))
    }
}

pub fn from_bytes(buf: &[u8]) -> Result<Mps> {
    let mut c = Cursor { buf, pos: 0 };
    if c.take(4, "magic")? != MAGIC {
        return Err(Error::format("magic", "expected \"MPS1\""));
    }
    let version = c.u32("version")?;
    if version != VERSION {
        return Err(Error::format("version", format!("unsupported version {version}")));
    }
    let n_sites = c.u32("n_sites")? as usize;
    if n_sites == 0 {
        return Err(Error::format("n_sites", "must be at least 1"));
    }
    let bits = c.u32("bits")?;
    let x_min = c.f64("x_min")?;
    let x_max = c.f64("x_max")?;
    let disc = DiscretizationMap::new(x_min, x_max, bits).map_err(|e| {
        let field = if !(1..=super::MAX_BITS).contains(&bits) {
            "bits"
        } else if !x_min.is_finite() {
            "x_min"
        } else {
            "x_max"
        };
        Error::format(field, e.to_string())
    })?;
    let mut dims = Vec::with_capacity(n_sites + 1);
    for _ in 0..=n_sites {
        dims.push(c.u32("bond_dims")? as usize);
    }
    if dims[0] != 1 || dims[n_sites] != 1 || dims.iter().any(|&d| d == 0) {
        return Err(Error::format("bond_dims", format!("invalid bond dimensions {dims:?}")));
    }
    let phys = disc.levels();
    let mut sites = Vec::with_capacity(n_sites);
    for k in 0..n_sites {
        let len = dims[k]
            .checked_mul(phys)
            .and_then(|x| x.checked_mul(dims[k + 1]))
            .ok_or_else(|| Error::format("bond_dims", "tensor size overflows"))?;
        let bytes = c.take(len.checked_mul(8).ok_or_else(|| Error::format("bond_dims", "tensor size overflows"))?, "tensors")?;
        let data = bytes
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes")))
            .collect();
        sites.push(
            SiteTensor::new(dims[k], phys, dims[k + 1], data).map_err(|e| Error::format("tensors", e.to_string()))?,
        );
    }
    if c.pos != buf.len() {
        return Err(Error::format("tensors", format!("{} trailing bytes", buf.len() - c.pos)));
    }
    Mps::new(sites, disc)
}

pub fn save(mps: &Mps, path: &Path) -> Result<()> {
    std::fs::write(path, to_bytes(mps)).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<Mps> {
    let buf = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    from_bytes(&buf)
}
