//! Weight checkpoints.
//!
//! Layout, little-endian:
//!
//! ```text
//! b"CHMPNETS"  u32 version  u32 section_count
//! per section:  u32 name_len  name  u32 array_count
//! per array:    u32 name_len  name  u32 rank  u32 dims[rank]  f64 data[prod(dims)]
//! ```

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::params::Parameters;

pub const NETS_MAGIC: &[u8; 8] = b"CHMPNETS";
pub const NETS_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct NamedArray {
    pub name: String,
    pub dims: Vec<usize>,
    pub data: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Section {
    pub name: String,
    pub arrays: Vec<NamedArray>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Checkpoint {
    pub sections: Vec<Section>,
}

impl Section {
    pub fn capture(name: &str, params: &dyn Parameters) -> Section {
        let mut arrays = Vec::new();
        params.visit(&mut |n, dims, v| {
            arrays.push(NamedArray { name: n.to_string(), dims: dims.to_vec(), data: v.to_vec() })
        });
        Section { name: name.to_string(), arrays }
    }

    /// Copies the stored arrays into `params`, which must have exactly the
    /// same array names and shapes in the same order.
    pub fn restore(&self, params: &mut dyn Parameters) -> Result<()> {
        let ctx = format!("checkpoint section {}", self.name);
        let mut expected = Vec::new();
        params.visit(&mut |n, dims, _| expected.push((n.to_string(), dims.to_vec())));
        if expected.len() != self.arrays.len() {
            return Err(Error::format(
                ctx,
                format!("holds {} arrays, the configured network has {}", self.arrays.len(), expected.len()),
            ));
        }
        for ((name, dims), a) in expected.iter().zip(&self.arrays) {
            if *name != a.name || *dims != a.dims {
                return Err(Error::format(
                    ctx,
                    format!("array {} {:?} does not match configured {} {:?}", a.name, a.dims, name, dims),
                ));
            }
        }
        let mut i = 0;
        params.visit_mut(&mut |_, _, v| {
            v.copy_from_slice(&self.arrays[i].data);
            i += 1;
        });
        Ok(())
    }
}

impl Checkpoint {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with(mut self, name: &str, params: &dyn Parameters) -> Self {
        self.sections.push(Section::capture(name, params));
        self
    }

    pub fn section(&self, name: &str) -> Result<&Section> {
        self.sections.iter().find(|s| s.name == name).ok_or_else(|| {
            let have: Vec<&str> = self.sections.iter().map(|s| s.name.as_str()).collect();
            Error::format("checkpoint", format!("no section {name:?}; sections: {have:?}"))
        })
    }

    pub fn restore(&self, name: &str, params: &mut dyn Parameters) -> Result<()> {
        self.section(name)?.restore(params)
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(NETS_MAGIC);
        put_u32(&mut out, NETS_VERSION);
        put_u32(&mut out, self.sections.len() as u32);
        for s in &self.sections {
            put_str(&mut out, &s.name);
            put_u32(&mut out, s.arrays.len() as u32);
            for a in &s.arrays {
                put_str(&mut out, &a.name);
                put_u32(&mut out, a.dims.len() as u32);
                for &d in &a.dims {
                    put_u32(&mut out, d as u32);
                }
                for v in &a.data {
                    out.extend_from_slice(&v.to_le_bytes());
                }
            }
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Checkpoint> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8, "magic")? != NETS_MAGIC {
            return Err(Error::format("checkpoint", "bad magic, expected CHMPNETS"));
        }
        let version = r.u32("version")?;
        if version != NETS_VERSION {
            return Err(Error::format("checkpoint", format!("unsupported version {version}")));
        }
        let count = r.u32("section count")?;
        let mut sections = Vec::new();
        for _ in 0..count {
            let name = r.string("section name")?;
            let n_arrays = r.u32("array count")?;
            let mut arrays = Vec::new();
            for _ in 0..n_arrays {
                let aname = r.string("array name")?;
                let rank = r.u32("rank")? as usize;
                let dims = (0..rank).map(|_| r.u32("dims").map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
                let len = dims.iter().try_fold(1usize, |acc, &d| acc.checked_mul(d)).ok_or_else(|| {
                    Error::format("checkpoint", format!("array {aname} dimensions overflow"))
                })?;
                let raw = r.take(len.saturating_mul(8), &aname)?;
                let data: Vec<f64> = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
                if data.iter().any(|v| !v.is_finite()) {
                    return Err(Error::format("checkpoint", format!("array {aname} holds non-finite values")));
                }
                arrays.push(NamedArray { name: aname, dims, data });
            }
            sections.push(Section { name, arrays });
        }
        if r.pos != bytes.len() {
            return Err(Error::format("checkpoint", format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        Ok(Checkpoint { sections })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.encode()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Checkpoint> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Checkpoint::decode(&bytes).map_err(|e| match e {
            Error::Format { context, message } => {
                Error::format(format!("{}: {context}", path.display()), message)
            }
            other => other,
        })
    }
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    put_u32(out, s.len() as u32);
    out.extend_from_slice(s.as_bytes());
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::format("checkpoint", format!("truncated while reading {what}")));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn string(&mut self, what: &str) -> Result<String> {
        let n = self.u32(what)? as usize;
        let raw = self.take(n, what)?;
        String::from_utf8(raw.to_vec()).map_err(|_| Error::format("checkpoint", format!("{what} is not UTF-8")))
    }
}
