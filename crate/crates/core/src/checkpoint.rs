//! Binary model checkpoints.
//!
//! Layout, all integers and floats little-endian:
//!
//! ```text
//! magic      8 bytes  "PAMODCKP"
//! version    u32
//! hyper      T, H, C, L, S, d as u64; dropout f64; variant as u32 length + UTF-8
//! count      u32
//! per array  name (u32 length + UTF-8), rows u64, cols u64, rows·cols f64
//! ```

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{Hyper, ModelParams, PARAM_NAMES};
use crate::ndmath::Array2;

pub const MAGIC: &[u8; 8] = b"PAMODCKP";
pub const VERSION: u32 = 1;

pub fn save(params: &ModelParams, path: &Path) -> Result<()> {
    let mut buf = Vec::new();
    encode(params, &mut buf);
    std::fs::write(path, buf).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<ModelParams> {
    let mut bytes = Vec::new();
    std::fs::File::open(path).and_then(|mut f| f.read_to_end(&mut bytes)).map_err(|e| Error::io(path, e))?;
    decode(&bytes).map_err(|e| match e {
        Error::Format(m) => Error::Format(format!("{}: {m}", path.display())),
        other => other,
    })
}

pub fn encode(params: &ModelParams, out: &mut Vec<u8>) {
    let h = &params.hyper;
    out.write_all(MAGIC).unwrap();
    out.extend(VERSION.to_le_bytes());
    for v in [h.lookback, h.horizon, h.channels, h.cycle_length, h.hidden, h.head] {
        out.extend((v as u64).to_le_bytes());
    }
    out.extend(h.dropout.to_le_bytes());
    put_str(out, h.variant.name());
    out.extend((PARAM_NAMES.len() as u32).to_le_bytes());
    for (name, a) in PARAM_NAMES.iter().zip(params.arrays()) {
        put_str(out, name);
        out.extend((a.rows() as u64).to_le_bytes());
        out.extend((a.cols() as u64).to_le_bytes());
        for v in a.data() {
            out.extend(v.to_le_bytes());
        }
    }
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    out.extend((s.len() as u32).to_le_bytes());
    out.extend(s.as_bytes());
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::Format(format!("truncated checkpoint while reading {what} at byte {}", self.pos)));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<usize> {
        let v = u64::from_le_bytes(self.take(8, what)?.try_into().unwrap());
        usize::try_from(v).map_err(|_| Error::Format(format!("{what} {v} does not fit in memory")))
    }

    fn f64(&mut self, what: &str) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn string(&mut self, what: &str) -> Result<String> {
        let n = self.u32(what)? as usize;
        String::from_utf8(self.take(n, what)?.to_vec()).map_err(|_| Error::Format(format!("{what} is not UTF-8")))
    }
}

pub fn decode(bytes: &[u8]) -> Result<ModelParams> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(8, "magic")? != MAGIC {
        return Err(Error::Format("bad magic; not a model checkpoint".into()));
    }
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(Error::Format(format!("unsupported checkpoint version {version} (expected {VERSION})")));
    }
    let mut dims = [0usize; 6];
    for (d, what) in dims.iter_mut().zip(["T", "H", "C", "L", "S", "d"]) {
        *d = r.u64(what)?;
    }
    let dropout = r.f64("dropout")?;
    let variant = r.string("variant")?.parse()?;
    let hyper = Hyper::new(dims[0], dims[1], dims[2], dims[3], dims[5], dropout, variant)?;
    if hyper.hidden != dims[4] {
        return Err(Error::Format(format!("hidden width {} is not 4·T = {}", dims[4], hyper.hidden)));
    }
    let count = r.u32("array count")? as usize;
    if count != PARAM_NAMES.len() {
        return Err(Error::Format(format!("expected {} arrays, found {count}", PARAM_NAMES.len())));
    }
    let mut arrays = Vec::with_capacity(count);
    for want in PARAM_NAMES {
        let name = r.string("array name")?;
        if name != want {
            return Err(Error::Format(format!("expected array `{want}`, found `{name}`")));
        }
        let rows = r.u64("rows")?;
        let cols = r.u64("cols")?;
        let n = rows.checked_mul(cols).ok_or_else(|| Error::Format(format!("array `{name}` too large")))?;
        let raw = r.take(n.checked_mul(8).ok_or_else(|| Error::Format("array too large".into()))?, &name)?;
        let data = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        arrays.push(Array2::new(rows, cols, data));
    }
    if r.pos != bytes.len() {
        return Err(Error::Format(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    ModelParams::from_arrays(hyper, arrays)
}

/// Fails with the first hyperparameter where `found` differs from `expected`.
pub fn check_compatible(expected: &Hyper, found: &Hyper) -> Result<()> {
    let pairs: [(&'static str, String, String); 7] = [
        ("lookback", expected.lookback.to_string(), found.lookback.to_string()),
        ("horizon", expected.horizon.to_string(), found.horizon.to_string()),
        ("channels", expected.channels.to_string(), found.channels.to_string()),
        ("cycle_length", expected.cycle_length.to_string(), found.cycle_length.to_string()),
        ("d", expected.head.to_string(), found.head.to_string()),
        ("dropout", expected.dropout.to_string(), found.dropout.to_string()),
        ("variant", expected.variant.to_string(), found.variant.to_string()),
    ];
    for (field, e, f) in pairs {
        if e != f {
            return Err(Error::HyperMismatch { field, expected: e, found: f });
        }
    }
    Ok(())
}
