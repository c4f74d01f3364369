//! Map persistence.
//!
//! CSV: header `input_id,method,sigma,n_samples,v0,...,v{m-1}`, one map per
//! row.
//!
//! Binary batch (all little-endian):
//! ```text
//! magic   b"SMAP"
//! version u32 = 1
//! count   u64
//! m       u64
//! count × { input_id u64, method u8, sigma f64, n_samples u64, values f64 × m }
//! ```

use std::io::Write;
use std::path::Path;

use super::{SaliencyMap, SaliencyMethod};
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"SMAP";
const VERSION: u32 = 1;

fn common_len(maps: &[SaliencyMap]) -> Result<usize> {
    let m = maps.first().map_or(0, SaliencyMap::len);
    if let Some(bad) = maps.iter().find(|s| s.len() != m) {
        return Err(Error::DimensionMismatch {
            context: "saliency batch",
            expected: m,
            got: bad.len(),
        });
    }
    Ok(m)
}

pub fn write_maps_csv(path: &Path, maps: &[SaliencyMap]) -> Result<()> {
    let m = common_len(maps)?;
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["input_id".to_string(), "method".into(), "sigma".into(), "n_samples".into()];
    header.extend((0..m).map(|j| format!("v{j}")));
    w.write_record(&header)?;
    for s in maps {
        let mut rec = vec![
            s.input_id.to_string(),
            s.method.as_str().to_string(),
            s.sigma.to_string(),
            s.n_samples.to_string(),
        ];
        rec.extend(s.values.iter().map(f64::to_string));
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_maps_csv(path: &Path) -> Result<Vec<SaliencyMap>> {
    let source = path.display().to_string();
    let bad = |offset: u64, msg: String| Error::Parse {
        source_name: source.clone(),
        offset,
        message: msg,
    };
    let mut rdr = csv::Reader::from_path(path)?;
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let off = rec.position().map_or(0, |p| p.byte());
        if rec.len() < 4 {
            return Err(bad(off, "row has fewer than 4 columns".into()));
        }
        let num = |i: usize| -> Result<f64> {
            rec[i].parse().map_err(|_| bad(off, format!("`{}` is not numeric", &rec[i])))
        };
        out.push(SaliencyMap {
            input_id: rec[0].parse().map_err(|_| bad(off, "bad input_id".into()))?,
            method: SaliencyMethod::parse(&rec[1]).ok_or_else(|| bad(off, format!("unknown method `{}`", &rec[1])))?,
            sigma: num(2)?,
            n_samples: rec[3].parse().map_err(|_| bad(off, "bad n_samples".into()))?,
            values: (4..rec.len()).map(num).collect::<Result<_>>()?,
        });
    }
    Ok(out)
}

pub fn write_maps_binary(path: &Path, maps: &[SaliencyMap]) -> Result<()> {
    let m = common_len(maps)?;
    let mut buf = Vec::with_capacity(24 + maps.len() * (25 + 8 * m));
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&(maps.len() as u64).to_le_bytes());
    buf.extend_from_slice(&(m as u64).to_le_bytes());
    for s in maps {
        buf.extend_from_slice(&s.input_id.to_le_bytes());
        buf.push(s.method.code());
        buf.extend_from_slice(&s.sigma.to_le_bytes());
        buf.extend_from_slice(&(s.n_samples as u64).to_le_bytes());
        for v in &s.values {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&buf).map_err(|e| Error::io(path, e))
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
    source: String,
}

impl Cursor<'_> {
    fn take<const N: usize>(&mut self) -> Result<[u8; N]> {
        let chunk = self.bytes.get(self.pos..self.pos + N).ok_or_else(|| Error::Parse {
            source_name: self.source.clone(),
            offset: self.pos as u64,
            message: "unexpected end of file".into(),
        })?;
        self.pos += N;
        Ok(chunk.try_into().expect("slice length checked"))
    }

    fn u64(&mut self) -> Result<u64> {
        self.take::<8>().map(u64::from_le_bytes)
    }

    fn f64(&mut self) -> Result<f64> {
        self.take::<8>().map(f64::from_le_bytes)
    }
}

pub fn read_maps_binary(path: &Path) -> Result<Vec<SaliencyMap>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut c = Cursor {
        bytes: &bytes,
        pos: 0,
        source: path.display().to_string(),
    };
    let err = |offset: usize, message: &str, source: &str| Error::Parse {
        source_name: source.to_string(),
        offset: offset as u64,
        message: message.to_string(),
    };
    if &c.take::<4>()? != MAGIC {
        return Err(err(0, "bad magic", &c.source));
    }
    if u32::from_le_bytes(c.take::<4>()?) != VERSION {
        return Err(err(4, "unsupported version", &c.source));
    }
    let count = c.u64()? as usize;
    let m = c.u64()? as usize;
    let mut out = Vec::with_capacity(count.min(1 << 20));
    for _ in 0..count {
        let input_id = c.u64()?;
        let at = c.pos;
        let method = SaliencyMethod::from_code(c.take::<1>()?[0]).ok_or_else(|| err(at, "unknown method code", &c.source))?;
        let sigma = c.f64()?;
        let n_samples = c.u64()? as usize;
        let values = (0..m).map(|_| c.f64()).collect::<Result<_>>()?;
        out.push(SaliencyMap {
            values,
            method,
            sigma,
            n_samples,
            input_id,
        });
    }
    if c.pos != bytes.len() {
        return Err(err(c.pos, "trailing bytes", &c.source));
    }
    Ok(out)
}
