//! Binary checkpoint format.
//!
//! ```text
//! magic     7 bytes   "S2SRL1\n"
//! version   u32 LE    currently 1
//! meta_len  u32 LE
//! meta      meta_len bytes of UTF-8 `key=value` lines
//! arrays    repeated, in `ModelParams::arrays` order:
//!             name_len u16 LE, name bytes, count u64 LE, count x f64 LE
//! ```
//!
//! Metadata keys: `direction`, `vocab_size`, `embed_dim`, `hidden_dim`,
//! `attention`, `vocab_hash`, `arrays`.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

use super::{Direction, ModelDims, ModelParams};

pub const MAGIC: &[u8; 7] = b"S2SRL1\n";
pub const VERSION: u32 = 1;

pub fn to_bytes(params: &ModelParams) -> Vec<u8> {
    let dims = params.dims();
    let arrays = params.arrays();
    let meta = format!(
        "direction={}\nvocab_size={}\nembed_dim={}\nhidden_dim={}\nattention={}\nvocab_hash={}\narrays={}\n",
        params.direction(),
        dims.vocab,
        dims.embed,
        dims.hidden,
        u8::from(dims.attention),
        params.vocab_hash(),
        arrays.len(),
    );
    let mut out = Vec::with_capacity(32 + meta.len() + 8 * params.num_params());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(meta.len() as u32).to_le_bytes());
    out.extend_from_slice(meta.as_bytes());
    for (name, values) in arrays {
        out.extend_from_slice(&(name.len() as u16).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(values.len() as u64).to_le_bytes());
        for v in values {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        match end {
            Some(end) => {
                let s = &self.buf[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(Error::Truncated(what.to_string())),
        }
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
}

fn parse_meta(text: &str) -> Result<BTreeMap<String, String>> {
    let mut meta = BTreeMap::new();
    for line in text.lines().filter(|l| !l.is_empty()) {
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Format(format!("metadata line without `=`: {line:?}")))?;
        meta.insert(k.to_string(), v.to_string());
    }
    Ok(meta)
}

fn header(buf: &[u8]) -> Result<(BTreeMap<String, String>, usize)> {
    let mut r = Reader { buf, pos: 0 };
    let magic = r.take(MAGIC.len(), "magic")?;
    if magic != MAGIC {
        return Err(Error::Format("bad magic bytes".into()));
    }
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    let len = r.u32("metadata length")? as usize;
    let text = std::str::from_utf8(r.take(len, "metadata")?)
        .map_err(|_| Error::Format("metadata is not UTF-8".into()))?;
    Ok((parse_meta(text)?, r.pos))
}

fn field<T: std::str::FromStr>(meta: &BTreeMap<String, String>, key: &str) -> Result<T> {
    meta.get(key)
        .ok_or_else(|| Error::Format(format!("missing metadata key `{key}`")))?
        .parse()
        .map_err(|_| Error::Format(format!("bad value for metadata key `{key}`")))
}

pub fn from_bytes(buf: &[u8]) -> Result<ModelParams> {
    let (meta, start) = header(buf)?;
    let dims = ModelDims {
        vocab: field(&meta, "vocab_size")?,
        embed: field(&meta, "embed_dim")?,
        hidden: field(&meta, "hidden_dim")?,
        attention: field::<u8>(&meta, "attention")? != 0,
    };
    let direction = Direction::parse(&field::<String>(&meta, "direction")?)
        .map_err(|e| Error::Format(e.to_string()))?;
    let vocab_hash: String = field(&meta, "vocab_hash")?;
    let mut params = ModelParams::zeros(dims, direction, vocab_hash);
    let declared: usize = field(&meta, "arrays")?;
    if declared != params.arrays().len() {
        return Err(Error::Format(format!(
            "metadata declares {declared} arrays, dimensions imply {}",
            params.arrays().len()
        )));
    }

    let mut r = Reader { buf, pos: start };
    for (name, dst) in params.arrays_mut() {
        let name_len = r.u16(name)? as usize;
        let got = r.take(name_len, name)?;
        if got != name.as_bytes() {
            return Err(Error::Format(format!(
                "expected array `{name}`, found `{}`",
                String::from_utf8_lossy(got)
            )));
        }
        let count = r.u64(name)? as usize;
        if count != dst.len() {
            return Err(Error::Format(format!(
                "array `{name}` has {count} values, expected {}",
                dst.len()
            )));
        }
        let raw = r.take(count.checked_mul(8).ok_or_else(|| Error::Truncated(name.into()))?, name)?;
        for (d, chunk) in dst.iter_mut().zip(raw.chunks_exact(8)) {
            *d = f64::from_le_bytes(chunk.try_into().unwrap());
        }
    }
    if r.pos != buf.len() {
        return Err(Error::Format(format!("{} trailing bytes", buf.len() - r.pos)));
    }
    if !params.is_finite() {
        return Err(Error::Format("non-finite weight".into()));
    }
    Ok(params)
}

pub fn save_checkpoint(params: &ModelParams, path: &Path) -> Result<()> {
    fs::write(path, to_bytes(params))?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<ModelParams> {
    from_bytes(&fs::read(path)?)
}

/// Reads only the metadata block.
pub fn read_metadata(path: &Path) -> Result<BTreeMap<String, String>> {
    let buf = fs::read(path)?;
    Ok(header(&buf)?.0)
}
