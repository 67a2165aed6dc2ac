//! `morphtag-v1` checkpoint container.
//!
//! Layout:
//!
//! ```text
//! morphtag-v1\n
//! digest <sha256 hex of metadata>\n
//! meta-bytes <n>\n
//! <n bytes of UTF-8 metadata>\n
//! params <count>\n
//! end-header\n
//! repeated <count> times:
//!   u32 name length | name bytes | u32 rank | u64 dim × rank | f64 × Π dims
//! ```
//!
//! All integers and floats are little-endian.

use std::io::{Read, Write};

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::numerics::Tensor;

pub const FORMAT_VERSION: &str = "morphtag-v1";

pub fn digest(meta: &str) -> String {
    hex::encode(Sha256::digest(meta.as_bytes()))
}

pub fn write_container<W: Write>(mut w: W, meta: &str, params: &[(&str, &Tensor)]) -> Result<()> {
    write!(
        w,
        "{FORMAT_VERSION}\ndigest {}\nmeta-bytes {}\n",
        digest(meta),
        meta.len()
    )?;
    w.write_all(meta.as_bytes())?;
    write!(w, "\nparams {}\nend-header\n", params.len())?;
    for (name, t) in params {
        w.write_all(&(name.len() as u32).to_le_bytes())?;
        w.write_all(name.as_bytes())?;
        w.write_all(&(t.shape().len() as u32).to_le_bytes())?;
        for &d in t.shape() {
            w.write_all(&(d as u64).to_le_bytes())?;
        }
        for v in t.values() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn to_bytes(meta: &str, params: &[(&str, &Tensor)]) -> Vec<u8> {
    let mut buf = Vec::new();
    write_container(&mut buf, meta, params).expect("writing to a Vec cannot fail");
    buf
}

/// Parses a container, returning the metadata and the named tensors in file order.
pub fn read_container<R: Read>(mut r: R) -> Result<(String, Vec<(String, Tensor)>)> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    let mut cur = Cursor { bytes: &bytes, pos: 0 };

    let version = cur.line()?;
    if version != FORMAT_VERSION {
        return Err(Error::Load(format!(
            "unsupported format `{version}`, expected `{FORMAT_VERSION}`"
        )));
    }
    let want_digest = cur.keyed("digest")?.to_string();
    let meta_len: usize = parse_num(cur.keyed("meta-bytes")?)?;
    let meta = std::str::from_utf8(cur.take(meta_len)?)
        .map_err(|_| Error::Load("metadata is not valid UTF-8".into()))?
        .to_string();
    if cur.take(1)? != b"\n" {
        return Err(Error::Load("missing newline after metadata".into()));
    }
    if digest(&meta) != want_digest {
        return Err(Error::Load("metadata digest mismatch".into()));
    }
    let count: usize = parse_num(cur.keyed("params")?)?;
    if cur.line()? != "end-header" {
        return Err(Error::Load("missing end-header marker".into()));
    }

    let mut params = Vec::with_capacity(count);
    for _ in 0..count {
        let name_len = cur.u32()? as usize;
        let name = std::str::from_utf8(cur.take(name_len)?)
            .map_err(|_| Error::Load("parameter name is not valid UTF-8".into()))?
            .to_string();
        let rank = cur.u32()? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(cur.u64()? as usize);
        }
        let n: usize = shape.iter().product();
        let mut values = Vec::with_capacity(n);
        for _ in 0..n {
            values.push(f64::from_le_bytes(cur.take(8)?.try_into().unwrap()));
        }
        let t = Tensor::new(&shape, values).map_err(|e| Error::Load(format!("{name}: {e}")))?;
        params.push((name, t));
    }
    if cur.pos != bytes.len() {
        return Err(Error::Load("trailing bytes after parameters".into()));
    }
    Ok((meta, params))
}

fn parse_num(s: &str) -> Result<usize> {
    s.parse()
        .map_err(|_| Error::Load(format!("expected a count, found `{s}`")))
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Load("unexpected end of checkpoint".into()));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn line(&mut self) -> Result<&'a str> {
        let rest = &self.bytes[self.pos..];
        let end = rest
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| Error::Load("truncated header".into()))?;
        self.pos += end + 1;
        std::str::from_utf8(&rest[..end]).map_err(|_| Error::Load("header is not UTF-8".into()))
    }

    fn keyed(&mut self, key: &str) -> Result<&'a str> {
        let line = self.line()?;
        line.strip_prefix(key)
            .and_then(|s| s.strip_prefix(' '))
            .ok_or_else(|| Error::Load(format!("expected `{key}` header line, found `{line}`")))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn container_round_trips(
            meta in "[a-z=\\n ]{0,40}",
            vals in prop::collection::vec(-1e6f64..1e6, 1..20),
        ) {
            let t = Tensor::vector(vals).unwrap();
            let m = Tensor::new(&[2, 1], vec![f64::MIN_POSITIVE, -0.0]).unwrap();
            let bytes = to_bytes(&meta, &[("a.b", &t), ("c", &m)]);
            let (meta2, params) = read_container(&bytes[..]).unwrap();
            prop_assert_eq!(meta2, meta);
            prop_assert_eq!(params.len(), 2);
            prop_assert_eq!(&params[0].1, &t);
            prop_assert_eq!(params[1].1.values()[1].to_bits(), (-0.0f64).to_bits());
        }
    }

    #[test]
    fn rejects_tampered_metadata_and_truncation() {
        let t = Tensor::vector(vec![1.0, 2.0]).unwrap();
        let bytes = to_bytes("k=v", &[("w", &t)]);
        let text = String::from_utf8_lossy(&bytes).replace("k=v", "k=x");
        assert!(matches!(read_container(text.as_bytes()), Err(Error::Load(_))));
        assert!(read_container(&bytes[..bytes.len() - 3]).is_err());
        assert!(read_container(&b"morphtag-v0\n"[..]).is_err());
    }
}
