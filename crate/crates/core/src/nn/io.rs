//! Binary tensor persistence.
//!
//! Layout: the ASCII magic `VAEREG1\n`, then for each tensor until EOF:
//!
//! ```text
//! u64 name_len | name bytes (UTF-8) | u64 rank | u64 dims[rank] | f64 data[prod(dims)]
//! ```
//!
//! All integers and floats are little-endian.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::Tensor;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"VAEREG1\n";

const MAX_NAME_LEN: u64 = 4096;
const MAX_RANK: u64 = 8;

/// A named tensor as stored on disk.
pub type NamedTensor = (String, Tensor);

pub fn write_tensors<W: Write>(mut w: W, tensors: &[(&str, &Tensor)]) -> std::io::Result<()> {
    w.write_all(MAGIC)?;
    for (name, t) in tensors {
        w.write_all(&(name.len() as u64).to_le_bytes())?;
        w.write_all(name.as_bytes())?;
        w.write_all(&(t.shape().len() as u64).to_le_bytes())?;
        for &d in t.shape() {
            w.write_all(&(d as u64).to_le_bytes())?;
        }
        for v in t.data() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()
}

/// Reads every tensor in a stream. `origin` is only used in error messages.
pub fn read_tensors<R: Read>(mut r: R, origin: &Path) -> Result<Vec<NamedTensor>> {
    let bad = |msg: String| Error::format(origin, msg);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)
        .map_err(|_| bad("file too short for magic header".into()))?;
    if &magic != MAGIC {
        return Err(bad("bad magic header".into()));
    }

    let mut out = Vec::new();
    loop {
        let mut word = [0u8; 8];
        match read_full_or_eof(&mut r, &mut word).map_err(|e| Error::io(origin, e))? {
            ReadState::Eof => break,
            ReadState::Partial => return Err(bad("truncated tensor header".into())),
            ReadState::Full => {}
        }
        let name_len = u64::from_le_bytes(word);
        if name_len > MAX_NAME_LEN {
            return Err(bad(format!("implausible tensor name length {name_len}")));
        }
        let mut name = vec![0u8; name_len as usize];
        r.read_exact(&mut name)
            .map_err(|_| bad("truncated tensor name".into()))?;
        let name = String::from_utf8(name).map_err(|_| bad("tensor name is not UTF-8".into()))?;

        let rank = read_u64(&mut r).map_err(|_| bad(format!("{name}: truncated rank")))?;
        if rank == 0 || rank > MAX_RANK {
            return Err(bad(format!("{name}: unsupported rank {rank}")));
        }
        let mut shape = Vec::with_capacity(rank as usize);
        for _ in 0..rank {
            let d = read_u64(&mut r).map_err(|_| bad(format!("{name}: truncated dims")))?;
            shape.push(usize::try_from(d).map_err(|_| bad(format!("{name}: dim overflow")))?);
        }
        let count = shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| bad(format!("{name}: element count overflows")))?;
        let mut bytes = vec![0u8; count * 8];
        r.read_exact(&mut bytes)
            .map_err(|_| bad(format!("{name}: truncated data")))?;
        let data = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
            .collect();
        let t = Tensor::new(shape, data).map_err(|e| bad(format!("{name}: {e}")))?;
        out.push((name, t));
    }
    Ok(out)
}

pub fn save(path: &Path, tensors: &[(&str, &Tensor)]) -> Result<()> {
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    write_tensors(BufWriter::new(f), tensors).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<Vec<NamedTensor>> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    read_tensors(BufReader::new(f), path)
}

/// Checks a loaded tensor list against the expected names and shapes.
pub fn validate_layout(
    loaded: &[NamedTensor],
    expected: &[(String, Vec<usize>)],
    origin: &Path,
) -> Result<()> {
    if loaded.len() != expected.len() {
        return Err(Error::format(
            origin,
            format!(
                "expected {} tensors, file holds {}",
                expected.len(),
                loaded.len()
            ),
        ));
    }
    for ((name, t), (want_name, want_shape)) in loaded.iter().zip(expected) {
        if name != want_name || t.shape() != want_shape.as_slice() {
            return Err(Error::format(
                origin,
                format!(
                    "tensor table mismatch: found {name} {:?}, expected {want_name} {want_shape:?}",
                    t.shape()
                ),
            ));
        }
    }
    Ok(())
}

fn read_u64<R: Read>(r: &mut R) -> std::io::Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

enum ReadState {
    Full,
    Partial,
    Eof,
}

fn read_full_or_eof<R: Read>(r: &mut R, buf: &mut [u8]) -> std::io::Result<ReadState> {
    let mut filled = 0;
    while filled < buf.len() {
        match r.read(&mut buf[filled..]) {
            Ok(0) => break,
            Ok(n) => filled += n,
            Err(e) if e.kind() == std::io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e),
        }
    }
    Ok(match filled {
        0 => ReadState::Eof,
        n if n == buf.len() => ReadState::Full,
        _ => ReadState::Partial,
    })
}
