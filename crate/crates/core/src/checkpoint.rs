//! Versioned binary parameter files.
//!
//! Layout: the 8-byte magic `BIMANCKP`, a little-endian `u32` version,
//! a `u32` record count, then per record a `u32` name length, the UTF-8
//! name, a `u32` rank, `rank` little-endian `u64` extents and the values
//! as little-endian `f64`.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::{ParamStore, Tensor};

pub const MAGIC: &[u8; 8] = b"BIMANCKP";
pub const VERSION: u32 = 1;

pub fn write_records<'a, W: Write>(
    out: &mut W,
    records: impl IntoIterator<Item = (&'a str, &'a Tensor)>,
) -> Result<()> {
    let records: Vec<_> = records.into_iter().collect();
    out.write_all(MAGIC)?;
    out.write_all(&VERSION.to_le_bytes())?;
    out.write_all(&(records.len() as u32).to_le_bytes())?;
    for (name, t) in records {
        out.write_all(&(name.len() as u32).to_le_bytes())?;
        out.write_all(name.as_bytes())?;
        out.write_all(&(t.rank() as u32).to_le_bytes())?;
        for &e in t.shape() {
            out.write_all(&(e as u64).to_le_bytes())?;
        }
        for &v in t.data() {
            out.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

fn read_exact<R: Read, const N: usize>(r: &mut R, what: &str) -> Result<[u8; N]> {
    let mut buf = [0u8; N];
    r.read_exact(&mut buf)
        .map_err(|e| Error::Checkpoint(format!("truncated while reading {what}: {e}")))?;
    Ok(buf)
}

pub fn read_records<R: Read>(input: &mut R) -> Result<Vec<(String, Tensor)>> {
    let magic: [u8; 8] = read_exact(input, "magic")?;
    if &magic != MAGIC {
        return Err(Error::Checkpoint("not a checkpoint file (bad magic)".into()));
    }
    let version = u32::from_le_bytes(read_exact(input, "version")?);
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let count = u32::from_le_bytes(read_exact(input, "record count")?);
    let mut out = Vec::with_capacity(count as usize);
    for _ in 0..count {
        let len = u32::from_le_bytes(read_exact(input, "name length")?) as usize;
        let mut name = vec![0u8; len];
        input
            .read_exact(&mut name)
            .map_err(|e| Error::Checkpoint(format!("truncated name: {e}")))?;
        let name = String::from_utf8(name).map_err(|_| Error::Checkpoint("name is not UTF-8".into()))?;
        let rank = u32::from_le_bytes(read_exact(input, "rank")?) as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(u64::from_le_bytes(read_exact(input, "extent")?) as usize);
        }
        let n: usize = shape.iter().product();
        let mut data = Vec::with_capacity(n);
        for _ in 0..n {
            data.push(f64::from_le_bytes(read_exact(input, &name)?));
        }
        out.push((name, Tensor::new(shape, data)?));
    }
    let mut rest = [0u8; 1];
    if input.read(&mut rest)? != 0 {
        return Err(Error::Checkpoint("trailing bytes after last record".into()));
    }
    Ok(out)
}

/// Writes every parameter of `store` under its own name.
pub fn save_store(store: &ParamStore, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_records(&mut w, store.named())?;
    w.flush()?;
    Ok(())
}

/// Loads values into an already-built store. Every parameter must be
/// present with its exact shape, and no extra records are allowed.
pub fn load_store(store: &mut ParamStore, path: &Path) -> Result<()> {
    let records = read_records(&mut BufReader::new(File::open(path)?))?;
    assign_all(store, &records)
}

pub fn assign_all(store: &mut ParamStore, records: &[(String, Tensor)]) -> Result<()> {
    if records.len() != store.len() {
        return Err(Error::Checkpoint(format!(
            "checkpoint has {} records, model has {} parameters",
            records.len(),
            store.len()
        )));
    }
    for (name, t) in records {
        store.assign(name, t)?;
    }
    Ok(())
}
