//! Parameter checkpoints.
//!
//! Layout: magic `XNNC`, then one record per parameter in path order:
//! path length (u16 LE), path bytes (UTF-8), rank (u8), dims (u32 LE each),
//! values (f64 LE each). The file ends after the last record.

use std::fs::File;
use std::io::{BufReader, BufWriter, ErrorKind, Read, Write};
use std::path::Path;

use super::{NumericsError, ParamSet, Tensor};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"XNNC";

pub fn write_params<W: Write>(params: &ParamSet, mut w: W) -> Result<(), NumericsError> {
    w.write_all(CHECKPOINT_MAGIC)?;
    for (path, t) in params.iter() {
        let len = u16::try_from(path.len())
            .map_err(|_| NumericsError::Checkpoint(format!("path `{path}` longer than 65535 bytes")))?;
        w.write_all(&len.to_le_bytes())?;
        w.write_all(path.as_bytes())?;
        let rank = u8::try_from(t.rank()).map_err(|_| NumericsError::Checkpoint(format!("rank of `{path}` exceeds 255")))?;
        w.write_all(&[rank])?;
        for &d in t.shape() {
            let d = u32::try_from(d).map_err(|_| NumericsError::Checkpoint(format!("axis of `{path}` exceeds u32")))?;
            w.write_all(&d.to_le_bytes())?;
        }
        for v in t.data() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

fn read_exact_or<R: Read>(r: &mut R, buf: &mut [u8], what: &str) -> Result<(), NumericsError> {
    r.read_exact(buf).map_err(|e| match e.kind() {
        ErrorKind::UnexpectedEof => NumericsError::Checkpoint(format!("truncated while reading {what}")),
        _ => NumericsError::Io(e),
    })
}

pub fn read_params<R: Read>(mut r: R) -> Result<ParamSet, NumericsError> {
    let mut magic = [0u8; 4];
    read_exact_or(&mut r, &mut magic, "magic")?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(NumericsError::Checkpoint(format!("bad magic {magic:?}")));
    }
    let mut params = ParamSet::new();
    loop {
        let mut len = [0u8; 2];
        match r.read(&mut len[..1])? {
            0 => break,
            _ => read_exact_or(&mut r, &mut len[1..], "path length")?,
        }
        let mut path = vec![0u8; u16::from_le_bytes(len) as usize];
        read_exact_or(&mut r, &mut path, "path")?;
        let path = String::from_utf8(path).map_err(|_| NumericsError::Checkpoint("path is not UTF-8".into()))?;
        let mut rank = [0u8; 1];
        read_exact_or(&mut r, &mut rank, "rank")?;
        let mut shape = Vec::with_capacity(rank[0] as usize);
        for _ in 0..rank[0] {
            let mut d = [0u8; 4];
            read_exact_or(&mut r, &mut d, "dims")?;
            shape.push(u32::from_le_bytes(d) as usize);
        }
        let n: usize = shape.iter().product();
        let mut raw = vec![0u8; n * 8];
        read_exact_or(&mut r, &mut raw, &format!("values of `{path}`"))?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        let t = Tensor::new(shape, data).map_err(|e| NumericsError::Checkpoint(format!("`{path}`: {e}")))?;
        params
            .insert_restored(path.clone(), t)
            .map_err(|_| NumericsError::Checkpoint(format!("duplicate record `{path}`")))?;
    }
    Ok(params)
}

pub fn save_params(params: &ParamSet, path: &Path) -> Result<(), NumericsError> {
    write_params(params, BufWriter::new(File::create(path)?))
}

pub fn load_params(path: &Path) -> Result<ParamSet, NumericsError> {
    read_params(BufReader::new(File::open(path)?))
}
