//! Binary trace files.
//!
//! Layout (little-endian): magic `LENT`, version `u16`, frame count `u32`,
//! dimension `u16`, fps `f32`, then `T * d` `f32` values row-major.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use super::{EmbeddingError, EmbeddingTrace};

pub const TRACE_MAGIC: &[u8; 4] = b"LENT";
pub const TRACE_VERSION: u16 = 1;
const HEADER_LEN: usize = 4 + 2 + 4 + 2 + 4;

pub fn write_trace<W: Write>(mut w: W, trace: &EmbeddingTrace) -> Result<(), EmbeddingError> {
    let frames = u32::try_from(trace.frame_count())
        .map_err(|_| EmbeddingError::Format("too many frames for u32".into()))?;
    let dim = u16::try_from(trace.dim())
        .map_err(|_| EmbeddingError::Format("dimension exceeds u16".into()))?;
    let mut buf = Vec::with_capacity(HEADER_LEN + trace.values().len() * 4);
    buf.extend_from_slice(TRACE_MAGIC);
    buf.extend_from_slice(&TRACE_VERSION.to_le_bytes());
    buf.extend_from_slice(&frames.to_le_bytes());
    buf.extend_from_slice(&dim.to_le_bytes());
    buf.extend_from_slice(&trace.fps().to_le_bytes());
    for v in trace.values() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

pub fn read_trace<R: Read>(mut r: R) -> Result<EmbeddingTrace, EmbeddingError> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    if bytes.len() < HEADER_LEN {
        return Err(EmbeddingError::Format("truncated header".into()));
    }
    if &bytes[0..4] != TRACE_MAGIC {
        return Err(EmbeddingError::Format("bad magic".into()));
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != TRACE_VERSION {
        return Err(EmbeddingError::Format(format!("unsupported version {version}")));
    }
    let frames = u32::from_le_bytes(bytes[6..10].try_into().unwrap()) as usize;
    let dim = u16::from_le_bytes([bytes[10], bytes[11]]) as usize;
    let fps = f32::from_le_bytes(bytes[12..16].try_into().unwrap());
    let body = &bytes[HEADER_LEN..];
    if body.len() != frames * dim * 4 {
        return Err(EmbeddingError::Format(format!(
            "expected {} payload bytes, found {}",
            frames * dim * 4,
            body.len()
        )));
    }
    let data = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    EmbeddingTrace::new(dim, fps, data)
}

pub fn write_trace_file(path: &Path, trace: &EmbeddingTrace) -> Result<(), EmbeddingError> {
    let mut buf = Vec::new();
    write_trace(&mut buf, trace)?;
    fs::write(path, buf)?;
    Ok(())
}

pub fn read_trace_file(path: &Path) -> Result<EmbeddingTrace, EmbeddingError> {
    read_trace(fs::File::open(path)?)
}
