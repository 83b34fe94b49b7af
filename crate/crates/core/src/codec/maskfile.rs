//! Single-task mask file (`WSNM`), little-endian:
//!
//! ```text
//! "WSNM" version:u8 capacity:f64 layers:u32
//! { rows:u32 cols:u32 words:u64 * ceil(rows*cols / 64) } * layers
//! ```

use std::path::Path;

use crate::error::{Error, Result};
use crate::mask::{BitMask, TaskMask};

const MAGIC: &[u8; 4] = b"WSNM";
const VERSION: u8 = 1;

pub fn mask_to_bytes(mask: &TaskMask) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.push(VERSION);
    out.extend_from_slice(&mask.capacity.to_le_bytes());
    out.extend_from_slice(&(mask.layers.len() as u32).to_le_bytes());
    for l in &mask.layers {
        out.extend_from_slice(&(l.rows() as u32).to_le_bytes());
        out.extend_from_slice(&(l.cols() as u32).to_le_bytes());
        for w in l.words() {
            out.extend_from_slice(&w.to_le_bytes());
        }
    }
    out
}

pub fn mask_from_bytes(bytes: &[u8]) -> Result<TaskMask> {
    let mut pos = 0usize;
    let mut take = |n: usize| -> Result<&[u8]> {
        let s = bytes
            .get(pos..pos + n)
            .ok_or_else(|| Error::Integrity(format!("truncated mask file at offset {pos}")))?;
        pos += n;
        Ok(s)
    };
    if take(4)? != MAGIC {
        return Err(Error::Integrity("bad magic, expected WSNM".into()));
    }
    let version = take(1)?[0];
    if version != VERSION {
        return Err(Error::Integrity(format!("unsupported mask file version {version}")));
    }
    let capacity = f64::from_le_bytes(take(8)?.try_into().expect("8 bytes"));
    let n_layers = u32::from_le_bytes(take(4)?.try_into().expect("4 bytes")) as usize;
    let mut layers = Vec::with_capacity(n_layers.min(1024));
    for _ in 0..n_layers {
        let rows = u32::from_le_bytes(take(4)?.try_into().expect("4 bytes")) as usize;
        let cols = u32::from_le_bytes(take(4)?.try_into().expect("4 bytes")) as usize;
        let n_words = (rows * cols).div_ceil(64);
        let raw = take(n_words * 8)?;
        let words = raw
            .chunks_exact(8)
            .map(|c| u64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        layers.push(BitMask::from_words(rows, cols, words)?);
    }
    if pos != bytes.len() {
        return Err(Error::Integrity("trailing bytes in mask file".into()));
    }
    Ok(TaskMask { capacity, layers })
}

pub fn write_mask(path: &Path, mask: &TaskMask) -> Result<()> {
    std::fs::write(path, mask_to_bytes(mask)).map_err(|e| Error::io(path, e))
}

pub fn read_mask(path: &Path) -> Result<TaskMask> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    mask_from_bytes(&bytes)
}

/// File name of task `t` (1-based) inside a mask directory.
pub fn mask_file_name(task: usize) -> String {
    format!("task_{task:03}.wsnm")
}

/// Reads `task_001.wsnm`, `task_002.wsnm`, ... until the first gap.
pub fn read_mask_dir(dir: &Path) -> Result<Vec<TaskMask>> {
    if !dir.is_dir() {
        return Err(Error::io(
            dir,
            std::io::Error::new(std::io::ErrorKind::NotFound, "mask directory not found"),
        ));
    }
    let mut out = Vec::new();
    loop {
        let p = dir.join(mask_file_name(out.len() + 1));
        if !p.exists() {
            break;
        }
        out.push(read_mask(&p)?);
    }
    if out.is_empty() {
        return Err(Error::Config(format!("no task_001.wsnm in {}", dir.display())));
    }
    Ok(out)
}
