//! Binary snapshot of the global cache table.
//!
//! Layout (little-endian): magic `COCAGCT1`, version `u32`, classes `u32`,
//! layers `u32`, dim `u32`, `Φ` as `u64[classes]`, present-entry count `u64`,
//! then per present entry: class `u32`, layer `u32`, `f32[dim]`.

use std::io::{Read, Write};

use super::GlobalCacheTable;
use crate::cachemath::SemanticVector;
use crate::error::{CocaError, Result};
use crate::workload::trace::{read_f32, read_u32, read_u64};

pub const SNAPSHOT_MAGIC: &[u8; 8] = b"COCAGCT1";
pub const SNAPSHOT_VERSION: u32 = 1;

pub fn write_snapshot<W: Write>(table: &GlobalCacheTable, mut w: W) -> Result<()> {
    w.write_all(SNAPSHOT_MAGIC)?;
    w.write_all(&SNAPSHOT_VERSION.to_le_bytes())?;
    for n in [table.classes(), table.layers(), table.dim()] {
        w.write_all(&(n as u32).to_le_bytes())?;
    }
    for f in &table.global_freq {
        w.write_all(&f.to_le_bytes())?;
    }
    w.write_all(&(table.present_count() as u64).to_le_bytes())?;
    for (i, j, v) in table.iter_present() {
        w.write_all(&(i as u32).to_le_bytes())?;
        w.write_all(&(j as u32).to_le_bytes())?;
        for c in v.as_slice() {
            w.write_all(&(*c as f32).to_le_bytes())?;
        }
    }
    Ok(())
}

/// Reads a snapshot; entries are renormalized after the `f32` round trip.
pub fn read_snapshot<R: Read>(mut r: R) -> Result<GlobalCacheTable> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != SNAPSHOT_MAGIC {
        return Err(CocaError::format("snapshot", "bad magic"));
    }
    let version = read_u32(&mut r)?;
    if version != SNAPSHOT_VERSION {
        return Err(CocaError::format("snapshot", format!("unsupported version {version}")));
    }
    let classes = read_u32(&mut r)? as usize;
    let layers = read_u32(&mut r)? as usize;
    let dim = read_u32(&mut r)? as usize;
    let mut table = GlobalCacheTable::new(classes, layers, dim);
    for f in table.global_freq.iter_mut() {
        *f = read_u64(&mut r)?;
    }
    let present = read_u64(&mut r)?;
    for _ in 0..present {
        let i = read_u32(&mut r)? as usize;
        let j = read_u32(&mut r)? as usize;
        if i >= classes || j >= layers {
            return Err(CocaError::format("snapshot", format!("entry ({i}, {j}) out of range")));
        }
        let comps = (0..dim).map(|_| read_f32(&mut r).map(f64::from)).collect::<Result<Vec<_>>>()?;
        let v = SemanticVector::normalized(comps).ok_or_else(|| CocaError::format("snapshot", "zero entry"))?;
        table.set_entry(i, j, Some(v))?;
    }
    Ok(table)
}
