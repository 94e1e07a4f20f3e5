//! Bit-exact binary state snapshots.
//!
//! Layout: magic `CHF1`, little-endian u32 nx, ny, L, little-endian f64 t,
//! then nx*ny*L little-endian f64 for f (row-major, component fastest), nx*ny
//! for u, and nx*ny for the accumulated history integral J. J makes resumed
//! runs continue the closed-form conformal factor exactly.

use std::fs;
use std::io::Write as _;
use std::path::Path;

use crate::error::ChfError;
use crate::flow::FlowState;
use crate::geometry::{GridGeometry, MapField, ScalarField};

pub const MAGIC: &[u8; 4] = b"CHF1";

#[derive(Clone, Debug)]
pub struct Snapshot {
    pub nx: usize,
    pub ny: usize,
    pub l: usize,
    pub t: f64,
    pub f: MapField,
    pub u: ScalarField,
    pub j: ScalarField,
}

pub fn write_snapshot(path: &Path, state: &FlowState) -> Result<(), ChfError> {
    let f = &state.f;
    let mut buf: Vec<u8> =
        Vec::with_capacity(4 + 12 + 8 * (1 + f.data.len() + 2 * state.u.data.len()));
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&(f.nx as u32).to_le_bytes());
    buf.extend_from_slice(&(f.ny as u32).to_le_bytes());
    buf.extend_from_slice(&(f.l as u32).to_le_bytes());
    buf.extend_from_slice(&state.t.to_le_bytes());
    for &v in &f.data {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    for &v in &state.u.data {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    for &v in &state.hist.j.data {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    let mut file = fs::File::create(path)?;
    file.write_all(&buf)?;
    Ok(())
}

pub fn read_snapshot(path: &Path) -> Result<Snapshot, ChfError> {
    let bytes = fs::read(path)?;
    let bad = |what: &str| {
        ChfError::Config(format!("snapshot {}: {what}", path.display()))
    };
    if bytes.len() < 24 {
        return Err(bad("file too short for the header"));
    }
    if &bytes[0..4] != MAGIC {
        return Err(bad("bad magic (not a CHF1 snapshot)"));
    }
    let u32_at = |off: usize| u32::from_le_bytes(bytes[off..off + 4].try_into().unwrap());
    let nx = u32_at(4) as usize;
    let ny = u32_at(8) as usize;
    let l = u32_at(12) as usize;
    if nx == 0 || ny == 0 || l == 0 {
        return Err(bad("zero dimension in header"));
    }
    let ncells = nx
        .checked_mul(ny)
        .ok_or_else(|| bad("dimension overflow"))?;
    let nf = ncells
        .checked_mul(l)
        .ok_or_else(|| bad("dimension overflow"))?;
    let expect = 24 + 8 * (nf + 2 * ncells);
    if bytes.len() != expect {
        return Err(bad(&format!(
            "size mismatch: {} bytes, header implies {expect}",
            bytes.len()
        )));
    }
    let f64_at = |off: usize| f64::from_le_bytes(bytes[off..off + 8].try_into().unwrap());
    let t = f64_at(16);
    let read_block = |start: usize, count: usize| -> Vec<f64> {
        (0..count).map(|k| f64_at(start + 8 * k)).collect()
    };
    let f = MapField { nx, ny, l, data: read_block(24, nf) };
    let u = ScalarField { nx, ny, data: read_block(24 + 8 * nf, ncells) };
    let j = ScalarField { nx, ny, data: read_block(24 + 8 * (nf + ncells), ncells) };
    Ok(Snapshot { nx, ny, l, t, f, u, j })
}

impl Snapshot {
    /// Check the snapshot matches a grid before resuming on it.
    pub fn expect_grid(&self, g: &GridGeometry) -> Result<(), ChfError> {
        if self.nx != g.nx || self.ny != g.ny {
            return Err(ChfError::Config(format!(
                "snapshot grid {}x{} does not match configured grid {}x{}",
                self.nx, self.ny, g.nx, g.ny
            )));
        }
        Ok(())
    }
}
