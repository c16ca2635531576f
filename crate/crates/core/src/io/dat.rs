use nalgebra::DMatrix;

use crate::error::{Result, RkmError};

pub const DAT_MAGIC: &[u8; 8] = b"RRKMDAT1";

/// Row-major `f32` payload after the magic and `u32` row/column counts.
pub fn encode_dat(m: &DMatrix<f64>) -> Result<Vec<u8>> {
    let rows = u32::try_from(m.nrows()).map_err(|_| RkmError::InvalidArgument("too many rows for RRKMDAT1".into()))?;
    let cols =
        u32::try_from(m.ncols()).map_err(|_| RkmError::InvalidArgument("too many columns for RRKMDAT1".into()))?;
    let mut out = Vec::with_capacity(16 + 4 * m.len());
    out.extend_from_slice(DAT_MAGIC);
    out.extend_from_slice(&rows.to_le_bytes());
    out.extend_from_slice(&cols.to_le_bytes());
    for r in m.row_iter() {
        for v in r.iter() {
            out.extend_from_slice(&(*v as f32).to_le_bytes());
        }
    }
    Ok(out)
}

pub fn decode_dat(bytes: &[u8]) -> Result<DMatrix<f64>> {
    if bytes.len() < 16 || &bytes[..8] != DAT_MAGIC {
        return Err(RkmError::Format("not an RRKMDAT1 file".into()));
    }
    let rows = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let cols = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
    let expected = rows
        .checked_mul(cols)
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| RkmError::Format(format!("{rows}x{cols} overflows")))?;
    let body = &bytes[16..];
    if body.len() != expected {
        return Err(RkmError::Format(format!("RRKMDAT1 payload is {} bytes, expected {expected}", body.len())));
    }
    Ok(DMatrix::from_fn(rows, cols, |r, c| {
        let at = 4 * (r * cols + c);
        f32::from_le_bytes(body[at..at + 4].try_into().unwrap()) as f64
    }))
}
