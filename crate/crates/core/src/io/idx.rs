use nalgebra::DMatrix;

use crate::error::{Result, RkmError};

pub const IMAGE_MAGIC: u32 = 0x0000_0803;
pub const LABEL_MAGIC: u32 = 0x0000_0801;

fn be_u32(bytes: &[u8], at: usize) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| RkmError::Format(format!("IDX header truncated at byte {at}")))
}

fn check_magic(bytes: &[u8], expected: u32, what: &str) -> Result<()> {
    let magic = be_u32(bytes, 0)?;
    if magic != expected {
        return Err(RkmError::Format(format!("{what}: expected IDX magic {expected:#010x}, found {magic:#010x}")));
    }
    Ok(())
}

/// Unsigned-byte IDX images: the first `limit` images (all when `None`),
/// flattened row-major and divided by 255. Returns the matrix and any warnings.
pub fn parse_idx_images(bytes: &[u8], limit: Option<usize>) -> Result<(DMatrix<f64>, Vec<String>)> {
    check_magic(bytes, IMAGE_MAGIC, "images")?;
    let n = be_u32(bytes, 4)? as usize;
    let rows = be_u32(bytes, 8)? as usize;
    let cols = be_u32(bytes, 12)? as usize;
    let pixels = rows
        .checked_mul(cols)
        .filter(|&p| p > 0)
        .ok_or_else(|| RkmError::Format(format!("bad image size {rows}x{cols}")))?;
    let payload =
        n.checked_mul(pixels).ok_or_else(|| RkmError::Format(format!("{n} images of {pixels} pixels overflow")))?;
    let body = &bytes[16..];
    if body.len() < payload {
        return Err(RkmError::Format(format!("IDX payload truncated: need {payload} bytes, found {}", body.len())));
    }
    let mut warnings = Vec::new();
    let take = match limit {
        Some(l) if l > n => {
            warnings.push(format!("limit {l} exceeds the {n} images in the file"));
            n
        }
        Some(l) => l,
        None => n,
    };
    let m = DMatrix::from_fn(take, pixels, |r, c| body[r * pixels + c] as f64 / 255.0);
    Ok((m, warnings))
}

pub fn parse_idx_labels(bytes: &[u8], limit: Option<usize>) -> Result<Vec<u8>> {
    check_magic(bytes, LABEL_MAGIC, "labels")?;
    let n = be_u32(bytes, 4)? as usize;
    let body = &bytes[8..];
    if body.len() < n {
        return Err(RkmError::Format(format!("IDX labels truncated: need {n} bytes, found {}", body.len())));
    }
    Ok(body[..limit.map_or(n, |l| l.min(n))].to_vec())
}
