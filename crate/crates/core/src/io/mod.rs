//! Dataset ingestion, contamination, and the binary/text file formats.

mod checkpoint;
mod dat;
mod idx;
mod tabular;

pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, Checkpoint, CKPT_MAGIC, CKPT_VERSION,
};
pub use dat::{decode_dat, encode_dat, DAT_MAGIC};
pub use idx::{parse_idx_images, parse_idx_labels, IMAGE_MAGIC, LABEL_MAGIC};
pub use tabular::{histograms_to_csv, matrix_to_csv, normalize_columns, parse_csv, weights_to_csv, CsvTable};

use std::path::Path;

use nalgebra::DMatrix;
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Result, RkmError};

/// Samples as rows with every entry in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub rows: DMatrix<f64>,
    pub source: String,
    /// Carried for reporting only; never used in training.
    pub labels: Option<Vec<u8>>,
    /// Per-column (min, max) used when the data was normalized.
    pub ranges: Option<Vec<(f64, f64)>>,
    pub warnings: Vec<String>,
}

fn check_unit_range(m: &DMatrix<f64>, source: &str) -> Result<()> {
    let n = m.nrows();
    if let Some(pos) = m.iter().position(|v| !(0.0..=1.0).contains(v)) {
        return Err(RkmError::DataValidation(format!(
            "{source}: value {} at row {}, column {} lies outside [0, 1] (normalize the data first)",
            m[pos],
            pos % n + 1,
            pos / n + 1
        )));
    }
    Ok(())
}

pub fn load_csv(path: &Path, normalize: bool) -> Result<Dataset> {
    let bytes = std::fs::read(path)?;
    let source = path.display().to_string();
    let mut values = parse_csv(&bytes)?.values;
    let (ranges, warnings) = if normalize {
        let (r, w) = normalize_columns(&mut values);
        (Some(r), w)
    } else {
        check_unit_range(&values, &source)?;
        (None, Vec::new())
    };
    Ok(Dataset { rows: values, source, labels: None, ranges, warnings })
}

pub fn load_idx(images: &Path, labels: Option<&Path>, limit: Option<usize>) -> Result<Dataset> {
    let (rows, warnings) = parse_idx_images(&std::fs::read(images)?, limit)?;
    let labels = match labels {
        Some(p) => {
            let l = parse_idx_labels(&std::fs::read(p)?, Some(rows.nrows()))?;
            if l.len() != rows.nrows() {
                return Err(RkmError::DataValidation(format!("{} labels for {} images", l.len(), rows.nrows())));
            }
            Some(l)
        }
        None => None,
    };
    Ok(Dataset { rows, source: images.display().to_string(), labels, ranges: None, warnings })
}

/// Loads IDX images, RRKMDAT1 matrices or CSV, chosen by the file's leading bytes.
pub fn load_data(path: &Path, normalize: bool, limit: Option<usize>) -> Result<Dataset> {
    let bytes = std::fs::read(path)?;
    let source = path.display().to_string();
    if bytes.starts_with(&IMAGE_MAGIC.to_be_bytes()) {
        let (rows, warnings) = parse_idx_images(&bytes, limit)?;
        return Ok(Dataset { rows, source, labels: None, ranges: None, warnings });
    }
    let mut values = if bytes.starts_with(DAT_MAGIC) { decode_dat(&bytes)? } else { parse_csv(&bytes)?.values };
    let mut warnings = Vec::new();
    if let Some(l) = limit {
        if l > values.nrows() {
            warnings.push(format!("limit {l} exceeds the {} rows available", values.nrows()));
        } else {
            values = values.rows(0, l).into_owned();
        }
    }
    let ranges = if normalize {
        let (r, w) = normalize_columns(&mut values);
        warnings.extend(w);
        Some(r)
    } else {
        check_unit_range(&values, &source)?;
        None
    };
    Ok(Dataset { rows: values, source, labels: None, ranges, warnings })
}

/// Adds `N(noise_mean, noise_sd²)` noise to a seeded random `⌊fraction·N⌋`
/// subset of rows and clips to `[0, 1]`. Returns the data and the sorted
/// indices of the contaminated rows.
pub fn contaminate(
    data: &DMatrix<f64>,
    fraction: f64,
    noise_mean: f64,
    noise_sd: f64,
    seed: u64,
) -> Result<(DMatrix<f64>, Vec<usize>)> {
    if !(0.0..=1.0).contains(&fraction) {
        return Err(RkmError::InvalidArgument(format!("fraction must lie in [0, 1], got {fraction}")));
    }
    let normal =
        Normal::new(noise_mean, noise_sd).map_err(|e| RkmError::InvalidArgument(format!("noise distribution: {e}")))?;
    let n = data.nrows();
    let k = (fraction * n as f64).floor() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx = sample(&mut rng, n, k).into_vec();
    idx.sort_unstable();
    let mut out = data.clone();
    for &i in &idx {
        for c in 0..out.ncols() {
            out[(i, c)] = (out[(i, c)] + normal.sample(&mut rng)).clamp(0.0, 1.0);
        }
    }
    Ok((out, idx))
}

/// Writes CSV when the path ends in `.csv`, RRKMDAT1 otherwise.
pub fn write_matrix(path: &Path, m: &DMatrix<f64>) -> Result<()> {
    let is_csv = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv"));
    if is_csv {
        std::fs::write(path, matrix_to_csv(m))?;
    } else {
        std::fs::write(path, encode_dat(m)?)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(n: usize, d: usize) -> DMatrix<f64> {
        DMatrix::from_fn(n, d, |r, c| ((r * d + c) % 7) as f64 / 7.0)
    }

    #[test]
    fn contaminate_noop_and_count() {
        let x = grid(100, 3);
        let (y, idx) = contaminate(&x, 0.0, 0.5, 0.5, 1).unwrap();
        assert_eq!(y, x);
        assert!(idx.is_empty());
        let (y, idx) = contaminate(&x, 0.2, 0.5, 0.5, 1).unwrap();
        assert_eq!(idx.len(), 20);
        assert!(idx.windows(2).all(|w| w[0] < w[1]));
        assert!(y.iter().all(|v| (0.0..=1.0).contains(v)));
        for r in 0..100 {
            if !idx.contains(&r) {
                assert_eq!(y.row(r), x.row(r));
            }
        }
    }

    #[test]
    fn deterministic_shift() {
        let x = grid(10, 4);
        let (y, idx) = contaminate(&x, 0.5, 0.5, 0.0, 3).unwrap();
        for &i in &idx {
            for c in 0..4 {
                assert_eq!(y[(i, c)], (x[(i, c)] + 0.5).min(1.0));
            }
        }
    }

    #[test]
    fn seeds_reproduce_and_differ() {
        let x = grid(100, 2);
        let a = contaminate(&x, 0.2, 0.5, 0.5, 7).unwrap();
        assert_eq!(a, contaminate(&x, 0.2, 0.5, 0.5, 7).unwrap());
        assert_ne!(a.1, contaminate(&x, 0.2, 0.5, 0.5, 8).unwrap().1);
        assert!(contaminate(&x, 1.5, 0.5, 0.5, 7).is_err());
    }

    #[test]
    fn load_csv_range_and_normalize() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.csv");
        std::fs::write(&p, "0,1\n1,0\n").unwrap();
        assert_eq!(load_csv(&p, false).unwrap().rows, DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]));
        std::fs::write(&p, "0,3\n2,3\n").unwrap();
        assert!(matches!(load_csv(&p, false), Err(RkmError::DataValidation(_))));
        let d = load_csv(&p, true).unwrap();
        assert_eq!(d.rows, DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 1.0, 0.0]));
        assert_eq!(d.warnings.len(), 1);
    }

    #[test]
    fn load_data_detects_format() {
        let dir = tempfile::tempdir().unwrap();
        let m = DMatrix::from_row_slice(2, 2, &[0.0, 0.5, 0.25, 1.0]);
        let p = dir.path().join("x.bin");
        write_matrix(&p, &m).unwrap();
        assert_eq!(load_data(&p, false, None).unwrap().rows, m);
        let p = dir.path().join("x.csv");
        write_matrix(&p, &m).unwrap();
        assert_eq!(load_data(&p, false, Some(1)).unwrap().rows.nrows(), 1);
        let p = dir.path().join("x.idx");
        let mut b = IMAGE_MAGIC.to_be_bytes().to_vec();
        for d in [1u32, 1, 2] {
            b.extend_from_slice(&d.to_be_bytes());
        }
        b.extend([0, 255]);
        std::fs::write(&p, b).unwrap();
        assert_eq!(load_data(&p, false, None).unwrap().rows, DMatrix::from_row_slice(1, 2, &[0.0, 1.0]));
    }
}
