use nalgebra::DMatrix;

use crate::error::{Result, RkmError};
use crate::generate::Histogram;
use crate::robust_stats::WeightVector;

/// Parsed CSV contents before range checks.
#[derive(Debug, Clone, PartialEq)]
pub struct CsvTable {
    pub values: DMatrix<f64>,
    pub header: Option<Vec<String>>,
}

/// Parses a rectangular numeric CSV. The first record is treated as a header
/// only when none of its cells parse as numbers. Row and column numbers in
/// errors are 1-based and count the header line.
pub fn parse_csv(bytes: &[u8]) -> Result<CsvTable> {
    let mut reader =
        ::csv::ReaderBuilder::new().has_headers(false).flexible(true).trim(::csv::Trim::All).from_reader(bytes);
    let mut header = None;
    let mut width = None;
    let mut flat = Vec::new();
    let mut nrows = 0;
    for (idx, record) in reader.records().enumerate() {
        let line = idx + 1;
        let record = record.map_err(|e| RkmError::Parse { row: line, col: 0, msg: e.to_string() })?;
        if idx == 0 && !record.is_empty() && record.iter().all(|c| c.parse::<f64>().is_err()) {
            header = Some(record.iter().map(str::to_string).collect::<Vec<_>>());
            width = Some(record.len());
            continue;
        }
        if record.len() == 1 && record.get(0) == Some("") {
            continue;
        }
        let w = *width.get_or_insert(record.len());
        if record.len() != w {
            return Err(RkmError::Parse {
                row: line,
                col: record.len().min(w) + 1,
                msg: format!("expected {w} fields, found {}", record.len()),
            });
        }
        for (c, cell) in record.iter().enumerate() {
            let v: f64 = cell.parse().map_err(|_| RkmError::Parse {
                row: line,
                col: c + 1,
                msg: format!("`{cell}` is not a number"),
            })?;
            if !v.is_finite() {
                return Err(RkmError::Parse { row: line, col: c + 1, msg: format!("`{cell}` is not finite") });
            }
            flat.push(v);
        }
        nrows += 1;
    }
    let ncols = width.unwrap_or(0);
    if nrows == 0 || ncols == 0 {
        return Err(RkmError::DataValidation("CSV contains no data rows".into()));
    }
    Ok(CsvTable { values: DMatrix::from_row_slice(nrows, ncols, &flat), header })
}

/// Rescales every column to `[0, 1]` by its own (min, max). Constant columns
/// map to zero and are reported in the returned warnings.
pub fn normalize_columns(m: &mut DMatrix<f64>) -> (Vec<(f64, f64)>, Vec<String>) {
    let mut ranges = Vec::with_capacity(m.ncols());
    let mut warnings = Vec::new();
    for (c, mut col) in m.column_iter_mut().enumerate() {
        let lo = col.min();
        let hi = col.max();
        ranges.push((lo, hi));
        if hi > lo {
            col.apply(|v| *v = (*v - lo) / (hi - lo));
        } else {
            warnings.push(format!("column {} is constant ({lo}); mapped to 0", c + 1));
            col.fill(0.0);
        }
    }
    (ranges, warnings)
}

pub fn matrix_to_csv(m: &DMatrix<f64>) -> String {
    let mut out = String::new();
    for r in m.row_iter() {
        let cells: Vec<String> = r.iter().map(|v| format!("{v:?}")).collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    out
}

pub fn weights_to_csv(w: &WeightVector) -> String {
    let mut out = String::from("index,d2,weight,threshold\n");
    for i in 0..w.len() {
        out.push_str(&format!("{},{:?},{:?},{:?}\n", i, w.distances_sq[i], w.weights[i], w.threshold));
    }
    out
}

/// One block per latent dimension: `dim,bin_left,count`.
pub fn histograms_to_csv(hists: &[Histogram]) -> String {
    let mut out = String::from("dim,bin_left,count\n");
    for (j, h) in hists.iter().enumerate() {
        for (b, c) in h.counts.iter().enumerate() {
            out.push_str(&format!("{},{:?},{}\n", j, h.bin_left(b), c));
        }
    }
    out
}
