//! Kernel functions and Gram matrix assembly for the implicit feature-map path.

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::error::{Result, RkmError};

/// Kernel function `k(x, y)`.
///
/// The RBF form is `exp(-‖x - y‖² / (2σ²))`; the polynomial form is
/// `(xᵀy + offset)^degree`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum KernelSpec {
    Linear,
    Rbf { bandwidth: f64 },
    Polynomial { degree: u32, offset: f64 },
}

impl KernelSpec {
    pub fn validate(&self) -> Result<()> {
        match *self {
            KernelSpec::Linear => Ok(()),
            KernelSpec::Rbf { bandwidth } if bandwidth > 0.0 && bandwidth.is_finite() => Ok(()),
            KernelSpec::Rbf { bandwidth } => {
                Err(RkmError::InvalidArgument(format!("rbf bandwidth must be positive, got {bandwidth}")))
            }
            KernelSpec::Polynomial { degree, offset } if degree >= 1 && offset.is_finite() => Ok(()),
            KernelSpec::Polynomial { degree, .. } => Err(RkmError::InvalidArgument(format!(
                "polynomial degree must be >= 1 with finite offset, got degree {degree}"
            ))),
        }
    }

    pub fn eval(&self, x: &[f64], y: &[f64]) -> f64 {
        match *self {
            KernelSpec::Linear => dot(x, y),
            KernelSpec::Rbf { bandwidth } => {
                let sq: f64 = x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
                (-sq / (2.0 * bandwidth * bandwidth)).exp()
            }
            KernelSpec::Polynomial { degree, offset } => (dot(x, y) + offset).powi(degree as i32),
        }
    }
}

fn dot(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| a * b).sum()
}

/// A kernel matrix together with a flag recording whether it was double-centered.
#[derive(Debug, Clone, PartialEq)]
pub struct GramMatrix {
    pub values: DMatrix<f64>,
    pub centered: bool,
}

impl GramMatrix {
    pub fn new(values: DMatrix<f64>) -> Result<Self> {
        if !values.is_square() {
            return Err(RkmError::ShapeMismatch(format!(
                "Gram matrix must be square, got {}x{}",
                values.nrows(),
                values.ncols()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(RkmError::DataValidation("Gram matrix has non-finite entries".into()));
        }
        Ok(Self { values, centered: false })
    }

    pub fn n(&self) -> usize {
        self.values.nrows()
    }
}

pub(crate) fn rows_of(data: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..data.nrows()).map(|i| data.row(i).iter().copied().collect()).collect()
}

/// Assembles `K_ij = k(x_i, x_j)` for the rows of `data`.
///
/// Only the upper triangle is evaluated; the lower triangle is a mirror, so the
/// result is exactly symmetric. Rows are split across rayon workers but every
/// entry is computed independently, so the output does not depend on the pool size.
pub fn gram(data: &DMatrix<f64>, spec: &KernelSpec) -> Result<GramMatrix> {
    spec.validate()?;
    let n = data.nrows();
    if n == 0 || data.ncols() == 0 {
        return Err(RkmError::DataValidation(format!(
            "gram needs a non-empty data matrix, got {}x{}",
            n,
            data.ncols()
        )));
    }
    if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
        return Err(RkmError::DataValidation(format!("non-finite entry at row {}, column {}", pos % n, pos / n)));
    }
    let rows = rows_of(data);
    let upper: Vec<Vec<f64>> =
        (0..n).into_par_iter().map(|i| (i..n).map(|j| spec.eval(&rows[i], &rows[j])).collect()).collect();
    let mut k = DMatrix::zeros(n, n);
    for (i, row) in upper.iter().enumerate() {
        for (off, &v) in row.iter().enumerate() {
            let j = i + off;
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
    }
    Ok(GramMatrix { values: k, centered: false })
}

/// Linear-kernel Gram matrix of explicit features (rows are samples),
/// mirrored from the upper triangle.
pub fn linear_gram(features: &DMatrix<f64>) -> Result<GramMatrix> {
    let mut k = features * features.transpose();
    let n = k.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            k[(j, i)] = k[(i, j)];
        }
    }
    GramMatrix::new(k)
}

/// Kernel row `[k(x_1, x*), …, k(x_N, x*)]` for an out-of-sample point.
pub fn kernel_row(data: &DMatrix<f64>, x_star: &[f64], spec: &KernelSpec) -> Result<Vec<f64>> {
    spec.validate()?;
    if x_star.len() != data.ncols() {
        return Err(RkmError::ShapeMismatch(format!(
            "point has dimension {}, training data has {}",
            x_star.len(),
            data.ncols()
        )));
    }
    Ok(rows_of(data).iter().map(|r| spec.eval(r, x_star)).collect())
}

/// Double-centers `K` with the projector `I - 11ᵀ/N`.
pub fn center(k: &GramMatrix) -> GramMatrix {
    let n = k.n();
    let nf = n as f64;
    let row_means: Vec<f64> = (0..n).map(|i| k.values.row(i).sum() / nf).collect();
    let col_means: Vec<f64> = (0..n).map(|j| k.values.column(j).sum() / nf).collect();
    let grand = row_means.iter().sum::<f64>() / nf;
    let mut out = DMatrix::from_fn(n, n, |i, j| k.values[(i, j)] - row_means[i] - col_means[j] + grand);
    // symmetric input stays exactly symmetric
    for i in 0..n {
        for j in (i + 1)..n {
            let avg = 0.5 * (out[(i, j)] + out[(j, i)]);
            out[(i, j)] = avg;
            out[(j, i)] = avg;
        }
    }
    GramMatrix { values: out, centered: true }
}
