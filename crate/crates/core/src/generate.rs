//! Latent-space generation, denoising and evaluation metrics.
//!
//! A trained model is summarized by the maps, the latent model and the
//! interconnection matrix `U = (1/η) Φ Hᵀ`. Out-of-sample points project to
//! `h* = Λ⁻¹ Uᵀ φ(x*)` and latent codes decode through `ψ(U h*)`.

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{shape_err, Result, RkmError};
use crate::feature_maps::MapParams;
use crate::rkm::LatentModel;
use crate::robust_stats::WeightVector;

/// Number of histogram bins in the latent diagnostics.
pub const HIST_BINS: usize = 64;

/// The pieces needed to project and decode without the training data.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModel {
    pub params: MapParams,
    pub model: LatentModel,
    /// d_f×s
    pub interconnection: DMatrix<f64>,
}

impl TrainedModel {
    /// Builds `U` from the training rows the model was solved on.
    pub fn from_training_data(params: MapParams, model: LatentModel, data: &DMatrix<f64>) -> Result<Self> {
        if data.nrows() != model.n() {
            return Err(shape_err(format!("{} training rows for a model of {} points", data.nrows(), model.n())));
        }
        let phi = params.encode(data)?;
        let interconnection = model.interconnection(&phi.transpose())?;
        Ok(Self { params, model, interconnection })
    }

    pub fn latent_dim(&self) -> usize {
        self.model.latent_dim()
    }

    /// Latent codes of a batch (rows are samples), returned as s×m.
    pub fn project(&self, batch: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let phi = self.params.encode(batch)?;
        let mut h = self.interconnection.transpose() * phi.transpose();
        for j in 0..h.nrows() {
            let l = self.model.eigvals[j];
            h.row_mut(j).iter_mut().for_each(|v| *v /= l);
        }
        Ok(h)
    }

    /// Decodes latent codes given as columns (s×m) into an m×d batch.
    pub fn decode_latents(&self, h: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if h.nrows() != self.latent_dim() {
            return Err(shape_err(format!("latent codes have {} rows, model has {}", h.nrows(), self.latent_dim())));
        }
        if h.ncols() == 0 {
            return Ok(DMatrix::zeros(0, self.params.arch.input_dim()));
        }
        let features = (&self.interconnection * h).transpose();
        self.params.decode(&features)
    }

    /// Projects a batch onto the latent space and maps it back.
    pub fn denoise(&self, batch: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if batch.nrows() == 0 {
            return Ok(DMatrix::zeros(0, self.params.arch.input_dim()));
        }
        let h = self.project(batch)?;
        self.decode_latents(&h)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LatentGaussian {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
    /// Lower Cholesky factor of `cov` (zero for a point mass).
    pub chol: DMatrix<f64>,
    /// Diagonal jitter that had to be added to make `cov` positive definite.
    pub jitter: f64,
}

impl LatentGaussian {
    /// Degenerate Gaussian concentrated at `h`.
    pub fn point_mass(h: DVector<f64>) -> Self {
        let s = h.len();
        Self { mean: h, cov: DMatrix::zeros(s, s), chol: DMatrix::zeros(s, s), jitter: 0.0 }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// `n` draws as columns (s×n).
    pub fn sample(&self, n: usize, seed: u64) -> DMatrix<f64> {
        let s = self.dim();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let z = DMatrix::from_fn(s, n, |_, _| StandardNormal.sample(&mut rng));
        let mut out = &self.chol * z;
        for mut c in out.column_iter_mut() {
            c += &self.mean;
        }
        out
    }
}

/// Fits a Gaussian to the latent points. With `robust` the points are weighted
/// by `D_ii`; otherwise every point has weight one. `diag` drops off-diagonal
/// covariance terms.
pub fn fit_latent_gaussian(
    model: &LatentModel,
    weights: &WeightVector,
    robust: bool,
    diag: bool,
) -> Result<LatentGaussian> {
    let n = model.n();
    let s = model.latent_dim();
    if weights.len() != n {
        return Err(shape_err(format!("{} weights for {} latent points", weights.len(), n)));
    }
    if n < 2 {
        return Err(RkmError::FitError(format!("need at least 2 latent points, got {n}")));
    }
    let w: Vec<f64> = if robust { weights.weights.clone() } else { vec![1.0; n] };
    let sw: f64 = w.iter().sum();
    let sw2: f64 = w.iter().map(|x| x * x).sum();
    let mut mean = DVector::zeros(s);
    for i in 0..n {
        mean.axpy(w[i] / sw, &model.h.column(i), 1.0);
    }
    let mut cov = DMatrix::zeros(s, s);
    for i in 0..n {
        let c = model.h.column(i) - &mean;
        cov.ger(w[i], &c, &c, 1.0);
    }
    // reliability-weight normalization; reduces to N - 1 for unit weights
    cov /= sw - sw2 / sw;
    if diag {
        cov = DMatrix::from_diagonal(&cov.diagonal());
    }
    let trace = cov.trace();
    if !(trace > 0.0) || !trace.is_finite() {
        return Err(RkmError::FitError("latent covariance is zero: all latent points coincide".into()));
    }
    if let Some(ch) = Cholesky::new(cov.clone()) {
        return Ok(LatentGaussian { chol: ch.l(), mean, cov, jitter: 0.0 });
    }
    let jitter = 1e-9 * trace / s as f64;
    let jittered = &cov + DMatrix::identity(s, s) * jitter;
    match Cholesky::new(jittered.clone()) {
        Some(ch) => {
            log::warn!("latent covariance was singular; added {jitter:e} to the diagonal");
            Ok(LatentGaussian { chol: ch.l(), mean, cov: jittered, jitter })
        }
        None => Err(RkmError::FitError("latent covariance is singular even after jitter".into())),
    }
}

/// Draws `n` latent codes and decodes them (n×d).
pub fn sample_and_decode(g: &LatentGaussian, n: usize, trained: &TrainedModel, seed: u64) -> Result<DMatrix<f64>> {
    if g.dim() != trained.latent_dim() {
        return Err(shape_err(format!("Gaussian of dimension {}, model has {}", g.dim(), trained.latent_dim())));
    }
    trained.decode_latents(&g.sample(n, seed))
}

/// Decodes `steps` codes that vary coordinate `dim` of `base` linearly over `[lo, hi]`.
pub fn traverse(
    trained: &TrainedModel,
    base: &DVector<f64>,
    dim: usize,
    lo: f64,
    hi: f64,
    steps: usize,
) -> Result<DMatrix<f64>> {
    if base.len() != trained.latent_dim() || dim >= base.len() {
        return Err(RkmError::InvalidArgument(format!(
            "traverse needs a base of length {} and dim < {}, got length {} and dim {dim}",
            trained.latent_dim(),
            trained.latent_dim(),
            base.len()
        )));
    }
    let mut h = DMatrix::zeros(base.len(), steps);
    for k in 0..steps {
        let t = if steps == 1 { 0.5 } else { k as f64 / (steps - 1) as f64 };
        h.set_column(k, base);
        h[(dim, k)] = lo + t * (hi - lo);
    }
    trained.decode_latents(&h)
}

/// Per-sample mean absolute errors between two equally shaped batches.
pub fn per_sample_mae(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<Vec<f64>> {
    if a.shape() != b.shape() {
        return Err(shape_err(format!("batches are {:?} and {:?}", a.shape(), b.shape())));
    }
    let d = a.ncols() as f64;
    Ok((0..a.nrows()).map(|i| (a.row(i) - b.row(i)).abs().sum() / d).collect())
}

/// Sample skewness `m3 / m2^{3/2}`; `None` with fewer than three values or zero spread.
pub fn skewness(values: &[f64]) -> Option<f64> {
    let n = values.len();
    if n < 3 {
        return None;
    }
    let nf = n as f64;
    let mean = values.iter().sum::<f64>() / nf;
    let m2 = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / nf;
    let m3 = values.iter().map(|v| (v - mean).powi(3)).sum::<f64>() / nf;
    if !(m2 > 0.0) {
        return None;
    }
    Some(m3 / m2.powf(1.5))
}

fn median(sorted: &[f64]) -> f64 {
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Histogram {
    pub left: f64,
    pub width: f64,
    /// Values outside the range are clamped into the edge bins.
    pub counts: Vec<usize>,
}

impl Histogram {
    /// `bins` equal bins over `median ± 4` robust standard deviations (1.4826·MAD).
    pub fn robust(values: &[f64], bins: usize) -> Self {
        if values.is_empty() {
            return Self { left: 0.0, width: 1.0, counts: vec![0; bins] };
        }
        let mut sorted = values.to_vec();
        sorted.sort_by(f64::total_cmp);
        let med = median(&sorted);
        let mut dev: Vec<f64> = sorted.iter().map(|v| (v - med).abs()).collect();
        dev.sort_by(f64::total_cmp);
        let mut sd = 1.4826 * median(&dev);
        if !(sd > 0.0) {
            sd = if sorted[sorted.len() - 1] > sorted[0] { (sorted[sorted.len() - 1] - sorted[0]) / 8.0 } else { 1.0 };
        }
        let left = med - 4.0 * sd;
        let width = 8.0 * sd / bins as f64;
        let mut counts = vec![0; bins];
        for v in values {
            let b = ((v - left) / width).floor();
            let b = if b < 0.0 { 0 } else { (b as usize).min(bins - 1) };
            counts[b] += 1;
        }
        Self { left, width, counts }
    }

    pub fn bin_left(&self, b: usize) -> f64 {
        self.left + b as f64 * self.width
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LatentDiagnostics {
    /// Skewness of every latent dimension over all points.
    pub skew_all: Vec<Option<f64>>,
    /// Same, restricted to points with weight one.
    pub skew_inliers: Vec<Option<f64>>,
    pub histograms: Vec<Histogram>,
}

impl LatentDiagnostics {
    pub fn mean_abs_skew_all(&self) -> Option<f64> {
        mean_abs(&self.skew_all)
    }

    pub fn mean_abs_skew_inliers(&self) -> Option<f64> {
        mean_abs(&self.skew_inliers)
    }
}

fn mean_abs(v: &[Option<f64>]) -> Option<f64> {
    let present: Vec<f64> = v.iter().flatten().map(|x| x.abs()).collect();
    (!present.is_empty()).then(|| present.iter().sum::<f64>() / present.len() as f64)
}

pub fn latent_diagnostics(model: &LatentModel, weights: &WeightVector) -> LatentDiagnostics {
    let mut skew_all = Vec::new();
    let mut skew_inliers = Vec::new();
    let mut histograms = Vec::new();
    for j in 0..model.latent_dim() {
        let row: Vec<f64> = model.h.row(j).iter().copied().collect();
        let inl: Vec<f64> = row.iter().zip(&weights.weights).filter(|(_, &w)| w >= 1.0).map(|(v, _)| *v).collect();
        skew_all.push(skewness(&row));
        skew_inliers.push(skewness(&inl));
        histograms.push(Histogram::robust(&row, HIST_BINS));
    }
    LatentDiagnostics { skew_all, skew_inliers, histograms }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub mae: f64,
    pub per_sample: Vec<f64>,
    pub skew_all: Vec<Option<f64>>,
    pub skew_inliers: Vec<Option<f64>>,
    pub fraction_downweighted: f64,
}

/// Denoises `noisy` and scores it against `clean`, together with latent
/// diagnostics of the trained model.
pub fn evaluate(
    trained: &TrainedModel,
    weights: &WeightVector,
    clean: &DMatrix<f64>,
    noisy: &DMatrix<f64>,
) -> Result<EvalReport> {
    if clean.shape() != noisy.shape() {
        return Err(shape_err(format!("clean is {:?}, noisy is {:?}", clean.shape(), noisy.shape())));
    }
    let recon = trained.denoise(noisy)?;
    let per_sample = per_sample_mae(clean, &recon)?;
    let mae = if per_sample.is_empty() { 0.0 } else { per_sample.iter().sum::<f64>() / per_sample.len() as f64 };
    let diag = latent_diagnostics(&trained.model, weights);
    Ok(EvalReport {
        mae,
        per_sample,
        skew_all: diag.skew_all,
        skew_inliers: diag.skew_inliers,
        fraction_downweighted: weights.fraction_downweighted(),
    })
}
