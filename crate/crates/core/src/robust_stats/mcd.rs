//! FAST-MCD: minimum covariance determinant location/scatter via random
//! elemental starts followed by concentration steps.

use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::chi2::{chi2_cdf, chi2_quantile};
use crate::error::{Result, RkmError};

/// Number of random starts used by [`compute_weights`](super::compute_weights).
pub const DEFAULT_RESTARTS: usize = 50;
/// Candidates kept after the first two C-steps and iterated to convergence.
pub const KEEP_BEST: usize = 10;
const MAX_CSTEPS: usize = 100;
const REL_CONVERGENCE: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct McdEstimate {
    pub mean: DVector<f64>,
    /// Raw covariance multiplied by the consistency factor.
    pub cov: DMatrix<f64>,
    pub raw_cov: DMatrix<f64>,
    /// Sorted indices of the `n_mcd` points defining the estimate.
    pub support: Vec<usize>,
    pub det_raw: f64,
    pub consistency: f64,
}

/// Determinant trace of one restart, one entry per C-step subset.
#[derive(Debug, Clone)]
pub struct RestartTrace {
    pub restart: usize,
    pub dets: Vec<f64>,
}

#[derive(Debug, Clone)]
struct Candidate {
    restart: usize,
    support: Vec<usize>,
    mean: DVector<f64>,
    cov: DMatrix<f64>,
    logdet: f64,
    dets: Vec<f64>,
    converged: bool,
}

/// Minimum subset size with maximal breakdown, `⌊(N + s + 1) / 2⌋`.
pub fn min_subset_size(n: usize, s: usize) -> usize {
    (n + s).div_ceil(2)
}

/// Mean and maximum-likelihood covariance (divisor `|subset|`) of the given rows.
pub fn subset_mean_cov(points: &DMatrix<f64>, subset: &[usize]) -> (DVector<f64>, DMatrix<f64>) {
    let s = points.ncols();
    let h = subset.len() as f64;
    let mut mean = DVector::zeros(s);
    for &i in subset {
        mean += points.row(i).transpose();
    }
    mean /= h;
    let mut cov = DMatrix::zeros(s, s);
    for &i in subset {
        let r = points.row(i).transpose() - &mean;
        cov.ger(1.0, &r, &r, 1.0);
    }
    cov /= h;
    (mean, cov)
}

/// `ln det(cov)` via Cholesky; `None` when the matrix is not numerically positive definite.
fn log_det(cov: &DMatrix<f64>) -> Option<f64> {
    let chol = cov.clone().cholesky()?;
    let l = chol.l_dirty();
    let mut acc = 0.0;
    for i in 0..cov.nrows() {
        let d = l[(i, i)];
        if !(d > 0.0) || !d.is_finite() {
            return None;
        }
        acc += 2.0 * d.ln();
    }
    Some(acc)
}

/// Squared Mahalanobis distances `(x_i - μ)ᵀ S⁻¹ (x_i - μ)` of every row of `points`.
///
/// Uses the Cholesky factor `S = L Lᵀ`: one forward solve per point gives
/// `y = L⁻¹(x - μ)` and `d² = ‖y‖²`. No explicit inverse is formed.
pub fn mahalanobis_sq(points: &DMatrix<f64>, mean: &DVector<f64>, cov: &DMatrix<f64>) -> Result<Vec<f64>> {
    let s = points.ncols();
    if mean.len() != s || cov.nrows() != s || cov.ncols() != s {
        return Err(RkmError::ShapeMismatch(format!(
            "points have {} columns, mean {}, covariance {}x{}",
            s,
            mean.len(),
            cov.nrows(),
            cov.ncols()
        )));
    }
    let chol = cov
        .clone()
        .cholesky()
        .ok_or_else(|| RkmError::DegenerateScatter("covariance is not positive definite".into()))?;
    let l = chol.l();
    let mut centered = points.transpose();
    for mut col in centered.column_iter_mut() {
        col -= mean;
    }
    if !l.solve_lower_triangular_mut(&mut centered) {
        return Err(RkmError::DegenerateScatter("singular Cholesky factor".into()));
    }
    Ok(centered.column_iter().map(|c| c.norm_squared().max(0.0)).collect())
}

fn smallest_indices(d2: &[f64], h: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..d2.len()).collect();
    idx.sort_by(|&a, &b| d2[a].total_cmp(&d2[b]).then(a.cmp(&b)));
    idx.truncate(h);
    idx.sort_unstable();
    idx
}

/// Consistency factor for the raw MCD covariance at normal models:
/// `q / F_{χ²(s+2)}(χ²_{s, q})` with `q = n_mcd / N`.
pub fn consistency_factor(s: usize, n_mcd: usize, n: usize) -> f64 {
    let q = n_mcd as f64 / n as f64;
    if q >= 1.0 {
        return 1.0;
    }
    match chi2_quantile(s, q) {
        Ok(cut) => {
            let denom = chi2_cdf(s + 2, cut);
            if denom > 0.0 {
                q / denom
            } else {
                1.0
            }
        }
        Err(_) => 1.0,
    }
}

impl Candidate {
    fn start(points: &DMatrix<f64>, n_mcd: usize, restart: usize, seed: u64) -> Option<Candidate> {
        let (n, s) = points.shape();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(restart as u64);
        // random elemental subset of size s + 1, enlarged until non-singular
        let order = sample(&mut rng, n, n).into_vec();
        let mut size = (s + 1).min(n);
        loop {
            let subset = &order[..size];
            let (mean, cov) = subset_mean_cov(points, subset);
            if log_det(&cov).is_some() {
                return Some(Candidate {
                    restart,
                    support: subset.to_vec(),
                    mean,
                    cov,
                    logdet: f64::INFINITY,
                    dets: Vec::new(),
                    converged: false,
                });
            }
            if size >= n_mcd {
                // exact-fit situation: every start of this size is singular
                let (mean, cov) = subset_mean_cov(points, &order[..n_mcd]);
                let mut support = order[..n_mcd].to_vec();
                support.sort_unstable();
                return Some(Candidate {
                    restart,
                    support,
                    mean,
                    cov,
                    logdet: f64::NEG_INFINITY,
                    dets: vec![0.0],
                    converged: true,
                });
            }
            size += 1;
        }
    }

    /// One concentration step. Marks the candidate converged when the
    /// determinant stops decreasing or the support repeats.
    fn c_step(&mut self, points: &DMatrix<f64>, n_mcd: usize) {
        if self.converged {
            return;
        }
        let d2 = match mahalanobis_sq(points, &self.mean, &self.cov) {
            Ok(d2) => d2,
            Err(_) => {
                self.converged = true;
                return;
            }
        };
        let support = smallest_indices(&d2, n_mcd);
        let (mean, cov) = subset_mean_cov(points, &support);
        let logdet = log_det(&cov).unwrap_or(f64::NEG_INFINITY);
        let same = support == self.support;
        let stalled = self.logdet.is_finite() && logdet >= self.logdet + (-REL_CONVERGENCE).ln_1p();
        self.dets.push(logdet.exp());
        self.support = support;
        self.mean = mean;
        self.cov = cov;
        self.logdet = logdet;
        if same || stalled || logdet == f64::NEG_INFINITY || self.dets.len() >= MAX_CSTEPS {
            self.converged = true;
        }
    }
}

/// FAST-MCD with `restarts` random starts. Returns the estimate together with
/// the determinant trace of every restart.
///
/// Restarts are independent and run on the rayon pool; the winner is chosen by
/// `(log det, restart index)` so the result does not depend on scheduling.
pub fn fast_mcd_traced(
    points: &DMatrix<f64>,
    n_mcd: usize,
    restarts: usize,
    seed: u64,
) -> Result<(McdEstimate, Vec<RestartTrace>)> {
    let (n, s) = points.shape();
    if s == 0 || n <= s {
        return Err(RkmError::InvalidArgument(format!("fast_mcd needs N > s, got N = {n}, s = {s}")));
    }
    if points.iter().any(|v| !v.is_finite()) {
        return Err(RkmError::DataValidation("fast_mcd input has non-finite entries".into()));
    }
    let min = min_subset_size(n, s);
    if n_mcd < min {
        return Err(RkmError::SubsetTooSmall { n_mcd, min });
    }
    if n_mcd > n {
        return Err(RkmError::InvalidArgument(format!("n_mcd = {n_mcd} exceeds N = {n}")));
    }
    if restarts == 0 {
        return Err(RkmError::InvalidArgument("fast_mcd needs at least one restart".into()));
    }

    let mut candidates: Vec<Candidate> = (0..restarts)
        .into_par_iter()
        .filter_map(|r| {
            let mut c = Candidate::start(points, n_mcd, r, seed)?;
            c.c_step(points, n_mcd);
            c.c_step(points, n_mcd);
            Some(c)
        })
        .collect();
    candidates.sort_by(|a, b| a.logdet.total_cmp(&b.logdet).then(a.restart.cmp(&b.restart)));

    let keep = KEEP_BEST.min(candidates.len());
    candidates[..keep].par_iter_mut().for_each(|c| {
        while !c.converged {
            c.c_step(points, n_mcd);
        }
    });

    let best = candidates[..keep]
        .iter()
        .min_by(|a, b| a.logdet.total_cmp(&b.logdet).then(a.restart.cmp(&b.restart)))
        .ok_or_else(|| RkmError::DegenerateScatter("no MCD candidate".into()))?
        .clone();

    check_scatter(points, &best.cov)?;

    let consistency = consistency_factor(s, n_mcd, n);
    let estimate = McdEstimate {
        cov: &best.cov * consistency,
        raw_cov: best.cov,
        mean: best.mean,
        support: best.support,
        det_raw: best.logdet.exp(),
        consistency,
    };
    let mut traces: Vec<RestartTrace> =
        candidates.into_iter().map(|c| RestartTrace { restart: c.restart, dets: c.dets }).collect();
    traces.sort_by_key(|t| t.restart);
    Ok((estimate, traces))
}

/// FAST-MCD robust location and scatter. See [`fast_mcd_traced`].
pub fn fast_mcd(points: &DMatrix<f64>, n_mcd: usize, restarts: usize, seed: u64) -> Result<McdEstimate> {
    fast_mcd_traced(points, n_mcd, restarts, seed).map(|(e, _)| e)
}

/// Rejects covariances whose smallest eigenvalue is negligible relative to the
/// scale of the data.
fn check_scatter(points: &DMatrix<f64>, cov: &DMatrix<f64>) -> Result<()> {
    let eig = cov.clone().symmetric_eigen();
    let min = eig.eigenvalues.min();
    let max = eig.eigenvalues.max();
    let scale_sq = points.iter().fold(0.0f64, |m, v| m.max(v * v));
    let reference = max.max(scale_sq).max(f64::MIN_POSITIVE);
    if !(min > 1e-12 * reference) {
        return Err(RkmError::DegenerateScatter(format!(
            "MCD covariance is singular (smallest eigenvalue {min:e}, reference {reference:e}); \
             try a larger MCD fraction or check for duplicated latent points"
        )));
    }
    Ok(())
}
