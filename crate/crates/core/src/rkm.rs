//! Weighted conjugate feature duality.
//!
//! Conjugating the error variables of weighted kernel PCA to latent variables
//! `h_i` gives the dual objective
//!
//! ```text
//! J_t^D = Σ_i { -φ(x_i)ᵀ U h_i + ½ D_ii⁻¹ h_iᵀ Λ h_i } + (η/2) tr(UᵀU)
//! ```
//!
//! whose stationary points satisfy `U = (1/η) Σ φ(x_i) h_iᵀ` and the weighted
//! eigenproblem `(1/η) D K Hᵀ = Hᵀ Λ`. Every eigenpair makes `J_t^D` vanish
//! when the latent penalty of component `j` is its eigenvalue `λ_j`.

use nalgebra::{DMatrix, DVector};

use crate::error::{shape_err, Result, RkmError};
use crate::feature_maps::MapParams;
use crate::kernels::{kernel_row, GramMatrix, KernelSpec};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RkmHyper {
    pub eta: f64,
    pub lambda_reg: f64,
    pub latent_dim: usize,
    /// Scale latent row `j` by `√λ_j` instead of leaving it unit-norm.
    pub normalize_by_eigenvalue: bool,
}

impl Default for RkmHyper {
    fn default() -> Self {
        Self { eta: 1.0, lambda_reg: 1.0, latent_dim: 2, normalize_by_eigenvalue: false }
    }
}

impl RkmHyper {
    pub fn new(eta: f64, lambda_reg: f64, latent_dim: usize) -> Self {
        Self { eta, lambda_reg, latent_dim, normalize_by_eigenvalue: false }
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return Err(RkmError::InvalidArgument(format!("eta must be positive, got {}", self.eta)));
        }
        if !(self.lambda_reg > 0.0 && self.lambda_reg.is_finite()) {
            return Err(RkmError::InvalidArgument(format!("lambda_reg must be positive, got {}", self.lambda_reg)));
        }
        if self.latent_dim == 0 || self.latent_dim > n {
            return Err(RkmError::InvalidArgument(format!(
                "latent_dim must lie in [1, N = {n}], got {}",
                self.latent_dim
            )));
        }
        Ok(())
    }
}

/// Latent variables `H` (s×N, column `i` is `h_i`) with the eigenvalues that
/// produced them and the weighting diagonal they were solved under.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentModel {
    pub h: DMatrix<f64>,
    pub eigvals: DVector<f64>,
    pub weights: Vec<f64>,
    pub hyper: RkmHyper,
}

impl LatentModel {
    pub fn latent_dim(&self) -> usize {
        self.h.nrows()
    }

    pub fn n(&self) -> usize {
        self.h.ncols()
    }

    /// Latent points as rows (N×s), the layout used by the MCD estimator.
    pub fn points(&self) -> DMatrix<f64> {
        self.h.transpose()
    }

    /// `U = (1/η) Φ Hᵀ` for features `Φ` (d_f×N).
    pub fn interconnection(&self, features: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        interconnection(features, &self.h, self.hyper.eta)
    }

    /// `J_t^D` at this solution with `U` taken from the stationarity condition.
    pub fn dual_objective(&self, features: &DMatrix<f64>) -> Result<f64> {
        let u = self.interconnection(features)?;
        dual_objective_with_penalty(features, &u, &self.h, &self.weights, self.hyper.eta, self.eigvals.as_slice())
    }
}

/// Gap of the weighted Fenchel–Young inequality:
/// `(1/2λ) eᵀDe + (λ/2) hᵀD⁻¹h − eᵀh`, non-negative for positive `D` and `λ`.
pub fn fenchel_gap(e: &[f64], h: &[f64], d: &[f64], lambda: f64) -> Result<f64> {
    if e.len() != h.len() || e.len() != d.len() {
        return Err(shape_err(format!("e has {}, h has {}, D has {} entries", e.len(), h.len(), d.len())));
    }
    if !(lambda > 0.0) || d.iter().any(|&x| !(x > 0.0)) {
        return Err(RkmError::InvalidArgument("fenchel_gap needs lambda > 0 and D > 0".into()));
    }
    let mut gap = 0.0;
    for i in 0..e.len() {
        gap += e[i] * e[i] * d[i] / (2.0 * lambda) + lambda * h[i] * h[i] / (2.0 * d[i]) - e[i] * h[i];
    }
    Ok(gap)
}

/// Block matrix `[[D/λ, −I], [−I, λD⁻¹]]` whose quadratic form `½ zᵀQz`, with
/// `z = [e; h]`, equals the Fenchel–Young gap.
pub fn fenchel_block(d: &[f64], lambda: f64) -> DMatrix<f64> {
    let n = d.len();
    let mut q = DMatrix::zeros(2 * n, 2 * n);
    for i in 0..n {
        q[(i, i)] = d[i] / lambda;
        q[(n + i, n + i)] = lambda / d[i];
        q[(i, n + i)] = -1.0;
        q[(n + i, i)] = -1.0;
    }
    q
}

/// `U = (1/η) Σ_i φ(x_i) h_iᵀ = (1/η) Φ Hᵀ`.
pub fn interconnection(features: &DMatrix<f64>, h: &DMatrix<f64>, eta: f64) -> Result<DMatrix<f64>> {
    if features.ncols() != h.ncols() {
        return Err(shape_err(format!("features have {} columns, latents have {}", features.ncols(), h.ncols())));
    }
    Ok(features * h.transpose() / eta)
}

/// `J_t^D` with a scalar latent penalty `λ = hyper.lambda_reg`.
pub fn dual_objective(
    features: &DMatrix<f64>,
    u: &DMatrix<f64>,
    h: &DMatrix<f64>,
    weights: &[f64],
    hyper: &RkmHyper,
) -> Result<f64> {
    let penalty = vec![hyper.lambda_reg; h.nrows()];
    dual_objective_with_penalty(features, u, h, weights, hyper.eta, &penalty)
}

/// `J_t^D` with a per-component latent penalty (`penalty[j]` multiplies `h_{ji}²`).
pub fn dual_objective_with_penalty(
    features: &DMatrix<f64>,
    u: &DMatrix<f64>,
    h: &DMatrix<f64>,
    weights: &[f64],
    eta: f64,
    penalty: &[f64],
) -> Result<f64> {
    let (df, n) = features.shape();
    let s = h.nrows();
    if h.ncols() != n || u.nrows() != df || u.ncols() != s || weights.len() != n || penalty.len() != s {
        return Err(shape_err(format!(
            "features {}x{}, U {}x{}, H {}x{}, {} weights, {} penalties",
            df,
            n,
            u.nrows(),
            u.ncols(),
            h.nrows(),
            h.ncols(),
            weights.len(),
            penalty.len()
        )));
    }
    // φ_iᵀ U h_i summed over i is tr(Φᵀ U H)
    let uh = u * h;
    let coupling = features.component_mul(&uh).sum();
    let mut reg = 0.0;
    for i in 0..n {
        let mut q = 0.0;
        for j in 0..s {
            q += penalty[j] * h[(j, i)] * h[(j, i)];
        }
        reg += 0.5 * q / weights[i];
    }
    Ok(-coupling + reg + 0.5 * eta * u.norm_squared())
}

/// Top-`s` eigenpairs of `(1/η) D K`.
///
/// Solved through the symmetric matrix `M = D^{1/2} K D^{1/2} / η`: an
/// eigenvector `v` of `M` maps to `w = D^{1/2} v`, which is re-normalized to unit
/// length (or to `√λ` with `normalize_by_eigenvalue`) and sign-fixed so its
/// largest-magnitude entry is positive.
pub fn solve_weighted_eig(k: &GramMatrix, weights: &[f64], hyper: &RkmHyper) -> Result<LatentModel> {
    let n = k.n();
    hyper.validate(n)?;
    if weights.len() != n {
        return Err(shape_err(format!("{} weights for a {n}x{n} Gram matrix", weights.len())));
    }
    if weights.iter().any(|&w| !(w > 0.0 && w.is_finite())) {
        return Err(RkmError::InvalidArgument("weights must be positive and finite".into()));
    }
    if k.values.iter().any(|v| !v.is_finite()) {
        return Err(RkmError::NumericalFault("Gram matrix has non-finite entries".into()));
    }
    let s = hyper.latent_dim;
    let sqrt_d: Vec<f64> = weights.iter().map(|w| w.sqrt()).collect();
    let mut m = DMatrix::from_fn(n, n, |i, j| sqrt_d[i] * k.values[(i, j)] * sqrt_d[j] / hyper.eta);
    for i in 0..n {
        for j in (i + 1)..n {
            let avg = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = avg;
            m[(j, i)] = avg;
        }
    }
    let trace = m.trace();
    let eig = m
        .try_symmetric_eigen(f64::EPSILON, 10_000)
        .ok_or_else(|| RkmError::EigFailure(format!("no convergence on a {n}x{n} problem")))?;

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let cutoff = 1e-12 * trace;
    let achievable = order.iter().take_while(|&&i| trace > 0.0 && eig.eigenvalues[i] > cutoff).count();
    if achievable < s {
        return Err(RkmError::ShortSpectrum { requested: s, achievable });
    }

    let mut h = DMatrix::zeros(s, n);
    let mut eigvals = DVector::zeros(s);
    for (row, &idx) in order.iter().take(s).enumerate() {
        let lambda = eig.eigenvalues[idx];
        let v = eig.eigenvectors.column(idx);
        let mut w: DVector<f64> = DVector::from_fn(n, |i, _| sqrt_d[i] * v[i]);
        let norm = w.norm();
        if !(norm > 0.0) {
            return Err(RkmError::EigFailure("zero eigenvector".into()));
        }
        w /= norm;
        let pivot = w.iter().enumerate().fold(0, |best, (i, x)| if x.abs() > w[best].abs() { i } else { best });
        if w[pivot] < 0.0 {
            w.neg_mut();
        }
        if hyper.normalize_by_eigenvalue {
            w *= lambda.sqrt();
        }
        h.set_row(row, &w.transpose());
        eigvals[row] = lambda;
    }

    let model = LatentModel { h, eigvals, weights: weights.to_vec(), hyper: *hyper };
    let worst = eig_residual(k, &model);
    let scale = weighted_operator_norm(k, weights, hyper.eta);
    if !(worst <= 1e-8 * scale.max(f64::MIN_POSITIVE)) {
        return Err(RkmError::EigFailure(format!("eigen-residual {worst:e} exceeds 1e-8 x {scale:e}")));
    }
    Ok(model)
}

/// `‖(1/η) D K‖_F`.
pub fn weighted_operator_norm(k: &GramMatrix, weights: &[f64], eta: f64) -> f64 {
    let n = k.n();
    let mut acc = 0.0;
    for i in 0..n {
        for j in 0..n {
            let v = weights[i] * k.values[(i, j)] / eta;
            acc += v * v;
        }
    }
    acc.sqrt()
}

/// Largest `‖(1/η) D K w − λ w‖₂` over the rows `w` of `H`.
pub fn eig_residual(k: &GramMatrix, model: &LatentModel) -> f64 {
    let eta = model.hyper.eta;
    let kh = &k.values * model.h.transpose();
    let mut worst: f64 = 0.0;
    for j in 0..model.latent_dim() {
        let mut acc = 0.0;
        for i in 0..model.n() {
            let r = model.weights[i] * kh[(i, j)] / eta - model.eigvals[j] * model.h[(j, i)];
            acc += r * r;
        }
        worst = worst.max(acc.sqrt());
    }
    worst
}

/// Residuals of the two stationarity conditions at `model`, with
/// `U = (1/η) Φ Hᵀ`.
///
/// `r1 = max_i ‖Λ D_ii⁻¹ h_i − Uᵀ φ(x_i)‖`; `r2` compares `U` against an
/// independent per-sample accumulation of `Σ φ(x_i) h_iᵀ / η`.
pub fn stationarity_residuals(features: &DMatrix<f64>, model: &LatentModel) -> Result<(f64, f64)> {
    let u = model.interconnection(features)?;
    let utphi = u.transpose() * features;
    let mut r1: f64 = 0.0;
    for i in 0..model.n() {
        let mut acc = 0.0;
        for j in 0..model.latent_dim() {
            let r = model.eigvals[j] * model.h[(j, i)] / model.weights[i] - utphi[(j, i)];
            acc += r * r;
        }
        r1 = r1.max(acc.sqrt());
    }
    let mut summed = DMatrix::zeros(u.nrows(), u.ncols());
    for i in 0..model.n() {
        summed.ger(1.0 / model.hyper.eta, &features.column(i), &model.h.column(i), 1.0);
    }
    let r2 = (&u - summed).norm();
    Ok((r1, r2))
}

/// Where kernel values for an out-of-sample point come from.
#[derive(Debug, Clone, Copy)]
pub enum FeatureSource<'a> {
    /// Implicit feature map through a kernel function.
    Kernel(&'a KernelSpec),
    /// Explicit feature map; the kernel is the inner product of encoded features.
    Map(&'a MapParams),
}

/// Latent projection of a kernel row `k_i = k(x_i, x*)`:
/// `h*_j = (1/(λ_j η)) Σ_i H_ji k_i`, with `λ_j` the eigenvalue of component `j`.
pub fn project_kernel_row(model: &LatentModel, k_row: &[f64]) -> Result<DVector<f64>> {
    if k_row.len() != model.n() {
        return Err(shape_err(format!("kernel row has {} entries, model has {}", k_row.len(), model.n())));
    }
    let kv = DVector::from_column_slice(k_row);
    let mut out = &model.h * kv;
    for j in 0..model.latent_dim() {
        out[j] /= model.eigvals[j] * model.hyper.eta;
    }
    Ok(out)
}

/// Out-of-sample latent projection `h* = Λ⁻¹ Uᵀ φ(x*) = (1/(λ η)) Σ_i h_i k(x_i, x*)`.
pub fn project_oos(
    x_star: &[f64],
    training_data: &DMatrix<f64>,
    model: &LatentModel,
    source: FeatureSource<'_>,
) -> Result<DVector<f64>> {
    if training_data.nrows() != model.n() {
        return Err(shape_err(format!(
            "training data has {} rows, model has {} latents",
            training_data.nrows(),
            model.n()
        )));
    }
    let row = match source {
        FeatureSource::Kernel(spec) => kernel_row(training_data, x_star, spec)?,
        FeatureSource::Map(params) => {
            let x = DMatrix::from_row_slice(1, x_star.len(), x_star);
            let phi_star = params.encode(&x)?;
            let phi = params.encode(training_data)?;
            (&phi * phi_star.transpose()).column(0).iter().copied().collect()
        }
    };
    project_kernel_row(model, &row)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::gram;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DMatrix<f64> {
        DMatrix::from_fn(r, c, |_, _| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn fenchel_equality_cases() {
        let h = [0.3, -1.2, 2.0];
        assert!(fenchel_gap(&h, &h, &[1.0; 3], 1.0).unwrap().abs() < 1e-15);
        let d = [0.5, 2.0, 4.0];
        let lambda = 0.7;
        let e: Vec<f64> = h.iter().zip(&d).map(|(h, d)| lambda * h / d).collect();
        assert!(fenchel_gap(&e, &h, &d, lambda).unwrap().abs() < 1e-14);
    }

    #[test]
    fn fenchel_gap_matches_block_quadratic_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let d = [2.0, 3.0];
        let q = fenchel_block(&d, 0.5);
        for _ in 0..100 {
            let e = [rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0)];
            let h = [rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0)];
            let z = DVector::from_vec(vec![e[0], e[1], h[0], h[1]]);
            let quad = 0.5 * (z.transpose() * &q * &z)[(0, 0)];
            let gap = fenchel_gap(&e, &h, &d, 0.5).unwrap();
            assert!(gap >= 0.0);
            assert!((gap - quad).abs() <= 1e-12 * quad.abs().max(1.0));
        }
    }

    #[test]
    fn fenchel_guards() {
        assert!(fenchel_gap(&[1.0], &[1.0, 2.0], &[1.0], 1.0).is_err());
        assert!(fenchel_gap(&[1.0], &[1.0], &[0.0], 1.0).is_err());
        assert!(fenchel_gap(&[1.0], &[1.0], &[1.0], -1.0).is_err());
    }

    #[test]
    fn dual_objective_zero_at_origin() {
        let phi = DMatrix::from_element(3, 4, 0.7);
        let u = DMatrix::zeros(3, 2);
        let h = DMatrix::zeros(2, 4);
        let j = dual_objective(&phi, &u, &h, &[1.0; 4], &RkmHyper::new(1.0, 1.0, 2)).unwrap();
        assert_eq!(j, 0.0);
    }

    #[test]
    fn dual_objective_matches_term_by_term_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (df, n, s) = (3, 6, 2);
        let phi = random_matrix(&mut rng, df, n);
        let u = random_matrix(&mut rng, df, s);
        let h = random_matrix(&mut rng, s, n);
        let w: Vec<f64> = (0..n).map(|_| rng.random_range(0.1..2.0)).collect();
        let hyper = RkmHyper::new(1.3, 0.8, s);
        let got = dual_objective(&phi, &u, &h, &w, &hyper).unwrap();
        let mut oracle = 0.0;
        for i in 0..n {
            let mut coupling = 0.0;
            for a in 0..df {
                for b in 0..s {
                    coupling += phi[(a, i)] * u[(a, b)] * h[(b, i)];
                }
            }
            let hh: f64 = (0..s).map(|b| h[(b, i)] * h[(b, i)]).sum();
            oracle += -coupling + hyper.lambda_reg / 2.0 / w[i] * hh;
        }
        let mut tr = 0.0;
        for a in 0..df {
            for b in 0..s {
                tr += u[(a, b)] * u[(a, b)];
            }
        }
        oracle += hyper.eta / 2.0 * tr;
        assert!((got - oracle).abs() <= 1e-12 * oracle.abs());
    }

    #[test]
    fn identity_kernel_has_unit_spectrum() {
        let k = GramMatrix::new(DMatrix::identity(5, 5)).unwrap();
        let m = solve_weighted_eig(&k, &[1.0; 5], &RkmHyper::new(1.0, 1.0, 3)).unwrap();
        for j in 0..3 {
            assert!((m.eigvals[j] - 1.0).abs() < 1e-12);
        }
        // rows orthonormal
        let g = &m.h * m.h.transpose();
        assert!((g - DMatrix::identity(3, 3)).norm() < 1e-10);
    }

    #[test]
    fn unit_weights_reduce_to_kernel_pca() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = random_matrix(&mut rng, 10, 4);
        let k = gram(&x, &KernelSpec::Rbf { bandwidth: 1.0 }).unwrap();
        let eta = 2.5;
        let m = solve_weighted_eig(&k, &[1.0; 10], &RkmHyper::new(eta, 1.0, 4)).unwrap();
        let mut plain: Vec<f64> = (&k.values / eta).symmetric_eigen().eigenvalues.iter().copied().collect();
        plain.sort_by(|a, b| b.total_cmp(a));
        for j in 0..4 {
            assert!((m.eigvals[j] - plain[j]).abs() <= 1e-10 * plain[j]);
        }
    }

    #[test]
    fn eigvals_sorted_and_signs_fixed() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = random_matrix(&mut rng, 12, 3);
        let k = gram(&x, &KernelSpec::Polynomial { degree: 2, offset: 1.0 }).unwrap();
        let w: Vec<f64> = (0..12).map(|i| if i % 5 == 0 { 1e-4 } else { 1.0 }).collect();
        let m = solve_weighted_eig(&k, &w, &RkmHyper::new(1.0, 1.0, 4)).unwrap();
        for j in 1..4 {
            assert!(m.eigvals[j - 1] >= m.eigvals[j]);
        }
        for j in 0..4 {
            let row = m.h.row(j);
            let pivot = row.iter().fold(0.0f64, |a, &b| if b.abs() > a.abs() { b } else { a });
            assert!(pivot > 0.0);
            assert!((row.norm() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn eigenvalue_normalization_scales_rows() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = random_matrix(&mut rng, 8, 3);
        let k = gram(&x, &KernelSpec::Linear).unwrap();
        let mut hyper = RkmHyper::new(1.0, 1.0, 2);
        hyper.normalize_by_eigenvalue = true;
        let m = solve_weighted_eig(&k, &[1.0; 8], &hyper).unwrap();
        for j in 0..2 {
            assert!((m.h.row(j).norm() - m.eigvals[j].sqrt()).abs() < 1e-10);
        }
    }

    #[test]
    fn short_spectrum_reports_achievable_rank() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let x = random_matrix(&mut rng, 10, 2);
        let k = gram(&x, &KernelSpec::Linear).unwrap();
        match solve_weighted_eig(&k, &[1.0; 10], &RkmHyper::new(1.0, 1.0, 4)) {
            Err(RkmError::ShortSpectrum { requested: 4, achievable: 2 }) => {}
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn stationarity_on_linear_kernel() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let x = random_matrix(&mut rng, 9, 4);
        let k = gram(&x, &KernelSpec::Linear).unwrap();
        let w: Vec<f64> = (0..9).map(|i| if i == 3 { 1e-4 } else { 1.0 }).collect();
        let m = solve_weighted_eig(&k, &w, &RkmHyper::new(1.0, 1.0, 3)).unwrap();
        let phi = x.transpose();
        let (r1, r2) = stationarity_residuals(&phi, &m).unwrap();
        assert!(r1 <= 1e-8, "r1 = {r1}");
        assert!(r2 <= 1e-12);
        assert!(m.dual_objective(&phi).unwrap().abs() <= 1e-8 * 9.0);

        let mut bad = m.clone();
        bad.h = random_matrix(&mut rng, 3, 9);
        assert!(stationarity_residuals(&phi, &bad).unwrap().0 > 1e-3);
    }

    #[test]
    fn stationarity_full_spectrum() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let n = 6;
        let x = random_matrix(&mut rng, n, 8);
        let k = gram(&x, &KernelSpec::Linear).unwrap();
        let m = solve_weighted_eig(&k, &vec![1.0; n], &RkmHyper::new(1.0, 1.0, n)).unwrap();
        let (r1, _) = stationarity_residuals(&x.transpose(), &m).unwrap();
        assert!(r1 <= 1e-8);
    }

    #[test]
    fn projection_of_training_point_recovers_latent() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let n = 7;
        let x = random_matrix(&mut rng, n, 2);
        let spec = KernelSpec::Rbf { bandwidth: 0.8 };
        let k = gram(&x, &spec).unwrap();
        let m = solve_weighted_eig(&k, &vec![1.0; n], &RkmHyper::new(1.5, 1.0, n)).unwrap();
        for idx in 0..n {
            let xm: Vec<f64> = x.row(idx).iter().copied().collect();
            let h = project_oos(&xm, &x, &m, FeatureSource::Kernel(&spec)).unwrap();
            for j in 0..n {
                assert!((h[j] - m.h[(j, idx)]).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn projection_of_far_point_is_zero() {
        let x = DMatrix::from_row_slice(3, 1, &[0.0, 0.5, 1.0]);
        let spec = KernelSpec::Rbf { bandwidth: 0.1 };
        let k = gram(&x, &spec).unwrap();
        let m = solve_weighted_eig(&k, &[1.0; 3], &RkmHyper::new(1.0, 1.0, 2)).unwrap();
        let h = project_oos(&[1e4], &x, &m, FeatureSource::Kernel(&spec)).unwrap();
        assert!(h.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn projection_matches_naive_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let x = random_matrix(&mut rng, 5, 3);
        let spec = KernelSpec::Linear;
        let k = gram(&x, &spec).unwrap();
        let m = solve_weighted_eig(&k, &[1.0; 5], &RkmHyper::new(0.7, 1.0, 2)).unwrap();
        let xs = [0.3, -0.2, 0.9];
        let h = project_oos(&xs, &x, &m, FeatureSource::Kernel(&spec)).unwrap();
        for j in 0..2 {
            let mut acc = 0.0;
            for i in 0..5 {
                let kv = x[(i, 0)] * xs[0] + x[(i, 1)] * xs[1] + x[(i, 2)] * xs[2];
                acc += m.h[(j, i)] * kv;
            }
            let oracle = acc / (m.eigvals[j] * 0.7);
            assert!((h[j] - oracle).abs() <= 1e-12 * oracle.abs().max(1e-300));
        }
    }
}
