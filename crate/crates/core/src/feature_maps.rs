//! Explicit feature map `φ_θ` and pre-image map `ψ_ζ` as small dense networks,
//! and the combined training loss
//!
//! ```text
//! J_c = J_t + (c_stab/2) J_t² + (c_acc/N) Σ_i D_ii · MSE(x_i, ψ_ζ(U h_i))
//! ```
//!
//! with hand-written reverse-mode gradients. The batch latents `H` are inputs
//! and are held fixed while differentiating; `U = (1/η) Φ Hᵀ` and the latent
//! penalties follow the current features. Each penalty is the weighted
//! Rayleigh quotient `λ_j = h_jᵀ K h_j / (η h_jᵀ D⁻¹ h_j)`, which equals the
//! eigenvalue when `H` solves the batch eigenproblem. With that choice `J_t`
//! vanishes for every `Φ`, matching the fact that it is zero along the whole
//! family of eigensolutions, so only the reconstruction term moves the maps.
//! Holding `Λ` fixed instead leaves a gradient `−(1/η) HᵀH Φ` that inflates the
//! feature scale without bound.

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::error::{shape_err, Result, RkmError};
use crate::rkm::RkmHyper;

pub const DEFAULT_PRELU_ALPHA: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutputActivation {
    Sigmoid,
    Identity,
}

impl OutputActivation {
    pub fn code(self) -> u8 {
        match self {
            OutputActivation::Sigmoid => 0,
            OutputActivation::Identity => 1,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(OutputActivation::Sigmoid),
            1 => Some(OutputActivation::Identity),
            _ => None,
        }
    }
}

/// Layer widths. `encoder = [d, hidden…, d_f]`, `decoder = [d_f, hidden…, d]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MapArch {
    pub encoder: Vec<usize>,
    pub decoder: Vec<usize>,
    pub output: OutputActivation,
}

impl MapArch {
    /// Symmetric encoder/decoder pair: `d → hidden… → d_f → reversed hidden… → d`.
    pub fn symmetric(input_dim: usize, hidden: &[usize], feature_dim: usize) -> Self {
        let mut encoder = vec![input_dim];
        encoder.extend_from_slice(hidden);
        encoder.push(feature_dim);
        let decoder = encoder.iter().rev().copied().collect();
        Self { encoder, decoder, output: OutputActivation::Sigmoid }
    }

    pub fn input_dim(&self) -> usize {
        self.encoder[0]
    }

    pub fn feature_dim(&self) -> usize {
        *self.encoder.last().unwrap()
    }

    pub fn validate(&self) -> Result<()> {
        if self.encoder.len() < 2 || self.decoder.len() < 2 {
            return Err(RkmError::InvalidArgument("encoder and decoder need at least one layer".into()));
        }
        if self.encoder.iter().chain(&self.decoder).any(|&w| w == 0) {
            return Err(RkmError::InvalidArgument("layer widths must be positive".into()));
        }
        if self.decoder[0] != self.feature_dim() {
            return Err(RkmError::InvalidArgument(format!(
                "decoder input {} must equal feature dimension {}",
                self.decoder[0],
                self.feature_dim()
            )));
        }
        if *self.decoder.last().unwrap() != self.input_dim() {
            return Err(RkmError::InvalidArgument(format!(
                "decoder output {} must equal input dimension {}",
                self.decoder.last().unwrap(),
                self.input_dim()
            )));
        }
        Ok(())
    }
}

/// Number of weights and biases of a dense stack with the given widths.
pub fn param_count(widths: &[usize]) -> usize {
    widths.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
}

#[derive(Debug, Clone, PartialEq)]
pub struct MapParams {
    pub arch: MapArch,
    /// Encoder weights and biases, layer by layer: row-major `out×in` weights then `out` biases.
    pub theta: Vec<f64>,
    /// Decoder parameters, same layout.
    pub zeta: Vec<f64>,
    pub prelu_alpha: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Act {
    Prelu(f64),
    Linear,
    Sigmoid,
}

impl Act {
    fn apply(self, z: f64) -> f64 {
        match self {
            Act::Prelu(a) => {
                if z > 0.0 {
                    z
                } else {
                    a * z
                }
            }
            Act::Linear => z,
            Act::Sigmoid => 1.0 / (1.0 + (-z).exp()),
        }
    }

    /// Derivative in terms of the pre-activation `z` and output `y`.
    fn deriv(self, z: f64, y: f64) -> f64 {
        match self {
            Act::Prelu(a) => {
                if z > 0.0 {
                    1.0
                } else {
                    a
                }
            }
            Act::Linear => 1.0,
            Act::Sigmoid => y * (1.0 - y),
        }
    }
}

struct Stack<'a> {
    widths: &'a [usize],
    params: &'a [f64],
    hidden: Act,
    last: Act,
}

struct StackCache {
    /// Layer inputs; `inputs[0]` is the batch itself.
    inputs: Vec<DMatrix<f64>>,
    pre: Vec<DMatrix<f64>>,
    output: DMatrix<f64>,
}

impl<'a> Stack<'a> {
    fn layer(&self, l: usize) -> (DMatrix<f64>, &'a [f64]) {
        let offset: usize = param_count(&self.widths[..=l]);
        let (inp, out) = (self.widths[l], self.widths[l + 1]);
        let w = DMatrix::from_row_slice(out, inp, &self.params[offset..offset + out * inp]);
        let b = &self.params[offset + out * inp..offset + out * inp + out];
        (w, b)
    }

    fn act(&self, l: usize) -> Act {
        if l + 2 == self.widths.len() {
            self.last
        } else {
            self.hidden
        }
    }

    fn forward(&self, x: &DMatrix<f64>) -> StackCache {
        let layers = self.widths.len() - 1;
        let mut inputs = Vec::with_capacity(layers);
        let mut pre = Vec::with_capacity(layers);
        let mut a = x.clone();
        for l in 0..layers {
            let (w, b) = self.layer(l);
            let mut z = &a * w.transpose();
            for (j, mut col) in z.column_iter_mut().enumerate() {
                col.add_scalar_mut(b[j]);
            }
            let act = self.act(l);
            let y = z.map(|v| act.apply(v));
            inputs.push(a);
            pre.push(z);
            a = y;
        }
        StackCache { inputs, pre, output: a }
    }

    /// Backpropagates `d_out` (gradient w.r.t. the stack output); returns the
    /// parameter gradient and the gradient w.r.t. the stack input.
    fn backward(&self, cache: &StackCache, d_out: &DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
        let layers = self.widths.len() - 1;
        let mut grad = vec![0.0; self.params.len()];
        let mut delta = d_out.clone();
        for l in (0..layers).rev() {
            let act = self.act(l);
            let y = if l + 1 == layers { &cache.output } else { &cache.inputs[l + 1] };
            let z = &cache.pre[l];
            for ((d, &zv), &yv) in delta.iter_mut().zip(z.iter()).zip(y.iter()) {
                *d *= act.deriv(zv, yv);
            }
            let (w, _) = self.layer(l);
            let (inp, out) = (self.widths[l], self.widths[l + 1]);
            let offset = param_count(&self.widths[..=l]);
            let gw = delta.transpose() * &cache.inputs[l];
            for o in 0..out {
                for i in 0..inp {
                    grad[offset + o * inp + i] = gw[(o, i)];
                }
                grad[offset + out * inp + o] = delta.column(o).sum();
            }
            delta = &delta * &w;
        }
        (grad, delta)
    }
}

impl MapParams {
    /// Glorot-uniform weights, zero biases.
    pub fn init<R: Rng + ?Sized>(arch: MapArch, prelu_alpha: f64, rng: &mut R) -> Result<Self> {
        arch.validate()?;
        let theta = glorot(&arch.encoder, rng);
        let zeta = glorot(&arch.decoder, rng);
        Ok(Self { arch, theta, zeta, prelu_alpha })
    }

    pub fn zeros(arch: MapArch, prelu_alpha: f64) -> Result<Self> {
        arch.validate()?;
        let theta = vec![0.0; param_count(&arch.encoder)];
        let zeta = vec![0.0; param_count(&arch.decoder)];
        Ok(Self { arch, theta, zeta, prelu_alpha })
    }

    pub fn validate(&self) -> Result<()> {
        self.arch.validate()?;
        if self.theta.len() != param_count(&self.arch.encoder) || self.zeta.len() != param_count(&self.arch.decoder) {
            return Err(shape_err(format!(
                "parameter vectors ({}, {}) do not match architecture ({}, {})",
                self.theta.len(),
                self.zeta.len(),
                param_count(&self.arch.encoder),
                param_count(&self.arch.decoder)
            )));
        }
        Ok(())
    }

    pub fn n_params(&self) -> usize {
        self.theta.len() + self.zeta.len()
    }

    /// `theta` followed by `zeta`.
    pub fn flat(&self) -> Vec<f64> {
        let mut v = self.theta.clone();
        v.extend_from_slice(&self.zeta);
        v
    }

    pub fn set_flat(&mut self, flat: &[f64]) {
        let nt = self.theta.len();
        self.theta.copy_from_slice(&flat[..nt]);
        self.zeta.copy_from_slice(&flat[nt..]);
    }

    fn encoder(&self) -> Stack<'_> {
        Stack {
            widths: &self.arch.encoder,
            params: &self.theta,
            hidden: Act::Prelu(self.prelu_alpha),
            last: Act::Linear,
        }
    }

    fn decoder(&self) -> Stack<'_> {
        let last = match self.arch.output {
            OutputActivation::Sigmoid => Act::Sigmoid,
            OutputActivation::Identity => Act::Linear,
        };
        Stack { widths: &self.arch.decoder, params: &self.zeta, hidden: Act::Prelu(self.prelu_alpha), last }
    }

    fn check_finite(&self) -> Result<()> {
        if self.theta.iter().chain(&self.zeta).any(|v| !v.is_finite()) {
            return Err(RkmError::NumericalFault("map parameters contain non-finite values".into()));
        }
        Ok(())
    }

    /// Feature map `φ_θ` on a batch (rows are samples): m×d → m×d_f.
    pub fn encode(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.check_finite()?;
        if x.ncols() != self.arch.input_dim() {
            return Err(shape_err(format!("encoder expects {} inputs, got {}", self.arch.input_dim(), x.ncols())));
        }
        Ok(self.encoder().forward(x).output)
    }

    /// Pre-image map `ψ_ζ` on a batch of feature vectors: m×d_f → m×d.
    pub fn decode(&self, f: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.check_finite()?;
        if f.ncols() != self.arch.feature_dim() {
            return Err(shape_err(format!("decoder expects {} inputs, got {}", self.arch.feature_dim(), f.ncols())));
        }
        Ok(self.decoder().forward(f).output)
    }
}

fn glorot<R: Rng + ?Sized>(widths: &[usize], rng: &mut R) -> Vec<f64> {
    let mut out = Vec::with_capacity(param_count(widths));
    for w in widths.windows(2) {
        let (inp, o) = (w[0], w[1]);
        let limit = (6.0 / (inp + o) as f64).sqrt();
        for _ in 0..inp * o {
            out.push(rng.random_range(-limit..limit));
        }
        out.extend(std::iter::repeat_n(0.0, o));
    }
    out
}

/// Generated feature vector `[(1/η) Σ φ(x_i) h_iᵀ] h*` for features `Φ` given as
/// rows (N×d_f) and latents `H` (s×N).
pub fn generated_feature(
    features: &DMatrix<f64>,
    h: &DMatrix<f64>,
    h_star: &DVector<f64>,
    eta: f64,
) -> Result<DVector<f64>> {
    if features.nrows() != h.ncols() || h.nrows() != h_star.len() {
        return Err(shape_err(format!(
            "features {}x{}, H {}x{}, h* of length {}",
            features.nrows(),
            features.ncols(),
            h.nrows(),
            h.ncols(),
            h_star.len()
        )));
    }
    let u = features.transpose() * h.transpose() / eta;
    Ok(u * h_star)
}

/// Latents of a batch, held constant during a gradient step.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchLatents {
    /// s×m
    pub h: DMatrix<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossBreakdown {
    pub j_t: f64,
    pub stab: f64,
    pub recon: f64,
    pub total: f64,
    pub c_stab: f64,
    pub c_acc: f64,
}

impl LossBreakdown {
    fn assemble(j_t: f64, recon_sum: f64, c_stab: f64, c_acc: f64) -> Self {
        let stab = 0.5 * c_stab * j_t * j_t;
        let recon = recon_sum;
        Self { j_t, stab, recon, total: j_t + stab + recon, c_stab, c_acc }
    }
}

/// Forward pass state shared by the loss and its gradient.
struct LossPass {
    enc: StackCache,
    dec: StackCache,
    per_sample: Vec<f64>,
    loss: LossBreakdown,
}

fn check_loss_inputs(batch: &DMatrix<f64>, params: &MapParams, weights: &[f64], latents: &BatchLatents) -> Result<()> {
    params.validate()?;
    let m = batch.nrows();
    if m == 0 {
        return Err(RkmError::InvalidArgument("empty batch".into()));
    }
    if weights.len() != m || latents.h.ncols() != m {
        return Err(shape_err(format!(
            "batch of {m}, {} weights, latents {}x{}",
            weights.len(),
            latents.h.nrows(),
            latents.h.ncols()
        )));
    }
    if weights.iter().any(|&w| !(w > 0.0)) {
        return Err(RkmError::InvalidArgument("weights must be positive".into()));
    }
    Ok(())
}

fn loss_pass(
    batch: &DMatrix<f64>,
    params: &MapParams,
    weights: &[f64],
    latents: &BatchLatents,
    hyper: &RkmHyper,
    c_stab: f64,
    c_acc: f64,
) -> Result<LossPass> {
    check_loss_inputs(batch, params, weights, latents)?;
    params.check_finite()?;
    if batch.ncols() != params.arch.input_dim() {
        return Err(shape_err(format!(
            "batch has {} columns, encoder expects {}",
            batch.ncols(),
            params.arch.input_dim()
        )));
    }
    let (m, d) = batch.shape();
    let h = &latents.h;
    let enc = params.encoder().forward(batch);
    let phi = &enc.output; // m×d_f
    let u = phi.transpose() * h.transpose() / hyper.eta;

    // J_t with U from the stationarity condition and Rayleigh-quotient penalties
    let coupling = (phi * &u).component_mul(&h.transpose()).sum();
    let mut reg = 0.0;
    for j in 0..h.nrows() {
        let den: f64 = (0..m).map(|i| h[(j, i)] * h[(j, i)] / weights[i]).sum();
        if den > 0.0 {
            let lambda = hyper.eta * u.column(j).norm_squared() / den;
            reg += 0.5 * lambda * den;
        }
    }
    let j_t = -coupling + reg + 0.5 * hyper.eta * u.norm_squared();

    let generated = h.transpose() * u.transpose(); // m×d_f, row i = U h_i
    let dec = params.decoder().forward(&generated);
    let per_sample: Vec<f64> = (0..m)
        .map(|i| {
            let mut acc = 0.0;
            for c in 0..d {
                let r = batch[(i, c)] - dec.output[(i, c)];
                acc += r * r;
            }
            acc / d as f64
        })
        .collect();
    let weighted: f64 = per_sample.iter().zip(weights).map(|(l, w)| w * l).sum();
    let recon = c_acc / m as f64 * weighted;
    let loss = LossBreakdown::assemble(j_t, recon, c_stab, c_acc);
    if !loss.total.is_finite() {
        return Err(RkmError::NumericalFault(format!("non-finite loss {:?}", loss)));
    }
    Ok(LossPass { enc, dec, per_sample, loss })
}

/// Combined loss on a batch (rows are samples) for fixed batch latents.
pub fn combined_loss(
    batch: &DMatrix<f64>,
    params: &MapParams,
    weights: &[f64],
    latents: &BatchLatents,
    hyper: &RkmHyper,
    c_stab: f64,
    c_acc: f64,
) -> Result<LossBreakdown> {
    loss_pass(batch, params, weights, latents, hyper, c_stab, c_acc).map(|p| p.loss)
}

/// Per-sample reconstruction errors `L_i` (MSE over coordinates).
pub fn reconstruction_errors(
    batch: &DMatrix<f64>,
    params: &MapParams,
    weights: &[f64],
    latents: &BatchLatents,
    hyper: &RkmHyper,
) -> Result<Vec<f64>> {
    loss_pass(batch, params, weights, latents, hyper, 0.0, 1.0).map(|p| p.per_sample)
}

/// Combined loss and its gradient w.r.t. `theta ++ zeta`.
pub fn grad_combined_loss(
    batch: &DMatrix<f64>,
    params: &MapParams,
    weights: &[f64],
    latents: &BatchLatents,
    hyper: &RkmHyper,
    c_stab: f64,
    c_acc: f64,
) -> Result<(LossBreakdown, Vec<f64>)> {
    let pass = loss_pass(batch, params, weights, latents, hyper, c_stab, c_acc)?;
    let (m, d) = batch.shape();
    let h = &latents.h;

    // reconstruction → decoder
    let mut d_xhat = DMatrix::zeros(m, d);
    for i in 0..m {
        let scale = c_acc / m as f64 * weights[i] * 2.0 / d as f64;
        for c in 0..d {
            d_xhat[(i, c)] = scale * (pass.dec.output[(i, c)] - batch[(i, c)]);
        }
    }
    let (g_zeta, d_generated) = params.decoder().backward(&pass.dec, &d_xhat);

    // generated = Hᵀ Uᵀ  ⇒  dU = d_generatedᵀ Hᵀ
    let d_u_recon = d_generated.transpose() * h.transpose();
    // J_t is identically zero in Φ, so J_t and the stabilizer contribute nothing
    let d_phi = h.transpose() * d_u_recon.transpose() / hyper.eta;
    let (g_theta, _) = params.encoder().backward(&pass.enc, &d_phi);

    let mut grad = g_theta;
    grad.extend(g_zeta);
    if grad.iter().any(|g| !g.is_finite()) {
        return Err(RkmError::NumericalFault("non-finite gradient".into()));
    }
    Ok((pass.loss, grad))
}
