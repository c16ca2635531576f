//! Joint training of the feature/pre-image maps and the latent space, with an
//! MCD reweighting step that replaces the weighting matrix `D` partway through.
//!
//! Each minibatch is encoded, its linear-kernel Gram matrix is solved as a
//! weighted eigenproblem under the batch's slice of `D`, and one Adam step is
//! taken on the combined loss with the batch latents held fixed. At
//! `reweight_epoch` the whole training set is encoded and solved, the latent
//! points are scored against a FAST-MCD fit, and `D` is replaced. After the last
//! epoch one full-set eigensolve produces the returned latent model.

use std::fmt::Write as _;
use std::time::Instant;

use nalgebra::DMatrix;
use rand::seq::{index::sample, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Result, RkmError};
use crate::feature_maps::{grad_combined_loss, BatchLatents, LossBreakdown, MapArch, MapParams};
use crate::kernels::linear_gram;
use crate::optim::Adam;
use crate::rkm::{solve_weighted_eig, LatentModel, RkmHyper};
use crate::robust_stats::{compute_weights_with, WeightVector, DEFAULT_ALPHA, DEFAULT_MCD_FRACTION, DEFAULT_RESTARTS};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub minibatch: usize,
    pub lr: f64,
    pub c_stab: f64,
    pub c_acc: f64,
    pub eta: f64,
    pub lambda_reg: f64,
    pub latent_dim: usize,
    pub alpha: f64,
    pub mcd_fraction: f64,
    /// Epoch at whose start `D` is recomputed; `None` means `epochs / 2`.
    pub reweight_epoch: Option<usize>,
    pub reweight_iterations: usize,
    pub seed: u64,
    /// When false the reweighting step is skipped and `D = I` throughout.
    pub robust: bool,
    pub hidden: Vec<usize>,
    pub feature_dim: usize,
    pub prelu_alpha: f64,
    pub mcd_restarts: usize,
    /// Train on a uniformly drawn subset of this size; 0 uses every row.
    pub n_sub: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 20,
            minibatch: 200,
            lr: 1e-4,
            c_stab: 1.0,
            c_acc: 1.0,
            eta: 1.0,
            lambda_reg: 1.0,
            latent_dim: 10,
            alpha: DEFAULT_ALPHA,
            mcd_fraction: DEFAULT_MCD_FRACTION,
            reweight_epoch: None,
            reweight_iterations: 1,
            seed: 0,
            robust: true,
            hidden: vec![128],
            feature_dim: 64,
            prelu_alpha: crate::feature_maps::DEFAULT_PRELU_ALPHA,
            mcd_restarts: DEFAULT_RESTARTS,
            n_sub: 0,
        }
    }
}

const CONFIG_KEYS: &[&str] = &[
    "epochs",
    "minibatch",
    "lr",
    "c_stab",
    "c_acc",
    "eta",
    "lambda_reg",
    "latent_dim",
    "alpha",
    "mcd_fraction",
    "reweight_epoch",
    "reweight_iterations",
    "seed",
    "robust",
    "hidden",
    "feature_dim",
    "prelu_alpha",
    "mcd_restarts",
    "n_sub",
];

fn parse_value<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value.parse().map_err(|_| RkmError::Config(format!("cannot parse value `{value}` for key `{key}`")))
}

impl TrainConfig {
    pub fn reweight_at(&self) -> usize {
        self.reweight_epoch.unwrap_or(self.epochs / 2)
    }

    pub fn hyper(&self) -> RkmHyper {
        RkmHyper::new(self.eta, self.lambda_reg, self.latent_dim)
    }

    /// Parses flat `key = value` text. Blank lines and `#` comments are
    /// skipped; keys must be field names, and absent keys keep their defaults.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = TrainConfig::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| RkmError::Config(format!("line {}: expected `key = value`", lineno + 1)))?;
            let (key, value) = (key.trim(), value.trim());
            match key {
                "epochs" => cfg.epochs = parse_value(key, value)?,
                "minibatch" => cfg.minibatch = parse_value(key, value)?,
                "lr" => cfg.lr = parse_value(key, value)?,
                "c_stab" => cfg.c_stab = parse_value(key, value)?,
                "c_acc" => cfg.c_acc = parse_value(key, value)?,
                "eta" => cfg.eta = parse_value(key, value)?,
                "lambda_reg" => cfg.lambda_reg = parse_value(key, value)?,
                "latent_dim" => cfg.latent_dim = parse_value(key, value)?,
                "alpha" => cfg.alpha = parse_value(key, value)?,
                "mcd_fraction" => cfg.mcd_fraction = parse_value(key, value)?,
                "reweight_epoch" => {
                    cfg.reweight_epoch = if value == "auto" { None } else { Some(parse_value(key, value)?) }
                }
                "reweight_iterations" => cfg.reweight_iterations = parse_value(key, value)?,
                "seed" => cfg.seed = parse_value(key, value)?,
                "robust" => cfg.robust = parse_value(key, value)?,
                "hidden" => {
                    cfg.hidden = if value.is_empty() {
                        Vec::new()
                    } else {
                        value.split(',').map(|v| parse_value(key, v.trim())).collect::<Result<_>>()?
                    }
                }
                "feature_dim" => cfg.feature_dim = parse_value(key, value)?,
                "prelu_alpha" => cfg.prelu_alpha = parse_value(key, value)?,
                "mcd_restarts" => cfg.mcd_restarts = parse_value(key, value)?,
                "n_sub" => cfg.n_sub = parse_value(key, value)?,
                other => return Err(RkmError::UnknownConfigKey(other.to_string())),
            }
        }
        Ok(cfg)
    }

    /// Inverse of [`TrainConfig::parse`]; floats use shortest round-trip formatting.
    pub fn to_config_string(&self) -> String {
        let mut s = String::new();
        for key in CONFIG_KEYS {
            let value = match *key {
                "epochs" => self.epochs.to_string(),
                "minibatch" => self.minibatch.to_string(),
                "lr" => format!("{:?}", self.lr),
                "c_stab" => format!("{:?}", self.c_stab),
                "c_acc" => format!("{:?}", self.c_acc),
                "eta" => format!("{:?}", self.eta),
                "lambda_reg" => format!("{:?}", self.lambda_reg),
                "latent_dim" => self.latent_dim.to_string(),
                "alpha" => format!("{:?}", self.alpha),
                "mcd_fraction" => format!("{:?}", self.mcd_fraction),
                "reweight_epoch" => self.reweight_epoch.map_or("auto".to_string(), |e| e.to_string()),
                "reweight_iterations" => self.reweight_iterations.to_string(),
                "seed" => self.seed.to_string(),
                "robust" => self.robust.to_string(),
                "hidden" => self.hidden.iter().map(|h| h.to_string()).collect::<Vec<_>>().join(","),
                "feature_dim" => self.feature_dim.to_string(),
                "prelu_alpha" => format!("{:?}", self.prelu_alpha),
                "mcd_restarts" => self.mcd_restarts.to_string(),
                "n_sub" => self.n_sub.to_string(),
                _ => unreachable!(),
            };
            let _ = writeln!(s, "{key} = {value}");
        }
        s
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        let bad = |msg: String| Err(RkmError::Config(msg));
        let n_train = if self.n_sub == 0 { n } else { self.n_sub };
        if self.n_sub > n {
            return bad(format!("n_sub = {} exceeds the {} available rows", self.n_sub, n));
        }
        if self.minibatch == 0 || self.minibatch > n_train {
            return bad(format!("minibatch must lie in [1, {n_train}], got {}", self.minibatch));
        }
        if self.reweight_at() > self.epochs {
            return bad(format!("reweight_epoch {} exceeds epochs {}", self.reweight_at(), self.epochs));
        }
        if !(self.lr > 0.0) || !(self.c_stab >= 0.0) || !(self.c_acc >= 0.0) {
            return bad("lr must be positive and c_stab, c_acc non-negative".into());
        }
        if self.latent_dim == 0 || self.latent_dim > self.feature_dim {
            return bad(format!(
                "latent_dim must lie in [1, feature_dim = {}], got {}",
                self.feature_dim, self.latent_dim
            ));
        }
        let smallest_batch = n_train / n_train.div_ceil(self.minibatch);
        if self.latent_dim > smallest_batch {
            return bad(format!("latent_dim {} exceeds the smallest minibatch ({smallest_batch})", self.latent_dim));
        }
        if self.reweight_iterations == 0 && self.robust {
            return bad("reweight_iterations must be >= 1".into());
        }
        if self.mcd_restarts == 0 {
            return bad("mcd_restarts must be >= 1".into());
        }
        self.hyper().validate(n_train)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: LossBreakdown,
    pub weights_fingerprint: u64,
    pub reweighted: bool,
    pub n_downweighted: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub epochs: Vec<EpochRecord>,
    pub final_eigvals: Vec<f64>,
    /// `J_t^D` of the final full-set model.
    pub final_dual_objective: f64,
    pub final_weights: WeightVector,
    pub subset: Vec<usize>,
    pub seed: u64,
    pub wall_clock_secs: f64,
}

impl TrainReport {
    /// One JSON object per epoch.
    pub fn to_json_lines(&self) -> String {
        let mut out = String::new();
        for e in &self.epochs {
            let v = serde_json::json!({
                "epoch": e.epoch,
                "j_t": e.loss.j_t,
                "stab": e.loss.stab,
                "recon": e.loss.recon,
                "total": e.loss.total,
                "reweighted": e.reweighted,
                "n_downweighted": e.n_downweighted,
                "weights_fingerprint": format!("{:016x}", e.weights_fingerprint),
            });
            out.push_str(&v.to_string());
            out.push('\n');
        }
        out
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,j_t,stab,recon,total,reweighted,n_downweighted\n");
        for e in &self.epochs {
            let _ = writeln!(
                out,
                "{},{:?},{:?},{:?},{:?},{},{}",
                e.epoch, e.loss.j_t, e.loss.stab, e.loss.recon, e.loss.total, e.reweighted, e.n_downweighted
            );
        }
        out
    }
}

/// Everything needed to continue training bit-exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub params: MapParams,
    pub adam: Adam,
    pub weights: WeightVector,
    pub rng: ChaCha8Rng,
    pub epochs_done: usize,
    /// Total loss of the first trained minibatch; `NaN` before any step.
    pub initial_total: f64,
    /// Training rows selected from the input (all rows when `n_sub = 0`).
    pub subset: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: MapParams,
    pub model: LatentModel,
    pub weights: WeightVector,
    pub report: TrainReport,
    /// `U = (1/η) Φ Hᵀ` of the final model on the training set.
    pub interconnection: DMatrix<f64>,
    pub state: TrainState,
    pub config: TrainConfig,
}

fn mix_seed(seed: u64, epoch: usize, iteration: usize) -> u64 {
    // splitmix64 finalizer over the combined inputs
    let mut z = seed ^ ((epoch as u64) << 32) ^ (iteration as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn select_rows(data: &DMatrix<f64>, rows: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), data.ncols(), |r, c| data[(rows[r], c)])
}

/// Splits `n` indices into `ceil(n / m)` contiguous chunks of near-equal size.
fn batch_bounds(n: usize, m: usize) -> Vec<(usize, usize)> {
    let nb = n.div_ceil(m);
    (0..nb).map(|b| (b * n / nb, (b + 1) * n / nb)).collect()
}

fn validate_data(data: &DMatrix<f64>) -> Result<()> {
    if data.nrows() == 0 || data.ncols() == 0 {
        return Err(RkmError::DataValidation("training data is empty".into()));
    }
    if data.iter().any(|v| !v.is_finite()) {
        return Err(RkmError::DataValidation("training data has non-finite entries".into()));
    }
    Ok(())
}

/// Full-set eigensolve of the encoded training data under weights `w`.
pub fn full_latent_model(
    data: &DMatrix<f64>,
    params: &MapParams,
    weights: &[f64],
    hyper: &RkmHyper,
) -> Result<(LatentModel, DMatrix<f64>)> {
    let phi = params.encode(data)?;
    let k = linear_gram(&phi)?;
    let model = solve_weighted_eig(&k, weights, hyper)?;
    Ok((model, phi))
}

fn reweight(
    data: &DMatrix<f64>,
    state: &TrainState,
    cfg: &TrainConfig,
    epoch: usize,
    iteration: usize,
) -> Result<WeightVector> {
    let (model, _) = full_latent_model(data, &state.params, &state.weights.weights, &cfg.hyper())?;
    compute_weights_with(
        &model.points(),
        cfg.alpha,
        cfg.mcd_fraction,
        cfg.mcd_restarts,
        mix_seed(cfg.seed, epoch, iteration),
    )
    .map_err(|e| match e {
        RkmError::DegenerateScatter(msg) => {
            RkmError::DegenerateScatter(format!("{msg} (lowering mcd_fraction may help)"))
        }
        other => other,
    })
}

fn run_epochs(
    data: &DMatrix<f64>,
    cfg: &TrainConfig,
    state: &mut TrainState,
    report: &mut Vec<EpochRecord>,
) -> Result<()> {
    let n = data.nrows();
    let hyper = cfg.hyper();
    let reweight_at = cfg.reweight_at();
    while state.epochs_done < cfg.epochs {
        let epoch = state.epochs_done;
        let mut reweighted = false;
        if cfg.robust && epoch == reweight_at {
            for it in 0..cfg.reweight_iterations {
                state.weights = reweight(data, state, cfg, epoch, it)?;
            }
            reweighted = true;
        }

        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut state.rng);
        let mut acc = LossBreakdown { c_stab: cfg.c_stab, c_acc: cfg.c_acc, ..Default::default() };
        let bounds = batch_bounds(n, cfg.minibatch);
        for &(lo, hi) in &bounds {
            let rows = &order[lo..hi];
            let batch = select_rows(data, rows);
            let w: Vec<f64> = rows.iter().map(|&i| state.weights.weights[i]).collect();
            let phi = state.params.encode(&batch)?;
            let k = linear_gram(&phi)?;
            let model = solve_weighted_eig(&k, &w, &hyper)?;
            let latents = BatchLatents { h: model.h };
            let (loss, grad) = grad_combined_loss(&batch, &state.params, &w, &latents, &hyper, cfg.c_stab, cfg.c_acc)?;
            if state.initial_total.is_nan() {
                state.initial_total = loss.total;
            }
            let mut flat = state.params.flat();
            state.adam.step(&mut flat, &grad);
            state.params.set_flat(&flat);
            acc.j_t += loss.j_t;
            acc.stab += loss.stab;
            acc.recon += loss.recon;
            acc.total += loss.total;
        }
        let nb = bounds.len() as f64;
        acc.j_t /= nb;
        acc.stab /= nb;
        acc.recon /= nb;
        acc.total /= nb;

        state.epochs_done += 1;
        report.push(EpochRecord {
            epoch,
            loss: acc,
            weights_fingerprint: state.weights.fingerprint(),
            reweighted,
            n_downweighted: state.weights.downweighted().len(),
        });
        log::debug!("epoch {epoch}: {acc:?}");
        if !acc.total.is_finite() || acc.total.abs() > 1e6 * state.initial_total.abs().max(1.0) {
            return Err(RkmError::DivergenceAbort { epoch, loss: acc.total });
        }
    }
    Ok(())
}

fn finish(
    data: &DMatrix<f64>,
    cfg: &TrainConfig,
    state: TrainState,
    epochs: Vec<EpochRecord>,
    started: Instant,
) -> Result<TrainOutcome> {
    let hyper = cfg.hyper();
    let (model, phi) = full_latent_model(data, &state.params, &state.weights.weights, &hyper)?;
    let features = phi.transpose();
    let interconnection = model.interconnection(&features)?;
    let final_dual_objective = model.dual_objective(&features)?;
    let report = TrainReport {
        epochs,
        final_eigvals: model.eigvals.iter().copied().collect(),
        final_dual_objective,
        final_weights: state.weights.clone(),
        subset: state.subset.clone(),
        seed: cfg.seed,
        wall_clock_secs: started.elapsed().as_secs_f64(),
    };
    Ok(TrainOutcome {
        params: state.params.clone(),
        model,
        weights: state.weights.clone(),
        report,
        interconnection,
        state,
        config: cfg.clone(),
    })
}

/// Rows of `data` that a run with this state trains on.
pub fn training_rows(data: &DMatrix<f64>, state: &TrainState) -> DMatrix<f64> {
    if state.subset.len() == data.nrows() && state.subset.iter().enumerate().all(|(i, &r)| i == r) {
        data.clone()
    } else {
        select_rows(data, &state.subset)
    }
}

/// Trains from scratch. `data` rows are samples scaled to `[0, 1]`.
pub fn train(data: &DMatrix<f64>, cfg: &TrainConfig) -> Result<TrainOutcome> {
    let started = Instant::now();
    validate_data(data)?;
    cfg.validate(data.nrows())?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let subset: Vec<usize> = if cfg.n_sub == 0 || cfg.n_sub == data.nrows() {
        (0..data.nrows()).collect()
    } else {
        let mut idx = sample(&mut rng, data.nrows(), cfg.n_sub).into_vec();
        idx.sort_unstable();
        idx
    };
    let arch = MapArch::symmetric(data.ncols(), &cfg.hidden, cfg.feature_dim);
    let params = MapParams::init(arch, cfg.prelu_alpha, &mut rng)?;
    let mut state = TrainState {
        adam: Adam::new(params.n_params(), cfg.lr),
        params,
        weights: WeightVector::uniform(subset.len()),
        rng,
        epochs_done: 0,
        initial_total: f64::NAN,
        subset,
    };
    let rows = training_rows(data, &state);
    let mut epochs = Vec::with_capacity(cfg.epochs);
    run_epochs(&rows, cfg, &mut state, &mut epochs)?;
    finish(&rows, cfg, state, epochs, started)
}

/// Continues a run for `extra_epochs` more epochs from a saved state. The
/// reweighting schedule is interpreted in absolute epoch indices.
pub fn resume(data: &DMatrix<f64>, cfg: &TrainConfig, state: TrainState, extra_epochs: usize) -> Result<TrainOutcome> {
    let started = Instant::now();
    validate_data(data)?;
    if state.subset.iter().any(|&r| r >= data.nrows()) {
        return Err(RkmError::ShapeMismatch(format!(
            "checkpoint references row {} but data has {} rows",
            state.subset.iter().max().unwrap(),
            data.nrows()
        )));
    }
    if data.ncols() != state.params.arch.input_dim() {
        return Err(RkmError::ShapeMismatch(format!(
            "checkpoint expects {} columns, data has {}",
            state.params.arch.input_dim(),
            data.ncols()
        )));
    }
    let mut cfg = cfg.clone();
    cfg.reweight_epoch = Some(cfg.reweight_at());
    cfg.epochs = state.epochs_done + extra_epochs;
    cfg.validate(data.nrows())?;
    let mut state = state;
    state.adam.lr = cfg.lr;
    let rows = training_rows(data, &state);
    let mut epochs = Vec::new();
    run_epochs(&rows, &cfg, &mut state, &mut epochs)?;
    finish(&rows, &cfg, state, epochs, started)
}
