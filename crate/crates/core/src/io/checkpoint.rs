//! `RRKMCKP1` checkpoint container.
//!
//! ```text
//! magic "RRKMCKP1" | u32 version | u32 section count
//! per section: [u8; 4] tag | u64 length | payload | u32 CRC32(payload)
//! ```
//!
//! All integers and floats are little-endian. Sections appear in a fixed order.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Result, RkmError};
use crate::feature_maps::{MapArch, MapParams, OutputActivation};
use crate::generate::TrainedModel;
use crate::optim::Adam;
use crate::rkm::{LatentModel, RkmHyper};
use crate::robust_stats::WeightVector;
use crate::trainer::{TrainConfig, TrainOutcome, TrainState};

pub const CKPT_MAGIC: &[u8; 8] = b"RRKMCKP1";
pub const CKPT_VERSION: u32 = 1;

const SECTIONS: [&[u8; 4]; 7] = [b"PARM", b"LATN", b"WGHT", b"CONF", b"MOMT", b"RNGS", b"META"];

/// Everything a run needs to be inspected, used for inference, or resumed.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: MapParams,
    pub model: LatentModel,
    /// `U`, d_f×s.
    pub interconnection: DMatrix<f64>,
    pub weights: WeightVector,
    pub config: TrainConfig,
    pub adam: Adam,
    pub rng: ChaCha8Rng,
    pub epochs_done: usize,
    pub initial_total: f64,
    pub subset: Vec<usize>,
}

impl Checkpoint {
    pub fn from_outcome(o: &TrainOutcome) -> Self {
        Self {
            params: o.params.clone(),
            model: o.model.clone(),
            interconnection: o.interconnection.clone(),
            weights: o.weights.clone(),
            config: o.config.clone(),
            adam: o.state.adam.clone(),
            rng: o.state.rng.clone(),
            epochs_done: o.state.epochs_done,
            initial_total: o.state.initial_total,
            subset: o.state.subset.clone(),
        }
    }

    pub fn trained_model(&self) -> TrainedModel {
        TrainedModel {
            params: self.params.clone(),
            model: self.model.clone(),
            interconnection: self.interconnection.clone(),
        }
    }

    pub fn train_state(&self) -> TrainState {
        TrainState {
            params: self.params.clone(),
            adam: self.adam.clone(),
            weights: self.weights.clone(),
            rng: self.rng.clone(),
            epochs_done: self.epochs_done,
            initial_total: self.initial_total,
            subset: self.subset.clone(),
        }
    }
}

#[derive(Default)]
struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn usize(&mut self, v: usize) {
        self.u64(v as u64);
    }
    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64s(&mut self, v: &[f64]) {
        self.usize(v.len());
        v.iter().for_each(|&x| self.f64(x));
    }
    fn usizes(&mut self, v: &[usize]) {
        self.usize(v.len());
        v.iter().for_each(|&x| self.usize(x));
    }
    fn matrix(&mut self, m: &DMatrix<f64>) {
        self.usize(m.nrows());
        self.usize(m.ncols());
        m.iter().for_each(|&x| self.f64(x));
    }
    fn bytes(&mut self, b: &[u8]) {
        self.usize(b.len());
        self.0.extend_from_slice(b);
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    section: &'static str,
}

impl<'a> Reader<'a> {
    fn err(&self, what: &str) -> RkmError {
        RkmError::Format(format!("checkpoint section `{}`: {what}", self.section))
    }
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() < n {
            return Err(self.err("unexpected end of data"));
        }
        let (head, tail) = self.buf.split_at(n);
        self.buf = tail;
        Ok(head)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn usize(&mut self) -> Result<usize> {
        let v = self.u64()?;
        usize::try_from(v).map_err(|_| self.err("length does not fit in memory"))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    /// Element count that must fit in the remaining bytes at `elem` bytes each.
    fn count(&mut self, elem: usize) -> Result<usize> {
        let n = self.usize()?;
        if n.checked_mul(elem).is_none_or(|b| b > self.buf.len()) {
            return Err(self.err("length prefix exceeds section size"));
        }
        Ok(n)
    }
    fn f64s(&mut self) -> Result<Vec<f64>> {
        let n = self.count(8)?;
        (0..n).map(|_| self.f64()).collect()
    }
    fn usizes(&mut self) -> Result<Vec<usize>> {
        let n = self.count(8)?;
        (0..n).map(|_| self.usize()).collect()
    }
    fn matrix(&mut self) -> Result<DMatrix<f64>> {
        let r = self.usize()?;
        let c = self.usize()?;
        let n = r.checked_mul(c).filter(|n| n.checked_mul(8).is_some_and(|b| b <= self.buf.len()));
        let n = n.ok_or_else(|| self.err("matrix size exceeds section size"))?;
        let data: Vec<f64> = (0..n).map(|_| self.f64()).collect::<Result<_>>()?;
        Ok(DMatrix::from_vec(r, c, data))
    }
    fn bytes(&mut self) -> Result<&'a [u8]> {
        let n = self.count(1)?;
        self.take(n)
    }
    fn finish(&self) -> Result<()> {
        if self.buf.is_empty() {
            Ok(())
        } else {
            Err(self.err("trailing bytes"))
        }
    }
}

fn checked_param_count(widths: &[usize]) -> Option<usize> {
    widths.windows(2).try_fold(0usize, |acc, w| w[0].checked_mul(w[1])?.checked_add(w[1])?.checked_add(acc))
}

fn encode_params(p: &MapParams) -> Vec<u8> {
    let mut w = Writer::default();
    w.usizes(&p.arch.encoder);
    w.usizes(&p.arch.decoder);
    w.u8(p.arch.output.code());
    w.f64(p.prelu_alpha);
    w.f64s(&p.theta);
    w.f64s(&p.zeta);
    w.0
}

fn decode_params(r: &mut Reader) -> Result<MapParams> {
    let encoder = r.usizes()?;
    let decoder = r.usizes()?;
    let output = OutputActivation::from_code(r.u8()?).ok_or_else(|| r.err("unknown output activation"))?;
    let prelu_alpha = r.f64()?;
    let theta = r.f64s()?;
    let zeta = r.f64s()?;
    let arch = MapArch { encoder, decoder, output };
    arch.validate().map_err(|e| r.err(&e.to_string()))?;
    if checked_param_count(&arch.encoder) != Some(theta.len()) || checked_param_count(&arch.decoder) != Some(zeta.len())
    {
        return Err(r.err("parameter count does not match architecture"));
    }
    Ok(MapParams { arch, theta, zeta, prelu_alpha })
}

fn encode_latents(m: &LatentModel, u: &DMatrix<f64>) -> Vec<u8> {
    let mut w = Writer::default();
    w.matrix(&m.h);
    w.f64s(m.eigvals.as_slice());
    w.f64s(&m.weights);
    w.f64(m.hyper.eta);
    w.f64(m.hyper.lambda_reg);
    w.usize(m.hyper.latent_dim);
    w.u8(m.hyper.normalize_by_eigenvalue as u8);
    w.matrix(u);
    w.0
}

fn decode_latents(r: &mut Reader) -> Result<(LatentModel, DMatrix<f64>)> {
    let h = r.matrix()?;
    let eigvals = DVector::from_vec(r.f64s()?);
    let weights = r.f64s()?;
    let eta = r.f64()?;
    let lambda_reg = r.f64()?;
    let latent_dim = r.usize()?;
    let normalize_by_eigenvalue = match r.u8()? {
        0 => false,
        1 => true,
        _ => return Err(r.err("bad flag")),
    };
    let u = r.matrix()?;
    if h.nrows() != latent_dim || eigvals.len() != latent_dim || weights.len() != h.ncols() || u.ncols() != latent_dim {
        return Err(r.err("latent shapes are inconsistent"));
    }
    let hyper = RkmHyper { eta, lambda_reg, latent_dim, normalize_by_eigenvalue };
    Ok((LatentModel { h, eigvals, weights, hyper }, u))
}

fn encode_weights(wv: &WeightVector) -> Vec<u8> {
    let mut w = Writer::default();
    w.f64s(&wv.weights);
    w.f64s(&wv.distances_sq);
    w.f64(wv.threshold);
    w.f64(wv.alpha);
    w.usize(wv.n_mcd);
    w.0
}

fn decode_weights(r: &mut Reader) -> Result<WeightVector> {
    let weights = r.f64s()?;
    let distances_sq = r.f64s()?;
    let threshold = r.f64()?;
    let alpha = r.f64()?;
    let n_mcd = r.usize()?;
    if weights.len() != distances_sq.len() {
        return Err(r.err("weights and distances differ in length"));
    }
    Ok(WeightVector { weights, distances_sq, threshold, alpha, n_mcd })
}

fn encode_moments(a: &Adam) -> Vec<u8> {
    let mut w = Writer::default();
    w.f64(a.lr);
    w.f64(a.beta1);
    w.f64(a.beta2);
    w.f64(a.eps);
    w.u64(a.t);
    w.f64s(&a.m);
    w.f64s(&a.v);
    w.0
}

fn decode_moments(r: &mut Reader) -> Result<Adam> {
    let (lr, beta1, beta2, eps) = (r.f64()?, r.f64()?, r.f64()?, r.f64()?);
    let t = r.u64()?;
    let m = r.f64s()?;
    let v = r.f64s()?;
    if m.len() != v.len() {
        return Err(r.err("moment vectors differ in length"));
    }
    Ok(Adam { lr, beta1, beta2, eps, m, v, t })
}

fn encode_rng(rng: &ChaCha8Rng) -> Vec<u8> {
    let mut w = Writer::default();
    w.0.extend_from_slice(&rng.get_seed());
    w.u64(rng.get_stream());
    w.0.extend_from_slice(&rng.get_word_pos().to_le_bytes());
    w.0
}

fn decode_rng(r: &mut Reader) -> Result<ChaCha8Rng> {
    let seed: [u8; 32] = r.take(32)?.try_into().unwrap();
    let stream = r.u64()?;
    let pos = u128::from_le_bytes(r.take(16)?.try_into().unwrap());
    let mut rng = ChaCha8Rng::from_seed(seed);
    rng.set_stream(stream);
    rng.set_word_pos(pos);
    Ok(rng)
}

fn encode_meta(c: &Checkpoint) -> Vec<u8> {
    let mut w = Writer::default();
    w.usize(c.epochs_done);
    w.f64(c.initial_total);
    w.usizes(&c.subset);
    w.0
}

pub fn encode_checkpoint(c: &Checkpoint) -> Vec<u8> {
    let payloads = [
        encode_params(&c.params),
        encode_latents(&c.model, &c.interconnection),
        encode_weights(&c.weights),
        {
            let mut w = Writer::default();
            w.bytes(c.config.to_config_string().as_bytes());
            w.0
        },
        encode_moments(&c.adam),
        encode_rng(&c.rng),
        encode_meta(c),
    ];
    let mut out = Vec::new();
    out.extend_from_slice(CKPT_MAGIC);
    out.extend_from_slice(&CKPT_VERSION.to_le_bytes());
    out.extend_from_slice(&(SECTIONS.len() as u32).to_le_bytes());
    for (tag, payload) in SECTIONS.iter().zip(&payloads) {
        out.extend_from_slice(*tag);
        out.extend_from_slice(&(payload.len() as u64).to_le_bytes());
        out.extend_from_slice(payload);
        out.extend_from_slice(&crc32fast::hash(payload).to_le_bytes());
    }
    out
}

fn section_name(tag: &[u8; 4]) -> &'static str {
    match tag {
        b"PARM" => "params",
        b"LATN" => "latents",
        b"WGHT" => "weights",
        b"CONF" => "config",
        b"MOMT" => "moments",
        b"RNGS" => "rng",
        _ => "meta",
    }
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    if bytes.len() < 16 || &bytes[..8] != CKPT_MAGIC {
        let found = bytes
            .get(..8)
            .map_or("truncated header".to_string(), |m| format!("magic {:?}", String::from_utf8_lossy(m)));
        return Err(RkmError::VersionMismatch { found, supported: CKPT_VERSION });
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if version != CKPT_VERSION {
        return Err(RkmError::VersionMismatch { found: version.to_string(), supported: CKPT_VERSION });
    }
    let count = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
    if count != SECTIONS.len() {
        return Err(RkmError::Format(format!("expected {} sections, found {count}", SECTIONS.len())));
    }
    let mut rest = &bytes[16..];
    let mut payloads: Vec<&[u8]> = Vec::with_capacity(count);
    for tag in SECTIONS {
        let name = section_name(tag);
        if rest.len() < 12 || &rest[..4] != tag {
            return Err(RkmError::Format(format!("missing or misplaced section `{name}`")));
        }
        let len = u64::from_le_bytes(rest[4..12].try_into().unwrap());
        let len = usize::try_from(len)
            .ok()
            .filter(|&l| l.checked_add(16).is_some_and(|t| t <= rest.len()))
            .ok_or_else(|| RkmError::Format(format!("section `{name}` is truncated")))?;
        let payload = &rest[12..12 + len];
        let crc = u32::from_le_bytes(rest[12 + len..16 + len].try_into().unwrap());
        if crc32fast::hash(payload) != crc {
            return Err(RkmError::ChecksumMismatch { section: name.to_string() });
        }
        payloads.push(payload);
        rest = &rest[16 + len..];
    }
    if !rest.is_empty() {
        return Err(RkmError::Format("trailing bytes after the last section".into()));
    }

    let mut r = Reader { buf: payloads[0], section: "params" };
    let params = decode_params(&mut r)?;
    r.finish()?;
    let mut r = Reader { buf: payloads[1], section: "latents" };
    let (model, interconnection) = decode_latents(&mut r)?;
    r.finish()?;
    let mut r = Reader { buf: payloads[2], section: "weights" };
    let weights = decode_weights(&mut r)?;
    r.finish()?;
    let mut r = Reader { buf: payloads[3], section: "config" };
    let text = std::str::from_utf8(r.bytes()?).map_err(|_| r.err("config is not UTF-8"))?;
    let config = TrainConfig::parse(text).map_err(|e| r.err(&e.to_string()))?;
    r.finish()?;
    let mut r = Reader { buf: payloads[4], section: "moments" };
    let adam = decode_moments(&mut r)?;
    r.finish()?;
    let mut r = Reader { buf: payloads[5], section: "rng" };
    let rng = decode_rng(&mut r)?;
    r.finish()?;
    let mut r = Reader { buf: payloads[6], section: "meta" };
    let epochs_done = r.usize()?;
    let initial_total = r.f64()?;
    let subset = r.usizes()?;
    r.finish()?;

    let ckpt =
        Checkpoint { params, model, interconnection, weights, config, adam, rng, epochs_done, initial_total, subset };
    check_consistency(&ckpt)?;
    Ok(ckpt)
}

fn check_consistency(c: &Checkpoint) -> Result<()> {
    let bad = |m: &str| Err(RkmError::Format(format!("inconsistent checkpoint: {m}")));
    let n = c.model.n();
    if c.weights.len() != n || c.subset.len() != n {
        return bad("weights, subset and latents disagree on N");
    }
    if c.interconnection.nrows() != c.params.arch.feature_dim() {
        return bad("interconnection rows differ from the feature dimension");
    }
    if c.adam.m.len() != c.params.n_params() {
        return bad("optimizer moments do not match the parameter count");
    }
    if c.model.eigvals.iter().any(|&l| !(l > 0.0)) || c.model.weights.iter().any(|&w| !(w > 0.0)) {
        return bad("eigenvalues and weights must be positive");
    }
    Ok(())
}

pub fn save_checkpoint(path: &std::path::Path, c: &Checkpoint) -> Result<()> {
    std::fs::write(path, encode_checkpoint(c))?;
    Ok(())
}

pub fn load_checkpoint(path: &std::path::Path) -> Result<Checkpoint> {
    decode_checkpoint(&std::fs::read(path)?)
}
