//! Epsilon-predictor interface and the toy cross-attention denoiser.
//!
//! The toy model reads each layer's conditioning sequence through a
//! pixel-query cross-attention whose values are decoded by a frozen
//! low-frequency cosine basis. The per-layer reads are averaged into a
//! conditional mean image `mu`, and the prediction is
//!
//! ```text
//! r       = z_t - sqrt(abar_t) * mu
//! eps_hat = gain_c * g(t) * r + conv3x3(r)
//! g(t)    = sqrt(1 - abar_t) / (abar_t * prior_var + 1 - abar_t)
//! ```
//!
//! which is the posterior-mean noise estimate for a Gaussian prior centred
//! on `mu`, plus a small learned-looking depthwise convolution.

use ndarray::{Array1, Array2, Array3, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::schedule::NoiseSchedule;
use crate::archive::{Archive, ArrayEntry};
use crate::error::{Error, Result};
use crate::tensor::LatentTensor;

/// Token sequence of shape `(tokens, embed_dim)`.
pub type Sequence = Array2<f64>;

/// Conditioning consumed by the denoiser: one sequence shared by every
/// layer, or one sequence per layer.
#[derive(Debug, Clone, PartialEq)]
pub enum LayerConditioning {
    Shared(Sequence),
    PerLayer(Vec<Sequence>),
}

impl LayerConditioning {
    pub fn layer(&self, l: usize) -> Option<&Sequence> {
        match self {
            LayerConditioning::Shared(s) => Some(s),
            LayerConditioning::PerLayer(v) => v.get(l),
        }
    }

    pub fn sequences(&self) -> &[Sequence] {
        match self {
            LayerConditioning::Shared(s) => std::slice::from_ref(s),
            LayerConditioning::PerLayer(v) => v,
        }
    }

    pub fn check(&self, layers: usize, dim: usize) -> Result<()> {
        if let LayerConditioning::PerLayer(v) = self {
            if v.len() != layers {
                return Err(Error::Conditioning(format!(
                    "per-layer conditioning has {} sequences, model has {layers} layers",
                    v.len()
                )));
            }
        }
        for s in self.sequences() {
            if s.nrows() == 0 {
                return Err(Error::Conditioning("empty conditioning sequence".into()));
            }
            if s.ncols() != dim {
                return Err(Error::Dimension {
                    expected: dim,
                    got: s.ncols(),
                });
            }
        }
        Ok(())
    }
}

pub trait EpsilonPredictor: Send + Sync {
    fn layer_count(&self) -> usize;
    fn embed_dim(&self) -> usize;
    fn latent_shape(&self) -> (usize, usize, usize);

    fn predict(&self, z_t: &LatentTensor, t: usize, cond: &LayerConditioning) -> Result<LatentTensor>;

    /// Vector-Jacobian product of `predict` with respect to the conditioning.
    /// The result has the same variant and shapes as `cond`.
    fn conditioning_vjp(
        &self,
        z_t: &LatentTensor,
        t: usize,
        cond: &LayerConditioning,
        grad_out: &LatentTensor,
    ) -> Result<LayerConditioning>;

    /// Frozen parameters keyed by hierarchical name.
    fn parameters(&self) -> Vec<(String, ArrayEntry)>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenoiserConfig {
    pub channels: usize,
    pub size: usize,
    pub layers: usize,
    pub embed_dim: usize,
    pub key_dim: usize,
    /// Cosine basis frequencies per axis.
    pub basis_freqs: usize,
    pub basis_scale: f64,
    pub prior_var: f64,
    pub conv_scale: f64,
    pub seed: u64,
}

impl Default for DenoiserConfig {
    fn default() -> Self {
        Self {
            channels: 3,
            size: 16,
            layers: 4,
            embed_dim: 32,
            key_dim: 16,
            basis_freqs: 6,
            basis_scale: 1.0,
            prior_var: 0.05,
            conv_scale: 0.02,
            seed: 0,
        }
    }
}

const POS_FREQS: usize = 3;
const POS_FEATURES: usize = 1 + 4 * POS_FREQS;

#[derive(Debug, Clone)]
pub struct ToyDenoiser {
    config: DenoiserConfig,
    alpha_bar: Vec<f64>,
    query_proj: Vec<Array2<f64>>,
    key_proj: Vec<Array2<f64>>,
    value_proj: Vec<Array2<f64>>,
    gain: Array1<f64>,
    conv: Array3<f64>,
    // derived from the parameters above
    attn_keys: Vec<Array2<f64>>,
    value_maps: Vec<Array2<f64>>,
}

fn randn_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || scale * rng.sample::<f64, _>(StandardNormal))
}

fn pixel_features(size: usize) -> Array2<f64> {
    let n = size * size;
    let mut phi = Array2::zeros((n, POS_FEATURES));
    for y in 0..size {
        for x in 0..size {
            let p = y * size + x;
            let (u, v) = ((x as f64 + 0.5) / size as f64, (y as f64 + 0.5) / size as f64);
            phi[[p, 0]] = 1.0;
            for k in 0..POS_FREQS {
                let w = std::f64::consts::PI * (k + 1) as f64;
                phi[[p, 1 + 4 * k]] = (w * u).cos();
                phi[[p, 2 + 4 * k]] = (w * u).sin();
                phi[[p, 3 + 4 * k]] = (w * v).cos();
                phi[[p, 4 + 4 * k]] = (w * v).sin();
            }
        }
    }
    phi
}

/// Orthonormal 2D DCT-II basis restricted to the lowest `freqs` per axis,
/// shape `(size*size, freqs*freqs)`.
fn cosine_basis(size: usize, freqs: usize) -> Array2<f64> {
    let n = size as f64;
    let alpha = |k: usize| if k == 0 { (1.0 / n).sqrt() } else { (2.0 / n).sqrt() };
    Array2::from_shape_fn((size * size, freqs * freqs), |(p, f)| {
        let (y, x) = (p / size, p % size);
        let (fv, fu) = (f / freqs, f % freqs);
        let cx = (std::f64::consts::PI * (2 * x + 1) as f64 * fu as f64 / (2.0 * n)).cos();
        let cy = (std::f64::consts::PI * (2 * y + 1) as f64 * fv as f64 / (2.0 * n)).cos();
        alpha(fu) * alpha(fv) * cx * cy
    })
}

fn softmax_rows(logits: &mut Array2<f64>) {
    for mut row in logits.rows_mut() {
        let m = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        row.mapv_inplace(|v| (v - m).exp());
        let s = row.sum();
        row.mapv_inplace(|v| v / s);
    }
}

impl ToyDenoiser {
    pub fn new(config: DenoiserConfig, schedule: &NoiseSchedule) -> Result<Self> {
        Self::validate(&config)?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let (l, d, dk) = (config.layers, config.embed_dim, config.key_dim);
        let n_coef = config.channels * config.basis_freqs * config.basis_freqs;
        let mut query_proj = Vec::with_capacity(l);
        let mut key_proj = Vec::with_capacity(l);
        let mut value_proj = Vec::with_capacity(l);
        for _ in 0..l {
            query_proj.push(randn_matrix(&mut rng, dk, POS_FEATURES, 1.0 / (POS_FEATURES as f64).sqrt()));
            key_proj.push(randn_matrix(&mut rng, dk, d, 1.0 / (d as f64).sqrt()));
            value_proj.push(randn_matrix(&mut rng, n_coef, d, 1.0 / (d as f64).sqrt()));
        }
        let conv = Array3::from_shape_simple_fn((config.channels, 3, 3), || {
            config.conv_scale * rng.sample::<f64, _>(StandardNormal)
        });
        let gain = Array1::ones(config.channels);
        Self::assemble(config, schedule.alpha_bar().to_vec(), query_proj, key_proj, value_proj, gain, conv)
    }

    /// Model with every parameter set to zero.
    pub fn zeroed(config: DenoiserConfig, schedule: &NoiseSchedule) -> Result<Self> {
        Self::validate(&config)?;
        let (l, d, dk) = (config.layers, config.embed_dim, config.key_dim);
        let n_coef = config.channels * config.basis_freqs * config.basis_freqs;
        Self::assemble(
            config.clone(),
            schedule.alpha_bar().to_vec(),
            vec![Array2::zeros((dk, POS_FEATURES)); l],
            vec![Array2::zeros((dk, d)); l],
            vec![Array2::zeros((n_coef, d)); l],
            Array1::zeros(config.channels),
            Array3::zeros((config.channels, 3, 3)),
        )
    }

    fn validate(c: &DenoiserConfig) -> Result<()> {
        if c.channels == 0 || c.size == 0 || c.layers == 0 || c.embed_dim == 0 || c.key_dim == 0 || c.basis_freqs == 0 {
            return Err(Error::Spec("denoiser dimensions must be >= 1".into()));
        }
        if c.basis_freqs > c.size {
            return Err(Error::Spec("basis_freqs cannot exceed the latent size".into()));
        }
        if !(c.prior_var > 0.0) {
            return Err(Error::Spec("prior_var must be positive".into()));
        }
        Ok(())
    }

    fn assemble(
        config: DenoiserConfig,
        alpha_bar: Vec<f64>,
        query_proj: Vec<Array2<f64>>,
        key_proj: Vec<Array2<f64>>,
        value_proj: Vec<Array2<f64>>,
        gain: Array1<f64>,
        conv: Array3<f64>,
    ) -> Result<Self> {
        let phi = pixel_features(config.size);
        let basis = cosine_basis(config.size, config.basis_freqs) * config.basis_scale;
        let (c, p, nf) = (config.channels, config.size * config.size, config.basis_freqs * config.basis_freqs);
        let inv_sqrt_dk = 1.0 / (config.key_dim as f64).sqrt();
        let mut attn_keys = Vec::with_capacity(config.layers);
        let mut value_maps = Vec::with_capacity(config.layers);
        for l in 0..config.layers {
            // logits[p, j] = (Q phi_p) . (K s_j) / sqrt(dk) = attn_keys[p] . s_j
            let q = phi.dot(&query_proj[l].t());
            attn_keys.push(q.dot(&key_proj[l]) * inv_sqrt_dk);
            // value image of token s_j: value_maps . s_j, channel-major (c*P + p)
            let mut g = Array2::zeros((c * p, config.embed_dim));
            for ch in 0..c {
                let block = value_proj[l].slice(ndarray::s![ch * nf..(ch + 1) * nf, ..]);
                g.slice_mut(ndarray::s![ch * p..(ch + 1) * p, ..]).assign(&basis.dot(&block));
            }
            value_maps.push(g);
        }
        Ok(Self {
            config,
            alpha_bar,
            query_proj,
            key_proj,
            value_proj,
            gain,
            conv,
            attn_keys,
            value_maps,
        })
    }

    pub fn config(&self) -> &DenoiserConfig {
        &self.config
    }

    pub fn to_archive(&self, archive: &mut Archive, prefix: &str) {
        for (name, entry) in self.parameters() {
            archive.insert(format!("{prefix}{name}"), entry);
        }
    }

    pub fn from_archive(config: DenoiserConfig, schedule: &NoiseSchedule, archive: &Archive, prefix: &str) -> Result<Self> {
        Self::validate(&config)?;
        let get2 = |name: String, shape: (usize, usize)| -> Result<Array2<f64>> {
            let values = archive.vector(&format!("{prefix}{name}"), shape.0 * shape.1)?;
            Ok(Array2::from_shape_vec(shape, values).expect("length checked"))
        };
        let (l, d, dk) = (config.layers, config.embed_dim, config.key_dim);
        let n_coef = config.channels * config.basis_freqs * config.basis_freqs;
        let mut q = Vec::new();
        let mut k = Vec::new();
        let mut v = Vec::new();
        for i in 0..l {
            q.push(get2(format!("layers/{i}/query"), (dk, POS_FEATURES))?);
            k.push(get2(format!("layers/{i}/key"), (dk, d))?);
            v.push(get2(format!("layers/{i}/value"), (n_coef, d))?);
        }
        let gain = Array1::from(archive.vector(&format!("{prefix}out/gain"), config.channels)?);
        let conv = Array3::from_shape_vec(
            (config.channels, 3, 3),
            archive.vector(&format!("{prefix}out/conv"), config.channels * 9)?,
        )
        .expect("length checked");
        Self::assemble(config, schedule.alpha_bar().to_vec(), q, k, v, gain, conv)
    }

    fn time_gain(&self, t: usize) -> Result<(f64, f64)> {
        let ab = *self.alpha_bar.get(t).ok_or(Error::Index {
            what: "timestep",
            index: t,
            bound: self.alpha_bar.len(),
        })?;
        let g = (1.0 - ab).sqrt() / (ab * self.config.prior_var + 1.0 - ab);
        Ok((ab.sqrt(), g))
    }

    fn check_inputs(&self, z_t: &LatentTensor, cond: &LayerConditioning) -> Result<()> {
        let shape = self.latent_shape();
        if z_t.shape() != shape {
            return Err(Error::Shape(format!("latent {:?} but model expects {shape:?}", z_t.shape())));
        }
        cond.check(self.config.layers, self.config.embed_dim)
    }

    /// Attention weights `(P, tokens)` and value images `(tokens, C*P)` of one layer.
    fn layer_read(&self, l: usize, seq: &Sequence) -> (Array2<f64>, Array2<f64>) {
        let mut attn = self.attn_keys[l].dot(&seq.t());
        softmax_rows(&mut attn);
        let values = seq.dot(&self.value_maps[l].t());
        (attn, values)
    }

    /// Conditional mean image, flattened channel-major.
    pub fn conditional_mean(&self, cond: &LayerConditioning) -> Result<Vec<f64>> {
        cond.check(self.config.layers, self.config.embed_dim)?;
        let p = self.config.size * self.config.size;
        let c = self.config.channels;
        let inv_l = 1.0 / self.config.layers as f64;
        let mut mu = vec![0.0; c * p];
        for l in 0..self.config.layers {
            let seq = cond.layer(l).expect("checked");
            let (attn, values) = self.layer_read(l, seq);
            for ch in 0..c {
                for px in 0..p {
                    let idx = ch * p + px;
                    let mut acc = 0.0;
                    for j in 0..seq.nrows() {
                        acc += attn[[px, j]] * values[[j, idx]];
                    }
                    mu[idx] += inv_l * acc;
                }
            }
        }
        Ok(mu)
    }

    fn conv_apply(&self, r: &[f64], out: &mut [f64], transpose: bool) {
        let (c, n) = (self.config.channels, self.config.size);
        for ch in 0..c {
            let base = ch * n * n;
            for y in 0..n {
                for x in 0..n {
                    let v = r[base + y * n + x];
                    if v == 0.0 {
                        continue;
                    }
                    for dy in 0..3 {
                        for dx in 0..3 {
                            // forward: out[y,x] += k[dy,dx] * r[y+dy-1, x+dx-1]
                            // scattered from the input side, so the forward
                            // pass uses the flipped offset
                            let (oy, ox) = if transpose {
                                (y as isize + dy as isize - 1, x as isize + dx as isize - 1)
                            } else {
                                (y as isize - dy as isize + 1, x as isize - dx as isize + 1)
                            };
                            if oy < 0 || ox < 0 || oy >= n as isize || ox >= n as isize {
                                continue;
                            }
                            out[base + oy as usize * n + ox as usize] += self.conv[[ch, dy, dx]] * v;
                        }
                    }
                }
            }
        }
    }
}

impl EpsilonPredictor for ToyDenoiser {
    fn layer_count(&self) -> usize {
        self.config.layers
    }

    fn embed_dim(&self) -> usize {
        self.config.embed_dim
    }

    fn latent_shape(&self) -> (usize, usize, usize) {
        (self.config.channels, self.config.size, self.config.size)
    }

    fn predict(&self, z_t: &LatentTensor, t: usize, cond: &LayerConditioning) -> Result<LatentTensor> {
        self.check_inputs(z_t, cond)?;
        let (sqrt_ab, g) = self.time_gain(t)?;
        let mu = self.conditional_mean(cond)?;
        let p = self.config.size * self.config.size;
        let r: Vec<f64> = z_t.as_slice().iter().zip(&mu).map(|(z, m)| z - sqrt_ab * m).collect();
        let mut out = LatentTensor::zeros(self.config.channels, self.config.size, self.config.size);
        let buf = out.as_mut_slice();
        self.conv_apply(&r, buf, false);
        for (i, o) in buf.iter_mut().enumerate() {
            *o += self.gain[i / p] * g * r[i];
        }
        if !out.is_finite() {
            return Err(Error::NonFinite("denoiser output".into()));
        }
        Ok(out)
    }

    fn conditioning_vjp(
        &self,
        z_t: &LatentTensor,
        t: usize,
        cond: &LayerConditioning,
        grad_out: &LatentTensor,
    ) -> Result<LayerConditioning> {
        self.check_inputs(z_t, cond)?;
        z_t.ensure_same_shape(grad_out)?;
        let (sqrt_ab, g) = self.time_gain(t)?;
        let p = self.config.size * self.config.size;
        let c = self.config.channels;
        let go = grad_out.as_slice();
        let mut dr = vec![0.0; go.len()];
        self.conv_apply(go, &mut dr, true);
        for (i, v) in dr.iter_mut().enumerate() {
            *v += self.gain[i / p] * g * go[i];
        }
        let scale = -sqrt_ab / self.config.layers as f64;
        let dmu: Vec<f64> = dr.iter().map(|v| v * scale).collect();

        let mut grads: Vec<Sequence> = Vec::with_capacity(self.config.layers);
        for l in 0..self.config.layers {
            let seq = cond.layer(l).expect("checked");
            let n_tok = seq.nrows();
            let (attn, values) = self.layer_read(l, seq);
            let mut d_values = Array2::<f64>::zeros((n_tok, c * p));
            let mut d_logits = Array2::<f64>::zeros((p, n_tok));
            for px in 0..p {
                let mut d_attn = vec![0.0; n_tok];
                for ch in 0..c {
                    let idx = ch * p + px;
                    let gm = dmu[idx];
                    for j in 0..n_tok {
                        d_values[[j, idx]] += attn[[px, j]] * gm;
                        d_attn[j] += gm * values[[j, idx]];
                    }
                }
                let dot: f64 = (0..n_tok).map(|j| attn[[px, j]] * d_attn[j]).sum();
                for j in 0..n_tok {
                    d_logits[[px, j]] = attn[[px, j]] * (d_attn[j] - dot);
                }
            }
            let d_seq = d_values.dot(&self.value_maps[l]) + d_logits.t().dot(&self.attn_keys[l]);
            grads.push(d_seq);
        }
        Ok(match cond {
            LayerConditioning::Shared(_) => {
                let mut total = grads.pop().expect("at least one layer");
                for g in grads {
                    total += &g;
                }
                LayerConditioning::Shared(total)
            }
            LayerConditioning::PerLayer(_) => LayerConditioning::PerLayer(grads),
        })
    }

    fn parameters(&self) -> Vec<(String, ArrayEntry)> {
        let mut out = Vec::new();
        let m2 = |a: &Array2<f64>| ArrayEntry {
            shape: a.shape().to_vec(),
            data: a.iter().copied().collect(),
        };
        for l in 0..self.config.layers {
            out.push((format!("layers/{l}/query"), m2(&self.query_proj[l])));
            out.push((format!("layers/{l}/key"), m2(&self.key_proj[l])));
            out.push((format!("layers/{l}/value"), m2(&self.value_proj[l])));
        }
        out.push(("out/gain".into(), ArrayEntry::vector(self.gain.to_vec())));
        out.push((
            "out/conv".into(),
            ArrayEntry {
                shape: vec![self.config.channels, 3, 3],
                data: self.conv.iter().copied().collect(),
            },
        ));
        out
    }
}

/// Sum of squared attention mass a layer spends on each token, averaged over
/// pixels; handy for inspecting which tokens a model reads.
pub fn token_attention(model: &ToyDenoiser, layer: usize, seq: &Sequence) -> Array1<f64> {
    let (attn, _) = model.layer_read(layer, seq);
    attn.mean_axis(Axis(0)).expect("non-empty")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::schedule::{make_noise_schedule, ScheduleKind};
    use crate::gradcheck::{central_difference, relative_error};

    fn small_config() -> DenoiserConfig {
        DenoiserConfig {
            size: 8,
            layers: 3,
            embed_dim: 6,
            key_dim: 4,
            basis_freqs: 3,
            conv_scale: 0.2,
            seed: 11,
            ..Default::default()
        }
    }

    fn inputs(cfg: &DenoiserConfig, tokens: usize, seed: u64) -> (LatentTensor, Sequence) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let z = LatentTensor::randn((cfg.channels, cfg.size, cfg.size), &mut rng);
        let s = randn_matrix(&mut rng, tokens, cfg.embed_dim, 1.0);
        (z, s)
    }

    #[test]
    fn zero_parameters_give_zero_output() {
        let sched = make_noise_schedule(50, ScheduleKind::Linear).unwrap();
        let cfg = small_config();
        let m = ToyDenoiser::zeroed(cfg.clone(), &sched).unwrap();
        let (z, s) = inputs(&cfg, 4, 1);
        let out = m.predict(&z, 10, &LayerConditioning::Shared(s)).unwrap();
        assert!(out.as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn deterministic_and_shape_preserving() {
        let sched = make_noise_schedule(50, ScheduleKind::Linear).unwrap();
        let cfg = small_config();
        let m = ToyDenoiser::new(cfg.clone(), &sched).unwrap();
        let (z, s) = inputs(&cfg, 4, 2);
        let cond = LayerConditioning::Shared(s);
        let a = m.predict(&z, 7, &cond).unwrap();
        let b = m.predict(&z, 7, &cond).unwrap();
        assert_eq!(a.shape(), z.shape());
        assert!(a.as_slice().iter().zip(b.as_slice()).all(|(x, y)| x.to_bits() == y.to_bits()));
    }

    #[test]
    fn missing_layer_is_conditioning_error() {
        let sched = make_noise_schedule(50, ScheduleKind::Linear).unwrap();
        let cfg = small_config();
        let m = ToyDenoiser::new(cfg.clone(), &sched).unwrap();
        let (z, s) = inputs(&cfg, 3, 3);
        let cond = LayerConditioning::PerLayer(vec![s.clone(); cfg.layers - 1]);
        assert!(matches!(m.predict(&z, 0, &cond), Err(Error::Conditioning(_))));
        assert!(matches!(m.predict(&z, 50, &LayerConditioning::Shared(s)), Err(Error::Index { .. })));
    }

    #[test]
    fn conditioning_vjp_matches_finite_differences() {
        let sched = make_noise_schedule(50, ScheduleKind::Linear).unwrap();
        let cfg = small_config();
        let m = ToyDenoiser::new(cfg.clone(), &sched).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let z = LatentTensor::randn(m.latent_shape(), &mut rng);
        let w = LatentTensor::randn(m.latent_shape(), &mut rng);
        let seqs: Vec<Sequence> = (0..cfg.layers).map(|_| randn_matrix(&mut rng, 3, cfg.embed_dim, 1.0)).collect();
        let t = 20;
        let objective = |seqs: &[Sequence]| {
            let out = m.predict(&z, t, &LayerConditioning::PerLayer(seqs.to_vec())).unwrap();
            out.as_slice().iter().zip(w.as_slice()).map(|(a, b)| a * b).sum::<f64>()
        };
        let grads = match m.conditioning_vjp(&z, t, &LayerConditioning::PerLayer(seqs.clone()), &w).unwrap() {
            LayerConditioning::PerLayer(g) => g,
            _ => unreachable!(),
        };
        for l in 0..cfg.layers {
            for idx in 0..seqs[l].len() {
                let numeric = central_difference(
                    |h| {
                        let mut s = seqs.clone();
                        s[l].as_slice_mut().unwrap()[idx] += h;
                        objective(&s)
                    },
                    1e-5,
                );
                let analytic = grads[l].as_slice().unwrap()[idx];
                assert!(relative_error(analytic, numeric) < 1e-4, "l={l} idx={idx}: {analytic} vs {numeric}");
            }
        }

        // shared conditioning sums the per-layer contributions
        let shared = match m.conditioning_vjp(&z, t, &LayerConditioning::Shared(seqs[0].clone()), &w).unwrap() {
            LayerConditioning::Shared(g) => g,
            _ => unreachable!(),
        };
        let per = match m.conditioning_vjp(&z, t, &LayerConditioning::PerLayer(vec![seqs[0].clone(); cfg.layers]), &w).unwrap() {
            LayerConditioning::PerLayer(g) => g,
            _ => unreachable!(),
        };
        let sum = per.iter().skip(1).fold(per[0].clone(), |acc, g| acc + g);
        assert!((shared - sum).iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn archive_round_trip_rebuilds_identical_model() {
        let sched = make_noise_schedule(50, ScheduleKind::Linear).unwrap();
        let cfg = small_config();
        let m = ToyDenoiser::new(cfg.clone(), &sched).unwrap();
        let mut a = Archive::new();
        m.to_archive(&mut a, "denoiser/");
        let back = ToyDenoiser::from_archive(cfg.clone(), &sched, &a, "denoiser/").unwrap();
        let (z, s) = inputs(&cfg, 4, 5);
        let cond = LayerConditioning::Shared(s);
        assert_eq!(m.predict(&z, 3, &cond).unwrap(), back.predict(&z, 3, &cond).unwrap());
    }
}
