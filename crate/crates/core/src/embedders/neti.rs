//! Timestep- and layer-conditioned subject embedding: a two-layer MLP over
//! Fourier features of `t / T` concatenated with a one-hot layer code.

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::archive::{Archive, ArrayEntry};
use crate::error::{Error, Result};

pub const DEFAULT_FREQS: usize = 4;
pub const DEFAULT_HIDDEN: usize = 32;
const OUTPUT_INIT_SCALE: f64 = 1e-2;

#[derive(Debug, Clone, PartialEq)]
pub struct NetiEmbedder {
    timesteps: usize,
    layers: usize,
    freqs: usize,
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    pub w2: Array2<f64>,
    pub b2: Array1<f64>,
}

/// Gradients with the same shapes as the embedder parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct NetiGrads {
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    pub w2: Array2<f64>,
    pub b2: Array1<f64>,
}

impl NetiGrads {
    pub fn zeros_like(m: &NetiEmbedder) -> Self {
        Self {
            w1: Array2::zeros(m.w1.dim()),
            b1: Array1::zeros(m.b1.len()),
            w2: Array2::zeros(m.w2.dim()),
            b2: Array1::zeros(m.b2.len()),
        }
    }

    pub fn add_assign(&mut self, other: &NetiGrads) {
        self.w1 += &other.w1;
        self.b1 += &other.b1;
        self.w2 += &other.w2;
        self.b2 += &other.b2;
    }

    pub fn scale(&mut self, k: f64) {
        self.w1 *= k;
        self.b1 *= k;
        self.w2 *= k;
        self.b2 *= k;
    }
}

impl NetiEmbedder {
    /// Random hidden layer, near-zero output layer, output bias `init`.
    pub fn new(timesteps: usize, layers: usize, init: &Array1<f64>, hidden: usize, seed: u64) -> Result<Self> {
        let mut m = Self::constant(timesteps, layers, init, hidden)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let fan_in = m.w1.ncols() as f64;
        m.w1.mapv_inplace(|_| rng.sample::<f64, _>(StandardNormal) / fan_in.sqrt());
        let fan_h = hidden as f64;
        m.w2.mapv_inplace(|_| OUTPUT_INIT_SCALE * rng.sample::<f64, _>(StandardNormal) / fan_h.sqrt());
        Ok(m)
    }

    /// Zero weights; the output is `init` for every `(t, l)`.
    pub fn constant(timesteps: usize, layers: usize, init: &Array1<f64>, hidden: usize) -> Result<Self> {
        if timesteps == 0 || layers == 0 || hidden == 0 || init.is_empty() {
            return Err(Error::Init("NeTI embedder dimensions must be >= 1".into()));
        }
        let freqs = DEFAULT_FREQS;
        let input = 2 * freqs + layers;
        Ok(Self {
            timesteps,
            layers,
            freqs,
            w1: Array2::zeros((hidden, input)),
            b1: Array1::zeros(hidden),
            w2: Array2::zeros((init.len(), hidden)),
            b2: init.clone(),
        })
    }

    pub fn dim(&self) -> usize {
        self.b2.len()
    }

    pub fn layers(&self) -> usize {
        self.layers
    }

    pub fn timesteps(&self) -> usize {
        self.timesteps
    }

    fn features(&self, t: usize, l: usize) -> Result<Array1<f64>> {
        if t >= self.timesteps {
            return Err(Error::Index {
                what: "timestep",
                index: t,
                bound: self.timesteps,
            });
        }
        if l >= self.layers {
            return Err(Error::Index {
                what: "layer",
                index: l,
                bound: self.layers,
            });
        }
        let x = t as f64 / self.timesteps as f64;
        let mut f = Array1::zeros(2 * self.freqs + self.layers);
        for k in 0..self.freqs {
            let w = std::f64::consts::PI * (k + 1) as f64 * x;
            f[2 * k] = w.sin();
            f[2 * k + 1] = w.cos();
        }
        f[2 * self.freqs + l] = 1.0;
        Ok(f)
    }

    pub fn forward(&self, t: usize, l: usize) -> Result<Array1<f64>> {
        let f = self.features(t, l)?;
        let h = (self.w1.dot(&f) + &self.b1).mapv(f64::tanh);
        Ok(self.w2.dot(&h) + &self.b2)
    }

    /// Parameter gradient of `grad_out . forward(t, l)`.
    pub fn backward(&self, t: usize, l: usize, grad_out: &Array1<f64>) -> Result<NetiGrads> {
        if grad_out.len() != self.dim() {
            return Err(Error::Dimension {
                expected: self.dim(),
                got: grad_out.len(),
            });
        }
        let f = self.features(t, l)?;
        let h = (self.w1.dot(&f) + &self.b1).mapv(f64::tanh);
        let dh = self.w2.t().dot(grad_out);
        let dpre = &dh * &h.mapv(|v| 1.0 - v * v);
        let outer = |a: &Array1<f64>, b: &Array1<f64>| {
            Array2::from_shape_fn((a.len(), b.len()), |(i, j)| a[i] * b[j])
        };
        Ok(NetiGrads {
            w1: outer(&dpre, &f),
            b1: dpre,
            w2: outer(grad_out, &h),
            b2: grad_out.clone(),
        })
    }

    pub fn to_archive(&self, archive: &mut Archive, prefix: &str) {
        archive.set_meta(format!("{prefix}timesteps"), self.timesteps);
        archive.set_meta(format!("{prefix}layers"), self.layers);
        archive.set_meta(format!("{prefix}hidden"), self.b1.len());
        archive.set_meta(format!("{prefix}dim"), self.dim());
        let m = |a: &Array2<f64>| ArrayEntry {
            shape: a.shape().to_vec(),
            data: a.iter().copied().collect(),
        };
        archive.insert(format!("{prefix}w1"), m(&self.w1));
        archive.insert(format!("{prefix}b1"), ArrayEntry::vector(self.b1.to_vec()));
        archive.insert(format!("{prefix}w2"), m(&self.w2));
        archive.insert(format!("{prefix}b2"), ArrayEntry::vector(self.b2.to_vec()));
    }

    pub fn from_archive(archive: &Archive, prefix: &str) -> Result<Self> {
        let timesteps = archive.meta_parse(&format!("{prefix}timesteps"))?;
        let layers = archive.meta_parse(&format!("{prefix}layers"))?;
        let hidden = archive.meta_parse(&format!("{prefix}hidden"))?;
        let dim: usize = archive.meta_parse(&format!("{prefix}dim"))?;
        let mut m = Self::constant(timesteps, layers, &Array1::zeros(dim), hidden)?;
        let (r1, c1) = m.w1.dim();
        m.w1 = Array2::from_shape_vec((r1, c1), archive.vector(&format!("{prefix}w1"), r1 * c1)?).expect("checked");
        m.b1 = Array1::from(archive.vector(&format!("{prefix}b1"), hidden)?);
        m.w2 = Array2::from_shape_vec((dim, hidden), archive.vector(&format!("{prefix}w2"), dim * hidden)?)
            .expect("checked");
        m.b2 = Array1::from(archive.vector(&format!("{prefix}b2"), dim)?);
        Ok(m)
    }
}
