//! Pluggable embedding models and the deterministic offline stub family.

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dataset::caption::caption_words;
use crate::error::{Error, Result};
use crate::tensor::LatentTensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelFamily {
    ContrastiveTextImage,
    SelfSupervisedImage,
}

pub trait EmbeddingModel: Send + Sync {
    fn family(&self) -> ModelFamily;
    fn dim(&self) -> usize;
    /// Unit-normalized image embedding.
    fn embed_image(&self, image: &LatentTensor) -> Result<Array1<f64>>;
    /// Unit-normalized text embedding in the image space, if the model has a
    /// text tower.
    fn embed_text(&self, _text: &str) -> Result<Array1<f64>> {
        Err(Error::Spec("this embedding model has no text tower".into()))
    }
}

/// Cosine of two unit vectors, clamped to [-1, 1].
pub fn cosine(a: &Array1<f64>, b: &Array1<f64>) -> f64 {
    a.dot(b).clamp(-1.0, 1.0)
}

/// Stable 64-bit seed from a label.
pub fn hash_seed(parts: &[&str]) -> u64 {
    let mut h = Sha256::new();
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p.as_bytes());
    }
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
}

fn normalize(v: Array1<f64>) -> Result<Array1<f64>> {
    let n = v.dot(&v).sqrt();
    if !(n > 0.0) || !n.is_finite() {
        return Err(Error::NonFinite("embedding has zero or non-finite norm".into()));
    }
    Ok(v / n)
}

fn gaussian_matrix(seed: u64, rows: usize, cols: usize) -> Array2<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let s = 1.0 / (rows as f64).sqrt();
    Array2::from_shape_simple_fn((rows, cols), || s * rng.sample::<f64, _>(StandardNormal))
}

/// Mean of each channel over a `cells x cells` grid, channel-major.
fn pooled_grid(image: &LatentTensor, cells: usize) -> Vec<f64> {
    let (c, h, w) = image.shape();
    let a = image.array();
    let mut out = vec![0.0; c * cells * cells];
    let mut counts = vec![0usize; cells * cells];
    for y in 0..h {
        for x in 0..w {
            counts[(y * cells / h) * cells + x * cells / w] += 1;
        }
    }
    for ch in 0..c {
        for y in 0..h {
            for x in 0..w {
                let cell = (y * cells / h) * cells + x * cells / w;
                out[ch * cells * cells + cell] += a[[ch, y, x]];
            }
        }
        for cell in 0..cells * cells {
            out[ch * cells * cells + cell] /= counts[cell].max(1) as f64;
        }
    }
    out
}

fn channel_stats(image: &LatentTensor) -> Vec<f64> {
    let (c, h, w) = image.shape();
    let n = (h * w) as f64;
    let mut out = Vec::with_capacity(2 * c);
    for ch in 0..c {
        let plane = image.array().index_axis(ndarray::Axis(0), ch);
        let mean = plane.sum() / n;
        let var = plane.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        out.push(mean);
        out.push(var.sqrt());
    }
    out
}

/// Per-channel mean absolute horizontal and vertical differences over a 2x2 grid.
fn edge_energy(image: &LatentTensor) -> Vec<f64> {
    let (c, h, w) = image.shape();
    let a = image.array();
    let mut out = vec![0.0; c * 8];
    let mut counts = vec![0.0; c * 8];
    for ch in 0..c {
        for y in 0..h {
            for x in 0..w {
                let cell = (2 * y / h) * 2 + 2 * x / w;
                if x + 1 < w {
                    out[ch * 8 + cell] += (a[[ch, y, x + 1]] - a[[ch, y, x]]).abs();
                    counts[ch * 8 + cell] += 1.0;
                }
                if y + 1 < h {
                    out[ch * 8 + 4 + cell] += (a[[ch, y + 1, x]] - a[[ch, y, x]]).abs();
                    counts[ch * 8 + 4 + cell] += 1.0;
                }
            }
        }
    }
    out.iter().zip(&counts).map(|(s, n)| if *n > 0.0 { s / n } else { 0.0 }).collect()
}

/// Hash-seeded random projection of coarse pixel statistics, with a
/// word-hash text tower.
#[derive(Debug, Clone)]
pub struct StubContrastive {
    dim: usize,
    seed: u64,
    projection: Array2<f64>,
}

pub const STUB_DIM: usize = 64;
const CONTRASTIVE_FEATURES: usize = 3 * 16 + 6;
const SELFSUP_FEATURES: usize = 3 * 4 + 6 + 24 + 3 * 64;

impl StubContrastive {
    pub fn new(seed: u64) -> Self {
        let s = hash_seed(&["contrastive-text-image", &seed.to_string()]);
        Self {
            dim: STUB_DIM,
            seed: s,
            projection: gaussian_matrix(s, STUB_DIM, CONTRASTIVE_FEATURES),
        }
    }

    fn word_vector(&self, word: &str) -> Array1<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(hash_seed(&[&self.seed.to_string(), word]));
        Array1::from_shape_simple_fn(self.dim, || rng.sample::<f64, _>(StandardNormal))
    }
}

impl EmbeddingModel for StubContrastive {
    fn family(&self) -> ModelFamily {
        ModelFamily::ContrastiveTextImage
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn embed_image(&self, image: &LatentTensor) -> Result<Array1<f64>> {
        if image.channels() != 3 {
            return Err(Error::Shape("stub embeddings expect 3-channel images".into()));
        }
        let mut f = pooled_grid(image, 4);
        f.extend(channel_stats(image));
        normalize(self.projection.dot(&Array1::from(f)))
    }

    fn embed_text(&self, text: &str) -> Result<Array1<f64>> {
        let words = caption_words(text);
        if words.is_empty() {
            return Err(Error::Spec(format!("cannot embed empty text `{text}`")));
        }
        let mut acc = Array1::zeros(self.dim);
        for w in &words {
            acc += &self.word_vector(w);
        }
        normalize(acc)
    }
}

/// Random projection of a different statistic mix: quadrant colors, channel
/// spread, edge energy and a fine color grid.
#[derive(Debug, Clone)]
pub struct StubSelfSupervised {
    projection: Array2<f64>,
}

impl StubSelfSupervised {
    pub fn new(seed: u64) -> Self {
        let s = hash_seed(&["self-supervised-image", &seed.to_string()]);
        Self {
            projection: gaussian_matrix(s, STUB_DIM, SELFSUP_FEATURES),
        }
    }
}

impl EmbeddingModel for StubSelfSupervised {
    fn family(&self) -> ModelFamily {
        ModelFamily::SelfSupervisedImage
    }

    fn dim(&self) -> usize {
        STUB_DIM
    }

    fn embed_image(&self, image: &LatentTensor) -> Result<Array1<f64>> {
        if image.channels() != 3 {
            return Err(Error::Shape("stub embeddings expect 3-channel images".into()));
        }
        let mut f = pooled_grid(image, 2);
        f.extend(channel_stats(image));
        f.extend(edge_energy(image));
        f.extend(pooled_grid(image, 8));
        normalize(self.projection.dot(&Array1::from(f)))
    }
}

/// The two metric families used by scoring.
pub struct EmbeddingSuite {
    pub text_image: Box<dyn EmbeddingModel>,
    pub self_supervised: Box<dyn EmbeddingModel>,
}

impl EmbeddingSuite {
    pub fn stub(seed: u64) -> Self {
        Self {
            text_image: Box::new(StubContrastive::new(seed)),
            self_supervised: Box::new(StubSelfSupervised::new(seed)),
        }
    }
}
