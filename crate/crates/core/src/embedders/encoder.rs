//! Frozen toy text encoder: word + position embeddings followed by one
//! bidirectional self-attention block with a residual connection.

use std::collections::BTreeMap;

use ndarray::{s, Array1, Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::vocab::{UNKNOWN, WORDS};
use crate::archive::{Archive, ArrayEntry};
use crate::backend::Sequence;
use crate::error::{Error, Result};

pub const SUBJECT_MARKER: &str = "<v*>";
pub const ATTRACTOR_MARKER: &str = "<A*>";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum PseudoToken {
    /// The learnable subject token.
    Subject,
    /// The per-image background attractor.
    Attractor,
}

impl PseudoToken {
    pub fn marker(self) -> &'static str {
        match self {
            PseudoToken::Subject => SUBJECT_MARKER,
            PseudoToken::Attractor => ATTRACTOR_MARKER,
        }
    }
}

impl std::fmt::Display for PseudoToken {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.marker())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PromptToken {
    Bos,
    Word(usize),
    Pseudo(PseudoToken),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub embed_dim: usize,
    pub context_length: usize,
    /// `false` builds the identity encoder: no positions, no attention.
    pub contextualize: bool,
    pub position_scale: f64,
    pub output_scale: f64,
    pub seed: u64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            embed_dim: 32,
            context_length: 77,
            contextualize: true,
            position_scale: 0.3,
            output_scale: 0.5,
            seed: 1,
        }
    }
}

#[derive(Debug, Clone)]
struct AttentionBlock {
    wq: Array2<f64>,
    wk: Array2<f64>,
    wv: Array2<f64>,
    wo: Array2<f64>,
}

#[derive(Debug, Clone)]
pub struct TextEncoder {
    config: EncoderConfig,
    vocab: BTreeMap<String, usize>,
    embeddings: Array2<f64>,
    bos: Array1<f64>,
    positions: Array2<f64>,
    block: Option<AttentionBlock>,
}

fn randn(rng: &mut ChaCha8Rng, shape: (usize, usize), scale: f64) -> Array2<f64> {
    Array2::from_shape_simple_fn(shape, || scale * rng.sample::<f64, _>(StandardNormal))
}

fn build_vocab() -> BTreeMap<String, usize> {
    let mut vocab = BTreeMap::new();
    for w in WORDS.iter().copied().chain(std::iter::once(UNKNOWN)) {
        let next = vocab.len();
        vocab.entry(w.to_string()).or_insert(next);
    }
    vocab
}

fn softmax_rows(m: &mut Array2<f64>) {
    for mut row in m.rows_mut() {
        let mx = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        row.mapv_inplace(|v| (v - mx).exp());
        let s = row.sum();
        row.mapv_inplace(|v| v / s);
    }
}

/// Strip surrounding punctuation; keeps inner `-` and pseudo-token markers.
fn clean_piece(piece: &str) -> &str {
    piece.trim_matches(|c: char| matches!(c, '.' | ',' | ';' | ':' | '!' | '?' | '"' | '\'' | '(' | ')'))
}

impl TextEncoder {
    pub fn new(config: EncoderConfig) -> Result<Self> {
        if config.embed_dim == 0 || config.context_length < 2 {
            return Err(Error::Spec("encoder needs embed_dim >= 1 and context_length >= 2".into()));
        }
        let vocab = build_vocab();
        let d = config.embed_dim;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let embeddings = randn(&mut rng, (vocab.len(), d), 1.0);
        let bos = randn(&mut rng, (1, d), 1.0).row(0).to_owned();
        let (positions, block) = if config.contextualize {
            let positions = randn(&mut rng, (config.context_length, d), config.position_scale);
            let inv = 1.0 / (d as f64).sqrt();
            let block = AttentionBlock {
                wq: randn(&mut rng, (d, d), inv),
                wk: randn(&mut rng, (d, d), inv),
                wv: randn(&mut rng, (d, d), inv),
                wo: randn(&mut rng, (d, d), config.output_scale * inv),
            };
            (positions, Some(block))
        } else {
            (Array2::zeros((config.context_length, d)), None)
        };
        Ok(Self {
            config,
            vocab,
            embeddings,
            bos,
            positions,
            block,
        })
    }

    /// Encoder whose output equals its input sequence.
    pub fn identity(embed_dim: usize, seed: u64) -> Result<Self> {
        Self::new(EncoderConfig {
            embed_dim,
            contextualize: false,
            seed,
            ..Default::default()
        })
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.config
    }

    pub fn dim(&self) -> usize {
        self.config.embed_dim
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab.len()
    }

    pub fn word_embedding(&self, word: &str) -> Option<Array1<f64>> {
        self.vocab
            .get(&word.to_lowercase())
            .map(|&i| self.embeddings.row(i).to_owned())
    }

    pub fn token_embedding(&self, token: PromptToken) -> Option<Array1<f64>> {
        match token {
            PromptToken::Bos => Some(self.bos.clone()),
            PromptToken::Word(i) => Some(self.embeddings.row(i).to_owned()),
            PromptToken::Pseudo(_) => None,
        }
    }

    /// BOS followed by one token per whitespace-separated piece, truncated to
    /// the context length. Unknown words map to `<unk>`.
    pub fn tokenize(&self, prompt: &str) -> Vec<PromptToken> {
        let unk = self.vocab[UNKNOWN];
        let mut out = vec![PromptToken::Bos];
        for piece in prompt.split_whitespace() {
            let piece = clean_piece(piece);
            if piece.is_empty() {
                continue;
            }
            let tok = match piece {
                SUBJECT_MARKER => PromptToken::Pseudo(PseudoToken::Subject),
                ATTRACTOR_MARKER => PromptToken::Pseudo(PseudoToken::Attractor),
                w => PromptToken::Word(*self.vocab.get(&w.to_lowercase()).unwrap_or(&unk)),
            };
            out.push(tok);
        }
        out.truncate(self.config.context_length);
        out
    }

    pub fn encode(&self, input: &Sequence) -> Result<Sequence> {
        self.check(input)?;
        let Some(b) = &self.block else {
            return Ok(input.clone());
        };
        let h = input + &self.positions.slice(s![..input.nrows(), ..]);
        let (_, _, v, a) = self.attention(b, &h);
        Ok(&h + &a.dot(&v).dot(&b.wo.t()))
    }

    /// Vector-Jacobian product of [`encode`](Self::encode) with respect to its input.
    pub fn encode_vjp(&self, input: &Sequence, grad_out: &Sequence) -> Result<Sequence> {
        self.check(input)?;
        if grad_out.dim() != input.dim() {
            return Err(Error::Shape("encoder gradient shape differs from input".into()));
        }
        let Some(b) = &self.block else {
            return Ok(grad_out.clone());
        };
        let h = input + &self.positions.slice(s![..input.nrows(), ..]);
        let (q, k, v, a) = self.attention(b, &h);
        let inv = 1.0 / (self.dim() as f64).sqrt();
        let d_o = grad_out.dot(&b.wo);
        let d_a = d_o.dot(&v.t());
        let d_v = a.t().dot(&d_o);
        let row_dot = (&d_a * &a).sum_axis(Axis(1)).insert_axis(Axis(1));
        let d_s = &a * &(&d_a - &row_dot) * inv;
        let d_q = d_s.dot(&k);
        let d_k = d_s.t().dot(&q);
        Ok(grad_out + &d_q.dot(&b.wq) + &d_k.dot(&b.wk) + &d_v.dot(&b.wv))
    }

    fn attention(&self, b: &AttentionBlock, h: &Sequence) -> (Sequence, Sequence, Sequence, Array2<f64>) {
        let q = h.dot(&b.wq.t());
        let k = h.dot(&b.wk.t());
        let v = h.dot(&b.wv.t());
        let mut a = q.dot(&k.t()) / (self.dim() as f64).sqrt();
        softmax_rows(&mut a);
        (q, k, v, a)
    }

    fn check(&self, input: &Sequence) -> Result<()> {
        if input.ncols() != self.dim() {
            return Err(Error::Dimension {
                expected: self.dim(),
                got: input.ncols(),
            });
        }
        if input.nrows() == 0 || input.nrows() > self.config.context_length {
            return Err(Error::Shape(format!(
                "sequence length {} not in 1..={}",
                input.nrows(),
                self.config.context_length
            )));
        }
        Ok(())
    }

    pub fn parameters(&self) -> Vec<(String, ArrayEntry)> {
        let m = |a: &Array2<f64>| ArrayEntry {
            shape: a.shape().to_vec(),
            data: a.iter().copied().collect(),
        };
        let mut out = vec![
            ("embeddings".to_string(), m(&self.embeddings)),
            ("bos".to_string(), ArrayEntry::vector(self.bos.to_vec())),
            ("positions".to_string(), m(&self.positions)),
        ];
        if let Some(b) = &self.block {
            out.push(("attn/wq".into(), m(&b.wq)));
            out.push(("attn/wk".into(), m(&b.wk)));
            out.push(("attn/wv".into(), m(&b.wv)));
            out.push(("attn/wo".into(), m(&b.wo)));
        }
        out
    }

    pub fn to_archive(&self, archive: &mut Archive, prefix: &str) {
        for (name, entry) in self.parameters() {
            archive.insert(format!("{prefix}{name}"), entry);
        }
    }

    pub fn from_archive(config: EncoderConfig, archive: &Archive, prefix: &str) -> Result<Self> {
        let mut enc = Self::new(config)?;
        let d = enc.dim();
        let get = |name: &str, rows: usize| -> Result<Array2<f64>> {
            let v = archive.vector(&format!("{prefix}{name}"), rows * d)?;
            Ok(Array2::from_shape_vec((rows, d), v).expect("length checked"))
        };
        enc.embeddings = get("embeddings", enc.vocab.len())?;
        enc.bos = Array1::from(archive.vector(&format!("{prefix}bos"), d)?);
        enc.positions = get("positions", enc.config.context_length)?;
        if let Some(b) = enc.block.as_mut() {
            b.wq = get("attn/wq", d)?;
            b.wk = get("attn/wk", d)?;
            b.wv = get("attn/wv", d)?;
            b.wo = get("attn/wo", d)?;
        }
        Ok(enc)
    }
}
