//! Prompt embedding with pseudo-tokens, and the backward pass from
//! conditioning gradients to the learnable token parameters.

use std::collections::BTreeMap;

use ndarray::{Array1, Array2};

use super::encoder::{PromptToken, PseudoToken, TextEncoder};
use super::neti::{NetiEmbedder, NetiGrads};
use super::tokens::TokenTable;
use crate::backend::{ConditioningSource, LayerConditioning, Sequence};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy)]
pub enum EmbedMethod<'a> {
    /// One static subject vector shared by every layer and timestep.
    TextualInversion,
    /// Subject vector produced per `(t, layer)` by the mapper.
    Neti(&'a NetiEmbedder),
}

impl EmbedMethod<'_> {
    pub fn layers(&self) -> usize {
        match self {
            EmbedMethod::TextualInversion => 1,
            EmbedMethod::Neti(m) => m.layers(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConditioningBundle {
    pub tokens: Vec<PromptToken>,
    /// Encoder inputs: one sequence, or one per layer for the NeTI path.
    pub inputs: Vec<Sequence>,
    pub contextual: LayerConditioning,
    pub positions: BTreeMap<PseudoToken, usize>,
    pub t: Option<usize>,
    pub image_id: Option<String>,
}

impl ConditioningSource for ConditioningBundle {
    fn conditioning_at(&self, _t: usize) -> Result<LayerConditioning> {
        Ok(self.contextual.clone())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TokenGrads {
    pub subject: Array1<f64>,
    pub attractors: BTreeMap<String, Array1<f64>>,
    pub neti: Option<NetiGrads>,
}

impl TokenGrads {
    pub fn new(dim: usize, neti: Option<&NetiEmbedder>) -> Self {
        Self {
            subject: Array1::zeros(dim),
            attractors: BTreeMap::new(),
            neti: neti.map(NetiGrads::zeros_like),
        }
    }

    pub fn add_assign(&mut self, other: &TokenGrads) {
        self.subject += &other.subject;
        for (k, v) in &other.attractors {
            *self
                .attractors
                .entry(k.clone())
                .or_insert_with(|| Array1::zeros(v.len())) += v;
        }
        match (&mut self.neti, &other.neti) {
            (Some(a), Some(b)) => a.add_assign(b),
            (None, Some(b)) => self.neti = Some(b.clone()),
            _ => {}
        }
    }

    pub fn scale(&mut self, k: f64) {
        self.subject *= k;
        for v in self.attractors.values_mut() {
            *v *= k;
        }
        if let Some(n) = &mut self.neti {
            n.scale(k);
        }
    }
}

fn check_dims(encoder: &TextEncoder, table: &TokenTable, method: &EmbedMethod) -> Result<()> {
    if table.dim != encoder.dim() {
        return Err(Error::Init(format!(
            "token dimension {} does not match encoder width {}",
            table.dim,
            encoder.dim()
        )));
    }
    if let EmbedMethod::Neti(m) = method {
        if m.dim() != encoder.dim() {
            return Err(Error::Init(format!(
                "NeTI output dimension {} does not match encoder width {}",
                m.dim(),
                encoder.dim()
            )));
        }
    }
    Ok(())
}

/// Embed `prompt`, substituting `<v*>` and `<A*>` with learnable vectors and
/// running the frozen encoder. `t` is required on the NeTI path and
/// `image_id` whenever the prompt contains `<A*>`.
pub fn embed_prompt(
    encoder: &TextEncoder,
    prompt: &str,
    table: &TokenTable,
    method: EmbedMethod,
    t: Option<usize>,
    image_id: Option<&str>,
) -> Result<ConditioningBundle> {
    check_dims(encoder, table, &method)?;
    let tokens = encoder.tokenize(prompt);
    let mut positions = BTreeMap::new();
    for (i, tok) in tokens.iter().enumerate() {
        if let PromptToken::Pseudo(p) = tok {
            if positions.insert(*p, i).is_some() {
                return Err(Error::Conditioning(format!("`{p}` appears more than once in `{prompt}`")));
            }
        }
    }
    let attractor = if positions.contains_key(&PseudoToken::Attractor) {
        let id = image_id.ok_or_else(|| Error::UnknownToken(format!("`<A*>` in `{prompt}` without an image id")))?;
        Some(table.attractor(id)?.clone())
    } else {
        None
    };
    let d = encoder.dim();
    let base = Array2::from_shape_fn((tokens.len(), d), |(i, j)| match tokens[i] {
        PromptToken::Pseudo(PseudoToken::Subject) => table.subject[j],
        PromptToken::Pseudo(PseudoToken::Attractor) => attractor.as_ref().expect("resolved above")[j],
        tok => encoder.token_embedding(tok).expect("word token")[j],
    });
    let (inputs, contextual) = match method {
        EmbedMethod::TextualInversion => {
            let out = encoder.encode(&base)?;
            (vec![base], LayerConditioning::Shared(out))
        }
        EmbedMethod::Neti(m) => {
            let t = t.ok_or_else(|| Error::Conditioning("NeTI conditioning needs a timestep".into()))?;
            let mut inputs = Vec::with_capacity(m.layers());
            let mut outs = Vec::with_capacity(m.layers());
            for l in 0..m.layers() {
                let mut seq = base.clone();
                if let Some(&pos) = positions.get(&PseudoToken::Subject) {
                    seq.row_mut(pos).assign(&m.forward(t, l)?);
                }
                outs.push(encoder.encode(&seq)?);
                inputs.push(seq);
            }
            (inputs, LayerConditioning::PerLayer(outs))
        }
    };
    Ok(ConditioningBundle {
        tokens,
        inputs,
        contextual,
        positions,
        t,
        image_id: image_id.map(str::to_string),
    })
}

/// Contextual vector of `token` at `layer`; the layer is ignored when the
/// conditioning is shared.
pub fn extract_contextual(bundle: &ConditioningBundle, token: PseudoToken, layer: usize) -> Result<Array1<f64>> {
    let pos = *bundle
        .positions
        .get(&token)
        .ok_or_else(|| Error::UnknownToken(format!("`{token}` not present in prompt")))?;
    let seq = bundle.contextual.layer(layer).ok_or(Error::Index {
        what: "layer",
        index: layer,
        bound: bundle.contextual.sequences().len(),
    })?;
    Ok(seq.row(pos).to_owned())
}

/// A zero conditioning gradient shaped like `bundle.contextual`.
pub fn zero_grad(bundle: &ConditioningBundle) -> LayerConditioning {
    match &bundle.contextual {
        LayerConditioning::Shared(s) => LayerConditioning::Shared(Array2::zeros(s.dim())),
        LayerConditioning::PerLayer(v) => LayerConditioning::PerLayer(v.iter().map(|s| Array2::zeros(s.dim())).collect()),
    }
}

/// Add `grad` to the contextual row of `token` at `layer` inside `acc`.
pub fn add_row_grad(
    acc: &mut LayerConditioning,
    bundle: &ConditioningBundle,
    token: PseudoToken,
    layer: usize,
    grad: &Array1<f64>,
) -> Result<()> {
    let pos = *bundle
        .positions
        .get(&token)
        .ok_or_else(|| Error::UnknownToken(format!("`{token}` not present in prompt")))?;
    let seq = match acc {
        LayerConditioning::Shared(s) => s,
        LayerConditioning::PerLayer(v) => {
            let n = v.len();
            v.get_mut(layer).ok_or(Error::Index {
                what: "layer",
                index: layer,
                bound: n,
            })?
        }
    };
    let mut row = seq.row_mut(pos);
    row += grad;
    Ok(())
}

/// Pull a gradient on the contextual conditioning back to the subject
/// token (or mapper parameters) and the attractor of the bundle's image.
pub fn backprop_bundle(
    encoder: &TextEncoder,
    bundle: &ConditioningBundle,
    method: EmbedMethod,
    grad: &LayerConditioning,
) -> Result<TokenGrads> {
    let grads_in: Vec<&Sequence> = match (&bundle.contextual, grad) {
        (LayerConditioning::Shared(_), LayerConditioning::Shared(g)) => vec![g],
        (LayerConditioning::PerLayer(a), LayerConditioning::PerLayer(g)) if a.len() == g.len() => g.iter().collect(),
        _ => return Err(Error::Conditioning("gradient layout differs from the bundle".into())),
    };
    let neti = match method {
        EmbedMethod::Neti(m) => Some(m),
        EmbedMethod::TextualInversion => None,
    };
    let mut out = TokenGrads::new(encoder.dim(), neti);
    for (l, (input, g)) in bundle.inputs.iter().zip(grads_in).enumerate() {
        let dx = encoder.encode_vjp(input, g)?;
        if let Some(&pos) = bundle.positions.get(&PseudoToken::Subject) {
            let row = dx.row(pos).to_owned();
            match method {
                EmbedMethod::TextualInversion => out.subject += &row,
                EmbedMethod::Neti(m) => {
                    let t = bundle.t.expect("NeTI bundles carry t");
                    out.neti
                        .as_mut()
                        .expect("allocated for NeTI")
                        .add_assign(&m.backward(t, l, &row)?);
                }
            }
        }
        if let Some(&pos) = bundle.positions.get(&PseudoToken::Attractor) {
            let id = bundle.image_id.clone().expect("attractor bundles carry an image id");
            *out
                .attractors
                .entry(id)
                .or_insert_with(|| Array1::zeros(encoder.dim())) += &dx.row(pos);
        }
    }
    Ok(out)
}

/// Time-dependent conditioning source for sampling with learned tokens.
pub struct PromptConditioner<'a> {
    encoder: &'a TextEncoder,
    table: &'a TokenTable,
    method: EmbedMethod<'a>,
    prompt: String,
    image_id: Option<String>,
    fixed: Option<LayerConditioning>,
}

impl<'a> PromptConditioner<'a> {
    pub fn new(
        encoder: &'a TextEncoder,
        table: &'a TokenTable,
        method: EmbedMethod<'a>,
        prompt: &str,
        image_id: Option<&str>,
    ) -> Result<Self> {
        let fixed = match method {
            EmbedMethod::TextualInversion => {
                Some(embed_prompt(encoder, prompt, table, method, None, image_id)?.contextual)
            }
            EmbedMethod::Neti(_) => {
                embed_prompt(encoder, prompt, table, method, Some(0), image_id)?;
                None
            }
        };
        Ok(Self {
            encoder,
            table,
            method,
            prompt: prompt.to_string(),
            image_id: image_id.map(str::to_string),
            fixed,
        })
    }
}

impl ConditioningSource for PromptConditioner<'_> {
    fn conditioning_at(&self, t: usize) -> Result<LayerConditioning> {
        if let Some(c) = &self.fixed {
            return Ok(c.clone());
        }
        Ok(embed_prompt(self.encoder, &self.prompt, self.table, self.method, Some(t), self.image_id.as_deref())?.contextual)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{synth_toy_dataset, SynthSpec};
    use crate::embedders::encoder::EncoderConfig;
    use crate::embedders::tokens::{register_tokens, TokenInit};
    use crate::gradcheck::{central_difference, relative_error};

    fn setup() -> (TextEncoder, TokenTable, String) {
        let enc = TextEncoder::new(EncoderConfig {
            embed_dim: 6,
            ..Default::default()
        })
        .unwrap();
        let data = synth_toy_dataset(&SynthSpec::default()).unwrap();
        let subject = &data.manifest.subjects[0];
        let table = register_tokens(subject, 6, TokenInit::Random, &enc, 3).unwrap();
        let id = subject.train_images[0].id();
        (enc, table, id)
    }

    #[test]
    fn attractor_needs_image_id() {
        let (enc, table, _) = setup();
        let err = embed_prompt(&enc, "a photo of <v*> on <A*>", &table, EmbedMethod::TextualInversion, None, None);
        assert!(matches!(err, Err(Error::UnknownToken(_))));
        let err = embed_prompt(&enc, "a <A*>", &table, EmbedMethod::TextualInversion, None, Some("nope"));
        assert!(matches!(err, Err(Error::UnknownToken(_))));
    }

    #[test]
    fn duplicate_marker_rejected() {
        let (enc, table, _) = setup();
        let err = embed_prompt(&enc, "<v*> and <v*>", &table, EmbedMethod::TextualInversion, None, None);
        assert!(matches!(err, Err(Error::Conditioning(_))));
    }

    #[test]
    fn dimension_mismatch_is_init_error() {
        let (enc, mut table, _) = setup();
        table.dim = 7;
        table.subject = Array1::zeros(7);
        let err = embed_prompt(&enc, "a <v*>", &table, EmbedMethod::TextualInversion, None, None);
        assert!(matches!(err, Err(Error::Init(_))));
    }

    #[test]
    fn identity_encoder_exposes_raw_tokens() {
        let (_, table, id) = setup();
        let enc = TextEncoder::identity(6, 0).unwrap();
        let b = embed_prompt(&enc, "a photo of <v*> in <A*>", &table, EmbedMethod::TextualInversion, None, Some(&id))
            .unwrap();
        assert_eq!(extract_contextual(&b, PseudoToken::Subject, 3).unwrap(), table.subject);
        assert_eq!(&extract_contextual(&b, PseudoToken::Attractor, 0).unwrap(), table.attractor(&id).unwrap());
    }

    #[test]
    fn ti_backprop_matches_finite_differences() {
        let (enc, table, id) = setup();
        let prompt = "a photo of <v*> in the <A*>";
        let b = embed_prompt(&enc, prompt, &table, EmbedMethod::TextualInversion, None, Some(&id)).unwrap();
        let w = Array2::from_shape_fn(b.inputs[0].dim(), |(i, j)| ((i * 7 + j * 3) % 5) as f64 - 2.0);
        let g = backprop_bundle(&enc, &b, EmbedMethod::TextualInversion, &LayerConditioning::Shared(w.clone()))
            .unwrap();
        let objective = |tab: &TokenTable| {
            let b = embed_prompt(&enc, prompt, tab, EmbedMethod::TextualInversion, None, Some(&id)).unwrap();
            (b.contextual.sequences()[0].clone() * &w).sum()
        };
        for i in 0..6 {
            let n = central_difference(
                |h| {
                    let mut t = table.clone();
                    t.subject[i] += h;
                    objective(&t)
                },
                1e-5,
            );
            assert!(relative_error(g.subject[i], n) < 1e-4);
            let n = central_difference(
                |h| {
                    let mut t = table.clone();
                    t.attractors.get_mut(&id).unwrap()[i] += h;
                    objective(&t)
                },
                1e-5,
            );
            assert!(relative_error(g.attractors[&id][i], n) < 1e-4);
        }
    }

    #[test]
    fn neti_path_uses_per_layer_vectors() {
        let (enc, table, _) = setup();
        let mut m = NetiEmbedder::new(1000, 3, &table.subject, 8, 1).unwrap();
        m.w2.mapv_inplace(|v| v * 100.0);
        let b = embed_prompt(&enc, "a <v*>", &table, EmbedMethod::Neti(&m), Some(100), None).unwrap();
        assert_eq!(b.contextual.sequences().len(), 3);
        assert_ne!(b.inputs[0], b.inputs[1]);
        let w: Vec<Sequence> = b.inputs.iter().map(|s| Array2::from_elem(s.dim(), 0.5)).collect();
        let g = backprop_bundle(&enc, &b, EmbedMethod::Neti(&m), &LayerConditioning::PerLayer(w.clone())).unwrap();
        let ng = g.neti.unwrap();
        let objective = |m: &NetiEmbedder| {
            let b = embed_prompt(&enc, "a <v*>", &table, EmbedMethod::Neti(m), Some(100), None).unwrap();
            b.contextual.sequences().iter().zip(&w).map(|(s, w)| (s * w).sum()).sum::<f64>()
        };
        for i in 0..ng.b2.len() {
            let n = central_difference(
                |h| {
                    let mut p = m.clone();
                    p.b2[i] += h;
                    objective(&p)
                },
                1e-5,
            );
            assert!(relative_error(ng.b2[i], n) < 1e-4);
        }
        assert!(embed_prompt(&enc, "a <v*>", &table, EmbedMethod::Neti(&m), None, None).is_err());
    }
}
