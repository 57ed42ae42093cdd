//! Text side of the pipeline: frozen encoder, learnable pseudo-tokens and
//! the timestep/layer-conditioned subject mapper.

pub mod conditioning;
pub mod encoder;
pub mod neti;
pub mod tokens;
mod vocab;

pub use conditioning::{
    backprop_bundle, embed_prompt, extract_contextual, ConditioningBundle, EmbedMethod, PromptConditioner, TokenGrads,
};
pub use encoder::{EncoderConfig, PromptToken, PseudoToken, TextEncoder, ATTRACTOR_MARKER, SUBJECT_MARKER};
pub use neti::{NetiEmbedder, NetiGrads};
pub use tokens::{register_tokens, TokenInit, TokenTable};
