use rand_chacha::ChaCha8Rng;

use super::attention::{BiAttention, SelfAttention};
use super::{Embedding, Gru, LayerConfig};
use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::scalar::Scalar;
use crate::tensor::{Tape, Var};

/// Embedding → contextual GRU → attention flow → modeling GRU → self-attention.
#[derive(Debug, Clone)]
pub struct WindowEncoder {
    pub config: LayerConfig,
    pub embedding: Embedding,
    pub contextual: Gru,
    pub attention: BiAttention,
    pub modeling: Gru,
    pub self_attention: SelfAttention,
}

/// Initial recurrent states for one window; `None` uses the learned defaults.
#[derive(Debug, Clone, Default)]
pub struct WindowInit {
    pub contextual: Option<Vec<Var>>,
    pub modeling: Option<Vec<Var>>,
}

#[derive(Debug, Clone)]
pub struct EncodedWindow {
    pub len: usize,
    /// Output of the last encoder layer, `L × repr_dim`.
    pub token_reprs: Var,
    /// Attention flow output, `L × 4·repr_dim`.
    pub attention_output: Var,
    /// Modeling-layer output, `L × repr_dim`.
    pub modeling_output: Var,
    pub contextual_finals: Vec<Var>,
    pub modeling_finals: Vec<Var>,
}

impl WindowEncoder {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, config: &LayerConfig, rng: &mut ChaCha8Rng) -> Result<Self> {
        config.validate()?;
        let dir = config.directionality;
        let repr = config.repr_dim();
        Ok(WindowEncoder {
            config: config.clone(),
            embedding: Embedding::new(store, "embed", config.vocab_size, config.embed_dim, rng)?,
            contextual: Gru::new(store, "contextual", config.embed_dim, config.hidden_dim, dir, rng)?,
            attention: BiAttention::new(store, "attention", repr, rng)?,
            modeling: Gru::new(store, "modeling", 4 * repr, config.hidden_dim, dir, rng)?,
            self_attention: SelfAttention::new(store, "self_attention", repr, rng)?,
        })
    }

    pub fn repr_dim(&self) -> usize {
        self.config.repr_dim()
    }

    /// Contextual encoding of the question, `Lq × repr_dim`.
    pub fn encode_question<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        store: &ParamStore<T>,
        question: &[usize],
    ) -> Result<Var> {
        if question.is_empty() {
            return Err(Error::invalid("encode_question", "question has no tokens"));
        }
        let emb = self.embedding.forward(tape, store, question)?;
        Ok(self.contextual.forward(tape, store, emb, None)?.states)
    }

    pub fn encode_window<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        store: &ParamStore<T>,
        tokens: &[usize],
        question: Var,
        init: &WindowInit,
    ) -> Result<EncodedWindow> {
        if tokens.is_empty() {
            return Err(Error::invalid("encode_window", "window has no tokens"));
        }
        let cfg = &self.config;
        let emb = self.embedding.forward(tape, store, tokens)?;
        let ctx = self.contextual.forward(tape, store, emb, init.contextual.as_deref())?;
        let att = self.attention.forward(
            tape,
            store,
            ctx.states,
            question,
            cfg.directionality,
            cfg.attention_enabled,
        )?;
        let model = self
            .modeling
            .forward(tape, store, att.output, init.modeling.as_deref())?;
        let sa = self.self_attention.forward(
            tape,
            store,
            model.states,
            cfg.directionality,
            cfg.self_attention_enabled,
        )?;
        Ok(EncodedWindow {
            len: tokens.len(),
            token_reprs: sa.output,
            attention_output: att.output,
            modeling_output: model.states,
            contextual_finals: ctx.finals,
            modeling_finals: model.finals,
        })
    }
}
