//! Reader layers operating on one contiguous token window.

mod attention;
mod embed;
mod head;
mod recurrent;
mod stack;

pub use attention::{BiAttention, SelfAttention};
pub use embed::Embedding;
pub use head::{PredictionHead, SpanLogits};
pub use recurrent::{Gru, GruDirection, RecurrentOutput};
pub use stack::{EncodedWindow, WindowEncoder, WindowInit};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Directionality {
    #[default]
    Bidirectional,
    /// Every layer only sees positions at or before the current one.
    UnidirectionalPastOnly,
}

impl Directionality {
    pub fn num_directions(self) -> usize {
        match self {
            Directionality::Bidirectional => 2,
            Directionality::UnidirectionalPastOnly => 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LayerConfig {
    pub vocab_size: usize,
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub attention_enabled: bool,
    pub self_attention_enabled: bool,
    pub directionality: Directionality,
}

impl Default for LayerConfig {
    fn default() -> Self {
        LayerConfig {
            vocab_size: 200,
            embed_dim: 32,
            hidden_dim: 32,
            attention_enabled: true,
            self_attention_enabled: true,
            directionality: Directionality::Bidirectional,
        }
    }
}

impl LayerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.vocab_size == 0 || self.embed_dim == 0 || self.hidden_dim == 0 {
            return Err(Error::Config(format!(
                "layer dims must be positive: vocab {}, embed {}, hidden {}",
                self.vocab_size, self.embed_dim, self.hidden_dim
            )));
        }
        Ok(())
    }

    /// Width of every recurrent layer's output (all directions concatenated).
    pub fn repr_dim(&self) -> usize {
        self.hidden_dim * self.directionality.num_directions()
    }
}
