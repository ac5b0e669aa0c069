use serde::{Deserialize, Serialize};

use super::vocab::{CELL_KINDS, VOCAB_SIZE};
use super::ModelError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub layers: usize,
    pub hidden: usize,
    pub heads: usize,
    pub mlp_hidden: usize,
    pub vocab_size: usize,
    pub max_positions: usize,
    /// Largest patch count of any single image segment.
    pub max_patches: usize,
    /// Length of the feature vector carried by one image patch.
    pub patch_features: usize,
    pub init_std: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            layers: 3,
            hidden: 64,
            heads: 4,
            mlp_hidden: 128,
            vocab_size: VOCAB_SIZE,
            max_positions: 192,
            max_patches: 16,
            patch_features: CELL_KINDS,
            init_std: 0.02,
        }
    }
}

impl ModelConfig {
    /// Small shape used by gradient checks.
    pub fn tiny(layers: usize, hidden: usize) -> Self {
        Self {
            layers,
            hidden,
            heads: 2,
            mlp_hidden: 2 * hidden,
            max_positions: 96,
            ..Self::default()
        }
    }

    pub fn head_dim(&self) -> usize {
        self.hidden / self.heads
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: &str| Err(ModelError::Config(m.to_string()));
        if self.layers == 0 || self.hidden == 0 || self.heads == 0 || self.mlp_hidden == 0 {
            return bad("layers, hidden, heads and mlp_hidden must be positive");
        }
        if !self.hidden.is_multiple_of(self.heads) {
            return bad("hidden must be divisible by heads");
        }
        if self.vocab_size != VOCAB_SIZE {
            return bad("vocab_size must match the fixed vocabulary");
        }
        if self.patch_features != CELL_KINDS {
            return bad("patch_features must equal the number of cell kinds");
        }
        if self.max_positions == 0 || self.max_patches == 0 {
            return bad("max_positions and max_patches must be positive");
        }
        Ok(())
    }
}
