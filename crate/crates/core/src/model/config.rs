// SPDX-License-Identifier: MIT OR Apache-2.0

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Hyperparameters of a pre-layernorm GPT-2-style decoder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub n_layers: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub d_mlp: usize,
    pub vocab_size: usize,
    pub max_seq_len: usize,
    pub layernorm_epsilon: f64,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("n_layers", self.n_layers),
            ("d_model", self.d_model),
            ("n_heads", self.n_heads),
            ("d_mlp", self.d_mlp),
            ("vocab_size", self.vocab_size),
        ];
        for (name, value) in counts {
            if value == 0 {
                return Err(Error::InvalidConfig(format!("{name} must be at least 1")));
            }
        }
        if self.max_seq_len < 2 {
            return Err(Error::InvalidConfig("max_seq_len must be at least 2".into()));
        }
        if self.d_model % self.n_heads != 0 {
            return Err(Error::InvalidConfig(format!(
                "d_model {} is not divisible by n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        if !(self.layernorm_epsilon.is_finite() && self.layernorm_epsilon > 0.0) {
            return Err(Error::InvalidConfig(
                "layernorm_epsilon must be a small positive real".into(),
            ));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }

    /// Every tensor the config implies, in canonical file order.
    pub fn tensor_manifest(&self) -> Vec<(String, Vec<usize>)> {
        let d = self.d_model;
        let mut out = vec![
            ("wte".to_string(), vec![self.vocab_size, d]),
            ("wpe".to_string(), vec![self.max_seq_len, d]),
        ];
        for l in 0..self.n_layers {
            let p = format!("blocks.{l}");
            out.push((format!("{p}.ln_1.weight"), vec![d]));
            out.push((format!("{p}.ln_1.bias"), vec![d]));
            out.push((format!("{p}.attn.c_attn.weight"), vec![d, 3 * d]));
            out.push((format!("{p}.attn.c_attn.bias"), vec![3 * d]));
            out.push((format!("{p}.attn.c_proj.weight"), vec![d, d]));
            out.push((format!("{p}.attn.c_proj.bias"), vec![d]));
            out.push((format!("{p}.ln_2.weight"), vec![d]));
            out.push((format!("{p}.ln_2.bias"), vec![d]));
            out.push((format!("{p}.mlp.c_fc.weight"), vec![d, self.d_mlp]));
            out.push((format!("{p}.mlp.c_fc.bias"), vec![self.d_mlp]));
            out.push((format!("{p}.mlp.c_proj.weight"), vec![self.d_mlp, d]));
            out.push((format!("{p}.mlp.c_proj.bias"), vec![d]));
        }
        out.push(("ln_f.weight".to_string(), vec![d]));
        out.push(("ln_f.bias".to_string(), vec![d]));
        out.push(("unembed".to_string(), vec![d, self.vocab_size]));
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn base() -> ModelConfig {
        ModelConfig {
            n_layers: 2,
            d_model: 64,
            n_heads: 4,
            d_mlp: 128,
            vocab_size: 256,
            max_seq_len: 32,
            layernorm_epsilon: 1e-5,
        }
    }

    #[test]
    fn rejects_indivisible_heads() {
        let cfg = ModelConfig {
            n_heads: 5,
            ..base()
        };
        assert!(cfg.validate().is_err());
        assert!(base().validate().is_ok());
    }

    #[test]
    fn rejects_short_context_and_zero_counts() {
        assert!(ModelConfig {
            max_seq_len: 1,
            ..base()
        }
        .validate()
        .is_err());
        assert!(ModelConfig {
            n_layers: 0,
            ..base()
        }
        .validate()
        .is_err());
    }

    #[test]
    fn manifest_covers_every_layer() {
        let m = base().tensor_manifest();
        assert_eq!(m.len(), 2 + 12 * 2 + 3);
        assert_eq!(m.last().unwrap().1, vec![64, 256]);
    }
}
