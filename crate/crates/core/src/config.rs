// SPDX-License-Identifier: MIT OR Apache-2.0

//! Versioned run configuration (TOML).

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::aggregation::CiMethod;
use crate::error::{Error, Result};
use crate::model::Component;

pub const CONFIG_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TokenizerChoice {
    /// Whitespace-and-punctuation splitter over the bundle vocabulary.
    Word,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CiChoice {
    Normal,
    Bootstrap,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub version: u32,
    pub weights_path: Option<PathBuf>,
    pub tokenizer: TokenizerChoice,
    pub seed: u64,
    pub n_noise_runs: usize,
    pub noise_multiplier: f64,
    pub confidence_threshold: usize,
    pub topk_confidence: usize,
    pub topk_bias: usize,
    pub popularity_threshold: u64,
    pub component: Component,
    pub window_radius: usize,
    pub normalized: bool,
    pub ci: CiChoice,
    pub bootstrap_resamples: usize,
    pub output_dir: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            version: CONFIG_VERSION,
            weights_path: None,
            tokenizer: TokenizerChoice::Word,
            seed: 0,
            n_noise_runs: 10,
            noise_multiplier: 3.0,
            confidence_threshold: 5,
            topk_confidence: 3,
            topk_bias: 10,
            popularity_threshold: 1000,
            component: Component::Mlp,
            window_radius: 5,
            normalized: true,
            ci: CiChoice::Normal,
            bootstrap_resamples: 1000,
            output_dir: None,
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let c: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&crate::io::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != CONFIG_VERSION {
            return Err(Error::Config(format!(
                "config version {} is not supported (expected {CONFIG_VERSION})",
                self.version
            )));
        }
        let counts = [
            ("n_noise_runs", self.n_noise_runs),
            ("confidence_threshold", self.confidence_threshold),
            ("topk_confidence", self.topk_confidence),
            ("topk_bias", self.topk_bias),
            ("bootstrap_resamples", self.bootstrap_resamples),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if self.popularity_threshold == 0 {
            return Err(Error::Config("popularity_threshold must be positive".into()));
        }
        if !(self.noise_multiplier.is_finite() && self.noise_multiplier > 0.0) {
            return Err(Error::Config("noise_multiplier must be positive".into()));
        }
        Ok(())
    }

    pub fn ci_method(&self) -> CiMethod {
        match self.ci {
            CiChoice::Normal => CiMethod::Normal,
            CiChoice::Bootstrap => CiMethod::Bootstrap {
                resamples: self.bootstrap_resamples,
                seed: self.seed,
            },
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_and_roundtrip() {
        let c = RunConfig::from_toml("version = 1\n").unwrap();
        assert_eq!(c, RunConfig::default());
        assert_eq!((c.n_noise_runs, c.noise_multiplier), (10, 3.0));
        assert_eq!((c.confidence_threshold, c.topk_confidence, c.topk_bias), (5, 3, 10));
        assert_eq!(c.popularity_threshold, 1000);
        assert_eq!(RunConfig::from_toml(&c.to_toml().unwrap()).unwrap(), c);
    }

    #[test]
    fn rejects_bad_values() {
        assert!(RunConfig::from_toml("version = 2\n").is_err());
        assert!(RunConfig::from_toml("topk_bias = 0\n").is_err());
        assert!(RunConfig::from_toml("nonsense = 1\n").is_err());
        let c = RunConfig::from_toml("component = \"attn\"\nci = \"bootstrap\"\nseed = 4\n").unwrap();
        assert_eq!(c.component, Component::Attn);
        assert_eq!(c.ci_method(), CiMethod::Bootstrap { resamples: 1000, seed: 4 });
    }
}
