use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::site::{AttachmentSite, SiteKind};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HostConfig {
    pub n_layers: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    pub vocab_size: usize,
    pub max_seq: usize,
    pub seed: u64,
}

impl Default for HostConfig {
    fn default() -> Self {
        Self {
            n_layers: 2,
            d_model: 64,
            n_heads: 4,
            d_ff: 128,
            vocab_size: 128,
            max_seq: 64,
            seed: 8989,
        }
    }
}

impl HostConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("d_model", self.d_model),
            ("n_heads", self.n_heads),
            ("d_ff", self.d_ff),
            ("vocab_size", self.vocab_size),
            ("max_seq", self.max_seq),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("host {name} must be positive")));
        }
        if !self.d_model.is_multiple_of(self.n_heads) {
            return Err(Error::Config(format!(
                "d_model {} is not divisible by n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        Ok(())
    }

    /// Every attachment site: 7 per layer plus the LM head.
    pub fn sites(&self) -> Vec<AttachmentSite> {
        let mut out: Vec<_> = (0..self.n_layers)
            .flat_map(|l| SiteKind::LAYER_KINDS.map(|k| AttachmentSite::new(l, k)))
            .collect();
        out.push(AttachmentSite::lm_head(self.n_layers));
        out
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }
}
