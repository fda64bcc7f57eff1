//! Study configuration, read from TOML.
//!
//! ```toml
//! seeds = [8989, 8990, 8991]
//! techniques = ["output-sum", "output-average", "weight-average-factors"]
//! sites = []            # empty = every site
//!
//! [host]
//! d_model = 64
//!
//! [train]
//! learning_rate = 1e-2
//!
//! [[family]]
//! attribute = "sentiment"
//! labels = ["positive", "negative"]
//!
//! [[family.source]]
//! name = "sent-a"
//! size = 2000
//! filler = [0, 30]
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::compose::CompositionStrategy;
use crate::data::{SynthSpec, Vocab};
use crate::error::{Error, Result};
use crate::host::HostConfig;
use crate::site::AttachmentSite;
use crate::trainer::TrainConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StudyConfig {
    pub host: HostConfig,
    /// Quantize the frozen host weights with this block size (0 = keep f64).
    pub quant_block: usize,
    pub train: TrainConfig,
    /// One training run per seed; tables report mean and sample std over seeds.
    pub seeds: Vec<u64>,
    pub techniques: Vec<CompositionStrategy>,
    /// Site names such as `layer0.q` or `lm_head`; empty means every site.
    pub sites: Vec<String>,
    pub data_seed: u64,
    pub max_new_tokens: usize,
    /// Sampling temperature for evaluation; 0 decodes greedily.
    pub temperature: f64,
    /// Test prompts per source (0 = the whole test split).
    pub eval_limit: usize,
    /// Out-of-domain leads per control value (0 = no OOD set).
    pub ood_leads: usize,
    /// Also run the multi-attribute table when there are two or more families.
    pub multi_attribute: bool,
    pub family: Vec<FamilyConfig>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FamilyConfig {
    pub attribute: String,
    pub labels: Vec<String>,
    pub source: Vec<SourceConfig>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SourceConfig {
    pub name: String,
    /// Total items before the 80/10/10 split.
    pub size: usize,
    #[serde(default = "default_min_words")]
    pub min_words: usize,
    #[serde(default = "default_max_words")]
    pub max_words: usize,
    #[serde(default = "default_density")]
    pub marker_density: f64,
    /// Half-open range into the filler words `f00..f59`.
    #[serde(default = "default_filler")]
    pub filler: [usize; 2],
}

fn default_min_words() -> usize {
    10
}
fn default_max_words() -> usize {
    16
}
fn default_density() -> f64 {
    0.7
}
fn default_filler() -> [usize; 2] {
    [0, 60]
}

impl SourceConfig {
    pub fn new(name: &str, size: usize, filler: [usize; 2]) -> Self {
        Self {
            name: name.to_string(),
            size,
            min_words: default_min_words(),
            max_words: default_max_words(),
            marker_density: default_density(),
            filler,
        }
    }
}

impl FamilyConfig {
    pub fn combined_name(&self) -> String {
        format!("{}-combined", self.attribute)
    }

    pub fn synth_spec(&self, vocab: &Vocab, source: &SourceConfig) -> Result<SynthSpec> {
        let [lo, hi] = source.filler;
        let fillers = vocab.fillers();
        if lo >= hi || hi > fillers.len() {
            return Err(Error::Config(format!(
                "{}: filler range [{lo}, {hi}) outside 0..{}",
                source.name,
                fillers.len()
            )));
        }
        let labels: Vec<&str> = self.labels.iter().map(String::as_str).collect();
        let mut spec = SynthSpec::standard(vocab, &source.name, &self.attribute, &labels, fillers[lo..hi].to_vec())?;
        spec.min_words = source.min_words;
        spec.max_words = source.max_words;
        spec.marker_density = source.marker_density;
        spec.validate()?;
        Ok(spec)
    }
}

impl Default for StudyConfig {
    /// The toy study: two sentiment and two topic sources, disjoint filler halves.
    fn default() -> Self {
        let sentiment = FamilyConfig {
            attribute: "sentiment".into(),
            labels: vec!["positive".into(), "negative".into()],
            source: vec![SourceConfig::new("sent-a", 2000, [0, 30]), SourceConfig::new("sent-b", 2000, [30, 60])],
        };
        let topic = FamilyConfig {
            attribute: "topic".into(),
            labels: ["world", "sports", "business", "scitech"].map(String::from).to_vec(),
            source: vec![SourceConfig::new("topic-a", 2000, [0, 30]), SourceConfig::new("topic-b", 2000, [30, 60])],
        };
        Self {
            host: HostConfig::default(),
            quant_block: 0,
            train: toy_train_config(),
            seeds: vec![8989, 8990, 8991],
            techniques: vec![
                CompositionStrategy::OutputSum,
                CompositionStrategy::OutputAverage,
                CompositionStrategy::WeightAverageFactors,
            ],
            sites: Vec::new(),
            data_seed: 8989,
            max_new_tokens: 24,
            temperature: 1.0,
            eval_limit: 0,
            ood_leads: 4,
            multi_attribute: true,
            family: vec![sentiment, topic],
        }
    }
}

/// Training settings that make the toy adapters learn within three epochs.
pub fn toy_train_config() -> TrainConfig {
    TrainConfig {
        learning_rate: 1e-2,
        r: 8,
        alpha: 16.0,
        validation_limit: 60,
        ..TrainConfig::default()
    }
}

impl StudyConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: StudyConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("study config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.host.validate()?;
        self.train.validate()?;
        if self.seeds.is_empty() {
            return Err(Error::Config("seeds must not be empty".into()));
        }
        if self.family.is_empty() {
            return Err(Error::Config("at least one [[family]] is required".into()));
        }
        if self.max_new_tokens == 0 {
            return Err(Error::Config("max_new_tokens must be positive".into()));
        }
        if !(self.temperature >= 0.0) || !self.temperature.is_finite() {
            return Err(Error::Config("temperature must be finite and non-negative".into()));
        }
        let mut names = std::collections::BTreeSet::new();
        for fam in &self.family {
            if fam.labels.is_empty() || fam.source.is_empty() {
                return Err(Error::Config(format!("family {:?} needs labels and sources", fam.attribute)));
            }
            for name in fam.source.iter().map(|s| s.name.clone()).chain([fam.combined_name()]) {
                if name.is_empty() || name.contains(['/', '\\', ',']) {
                    return Err(Error::Config(format!("invalid dataset name {name:?}")));
                }
                if !names.insert(name.clone()) {
                    return Err(Error::Config(format!("dataset name {name:?} is used twice")));
                }
            }
            if self.family.iter().filter(|f| f.attribute == fam.attribute).count() > 1 {
                return Err(Error::Config(format!("attribute {:?} appears in two families", fam.attribute)));
            }
        }
        let vocab = Vocab::standard();
        if self.host.vocab_size != vocab.len() {
            return Err(Error::Config(format!(
                "host vocab_size {} must match the {}-token study vocabulary",
                self.host.vocab_size,
                vocab.len()
            )));
        }
        if self.host.max_seq < self.max_new_tokens + 40 {
            return Err(Error::Config("host max_seq is too short for prompts plus max_new_tokens".into()));
        }
        for fam in &self.family {
            for s in &fam.source {
                fam.synth_spec(&vocab, s)?;
            }
        }
        self.resolve_sites()?;
        Ok(())
    }

    /// Attachment sites named in `sites`, or every host site.
    pub fn resolve_sites(&self) -> Result<Vec<AttachmentSite>> {
        let all = self.host.sites();
        if self.sites.is_empty() {
            return Ok(all);
        }
        self.sites
            .iter()
            .map(|name| {
                all.iter()
                    .copied()
                    .find(|s| s.to_string() == *name)
                    .ok_or_else(|| Error::UnknownSite(name.clone()))
            })
            .collect()
    }
}
