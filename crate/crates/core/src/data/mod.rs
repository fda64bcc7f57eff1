//! Attribute-tagged corpora: synthetic generation, the filter / balance / stratify
//! pipeline that builds combined datasets, prompt construal and dataset files.

mod io;
mod pipeline;
mod prompt;
mod synth;
mod vocab;

use std::collections::BTreeMap;
use std::sync::Arc;

pub use io::{decode_dataset, encode_dataset, read_dataset, write_dataset};
pub use pipeline::{
    balance_smallest, build_combined, filter_items, stratified_sample, Combined, LengthBuckets, Sampled, MIN_WORDS,
};
pub use prompt::{
    control_prefix, detag, make_prompt_pair, ood_prompts, prompt_pairs, PromptExample, MAX_LEADING_WORDS,
};
pub use synth::{gen_synthetic, gen_synthetic_splits, SplitSizes, SynthSpec};
pub use vocab::{Vocab, ATTRIBUTES, NEUTRAL, SENTIMENT_LABELS, TOPIC_LABELS};

use crate::error::{Error, Result};
use crate::host::TokenId;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AttributeSchema {
    pub name: String,
    pub labels: Vec<String>,
}

impl AttributeSchema {
    pub fn new(name: impl Into<String>, labels: &[&str]) -> Self {
        Self {
            name: name.into(),
            labels: labels.iter().map(|s| s.to_string()).collect(),
        }
    }
}

/// One text with its attribute labels. Strings are shared to keep large corpora compact.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabeledText {
    pub tokens: Vec<TokenId>,
    pub attributes: Vec<(Arc<str>, Arc<str>)>,
    pub source: Arc<str>,
}

impl LabeledText {
    pub fn label(&self, attribute: &str) -> Option<&str> {
        self.attributes
            .iter()
            .find(|(a, _)| &**a == attribute)
            .map(|(_, l)| &**l)
    }

    pub fn word_count(&self) -> usize {
        self.tokens.len()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Split {
    Train,
    Validation,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Validation, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Validation => "validation",
            Split::Test => "test",
        }
    }

    pub fn parse(s: &str) -> Result<Split> {
        Split::ALL
            .into_iter()
            .find(|x| x.as_str() == s)
            .ok_or_else(|| Error::Malformed(format!("unknown split {s:?}")))
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabeledDataset {
    pub name: String,
    pub schema: Vec<AttributeSchema>,
    pub train: Vec<LabeledText>,
    pub validation: Vec<LabeledText>,
    pub test: Vec<LabeledText>,
}

impl LabeledDataset {
    pub fn empty(name: impl Into<String>, schema: Vec<AttributeSchema>) -> Self {
        Self {
            name: name.into(),
            schema,
            train: Vec::new(),
            validation: Vec::new(),
            test: Vec::new(),
        }
    }

    pub fn split(&self, split: Split) -> &[LabeledText] {
        match split {
            Split::Train => &self.train,
            Split::Validation => &self.validation,
            Split::Test => &self.test,
        }
    }

    pub fn split_mut(&mut self, split: Split) -> &mut Vec<LabeledText> {
        match split {
            Split::Train => &mut self.train,
            Split::Validation => &mut self.validation,
            Split::Test => &mut self.test,
        }
    }

    pub fn len(&self) -> usize {
        self.train.len() + self.validation.len() + self.test.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Label counts of `attribute` in one split; labels from the schema appear even at zero.
    pub fn label_histogram(&self, split: Split, attribute: &str) -> BTreeMap<String, usize> {
        let mut h: BTreeMap<String, usize> = self
            .schema
            .iter()
            .filter(|a| a.name == attribute)
            .flat_map(|a| a.labels.iter().map(|l| (l.clone(), 0)))
            .collect();
        for item in self.split(split) {
            if let Some(l) = item.label(attribute) {
                *h.entry(l.to_string()).or_default() += 1;
            }
        }
        h
    }

    /// Checks every label against the schema.
    pub fn validate(&self) -> Result<()> {
        for split in Split::ALL {
            for item in self.split(split) {
                for (attr, label) in &item.attributes {
                    let schema = self
                        .schema
                        .iter()
                        .find(|a| *a.name == **attr)
                        .ok_or_else(|| Error::InvalidArgument(format!("attribute {attr:?} not in schema")))?;
                    if !schema.labels.iter().any(|l| **l == **label) {
                        return Err(Error::InvalidArgument(format!(
                            "label {label:?} not declared for attribute {attr:?}"
                        )));
                    }
                }
            }
        }
        Ok(())
    }
}
