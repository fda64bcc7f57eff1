//! Synthetic single-attribute corpora.
//!
//! Labels are assigned round-robin within each split and then shuffled, so every
//! split is balanced within one item. Each item draws a length uniformly in `[min_words, max_words]`,
//! and then each word is a marker of its label with probability `marker_density`,
//! otherwise a filler. Items without any marker get one at a random position, so
//! counting lexicon hits always recovers the label.

use std::sync::Arc;

use crate::data::{AttributeSchema, LabeledDataset, LabeledText, Vocab};
use crate::error::{Error, Result};
use crate::host::TokenId;
use crate::numeric::Prng;

#[derive(Clone, Debug, PartialEq)]
pub struct SynthSpec {
    /// Dataset (source) name.
    pub name: String,
    pub attribute: String,
    /// Label name with its marker lexicon.
    pub labels: Vec<(String, Vec<TokenId>)>,
    pub filler: Vec<TokenId>,
    pub min_words: usize,
    pub max_words: usize,
    pub marker_density: f64,
}

impl SynthSpec {
    /// Spec over the standard vocabulary lexicons with the given filler subset.
    pub fn standard(
        vocab: &Vocab,
        name: &str,
        attribute: &str,
        labels: &[&str],
        filler: Vec<TokenId>,
    ) -> Result<Self> {
        let labels = labels
            .iter()
            .map(|l| Ok((l.to_string(), vocab.markers(l)?.to_vec())))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            name: name.to_string(),
            attribute: attribute.to_string(),
            labels,
            filler,
            min_words: 8,
            max_words: 18,
            marker_density: 0.3,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.labels.is_empty() {
            return Err(Error::InvalidArgument(format!("{}: no labels", self.name)));
        }
        if let Some((l, _)) = self.labels.iter().find(|(_, m)| m.is_empty()) {
            return Err(Error::InvalidArgument(format!("{}: empty marker lexicon for {l:?}", self.name)));
        }
        if self.filler.is_empty() && self.marker_density < 1.0 {
            return Err(Error::InvalidArgument(format!("{}: empty filler lexicon", self.name)));
        }
        if self.min_words == 0 || self.min_words > self.max_words {
            return Err(Error::InvalidArgument(format!(
                "{}: bad length range {}..={}",
                self.name, self.min_words, self.max_words
            )));
        }
        if !(self.marker_density > 0.0 && self.marker_density <= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "{}: marker density {} outside (0, 1]",
                self.name, self.marker_density
            )));
        }
        let mut seen = std::collections::HashSet::new();
        for &t in self.labels.iter().flat_map(|(_, m)| m).chain(&self.filler) {
            if !seen.insert(t) {
                return Err(Error::InvalidArgument(format!(
                    "{}: token {t} appears in more than one lexicon",
                    self.name
                )));
            }
        }
        Ok(())
    }

    pub fn schema(&self) -> AttributeSchema {
        AttributeSchema {
            name: self.attribute.clone(),
            labels: self.labels.iter().map(|(l, _)| l.clone()).collect(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SplitSizes {
    pub train: usize,
    pub validation: usize,
    pub test: usize,
}

impl SplitSizes {
    /// 80 / 10 / 10, with rounding going to train.
    pub fn from_total(size: usize) -> Self {
        let validation = size / 10;
        let test = size / 10;
        Self {
            train: size - validation - test,
            validation,
            test,
        }
    }
}

pub fn gen_synthetic(spec: &SynthSpec, size: usize, seed: u64) -> Result<LabeledDataset> {
    if size == 0 {
        return Err(Error::InvalidArgument("dataset size must be at least 1".into()));
    }
    gen_synthetic_splits(spec, SplitSizes::from_total(size), seed)
}

pub fn gen_synthetic_splits(spec: &SynthSpec, sizes: SplitSizes, seed: u64) -> Result<LabeledDataset> {
    spec.validate()?;
    let mut prng = Prng::new(seed);
    let attr: Arc<str> = spec.attribute.as_str().into();
    let source: Arc<str> = spec.name.as_str().into();
    let labels: Vec<Arc<str>> = spec.labels.iter().map(|(l, _)| l.as_str().into()).collect();
    let item = |prng: &mut Prng, li: usize| {
        let markers = &spec.labels[li].1;
        let len = prng.range_inclusive(spec.min_words, spec.max_words);
        let mut tokens: Vec<TokenId> = (0..len)
            .map(|_| {
                if prng.bernoulli(spec.marker_density) {
                    *prng.choose(markers)
                } else {
                    *prng.choose(&spec.filler)
                }
            })
            .collect();
        if !tokens.iter().any(|t| markers.contains(t)) {
            let pos = prng.below(len);
            tokens[pos] = *prng.choose(markers);
        }
        LabeledText {
            tokens,
            attributes: vec![(attr.clone(), labels[li].clone())],
            source: source.clone(),
        }
    };
    let mut ds = LabeledDataset::empty(spec.name.clone(), vec![spec.schema()]);
    let mut split = |n: usize| -> Vec<LabeledText> {
        let mut order: Vec<usize> = (0..n).map(|i| i % labels.len()).collect();
        prng.shuffle(&mut order);
        order.into_iter().map(|li| item(&mut prng, li)).collect()
    };
    ds.train = split(sizes.train);
    ds.validation = split(sizes.validation);
    ds.test = split(sizes.test);
    Ok(ds)
}
