//! Control Effectiveness with lexicon oracle classifiers.

use std::collections::{BTreeMap, HashSet};

use crate::error::{Error, Result};
use crate::host::TokenId;

/// Classifiers per ensemble. Member `j` ignores every third marker starting at `j`.
pub const ENSEMBLE_SIZE: usize = 3;

#[derive(Clone, Debug, PartialEq)]
pub struct GenerationRecord {
    /// `(attribute, label)` the generation was asked for.
    pub target: Vec<(String, String)>,
    pub tokens: Vec<TokenId>,
    pub prompt_id: usize,
}

impl GenerationRecord {
    pub fn target(&self, attribute: &str) -> Option<&str> {
        self.target.iter().find(|(a, _)| a == attribute).map(|(_, l)| l.as_str())
    }
}

/// Predicts the label whose lexicon has the most hits. Ties between the top
/// labels and texts with no hits yield no prediction.
#[derive(Clone, Debug, PartialEq)]
pub struct OracleClassifier {
    pub attribute: String,
    lexicons: Vec<(String, HashSet<TokenId>)>,
}

impl OracleClassifier {
    pub fn new(attribute: impl Into<String>, lexicons: Vec<(String, Vec<TokenId>)>) -> Result<Self> {
        if lexicons.is_empty() {
            return Err(Error::Empty("classifier lexicons"));
        }
        Ok(Self {
            attribute: attribute.into(),
            lexicons: lexicons.into_iter().map(|(l, m)| (l, m.into_iter().collect())).collect(),
        })
    }

    /// [`ENSEMBLE_SIZE`] classifiers, each built on two thirds of every lexicon.
    pub fn ensemble(attribute: &str, lexicons: &[(String, Vec<TokenId>)]) -> Result<Vec<Self>> {
        (0..ENSEMBLE_SIZE)
            .map(|j| {
                let sub = lexicons
                    .iter()
                    .map(|(l, m)| {
                        let kept: Vec<TokenId> = m
                            .iter()
                            .enumerate()
                            .filter(|(i, _)| i % ENSEMBLE_SIZE != j || m.len() < ENSEMBLE_SIZE)
                            .map(|(_, &t)| t)
                            .collect();
                        (l.clone(), kept)
                    })
                    .collect();
                Self::new(attribute, sub)
            })
            .collect()
    }

    pub fn labels(&self) -> impl Iterator<Item = &str> {
        self.lexicons.iter().map(|(l, _)| l.as_str())
    }

    pub fn predict(&self, tokens: &[TokenId]) -> Option<&str> {
        let hits: Vec<usize> = self
            .lexicons
            .iter()
            .map(|(_, lex)| tokens.iter().filter(|t| lex.contains(t)).count())
            .collect();
        let best = *hits.iter().max()?;
        if best == 0 || hits.iter().filter(|&&h| h == best).count() > 1 {
            return None;
        }
        let idx = hits.iter().position(|&h| h == best)?;
        Some(self.lexicons[idx].0.as_str())
    }
}

/// The label predicted by more than half of the ensemble, if any.
pub fn majority_vote<'a>(predictions: &[Option<&'a str>]) -> Option<&'a str> {
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for p in predictions.iter().flatten() {
        *counts.entry(p).or_default() += 1;
    }
    counts
        .into_iter()
        .find(|&(_, c)| 2 * c > predictions.len())
        .map(|(l, _)| l)
}

/// Mean over classifiers of the percentage of records whose prediction matches
/// the target. Returns the mean and the per-classifier percentages.
pub fn ce_single(records: &[GenerationRecord], classifiers: &[OracleClassifier]) -> Result<(f64, Vec<f64>)> {
    if records.is_empty() {
        return Err(Error::Empty("control effectiveness records"));
    }
    if classifiers.is_empty() {
        return Err(Error::Empty("classifier set"));
    }
    let attribute = &classifiers[0].attribute;
    if classifiers.iter().any(|c| &c.attribute != attribute) {
        return Err(Error::InvalidArgument("classifiers disagree on the attribute".into()));
    }
    let per: Vec<f64> = classifiers
        .iter()
        .map(|c| {
            let hits = records
                .iter()
                .filter(|r| r.target(attribute).is_some() && c.predict(&r.tokens) == r.target(attribute))
                .count();
            100.0 * hits as f64 / records.len() as f64
        })
        .collect();
    Ok((per.iter().sum::<f64>() / per.len() as f64, per))
}

/// Percentage of records for which every attribute's majority-voted label
/// matches its target.
pub fn ce_multi(records: &[GenerationRecord], ensembles: &[Vec<OracleClassifier>]) -> Result<f64> {
    if records.is_empty() {
        return Err(Error::Empty("control effectiveness records"));
    }
    if ensembles.is_empty() || ensembles.iter().any(Vec::is_empty) {
        return Err(Error::Empty("classifier ensemble"));
    }
    let hits = records
        .iter()
        .filter(|r| {
            ensembles.iter().all(|ens| {
                let attribute = &ens[0].attribute;
                let votes: Vec<Option<&str>> = ens.iter().map(|c| c.predict(&r.tokens)).collect();
                matches!((majority_vote(&votes), r.target(attribute)), (Some(v), Some(t)) if v == t)
            })
        })
        .count();
    Ok(100.0 * hits as f64 / records.len() as f64)
}
