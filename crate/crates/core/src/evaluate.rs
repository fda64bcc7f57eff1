//! Generation over prompt sets and metric aggregation.

use rayon::prelude::*;

use crate::data::PromptExample;
use crate::error::{Error, Result};
use crate::host::{Decoding, HostModel, TokenId};
use crate::metrics::{ce_multi, ce_single, distinct_n, majority_vote, slor, GenerationRecord, MetricReport, OracleClassifier, SequenceScorer, UnigramModel};
use crate::numeric::Prng;

/// Decoding rule for a prompt set; sampling seeds are derived per prompt.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum EvalDecoding {
    Greedy,
    Sample { temperature: f64, seed: u64 },
}

/// Generates a continuation for every prompt (in parallel, deterministic order)
/// and keeps only the non-special generated tokens.
pub fn generate_records(
    host: &HostModel,
    prompts: &[PromptExample],
    max_new: usize,
    stop: TokenId,
    is_special: impl Fn(TokenId) -> bool + Sync,
    decoding: EvalDecoding,
) -> Result<Vec<GenerationRecord>> {
    prompts
        .par_iter()
        .enumerate()
        .map(|(i, p)| {
            let mode = match decoding {
                EvalDecoding::Greedy => Decoding::Greedy,
                EvalDecoding::Sample { temperature, seed } => Decoding::Sample {
                    temperature,
                    seed: Prng::new(seed).derive(i as u64).seed(),
                },
            };
            let out = host.generate(&p.prompt, max_new, Some(stop), mode)?;
            Ok(GenerationRecord {
                target: p.control.clone(),
                tokens: out.into_iter().filter(|&t| !is_special(t)).collect(),
                prompt_id: i,
            })
        })
        .collect()
}

/// Scorers and unigram baseline used for SLOR.
pub struct FluencyModels<'a> {
    pub scorers: Vec<&'a dyn SequenceScorer>,
    pub unigram: &'a UnigramModel,
}

/// Mean SLOR over non-empty generations; empty generations are skipped.
pub fn mean_slor(records: &[GenerationRecord], fluency: &FluencyModels<'_>) -> Result<f64> {
    let scores = records
        .par_iter()
        .filter(|r| !r.tokens.is_empty())
        .map(|r| slor(&r.tokens, &fluency.scorers, fluency.unigram))
        .collect::<Result<Vec<f64>>>()?;
    if scores.is_empty() {
        return Ok(0.0);
    }
    Ok(scores.iter().sum::<f64>() / scores.len() as f64)
}

fn diversity(records: &[GenerationRecord]) -> Result<[f64; 3]> {
    let texts: Vec<Vec<TokenId>> = records.iter().map(|r| r.tokens.clone()).collect();
    Ok([distinct_n(&texts, 1)?, distinct_n(&texts, 2)?, distinct_n(&texts, 3)?])
}

/// Single-attribute report: CE is the mean over the ensemble.
pub fn report_single(
    records: &[GenerationRecord],
    ensemble: &[OracleClassifier],
    fluency: &FluencyModels<'_>,
) -> Result<MetricReport> {
    let (ce, ce_breakdown) = ce_single(records, ensemble)?;
    Ok(MetricReport {
        distinct: diversity(records)?,
        slor: mean_slor(records, fluency)?,
        ce,
        ce_breakdown,
    })
}

/// Multi-attribute report: CE requires every attribute; the breakdown holds each
/// attribute's voted match percentage in ensemble order.
pub fn report_multi(
    records: &[GenerationRecord],
    ensembles: &[Vec<OracleClassifier>],
    fluency: &FluencyModels<'_>,
) -> Result<MetricReport> {
    let ce = ce_multi(records, ensembles)?;
    let ce_breakdown = ensembles
        .iter()
        .map(|ens| voted_match_percent(records, ens))
        .collect::<Result<Vec<_>>>()?;
    Ok(MetricReport {
        distinct: diversity(records)?,
        slor: mean_slor(records, fluency)?,
        ce,
        ce_breakdown,
    })
}

/// Percentage of records whose majority-voted label for the ensemble's attribute matches the target.
pub fn voted_match_percent(records: &[GenerationRecord], ensemble: &[OracleClassifier]) -> Result<f64> {
    if records.is_empty() {
        return Err(Error::Empty("records"));
    }
    let attribute = &ensemble.first().ok_or(Error::Empty("classifier ensemble"))?.attribute;
    let hits = records
        .iter()
        .filter(|r| {
            let votes: Vec<Option<&str>> = ensemble.iter().map(|c| c.predict(&r.tokens)).collect();
            majority_vote(&votes).is_some() && majority_vote(&votes) == r.target(attribute)
        })
        .count();
    Ok(100.0 * hits as f64 / records.len() as f64)
}
