//! SLOR: `(ln P_LM(s) − Σₜ ln P_uni(t)) / |s|`, averaged over scorer models.

use crate::error::{Error, Result};
use crate::host::{HostModel, TokenId};

/// A language model that scores a whole word sequence (natural log probability).
pub trait SequenceScorer: Sync {
    fn log_prob(&self, text: &[TokenId]) -> Result<f64>;
}

/// Add-k smoothed unigram model over a fixed vocabulary.
#[derive(Clone, Debug)]
pub struct UnigramModel {
    log_probs: Vec<f64>,
}

impl UnigramModel {
    pub fn fit<'a>(corpus: impl IntoIterator<Item = &'a [TokenId]>, vocab_size: usize, k: f64) -> Result<Self> {
        if vocab_size == 0 || !(k > 0.0) {
            return Err(Error::InvalidArgument("unigram model needs a vocabulary and k > 0".into()));
        }
        let mut counts = vec![0.0; vocab_size];
        for text in corpus {
            for &t in text {
                *counts.get_mut(t as usize).ok_or(Error::TokenOutOfRange { token: t, vocab: vocab_size })? += 1.0;
            }
        }
        Ok(Self::from_counts(&counts, k))
    }

    pub fn from_counts(counts: &[f64], k: f64) -> Self {
        let total: f64 = counts.iter().sum::<f64>() + k * counts.len() as f64;
        Self {
            log_probs: counts.iter().map(|c| ((c + k) / total).ln()).collect(),
        }
    }

    pub fn log_prob(&self, token: TokenId) -> Result<f64> {
        self.log_probs.get(token as usize).copied().ok_or(Error::TokenOutOfRange {
            token,
            vocab: self.log_probs.len(),
        })
    }

    pub fn text_log_prob(&self, text: &[TokenId]) -> Result<f64> {
        text.iter().map(|&t| self.log_prob(t)).sum()
    }
}

impl SequenceScorer for UnigramModel {
    fn log_prob(&self, text: &[TokenId]) -> Result<f64> {
        self.text_log_prob(text)
    }
}

/// Add-k smoothed bigram model; the first token is conditioned on `start`.
#[derive(Clone, Debug)]
pub struct BigramScorer {
    vocab_size: usize,
    start: TokenId,
    k: f64,
    counts: Vec<f64>,
    row_totals: Vec<f64>,
}

impl BigramScorer {
    pub fn fit<'a>(
        corpus: impl IntoIterator<Item = &'a [TokenId]>,
        vocab_size: usize,
        start: TokenId,
        k: f64,
    ) -> Result<Self> {
        if vocab_size == 0 || !(k > 0.0) || start as usize >= vocab_size {
            return Err(Error::InvalidArgument("bigram model needs a vocabulary, a valid start token and k > 0".into()));
        }
        let mut counts = vec![0.0; vocab_size * vocab_size];
        let mut row_totals = vec![0.0; vocab_size];
        for text in corpus {
            let mut prev = start;
            for &t in text {
                if t as usize >= vocab_size {
                    return Err(Error::TokenOutOfRange { token: t, vocab: vocab_size });
                }
                counts[prev as usize * vocab_size + t as usize] += 1.0;
                row_totals[prev as usize] += 1.0;
                prev = t;
            }
        }
        Ok(Self {
            vocab_size,
            start,
            k,
            counts,
            row_totals,
        })
    }

    pub fn conditional(&self, prev: TokenId, next: TokenId) -> Result<f64> {
        let v = self.vocab_size;
        if prev as usize >= v || next as usize >= v {
            return Err(Error::TokenOutOfRange {
                token: prev.max(next),
                vocab: v,
            });
        }
        let c = self.counts[prev as usize * v + next as usize];
        Ok((c + self.k) / (self.row_totals[prev as usize] + self.k * v as f64))
    }
}

impl SequenceScorer for BigramScorer {
    fn log_prob(&self, text: &[TokenId]) -> Result<f64> {
        let mut prev = self.start;
        let mut total = 0.0;
        for &t in text {
            total += self.conditional(prev, t)?.ln();
            prev = t;
        }
        Ok(total)
    }
}

/// A host transformer used as a scorer; the text is conditioned on `start`.
pub struct HostScorer {
    pub host: HostModel,
    pub start: TokenId,
}

impl SequenceScorer for HostScorer {
    fn log_prob(&self, text: &[TokenId]) -> Result<f64> {
        let limit = self.host.config().max_seq;
        let seq: Vec<TokenId> = std::iter::once(self.start).chain(text.iter().copied()).take(limit).collect();
        if seq.len() < text.len() + 1 {
            return Err(Error::SequenceTooLong {
                len: text.len() + 1,
                max: limit,
            });
        }
        self.host.sequence_log_prob(&seq)
    }
}

pub fn slor(text: &[TokenId], scorers: &[&dyn SequenceScorer], unigram: &UnigramModel) -> Result<f64> {
    if text.is_empty() {
        return Err(Error::Empty("SLOR text"));
    }
    if scorers.is_empty() {
        return Err(Error::Empty("SLOR scorer set"));
    }
    let uni = unigram.text_log_prob(text)?;
    let mut total = 0.0;
    for s in scorers {
        total += (s.log_prob(text)? - uni) / text.len() as f64;
    }
    Ok(total / scorers.len() as f64)
}
