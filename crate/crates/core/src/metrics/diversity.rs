use std::collections::HashSet;

use log::warn;

use crate::error::{Error, Result};
use crate::host::TokenId;

/// Mean over texts of (unique n-grams / n-grams). Texts shorter than `n` are skipped;
/// if every text is skipped the score is 0.
pub fn distinct_n(texts: &[Vec<TokenId>], n: usize) -> Result<f64> {
    if n == 0 {
        return Err(Error::InvalidArgument("distinct-n needs n >= 1".into()));
    }
    if texts.is_empty() {
        return Err(Error::Empty("distinct-n corpus"));
    }
    let scores: Vec<f64> = texts
        .iter()
        .filter(|t| t.len() >= n)
        .map(|t| {
            let grams: Vec<&[TokenId]> = t.windows(n).collect();
            let unique: HashSet<&[TokenId]> = grams.iter().copied().collect();
            unique.len() as f64 / grams.len() as f64
        })
        .collect();
    if scores.is_empty() {
        warn!("distinct-{n}: every text is shorter than {n} tokens");
        return Ok(0.0);
    }
    Ok(scores.iter().sum::<f64>() / scores.len() as f64)
}
