//! Tagged prompt construal.
//!
//! A prompt is one `[ATTR] label [/ATTR]` block per controlled attribute (schema
//! order), then `[ANS]` and the first `n` words of the text. The completion is the
//! remaining words followed by `[/ANS]`.

use crate::data::{AttributeSchema, LabeledText, Vocab};
use crate::error::{Error, Result};
use crate::host::TokenId;
use crate::numeric::Prng;

pub const MAX_LEADING_WORDS: usize = 5;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PromptExample {
    /// `(attribute, label)` in schema order.
    pub control: Vec<(String, String)>,
    pub prompt: Vec<TokenId>,
    pub completion: Vec<TokenId>,
    pub n: usize,
}

impl PromptExample {
    /// Prompt followed by completion.
    pub fn full_sequence(&self) -> Vec<TokenId> {
        [self.prompt.as_slice(), &self.completion].concat()
    }

    pub fn target(&self, attribute: &str) -> Option<&str> {
        self.control.iter().find(|(a, _)| a == attribute).map(|(_, l)| l.as_str())
    }
}

/// Tag blocks for `control` followed by `[ANS]`.
pub fn control_prefix(vocab: &Vocab, control: &[(String, String)]) -> Result<Vec<TokenId>> {
    let mut out = Vec::with_capacity(3 * control.len() + 1);
    for (attr, label) in control {
        let (open, close) = vocab.attribute_tags(attr)?;
        out.extend([open, vocab.id(label)?, close]);
    }
    out.push(vocab.ans_open());
    Ok(out)
}

pub fn make_prompt_pair(
    vocab: &Vocab,
    schema: &[AttributeSchema],
    item: &LabeledText,
    n: usize,
) -> Result<PromptExample> {
    if n > MAX_LEADING_WORDS {
        return Err(Error::InvalidArgument(format!(
            "leading words n={n} exceeds {MAX_LEADING_WORDS}"
        )));
    }
    if n > item.word_count() {
        return Err(Error::InvalidArgument(format!(
            "n={n} exceeds the text length {}",
            item.word_count()
        )));
    }
    let control: Vec<(String, String)> = schema
        .iter()
        .filter_map(|a| item.label(&a.name).map(|l| (a.name.clone(), l.to_string())))
        .collect();
    let mut prompt = control_prefix(vocab, &control)?;
    prompt.extend_from_slice(&item.tokens[..n]);
    let mut completion = item.tokens[n..].to_vec();
    completion.push(vocab.ans_close());
    Ok(PromptExample {
        control,
        prompt,
        completion,
        n,
    })
}

/// One example per item with `n` drawn uniformly from `0..=min(5, len)`.
pub fn prompt_pairs(
    vocab: &Vocab,
    schema: &[AttributeSchema],
    items: &[LabeledText],
    seed: u64,
) -> Result<Vec<PromptExample>> {
    let mut prng = Prng::new(seed);
    items
        .iter()
        .map(|item| {
            let n = prng.range_inclusive(0, MAX_LEADING_WORDS.min(item.word_count()));
            make_prompt_pair(vocab, schema, item, n)
        })
        .collect()
}

/// Removes tag blocks (tags and the label words inside them) and the answer tags.
pub fn detag(vocab: &Vocab, tokens: &[TokenId]) -> Vec<TokenId> {
    let mut out = Vec::new();
    let mut inside = false;
    for &t in tokens {
        if t == vocab.ans_open() || t == vocab.ans_close() || t == vocab.bos() {
            continue;
        }
        if vocab.is_special(t) {
            inside = !inside;
            continue;
        }
        if !inside {
            out.push(t);
        }
    }
    out
}

/// Out-of-domain prompts: each control paired with `count` fresh 2–4 filler-word leads.
/// Completions are empty.
pub fn ood_prompts(
    vocab: &Vocab,
    controls: &[Vec<(String, String)>],
    count: usize,
    seed: u64,
) -> Result<Vec<PromptExample>> {
    let mut prng = Prng::new(seed);
    let leads: Vec<Vec<TokenId>> = (0..count)
        .map(|_| {
            let len = prng.range_inclusive(2, 4);
            (0..len).map(|_| *prng.choose(vocab.fillers())).collect()
        })
        .collect();
    let mut out = Vec::with_capacity(controls.len() * count);
    for control in controls {
        let prefix = control_prefix(vocab, control)?;
        for lead in &leads {
            out.push(PromptExample {
                control: control.clone(),
                prompt: [prefix.as_slice(), lead].concat(),
                completion: Vec::new(),
                n: lead.len(),
            });
        }
    }
    Ok(out)
}
