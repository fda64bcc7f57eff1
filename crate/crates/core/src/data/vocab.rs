//! Fixed word-level vocabulary shared by the host, the synthetic corpora and the metrics.
//!
//! Layout of the standard 128-token vocabulary:
//!
//! | ids     | tokens                                                       |
//! |---------|--------------------------------------------------------------|
//! | 0–6     | `[BOS]`, `[SENTIMENT]`, `[/SENTIMENT]`, `[TOPIC]`, `[/TOPIC]`, `[ANS]`, `[/ANS]` |
//! | 7–13    | label words: positive, negative, neutral, world, sports, business, scitech |
//! | 14–67   | marker words, 8 per label (6 for neutral): `pos0`…, `neg0`…, `neu0`…, `wld0`…, `spt0`…, `bus0`…, `sci0`… |
//! | 68–127  | filler words `f00`…`f59`                                     |

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::host::TokenId;

pub const BOS: &str = "[BOS]";
pub const ANS_OPEN: &str = "[ANS]";
pub const ANS_CLOSE: &str = "[/ANS]";
pub const NEUTRAL: &str = "neutral";

/// Attributes known to the standard vocabulary, in schema order.
pub const ATTRIBUTES: [&str; 2] = ["sentiment", "topic"];
pub const SENTIMENT_LABELS: [&str; 3] = ["positive", "negative", NEUTRAL];
pub const TOPIC_LABELS: [&str; 4] = ["world", "sports", "business", "scitech"];

const MARKER_PREFIX: [(&str, &str, usize); 7] = [
    ("positive", "pos", 8),
    ("negative", "neg", 8),
    (NEUTRAL, "neu", 6),
    ("world", "wld", 8),
    ("sports", "spt", 8),
    ("business", "bus", 8),
    ("scitech", "sci", 8),
];
const FILLERS: usize = 60;

#[derive(Clone, Debug)]
pub struct Vocab {
    words: Vec<String>,
    index: HashMap<String, TokenId>,
    markers: HashMap<String, Vec<TokenId>>,
    fillers: Vec<TokenId>,
    n_special: usize,
}

impl Vocab {
    pub fn standard() -> Self {
        let mut words: Vec<String> = vec![BOS.into()];
        for attr in ATTRIBUTES {
            let tag = attr.to_uppercase();
            words.push(format!("[{tag}]"));
            words.push(format!("[/{tag}]"));
        }
        words.push(ANS_OPEN.into());
        words.push(ANS_CLOSE.into());
        let n_special = words.len();
        words.extend(SENTIMENT_LABELS.iter().chain(&TOPIC_LABELS).map(|s| s.to_string()));
        let mut markers = HashMap::new();
        for (label, prefix, count) in MARKER_PREFIX {
            let start = words.len() as TokenId;
            words.extend((0..count).map(|i| format!("{prefix}{i}")));
            markers.insert(label.to_string(), (start..start + count as TokenId).collect());
        }
        let start = words.len() as TokenId;
        words.extend((0..FILLERS).map(|i| format!("f{i:02}")));
        let fillers = (start..start + FILLERS as TokenId).collect();
        let index = words.iter().enumerate().map(|(i, w)| (w.clone(), i as TokenId)).collect();
        Self {
            words,
            index,
            markers,
            fillers,
            n_special,
        }
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn id(&self, word: &str) -> Result<TokenId> {
        self.index
            .get(word)
            .copied()
            .ok_or_else(|| Error::InvalidArgument(format!("word {word:?} is not in the vocabulary")))
    }

    pub fn word(&self, id: TokenId) -> Result<&str> {
        self.words.get(id as usize).map(String::as_str).ok_or(Error::TokenOutOfRange {
            token: id,
            vocab: self.words.len(),
        })
    }

    /// Tag and control tokens (everything before the label words).
    pub fn is_special(&self, id: TokenId) -> bool {
        (id as usize) < self.n_special
    }

    pub fn bos(&self) -> TokenId {
        self.index[BOS]
    }

    pub fn ans_open(&self) -> TokenId {
        self.index[ANS_OPEN]
    }

    pub fn ans_close(&self) -> TokenId {
        self.index[ANS_CLOSE]
    }

    /// `([ATTR], [/ATTR])` token ids.
    pub fn attribute_tags(&self, attribute: &str) -> Result<(TokenId, TokenId)> {
        let tag = attribute.to_uppercase();
        Ok((self.id(&format!("[{tag}]"))?, self.id(&format!("[/{tag}]"))?))
    }

    /// Marker words of `label` in the standard layout.
    pub fn markers(&self, label: &str) -> Result<&[TokenId]> {
        self.markers
            .get(label)
            .map(Vec::as_slice)
            .ok_or_else(|| Error::InvalidArgument(format!("no marker lexicon for label {label:?}")))
    }

    pub fn fillers(&self) -> &[TokenId] {
        &self.fillers
    }

    pub fn encode(&self, text: &str) -> Result<Vec<TokenId>> {
        text.split_whitespace().map(|w| self.id(w)).collect()
    }

    pub fn decode(&self, tokens: &[TokenId]) -> Result<String> {
        let words = tokens.iter().map(|&t| self.word(t)).collect::<Result<Vec<_>>>()?;
        Ok(words.join(" "))
    }
}
