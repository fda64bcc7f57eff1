//! Line-delimited dataset files.
//!
//! ```text
//! #lrcompose-dataset 1
//! #name sent-a
//! #attribute sentiment positive negative
//! train<TAB>f01 pos2 f07<TAB>sentiment=positive<TAB>sent-a
//! ```
//!
//! One record per line: split, space-separated words, `attr=label` pairs joined
//! by `;`, source name.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;
use std::sync::Arc;

use crate::data::{AttributeSchema, LabeledDataset, LabeledText, Split, Vocab};
use crate::error::{Error, Result};

const HEADER: &str = "#lrcompose-dataset 1";

pub fn encode_dataset(vocab: &Vocab, ds: &LabeledDataset) -> Result<String> {
    let mut out = String::new();
    writeln!(out, "{HEADER}").ok();
    writeln!(out, "#name {}", ds.name).ok();
    for a in &ds.schema {
        writeln!(out, "#attribute {} {}", a.name, a.labels.join(" ")).ok();
    }
    for split in Split::ALL {
        for item in ds.split(split) {
            let attrs: Vec<String> = item.attributes.iter().map(|(a, l)| format!("{a}={l}")).collect();
            writeln!(
                out,
                "{}\t{}\t{}\t{}",
                split.as_str(),
                vocab.decode(&item.tokens)?,
                attrs.join(";"),
                item.source
            )
            .ok();
        }
    }
    Ok(out)
}

pub fn decode_dataset(vocab: &Vocab, text: &str) -> Result<LabeledDataset> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, HEADER)) => {}
        other => {
            return Err(Error::Malformed(format!(
                "expected dataset header, found {:?}",
                other.map(|(_, l)| l)
            )))
        }
    }
    let mut ds = LabeledDataset::empty("", Vec::new());
    let mut interned: HashMap<String, Arc<str>> = HashMap::new();
    let mut intern = |s: &str| -> Arc<str> { interned.entry(s.to_string()).or_insert_with(|| Arc::from(s)).clone() };
    for (no, line) in lines {
        let bad = |what: &str| Error::Malformed(format!("line {}: {what}", no + 1));
        if let Some(rest) = line.strip_prefix("#name ") {
            ds.name = rest.to_string();
            continue;
        }
        if let Some(rest) = line.strip_prefix("#attribute ") {
            let mut parts = rest.split_whitespace();
            let name = parts.next().ok_or_else(|| bad("attribute without name"))?;
            ds.schema.push(AttributeSchema {
                name: name.to_string(),
                labels: parts.map(str::to_string).collect(),
            });
            continue;
        }
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 4 {
            return Err(bad("expected 4 tab-separated fields"));
        }
        let split = Split::parse(fields[0])?;
        let tokens = vocab.encode(fields[1])?;
        let attributes = fields[2]
            .split(';')
            .filter(|p| !p.is_empty())
            .map(|p| {
                let (a, l) = p.split_once('=').ok_or_else(|| bad("attribute pair without '='"))?;
                Ok((intern(a), intern(l)))
            })
            .collect::<Result<Vec<_>>>()?;
        let source = intern(fields[3]);
        ds.split_mut(split).push(LabeledText {
            tokens,
            attributes,
            source,
        });
    }
    ds.validate()?;
    Ok(ds)
}

pub fn write_dataset(vocab: &Vocab, ds: &LabeledDataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode_dataset(vocab, ds)?).map_err(|e| Error::io(path, e))
}

pub fn read_dataset(vocab: &Vocab, path: impl AsRef<Path>) -> Result<LabeledDataset> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    decode_dataset(vocab, &text)
}
