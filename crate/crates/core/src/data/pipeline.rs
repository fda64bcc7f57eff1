//! Combined-dataset construction: filter, balance the smallest source, then
//! stratify every other source down to its size.

use log::warn;

use crate::data::{AttributeSchema, LabeledDataset, LabeledText, Split, NEUTRAL};
use crate::error::{Error, Result};
use crate::numeric::Prng;

pub const MIN_WORDS: usize = 10;

/// Drops items shorter than [`MIN_WORDS`] and items labelled neutral; neutral also
/// leaves the schema.
pub fn filter_items(ds: &LabeledDataset) -> LabeledDataset {
    let keep = |item: &LabeledText| item.word_count() >= MIN_WORDS && item.attributes.iter().all(|(_, l)| &**l != NEUTRAL);
    let mut out = LabeledDataset::empty(
        ds.name.clone(),
        ds.schema
            .iter()
            .map(|a| AttributeSchema {
                name: a.name.clone(),
                labels: a.labels.iter().filter(|l| *l != NEUTRAL).cloned().collect(),
            })
            .collect(),
    );
    for split in Split::ALL {
        *out.split_mut(split) = ds.split(split).iter().filter(|i| keep(i)).cloned().collect();
    }
    out
}

fn indices_by_label(items: &[LabeledText], attribute: &str, labels: &[String]) -> Vec<Vec<usize>> {
    let mut by = vec![Vec::new(); labels.len()];
    for (i, item) in items.iter().enumerate() {
        if let Some(li) = item.label(attribute).and_then(|l| labels.iter().position(|x| x == l)) {
            by[li].push(i);
        }
    }
    by
}

/// Picks the source with the fewest items (first on ties) and downsamples it so
/// every label has its minimum per-label count. Returns the source index and the sample.
pub fn balance_smallest(
    sources: &[&[LabeledText]],
    attribute: &str,
    labels: &[String],
    seed: u64,
) -> Result<(usize, Vec<LabeledText>)> {
    let smallest = (0..sources.len())
        .min_by_key(|&i| sources[i].len())
        .ok_or(Error::Empty("balance_smallest sources"))?;
    let items = sources[smallest];
    let by_label = indices_by_label(items, attribute, labels);
    if let Some(li) = by_label.iter().position(Vec::is_empty) {
        return Err(Error::EmptyLabel(labels[li].clone()));
    }
    let per_label = by_label.iter().map(Vec::len).min().unwrap_or(0);
    let mut prng = Prng::new(seed);
    let mut chosen = Vec::with_capacity(per_label * labels.len());
    for mut idx in by_label {
        prng.shuffle(&mut idx);
        chosen.extend_from_slice(&idx[..per_label]);
    }
    chosen.sort_unstable();
    Ok((smallest, chosen.into_iter().map(|i| items[i].clone()).collect()))
}

/// Word-count buckets given by inclusive upper edges; the last bucket is open-ended.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LengthBuckets {
    upper: Vec<usize>,
}

impl LengthBuckets {
    pub fn new(mut upper: Vec<usize>) -> Self {
        upper.sort_unstable();
        upper.dedup();
        Self { upper }
    }

    /// Edges at the 1/3 and 2/3 quantiles of the items' word counts.
    pub fn terciles(items: &[LabeledText]) -> Self {
        let mut lens: Vec<usize> = items.iter().map(LabeledText::word_count).collect();
        if lens.is_empty() {
            return Self::new(Vec::new());
        }
        lens.sort_unstable();
        let n = lens.len();
        let q1 = lens[(n - 1) / 3];
        let q2 = lens[(2 * (n - 1)) / 3];
        let mut edges = vec![q1, q2];
        // an edge at the maximum would leave the last bucket empty
        edges.retain(|&e| e < lens[n - 1]);
        Self::new(edges)
    }

    pub fn count(&self) -> usize {
        self.upper.len() + 1
    }

    pub fn bucket(&self, words: usize) -> usize {
        self.upper.iter().position(|&e| words <= e).unwrap_or(self.upper.len())
    }
}

#[derive(Clone, Debug)]
pub struct Sampled {
    pub items: Vec<LabeledText>,
    /// One entry per stratum that had to borrow from a neighbouring bucket.
    pub warnings: Vec<String>,
}

fn split_quota(total: usize, parts: usize) -> Vec<usize> {
    (0..parts).map(|i| total / parts + usize::from(i < total % parts)).collect()
}

/// Samples `target` items with equal per-label quotas and, inside each label,
/// equal per-bucket quotas. A short stratum borrows from the nearest bucket of
/// the same label (lower bucket first on equal distance) and records a warning.
pub fn stratified_sample(
    items: &[LabeledText],
    attribute: &str,
    labels: &[String],
    target: usize,
    buckets: &LengthBuckets,
    seed: u64,
) -> Result<Sampled> {
    if target > items.len() {
        return Err(Error::InvalidArgument(format!(
            "target {target} exceeds the {} available items",
            items.len()
        )));
    }
    if labels.is_empty() {
        return Err(Error::Empty("label set"));
    }
    let mut prng = Prng::new(seed);
    let mut warnings = Vec::new();
    let mut chosen = Vec::with_capacity(target);
    let by_label = indices_by_label(items, attribute, labels);
    for ((label, idx), quota) in labels.iter().zip(by_label).zip(split_quota(target, labels.len())) {
        if idx.len() < quota {
            return Err(Error::InvalidArgument(format!(
                "label {label:?} has {} items but its quota is {quota}",
                idx.len()
            )));
        }
        let nb = buckets.count();
        let mut pools: Vec<Vec<usize>> = vec![Vec::new(); nb];
        for i in idx {
            pools[buckets.bucket(items[i].word_count())].push(i);
        }
        for pool in &mut pools {
            prng.shuffle(pool);
        }
        let quotas = split_quota(quota, nb);
        let mut shortfall = Vec::new();
        for (b, &q) in quotas.iter().enumerate() {
            let take = q.min(pools[b].len());
            chosen.extend(pools[b].drain(..take));
            if take < q {
                shortfall.push((b, q - take));
            }
        }
        for (b, mut missing) in shortfall {
            let mut order: Vec<usize> = (0..nb).filter(|&c| c != b).collect();
            order.sort_by_key(|&c| (c.abs_diff(b), c));
            for c in order {
                if missing == 0 {
                    break;
                }
                let take = missing.min(pools[c].len());
                if take > 0 {
                    chosen.extend(pools[c].drain(..take));
                    missing -= take;
                    let msg = format!("label {label:?} bucket {b}: backfilled {take} from bucket {c}");
                    warn!("{msg}");
                    warnings.push(msg);
                }
            }
        }
    }
    chosen.sort_unstable();
    Ok(Sampled {
        items: chosen.into_iter().map(|i| items[i].clone()).collect(),
        warnings,
    })
}

#[derive(Clone, Debug)]
pub struct Combined {
    pub dataset: LabeledDataset,
    pub warnings: Vec<String>,
}

/// Filters every source, then for the train and validation splits balances the
/// smallest source and stratifies the rest to the same size. A source whose split
/// is empty sits that split out. Test splits are concatenated unchanged. After
/// filtering, sources must share one single-attribute schema.
pub fn build_combined(name: &str, sources: &[LabeledDataset], seed: u64) -> Result<Combined> {
    let filtered: Vec<LabeledDataset> = sources.iter().map(filter_items).collect();
    let first = filtered.first().ok_or(Error::Empty("build_combined sources"))?;
    if let Some(other) = filtered.iter().find(|s| s.schema != first.schema) {
        return Err(Error::InvalidArgument(format!(
            "source {:?} has a different attribute schema from {:?}",
            other.name, first.name
        )));
    }
    if first.schema.len() != 1 {
        return Err(Error::InvalidArgument("combined datasets need exactly one attribute".into()));
    }
    let schema = filtered[0].schema.clone();
    let attribute = schema[0].name.clone();
    let labels = schema[0].labels.clone();
    let base = Prng::new(seed);
    let mut out = LabeledDataset::empty(name, schema);
    let mut warnings = Vec::new();
    for (si, split) in [Split::Train, Split::Validation].into_iter().enumerate() {
        // Sources without this split (after filtering) do not take part in it.
        let active: Vec<usize> = (0..filtered.len()).filter(|&i| !filtered[i].split(split).is_empty()).collect();
        if active.is_empty() {
            continue;
        }
        for i in (0..filtered.len()).filter(|i| !active.contains(i)) {
            warnings.push(format!("{} {}: empty split, skipped", filtered[i].name, split.as_str()));
        }
        let views: Vec<&[LabeledText]> = active.iter().map(|&i| filtered[i].split(split)).collect();
        let (smallest, balanced) = balance_smallest(&views, &attribute, &labels, base.derive(si as u64).seed())?;
        let target = balanced.len();
        let mut parts = Vec::with_capacity(views.len());
        for (k, view) in views.iter().enumerate() {
            let i = active[k];
            if k == smallest {
                parts.push(balanced.clone());
                continue;
            }
            let buckets = LengthBuckets::terciles(view);
            let salt = 1000 * (si as u64 + 1) + i as u64;
            let sampled = stratified_sample(view, &attribute, &labels, target, &buckets, base.derive(salt).seed())
                .map_err(|e| Error::InvalidArgument(format!("{} {}: {e}", filtered[i].name, split.as_str())))?;
            warnings.extend(sampled.warnings.into_iter().map(|w| format!("{} {}: {w}", filtered[i].name, split.as_str())));
            parts.push(sampled.items);
        }
        *out.split_mut(split) = parts.concat();
    }
    out.test = sources.iter().flat_map(|s| s.test.iter().cloned()).collect();
    Ok(Combined { dataset: out, warnings })
}

/// Helper for tests and fixtures: an item with the given label and length.
#[cfg(test)]
pub(crate) fn fixture(attribute: &str, label: &str, words: usize) -> LabeledText {
    use std::sync::Arc;
    LabeledText {
        tokens: vec![70; words],
        attributes: vec![(Arc::from(attribute), Arc::from(label))],
        source: Arc::from("fixture"),
    }
}
