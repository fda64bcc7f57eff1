use log::warn;

use crate::compose::CompositionStrategy;

/// Index subsets of `0..m` with at least two members: by size, then lexicographic.
pub fn subsets(m: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    for k in 2..=m {
        let mut current = Vec::with_capacity(k);
        combinations(0, m, k, &mut current, &mut out);
    }
    out
}

fn combinations(start: usize, m: usize, k: usize, current: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
    if current.len() == k {
        out.push(current.clone());
        return;
    }
    for i in start..m {
        if m - i < k - current.len() {
            break;
        }
        current.push(i);
        combinations(i + 1, m, k, current, out);
        current.pop();
    }
}

/// Every (technique, subset) pair, technique-major. Empty (with a warning) for m < 2.
pub fn enumerate_compositions(m: usize, techniques: &[CompositionStrategy]) -> Vec<(CompositionStrategy, Vec<usize>)> {
    if m < 2 {
        warn!("{m} dataset(s): nothing to compose");
        return Vec::new();
    }
    let subs = subsets(m);
    techniques
        .iter()
        .flat_map(|&t| subs.iter().map(move |s| (t, s.clone())))
        .collect()
}

/// Rows of a single-family table: raw host, m datasets, the combined dataset, and
/// p techniques over every subset of size two or more.
pub fn row_count(m: usize, p: usize) -> usize {
    let compositions = if m < 2 { 0 } else { (1usize << m) - m - 1 };
    2 + m + p * compositions
}

/// `1+3` style label for a 0-based subset.
pub fn subset_label(subset: &[usize]) -> String {
    subset.iter().map(|i| (i + 1).to_string()).collect::<Vec<_>>().join("+")
}
