use std::collections::BTreeSet;
use std::fmt::Write as _;

use super::table::ResultsTable;
use crate::error::{Error, Result};
use crate::metrics::{pearson, spearman};

#[derive(Clone, Debug, PartialEq)]
pub struct Correlation {
    pub column: String,
    /// NaN when either column is constant.
    pub pearson: f64,
    pub spearman: f64,
}

fn is_ce_column(name: &str) -> bool {
    name.ends_with(".ce") || name.starts_with("ce_") || name.ends_with("_ce") || name.contains(".ce.")
}

/// Pearson and Spearman between matching CE columns of two tables, rows paired by label.
pub fn correlate(a: &ResultsTable, b: &ResultsTable) -> Result<Vec<Correlation>> {
    let keys_a: BTreeSet<&str> = a.rows.iter().map(|r| r.label.as_str()).collect();
    let keys_b: BTreeSet<&str> = b.rows.iter().map(|r| r.label.as_str()).collect();
    if keys_a.len() != a.rows.len() || keys_b.len() != b.rows.len() {
        return Err(Error::MismatchedKeys("duplicate row labels".into()));
    }
    if keys_a != keys_b {
        let only: Vec<&str> = keys_a.symmetric_difference(&keys_b).copied().collect();
        return Err(Error::MismatchedKeys(only.join(", ")));
    }
    let columns: Vec<&String> = a
        .columns
        .iter()
        .filter(|c| is_ce_column(c) && b.column(c).is_some())
        .collect();
    if columns.is_empty() {
        return Err(Error::MismatchedKeys("no shared CE columns".into()));
    }
    columns
        .into_iter()
        .map(|col| {
            let (ia, ib) = (a.column(col).expect("present"), b.column(col).expect("shared"));
            let x: Vec<f64> = a.rows.iter().map(|r| r.mean[ia]).collect();
            let y: Vec<f64> = a
                .rows
                .iter()
                .map(|r| b.row(&r.label).expect("same keys").mean[ib])
                .collect();
            Ok(Correlation {
                column: col.clone(),
                pearson: undefined_as_nan(pearson(&x, &y))?,
                spearman: undefined_as_nan(spearman(&x, &y))?,
            })
        })
        .collect()
}

fn undefined_as_nan(r: Result<f64>) -> Result<f64> {
    match r {
        Err(Error::ZeroVariance(_)) => Ok(f64::NAN),
        other => other,
    }
}

pub fn render_correlations(cs: &[Correlation]) -> String {
    let width = cs.iter().map(|c| c.column.len()).max().unwrap_or(6).max(6);
    let mut out = format!("{:width$}  {:>8}  {:>8}\n", "column", "pearson", "spearman");
    for c in cs {
        writeln!(out, "{:width$}  {:>8.4}  {:>8.4}", c.column, c.pearson, c.spearman).ok();
    }
    out
}
