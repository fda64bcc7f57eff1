//! Result tables: one row per evaluated configuration, mean and sample std over seeds.
//!
//! Single-family header:
//!
//! ```text
//! row,technique,subset,<E>.distinct1,<E>.distinct2,<E>.distinct3,<E>.slor,<E>.ce,...,ce_in_domain_avg,ce_avg
//! ```
//!
//! with one `<E>` block per evaluation set (each source test split in config order,
//! then `ood` when enabled). Multi-attribute tables use
//!
//! ```text
//! row,technique,subset,multi.distinct1,multi.distinct2,multi.distinct3,multi.slor,multi.ce,multi.ce.<attr>...,<attr>.single_ce...
//! ```

use std::fmt::Write as _;

use crate::error::{Error, Result};

pub const KEY_COLUMNS: [&str; 3] = ["row", "technique", "subset"];
pub const METRIC_SUFFIXES: [&str; 5] = ["distinct1", "distinct2", "distinct3", "slor", "ce"];
const PRECISION: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stat {
    Mean,
    Std,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TableRow {
    pub label: String,
    pub technique: String,
    pub subset: String,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ResultsTable {
    /// Metric column names (key columns excluded).
    pub columns: Vec<String>,
    pub rows: Vec<TableRow>,
}

/// Metric columns of a single-family table.
pub fn single_columns(eval_sets: &[String], in_domain: usize) -> Vec<String> {
    let mut cols: Vec<String> = eval_sets
        .iter()
        .flat_map(|e| METRIC_SUFFIXES.iter().map(move |m| format!("{e}.{m}")))
        .collect();
    if in_domain > 0 {
        cols.push("ce_in_domain_avg".into());
    }
    cols.push("ce_avg".into());
    cols
}

/// Metric columns of the multi-attribute table.
pub fn multi_columns(attributes: &[String]) -> Vec<String> {
    let mut cols: Vec<String> = METRIC_SUFFIXES.iter().map(|m| format!("multi.{m}")).collect();
    cols.extend(attributes.iter().map(|a| format!("multi.ce.{a}")));
    cols.extend(attributes.iter().map(|a| format!("{a}.single_ce")));
    cols
}

/// Mean and n−1 standard deviation; the std of a single value is NaN.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, f64::NAN);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, var.sqrt())
}

fn fmt_value(v: f64) -> String {
    if v.is_nan() {
        "nan".into()
    } else {
        format!("{v:.PRECISION$}")
    }
}

impl ResultsTable {
    pub fn header(&self) -> Vec<String> {
        KEY_COLUMNS.iter().map(|s| s.to_string()).chain(self.columns.iter().cloned()).collect()
    }

    pub fn column(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name)
    }

    pub fn row(&self, label: &str) -> Option<&TableRow> {
        self.rows.iter().find(|r| r.label == label)
    }

    pub fn to_csv(&self, stat: Stat) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(self.header()).map_err(csv_err)?;
        for row in &self.rows {
            let values = match stat {
                Stat::Mean => &row.mean,
                Stat::Std => &row.std,
            };
            let record = [row.label.clone(), row.technique.clone(), row.subset.clone()]
                .into_iter()
                .chain(values.iter().map(|&v| fmt_value(v)));
            w.write_record(record).map_err(csv_err)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Malformed(e.to_string()))?;
        String::from_utf8(bytes).map_err(|e| Error::Malformed(e.to_string()))
    }

    /// Parses a CSV written by [`ResultsTable::to_csv`]; values land in `mean`, `std` is NaN.
    pub fn from_csv(text: &str) -> Result<Self> {
        let mut r = csv::Reader::from_reader(text.as_bytes());
        let header: Vec<String> = r.headers().map_err(csv_err)?.iter().map(String::from).collect();
        if header.len() < KEY_COLUMNS.len() || header[..3] != KEY_COLUMNS {
            return Err(Error::Malformed(format!("table header must start with {}", KEY_COLUMNS.join(","))));
        }
        let columns = header[3..].to_vec();
        let mut rows = Vec::new();
        for rec in r.records() {
            let rec = rec.map_err(csv_err)?;
            if rec.len() != header.len() {
                return Err(Error::Malformed(format!("row has {} fields, header has {}", rec.len(), header.len())));
            }
            let mean = rec
                .iter()
                .skip(3)
                .map(|v| v.parse::<f64>().map_err(|_| Error::Malformed(format!("bad table value {v:?}"))))
                .collect::<Result<Vec<_>>>()?;
            rows.push(TableRow {
                label: rec[0].to_string(),
                technique: rec[1].to_string(),
                subset: rec[2].to_string(),
                std: vec![f64::NAN; mean.len()],
                mean,
            });
        }
        Ok(Self { columns, rows })
    }

    pub fn read_csv(path: impl AsRef<std::path::Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_csv(&text).map_err(|e| Error::Malformed(format!("{}: {e}", path.display())))
    }

    /// Space-aligned `mean±std` rendering (std omitted when undefined).
    pub fn render_text(&self) -> String {
        let cells: Vec<Vec<String>> = std::iter::once(self.header())
            .chain(self.rows.iter().map(|row| {
                [row.label.clone(), row.technique.clone(), row.subset.clone()]
                    .into_iter()
                    .chain(row.mean.iter().zip(&row.std).map(|(&m, &s)| {
                        if s.is_nan() {
                            fmt_value(m)
                        } else {
                            format!("{}±{}", fmt_value(m), fmt_value(s))
                        }
                    }))
                    .collect()
            }))
            .collect();
        let widths: Vec<usize> = (0..cells[0].len())
            .map(|c| cells.iter().map(|r| r[c].chars().count()).max().unwrap_or(0))
            .collect();
        let mut out = String::new();
        for row in &cells {
            let line: Vec<String> = row
                .iter()
                .zip(&widths)
                .enumerate()
                .map(|(i, (cell, &w))| {
                    let pad = w - cell.chars().count();
                    if i < KEY_COLUMNS.len() {
                        format!("{cell}{}", " ".repeat(pad))
                    } else {
                        format!("{}{cell}", " ".repeat(pad))
                    }
                })
                .collect();
            writeln!(out, "{}", line.join("  ").trim_end()).ok();
        }
        out
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::Malformed(format!("csv: {e}"))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table() -> ResultsTable {
        ResultsTable {
            columns: vec!["a.ce".into(), "ce_avg".into()],
            rows: vec![
                TableRow {
                    label: "raw".into(),
                    technique: "none".into(),
                    subset: "-".into(),
                    mean: vec![12.5, 12.5],
                    std: vec![1.0, f64::NAN],
                },
                TableRow {
                    label: "output-sum:1+2".into(),
                    technique: "output-sum".into(),
                    subset: "1+2".into(),
                    mean: vec![99.0, 1.0 / 3.0],
                    std: vec![0.5, 0.25],
                },
            ],
        }
    }

    #[test]
    fn sample_std() {
        let (m, s) = mean_std(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(m, 2.5);
        assert!((s - (5.0f64 / 3.0).sqrt()).abs() < 1e-15);
        assert!(mean_std(&[3.0]).1.is_nan());
    }

    #[test]
    fn csv_round_trip() {
        let t = table();
        let text = t.to_csv(Stat::Mean).unwrap();
        assert_eq!(
            text,
            "row,technique,subset,a.ce,ce_avg\nraw,none,-,12.5000,12.5000\noutput-sum:1+2,output-sum,1+2,99.0000,0.3333\n"
        );
        let back = ResultsTable::from_csv(&text).unwrap();
        assert_eq!(back.columns, t.columns);
        assert_eq!(back.rows[1].mean, vec![99.0, 0.3333]);
        assert!(t.to_csv(Stat::Std).unwrap().contains("raw,none,-,1.0000,nan"));
    }

    #[test]
    fn text_is_aligned() {
        let text = table().render_text();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 3);
        assert!(lines[1].contains("12.5000±1.0000"));
        assert!(lines[1].ends_with("12.5000"));
    }

    #[test]
    fn column_sets() {
        let cols = single_columns(&["x".into(), "ood".into()], 1);
        assert_eq!(cols.len(), 12);
        assert_eq!(cols[4], "x.ce");
        assert_eq!(cols[10], "ce_in_domain_avg");
        let cols = multi_columns(&["sentiment".into(), "topic".into()]);
        assert_eq!(cols[5..], ["multi.ce.sentiment", "multi.ce.topic", "sentiment.single_ce", "topic.single_ce"]);
    }

    #[test]
    fn rejects_bad_csv() {
        assert!(ResultsTable::from_csv("a,b\n1,2\n").is_err());
        assert!(ResultsTable::from_csv("row,technique,subset,x\nr,t,s,abc\n").is_err());
    }
}
