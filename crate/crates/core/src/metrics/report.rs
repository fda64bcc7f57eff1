use std::fmt::Write as _;

use crate::error::{Error, Result};

/// Metrics for one evaluated configuration on one evaluation set.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricReport {
    pub distinct: [f64; 3],
    pub slor: f64,
    pub ce: f64,
    /// Per-classifier percentages (single attribute) or per-attribute voted
    /// match percentages (multi attribute).
    pub ce_breakdown: Vec<f64>,
}

impl MetricReport {
    /// Flat `key=value` lines.
    pub fn to_kv(&self) -> String {
        let mut s = String::new();
        for (i, d) in self.distinct.iter().enumerate() {
            writeln!(s, "distinct{}={d}", i + 1).ok();
        }
        writeln!(s, "slor={}", self.slor).ok();
        writeln!(s, "ce={}", self.ce).ok();
        for (i, c) in self.ce_breakdown.iter().enumerate() {
            writeln!(s, "ce.{i}={c}").ok();
        }
        s
    }

    pub fn from_kv(text: &str) -> Result<Self> {
        let mut r = MetricReport {
            distinct: [f64::NAN; 3],
            slor: f64::NAN,
            ce: f64::NAN,
            ce_breakdown: Vec::new(),
        };
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Malformed(format!("metric line without '=': {line:?}")))?;
            let v: f64 = v
                .parse()
                .map_err(|_| Error::Malformed(format!("metric value {v:?} is not a number")))?;
            match k {
                "distinct1" => r.distinct[0] = v,
                "distinct2" => r.distinct[1] = v,
                "distinct3" => r.distinct[2] = v,
                "slor" => r.slor = v,
                "ce" => r.ce = v,
                _ if k.starts_with("ce.") => r.ce_breakdown.push(v),
                _ => return Err(Error::Malformed(format!("unknown metric key {k:?}"))),
            }
        }
        if r.distinct.iter().chain([&r.slor, &r.ce]).any(|v| v.is_nan()) {
            return Err(Error::Malformed("metric record is missing keys".into()));
        }
        Ok(r)
    }
}
