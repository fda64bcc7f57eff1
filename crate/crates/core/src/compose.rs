//! Composition of several adapters attached at one site.
//!
//! Output strategies run every adapter and combine the outputs; each adapter
//! keeps its own `alpha / r`. Weight strategies merge the adapters first and
//! therefore need a common rank and alpha.
//!
//! Averaging the factors separately is not the same as averaging the
//! products: `(Σ Aᵢ)(Σ Bⱼ)ᵀ = Σ AᵢBᵢᵀ + Σ_{i≠j} AᵢBⱼᵀ`, so the factor merge
//! carries N² − N cross terms and an overall 1/N² instead of 1/N.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::adapter::{DeltaMode, LowRankAdapter};
use crate::error::{Error, Result};
use crate::numeric::Matrix;
use crate::site::AttachmentSite;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CompositionStrategy {
    OutputSum,
    OutputAverage,
    /// Averages `A` and `B` separately, then applies the merged pair.
    #[default]
    WeightAverageFactors,
    /// Dense average of the `A Bᵀ` products. Kept as a reference, not a low-rank adapter.
    WeightAverageProducts,
}

impl CompositionStrategy {
    pub const ALL: [CompositionStrategy; 4] = [
        CompositionStrategy::OutputSum,
        CompositionStrategy::OutputAverage,
        CompositionStrategy::WeightAverageFactors,
        CompositionStrategy::WeightAverageProducts,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            CompositionStrategy::OutputSum => "output-sum",
            CompositionStrategy::OutputAverage => "output-average",
            CompositionStrategy::WeightAverageFactors => "weight-average-factors",
            CompositionStrategy::WeightAverageProducts => "weight-average-products",
        }
    }

    /// Label used in reports.
    pub fn report_label(self) -> &'static str {
        match self {
            CompositionStrategy::OutputSum => "Output Summing",
            CompositionStrategy::OutputAverage => "Output Averaging",
            CompositionStrategy::WeightAverageFactors => "Averaged Weights",
            CompositionStrategy::WeightAverageProducts => "Averaged Products (reference oracle)",
        }
    }

    pub fn is_reference_oracle(self) -> bool {
        self == CompositionStrategy::WeightAverageProducts
    }

    pub fn merges_weights(self) -> bool {
        matches!(
            self,
            CompositionStrategy::WeightAverageFactors | CompositionStrategy::WeightAverageProducts
        )
    }
}

impl fmt::Display for CompositionStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for CompositionStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        CompositionStrategy::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown composition strategy {s:?}")))
    }
}

/// Adapters sharing one site plus the rule that combines them.
#[derive(Clone, Debug, PartialEq)]
pub struct ComposedSite {
    pub site: AttachmentSite,
    pub adapters: Vec<LowRankAdapter>,
    pub strategy: CompositionStrategy,
}

impl ComposedSite {
    pub fn new(site: AttachmentSite, strategy: CompositionStrategy) -> Self {
        Self {
            site,
            adapters: Vec::new(),
            strategy,
        }
    }

    /// Checks that the adapters can be combined under the current strategy.
    pub fn validate(&self) -> Result<()> {
        shared_dims(&self.adapters)?;
        if self.strategy.merges_weights() {
            shared_factors(&self.adapters)?;
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.adapters.len()
    }

    pub fn is_empty(&self) -> bool {
        self.adapters.is_empty()
    }
}

fn shared_dims(adapters: &[LowRankAdapter]) -> Result<(usize, usize)> {
    let first = adapters.first().ok_or(Error::Empty("adapter list"))?;
    let dims = (first.d_out(), first.d_in());
    for ad in &adapters[1..] {
        if (ad.d_out(), ad.d_in()) != dims {
            return Err(Error::Shape {
                op: "composition",
                left: dims,
                right: (ad.d_out(), ad.d_in()),
            });
        }
    }
    Ok(dims)
}

fn shared_factors(adapters: &[LowRankAdapter]) -> Result<()> {
    shared_dims(adapters)?;
    let first = &adapters[0];
    for ad in &adapters[1..] {
        if ad.rank() != first.rank() || ad.alpha() != first.alpha() {
            return Err(Error::IncompatibleFactors(format!(
                "{} has r={}, alpha={} but {} has r={}, alpha={}",
                first.name(),
                first.rank(),
                first.alpha(),
                ad.name(),
                ad.rank(),
                ad.alpha()
            )));
        }
    }
    Ok(())
}

/// `Σᵢ (αᵢ/rᵢ) Aᵢ(Bᵢᵀ x)`.
pub fn compose_output_sum(adapters: &[LowRankAdapter], x: &Matrix) -> Result<Matrix> {
    let (d_out, _) = shared_dims(adapters)?;
    let mut total = Matrix::zeros(d_out, x.cols());
    for ad in adapters {
        total.add_assign(&ad.delta_output(x, DeltaMode::Inference)?)?;
    }
    Ok(total)
}

/// `(1/N) Σᵢ (αᵢ/rᵢ) Aᵢ(Bᵢᵀ x)`.
pub fn compose_output_average(adapters: &[LowRankAdapter], x: &Matrix) -> Result<Matrix> {
    let sum = compose_output_sum(adapters, x)?;
    Ok(sum.scale(1.0 / adapters.len() as f64))
}

fn mean_of(mats: impl Iterator<Item = Matrix>, n: usize) -> Result<Matrix> {
    let mut acc: Option<Matrix> = None;
    for m in mats {
        match &mut acc {
            Some(a) => a.add_assign(&m)?,
            None => acc = Some(m),
        }
    }
    Ok(acc.ok_or(Error::Empty("adapter list"))?.scale(1.0 / n as f64))
}

/// New adapter holding `A_avg = (1/N) Σ Aᵢ` and `B_avg = (1/N) Σ Bᵢ`.
pub fn merge_factors_average(adapters: &[LowRankAdapter]) -> Result<LowRankAdapter> {
    shared_factors(adapters)?;
    let n = adapters.len();
    let a = mean_of(adapters.iter().map(|ad| ad.a().clone()), n)?;
    let b = mean_of(adapters.iter().map(|ad| ad.b().clone()), n)?;
    let first = &adapters[0];
    let name = adapters.iter().map(|a| a.name()).collect::<Vec<_>>().join("+");
    LowRankAdapter::from_parts(name, first.site(), first.alpha(), first.dropout_p(), a, b)
}

/// Dense `(1/N) Σ Aᵢ Bᵢᵀ` (unscaled by alpha / r).
pub fn merge_products_average(adapters: &[LowRankAdapter]) -> Result<Matrix> {
    shared_factors(adapters)?;
    mean_of(adapters.iter().map(|ad| ad.materialize_delta()), adapters.len())
}

/// The two parts of `(Σ Aᵢ)(Σ Bⱼ)ᵀ`.
#[derive(Clone, Debug, PartialEq)]
pub struct CrossTerms {
    /// `Σᵢ Aᵢ Bᵢᵀ`, N terms.
    pub diagonal: Matrix,
    /// `Σ_{i≠j} Aᵢ Bⱼᵀ`, N² − N terms.
    pub cross: Matrix,
    pub diagonal_terms: usize,
    pub cross_terms: usize,
}

pub fn cross_term_decomposition(adapters: &[LowRankAdapter]) -> Result<CrossTerms> {
    let (d_out, d_in) = shared_dims(adapters)?;
    shared_factors(adapters)?;
    let mut diagonal = Matrix::zeros(d_out, d_in);
    let mut cross = Matrix::zeros(d_out, d_in);
    let (mut diagonal_terms, mut cross_terms) = (0, 0);
    for (i, ai) in adapters.iter().enumerate() {
        for (j, bj) in adapters.iter().enumerate() {
            let term = ai.a().matmul_t(bj.b())?;
            if i == j {
                diagonal.add_assign(&term)?;
                diagonal_terms += 1;
            } else {
                cross.add_assign(&term)?;
                cross_terms += 1;
            }
        }
    }
    Ok(CrossTerms {
        diagonal,
        cross,
        diagonal_terms,
        cross_terms,
    })
}

/// The adapter contribution at a composed site (everything except `W0 x`).
pub fn composed_delta(composed: &ComposedSite, x: &Matrix) -> Result<Matrix> {
    composed.validate()?;
    let adapters = &composed.adapters;
    match composed.strategy {
        CompositionStrategy::OutputSum => compose_output_sum(adapters, x),
        CompositionStrategy::OutputAverage => compose_output_average(adapters, x),
        CompositionStrategy::WeightAverageFactors => {
            merge_factors_average(adapters)?.delta_output(x, DeltaMode::Inference)
        }
        CompositionStrategy::WeightAverageProducts => {
            let merged = merge_products_average(adapters)?;
            Ok(merged.matmul(x)?.scale(adapters[0].scale()))
        }
    }
}

/// `W0 x` plus the composed adapter contribution.
pub fn composed_forward(w0: &Matrix, composed: &ComposedSite, x: &Matrix) -> Result<Matrix> {
    let (d_out, d_in) = shared_dims(&composed.adapters)?;
    if w0.shape() != (d_out, d_in) {
        return Err(Error::Shape {
            op: "composed_forward",
            left: w0.shape(),
            right: (d_out, d_in),
        });
    }
    w0.matmul(x)?.add(&composed_delta(composed, x)?)
}
