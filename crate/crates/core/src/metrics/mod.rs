//! Diversity (Distinct-n), fluency (SLOR), Control Effectiveness and correlation.

mod control;
mod correlation;
mod diversity;
mod fluency;
mod report;

pub use control::{
    ce_multi, ce_single, majority_vote, GenerationRecord, OracleClassifier, ENSEMBLE_SIZE,
};
pub use correlation::{average_ranks, pearson, spearman};
pub use diversity::distinct_n;
pub use fluency::{slor, BigramScorer, HostScorer, SequenceScorer, UnigramModel};
pub use report::MetricReport;
