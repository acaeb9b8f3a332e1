//! Privacy statistics, the delayed-client attack, the difference-leak probe
//! and communication-overhead checks.

mod attack;
mod leak;
mod overhead;
mod stats;

use thiserror::Error;

use crate::protocol::ProtocolError;

pub use attack::{delayed_client_attack, AttackConfig, AttackOutcome, AttackRun, AttackScenario};
pub use leak::{difference_leak_probe, DifferenceRecord, LeakReport};
pub use overhead::{verify_overhead, OverheadReport, RecoveryCheck};
pub use stats::{
    binomial_two_sided_p, chi_square_uniformity, exact_masking_information, mutual_information_estimate,
    ExactPrivacyReport, UniformityReport, ALPHA, MIN_BINS, MIN_SAMPLES_PER_BIN,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AnalysisError {
    #[error("underpowered test: need at least {needed} samples, got {got}")]
    Underpowered { needed: usize, got: usize },

    #[error("invalid analysis input: {0}")]
    InvalidInput(String),

    #[error(transparent)]
    Protocol(#[from] ProtocolError),
}
