//! Round orchestration: grouping, client messages, server-side aggregation,
//! dropout correction and the training-iteration driver.

mod grouping;
mod iteration;
mod round;
mod transcript;

use thiserror::Error;

use crate::channel::ChannelError;
use crate::codec::CodecError;
use crate::fl::FlError;
use crate::masking::MaskingError;
use crate::ClientId;

pub use grouping::{
    assign_subgroups, assign_two_groups, ClientLabel, GroupAssignment, GroupingMode, MIN_CLIENTS_TWO_GROUP, MIN_SIDE,
};
pub use iteration::{
    run_baseline_iteration, run_iteration, sample_dropouts, BaselineRound, DropoutModel, GroupingSpec,
    IterationConfig,
};
pub use round::{
    client_message, dropout_correction, execute_round, ps_aggregate_and_decode, unmask_with_revealed_shares,
    AggregateResult, ClientMessage, Correction, ProtocolVersion, RoundContext, RoundOutcome,
};
pub use transcript::{
    read_transcripts, write_transcripts, CorrectionQuery, Counters, LateDisposition, LateMessage, LinkBudget,
    RevealedShare, RoundTranscript, ShareRequest,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProtocolError {
    #[error("insufficient clients: need at least {need}, got {got}")]
    InsufficientClients { got: usize, need: usize },

    #[error("subgroup size L = {subgroup_size} is below the security floor L >= 2")]
    SecurityFloor { subgroup_size: usize },

    #[error("cannot form {groups} groups of 2L = {} from {clients} clients (need K·2L <= N < (K+1)·2L)", 2 * subgroup_size)]
    InfeasibleGrouping { clients: usize, groups: usize, subgroup_size: usize },

    #[error("invalid grouping: {0}")]
    InvalidGrouping(String),

    #[error("unrecoverable round: {0}")]
    Unrecoverable(String),

    #[error("reveal-safety violation: the server would learn both u and the full mask of client {0}")]
    RevealSafety(ClientId),

    #[error("invalid round input: {0}")]
    InvalidRound(String),

    #[error(transparent)]
    Channel(#[from] ChannelError),

    #[error(transparent)]
    Codec(#[from] CodecError),

    #[error(transparent)]
    Masking(#[from] MaskingError),

    #[error(transparent)]
    Fl(#[from] FlError),
}

impl ProtocolError {
    /// True when the round cannot be completed because too many clients dropped.
    pub fn is_unrecoverable(&self) -> bool {
        matches!(
            self,
            ProtocolError::Unrecoverable(_) | ProtocolError::Masking(MaskingError::Unrecoverable(_))
        )
    }
}
