use std::collections::BTreeSet;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use super::{ClientMessage, GroupAssignment, ProtocolVersion};
use crate::masking::MaskMode;
use crate::{ClientId, Turn32};

/// What the server asked a client for during dropout correction.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ShareRequest {
    /// The phase of the channel between the queried client and `dropped`.
    PairPhase { dropped: ClientId },
    /// The queried client's own private phase.
    PrivatePhase,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorrectionQuery {
    pub to: ClientId,
    pub request: ShareRequest,
}

/// A value disclosed to the server.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RevealedShare {
    PairPhase { dropped: ClientId, holder: ClientId, phase: Turn32 },
    PrivatePhase { owner: ClientId, phase: Turn32 },
}

/// Exact message counts of one round.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counters {
    /// One per unordered client pair that estimated its channel phase.
    pub phase_estimations: u64,
    /// Client-to-server messages carrying masked symbols, late ones included.
    pub uplink_messages: u64,
    /// Pairwise channel shares revealed for dropped clients.
    pub recovery_messages: u64,
    /// Private phases revealed by survivors.
    pub private_phase_reveals: u64,
}

/// Payload sizes of one client's update.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LinkBudget {
    /// Quantized payload bits `L`.
    pub payload_bits: u64,
    /// FEC redundancy bits `r`.
    pub fec_redundancy_bits: u64,
    /// PSK symbols actually sent.
    pub symbols: u64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "disposition", rename_all = "snake_case")]
pub enum LateDisposition {
    Discarded,
    /// De-rotated with the reconstructed mask.
    Processed { recovered_digits: Vec<u64> },
}

/// A message that reached the server after correction queries about its sender.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LateMessage {
    pub message: ClientMessage,
    #[serde(flatten)]
    pub disposition: LateDisposition,
}

/// Everything observable about one aggregation round.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoundTranscript {
    pub iteration: u64,
    pub protocol_version: ProtocolVersion,
    pub mask_mode: MaskMode,
    pub modulus: u64,
    pub assignment: GroupAssignment,
    pub messages: Vec<ClientMessage>,
    pub dropped: BTreeSet<ClientId>,
    pub delayed: Option<ClientId>,
    pub correction_queries: Vec<CorrectionQuery>,
    pub revealed_shares: Vec<RevealedShare>,
    pub late_messages: Vec<LateMessage>,
    pub counters: Counters,
    pub link: LinkBudget,
    pub correction: Vec<Turn32>,
    pub contributors: usize,
    /// Decoded per-element digit sums over contributors.
    pub aggregate: Vec<u64>,
}

impl RoundTranscript {
    /// Clients whose updates are in the aggregate.
    pub fn survivors(&self) -> BTreeSet<ClientId> {
        self.messages.iter().map(|m| m.owner).collect()
    }
}

/// Writes one JSON object per line.
pub fn write_transcripts<'a, W: Write>(
    mut out: W,
    transcripts: impl IntoIterator<Item = &'a RoundTranscript>,
) -> std::io::Result<()> {
    for t in transcripts {
        serde_json::to_writer(&mut out, t)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_transcripts<R: BufRead>(input: R) -> std::io::Result<Vec<RoundTranscript>> {
    input
        .lines()
        .filter(|l| l.as_ref().map_or(true, |s| !s.trim().is_empty()))
        .map(|line| {
            let line = line?;
            serde_json::from_str(&line).map_err(std::io::Error::from)
        })
        .collect()
}
