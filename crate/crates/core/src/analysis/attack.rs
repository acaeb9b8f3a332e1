use std::collections::BTreeSet;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::AnalysisError;
use crate::channel::sample_round_channel;
use crate::codec::{FecConfig, QuantizationConfig, QuantizedVector};
use crate::masking::MaskMode;
use crate::protocol::{
    execute_round, GroupingSpec, unmask_with_revealed_shares, ProtocolVersion, RoundContext, RoundTranscript,
};
use crate::rng::{derive_seed, keyed_rng, Stream};
use crate::ClientId;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackScenario {
    /// Algorithm 1 with the naive remedy: the server rebuilds `Φᵢ` of an
    /// apparently dropped client from its counterparts' shares.
    Alg1NaiveRemedy,
    /// Algorithm 2: the same shares leave the private phase `uᵢ` in place.
    Alg2,
}

impl AttackScenario {
    pub fn version(self) -> ProtocolVersion {
        match self {
            AttackScenario::Alg1NaiveRemedy => ProtocolVersion::Alg1,
            AttackScenario::Alg2 => ProtocolVersion::Alg2,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttackConfig {
    pub scenario: AttackScenario,
    pub num_clients: usize,
    pub grouping: GroupingSpec,
    pub dimension: usize,
    pub quant: QuantizationConfig,
    pub mask_mode: MaskMode,
    pub delayed_client: ClientId,
    /// When false the delayed client never sends at all.
    pub delayed_sends: bool,
    pub iteration: u64,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "outcome", rename_all = "snake_case")]
pub enum AttackOutcome {
    /// Nothing arrived late, so there was nothing to unmask.
    NoOp,
    Executed {
        scenario: AttackScenario,
        delayed_client: ClientId,
        true_digits: Vec<u64>,
        recovered_digits: Vec<u64>,
        matches: usize,
        /// Every digit recovered.
        succeeded: bool,
    },
}

/// An attack attempt and the transcript of the round it was played in.
#[derive(Clone, Debug, PartialEq)]
pub struct AttackRun {
    pub outcome: AttackOutcome,
    pub transcript: RoundTranscript,
}

/// Plays one round in which the server issues recovery queries for a
/// client whose message then arrives late, and de-rotates that message with
/// the server's own reconstruction code.
pub fn delayed_client_attack(cfg: &AttackConfig) -> Result<AttackRun, AnalysisError> {
    if cfg.delayed_client >= cfg.num_clients {
        return Err(AnalysisError::InvalidInput(format!(
            "delayed client {} out of range for {} clients",
            cfg.delayed_client, cfg.num_clients
        )));
    }
    if cfg.dimension == 0 {
        return Err(AnalysisError::InvalidInput("dimension must be positive".into()));
    }
    let t = cfg.iteration;
    let mut rng = keyed_rng(Stream::AttackPayload, cfg.seed, &[t]);
    let digits: Vec<QuantizedVector> = (0..cfg.num_clients)
        .map(|_| {
            let d = (0..cfg.dimension).map(|_| rng.random_range(0..cfg.quant.levels())).collect();
            QuantizedVector::new(d, &cfg.quant)
        })
        .collect::<Result<_, _>>()
        .map_err(crate::protocol::ProtocolError::from)?;

    let channel = sample_round_channel(cfg.num_clients, t, cfg.seed).map_err(crate::protocol::ProtocolError::from)?;
    let assignment = cfg.grouping.assign(cfg.num_clients, derive_seed(Stream::Grouping, cfg.seed, &[t]))?;
    let fec = FecConfig::default();
    let ctx = RoundContext {
        iteration: t,
        assignment: &assignment,
        channel: &channel,
        quant: &cfg.quant,
        fec: &fec,
        version: cfg.scenario.version(),
        mask_mode: cfg.mask_mode,
        seed: cfg.seed,
    };

    if !cfg.delayed_sends {
        let dropped: BTreeSet<ClientId> = [cfg.delayed_client].into();
        let transcript = execute_round(&ctx, &digits, &dropped, None)?.transcript;
        return Ok(AttackRun { outcome: AttackOutcome::NoOp, transcript });
    }

    let transcript = execute_round(&ctx, &digits, &BTreeSet::new(), Some(cfg.delayed_client))?.transcript;
    let late = transcript
        .late_messages
        .first()
        .ok_or_else(|| AnalysisError::InvalidInput("round produced no late message".into()))?;
    let recovered_digits =
        unmask_with_revealed_shares(&late.message, &transcript.revealed_shares, &cfg.quant, cfg.mask_mode);
    let true_digits: Vec<u64> = digits[cfg.delayed_client].digits().iter().map(|&d| d as u64).collect();
    let matches = true_digits.iter().zip(&recovered_digits).filter(|(a, b)| a == b).count();
    let outcome = AttackOutcome::Executed {
        scenario: cfg.scenario,
        delayed_client: cfg.delayed_client,
        succeeded: matches == true_digits.len(),
        true_digits,
        recovered_digits,
        matches,
    };
    Ok(AttackRun { outcome, transcript })
}
