use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::transcript::{
    CorrectionQuery, Counters, LateDisposition, LateMessage, LinkBudget, RevealedShare, RoundTranscript, ShareRequest,
};
use super::{GroupAssignment, ProtocolError};
use crate::channel::ChannelMatrix;
use crate::codec::{self, decode_sum, dequantize_mean, modulate, FecConfig, QuantizationConfig, QuantizedVector};
use crate::masking::{
    apply_mask_vector, compute_group_mask, expand_shares, reconstruct_dropped_group_mask, sample_private_phase,
    Direction, MaskMode, MaskedSymbols, PrivatePhase,
};
use crate::{ClientId, Turn32};

/// Algorithm 1 masks with `Φᵢ` only; Algorithm 2 adds the private phase `uᵢ`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProtocolVersion {
    Alg1,
    Alg2,
}

/// Masked update sent by one client.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClientMessage {
    pub owner: ClientId,
    pub iteration: u64,
    pub masked: MaskedSymbols,
    pub protocol_version: ProtocolVersion,
}

/// Shared, read-only inputs of one aggregation round.
#[derive(Clone, Copy, Debug)]
pub struct RoundContext<'a> {
    pub iteration: u64,
    pub assignment: &'a GroupAssignment,
    pub channel: &'a ChannelMatrix,
    pub quant: &'a QuantizationConfig,
    pub fec: &'a FecConfig,
    pub version: ProtocolVersion,
    pub mask_mode: MaskMode,
    pub seed: u64,
}

impl RoundContext<'_> {
    fn validate(&self) -> Result<(), ProtocolError> {
        if self.channel.num_clients() != self.assignment.num_clients() {
            return Err(ProtocolError::InvalidRound(format!(
                "channel covers {} clients but the assignment covers {}",
                self.channel.num_clients(),
                self.assignment.num_clients()
            )));
        }
        if self.channel.iteration() != self.iteration {
            return Err(ProtocolError::InvalidRound(format!(
                "channel sampled for iteration {} used in iteration {}",
                self.channel.iteration(),
                self.iteration
            )));
        }
        if self.assignment.num_clients() > self.quant.max_clients() {
            return Err(ProtocolError::InvalidRound(format!(
                "{} clients exceed the modulus headroom for {}",
                self.assignment.num_clients(),
                self.quant.max_clients()
            )));
        }
        Ok(())
    }

    fn side(&self, i: ClientId) -> Result<Direction, ProtocolError> {
        self.assignment
            .label(i)
            .map(|l| l.side)
            .ok_or_else(|| ProtocolError::InvalidRound(format!("client {i} is not assigned")))
    }
}

/// Client `i`'s upload: modulate, rotate by `uᵢ` (Algorithm 2), then by
/// `Φᵢ` in the direction of `i`'s side.
pub fn client_message(
    ctx: &RoundContext<'_>,
    i: ClientId,
    digits: &QuantizedVector,
) -> Result<ClientMessage, ProtocolError> {
    let side = ctx.side(i)?;
    let mut symbols = modulate(digits, ctx.quant, i, ctx.iteration)?;
    if ctx.version == ProtocolVersion::Alg2 {
        let u = sample_private_phase(i, ctx.iteration, ctx.seed).phase;
        symbols.symbols.iter_mut().for_each(|s| *s += u);
    }
    let mask = compute_group_mask(i, ctx.assignment, ctx.channel)?.expand(ctx.channel, ctx.mask_mode, digits.dim())?;
    Ok(ClientMessage {
        owner: i,
        iteration: ctx.iteration,
        masked: apply_mask_vector(&symbols, &mask, side)?,
        protocol_version: ctx.version,
    })
}

/// Decoded aggregate of one round.
#[derive(Clone, Debug, PartialEq)]
pub struct AggregateResult {
    pub digit_sums: Vec<u64>,
    pub mean: Vec<f64>,
    pub contributors: usize,
}

/// Server side: modulo-2³² sum of the received phases plus the correction,
/// decoded to digit sums and averaged over the contributors.
pub fn ps_aggregate_and_decode(
    messages: &[ClientMessage],
    correction: &[Turn32],
    num_contributors: usize,
    cfg: &QuantizationConfig,
) -> Result<AggregateResult, ProtocolError> {
    if messages.is_empty() || num_contributors == 0 {
        return Err(ProtocolError::Unrecoverable("no client updates to aggregate".into()));
    }
    if messages.len() != num_contributors {
        return Err(ProtocolError::InvalidRound(format!(
            "{} messages for {num_contributors} contributors",
            messages.len()
        )));
    }
    let dim = correction.len();
    let mut agg = correction.to_vec();
    for m in messages {
        if m.masked.symbols.len() != dim {
            return Err(ProtocolError::InvalidRound(format!(
                "message from client {} has {} symbols, expected {dim}",
                m.owner,
                m.masked.symbols.len()
            )));
        }
        for (a, &s) in agg.iter_mut().zip(&m.masked.symbols) {
            *a += s;
        }
    }
    let digit_sums = decode_sum(&agg, cfg)?;
    let mean = dequantize_mean(&digit_sums, num_contributors, cfg)?;
    Ok(AggregateResult { digit_sums, mean, contributors: num_contributors })
}

/// Correction phase per element together with the queries that produced it.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Correction {
    pub phases: Vec<Turn32>,
    pub queries: Vec<CorrectionQuery>,
    pub reveals: Vec<RevealedShare>,
}

/// Builds the server's correction for a round in which `dropped` sent nothing.
///
/// For each dropped client the server collects the channel shares held by
/// its surviving counterparts, adding the rebuilt mask for ⊕-side clients
/// and subtracting it for ⊖-side ones; under Algorithm 2 it also collects
/// and subtracts every survivor's private phase. A group that still has
/// survivors must keep at least one on each side, otherwise the revealed
/// shares would complete a survivor's mask next to its private phase.
pub fn dropout_correction(
    ctx: &RoundContext<'_>,
    dropped: &BTreeSet<ClientId>,
    private_phases: &BTreeMap<ClientId, PrivatePhase>,
    dim: usize,
) -> Result<Correction, ProtocolError> {
    let n = ctx.assignment.num_clients();
    if let Some(&bad) = dropped.iter().find(|&&i| i >= n) {
        return Err(ProtocolError::InvalidRound(format!("dropped client {bad} out of range")));
    }
    let survivors: BTreeSet<ClientId> = (0..n).filter(|i| !dropped.contains(i)).collect();
    if survivors.is_empty() {
        return Err(ProtocolError::Unrecoverable("every client dropped".into()));
    }

    let mut recoverable_groups = BTreeSet::new();
    for g in 0..ctx.assignment.num_groups() {
        let count = |side| {
            ctx.assignment.members(g, side).iter().fold((0usize, 0usize), |(s, d), i| {
                if dropped.contains(i) {
                    (s, d + 1)
                } else {
                    (s + 1, d)
                }
            })
        };
        let (plus_alive, plus_dropped) = count(Direction::Plus);
        let (minus_alive, minus_dropped) = count(Direction::Minus);
        if plus_dropped + minus_dropped == 0 || plus_alive + minus_alive == 0 {
            continue;
        }
        if plus_alive == 0 || minus_alive == 0 {
            return Err(ProtocolError::Unrecoverable(format!(
                "group {g} has survivors but one side is fully dropped ({plus_alive} ⊕ / {minus_alive} ⊖ alive)"
            )));
        }
        recoverable_groups.insert(g);
    }

    let mut phases = vec![Turn32::ZERO; dim];
    let mut queries = Vec::new();
    let mut reveals = Vec::new();

    for &i in dropped {
        let label = ctx.assignment.label(i).expect("range checked");
        if !recoverable_groups.contains(&label.group) {
            continue;
        }
        let plan = reconstruct_dropped_group_mask(i, &survivors, ctx.assignment, ctx.channel)?;
        let mut shares = Vec::with_capacity(plan.contributing_pairs.len());
        for &(_, holder) in &plan.contributing_pairs {
            queries.push(CorrectionQuery { to: holder, request: ShareRequest::PairPhase { dropped: i } });
            // the holder answers with its side of the reciprocal channel
            let phase = ctx.channel.phase(holder, i)?;
            reveals.push(RevealedShare::PairPhase { dropped: i, holder, phase });
            shares.push(phase);
        }
        let rebuilt = expand_shares(shares, ctx.iteration, ctx.mask_mode, dim);
        for (c, m) in phases.iter_mut().zip(rebuilt) {
            *c = label.side.rotate(*c, m);
        }
    }

    if ctx.version == ProtocolVersion::Alg2 {
        for &j in &survivors {
            queries.push(CorrectionQuery { to: j, request: ShareRequest::PrivatePhase });
            let u = private_phases
                .get(&j)
                .ok_or_else(|| ProtocolError::InvalidRound(format!("no private phase for survivor {j}")))?
                .phase;
            reveals.push(RevealedShare::PrivatePhase { owner: j, phase: u });
            phases.iter_mut().for_each(|c| *c -= u);
        }
    }

    check_reveal_safety(ctx.assignment, &reveals)?;
    Ok(Correction { phases, queries, reveals })
}

/// Fails if, for any client, the server holds its private phase and every
/// channel share of its mask.
fn check_reveal_safety(assignment: &GroupAssignment, reveals: &[RevealedShare]) -> Result<(), ProtocolError> {
    let mut peers_revealed: BTreeMap<ClientId, BTreeSet<ClientId>> = BTreeMap::new();
    for r in reveals {
        if let RevealedShare::PairPhase { dropped, holder, .. } = *r {
            peers_revealed.entry(dropped).or_default().insert(holder);
            peers_revealed.entry(holder).or_default().insert(dropped);
        }
    }
    for r in reveals {
        if let RevealedShare::PrivatePhase { owner, .. } = *r {
            let complement = assignment.complement(owner).unwrap_or_default();
            let known = peers_revealed.get(&owner);
            if known.is_some_and(|k| complement.iter().all(|j| k.contains(j))) {
                return Err(ProtocolError::RevealSafety(owner));
            }
        }
    }
    Ok(())
}

/// De-rotates a message by the mask rebuilt from channel shares revealed
/// about its sender and reads off the nearest constellation points.
///
/// This is what a server can do with a late message from a client it has
/// already treated as dropped.
pub fn unmask_with_revealed_shares(
    message: &ClientMessage,
    reveals: &[RevealedShare],
    cfg: &QuantizationConfig,
    mask_mode: MaskMode,
) -> Vec<u64> {
    let shares = reveals.iter().filter_map(|r| match *r {
        RevealedShare::PairPhase { dropped, phase, .. } if dropped == message.owner => Some(phase),
        _ => None,
    });
    let len = message.masked.symbols.len();
    let mask = expand_shares(shares, message.iteration, mask_mode, len);
    let step = cfg.step();
    let undo = message.masked.direction.opposite();
    message
        .masked
        .symbols
        .iter()
        .zip(mask)
        .map(|(&s, m)| {
            let v = undo.rotate(s, m).0 as u64;
            ((v + step / 2) / step) % cfg.modulus()
        })
        .collect()
}

/// Transcript and decoded aggregate of a completed round.
#[derive(Clone, Debug, PartialEq)]
pub struct RoundOutcome {
    pub transcript: RoundTranscript,
    pub result: AggregateResult,
}

/// Runs one aggregation round end to end.
///
/// `digits[i]` is client `i`'s quantized update. Clients in `dropped` send
/// nothing; `delayed` sends only after the server has issued its correction
/// queries and is treated by the server as dropped.
pub fn execute_round(
    ctx: &RoundContext<'_>,
    digits: &[QuantizedVector],
    dropped: &BTreeSet<ClientId>,
    delayed: Option<ClientId>,
) -> Result<RoundOutcome, ProtocolError> {
    ctx.validate()?;
    ctx.fec.validate()?;
    let n = ctx.assignment.num_clients();
    if digits.len() != n {
        return Err(ProtocolError::InvalidRound(format!("{} updates for {n} clients", digits.len())));
    }
    let dim = digits[0].dim();
    if dim == 0 || digits.iter().any(|d| d.dim() != dim) {
        return Err(ProtocolError::InvalidRound("updates must share a nonzero dimension".into()));
    }
    if let Some(i) = delayed {
        if i >= n || dropped.contains(&i) {
            return Err(ProtocolError::InvalidRound(format!("delayed client {i} is out of range or dropped")));
        }
    }

    let mut counters = Counters::default();
    for (i, j) in ctx.assignment.phase_estimation_pairs() {
        ctx.channel.phase(i, j)?;
        counters.phase_estimations += 1;
    }

    let payload_bits = dim as u64 * ctx.quant.bits_per_digit() as u64;
    let link = LinkBudget {
        payload_bits,
        fec_redundancy_bits: ctx.fec.redundancy(payload_bits as usize) as u64,
        symbols: dim as u64,
    };

    let mut messages = Vec::new();
    let mut late = None;
    for (i, v) in digits.iter().enumerate() {
        if dropped.contains(&i) {
            continue;
        }
        // FEC is carried structurally on the noiseless link
        let bits = codec::to_bits(v, ctx.quant);
        let received = codec::from_bits(&ctx.fec.decode(&ctx.fec.encode(&bits))?, ctx.quant)?;
        let msg = client_message(ctx, i, &received)?;
        if Some(i) == delayed {
            late = Some(msg);
        } else {
            messages.push(msg);
            counters.uplink_messages += 1;
        }
    }

    let ps_dropped: BTreeSet<ClientId> = dropped.iter().copied().chain(delayed).collect();
    let correction = if ps_dropped.is_empty() && ctx.version == ProtocolVersion::Alg1 {
        Correction { phases: vec![Turn32::ZERO; dim], queries: Vec::new(), reveals: Vec::new() }
    } else {
        let private: BTreeMap<ClientId, PrivatePhase> = messages
            .iter()
            .map(|m| (m.owner, sample_private_phase(m.owner, ctx.iteration, ctx.seed)))
            .collect();
        dropout_correction(ctx, &ps_dropped, &private, dim)?
    };
    for r in &correction.reveals {
        match r {
            RevealedShare::PairPhase { .. } => counters.recovery_messages += 1,
            RevealedShare::PrivatePhase { .. } => counters.private_phase_reveals += 1,
        }
    }

    let result = ps_aggregate_and_decode(&messages, &correction.phases, messages.len(), ctx.quant)?;

    let late_messages = late
        .map(|message| {
            counters.uplink_messages += 1;
            let disposition = match ctx.version {
                ProtocolVersion::Alg2 => LateDisposition::Discarded,
                ProtocolVersion::Alg1 => LateDisposition::Processed {
                    recovered_digits: unmask_with_revealed_shares(
                        &message,
                        &correction.reveals,
                        ctx.quant,
                        ctx.mask_mode,
                    ),
                },
            };
            LateMessage { message, disposition }
        })
        .into_iter()
        .collect();

    let transcript = RoundTranscript {
        iteration: ctx.iteration,
        protocol_version: ctx.version,
        mask_mode: ctx.mask_mode,
        modulus: ctx.quant.modulus(),
        assignment: ctx.assignment.clone(),
        messages,
        dropped: dropped.clone(),
        delayed,
        correction_queries: correction.queries,
        revealed_shares: correction.reveals,
        late_messages,
        counters,
        link,
        correction: correction.phases,
        contributors: result.contributors,
        aggregate: result.digit_sums.clone(),
    };
    Ok(RoundOutcome { transcript, result })
}
