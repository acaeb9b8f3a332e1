//! Phase-rotation masks.
//!
//! A client in the ⊕ side of its group rotates its symbols forward by
//! `Φᵢ = Σ φᵢⱼ` over the clients `j` on the ⊖ side of the same group; ⊖
//! clients rotate backward by their own sum. Every cross pair appears once
//! with each sign, so the masks vanish from the sum of all messages.

use std::collections::BTreeSet;

use rand::RngCore;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::channel::{ChannelError, ChannelMatrix};
use crate::codec::SymbolVector;
use crate::protocol::GroupAssignment;
use crate::rng::{keyed_rng, Stream};
use crate::{ClientId, Turn32};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum MaskingError {
    #[error("client {0} has no clients on the opposite side of its group")]
    DegenerateGroup(ClientId),

    #[error("client {0} is not covered by the group assignment")]
    NotAssigned(ClientId),

    #[error("unrecoverable round: no surviving counterpart holds a share of client {0}'s mask")]
    Unrecoverable(ClientId),

    #[error("client {0} is listed both as dropped and as a survivor")]
    DroppedIsSurvivor(ClientId),

    #[error("mask has {mask} elements but the message has {symbols}")]
    LengthMismatch { symbols: usize, mask: usize },

    #[error(transparent)]
    Channel(#[from] ChannelError),
}

/// Rotation sense: ⊕ adds the mask, ⊖ subtracts it.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Plus,
    Minus,
}

impl Direction {
    pub fn opposite(self) -> Self {
        match self {
            Direction::Plus => Direction::Minus,
            Direction::Minus => Direction::Plus,
        }
    }

    pub fn rotate(self, x: Turn32, mask: Turn32) -> Turn32 {
        match self {
            Direction::Plus => x + mask,
            Direction::Minus => x - mask,
        }
    }
}

/// How a pairwise phase becomes per-symbol mask values.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskMode {
    /// One rotation shared by every symbol of a message.
    #[default]
    Scalar,
    /// Each pair phase seeds a stream of independent per-symbol rotations.
    PerSymbol,
}

/// Expands one pairwise phase into `len` per-symbol rotations.
///
/// Both endpoints of a link know the phase, so both derive the same vector.
pub fn expand_pair_phase(phase: Turn32, iteration: u64, mode: MaskMode, len: usize) -> Vec<Turn32> {
    match mode {
        MaskMode::Scalar => vec![phase; len],
        MaskMode::PerSymbol => {
            let mut rng = keyed_rng(Stream::MaskExpansion, phase.0 as u64, &[iteration]);
            (0..len).map(|_| Turn32(rng.next_u32())).collect()
        }
    }
}

/// Element-wise sum of the expansions of several pair phases.
pub fn expand_shares(
    phases: impl IntoIterator<Item = Turn32>,
    iteration: u64,
    mode: MaskMode,
    len: usize,
) -> Vec<Turn32> {
    let mut out = vec![Turn32::ZERO; len];
    for phase in phases {
        match mode {
            MaskMode::Scalar => out.iter_mut().for_each(|o| *o += phase),
            MaskMode::PerSymbol => {
                for (o, m) in out.iter_mut().zip(expand_pair_phase(phase, iteration, mode, len)) {
                    *o += m;
                }
            }
        }
    }
    out
}

/// A client's group mask `Φᵢ` and the pairs it was built from.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroupMask {
    pub owner: ClientId,
    pub iteration: u64,
    pub phase: Turn32,
    /// `(owner, j)` for every channel summed into `phase`.
    pub contributing_pairs: Vec<(ClientId, ClientId)>,
}

impl GroupMask {
    fn from_peers(
        owner: ClientId,
        peers: impl IntoIterator<Item = ClientId>,
        channel: &ChannelMatrix,
    ) -> Result<Self, MaskingError> {
        let mut phase = Turn32::ZERO;
        let mut contributing_pairs = Vec::new();
        for j in peers {
            phase += channel.phase(owner, j)?;
            contributing_pairs.push((owner, j));
        }
        Ok(Self { owner, iteration: channel.iteration(), phase, contributing_pairs })
    }

    /// Per-symbol mask values for a message of `len` symbols.
    pub fn expand(&self, channel: &ChannelMatrix, mode: MaskMode, len: usize) -> Result<Vec<Turn32>, MaskingError> {
        if mode == MaskMode::Scalar {
            return Ok(vec![self.phase; len]);
        }
        let phases = self
            .contributing_pairs
            .iter()
            .map(|&(i, j)| channel.phase(i, j))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(expand_shares(phases, self.iteration, mode, len))
    }
}

/// Sums the channel phases between `i` and every client on the opposite
/// side of `i`'s group.
pub fn compute_group_mask(
    i: ClientId,
    assignment: &GroupAssignment,
    channel: &ChannelMatrix,
) -> Result<GroupMask, MaskingError> {
    let peers = assignment.complement(i).ok_or(MaskingError::NotAssigned(i))?;
    if peers.is_empty() {
        return Err(MaskingError::DegenerateGroup(i));
    }
    GroupMask::from_peers(i, peers, channel)
}

/// Client-local uniform phase `uᵢ`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PrivatePhase {
    pub owner: ClientId,
    pub iteration: u64,
    pub phase: Turn32,
}

pub fn sample_private_phase(i: ClientId, iteration: u64, seed: u64) -> PrivatePhase {
    let mut rng = keyed_rng(Stream::PrivatePhase, seed, &[iteration, i as u64]);
    PrivatePhase { owner: i, iteration, phase: Turn32(rng.next_u32()) }
}

/// Symbols after rotation by a client's mask(s).
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaskedSymbols {
    pub symbols: Vec<Turn32>,
    pub owner: ClientId,
    pub iteration: u64,
    pub direction: Direction,
}

/// Rotates every symbol by the same `mask`.
pub fn apply_mask(symbols: &SymbolVector, mask: Turn32, direction: Direction) -> MaskedSymbols {
    MaskedSymbols {
        symbols: symbols.symbols.iter().map(|&s| direction.rotate(s, mask)).collect(),
        owner: symbols.owner,
        iteration: symbols.iteration,
        direction,
    }
}

/// Rotates symbol `k` by `mask[k]`.
pub fn apply_mask_vector(
    symbols: &SymbolVector,
    mask: &[Turn32],
    direction: Direction,
) -> Result<MaskedSymbols, MaskingError> {
    if mask.len() != symbols.symbols.len() {
        return Err(MaskingError::LengthMismatch { symbols: symbols.symbols.len(), mask: mask.len() });
    }
    Ok(MaskedSymbols {
        symbols: symbols
            .symbols
            .iter()
            .zip(mask)
            .map(|(&s, &m)| direction.rotate(s, m))
            .collect(),
        owner: symbols.owner,
        iteration: symbols.iteration,
        direction,
    })
}

impl MaskedSymbols {
    /// Undoes a rotation applied in `direction`.
    pub fn unmask(&self, mask: Turn32, direction: Direction) -> SymbolVector {
        SymbolVector {
            symbols: self.symbols.iter().map(|&s| direction.opposite().rotate(s, mask)).collect(),
            owner: self.owner,
            iteration: self.iteration,
        }
    }
}

/// Rebuilds the part of a dropped client's mask held by surviving
/// counterparts. Shares with other dropped clients are left out: those
/// cross terms were never sent by either side and cancel in pairs.
pub fn reconstruct_dropped_group_mask(
    dropped: ClientId,
    survivors: &BTreeSet<ClientId>,
    assignment: &GroupAssignment,
    channel: &ChannelMatrix,
) -> Result<GroupMask, MaskingError> {
    if survivors.contains(&dropped) {
        return Err(MaskingError::DroppedIsSurvivor(dropped));
    }
    let peers: Vec<ClientId> = assignment
        .complement(dropped)
        .ok_or(MaskingError::NotAssigned(dropped))?
        .into_iter()
        .filter(|j| survivors.contains(j))
        .collect();
    if peers.is_empty() {
        return Err(MaskingError::Unrecoverable(dropped));
    }
    GroupMask::from_peers(dropped, peers, channel)
}

pub fn reconstruct_dropped_mask(
    dropped: ClientId,
    survivors: &BTreeSet<ClientId>,
    assignment: &GroupAssignment,
    channel: &ChannelMatrix,
) -> Result<Turn32, MaskingError> {
    reconstruct_dropped_group_mask(dropped, survivors, assignment, channel).map(|m| m.phase)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::sample_round_channel;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn split(s: usize, a: &[ClientId]) -> GroupAssignment {
        GroupAssignment::two_groups_from_members(s, a).unwrap()
    }

    #[test]
    fn single_peer_mask_is_that_phase() {
        let c = ChannelMatrix::from_fn(4, 0, |i, j| Turn32((10 * i + j) as u32)).unwrap();
        let asg = split(4, &[0, 1]);
        let m = compute_group_mask(0, &asg, &c).unwrap();
        assert_eq!(m.phase, Turn32(2) + Turn32(3));
        assert_eq!(m.contributing_pairs, vec![(0, 2), (0, 3)]);
    }

    #[test]
    fn two_peer_mask_wraps() {
        let a = Turn32(u32::MAX - 5);
        let b = Turn32(10);
        let c = ChannelMatrix::from_fn(4, 0, |i, j| match (i, j) {
            (0, 2) => a,
            (0, 3) => b,
            _ => Turn32(1),
        })
        .unwrap();
        let asg = split(4, &[0, 1]);
        assert_eq!(compute_group_mask(0, &asg, &c).unwrap().phase, Turn32(4));
    }

    #[test]
    fn cross_group_masks_cancel() {
        // brute force over the 16 cross pairs of a 4/4 split
        let c = sample_round_channel(8, 0, 99).unwrap();
        let a = [0, 2, 5, 7];
        let asg = split(8, &a);
        let plus: Turn32 = a.iter().map(|&i| compute_group_mask(i, &asg, &c).unwrap().phase).sum();
        let minus: Turn32 = [1, 3, 4, 6].iter().map(|&i| compute_group_mask(i, &asg, &c).unwrap().phase).sum();
        assert_eq!(plus - minus, Turn32::ZERO);
        let mut cross = Turn32::ZERO;
        for &i in &a {
            for j in [1, 3, 4, 6] {
                cross += c.phase(i, j).unwrap();
            }
        }
        assert_eq!(plus, cross);
    }

    #[test]
    fn degenerate_and_unassigned() {
        let c = sample_round_channel(4, 0, 1).unwrap();
        let asg = split(4, &[0, 1]);
        assert_eq!(compute_group_mask(9, &asg, &c), Err(MaskingError::NotAssigned(9)));
    }

    #[test]
    fn mask_rotation_examples() {
        let s = SymbolVector { symbols: vec![Turn32(1 << 30)], owner: 0, iteration: 0 };
        assert_eq!(apply_mask(&s, Turn32::ZERO, Direction::Plus).symbols, s.symbols);
        assert_eq!(
            apply_mask(&s, Turn32(1 << 31), Direction::Plus).symbols,
            vec![Turn32((1 << 30) + (1 << 31))]
        );
    }

    #[test]
    fn plus_then_minus_restores() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..1000 {
            let len = rng.random_range(1..16);
            let s = SymbolVector {
                symbols: (0..len).map(|_| Turn32(rng.random())).collect(),
                owner: 3,
                iteration: 2,
            };
            let m = Turn32(rng.random());
            let masked = apply_mask(&s, m, Direction::Plus);
            let back = apply_mask(
                &SymbolVector { symbols: masked.symbols.clone(), owner: 3, iteration: 2 },
                m,
                Direction::Minus,
            );
            assert_eq!(back.symbols, s.symbols);
            assert_eq!(masked.unmask(m, Direction::Plus), s);
        }
    }

    #[test]
    fn vector_mask_length_checked() {
        let s = SymbolVector { symbols: vec![Turn32(0); 3], owner: 0, iteration: 0 };
        assert_eq!(
            apply_mask_vector(&s, &[Turn32(1)], Direction::Plus),
            Err(MaskingError::LengthMismatch { symbols: 3, mask: 1 })
        );
    }

    #[test]
    fn private_phase_is_deterministic_and_per_client() {
        assert_eq!(sample_private_phase(2, 5, 8), sample_private_phase(2, 5, 8));
        assert_ne!(sample_private_phase(2, 5, 8).phase, sample_private_phase(3, 5, 8).phase);
        assert_ne!(sample_private_phase(2, 5, 8).phase, sample_private_phase(2, 6, 8).phase);
    }

    #[test]
    fn reconstruction_examples() {
        let c = sample_round_channel(6, 0, 17).unwrap();
        let asg = split(6, &[0, 1, 2]);
        let full = compute_group_mask(0, &asg, &c).unwrap().phase;

        let survivors: BTreeSet<_> = [1, 2, 3, 4, 5].into();
        assert_eq!(reconstruct_dropped_mask(0, &survivors, &asg, &c).unwrap(), full);

        let survivors: BTreeSet<_> = [1, 2, 4, 5].into();
        assert_eq!(
            reconstruct_dropped_mask(0, &survivors, &asg, &c).unwrap(),
            full - c.phase(0, 3).unwrap()
        );

        let survivors: BTreeSet<_> = [1, 2].into();
        assert_eq!(
            reconstruct_dropped_mask(0, &survivors, &asg, &c),
            Err(MaskingError::Unrecoverable(0))
        );
        let survivors: BTreeSet<_> = [0, 1].into();
        assert_eq!(
            reconstruct_dropped_mask(0, &survivors, &asg, &c),
            Err(MaskingError::DroppedIsSurvivor(0))
        );
    }

    #[test]
    fn per_symbol_expansion_is_linear_and_reciprocal() {
        let c = sample_round_channel(4, 3, 2).unwrap();
        let asg = split(4, &[0, 1]);
        let m0 = compute_group_mask(0, &asg, &c).unwrap().expand(&c, MaskMode::PerSymbol, 5).unwrap();
        let direct = expand_shares([c.phase(0, 2).unwrap(), c.phase(0, 3).unwrap()], 3, MaskMode::PerSymbol, 5);
        assert_eq!(m0, direct);
        assert_eq!(
            expand_pair_phase(c.phase(0, 2).unwrap(), 3, MaskMode::PerSymbol, 5),
            expand_pair_phase(c.phase(2, 0).unwrap(), 3, MaskMode::PerSymbol, 5)
        );
        let scalar = compute_group_mask(0, &asg, &c).unwrap().expand(&c, MaskMode::Scalar, 3).unwrap();
        assert_eq!(scalar, vec![compute_group_mask(0, &asg, &c).unwrap().phase; 3]);
    }
}
