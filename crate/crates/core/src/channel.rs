//! Reciprocal channel phases between client pairs.

use rand::RngCore;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::{keyed_rng, Stream};
use crate::{ClientId, Turn32};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ChannelError {
    #[error("invalid topology: need at least 2 clients, got {0}")]
    InvalidTopology(usize),

    #[error("client {0} has no channel to itself")]
    NoSelfChannel(ClientId),

    #[error("client id {id} out of range for {num_clients} clients")]
    IndexOutOfRange { id: ClientId, num_clients: usize },
}

/// Draws the phase of the channel between `i` and `j` at iteration `t`.
///
/// The draw is keyed by the unordered pair, so `(i, j)` and `(j, i)` agree.
pub fn pair_phase(seed: u64, iteration: u64, i: ClientId, j: ClientId) -> Turn32 {
    let (lo, hi) = if i < j { (i, j) } else { (j, i) };
    let mut rng = keyed_rng(Stream::ChannelPhase, seed, &[iteration, lo as u64, hi as u64]);
    Turn32(rng.next_u32())
}

/// Symmetric table of pairwise channel phases for one training iteration.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChannelMatrix {
    num_clients: usize,
    iteration: u64,
    /// Row-major `num_clients × num_clients`; diagonal entries are zero and unused.
    phases: Vec<Turn32>,
}

impl ChannelMatrix {
    /// Builds a matrix from `phase(i, j)`, evaluated once per unordered pair `i < j`.
    pub fn from_fn(
        num_clients: usize,
        iteration: u64,
        mut phase: impl FnMut(ClientId, ClientId) -> Turn32,
    ) -> Result<Self, ChannelError> {
        if num_clients < 2 {
            return Err(ChannelError::InvalidTopology(num_clients));
        }
        let mut phases = vec![Turn32::ZERO; num_clients * num_clients];
        for i in 0..num_clients {
            for j in (i + 1)..num_clients {
                let p = phase(i, j);
                phases[i * num_clients + j] = p;
                phases[j * num_clients + i] = p;
            }
        }
        Ok(Self { num_clients, iteration, phases })
    }

    pub fn num_clients(&self) -> usize {
        self.num_clients
    }

    pub fn iteration(&self) -> u64 {
        self.iteration
    }

    /// Phase of the channel between `i` and `j`; equal to `phase(j, i)`.
    pub fn phase(&self, i: ClientId, j: ClientId) -> Result<Turn32, ChannelError> {
        for id in [i, j] {
            if id >= self.num_clients {
                return Err(ChannelError::IndexOutOfRange { id, num_clients: self.num_clients });
            }
        }
        if i == j {
            return Err(ChannelError::NoSelfChannel(i));
        }
        Ok(self.phases[i * self.num_clients + j])
    }

    /// Number of unordered client pairs, i.e. independent draws.
    pub fn num_pairs(&self) -> usize {
        self.num_clients * (self.num_clients - 1) / 2
    }

    /// Iterates `(i, j, phase)` over unordered pairs with `i < j`.
    pub fn pairs(&self) -> impl Iterator<Item = (ClientId, ClientId, Turn32)> + '_ {
        let n = self.num_clients;
        (0..n).flat_map(move |i| ((i + 1)..n).map(move |j| (i, j, self.phases[i * n + j])))
    }
}

/// Samples the channel for iteration `iteration`: one uniform, independent
/// phase per unordered pair, mirrored across the diagonal.
pub fn sample_round_channel(
    num_clients: usize,
    iteration: u64,
    seed: u64,
) -> Result<ChannelMatrix, ChannelError> {
    ChannelMatrix::from_fn(num_clients, iteration, |i, j| pair_phase(seed, iteration, i, j))
}

/// Accessor enforcing reciprocity; see [`ChannelMatrix::phase`].
pub fn get_phase(channel: &ChannelMatrix, i: ClientId, j: ClientId) -> Result<Turn32, ChannelError> {
    channel.phase(i, j)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;
    use sha2::{Digest, Sha256};

    #[test]
    fn two_clients_share_one_mirrored_value() {
        let c = sample_round_channel(2, 0, 7).unwrap();
        assert_eq!(c.num_pairs(), 1);
        assert_eq!(c.phase(0, 1).unwrap(), c.phase(1, 0).unwrap());
    }

    #[test]
    fn four_clients_have_six_draws() {
        let c = sample_round_channel(4, 3, 11).unwrap();
        assert_eq!(c.pairs().count(), 6);
        assert_eq!(c.num_pairs(), 6);
    }

    #[test]
    fn reciprocity_holds_for_every_pair() {
        let c = sample_round_channel(9, 1, 5).unwrap();
        for i in 0..9 {
            for j in 0..9 {
                if i != j {
                    assert_eq!(get_phase(&c, i, j).unwrap(), get_phase(&c, j, i).unwrap());
                }
            }
        }
    }

    #[test]
    fn rejects_bad_topology_and_ids() {
        assert_eq!(sample_round_channel(1, 0, 0), Err(ChannelError::InvalidTopology(1)));
        let c = sample_round_channel(3, 0, 0).unwrap();
        assert_eq!(c.phase(0, 0), Err(ChannelError::NoSelfChannel(0)));
        assert_eq!(
            c.phase(0, 3),
            Err(ChannelError::IndexOutOfRange { id: 3, num_clients: 3 })
        );
    }

    #[test]
    fn fresh_matrix_per_iteration() {
        let a = sample_round_channel(8, 0, 42).unwrap();
        let b = sample_round_channel(8, 1, 42).unwrap();
        assert!(a.pairs().zip(b.pairs()).any(|(x, y)| x.2 != y.2));
        assert_eq!(a, sample_round_channel(8, 0, 42).unwrap());
    }

    #[test]
    fn single_pair_matches_regenerated_draw() {
        // Independent regeneration of the keyed draw for (seed=7, t=0, pair {0,1}).
        let mut h = Sha256::new();
        h.update(b"phyfed/v1");
        h.update([1u8]);
        h.update(7u64.to_le_bytes());
        h.update(3u64.to_le_bytes());
        for w in [0u64, 0, 1] {
            h.update(w.to_le_bytes());
        }
        let key: [u8; 32] = h.finalize().into();
        let expected = Turn32(ChaCha20Rng::from_seed(key).next_u32());

        let c = sample_round_channel(2, 0, 7).unwrap();
        assert_eq!(get_phase(&c, 0, 1).unwrap(), expected);
        assert_eq!(pair_phase(7, 0, 1, 0), expected);
    }
}
