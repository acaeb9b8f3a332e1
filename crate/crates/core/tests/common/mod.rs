//! Independent oracles shared by the integration tests and the acceptance
//! suite. None of these call into the code under test beyond plain data
//! accessors.
#![allow(dead_code)]

use std::collections::BTreeSet;

use phyfed::codec::{QuantizationConfig, QuantizedVector};
use phyfed::masking::Direction;
use phyfed::protocol::{GroupAssignment, RevealedShare, RoundTranscript};
use phyfed::{ClientId, Turn32};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Upper 1% point of the chi-square distribution with 15 degrees of freedom.
pub const CHI2_15_CRIT_01: f64 = 30.577_914_166;

/// Pearson statistic of `samples` over 16 equal arcs.
pub fn chi_square_16(samples: &[Turn32]) -> f64 {
    let mut counts = [0u64; 16];
    for s in samples {
        counts[(s.0 >> 28) as usize] += 1;
    }
    let e = samples.len() as f64 / 16.0;
    counts.iter().map(|&c| (c as f64 - e).powi(2) / e).sum()
}

/// Pearson correlation of two sequences.
pub fn correlation(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let cov: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    cov / (vx * vy).sqrt()
}

pub fn random_digits(n: usize, d: usize, cfg: &QuantizationConfig, seed: u64) -> Vec<QuantizedVector> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| QuantizedVector::new((0..d).map(|_| rng.random_range(0..cfg.levels())).collect(), cfg).unwrap())
        .collect()
}

/// Plaintext digit sums over clients not in `skip`.
pub fn plain_sum(digits: &[QuantizedVector], skip: &BTreeSet<ClientId>) -> Vec<u64> {
    (0..digits[0].dim())
        .map(|k| {
            digits
                .iter()
                .enumerate()
                .filter(|(i, _)| !skip.contains(i))
                .map(|(_, v)| v.digits()[k] as u64)
                .sum()
        })
        .collect()
}

/// A drop pattern is recoverable iff someone survives and every group is
/// either gone entirely or keeps a survivor on both sides.
pub fn feasible(a: &GroupAssignment, dropped: &BTreeSet<ClientId>) -> bool {
    if dropped.len() == a.num_clients() {
        return false;
    }
    (0..a.num_groups()).all(|g| {
        let alive = |side| a.members(g, side).iter().filter(|i| !dropped.contains(i)).count();
        let (p, m) = (alive(Direction::Plus), alive(Direction::Minus));
        (p == 0 && m == 0) || (p > 0 && m > 0)
    })
}

/// No client has both its private phase and shares covering its whole
/// complementary set revealed.
pub fn reveal_safe(t: &RoundTranscript) -> bool {
    let a = &t.assignment;
    let u_revealed: BTreeSet<ClientId> = t
        .revealed_shares
        .iter()
        .filter_map(|r| match r {
            RevealedShare::PrivatePhase { owner, .. } => Some(*owner),
            _ => None,
        })
        .collect();
    u_revealed.iter().all(|&i| {
        let comp: BTreeSet<ClientId> = a.complement(i).unwrap().into_iter().collect();
        let covered: BTreeSet<ClientId> = t
            .revealed_shares
            .iter()
            .filter_map(|r| match r {
                RevealedShare::PairPhase { dropped, holder, .. } if *holder == i => Some(*dropped),
                RevealedShare::PairPhase { dropped, holder, .. } if *dropped == i => Some(*holder),
                _ => None,
            })
            .collect();
        !comp.is_subset(&covered)
    })
}

/// Every subset of `0..n`, as bitmasks.
pub fn subsets(n: usize) -> impl Iterator<Item = BTreeSet<ClientId>> {
    (0u32..1 << n).map(move |m| (0..n).filter(|i| m >> i & 1 == 1).collect())
}
