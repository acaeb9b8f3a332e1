use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::protocol::{GroupingMode, RevealedShare, RoundTranscript};
use crate::ClientId;

/// Recovery shares collected for one dropped client.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecoveryCheck {
    pub dropped: ClientId,
    pub measured: u64,
    /// Surviving clients on the opposite side of its group.
    pub expected: u64,
}

/// Measured message counts of a round against the closed-form overhead.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OverheadReport {
    pub iteration: u64,
    pub mode: GroupingMode,
    pub clients: usize,
    /// `l = |𝒜|` in two-group mode.
    pub group_a_size: Option<usize>,
    pub groups: usize,
    pub subgroup_size: Option<usize>,
    pub measured_phase_estimations: u64,
    /// `l·(N−l)` or `K·L²` (with the remainder group counted by its split).
    pub formula_phase_estimations: u64,
    /// `(N/2)²` for an even two-group split.
    pub formula_half_n_squared: Option<u64>,
    /// `N·L/2` when `N = K·2L`.
    pub formula_nl_over_2: Option<u64>,
    pub recovery: Vec<RecoveryCheck>,
    pub exact_match: bool,
}

/// Compares a transcript's counters with the overhead formulas.
pub fn verify_overhead(t: &RoundTranscript) -> OverheadReport {
    let a = &t.assignment;
    let n = a.num_clients() as u64;
    let (group_a_size, formula, half_sq, nl2) = match a.mode() {
        GroupingMode::TwoGroup => {
            let l = a.plus_size() as u64;
            let half = (n.is_multiple_of(2) && 2 * l == n).then(|| (n / 2) * (n / 2));
            (Some(l as usize), l * (n - l), half, None)
        }
        GroupingMode::Subgroup => {
            let k = a.num_groups() as u64;
            let sub = a.subgroup_size().unwrap_or(0) as u64;
            let r = n - k * 2 * sub;
            let last = 2 * sub + r;
            let formula = (k - 1) * sub * sub + (last / 2) * (last - last / 2);
            let nl2 = (r == 0).then(|| n * sub / 2);
            (None, formula, None, nl2)
        }
    };

    let survivors = t.survivors();
    let absent: BTreeSet<ClientId> = t.dropped.iter().copied().chain(t.delayed).collect();
    let recovery: Vec<RecoveryCheck> = absent
        .iter()
        .filter(|&&i| {
            // groups with no survivors need no recovery
            let g = a.label(i).map(|l| l.group);
            a.group_members(g.unwrap_or(usize::MAX)).iter().any(|j| survivors.contains(j))
        })
        .map(|&i| {
            let measured = t
                .revealed_shares
                .iter()
                .filter(|r| matches!(r, RevealedShare::PairPhase { dropped, .. } if *dropped == i))
                .count() as u64;
            let expected = a
                .complement(i)
                .unwrap_or_default()
                .into_iter()
                .filter(|j| survivors.contains(j))
                .count() as u64;
            RecoveryCheck { dropped: i, measured, expected }
        })
        .collect();

    let measured = t.counters.phase_estimations;
    let exact_match = measured == formula
        && half_sq.is_none_or(|v| v == measured)
        && nl2.is_none_or(|v| v == measured)
        && recovery.iter().all(|r| r.measured == r.expected)
        && t.counters.recovery_messages == recovery.iter().map(|r| r.measured).sum::<u64>();

    OverheadReport {
        iteration: t.iteration,
        mode: a.mode(),
        clients: n as usize,
        group_a_size,
        groups: a.num_groups(),
        subgroup_size: a.subgroup_size(),
        measured_phase_estimations: measured,
        formula_phase_estimations: formula,
        formula_half_n_squared: half_sq,
        formula_nl_over_2: nl2,
        recovery,
        exact_match,
    }
}
