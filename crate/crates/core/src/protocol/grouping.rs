use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::ProtocolError;
use crate::masking::Direction;
use crate::rng::{keyed_rng, Stream};
use crate::ClientId;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GroupingMode {
    /// One group split into sides 𝒜 (⊕) and ℬ (⊖).
    TwoGroup,
    /// `K` groups of `2L` clients, each split into ⊕/⊖ subgroups of `L`.
    Subgroup,
}

/// Group index and side of one client.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClientLabel {
    pub group: usize,
    pub side: Direction,
}

/// Partition of the clients into groups and ⊕/⊖ sides.
///
/// Masks are only ever exchanged between the two sides of the same group,
/// so the two-group scheme is the single-group case of the subgroup scheme.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroupAssignment {
    mode: GroupingMode,
    labels: Vec<ClientLabel>,
    num_groups: usize,
    /// `L` in subgroup mode.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    subgroup_size: Option<usize>,
}

pub const MIN_CLIENTS_TWO_GROUP: usize = 4;
pub const MIN_SIDE: usize = 2;

impl GroupAssignment {
    /// Two-group assignment with 𝒜 = `plus_members`, ℬ = everyone else.
    pub fn two_groups_from_members(num_clients: usize, plus_members: &[ClientId]) -> Result<Self, ProtocolError> {
        if num_clients < MIN_CLIENTS_TWO_GROUP {
            return Err(ProtocolError::InsufficientClients { got: num_clients, need: MIN_CLIENTS_TWO_GROUP });
        }
        let mut labels = vec![ClientLabel { group: 0, side: Direction::Minus }; num_clients];
        for &i in plus_members {
            let label = labels
                .get_mut(i)
                .ok_or_else(|| ProtocolError::InvalidGrouping(format!("client {i} out of range")))?;
            label.side = Direction::Plus;
        }
        let plus = labels.iter().filter(|l| l.side == Direction::Plus).count();
        if plus < MIN_SIDE || num_clients - plus < MIN_SIDE {
            return Err(ProtocolError::InvalidGrouping(format!(
                "both groups need at least {MIN_SIDE} clients, got {plus} and {}",
                num_clients - plus
            )));
        }
        Ok(Self { mode: GroupingMode::TwoGroup, labels, num_groups: 1, subgroup_size: None })
    }

    /// Builds a subgroup assignment from explicit member lists, one
    /// `(plus, minus)` pair per group.
    pub fn subgroups_from_members(
        num_clients: usize,
        groups: &[(Vec<ClientId>, Vec<ClientId>)],
        subgroup_size: usize,
    ) -> Result<Self, ProtocolError> {
        if subgroup_size < MIN_SIDE {
            return Err(ProtocolError::SecurityFloor { subgroup_size });
        }
        let mut labels: Vec<Option<ClientLabel>> = vec![None; num_clients];
        for (g, (plus, minus)) in groups.iter().enumerate() {
            if plus.len() < subgroup_size || minus.len() < subgroup_size {
                return Err(ProtocolError::InvalidGrouping(format!(
                    "group {g} has subgroups of {} and {}, below L = {subgroup_size}",
                    plus.len(),
                    minus.len()
                )));
            }
            for (members, side) in [(plus, Direction::Plus), (minus, Direction::Minus)] {
                for &i in members {
                    match labels.get_mut(i) {
                        Some(slot @ None) => *slot = Some(ClientLabel { group: g, side }),
                        Some(Some(_)) => {
                            return Err(ProtocolError::InvalidGrouping(format!("client {i} assigned twice")))
                        }
                        None => return Err(ProtocolError::InvalidGrouping(format!("client {i} out of range"))),
                    }
                }
            }
        }
        let labels = labels
            .into_iter()
            .enumerate()
            .map(|(i, l)| l.ok_or_else(|| ProtocolError::InvalidGrouping(format!("client {i} unassigned"))))
            .collect::<Result<_, _>>()?;
        Ok(Self {
            mode: GroupingMode::Subgroup,
            labels,
            num_groups: groups.len(),
            subgroup_size: Some(subgroup_size),
        })
    }

    pub fn mode(&self) -> GroupingMode {
        self.mode
    }

    pub fn num_clients(&self) -> usize {
        self.labels.len()
    }

    pub fn num_groups(&self) -> usize {
        self.num_groups
    }

    pub fn subgroup_size(&self) -> Option<usize> {
        self.subgroup_size
    }

    pub fn label(&self, i: ClientId) -> Option<ClientLabel> {
        self.labels.get(i).copied()
    }

    pub fn members(&self, group: usize, side: Direction) -> Vec<ClientId> {
        self.labels
            .iter()
            .enumerate()
            .filter(|(_, l)| l.group == group && l.side == side)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn group_members(&self, group: usize) -> Vec<ClientId> {
        self.labels
            .iter()
            .enumerate()
            .filter(|(_, l)| l.group == group)
            .map(|(i, _)| i)
            .collect()
    }

    /// Clients on the opposite side of `i`'s group: the peers whose channels
    /// make up `i`'s mask.
    pub fn complement(&self, i: ClientId) -> Option<Vec<ClientId>> {
        let l = self.label(i)?;
        Some(self.members(l.group, l.side.opposite()))
    }

    /// Size `l` of group 𝒜 in two-group mode.
    pub fn plus_size(&self) -> usize {
        self.labels.iter().filter(|l| l.side == Direction::Plus).count()
    }

    /// Clients relabelled so that 𝒜 comes first: position `k` holds the
    /// client carrying label `k+1`.
    pub fn order(&self) -> Vec<ClientId> {
        let mut order: Vec<ClientId> = (0..self.num_clients()).collect();
        order.sort_by_key(|&i| (self.labels[i].group, self.labels[i].side, i));
        order
    }

    /// Every `(plus, minus)` pair that must estimate its channel phase.
    pub fn phase_estimation_pairs(&self) -> Vec<(ClientId, ClientId)> {
        (0..self.num_groups)
            .flat_map(|g| {
                let plus = self.members(g, Direction::Plus);
                let minus = self.members(g, Direction::Minus);
                plus.into_iter()
                    .flat_map(move |i| minus.clone().into_iter().map(move |j| (i, j)))
            })
            .collect()
    }
}

/// Algorithm-1 grouping: each client joins 𝒜 or ℬ by a fair coin, retried
/// until both groups have at least two clients.
pub fn assign_two_groups(num_clients: usize, seed: u64) -> Result<GroupAssignment, ProtocolError> {
    if num_clients < MIN_CLIENTS_TWO_GROUP {
        return Err(ProtocolError::InsufficientClients { got: num_clients, need: MIN_CLIENTS_TWO_GROUP });
    }
    let mut rng = keyed_rng(Stream::Grouping, seed, &[0]);
    loop {
        let plus: Vec<ClientId> = (0..num_clients).filter(|_| rng.random::<bool>()).collect();
        let l = plus.len();
        if l >= MIN_SIDE && num_clients - l >= MIN_SIDE {
            return GroupAssignment::two_groups_from_members(num_clients, &plus);
        }
    }
}

/// Subgroup grouping: a random permutation cut into `num_groups` groups of
/// `2L`, the last one absorbing the remainder `r < 2L`; each group is split
/// as evenly as possible into ⊕ and ⊖ subgroups.
pub fn assign_subgroups(
    num_clients: usize,
    num_groups: usize,
    subgroup_size: usize,
    seed: u64,
) -> Result<GroupAssignment, ProtocolError> {
    if subgroup_size < MIN_SIDE {
        return Err(ProtocolError::SecurityFloor { subgroup_size });
    }
    let group_size = 2 * subgroup_size;
    if num_groups == 0 || num_clients < num_groups * group_size {
        return Err(ProtocolError::InfeasibleGrouping {
            clients: num_clients,
            groups: num_groups,
            subgroup_size,
        });
    }
    if num_clients - num_groups * group_size >= group_size {
        // the remainder would fill another whole group
        return Err(ProtocolError::InfeasibleGrouping {
            clients: num_clients,
            groups: num_groups,
            subgroup_size,
        });
    }
    let mut perm: Vec<ClientId> = (0..num_clients).collect();
    perm.shuffle(&mut keyed_rng(Stream::Grouping, seed, &[1]));

    let groups: Vec<(Vec<ClientId>, Vec<ClientId>)> = (0..num_groups)
        .map(|g| {
            let start = g * group_size;
            let end = if g + 1 == num_groups { num_clients } else { start + group_size };
            let members = &perm[start..end];
            let half = members.len() / 2;
            let mut plus = members[..half].to_vec();
            let mut minus = members[half..].to_vec();
            plus.sort_unstable();
            minus.sort_unstable();
            (plus, minus)
        })
        .collect();
    GroupAssignment::subgroups_from_members(num_clients, &groups, subgroup_size)
}
