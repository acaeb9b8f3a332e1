use serde::{Deserialize, Serialize};

use super::stats::{chi_square_uniformity, UniformityReport, MIN_SAMPLES_PER_BIN};
use crate::protocol::ClientMessage;
use crate::{ClientId, Turn32};

const LEAK_BINS: usize = 16;
const MAX_EXAMPLES: usize = 16;

/// A symbol difference read off a single message.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DifferenceRecord {
    pub owner: ClientId,
    pub k: usize,
    pub l: usize,
    /// `(digit_k − digit_l) mod M`
    pub digit_difference: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LeakReport {
    pub messages: usize,
    /// Disjoint symbol pairs `(2j, 2j+1)` examined across all messages.
    pub pairs_examined: usize,
    /// Fraction of pair differences on the constellation grid.
    pub on_grid_fraction: Option<f64>,
    /// Every examined difference was on the grid, i.e. carried no mask.
    pub mask_free: bool,
    pub examples: Vec<DifferenceRecord>,
    /// Uniformity of the differences, when enough were collected.
    pub uniformity: Option<UniformityReport>,
}

/// Measures what the server learns from differences between symbols of the
/// same message.
///
/// A mask shared by all symbols of a message cancels in `νₖ ⊖ νₗ`, exposing
/// the plaintext digit difference. Per-symbol masks leave the difference
/// uniform.
pub fn difference_leak_probe(messages: &[ClientMessage], modulus: u64) -> LeakReport {
    let step = Turn32::GRID / modulus;
    let mut diffs = Vec::new();
    let mut examples = Vec::new();
    let mut on_grid = 0usize;
    for m in messages {
        for (j, pair) in m.masked.symbols.chunks_exact(2).enumerate() {
            let diff = pair[0] - pair[1];
            if (diff.0 as u64).is_multiple_of(step) {
                on_grid += 1;
                if examples.len() < MAX_EXAMPLES {
                    examples.push(DifferenceRecord {
                        owner: m.owner,
                        k: 2 * j,
                        l: 2 * j + 1,
                        digit_difference: diff.0 as u64 / step,
                    });
                }
            }
            diffs.push(diff);
        }
    }
    let pairs = diffs.len();
    let uniformity = (pairs >= MIN_SAMPLES_PER_BIN * LEAK_BINS)
        .then(|| chi_square_uniformity(&diffs, LEAK_BINS).ok())
        .flatten();
    LeakReport {
        messages: messages.len(),
        pairs_examined: pairs,
        on_grid_fraction: (pairs > 0).then(|| on_grid as f64 / pairs as f64),
        mask_free: pairs > 0 && on_grid == pairs,
        examples,
        uniformity,
    }
}
