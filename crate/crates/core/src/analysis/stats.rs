use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use statrs::distribution::{Binomial, ChiSquared, ContinuousCDF, Discrete};

use super::AnalysisError;
use crate::Turn32;

/// Significance level of every statistical check.
pub const ALPHA: f64 = 0.01;
pub const MIN_BINS: usize = 8;
/// Minimum expected count per bin.
pub const MIN_SAMPLES_PER_BIN: usize = 100;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UniformityReport {
    pub samples: usize,
    pub bins: usize,
    pub chi_square: f64,
    pub p_value: f64,
    pub alpha: f64,
    pub passed: bool,
}

/// Pearson chi-square test of `samples`, binned into `bins` equal arcs,
/// against the uniform distribution on the circle.
pub fn chi_square_uniformity(samples: &[Turn32], bins: usize) -> Result<UniformityReport, AnalysisError> {
    if bins < MIN_BINS {
        return Err(AnalysisError::InvalidInput(format!("need at least {MIN_BINS} bins, got {bins}")));
    }
    let needed = MIN_SAMPLES_PER_BIN * bins;
    if samples.len() < needed {
        return Err(AnalysisError::Underpowered { needed, got: samples.len() });
    }
    let mut counts = vec![0u64; bins];
    for s in samples {
        counts[s.arc(bins)] += 1;
    }
    let expected = samples.len() as f64 / bins as f64;
    let chi_square: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
    let dist = ChiSquared::new((bins - 1) as f64).expect("positive degrees of freedom");
    let p_value = dist.sf(chi_square);
    Ok(UniformityReport {
        samples: samples.len(),
        bins,
        chi_square,
        p_value,
        alpha: ALPHA,
        passed: p_value >= ALPHA,
    })
}

/// Plug-in estimate, in bits, of `I(X; Y)` where `Y` is binned into `bins`
/// equal arcs.
pub fn mutual_information_estimate(x: &[u32], y: &[Turn32], bins: usize) -> Result<f64, AnalysisError> {
    if x.len() != y.len() {
        return Err(AnalysisError::InvalidInput(format!("{} X samples vs {} Y samples", x.len(), y.len())));
    }
    if bins < 2 {
        return Err(AnalysisError::InvalidInput("need at least 2 bins".into()));
    }
    let mut px: BTreeMap<u32, u64> = BTreeMap::new();
    for &v in x {
        *px.entry(v).or_default() += 1;
    }
    let needed = MIN_SAMPLES_PER_BIN * bins * px.len().max(1);
    if x.len() < needed {
        return Err(AnalysisError::Underpowered { needed, got: x.len() });
    }
    let mut py = vec![0u64; bins];
    let mut joint: BTreeMap<(u32, usize), u64> = BTreeMap::new();
    for (&a, &b) in x.iter().zip(y) {
        let arc = b.arc(bins);
        py[arc] += 1;
        *joint.entry((a, arc)).or_default() += 1;
    }
    let n = x.len() as f64;
    let mi: f64 = joint
        .iter()
        .map(|(&(a, b), &c)| {
            let pxy = c as f64 / n;
            let ratio = (c as f64 * n) / (px[&a] as f64 * py[b] as f64);
            pxy * ratio.log2()
        })
        .sum();
    Ok(mi.max(0.0))
}

/// Exact information-theoretic check of phase masking on a reduced grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExactPrivacyReport {
    pub grid_bits: u32,
    /// Every plaintext value yields each masked value exactly once over all masks.
    pub conditionally_uniform: bool,
    pub entropy_y: f64,
    pub entropy_mask: f64,
    pub entropy_y_given_x: f64,
    pub mutual_information: f64,
}

fn entropy_bits(weights: impl IntoIterator<Item = u128>, total: u128) -> f64 {
    weights
        .into_iter()
        .filter(|&w| w > 0)
        .map(|w| {
            let p = w as f64 / total as f64;
            -p * p.log2()
        })
        .sum()
}

/// Enumerates `Y = X ⊕ Φ` for every plaintext `X` (with integer weights)
/// and every mask `Φ` on a `2^grid_bits` grid, using [`Turn32`] arithmetic
/// on the embedded subgroup.
///
/// Probabilities are kept as integer ratios, so a mutual information of zero
/// is exact.
pub fn exact_masking_information(grid_bits: u32, plaintext_weights: &[u64]) -> Result<ExactPrivacyReport, AnalysisError> {
    if !(1..=16).contains(&grid_bits) {
        return Err(AnalysisError::InvalidInput(format!("grid_bits must be in 1..=16, got {grid_bits}")));
    }
    let grid = 1usize << grid_bits;
    if plaintext_weights.is_empty() || plaintext_weights.len() > grid || plaintext_weights.iter().all(|&w| w == 0) {
        return Err(AnalysisError::InvalidInput("plaintext weights must be a nonzero pmf on the grid".into()));
    }
    let shift = 32 - grid_bits;
    let mut counts = vec![vec![0u128; grid]; plaintext_weights.len()];
    for (x, row) in counts.iter_mut().enumerate() {
        for phi in 0..grid {
            let y = Turn32((x as u32) << shift) + Turn32((phi as u32) << shift);
            row[(y.0 >> shift) as usize] += 1;
        }
    }
    let conditionally_uniform = counts.iter().all(|row| row.iter().all(|&c| c == 1));

    let w: Vec<u128> = plaintext_weights.iter().map(|&v| v as u128).collect();
    let total_w: u128 = w.iter().sum();
    let g = grid as u128;
    // P(Y=y)·W·G
    let py: Vec<u128> = (0..grid).map(|y| w.iter().zip(&counts).map(|(wx, row)| wx * row[y]).sum()).collect();
    let entropy_y = entropy_bits(py.iter().copied(), total_w * g);
    let entropy_y_given_x: f64 = w
        .iter()
        .zip(&counts)
        .filter(|(&wx, _)| wx > 0)
        .map(|(&wx, row)| wx as f64 / total_w as f64 * entropy_bits(row.iter().copied(), g))
        .sum();

    // Σ p(x,y)·log2(p(y|x)/p(y)), with p(y|x)/p(y) = c_xy·W / py_y
    let mut mi = 0.0;
    for (wx, row) in w.iter().zip(&counts) {
        for (y, &c) in row.iter().enumerate() {
            if *wx == 0 || c == 0 {
                continue;
            }
            let num = c * total_w;
            let den = py[y];
            if num != den {
                let pxy = (*wx * c) as f64 / (total_w * g) as f64;
                mi += pxy * (num as f64 / den as f64).log2();
            }
        }
    }
    Ok(ExactPrivacyReport {
        grid_bits,
        conditionally_uniform,
        entropy_y,
        entropy_mask: grid_bits as f64,
        entropy_y_given_x,
        mutual_information: mi,
    })
}

/// Exact two-sided binomial test p-value: total probability of outcomes no
/// more likely than the observed one.
pub fn binomial_two_sided_p(successes: u64, trials: u64, p0: f64) -> Result<f64, AnalysisError> {
    if successes > trials {
        return Err(AnalysisError::InvalidInput(format!("{successes} successes out of {trials} trials")));
    }
    let dist = Binomial::new(p0, trials).map_err(|e| AnalysisError::InvalidInput(e.to_string()))?;
    let observed = dist.pmf(successes);
    let p: f64 = (0..=trials)
        .map(|k| dist.pmf(k))
        .filter(|&pk| pk <= observed * (1.0 + 1e-7))
        .sum();
    Ok(p.min(1.0))
}
