//! Gradient quantization, M-PSK phase encoding and FEC bookkeeping.
//!
//! A gradient element is clipped to `[-clip, clip]`, mapped to an integer
//! digit in `[0, q)`, and sent as the constellation point `digit · 2³²/M`.
//! The modulus `M` leaves enough headroom that the modulo-2π sum of every
//! client's phase still identifies the integer digit sum.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::{ClientId, Turn32};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CodecError {
    #[error("invalid quantization config: {0}")]
    InvalidConfig(String),

    #[error("gradient element {index} is not finite ({value})")]
    InvalidGradient { index: usize, value: f64 },

    #[error("digit {digit} at index {index} is outside [0, {levels})")]
    InvalidDigit { index: usize, digit: u32, levels: u32 },

    #[error("aggregate sum {sum} at index {index} exceeds the maximum {max}")]
    CorruptedAggregate { index: usize, sum: u64, max: u64 },

    #[error("aggregate phase {value} at index {index} is off the constellation grid; masks did not cancel")]
    ResidualMask { index: usize, value: Turn32 },

    #[error("framing error: {0}")]
    Framing(String),
}

/// Clipping range, quantization levels and PSK order.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuantizationConfig {
    clip: f64,
    levels: u32,
    modulus: u64,
    max_clients: usize,
}

impl QuantizationConfig {
    /// Validates and builds a config.
    ///
    /// `modulus` must be a power of two in `[2, 2³²]` and at least
    /// `max_clients·(levels−1)+1`, so sums of up to `max_clients` digits never wrap.
    pub fn new(clip: f64, levels: u32, modulus: u64, max_clients: usize) -> Result<Self, CodecError> {
        if !(clip.is_finite() && clip > 0.0) {
            return Err(CodecError::InvalidConfig(format!("clip must be positive and finite, got {clip}")));
        }
        if levels < 2 {
            return Err(CodecError::InvalidConfig(format!("need at least 2 levels, got {levels}")));
        }
        if max_clients == 0 {
            return Err(CodecError::InvalidConfig("max_clients must be at least 1".into()));
        }
        if !modulus.is_power_of_two() || !(2..=Turn32::GRID).contains(&modulus) {
            return Err(CodecError::InvalidConfig(format!(
                "modulus must be a power of two in [2, 2^32], got {modulus}"
            )));
        }
        let needed = Self::required_modulus(levels, max_clients);
        if modulus < needed {
            return Err(CodecError::InvalidConfig(format!(
                "modulus {modulus} cannot hold the sum of {max_clients} digits below {levels}; need at least {needed}"
            )));
        }
        Ok(Self { clip, levels, modulus, max_clients })
    }

    /// Smallest admissible modulus for `levels` and `max_clients`, rounded up
    /// to a power of two.
    pub fn auto(clip: f64, levels: u32, max_clients: usize) -> Result<Self, CodecError> {
        let modulus = Self::required_modulus(levels, max_clients.max(1)).next_power_of_two().max(2);
        Self::new(clip, levels, modulus, max_clients)
    }

    /// Headroom bound `S·(q−1)+1`.
    pub fn required_modulus(levels: u32, max_clients: usize) -> u64 {
        max_clients as u64 * (levels as u64).saturating_sub(1) + 1
    }

    pub fn clip(&self) -> f64 {
        self.clip
    }

    pub fn levels(&self) -> u32 {
        self.levels
    }

    pub fn modulus(&self) -> u64 {
        self.modulus
    }

    pub fn max_clients(&self) -> usize {
        self.max_clients
    }

    /// Grid distance between adjacent constellation points, `2³²/M`.
    pub fn step(&self) -> u64 {
        Turn32::GRID / self.modulus
    }

    /// Bits per quantized element, `⌈log₂ q⌉`.
    pub fn bits_per_digit(&self) -> u32 {
        32 - (self.levels - 1).leading_zeros()
    }

    /// Quantization bin width, `2·clip/(q−1)`.
    pub fn resolution(&self) -> f64 {
        2.0 * self.clip / (self.levels - 1) as f64
    }
}

/// Integer-quantized gradient.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuantizedVector {
    digits: Vec<u32>,
}

impl QuantizedVector {
    pub fn new(digits: Vec<u32>, cfg: &QuantizationConfig) -> Result<Self, CodecError> {
        if let Some((index, &digit)) = digits.iter().enumerate().find(|(_, &d)| d >= cfg.levels) {
            return Err(CodecError::InvalidDigit { index, digit, levels: cfg.levels });
        }
        Ok(Self { digits })
    }

    pub fn digits(&self) -> &[u32] {
        &self.digits
    }

    pub fn dim(&self) -> usize {
        self.digits.len()
    }

    pub fn into_digits(self) -> Vec<u32> {
        self.digits
    }
}

/// Phase-encoded gradient of one client at one iteration.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SymbolVector {
    pub symbols: Vec<Turn32>,
    pub owner: ClientId,
    pub iteration: u64,
}

fn check_finite(g: &[f64]) -> Result<(), CodecError> {
    match g.iter().enumerate().find(|(_, v)| !v.is_finite()) {
        Some((index, &value)) => Err(CodecError::InvalidGradient { index, value }),
        None => Ok(()),
    }
}

fn scaled(value: f64, cfg: &QuantizationConfig) -> f64 {
    let c = value.clamp(-cfg.clip, cfg.clip);
    (c + cfg.clip) * (cfg.levels - 1) as f64 / (2.0 * cfg.clip)
}

/// Deterministic round-to-nearest quantization of a clipped gradient.
pub fn quantize(g: &[f64], cfg: &QuantizationConfig) -> Result<QuantizedVector, CodecError> {
    check_finite(g)?;
    let top = cfg.levels - 1;
    let digits = g
        .iter()
        .map(|&v| (scaled(v, cfg).round() as u32).min(top))
        .collect();
    Ok(QuantizedVector { digits })
}

/// Unbiased stochastic rounding: rounds up with probability equal to the
/// fractional part.
pub fn quantize_stochastic<R: Rng + ?Sized>(
    g: &[f64],
    cfg: &QuantizationConfig,
    rng: &mut R,
) -> Result<QuantizedVector, CodecError> {
    check_finite(g)?;
    let top = cfg.levels - 1;
    let digits = g
        .iter()
        .map(|&v| {
            let x = scaled(v, cfg);
            let floor = x.floor();
            let up = rng.random::<f64>() < x - floor;
            ((floor as u32) + up as u32).min(top)
        })
        .collect();
    Ok(QuantizedVector { digits })
}

/// Maps per-element digit sums over `num_contributors` clients back to the
/// mean gradient.
pub fn dequantize_mean(
    digit_sums: &[u64],
    num_contributors: usize,
    cfg: &QuantizationConfig,
) -> Result<Vec<f64>, CodecError> {
    if num_contributors == 0 {
        return Err(CodecError::InvalidConfig("cannot average over zero contributors".into()));
    }
    let max = num_contributors as u64 * (cfg.levels - 1) as u64;
    let n = num_contributors as f64;
    let res = cfg.resolution();
    digit_sums
        .iter()
        .enumerate()
        .map(|(index, &sum)| {
            if sum > max {
                return Err(CodecError::CorruptedAggregate { index, sum, max });
            }
            Ok((sum as f64 / n) * res - cfg.clip)
        })
        .collect()
}

/// Places each digit on the M-PSK constellation.
pub fn modulate(
    v: &QuantizedVector,
    cfg: &QuantizationConfig,
    owner: ClientId,
    iteration: u64,
) -> Result<SymbolVector, CodecError> {
    let step = cfg.step();
    let symbols = v
        .digits
        .iter()
        .enumerate()
        .map(|(index, &digit)| {
            if digit >= cfg.levels {
                return Err(CodecError::InvalidDigit { index, digit, levels: cfg.levels });
            }
            Ok(Turn32((digit as u64 * step) as u32))
        })
        .collect::<Result<_, _>>()?;
    Ok(SymbolVector { symbols, owner, iteration })
}

/// Converts a mask-free aggregate phase back to integer digit sums.
///
/// Fails with [`CodecError::ResidualMask`] when any phase is off the
/// constellation grid, which means some mask was not cancelled.
pub fn decode_sum(aggregate: &[Turn32], cfg: &QuantizationConfig) -> Result<Vec<u64>, CodecError> {
    let step = cfg.step();
    aggregate
        .iter()
        .enumerate()
        .map(|(index, &value)| {
            let v = value.0 as u64;
            if !v.is_multiple_of(step) {
                return Err(CodecError::ResidualMask { index, value });
            }
            Ok(v / step)
        })
        .collect()
}

/// Fixed-width big-endian bit string of the digits: `L = d·⌈log₂ q⌉` bits.
pub fn to_bits(v: &QuantizedVector, cfg: &QuantizationConfig) -> Vec<bool> {
    let width = cfg.bits_per_digit();
    v.digits
        .iter()
        .flat_map(|&d| (0..width).rev().map(move |b| (d >> b) & 1 == 1))
        .collect()
}

pub fn from_bits(bits: &[bool], cfg: &QuantizationConfig) -> Result<QuantizedVector, CodecError> {
    let width = cfg.bits_per_digit() as usize;
    if !bits.len().is_multiple_of(width) {
        return Err(CodecError::Framing(format!(
            "{} bits is not a multiple of the digit width {width}",
            bits.len()
        )));
    }
    let digits = bits
        .chunks(width)
        .map(|chunk| chunk.iter().fold(0u32, |acc, &b| (acc << 1) | b as u32))
        .collect();
    QuantizedVector::new(digits, cfg)
}

/// Gray-free QPSK mapping of bit pairs, for plain single-client transport.
/// An odd-length string is padded with one zero bit.
pub fn modulate_qpsk(bits: &[bool]) -> Vec<Turn32> {
    bits.chunks(2)
        .map(|pair| {
            let hi = pair[0] as u32;
            let lo = pair.get(1).copied().unwrap_or(false) as u32;
            Turn32(((hi << 1) | lo) << 30)
        })
        .collect()
}

pub fn demodulate_qpsk(symbols: &[Turn32]) -> Vec<bool> {
    symbols
        .iter()
        .flat_map(|s| {
            // nearest of the four points
            let k = (s.0.wrapping_add(1 << 29) >> 30) & 3;
            [k & 2 != 0, k & 1 != 0]
        })
        .collect()
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "scheme", rename_all = "snake_case", deny_unknown_fields)]
pub enum FecScheme {
    #[default]
    None,
    Repetition { k: usize },
}

/// Forward error correction applied to the payload bit string.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FecConfig {
    pub scheme: FecScheme,
}

impl FecConfig {
    pub fn repetition(k: usize) -> Self {
        Self { scheme: FecScheme::Repetition { k } }
    }

    pub fn validate(&self) -> Result<(), CodecError> {
        match self.scheme {
            FecScheme::Repetition { k: 0 } => {
                Err(CodecError::InvalidConfig("repetition factor must be at least 1".into()))
            }
            _ => Ok(()),
        }
    }

    /// Redundancy bits `r` added to an `L`-bit payload.
    pub fn redundancy(&self, payload_bits: usize) -> usize {
        match self.scheme {
            FecScheme::None => 0,
            FecScheme::Repetition { k } => payload_bits * k.saturating_sub(1),
        }
    }

    pub fn encode(&self, bits: &[bool]) -> Vec<bool> {
        fec_encode(self, bits)
    }

    pub fn decode(&self, bits: &[bool]) -> Result<Vec<bool>, CodecError> {
        fec_decode(self, bits)
    }
}

pub fn fec_encode(fec: &FecConfig, bits: &[bool]) -> Vec<bool> {
    match fec.scheme {
        FecScheme::None => bits.to_vec(),
        FecScheme::Repetition { k } => bits.iter().flat_map(|&b| std::iter::repeat_n(b, k)).collect(),
    }
}

/// Inverts [`fec_encode`]; repetition codes decode by majority vote.
pub fn fec_decode(fec: &FecConfig, bits: &[bool]) -> Result<Vec<bool>, CodecError> {
    match fec.scheme {
        FecScheme::None => Ok(bits.to_vec()),
        FecScheme::Repetition { k } => {
            if k == 0 || !bits.len().is_multiple_of(k) {
                return Err(CodecError::Framing(format!(
                    "{} coded bits is not a multiple of repetition factor {k}",
                    bits.len()
                )));
            }
            Ok(bits
                .chunks(k)
                .map(|c| 2 * c.iter().filter(|&&b| b).count() > k)
                .collect())
        }
    }
}
