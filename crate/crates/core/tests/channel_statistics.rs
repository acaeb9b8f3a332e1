mod common;

use common::{chi_square_16, correlation, CHI2_15_CRIT_01};
use phyfed::channel::{get_phase, sample_round_channel};
use phyfed::masking::sample_private_phase;
use phyfed::Turn32;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use sha2::{Digest, Sha256};

const SAMPLES: u64 = 10_000;

#[test]
fn fixed_entry_is_uniform_over_seeds() {
    let entries: Vec<Turn32> =
        (0..SAMPLES).map(|s| get_phase(&sample_round_channel(5, 3, s).unwrap(), 1, 4).unwrap()).collect();
    let chi2 = chi_square_16(&entries);
    assert!(chi2 < CHI2_15_CRIT_01, "chi2 = {chi2}");
}

#[test]
fn fixed_entry_is_uniform_over_iterations() {
    let entries: Vec<Turn32> =
        (0..SAMPLES).map(|t| get_phase(&sample_round_channel(6, t, 99).unwrap(), 0, 5).unwrap()).collect();
    assert!(chi_square_16(&entries) < CHI2_15_CRIT_01);
}

#[test]
fn distinct_pairs_are_uncorrelated() {
    let pairs = [((0, 1), (2, 3)), ((0, 1), (0, 2)), ((1, 3), (2, 3)), ((0, 3), (1, 2))];
    let mats: Vec<_> = (0..SAMPLES).map(|s| sample_round_channel(4, 0, s).unwrap()).collect();
    for ((a, b), (c, d)) in pairs {
        let x: Vec<f64> = mats.iter().map(|m| m.phase(a, b).unwrap().0 as f64).collect();
        let y: Vec<f64> = mats.iter().map(|m| m.phase(c, d).unwrap().0 as f64).collect();
        let r = correlation(&x, &y);
        assert!(r.abs() < 0.05, "corr({a}{b}, {c}{d}) = {r}");
    }
}

#[test]
fn matrices_are_bit_identical_for_equal_inputs() {
    for s in 0..20 {
        assert_eq!(sample_round_channel(9, s, s * 7).unwrap(), sample_round_channel(9, s, s * 7).unwrap());
    }
}

#[test]
fn entry_regenerates_from_documented_key_derivation() {
    // SHA-256("phyfed/v1" ‖ stream=1 ‖ seed ‖ #words ‖ t ‖ min ‖ max) seeds ChaCha20
    let (seed, t, i, j) = (7u64, 0u64, 0u64, 1u64);
    let mut h = Sha256::new();
    h.update(b"phyfed/v1");
    h.update([1u8]);
    h.update(seed.to_le_bytes());
    h.update(3u64.to_le_bytes());
    for w in [t, i, j] {
        h.update(w.to_le_bytes());
    }
    let key: [u8; 32] = h.finalize().into();
    let expected = ChaCha20Rng::from_seed(key).next_u32();
    let c = sample_round_channel(2, t, seed).unwrap();
    assert_eq!(get_phase(&c, 0, 1).unwrap(), Turn32(expected));
    assert_eq!(get_phase(&c, 1, 0).unwrap(), Turn32(expected));
}

#[test]
fn private_phases_are_uniform_and_unrelated_to_channel() {
    let u: Vec<Turn32> = (0..SAMPLES).map(|s| sample_private_phase(2, 0, s).phase).collect();
    assert!(chi_square_16(&u) < CHI2_15_CRIT_01);
    let phi: Vec<f64> = (0..SAMPLES).map(|s| get_phase(&sample_round_channel(4, 0, s).unwrap(), 1, 2).unwrap().0 as f64).collect();
    let uf: Vec<f64> = u.iter().map(|v| v.0 as f64).collect();
    assert!(correlation(&uf, &phi).abs() < 0.05);
}
