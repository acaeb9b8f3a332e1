use std::f64::consts::TAU;
use std::fmt;
use std::iter::Sum;
use std::ops::{Add, AddAssign, Neg, Sub, SubAssign};

use serde::{Deserialize, Serialize};

/// An angle stored as a fraction of a full turn on a 2³² grid.
///
/// `Turn32(v)` represents `2π·v/2³²` radians. Addition and subtraction wrap
/// modulo 2³², which is exactly modulo-2π arithmetic on the grid.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Turn32(pub u32);

impl Turn32 {
    pub const ZERO: Turn32 = Turn32(0);

    /// Number of grid points in a full turn.
    pub const GRID: u64 = 1 << 32;

    pub fn radians(self) -> f64 {
        self.0 as f64 / Self::GRID as f64 * TAU
    }

    /// Index of the equal-width arc (out of `bins`) this angle falls into.
    pub fn arc(self, bins: usize) -> usize {
        ((self.0 as u64 * bins as u64) >> 32) as usize
    }
}

impl fmt::Display for Turn32 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/2^32", self.0)
    }
}

impl Add for Turn32 {
    type Output = Turn32;
    fn add(self, rhs: Turn32) -> Turn32 {
        Turn32(self.0.wrapping_add(rhs.0))
    }
}

impl Sub for Turn32 {
    type Output = Turn32;
    fn sub(self, rhs: Turn32) -> Turn32 {
        Turn32(self.0.wrapping_sub(rhs.0))
    }
}

impl Neg for Turn32 {
    type Output = Turn32;
    fn neg(self) -> Turn32 {
        Turn32(self.0.wrapping_neg())
    }
}

impl AddAssign for Turn32 {
    fn add_assign(&mut self, rhs: Turn32) {
        *self = *self + rhs;
    }
}

impl SubAssign for Turn32 {
    fn sub_assign(&mut self, rhs: Turn32) {
        *self = *self - rhs;
    }
}

impl Sum for Turn32 {
    fn sum<I: Iterator<Item = Turn32>>(iter: I) -> Turn32 {
        iter.fold(Turn32::ZERO, Add::add)
    }
}

impl<'a> Sum<&'a Turn32> for Turn32 {
    fn sum<I: Iterator<Item = &'a Turn32>>(iter: I) -> Turn32 {
        iter.copied().sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn wraps_at_full_turn() {
        assert_eq!(Turn32(u32::MAX) + Turn32(1), Turn32::ZERO);
        assert_eq!(Turn32(0) - Turn32(1), Turn32(u32::MAX));
        assert_eq!(-Turn32(1 << 31), Turn32(1 << 31));
    }

    #[test]
    fn quarter_turn_is_half_pi() {
        let q = Turn32(1 << 30);
        assert!((q.radians() - std::f64::consts::FRAC_PI_2).abs() < 1e-15);
        assert_eq!(q.arc(4), 1);
        assert_eq!(Turn32(u32::MAX).arc(16), 15);
    }

    proptest! {
        #[test]
        fn forms_an_abelian_group(a: u32, b: u32, c: u32) {
            let (a, b, c) = (Turn32(a), Turn32(b), Turn32(c));
            prop_assert_eq!((a + b) + c, a + (b + c));
            prop_assert_eq!(a + b, b + a);
            prop_assert_eq!(a + (-a), Turn32::ZERO);
            prop_assert_eq!(a - b + b, a);
        }
    }
}
