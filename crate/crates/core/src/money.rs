//! Exact money and fixed-point fractions.
//!
//! All balances are signed integers in USD minor units (cents). Fractions
//! (prices, rates, haircuts) are integers in millionths. Every valuation
//! rounds half-to-even exactly once, at the final division.

use std::fmt;
use std::iter::Sum;
use std::ops::{Add, AddAssign, Mul, Neg, Sub, SubAssign};

use serde::{Deserialize, Serialize};

/// Millionths per unit fraction.
pub const PPM: i64 = 1_000_000;

/// Divide rounding half-to-even. `den` must be non-zero.
pub fn div_round_half_even(num: i128, den: i128) -> i128 {
    assert!(den != 0, "division by zero");
    let (num, den) = if den < 0 { (-num, -den) } else { (num, den) };
    let q = num.div_euclid(den);
    let r = num.rem_euclid(den);
    let twice = 2 * r;
    if twice > den || (twice == den && q % 2 != 0) {
        q + 1
    } else {
        q
    }
}

fn to_i64(v: i128) -> i64 {
    i64::try_from(v).unwrap_or_else(|_| panic!("amount overflow: {v} does not fit in i64"))
}

/// Signed amount in USD minor units.
#[derive(
    Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
#[serde(transparent)]
pub struct Amount(i64);

impl Amount {
    pub const ZERO: Amount = Amount(0);
    pub const MAX: Amount = Amount(i64::MAX);

    pub const fn from_minor(minor: i64) -> Self {
        Amount(minor)
    }

    /// Whole dollars.
    pub const fn dollars(d: i64) -> Self {
        Amount(d * 100)
    }

    pub const fn minor(self) -> i64 {
        self.0
    }

    pub fn is_zero(self) -> bool {
        self.0 == 0
    }

    pub fn is_positive(self) -> bool {
        self.0 > 0
    }

    pub fn is_negative(self) -> bool {
        self.0 < 0
    }

    pub fn checked_add(self, rhs: Amount) -> Option<Amount> {
        self.0.checked_add(rhs.0).map(Amount)
    }

    pub fn checked_sub(self, rhs: Amount) -> Option<Amount> {
        self.0.checked_sub(rhs.0).map(Amount)
    }

    pub fn max(self, other: Amount) -> Amount {
        Amount(self.0.max(other.0))
    }

    pub fn min(self, other: Amount) -> Amount {
        Amount(self.0.min(other.0))
    }

    pub fn abs(self) -> Amount {
        Amount(self.0.checked_abs().expect("amount overflow"))
    }

    /// Multiply by a fraction, rounding half-to-even.
    pub fn scale(self, f: Fraction) -> Amount {
        Amount(to_i64(div_round_half_even(
            self.0 as i128 * f.ppm() as i128,
            PPM as i128,
        )))
    }

    /// Multiply by a fraction, rounding toward positive infinity.
    pub fn scale_ceil(self, f: Fraction) -> Amount {
        let num = self.0 as i128 * f.ppm() as i128;
        let den = PPM as i128;
        let q = num.div_euclid(den);
        let q = if num.rem_euclid(den) == 0 { q } else { q + 1 };
        Amount(to_i64(q))
    }

    /// Multiply by a fraction, rounding toward negative infinity.
    pub fn scale_floor(self, f: Fraction) -> Amount {
        let num = self.0 as i128 * f.ppm() as i128;
        Amount(to_i64(num.div_euclid(PPM as i128)))
    }

    /// `self * num / den`, rounding half-to-even.
    pub fn mul_div(self, num: i64, den: i64) -> Amount {
        Amount(to_i64(div_round_half_even(
            self.0 as i128 * num as i128,
            den as i128,
        )))
    }

    /// Split into `parts` shares proportional to `weights` using largest
    /// remainders; ties go to the earlier index. The shares sum exactly to
    /// `self` when the total weight is positive.
    pub fn allocate(self, weights: &[Amount]) -> Vec<Amount> {
        let total: i128 = weights.iter().map(|w| w.0.max(0) as i128).sum();
        if total == 0 || self.0 == 0 {
            return vec![Amount::ZERO; weights.len()];
        }
        let target = self.0 as i128;
        let mut shares: Vec<i128> = Vec::with_capacity(weights.len());
        let mut rems: Vec<(i128, usize)> = Vec::with_capacity(weights.len());
        for (i, w) in weights.iter().enumerate() {
            let num = target * w.0.max(0) as i128;
            shares.push(num.div_euclid(total));
            rems.push((num.rem_euclid(total), i));
        }
        let mut left = target - shares.iter().sum::<i128>();
        rems.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
        for (_, i) in rems {
            if left == 0 {
                break;
            }
            shares[i] += 1;
            left -= 1;
        }
        shares.into_iter().map(|s| Amount(to_i64(s))).collect()
    }
}

impl Add for Amount {
    type Output = Amount;
    fn add(self, rhs: Amount) -> Amount {
        self.checked_add(rhs).expect("amount overflow")
    }
}

impl Sub for Amount {
    type Output = Amount;
    fn sub(self, rhs: Amount) -> Amount {
        self.checked_sub(rhs).expect("amount overflow")
    }
}

impl AddAssign for Amount {
    fn add_assign(&mut self, rhs: Amount) {
        *self = *self + rhs;
    }
}

impl SubAssign for Amount {
    fn sub_assign(&mut self, rhs: Amount) {
        *self = *self - rhs;
    }
}

impl Neg for Amount {
    type Output = Amount;
    fn neg(self) -> Amount {
        Amount(self.0.checked_neg().expect("amount overflow"))
    }
}

impl Sum for Amount {
    fn sum<I: Iterator<Item = Amount>>(iter: I) -> Amount {
        iter.fold(Amount::ZERO, |a, b| a + b)
    }
}

impl<'a> Sum<&'a Amount> for Amount {
    fn sum<I: Iterator<Item = &'a Amount>>(iter: I) -> Amount {
        iter.copied().sum()
    }
}

impl fmt::Display for Amount {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let sign = if self.0 < 0 { "-" } else { "" };
        let abs = (self.0 as i128).abs();
        write!(f, "{sign}{}.{:02}", abs / 100, abs % 100)
    }
}

/// Signed fraction in millionths (1_000_000 = 1.0).
#[derive(
    Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
#[serde(transparent)]
pub struct Fraction(i64);

impl Fraction {
    pub const ZERO: Fraction = Fraction(0);
    pub const ONE: Fraction = Fraction(PPM);

    pub const fn from_ppm(ppm: i64) -> Self {
        Fraction(ppm)
    }

    /// Basis points (1bp = 100 ppm).
    pub const fn from_bp(bp: i64) -> Self {
        Fraction(bp * 100)
    }

    /// Hundredths of a percent, the precision of published ratio tables.
    pub const fn from_percent_hundredths(h: i64) -> Self {
        Fraction(h * 100)
    }

    pub const fn ppm(self) -> i64 {
        self.0
    }

    /// Ratio `num / den` rounded half-to-even to 1e-6.
    pub fn ratio(num: Amount, den: Amount) -> Fraction {
        Fraction(to_i64(div_round_half_even(
            num.minor() as i128 * PPM as i128,
            den.minor() as i128,
        )))
    }

    /// Nearest basis point, half-to-even.
    pub fn to_bp(self) -> i64 {
        to_i64(div_round_half_even(self.0 as i128, 100))
    }

    pub fn as_f64(self) -> f64 {
        self.0 as f64 / PPM as f64
    }

    pub fn is_zero(self) -> bool {
        self.0 == 0
    }

    pub fn abs(self) -> Fraction {
        Fraction(self.0.abs())
    }

    pub fn max(self, other: Fraction) -> Fraction {
        Fraction(self.0.max(other.0))
    }

    pub fn min(self, other: Fraction) -> Fraction {
        Fraction(self.0.min(other.0))
    }

    pub fn clamp(self, lo: Fraction, hi: Fraction) -> Fraction {
        Fraction(self.0.clamp(lo.0, hi.0))
    }
}

/// Product of two fractions, half-to-even.
impl Mul for Fraction {
    type Output = Fraction;
    fn mul(self, rhs: Fraction) -> Fraction {
        Fraction(to_i64(div_round_half_even(self.0 as i128 * rhs.0 as i128, PPM as i128)))
    }
}

impl Add for Fraction {
    type Output = Fraction;
    fn add(self, rhs: Fraction) -> Fraction {
        Fraction(self.0.checked_add(rhs.0).expect("fraction overflow"))
    }
}

impl Sub for Fraction {
    type Output = Fraction;
    fn sub(self, rhs: Fraction) -> Fraction {
        Fraction(self.0.checked_sub(rhs.0).expect("fraction overflow"))
    }
}

impl Neg for Fraction {
    type Output = Fraction;
    fn neg(self) -> Fraction {
        Fraction(-self.0)
    }
}

impl fmt::Display for Fraction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:.4}%", self.0 as f64 / 10_000.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn half_even_rounding() {
        assert_eq!(div_round_half_even(5, 2), 2);
        assert_eq!(div_round_half_even(7, 2), 4);
        assert_eq!(div_round_half_even(-5, 2), -2);
        assert_eq!(div_round_half_even(-7, 2), -4);
        assert_eq!(div_round_half_even(10, 3), 3);
        assert_eq!(div_round_half_even(11, 3), 4);
        assert_eq!(div_round_half_even(5, -2), -2);
    }

    #[test]
    fn scale_rounds_once() {
        let a = Amount::from_minor(100_000_00);
        assert_eq!(a.scale(Fraction::from_bp(-100)), Amount::from_minor(-1_000_00));
        assert_eq!(Amount::from_minor(1).scale(Fraction::from_ppm(500_000)), Amount::ZERO);
        assert_eq!(Amount::from_minor(3).scale(Fraction::from_ppm(500_000)), Amount::from_minor(2));
    }

    #[test]
    fn ceil_and_floor() {
        let p = Amount::from_minor(101);
        assert_eq!(p.scale_ceil(Fraction::from_bp(200)), Amount::from_minor(3));
        assert_eq!(p.scale_floor(Fraction::from_bp(200)), Amount::from_minor(2));
    }

    #[test]
    #[should_panic(expected = "amount overflow")]
    fn overflow_is_fatal() {
        let _ = Amount::MAX + Amount::from_minor(1);
    }

    #[test]
    fn allocation_is_exact() {
        let shares = Amount::from_minor(100).allocate(&[
            Amount::from_minor(1),
            Amount::from_minor(1),
            Amount::from_minor(1),
        ]);
        assert_eq!(shares, vec![Amount::from_minor(34), Amount::from_minor(33), Amount::from_minor(33)]);
        assert_eq!(Amount::from_minor(5).allocate(&[Amount::ZERO]), vec![Amount::ZERO]);
    }

    #[test]
    fn display() {
        assert_eq!(Amount::from_minor(-1_234_56).to_string(), "-1234.56");
        assert_eq!(Fraction::from_percent_hundredths(561).to_string(), "5.6100%");
    }
}
