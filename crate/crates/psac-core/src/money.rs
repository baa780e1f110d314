//! Money as an exact count of euro cents.
//!
//! All arithmetic is integer arithmetic. Scaling by a rational `p/q` rounds
//! half-up (ties toward positive infinity), so `scale(11, 10)` on a multiple
//! of ten cents is exact.

use serde::{Deserialize, Serialize};
use std::fmt;

use crate::expr::EvalError;

/// An amount of money in euro cents. May be negative (intermediate results).
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize,
)]
#[serde(transparent)]
pub struct Money(pub i64);

impl Money {
    pub const ZERO: Money = Money(0);

    pub fn cents(self) -> i64 {
        self.0
    }

    /// Construct from whole euros and a cent part, e.g. `from_parts(12, 34)` = €12.34.
    pub fn from_parts(euros: i64, cents: i64) -> Money {
        Money(euros * 100 + cents)
    }

    pub fn checked_add(self, other: Money) -> Result<Money, EvalError> {
        self.0
            .checked_add(other.0)
            .map(Money)
            .ok_or(EvalError::Overflow)
    }

    pub fn checked_sub(self, other: Money) -> Result<Money, EvalError> {
        self.0
            .checked_sub(other.0)
            .map(Money)
            .ok_or(EvalError::Overflow)
    }

    /// Scale by the rational `p/q` with round-half-up. `q` must be positive.
    pub fn scale(self, p: i64, q: i64) -> Result<Money, EvalError> {
        debug_assert!(q > 0, "scale denominator must be positive");
        let n = self.0 as i128 * p as i128;
        let d = q as i128;
        // round-half-up(n/d) = floor((2n + d) / 2d) for d > 0
        let rounded = (2 * n + d).div_euclid(2 * d);
        i64::try_from(rounded)
            .map(Money)
            .map_err(|_| EvalError::Overflow)
    }
}

impl fmt::Display for Money {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let sign = if self.0 < 0 { "-" } else { "" };
        let abs = self.0.unsigned_abs();
        write!(f, "{sign}\u{20ac}{}.{:02}", abs / 100, abs % 100)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn display_formats_cents() {
        assert_eq!(Money(12_34).to_string(), "€12.34");
        assert_eq!(Money(0).to_string(), "€0.00");
        assert_eq!(Money(-50).to_string(), "-€0.50");
        assert_eq!(Money(5).to_string(), "€0.05");
    }

    #[test]
    fn ten_percent_interest_is_exact() {
        // €100.00 scaled by 11/10 is €110.00 exactly.
        assert_eq!(Money(100_00).scale(11, 10).unwrap(), Money(110_00));
    }

    #[test]
    fn scale_rounds_half_up() {
        assert_eq!(Money(101).scale(1, 2).unwrap(), Money(51)); // 50.5 -> 51
        assert_eq!(Money(-101).scale(1, 2).unwrap(), Money(-50)); // -50.5 -> -50
        assert_eq!(Money(100).scale(1, 3).unwrap(), Money(33)); // 33.33 -> 33
        assert_eq!(Money(200).scale(1, 3).unwrap(), Money(67)); // 66.67 -> 67
    }

    #[test]
    fn scale_multiples_of_q_are_exact() {
        for k in [-7i64, -1, 0, 1, 3, 250] {
            assert_eq!(Money(k * 10).scale(11, 10).unwrap(), Money(k * 11));
        }
    }

    #[test]
    fn overflow_is_an_error_not_a_panic() {
        assert!(Money(i64::MAX).checked_add(Money(1)).is_err());
        assert!(Money(i64::MAX).scale(3, 2).is_err());
    }
}
