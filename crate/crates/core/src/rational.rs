//! Small helpers for promoting floats to exact rationals.

use num_rational::Ratio;
use num_traits::ToPrimitive;

/// Best rational approximation of `x` by continued fractions, accepted only if
/// it reproduces `x` within `tol` and its denominator stays below `max_den`.
pub fn rationalize(x: f64, max_den: i64, tol: f64) -> Option<Ratio<i64>> {
    if !x.is_finite() {
        return None;
    }
    let sign = if x < 0.0 { -1.0 } else { 1.0 };
    let mut v = x.abs();
    // Convergents p/q of the continued fraction expansion.
    let (mut p0, mut q0, mut p1, mut q1) = (0i64, 1i64, 1i64, 0i64);
    for _ in 0..64 {
        let a = v.floor();
        if a > i64::MAX as f64 {
            return None;
        }
        let ai = a as i64;
        let p2 = ai.checked_mul(p1)?.checked_add(p0)?;
        let q2 = ai.checked_mul(q1)?.checked_add(q0)?;
        if q2 > max_den {
            break;
        }
        p0 = p1;
        q0 = q1;
        p1 = p2;
        q1 = q2;
        let approx = p1 as f64 / q1 as f64;
        if (approx - x.abs()).abs() <= tol {
            let num = if sign < 0.0 { -p1 } else { p1 };
            return Some(Ratio::new(num, q1));
        }
        let frac = v - a;
        if frac.abs() < f64::EPSILON * v.max(1.0) {
            break;
        }
        v = 1.0 / frac;
    }
    // Accept the last convergent if it already round-trips.
    if q1 > 0 {
        let approx = p1 as f64 / q1 as f64;
        if (approx - x.abs()).abs() <= tol {
            let num = if sign < 0.0 { -p1 } else { p1 };
            return Some(Ratio::new(num, q1));
        }
    }
    None
}

pub fn to_f64(r: Ratio<i128>) -> f64 {
    r.to_f64()
        .unwrap_or_else(|| *r.numer() as f64 / *r.denom() as f64)
}

pub fn widen(r: Ratio<i64>) -> Ratio<i128> {
    Ratio::new(*r.numer() as i128, *r.denom() as i128)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn recovers_simple_fractions() {
        assert_eq!(rationalize(0.22, 1_000_000, 1e-12), Some(Ratio::new(11, 50)));
        assert_eq!(rationalize(0.6, 1_000_000, 1e-12), Some(Ratio::new(3, 5)));
        assert_eq!(
            rationalize(1.0 / 3.0, 1_000_000, 1e-12),
            Some(Ratio::new(1, 3))
        );
        assert_eq!(rationalize(-2.5, 1_000_000, 1e-12), Some(Ratio::new(-5, 2)));
        assert_eq!(rationalize(0.0, 1_000_000, 1e-12), Some(Ratio::new(0, 1)));
    }

    #[test]
    fn rejects_irrationals() {
        assert_eq!(rationalize(std::f64::consts::SQRT_2, 1_000, 1e-14), None);
    }
}
