//! Wrapping onto the unit torus `[0, 1)^d`.
//!
//! All dynamics in this crate live on a periodic domain of period 1 in each
//! coordinate.  States are stored as representatives in `[0, 1)` and wrapped
//! after every integrator step.  Because every coefficient field is
//! 1-periodic, the wrap changes nothing mathematically; numerically it keeps
//! magnitudes small so `sin`/`cos` evaluations stay at full precision over
//! arbitrarily long trajectories.
//!
//! `wrap` computes `x - floor(x)`.  For the step sizes used here the input is
//! always within one period or so of `[0, 1)`, and for such moderate
//! magnitudes the subtraction is exact (when `floor(x)` and `x` are within a
//! factor of two of each other the difference incurs no rounding).  The only
//! wrinkle is that for tiny negative `x` the result can round up to exactly
//! `1.0`; a post-fix folds that back to `0.0` so the representative is always
//! in the half-open interval.

use crate::scalar::Real;

/// Wrap a scalar coordinate onto `[0, 1)`.
#[inline]
pub fn wrap<T: Real>(x: T) -> T {
    let w = x - x.floor();
    if w >= T::one() {
        w - T::one()
    } else {
        w
    }
}

/// Wrap every coordinate of a state vector in place.
#[inline]
pub fn wrap_in_place<T: Real>(x: &mut [T]) {
    for xi in x.iter_mut() {
        *xi = wrap(*xi);
    }
}

/// Minimal-image signed displacement from `a` to `b` on the torus, in
/// `[-1/2, 1/2)`.  Used by diagnostics only; the estimators never need it.
#[inline]
pub fn torus_displacement<T: Real>(a: T, b: T) -> T {
    let half = T::of(0.5);
    wrap(b - a + half) - half
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wrap_identity_on_unit_interval() {
        for &x in &[0.0f64, 0.25, 0.5, 0.999_999_999] {
            assert_eq!(wrap(x), x);
        }
    }

    #[test]
    fn wrap_shifts_exactly() {
        // Shifts by whole periods are exact for moderate magnitudes.
        assert_eq!(wrap(1.25f64), 0.25);
        assert_eq!(wrap(-0.75f64), 0.25);
        assert_eq!(wrap(3.5f64), 0.5);
        assert_eq!(wrap(-2.5f64), 0.5);
    }

    #[test]
    fn wrap_never_returns_one() {
        // -1e-18 - floor(-1e-18) rounds to 1.0 in f64; the post-fix folds it.
        let w = wrap(-1e-18f64);
        assert!((0.0..1.0).contains(&w));
        assert_eq!(w, 0.0);

        let w32 = wrap(-1e-9f32);
        assert!((0.0..1.0).contains(&w32));
    }

    #[test]
    fn wrap_in_place_all_coords() {
        let mut x = [1.25f64, -0.25, 0.5];
        wrap_in_place(&mut x);
        assert_eq!(x, [0.25, 0.75, 0.5]);
    }

    #[test]
    fn displacement_minimal_image() {
        // Ordinary float rounding applies to the intermediate sums, so the
        // checks are approximate.
        assert!((torus_displacement(0.9f64, 0.1) - 0.2).abs() < 1e-15);
        assert!((torus_displacement(0.1f64, 0.9) + 0.2).abs() < 1e-15);
        assert_eq!(torus_displacement(0.25f64, 0.5), 0.25);
    }
}
