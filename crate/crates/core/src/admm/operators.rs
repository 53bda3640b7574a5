//! Matrix-free actions of the pairwise-difference operator `D`.
//!
//! `D` has one row per pair `(j, l)` in lexicographic order and maps
//! `eta = (beta, theta)` to `beta_j - theta_l`. It is never materialized.

use nalgebra::{DMatrix, DVector};

/// `sign(x) * max(|x| - tau, 0)`.
#[inline]
pub fn soft_threshold(x: f64, tau: f64) -> f64 {
    if x > tau {
        x - tau
    } else if x < -tau {
        x + tau
    } else {
        0.0
    }
}

/// `D eta`, written into `out` (length `d_t * d_s`).
pub fn d_apply_into(eta: &[f64], d_t: usize, d_s: usize, out: &mut [f64]) {
    debug_assert_eq!(eta.len(), d_t + d_s);
    debug_assert_eq!(out.len(), d_t * d_s);
    let (beta, theta) = eta.split_at(d_t);
    for (row, &b) in out.chunks_exact_mut(d_s).zip(beta) {
        for (o, &t) in row.iter_mut().zip(theta) {
            *o = b - t;
        }
    }
}

pub fn d_apply(eta: &DVector<f64>, d_t: usize, d_s: usize) -> DVector<f64> {
    let mut out = DVector::zeros(d_t * d_s);
    d_apply_into(eta.as_slice(), d_t, d_s, out.as_mut_slice());
    out
}

/// `D^T v`, accumulated into `out` (length `d_t + d_s`): the beta block gets
/// row sums of `v`, the theta block gets negated column sums.
pub fn dt_apply_add(v: &[f64], d_t: usize, d_s: usize, out: &mut [f64]) {
    debug_assert_eq!(v.len(), d_t * d_s);
    debug_assert_eq!(out.len(), d_t + d_s);
    let (beta, theta) = out.split_at_mut(d_t);
    for (row, b) in v.chunks_exact(d_s).zip(beta.iter_mut()) {
        let mut acc = 0.0;
        for (&x, t) in row.iter().zip(theta.iter_mut()) {
            acc += x;
            *t -= x;
        }
        *b += acc;
    }
}

pub fn dt_apply(v: &DVector<f64>, d_t: usize, d_s: usize) -> DVector<f64> {
    let mut out = DVector::zeros(d_t + d_s);
    dt_apply_add(v.as_slice(), d_t, d_s, out.as_mut_slice());
    out
}

/// `D^T D = [[d_s I, -J], [-J^T, d_t I]]` with `J` the all-ones `d_t x d_s` block.
pub fn structural_dtd(d_t: usize, d_s: usize) -> DMatrix<f64> {
    let p = d_t + d_s;
    DMatrix::from_fn(p, p, |r, c| match (r < d_t, c < d_t) {
        (true, true) if r == c => d_s as f64,
        (false, false) if r == c => d_t as f64,
        (true, false) | (false, true) => -1.0,
        _ => 0.0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn materialize_d(d_t: usize, d_s: usize) -> DMatrix<f64> {
        let mut d = DMatrix::zeros(d_t * d_s, d_t + d_s);
        for j in 0..d_t {
            for l in 0..d_s {
                d[(j * d_s + l, j)] = 1.0;
                d[(j * d_s + l, d_t + l)] = -1.0;
            }
        }
        d
    }

    #[test]
    fn soft_threshold_cases() {
        assert_eq!(soft_threshold(3.0, 1.0), 2.0);
        assert_eq!(soft_threshold(-0.5, 1.0), 0.0);
        assert_eq!(soft_threshold(-3.0, 1.0), -2.0);
        for x in [-2.5, 0.0, 1e-300, 7.0] {
            assert_eq!(soft_threshold(x, 0.0), x);
        }
    }

    #[test]
    fn d_apply_small() {
        let eta = DVector::from_column_slice(&[1.0, 2.0, 0.0, 1.0]);
        assert_eq!(d_apply(&eta, 2, 2).as_slice(), &[1.0, 0.0, 2.0, 1.0]);
        assert!(d_apply(&DVector::zeros(5), 2, 3).iter().all(|v| *v == 0.0));
    }

    #[test]
    fn dt_apply_small() {
        let v = DVector::from_element(4, 1.0);
        assert_eq!(dt_apply(&v, 2, 2), materialize_d(2, 2).transpose() * &v);
        assert_eq!(dt_apply(&v, 2, 2).as_slice(), &[2.0, 2.0, -2.0, -2.0]);
        assert!(dt_apply(&DVector::zeros(6), 2, 3).iter().all(|x| *x == 0.0));
    }

    #[test]
    fn structural_gram_matches_materialized() {
        for d_t in 1..=5 {
            for d_s in 1..=5 {
                let d = materialize_d(d_t, d_s);
                assert_eq!(structural_dtd(d_t, d_s), d.transpose() * &d, "({d_t}, {d_s})");
            }
        }
    }

    proptest! {
        #[test]
        fn operators_match_materialized(
            d_t in 1usize..=5,
            d_s in 1usize..=5,
            seed in prop::collection::vec(-8i32..=8, 10 + 25),
        ) {
            // Integer-valued inputs keep both routes exact.
            let eta = DVector::from_iterator(d_t + d_s, seed.iter().take(d_t + d_s).map(|&x| x as f64));
            let v = DVector::from_iterator(d_t * d_s, seed.iter().cycle().skip(3).take(d_t * d_s).map(|&x| x as f64));
            let d = materialize_d(d_t, d_s);
            prop_assert_eq!(d_apply(&eta, d_t, d_s), &d * &eta);
            prop_assert_eq!(dt_apply(&v, d_t, d_s), d.transpose() * &v);
        }

        #[test]
        fn dt_apply_is_linear(
            v in prop::collection::vec(-10.0f64..10.0, 12),
            w in prop::collection::vec(-10.0f64..10.0, 12),
            a in -3.0f64..3.0,
            b in -3.0f64..3.0,
        ) {
            let (v, w) = (DVector::from_vec(v), DVector::from_vec(w));
            let lhs = dt_apply(&(&v * a + &w * b), 3, 4);
            let rhs = dt_apply(&v, 3, 4) * a + dt_apply(&w, 3, 4) * b;
            prop_assert!((lhs - rhs).amax() < 1e-10);
        }
    }
}
