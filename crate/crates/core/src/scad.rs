//! SCAD-derivative weights and the ideal (known-structure) weights.

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::model::{CoefficientVector, TransferStructure};

/// Conventional SCAD shape parameter.
pub const DEFAULT_SCAD_A: f64 = 3.7;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WeightKind {
    Ideal,
    Scad,
}

/// Feature weights `w_j` and pair weights `w_{j,l}`, all in `[0, 1]`.
///
/// Pair weights are stored in lexicographic `(j, l)` order, the same order
/// the solver uses for the pairwise differences.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightScheme {
    pub feature_weights: DVector<f64>,
    pair_weights: Vec<f64>,
    d_t: usize,
    d_s: usize,
    pub kind: WeightKind,
}

impl WeightScheme {
    pub fn new(feature_weights: DVector<f64>, pair_weights: Vec<f64>, d_s: usize, kind: WeightKind) -> Result<Self> {
        let d_t = feature_weights.len();
        if pair_weights.len() != d_t * d_s {
            return Err(Error::DimensionMismatch(format!(
                "pair weights have length {} but d_t * d_s = {}",
                pair_weights.len(),
                d_t * d_s
            )));
        }
        let in_range = |w: &f64| (0.0..=1.0).contains(w);
        if !feature_weights.iter().all(in_range) || !pair_weights.iter().all(in_range) {
            return Err(Error::invalid("weights", "all weights must lie in [0, 1]"));
        }
        Ok(WeightScheme {
            feature_weights,
            pair_weights,
            d_t,
            d_s,
            kind,
        })
    }

    /// Every weight equal to one.
    pub fn uniform(d_t: usize, d_s: usize) -> Self {
        WeightScheme {
            feature_weights: DVector::from_element(d_t, 1.0),
            pair_weights: vec![1.0; d_t * d_s],
            d_t,
            d_s,
            kind: WeightKind::Scad,
        }
    }

    pub fn d_t(&self) -> usize {
        self.d_t
    }

    pub fn d_s(&self) -> usize {
        self.d_s
    }

    pub fn pair(&self, j: usize, l: usize) -> f64 {
        self.pair_weights[j * self.d_s + l]
    }

    /// Lexicographic pair weights.
    pub fn pair_weights(&self) -> &[f64] {
        &self.pair_weights
    }
}

/// `p'_lambda(|t|)` for the SCAD penalty.
pub fn scad_derivative(t: f64, lambda: f64, a: f64) -> Result<f64> {
    if !(lambda > 0.0) || !lambda.is_finite() {
        return Err(Error::invalid("lambda", format!("must be > 0, got {lambda}")));
    }
    if !(a > 2.0) || !a.is_finite() {
        return Err(Error::invalid("a", format!("SCAD requires a > 2, got {a}")));
    }
    Ok(scad_derivative_unchecked(t.abs(), lambda, a))
}

#[inline]
fn scad_derivative_unchecked(t: f64, lambda: f64, a: f64) -> f64 {
    if t <= lambda {
        lambda
    } else if t <= a * lambda {
        (a * lambda - t) / (a - 1.0)
    } else {
        0.0
    }
}

/// Data-driven weights built from initial estimates: `w_j = p'_{λ0}(|b_j|)/λ0`
/// and `w_{j,l} = p'_{λ1}(|b_j - t_l|)/λ1`.
pub fn scad_weight_scheme(
    beta_init: &CoefficientVector,
    theta_init: &CoefficientVector,
    lambda0: f64,
    lambda1: f64,
    a: f64,
) -> Result<WeightScheme> {
    scad_derivative(0.0, lambda0, a)?;
    scad_derivative(0.0, lambda1, a)?;
    let beta = &beta_init.values;
    let theta = &theta_init.values;
    let feature_weights = beta.map(|b| scad_derivative_unchecked(b.abs(), lambda0, a) / lambda0);
    let mut pair_weights = Vec::with_capacity(beta.len() * theta.len());
    for &b in beta.iter() {
        for &t in theta.iter() {
            let w = scad_derivative_unchecked((b - t).abs(), lambda1, a) / lambda1;
            pair_weights.push(w.clamp(0.0, 1.0));
        }
    }
    Ok(WeightScheme {
        feature_weights: feature_weights.map(|w| w.clamp(0.0, 1.0)),
        pair_weights,
        d_t: beta.len(),
        d_s: theta.len(),
        kind: WeightKind::Scad,
    })
}

/// Penalize only inactive target coefficients and pairs in the transfer set.
pub fn ideal_weight_scheme(ts: &TransferStructure, d_t: usize, d_s: usize) -> Result<WeightScheme> {
    if ts.d_t != d_t || ts.d_s != d_s {
        return Err(Error::DimensionMismatch(format!(
            "structure built for ({}, {}) but weights requested for ({d_t}, {d_s})",
            ts.d_t, ts.d_s
        )));
    }
    let feature_weights = DVector::from_fn(d_t, |j, _| if ts.target_support.contains(&j) { 0.0 } else { 1.0 });
    let mut pair_weights = vec![0.0; d_t * d_s];
    for &(j, l) in &ts.pair_set {
        pair_weights[j * d_s + l] = 1.0;
    }
    Ok(WeightScheme {
        feature_weights,
        pair_weights,
        d_t,
        d_s,
        kind: WeightKind::Ideal,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{build_transfer_structure, Domain};
    use proptest::prelude::*;

    #[test]
    fn derivative_regions() {
        assert_eq!(scad_derivative(0.5, 1.0, 3.7).unwrap(), 1.0);
        let mid = scad_derivative(2.0, 1.0, 3.7).unwrap();
        assert!((mid - 1.7 / 2.7).abs() < 1e-15);
        assert!((mid - 0.629_629_629_629_629_6).abs() < 1e-15);
        assert_eq!(scad_derivative(4.0, 1.0, 3.7).unwrap(), 0.0);
        assert_eq!(scad_derivative(-0.5, 1.0, 3.7).unwrap(), 1.0);
    }

    #[test]
    fn derivative_rejects_bad_shape() {
        assert!(scad_derivative(1.0, 1.0, 2.0).is_err());
        assert!(scad_derivative(1.0, 1.0, 1.5).is_err());
        assert!(scad_derivative(1.0, 0.0, 3.7).is_err());
    }

    #[test]
    fn normalized_derivative_shape_on_grid() {
        let (lambda, a) = (0.7, 3.7);
        let mut prev = f64::INFINITY;
        for i in 0..1000 {
            let t = 3.0 * a * lambda * i as f64 / 999.0;
            let w = scad_derivative(t, lambda, a).unwrap() / lambda;
            if t <= lambda {
                assert_eq!(w, 1.0);
            } else if t < a * lambda {
                assert!(w < prev, "not strictly decreasing at t={t}");
                assert!(w > 0.0 && w < 1.0);
            } else {
                assert_eq!(w, 0.0);
            }
            // Continuity: the grid step is small relative to the slope 1/((a-1) lambda).
            if prev.is_finite() {
                assert!((prev - w).abs() <= 3.0 * a * lambda / 999.0 / ((a - 1.0) * lambda) + 1e-12);
            }
            prev = w;
        }
    }

    #[test]
    fn scheme_edge_values() {
        let beta = CoefficientVector::from_slice(&[0.0, 3.0], Domain::Target);
        let theta = CoefficientVector::from_slice(&[3.0, 1.0], Domain::Source);
        let ws = scad_weight_scheme(&beta, &theta, 1.0, 1.0, 3.7).unwrap();
        assert_eq!(ws.feature_weights[0], 1.0);
        assert_eq!(ws.pair(1, 0), 1.0);
        assert!((ws.pair(1, 1) - 0.629_629_629_629_629_6).abs() < 1e-15);
        assert_eq!(ws.pair_weights().len(), 4);
        assert!(scad_weight_scheme(&beta, &theta, 0.0, 1.0, 3.7).is_err());
    }

    #[test]
    fn ideal_weights_on_toy_example() {
        let beta_v = [1., 1., 2., 3., 0., 0.];
        let theta_v = [0., 0., 0., 1., 2., 3., 3., 4.];
        let beta = CoefficientVector::from_slice(&beta_v, Domain::Target);
        let theta = CoefficientVector::from_slice(&theta_v, Domain::Source);
        let ts = build_transfer_structure(&beta, &theta, 0.0).unwrap();
        let ws = ideal_weight_scheme(&ts, 6, 8).unwrap();
        assert_eq!(ws.feature_weights.as_slice(), &[0., 0., 0., 0., 1., 1.]);

        // Enumerate the expected pairs directly from the vectors.
        let mut expected = Vec::new();
        for (j, b) in beta_v.iter().enumerate() {
            for (l, t) in theta_v.iter().enumerate() {
                if *b != 0.0 && b == t {
                    expected.push((j, l));
                }
            }
        }
        assert_eq!(expected, vec![(0, 3), (1, 3), (2, 4), (3, 5), (3, 6)]);
        for j in 0..6 {
            for l in 0..8 {
                let w = ws.pair(j, l);
                assert_eq!(w, if expected.contains(&(j, l)) { 1.0 } else { 0.0 });
            }
        }
    }

    #[test]
    fn ideal_weights_degenerate_sets() {
        let beta = CoefficientVector::from_slice(&[1., 2.], Domain::Target);
        let theta = CoefficientVector::from_slice(&[5., 6., 7.], Domain::Source);
        let ts = build_transfer_structure(&beta, &theta, 0.0).unwrap();
        let ws = ideal_weight_scheme(&ts, 2, 3).unwrap();
        assert!(ws.feature_weights.iter().all(|w| *w == 0.0));
        assert!(ws.pair_weights().iter().all(|w| *w == 0.0));
        assert!(ideal_weight_scheme(&ts, 3, 3).is_err());
    }

    proptest! {
        #[test]
        fn scheme_weights_in_unit_interval(
            beta in prop::collection::vec(-5.0f64..5.0, 1..8),
            theta in prop::collection::vec(-5.0f64..5.0, 1..8),
            l0 in 0.01f64..3.0,
            l1 in 0.01f64..3.0,
        ) {
            let b = CoefficientVector::from_slice(&beta, Domain::Target);
            let t = CoefficientVector::from_slice(&theta, Domain::Source);
            let ws = scad_weight_scheme(&b, &t, l0, l1, DEFAULT_SCAD_A).unwrap();
            prop_assert!(ws.feature_weights.iter().all(|w| (0.0..=1.0).contains(w)));
            prop_assert!(ws.pair_weights().iter().all(|w| (0.0..=1.0).contains(w)));

            // Only magnitudes and differences matter: flipping every sign changes nothing.
            let nb = CoefficientVector::from_slice(&beta.iter().map(|v| -v).collect::<Vec<_>>(), Domain::Target);
            let nt = CoefficientVector::from_slice(&theta.iter().map(|v| -v).collect::<Vec<_>>(), Domain::Source);
            let flipped = scad_weight_scheme(&nb, &nt, l0, l1, DEFAULT_SCAD_A).unwrap();
            prop_assert_eq!(ws, flipped);
        }

        #[test]
        fn ideal_weights_are_binary(
            beta in prop::collection::vec((-1i32..=2).prop_map(f64::from), 1..8),
            theta in prop::collection::vec((-1i32..=2).prop_map(f64::from), 1..8),
        ) {
            let b = CoefficientVector::from_slice(&beta, Domain::Target);
            let t = CoefficientVector::from_slice(&theta, Domain::Source);
            let ts = build_transfer_structure(&b, &t, 0.0).unwrap();
            let ws = ideal_weight_scheme(&ts, beta.len(), theta.len()).unwrap();
            prop_assert!(ws.feature_weights.iter().chain(ws.pair_weights()).all(|w| *w == 0.0 || *w == 1.0));
        }
    }
}
