use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::model::{CoefficientVector, Domain};
use crate::scad::WeightScheme;

use super::operators::{d_apply_into, dt_apply_add, soft_threshold};
use super::system::{FactoredSystem, PooledSystem};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdmmOptions {
    pub eps_pri: f64,
    pub eps_dual: f64,
    pub max_iter: usize,
}

impl AdmmOptions {
    /// `1e-5 * sqrt(d_t + d_t * d_s)` for both tolerances, 5000 iterations.
    pub fn for_dims(d_t: usize, d_s: usize) -> Self {
        let eps = 1e-5 * ((d_t + d_t * d_s) as f64).sqrt();
        AdmmOptions {
            eps_pri: eps,
            eps_dual: eps,
            max_iter: 5000,
        }
    }
}

/// Primal and dual residual norms of one iteration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Residuals {
    pub r0: f64,
    pub r1: f64,
    pub s0: f64,
    pub s1: f64,
}

/// ADMM iterates. `delta` and `v` are indexed lexicographically by `(j, l)`.
#[derive(Debug, Clone, PartialEq)]
pub struct AdmmState {
    pub eta: DVector<f64>,
    pub z: DVector<f64>,
    pub delta: Vec<f64>,
    pub u: DVector<f64>,
    pub v: Vec<f64>,
    pub iter: usize,
    pub residual_history: Vec<Residuals>,
}

impl AdmmState {
    /// `z = A eta`, `delta = D eta`, zero multipliers.
    pub fn from_eta(eta: DVector<f64>, d_t: usize, d_s: usize) -> Result<Self> {
        if eta.len() != d_t + d_s {
            return Err(Error::DimensionMismatch(format!(
                "eta has length {} but d_t + d_s = {}",
                eta.len(),
                d_t + d_s
            )));
        }
        let z = eta.rows(0, d_t).into_owned();
        let mut delta = vec![0.0; d_t * d_s];
        d_apply_into(eta.as_slice(), d_t, d_s, &mut delta);
        Ok(AdmmState {
            eta,
            z,
            delta,
            u: DVector::zeros(d_t),
            v: vec![0.0; d_t * d_s],
            iter: 0,
            residual_history: Vec::new(),
        })
    }

    pub fn zeros(d_t: usize, d_s: usize) -> Self {
        Self::from_eta(DVector::zeros(d_t + d_s), d_t, d_s).expect("dimensions agree")
    }

    /// Starts from initial coefficient estimates.
    pub fn from_initial(beta: &CoefficientVector, theta: &CoefficientVector) -> Self {
        let (d_t, d_s) = (beta.len(), theta.len());
        let eta = DVector::from_iterator(d_t + d_s, beta.values.iter().chain(theta.values.iter()).copied());
        Self::from_eta(eta, d_t, d_s).expect("dimensions agree")
    }

    fn check_dims(&self, d_t: usize, d_s: usize) -> Result<()> {
        let ok = self.eta.len() == d_t + d_s
            && self.z.len() == d_t
            && self.u.len() == d_t
            && self.delta.len() == d_t * d_s
            && self.v.len() == d_t * d_s;
        if ok {
            Ok(())
        } else {
            Err(Error::DimensionMismatch(
                "warm-start state does not match problem size".into(),
            ))
        }
    }
}

#[derive(Debug, Clone)]
pub struct SolveResult {
    pub beta: CoefficientVector,
    pub theta: CoefficientVector,
    pub objective: f64,
    pub converged: bool,
    pub iterations: usize,
    /// Final iterates, usable as a warm start for a neighbouring problem.
    pub state: AdmmState,
}

/// The penalized objective evaluated at `(beta, theta)`.
pub fn objective_value(
    ps: &PooledSystem,
    ws: &WeightScheme,
    beta: &DVector<f64>,
    theta: &DVector<f64>,
    lambda0: f64,
    lambda1: f64,
) -> f64 {
    let (lt, ls) = ps.mean_squared_residuals(beta, theta);
    let l1: f64 = beta
        .iter()
        .zip(ws.feature_weights.iter())
        .map(|(b, w)| w * b.abs())
        .sum();
    let mut fused = 0.0;
    for (j, b) in beta.iter().enumerate() {
        for (l, t) in theta.iter().enumerate() {
            fused += ws.pair(j, l) * (b - t).abs();
        }
    }
    lt + ls + lambda0 * l1 + lambda1 * fused
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Runs ADMM on the fusion objective.
///
/// `warm_start` continues from earlier iterates (for example the previous
/// grid point); otherwise everything starts at zero. The iteration counter and
/// residual history always restart.
#[allow(clippy::too_many_arguments)]
pub fn admm_solve(
    ps: &PooledSystem,
    fs: &FactoredSystem,
    ws: &WeightScheme,
    lambda0: f64,
    lambda1: f64,
    opts: &AdmmOptions,
    warm_start: Option<&AdmmState>,
) -> Result<SolveResult> {
    let (d_t, d_s) = (ps.d_t(), ps.d_s());
    if fs.d_t() != d_t || fs.d_s() != d_s || ws.d_t() != d_t || ws.d_s() != d_s {
        return Err(Error::DimensionMismatch(
            "pooled system, factored system and weights disagree on dimensions".into(),
        ));
    }
    for (name, lam) in [("lambda0", lambda0), ("lambda1", lambda1)] {
        if !(lam >= 0.0) || !lam.is_finite() {
            return Err(Error::invalid(name, format!("must be finite and >= 0, got {lam}")));
        }
    }
    let (rho0, rho1) = (fs.rho0, fs.rho1);

    let mut st = match warm_start {
        Some(s) => {
            s.check_dims(d_t, d_s)?;
            let mut s = s.clone();
            s.iter = 0;
            s.residual_history.clear();
            s
        }
        None => AdmmState::zeros(d_t, d_s),
    };

    let z_tau: Vec<f64> = ws.feature_weights.iter().map(|w| lambda0 * w / rho0).collect();
    let delta_tau: Vec<f64> = ws.pair_weights().iter().map(|w| lambda1 * w / rho1).collect();

    // `fused_rhs` holds D^T(rho1 delta - v) for the next eta-update and
    // `dual_buf` holds D^T(delta_new - delta_old); both are accumulated in the
    // same single pass over the pairs that updates delta and v.
    let mut fused_rhs = vec![0.0; d_t + d_s];
    let start: Vec<f64> = st.delta.iter().zip(&st.v).map(|(d, v)| rho1 * d - v).collect();
    dt_apply_add(&start, d_t, d_s, &mut fused_rhs);
    let mut dual_buf = vec![0.0; d_t + d_s];
    let mut rhs = DVector::zeros(d_t + d_s);
    let mut converged = false;

    while st.iter < opts.max_iter {
        // eta-update: G eta = 2X^T Y + A^T(rho0 z - u) + D^T(rho1 delta - v)
        rhs.copy_from(ps.linear_term());
        for j in 0..d_t {
            rhs[j] += rho0 * st.z[j] - st.u[j];
        }
        for (r, f) in rhs.iter_mut().zip(&fused_rhs) {
            *r += f;
        }
        fs.solve_in_place(&mut rhs);
        std::mem::swap(&mut st.eta, &mut rhs);

        // z-update
        let mut dz2 = 0.0;
        for (((z, &e), &u), &tau) in st.z.iter_mut().zip(st.eta.iter()).zip(st.u.iter()).zip(&z_tau) {
            let new = soft_threshold(e + u / rho0, tau);
            dz2 += (new - *z).powi(2);
            *z = new;
        }

        // delta-update and v-update, pair by pair
        fused_rhs.iter_mut().for_each(|x| *x = 0.0);
        dual_buf.iter_mut().for_each(|x| *x = 0.0);
        let (eta_t, eta_s) = st.eta.as_slice().split_at(d_t);
        let (rhs_t, rhs_s) = fused_rhs.split_at_mut(d_t);
        let (dual_t, dual_s) = dual_buf.split_at_mut(d_t);
        let mut r1_2 = 0.0;
        for j in 0..d_t {
            let b = eta_t[j];
            let row = j * d_s..(j + 1) * d_s;
            let (mut acc_rhs, mut acc_dual) = (0.0, 0.0);
            for (((((&t, delta), v), &tau), rs), ds) in eta_s
                .iter()
                .zip(&mut st.delta[row.clone()])
                .zip(&mut st.v[row.clone()])
                .zip(&delta_tau[row])
                .zip(rhs_s.iter_mut())
                .zip(dual_s.iter_mut())
            {
                let diff = b - t;
                let new = soft_threshold(diff + *v / rho1, tau);
                let step = new - *delta;
                *delta = new;
                let r = diff - new;
                r1_2 += r * r;
                *v += rho1 * r;
                let w = rho1 * new - *v;
                acc_rhs += w;
                *rs -= w;
                acc_dual += step;
                *ds -= step;
            }
            rhs_t[j] = acc_rhs;
            dual_t[j] = acc_dual;
        }

        let mut r0_2 = 0.0;
        for j in 0..d_t {
            let r = st.eta[j] - st.z[j];
            r0_2 += r * r;
            st.u[j] += rho0 * r;
        }

        let res = Residuals {
            r0: r0_2.sqrt(),
            r1: r1_2.sqrt(),
            s0: rho0 * dz2.sqrt(),
            s1: rho1 * norm(&dual_buf),
        };
        st.residual_history.push(res);
        st.iter += 1;

        if res.r0.max(res.r1) <= opts.eps_pri && res.s0.max(res.s1) <= opts.eps_dual {
            converged = true;
            break;
        }
    }

    let beta = st.eta.rows(0, d_t).into_owned();
    let theta = st.eta.rows(d_t, d_s).into_owned();
    let objective = objective_value(ps, ws, &beta, &theta, lambda0, lambda1);
    Ok(SolveResult {
        beta: CoefficientVector::new(beta, Domain::Target),
        theta: CoefficientVector::new(theta, Domain::Source),
        objective,
        converged,
        iterations: st.iter,
        state: st,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::admm::system::build_factored_system;
    use crate::model::Dataset;
    use crate::scad::WeightKind;
    use nalgebra::DMatrix;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn random_system(n_t: usize, n_s: usize, d_t: usize, d_s: usize, seed: u64) -> PooledSystem {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut g = || rng.sample::<f64, _>(StandardNormal);
        let xt = DMatrix::from_fn(n_t, d_t, |_, _| g());
        let xs = DMatrix::from_fn(n_s, d_s, |_, _| g());
        let yt = DVector::from_fn(n_t, |_, _| g());
        let ys = DVector::from_fn(n_s, |_, _| g());
        let t = Dataset::new(xt, yt, Domain::Target).unwrap();
        let s = Dataset::new(xs, ys, Domain::Source).unwrap();
        PooledSystem::new(&t, &s).unwrap()
    }

    fn random_weights(d_t: usize, d_s: usize, seed: u64) -> WeightScheme {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let fw = DVector::from_fn(d_t, |_, _| rng.random::<f64>());
        let pw = (0..d_t * d_s).map(|_| rng.random::<f64>()).collect();
        WeightScheme::new(fw, pw, d_s, WeightKind::Scad).unwrap()
    }

    fn tight() -> AdmmOptions {
        AdmmOptions {
            eps_pri: 1e-11,
            eps_dual: 1e-11,
            max_iter: 200_000,
        }
    }

    #[test]
    fn unpenalized_matches_least_squares() {
        let ps = random_system(100, 200, 3, 3, 11);
        let fs = build_factored_system(&ps, 1.0, 1.0).unwrap();
        let ws = WeightScheme::uniform(3, 3);
        let out = admm_solve(&ps, &fs, &ws, 0.0, 0.0, &tight(), None).unwrap();
        assert!(out.converged);
        let t = ps.target();
        let s = ps.source();
        let bt = t
            .design
            .tr_mul(&t.design)
            .lu()
            .solve(&t.design.tr_mul(&t.response))
            .unwrap();
        let bs = s
            .design
            .tr_mul(&s.design)
            .lu()
            .solve(&s.design.tr_mul(&s.response))
            .unwrap();
        assert!((out.beta.values - bt).amax() < 1e-6);
        assert!((out.theta.values - bs).amax() < 1e-6);
    }

    #[test]
    fn objective_terms() {
        let ps = random_system(20, 30, 3, 4, 2);
        let ws = random_weights(3, 4, 3);
        let zb = DVector::zeros(3);
        let zt = DVector::zeros(4);
        let expect = ps.target().response.norm_squared() / 20.0 + ps.source().response.norm_squared() / 30.0;
        assert!((objective_value(&ps, &ws, &zb, &zt, 5.0, 5.0) - expect).abs() < 1e-12);

        let beta = DVector::from_column_slice(&[0.5, -1.0, 2.0]);
        let theta = DVector::from_column_slice(&[1.0, 0.0, -0.3, 2.0]);
        let (lt, ls) = ps.mean_squared_residuals(&beta, &theta);
        assert_eq!(objective_value(&ps, &ws, &beta, &theta, 0.0, 0.0), lt + ls);

        // Independent re-summation, row by row.
        let mut loss_t = 0.0;
        for i in 0..20 {
            let mut fit = 0.0;
            for j in 0..3 {
                fit += ps.target().design[(i, j)] * beta[j];
            }
            loss_t += (ps.target().response[i] - fit).powi(2);
        }
        let mut loss_s = 0.0;
        for i in 0..30 {
            let mut fit = 0.0;
            for l in 0..4 {
                fit += ps.source().design[(i, l)] * theta[l];
            }
            loss_s += (ps.source().response[i] - fit).powi(2);
        }
        let mut pen = 0.0;
        for j in 0..3 {
            pen += 0.7 * ws.feature_weights[j] * beta[j].abs();
            for l in 0..4 {
                pen += 0.3 * ws.pair(j, l) * (beta[j] - theta[l]).abs();
            }
        }
        let brute = loss_t / 20.0 + loss_s / 30.0 + pen;
        assert!((objective_value(&ps, &ws, &beta, &theta, 0.7, 0.3) - brute).abs() < 1e-12);
    }

    #[test]
    fn deterministic_histories() {
        let ps = random_system(50, 50, 4, 4, 5);
        let fs = build_factored_system(&ps, 1.0, 1.0).unwrap();
        let ws = random_weights(4, 4, 6);
        let opts = AdmmOptions::for_dims(4, 4);
        let a = admm_solve(&ps, &fs, &ws, 0.2, 0.1, &opts, None).unwrap();
        let b = admm_solve(&ps, &fs, &ws, 0.2, 0.1, &opts, None).unwrap();
        assert_eq!(a.state, b.state);
        assert_eq!(a.state.residual_history.len(), a.iterations);
    }

    #[test]
    fn converged_solution_satisfies_kkt() {
        let ps = random_system(50, 50, 4, 4, 7);
        let fs = build_factored_system(&ps, 1.0, 1.0).unwrap();
        let ws = random_weights(4, 4, 8);
        let (l0, l1) = (0.3, 0.2);
        let opts = AdmmOptions {
            eps_pri: 1e-8,
            eps_dual: 1e-8,
            max_iter: 100_000,
        };
        let out = admm_solve(&ps, &fs, &ws, l0, l1, &opts, None).unwrap();
        assert!(out.converged);
        let st = &out.state;
        let last = st.residual_history.last().unwrap();
        assert!(last.r0 <= opts.eps_pri && last.r1 <= opts.eps_pri);
        let tol = 10.0 * opts.eps_pri;
        for j in 0..4 {
            // 0 in lambda0 w_j d|z_j| - u_j
            let bound = l0 * ws.feature_weights[j];
            if st.z[j] != 0.0 {
                assert!((st.u[j] - bound * st.z[j].signum()).abs() <= tol);
            } else {
                assert!(st.u[j].abs() <= bound + tol);
            }
        }
        for k in 0..16 {
            let bound = l1 * ws.pair_weights()[k];
            if st.delta[k] != 0.0 {
                assert!((st.v[k] - bound * st.delta[k].signum()).abs() <= tol);
            } else {
                assert!(st.v[k].abs() <= bound + tol);
            }
        }
    }

    #[test]
    fn warm_start_reaches_same_point_faster() {
        let ps = random_system(60, 80, 5, 6, 9);
        let fs = build_factored_system(&ps, 1.0, 1.0).unwrap();
        let ws = random_weights(5, 6, 10);
        let opts = AdmmOptions {
            eps_pri: 1e-9,
            eps_dual: 1e-9,
            max_iter: 100_000,
        };
        let cold = admm_solve(&ps, &fs, &ws, 0.1, 0.1, &opts, None).unwrap();
        let warm = admm_solve(&ps, &fs, &ws, 0.1, 0.1, &opts, Some(&cold.state)).unwrap();
        assert!(warm.iterations < cold.iterations);
        assert!((warm.objective - cold.objective).abs() < 1e-7);
        assert!(admm_solve(&ps, &fs, &ws, 0.1, 0.1, &opts, Some(&AdmmState::zeros(2, 2))).is_err());
    }

    #[test]
    fn rejects_negative_lambda_and_mismatched_weights() {
        let ps = random_system(10, 10, 2, 2, 1);
        let fs = build_factored_system(&ps, 1.0, 1.0).unwrap();
        let ws = WeightScheme::uniform(2, 2);
        assert!(admm_solve(&ps, &fs, &ws, -1.0, 0.0, &tight(), None).is_err());
        let bad = WeightScheme::uniform(2, 3);
        assert!(admm_solve(&ps, &fs, &bad, 0.0, 0.0, &tight(), None).is_err());
    }
}
