//! Euclidean projection onto the unit simplex, the group-norm proximal
//! operator, and a projected-gradient minimizer for smooth objectives with
//! simplex-constrained variables.

use ndarray::{Array1, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::error::{DuetError, Result};

/// First-order stationarity tolerance on the unit-step projected-gradient
/// residual `||x - P(x - grad f(x))||_2`.
pub const STATIONARITY_TOL: f64 = 1e-6;

/// Step-size and stopping policy for `pgd_minimize_simplex`.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct PgdSettings {
    pub max_iters: usize,
    /// Relative objective-change floor; iterations below it only continue
    /// while chasing the stationarity tolerance.
    pub tol: f64,
    pub armijo_c: f64,
    pub backtrack_factor: f64,
    pub init_step: f64,
}

impl Default for PgdSettings {
    fn default() -> Self {
        PgdSettings {
            max_iters: 500,
            tol: 1e-8,
            armijo_c: 1e-4,
            backtrack_factor: 0.5,
            init_step: 1.0,
        }
    }
}

impl PgdSettings {
    pub fn validate(&self) -> Result<()> {
        if self.max_iters == 0 {
            return Err(DuetError::invalid("pgd max_iters must be positive"));
        }
        if !(self.tol > 0.0 && self.tol.is_finite()) {
            return Err(DuetError::invalid("pgd tol must be positive"));
        }
        if !(self.armijo_c > 0.0 && self.armijo_c < 1.0) {
            return Err(DuetError::invalid("armijo_c must lie in (0, 1)"));
        }
        if !(self.backtrack_factor > 0.0 && self.backtrack_factor < 1.0) {
            return Err(DuetError::invalid("backtrack_factor must lie in (0, 1)"));
        }
        if !(self.init_step > 0.0 && self.init_step.is_finite()) {
            return Err(DuetError::invalid("init_step must be positive"));
        }
        Ok(())
    }
}

/// Euclidean projection of `v` onto `{x : x >= 0, sum x = 1}`.
///
/// Sort-based exact algorithm: with entries in decreasing order `u`, the
/// threshold is `tau = (sum_{j<=rho} u_j - 1)/rho` for the largest `rho`
/// with `u_rho > (sum_{j<=rho} u_j - 1)/rho`, and the projection is
/// `max(v - tau, 0)` componentwise.
pub fn project_simplex(v: ArrayView1<f64>) -> Result<Array1<f64>> {
    let k = v.len();
    if k == 0 {
        return Err(DuetError::invalid("cannot project an empty vector"));
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(DuetError::invalid("cannot project a non-finite vector"));
    }
    let mut u: Vec<f64> = v.to_vec();
    u.sort_by(|a, b| b.partial_cmp(a).expect("finite entries are comparable"));
    let mut cumsum = 0.0;
    let mut tau = 0.0;
    for (j, &uj) in u.iter().enumerate() {
        cumsum += uj;
        let t = (cumsum - 1.0) / (j + 1) as f64;
        if uj > t {
            tau = t;
        }
    }
    Ok(v.mapv(|x| (x - tau).max(0.0)))
}

/// Group-norm proximal operator `max(1 - phi/||a||_2, 0) * a`.
///
/// Returns the exact zero vector when `||a||_2 <= phi`, which is what makes
/// fused differences detectable downstream.
pub fn group_shrink(a: ArrayView1<f64>, phi: f64) -> Array1<f64> {
    debug_assert!(phi >= 0.0);
    let norm = a.dot(&a).sqrt();
    if norm <= phi {
        return Array1::zeros(a.len());
    }
    let scale = 1.0 - phi / norm;
    a.mapv(|x| scale * x)
}

/// Result of a projected-gradient minimization.
#[derive(Clone, Debug)]
pub struct PgdOutcome {
    pub x: Array1<f64>,
    pub objective: f64,
    pub iterations: usize,
    /// Stationarity residual fell below `STATIONARITY_TOL`.
    pub converged: bool,
}

/// Minimizes a smooth convex objective over the unit simplex by projected
/// gradient descent with Armijo backtracking.
///
/// Accepted iterates never increase the objective. Terminates when the
/// unit-step projected-gradient residual is at most `STATIONARITY_TOL`, or
/// after `cfg.max_iters` iterations with `converged = false`.
pub fn pgd_minimize_simplex<F, G>(
    f: F,
    grad_f: G,
    x0: ArrayView1<f64>,
    cfg: &PgdSettings,
) -> Result<PgdOutcome>
where
    F: Fn(ArrayView1<f64>) -> f64,
    G: Fn(ArrayView1<f64>) -> Array1<f64>,
{
    cfg.validate()?;
    // Re-projecting an on-simplex start is the identity; off-simplex starts
    // are snapped back rather than rejected.
    let mut x = project_simplex(x0)?;
    let mut fx = f(x.view());
    if !fx.is_finite() {
        return Err(DuetError::domain("objective non-finite at the starting point"));
    }
    let mut step = cfg.init_step;
    let mut converged = false;
    let mut iterations = 0;

    for it in 0..cfg.max_iters {
        iterations = it + 1;
        let g = grad_f(x.view());
        if g.iter().any(|v| !v.is_finite()) {
            return Err(DuetError::domain("gradient non-finite at a feasible point"));
        }
        let unit = project_simplex((&x - &g).view())?;
        let resid = (&x - &unit).mapv(|d| d * d).sum().sqrt();
        if resid <= STATIONARITY_TOL {
            converged = true;
            iterations = it;
            break;
        }

        // Armijo backtracking along the projected-gradient arc.
        let mut t = step;
        let mut accepted: Option<(Array1<f64>, f64, f64)> = None;
        while t >= 1e-20 {
            let cand = project_simplex((&x - &(t * &g)).view())?;
            let fc = f(cand.view());
            let descent = g.dot(&(&cand - &x));
            if fc.is_finite() && fc <= fx + cfg.armijo_c * descent {
                accepted = Some((cand, fc, t));
                break;
            }
            t *= cfg.backtrack_factor;
        }
        let Some((cand, fc, t_used)) = accepted else {
            // Line search stalled at numerical precision.
            break;
        };
        let rel_change = (fx - fc).abs() / fx.abs().max(1.0);
        x = cand;
        fx = fc;
        step = (t_used * 2.0).clamp(1e-12, 1e6);
        if rel_change < cfg.tol && (&x - &unit).mapv(|d| d * d).sum().sqrt() <= STATIONARITY_TOL {
            converged = true;
            break;
        }
    }

    Ok(PgdOutcome { x, objective: fx, iterations, converged })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;
    use proptest::prelude::*;

    /// Independent route to the projection: bisect on the threshold `tau`
    /// so that `sum max(v - tau, 0) = 1`, then verify the KKT conditions.
    fn project_oracle(v: &[f64]) -> Vec<f64> {
        let lo0 = v.iter().cloned().fold(f64::INFINITY, f64::min) - 1.0;
        let hi0 = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let (mut lo, mut hi) = (lo0, hi0);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            let s: f64 = v.iter().map(|x| (x - mid).max(0.0)).sum();
            if s > 1.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let tau = 0.5 * (lo + hi);
        let w: Vec<f64> = v.iter().map(|x| (x - tau).max(0.0)).collect();
        // KKT: feasibility plus complementary slackness.
        let sum: f64 = w.iter().sum();
        assert!((sum - 1.0).abs() < 1e-9, "oracle infeasible: sum {sum}");
        for (&wi, &vi) in w.iter().zip(v) {
            if wi > 0.0 {
                assert!((vi - wi - tau).abs() < 1e-7);
            } else {
                assert!(vi <= tau + 1e-7);
            }
        }
        w
    }

    #[test]
    fn projection_fixed_points_and_shifts() {
        // already on the simplex
        let p = project_simplex(array![0.2, 0.8].view()).unwrap();
        assert_abs_diff_eq!(p[0], 0.2, epsilon = 1e-12);
        assert_abs_diff_eq!(p[1], 0.8, epsilon = 1e-12);
        // clipped vertex
        let p = project_simplex(array![2.0, 0.0].view()).unwrap();
        assert_abs_diff_eq!(p[0], 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(p[1], 0.0, epsilon = 1e-12);
        // interior uniform shift: (1 - 0.6)/2 = 0.2
        let p = project_simplex(array![0.4, 0.2].view()).unwrap();
        assert_abs_diff_eq!(p[0], 0.6, epsilon = 1e-12);
        assert_abs_diff_eq!(p[1], 0.4, epsilon = 1e-12);
    }

    #[test]
    fn projection_rejects_bad_input() {
        assert!(project_simplex(array![f64::NAN, 0.0].view()).is_err());
        assert!(project_simplex(Array1::<f64>::zeros(0).view()).is_err());
    }

    #[test]
    fn projection_matches_oracle_on_random_vectors() {
        use rand::prelude::*;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(17);
        for trial in 0..1000 {
            let k = 2 + (trial % 14);
            let v: Vec<f64> = (0..k).map(|_| rng.random_range(-3.0..3.0)).collect();
            let got = project_simplex(ArrayView1::from(&v)).unwrap();
            let want = project_oracle(&v);
            for (g, w) in got.iter().zip(&want) {
                assert!((g - w).abs() < 1e-8, "projection {g} vs oracle {w}");
            }
            let sum: f64 = got.sum();
            assert!((sum - 1.0).abs() < 1e-12);
            assert!(got.iter().all(|&x| x >= 0.0));
        }
    }

    #[test]
    fn group_shrink_examples() {
        // phi equals the norm: exact zero
        let z = group_shrink(array![3.0, 4.0].view(), 5.0);
        assert_eq!(z, array![0.0, 0.0]);
        // partial shrinkage: scale 1 - 2.5/5 = 0.5
        let h = group_shrink(array![3.0, 4.0].view(), 2.5);
        assert_abs_diff_eq!(h[0], 1.5, epsilon = 1e-12);
        assert_abs_diff_eq!(h[1], 2.0, epsilon = 1e-12);
        // zero input stays zero for any phi
        let z = group_shrink(array![0.0, 0.0].view(), 7.0);
        assert_eq!(z, array![0.0, 0.0]);
    }

    #[test]
    fn pgd_recovers_feasible_target() {
        let c = array![0.3, 0.5, 0.2];
        let cc = c.clone();
        let out = pgd_minimize_simplex(
            |x| 0.5 * (&x - &c).mapv(|d| d * d).sum(),
            move |x| (&x - &cc).to_owned(),
            array![1.0, 0.0, 0.0].view(),
            &PgdSettings::default(),
        )
        .unwrap();
        assert!(out.converged);
        for (xi, ci) in out.x.iter().zip(c.iter()) {
            assert!((xi - ci).abs() < 1e-6);
        }
    }

    #[test]
    fn pgd_matches_projection_for_quadratic() {
        let v = array![1.4, -0.3, 0.6, 0.1];
        let vc = v.clone();
        let out = pgd_minimize_simplex(
            |x| 0.5 * (&x - &v).mapv(|d| d * d).sum(),
            move |x| (&x - &vc).to_owned(),
            array![0.25, 0.25, 0.25, 0.25].view(),
            &PgdSettings::default(),
        )
        .unwrap();
        let want = project_simplex(v.view()).unwrap();
        for (g, w) in out.x.iter().zip(want.iter()) {
            assert!((g - w).abs() < 1e-6);
        }
    }

    #[test]
    fn pgd_singleton_simplex_is_immediate() {
        let out = pgd_minimize_simplex(
            |x| x[0] * x[0],
            |x| array![2.0 * x[0]],
            array![1.0].view(),
            &PgdSettings::default(),
        )
        .unwrap();
        assert!(out.converged);
        assert_eq!(out.iterations, 0);
        assert_abs_diff_eq!(out.x[0], 1.0, epsilon = 1e-15);
    }

    #[test]
    fn pgd_rejects_non_finite_gradient() {
        let err = pgd_minimize_simplex(
            |_| 1.0,
            |_| array![f64::NAN, 0.0],
            array![0.5, 0.5].view(),
            &PgdSettings::default(),
        )
        .unwrap_err();
        assert!(matches!(err, DuetError::Domain(_)));
    }

    proptest! {
        #[test]
        fn projection_idempotent_and_nonexpansive(
            u in proptest::collection::vec(-5.0f64..5.0, 2..12),
            v in proptest::collection::vec(-5.0f64..5.0, 2..12),
        ) {
            let k = u.len().min(v.len());
            let pu = project_simplex(ArrayView1::from(&u[..k])).unwrap();
            let pv = project_simplex(ArrayView1::from(&v[..k])).unwrap();
            // idempotence
            let ppu = project_simplex(pu.view()).unwrap();
            for (a, b) in pu.iter().zip(ppu.iter()) {
                prop_assert!((a - b).abs() < 1e-12);
            }
            // 1-Lipschitz
            let d_in: f64 = u[..k].iter().zip(&v[..k]).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
            let d_out: f64 = (&pu - &pv).mapv(|d| d * d).sum().sqrt();
            prop_assert!(d_out <= d_in + 1e-12);
        }

        #[test]
        fn group_shrink_contracts(u in proptest::collection::vec(-5.0f64..5.0, 1..8), phi in 0.0f64..10.0) {
            let a = ArrayView1::from(&u);
            let shrunk = group_shrink(a, phi);
            let na = a.dot(&a).sqrt();
            let ns = shrunk.dot(&shrunk).sqrt();
            prop_assert!(ns <= na + 1e-12);
            // phi = 0 is the identity
            let same = group_shrink(a, 0.0);
            for (x, y) in same.iter().zip(u.iter()) {
                prop_assert!((x - y).abs() < 1e-15);
            }
        }

        #[test]
        fn pgd_objective_monotone(v in proptest::collection::vec(-2.0f64..2.0, 2..6)) {
            // every evaluation at an accepted iterate is recorded by wrapping f
            let target = Array1::from(v.clone());
            let tc = target.clone();
            let out = pgd_minimize_simplex(
                |x| 0.5 * (&x - &target).mapv(|d| d * d).sum(),
                move |x| (&x - &tc).to_owned(),
                Array1::from_elem(v.len(), 1.0 / v.len() as f64).view(),
                &PgdSettings::default(),
            ).unwrap();
            // final value is no worse than the start
            let start = Array1::from_elem(v.len(), 1.0 / v.len() as f64);
            let f0 = 0.5 * (&start - &Array1::from(v.clone())).mapv(|d: f64| d * d).sum();
            prop_assert!(out.objective <= f0 + 1e-12);
        }
    }
}
