//! Inner solver for the composition block: proximal ADMM on the
//! simplex-constrained generalized convex clustering problem. The
//! augmented Lagrangian is majorized by a quadratic that separates across
//! spots, each spot solves a small projected-gradient subproblem, the
//! auxiliary difference block has a closed-form group-norm prox, and the
//! loop stops on the standard primal/dual residual criterion with an
//! adaptive penalty parameter.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{DuetError, Result};
use crate::poisson::{grad_theta_nll, nll_spot, total_nll};
use crate::simplex::{group_shrink, pgd_minimize_simplex, PgdSettings};
use crate::weights::FusionGraph;

/// Bounds for the adaptive penalty parameter.
pub const RHO_MIN: f64 = 1e-6;
pub const RHO_MAX: f64 = 1e6;

/// The linear map taking a composition matrix to its per-edge row
/// differences: row e = theta_i - theta_j for edge e = (i, j).
#[derive(Clone, Debug)]
pub struct EdgeIncidence {
    n: usize,
    edges: Vec<(usize, usize)>,
}

impl EdgeIncidence {
    pub fn from_graph(graph: &FusionGraph) -> Self {
        EdgeIncidence {
            n: graph.n_spots(),
            edges: graph.edges().iter().map(|e| (e.i, e.j)).collect(),
        }
    }

    pub fn n_nodes(&self) -> usize {
        self.n
    }

    pub fn n_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    /// Forward map: (n x K) -> (E x K).
    pub fn apply(&self, theta: ArrayView2<f64>) -> Array2<f64> {
        let k = theta.ncols();
        let mut out = Array2::zeros((self.edges.len(), k));
        for (e, &(i, j)) in self.edges.iter().enumerate() {
            let diff = &theta.row(i) - &theta.row(j);
            out.row_mut(e).assign(&diff);
        }
        out
    }

    /// Adjoint map: (E x K) -> (n x K).
    pub fn apply_transpose(&self, m: ArrayView2<f64>) -> Array2<f64> {
        let k = m.ncols();
        let mut out = Array2::zeros((self.n, k));
        for (e, &(i, j)) in self.edges.iter().enumerate() {
            let row = m.row(e);
            let mut ri = out.row_mut(i);
            ri += &row;
            let mut rj = out.row_mut(j);
            rj -= &row;
        }
        out
    }
}

/// Largest eigenvalue of `A' A` (the Laplacian of the penalized-pair graph),
/// estimated by power iteration to relative tolerance 1e-6 and inflated by
/// 1.01 to guard against underestimation.
pub fn eta_bound(inc: &EdgeIncidence) -> f64 {
    if inc.n_edges() == 0 {
        return 0.0;
    }
    let n = inc.n_nodes();
    let mut degree = vec![0usize; n];
    for &(i, j) in &inc.edges {
        degree[i] += 1;
        degree[j] += 1;
    }
    let d_max = *degree.iter().max().expect("nonempty graph") as f64;

    let apply_laplacian = |v: &Array1<f64>| {
        let mut out = Array1::<f64>::zeros(n);
        for &(i, j) in &inc.edges {
            let d = v[i] - v[j];
            out[i] += d;
            out[j] -= d;
        }
        out
    };

    let mut rng = ChaCha8Rng::seed_from_u64(0x4455_4554);
    let mut v: Array1<f64> = Array1::from_shape_fn(n, |_| rng.random_range(-1.0..1.0));
    let norm = v.dot(&v).sqrt();
    if norm == 0.0 {
        return 1.01 * 2.0 * d_max;
    }
    v /= norm;
    let mut lambda_prev = 0.0;
    for _ in 0..10_000 {
        let w = apply_laplacian(&v);
        let lambda = v.dot(&w); // Rayleigh quotient, a lower bound
        let wn = w.dot(&w).sqrt();
        if wn < 1e-300 {
            return 1.01 * 2.0 * d_max;
        }
        v = w / wn;
        if (lambda - lambda_prev).abs() <= 1e-6 * lambda.abs().max(1e-12) {
            return 1.01 * lambda;
        }
        lambda_prev = lambda;
    }
    1.01 * lambda_prev.max(1.0)
}

/// ADMM tolerances and penalty-adaptation constants.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct AdmmConfig {
    pub rho_init: f64,
    /// Multiplicative penalty step.
    pub tau: f64,
    /// Imbalance factor that triggers a penalty change.
    pub mu: f64,
    pub eps_abs: f64,
    pub eps_rel: f64,
    pub max_iters: usize,
    pub pgd: PgdSettings,
}

impl Default for AdmmConfig {
    fn default() -> Self {
        AdmmConfig {
            rho_init: 1.0,
            tau: 2.0,
            mu: 10.0,
            eps_abs: 1e-6,
            eps_rel: 1e-4,
            max_iters: 5000,
            pgd: PgdSettings::default(),
        }
    }
}

impl AdmmConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.rho_init > 0.0) {
            return Err(DuetError::invalid("rho_init must be positive"));
        }
        if !(self.tau > 1.0) || !(self.mu > 1.0) {
            return Err(DuetError::invalid("tau and mu must exceed 1"));
        }
        if !(self.eps_abs > 0.0) || !(self.eps_rel > 0.0) {
            return Err(DuetError::invalid("eps_abs and eps_rel must be positive"));
        }
        if self.max_iters == 0 {
            return Err(DuetError::invalid("max_iters must be positive"));
        }
        self.pgd.validate()
    }
}

/// Graph quantities reused across every ADMM call on the same fit:
/// the incidence map, per-edge fusion weights, and the majorization bound.
#[derive(Clone, Debug)]
pub struct PenaltyGraph {
    pub inc: EdgeIncidence,
    pub edge_weights: Vec<f64>,
    pub eta: f64,
}

impl PenaltyGraph {
    pub fn prepare(graph: &FusionGraph) -> Self {
        let inc = EdgeIncidence::from_graph(graph);
        let eta = eta_bound(&inc);
        PenaltyGraph {
            inc,
            edge_weights: graph.edges().iter().map(|e| e.weight).collect(),
            eta,
        }
    }
}

/// Data defining the composition subproblem at fixed size factors.
#[derive(Clone, Copy)]
pub struct ThetaProblem<'a> {
    /// Counts, genes x spots.
    pub x: ArrayView2<'a, f64>,
    /// Reference, genes x types, strictly positive.
    pub b: ArrayView2<'a, f64>,
    /// Size factors, one per spot.
    pub s: ArrayView1<'a, f64>,
}

impl<'a> ThetaProblem<'a> {
    fn n_spots(&self) -> usize {
        self.x.ncols()
    }
}

/// Solver state between iterations; the multipliers are kept unscaled, so
/// penalty changes need no rescaling.
#[derive(Clone, Debug)]
pub struct AdmmState {
    pub theta: Array2<f64>,
    pub omega: Array2<f64>,
    pub multipliers: Array2<f64>,
    pub rho: f64,
    pub eta: f64,
    pub iteration: usize,
}

/// Residual report for the Boyd-style stopping rule.
#[derive(Clone, Copy, Debug)]
pub struct ResidualReport {
    pub primal: f64,
    pub dual: f64,
    pub eps_pri: f64,
    pub eps_dual: f64,
}

impl ResidualReport {
    pub fn converged(&self) -> bool {
        self.primal <= self.eps_pri && self.dual <= self.eps_dual
    }
}

fn frob(m: ArrayView2<f64>) -> f64 {
    m.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Primal/dual residuals and their tolerances:
/// primal `||A T - W||_F`, dual `||rho A'(W - W_prev)||_F`,
/// `eps_pri = sqrt(EK) eps_abs + eps_rel max(||A T||_F, ||W||_F)`,
/// `eps_dual = sqrt(nK) eps_abs + eps_rel ||A' M||_F`.
pub fn residuals(
    inc: &EdgeIncidence,
    a_theta: ArrayView2<f64>,
    omega: ArrayView2<f64>,
    omega_prev: ArrayView2<f64>,
    multipliers: ArrayView2<f64>,
    rho: f64,
    eps_abs: f64,
    eps_rel: f64,
) -> ResidualReport {
    let k = omega.ncols();
    let e = inc.n_edges();
    let n = inc.n_nodes();
    let primal = frob((&a_theta - &omega).view());
    let delta = &omega - &omega_prev;
    let dual = rho * frob(inc.apply_transpose(delta.view()).view());
    let eps_pri = ((e * k) as f64).sqrt() * eps_abs
        + eps_rel * frob(a_theta).max(frob(omega));
    let eps_dual = ((n * k) as f64).sqrt() * eps_abs
        + eps_rel * frob(inc.apply_transpose(multipliers).view());
    ResidualReport { primal, dual, eps_pri, eps_dual }
}

/// Penalty adaptation on tolerance-normalized residual ratios: the penalty
/// grows by `tau` when the primal ratio dominates by `mu`, shrinks by `tau`
/// when the dual ratio dominates, and clamps to [`RHO_MIN`], [`RHO_MAX`].
pub fn adapt_rho(rho: f64, primal_ratio: f64, dual_ratio: f64, tau: f64, mu: f64) -> f64 {
    if primal_ratio == 0.0 && dual_ratio == 0.0 {
        return rho;
    }
    if primal_ratio >= mu * dual_ratio {
        (rho * tau).clamp(RHO_MIN, RHO_MAX)
    } else if dual_ratio >= mu * primal_ratio {
        (rho / tau).clamp(RHO_MIN, RHO_MAX)
    } else {
        rho
    }
}

/// One majorized block update for the composition matrix.
///
/// Computes `r = A'(rho W - rho A T + M)` once, then each spot independently
/// minimizes
/// `(1/n) nll_i(theta) + (rho eta / 2) ||theta - theta_i - r_i/(rho eta)||^2`
/// over the simplex, warm-started from its current row.
pub fn theta_block_update(
    pg: &PenaltyGraph,
    problem: &ThetaProblem,
    state: &AdmmState,
    pgd: &PgdSettings,
) -> Result<Array2<f64>> {
    let n = problem.n_spots();
    let k = state.theta.ncols();
    let a_theta = pg.inc.apply(state.theta.view());
    let m = state.rho * (&state.omega - &a_theta) + &state.multipliers;
    let r = pg.inc.apply_transpose(m.view());
    let rho_eta = state.rho * state.eta;
    let n_inv = 1.0 / n as f64;

    let rows: Vec<Result<Array1<f64>>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let x_col = problem.x.column(i);
            let s = problem.s[i];
            let anchor = &state.theta.row(i) + &(r.row(i).mapv(|v| v / rho_eta));
            let objective = |t: ArrayView1<f64>| {
                let fit = nll_spot(x_col, problem.b, t, s).unwrap_or(f64::INFINITY);
                let d = &t - &anchor;
                n_inv * fit + 0.5 * rho_eta * d.dot(&d)
            };
            let gradient = |t: ArrayView1<f64>| {
                let g = grad_theta_nll(x_col, problem.b, t, s)
                    .expect("positive reference keeps simplex means positive");
                n_inv * &g + rho_eta * (&t - &anchor)
            };
            pgd_minimize_simplex(objective, gradient, state.theta.row(i), pgd).map(|o| o.x)
        })
        .collect();

    let mut out = Array2::zeros((n, k));
    for (i, row) in rows.into_iter().enumerate() {
        out.row_mut(i).assign(&row?);
    }
    Ok(out)
}

/// Closed-form block update for the per-edge differences:
/// `W_e = shrink(theta_i - theta_j - M_e / rho, lambda gamma_e / rho)`.
/// Shrunk rows are exactly zero, which is what marks fused edges.
pub fn omega_update(
    pg: &PenaltyGraph,
    theta_new: ArrayView2<f64>,
    multipliers: ArrayView2<f64>,
    rho: f64,
    lambda: f64,
) -> Array2<f64> {
    let k = theta_new.ncols();
    let mut omega = Array2::zeros((pg.inc.n_edges(), k));
    for (e, &(i, j)) in pg.inc.edges().iter().enumerate() {
        let v = &theta_new.row(i) - &theta_new.row(j) - &multipliers.row(e).mapv(|m| m / rho);
        let threshold = lambda * pg.edge_weights[e] / rho;
        omega.row_mut(e).assign(&group_shrink(v.view(), threshold));
    }
    omega
}

/// Penalized maximum-likelihood objective at a feasible point:
/// `(1/n) sum_i nll_i + lambda sum_e gamma_e ||theta_i - theta_j||_2`.
pub fn penalized_objective(
    problem: &ThetaProblem,
    theta: &Array2<f64>,
    lambda: f64,
    pg: &PenaltyGraph,
) -> Result<f64> {
    let n = problem.n_spots();
    let x_owned = problem.x.to_owned();
    let s_owned = problem.s.to_owned();
    let fit = total_nll(&x_owned, problem.b, theta, &s_owned)? / n as f64;
    let mut penalty = 0.0;
    for (e, &(i, j)) in pg.inc.edges().iter().enumerate() {
        let d = &theta.row(i) - &theta.row(j);
        penalty += pg.edge_weights[e] * d.dot(&d).sqrt();
    }
    Ok(fit + lambda * penalty)
}

/// Per-iteration trace record for the optional ADMM log.
#[derive(Clone, Copy, Debug)]
pub struct AdmmTraceRow {
    pub iter: usize,
    pub objective: f64,
    pub primal: f64,
    pub dual: f64,
    pub rho: f64,
    pub n_fused_edges: usize,
}

/// Carryover between warm-started solves.
#[derive(Clone, Debug)]
pub struct AdmmWarmStart {
    pub omega: Array2<f64>,
    pub multipliers: Array2<f64>,
    pub rho: f64,
}

/// Final state of one ADMM solve.
#[derive(Clone, Debug)]
pub struct AdmmSolution {
    pub theta: Array2<f64>,
    pub omega: Array2<f64>,
    pub multipliers: Array2<f64>,
    pub rho: f64,
    pub iterations: usize,
    /// Both residuals fell below their tolerances.
    pub converged: bool,
}

/// Runs the proximal ADMM to (approximately) minimize the penalized
/// likelihood over simplex-constrained compositions at fixed size factors.
///
/// Returns the final iterate with `converged = false` when the iteration
/// budget runs out; that is a flag, not an error.
pub fn solve_theta(
    pg: &PenaltyGraph,
    problem: &ThetaProblem,
    theta0: Array2<f64>,
    lambda: f64,
    cfg: &AdmmConfig,
    warm: Option<AdmmWarmStart>,
    mut trace: Option<&mut Vec<AdmmTraceRow>>,
) -> Result<AdmmSolution> {
    cfg.validate()?;
    let n = problem.n_spots();
    let k = theta0.ncols();
    if theta0.nrows() != n || pg.inc.n_nodes() != n {
        return Err(DuetError::invalid("theta, problem, and graph disagree on the spot count"));
    }

    // With no penalized pairs, or a zero penalty, the problem separates
    // into plain per-spot likelihood minimization; the returned auxiliary
    // state is the exact fixed point (omega = A theta, zero multipliers).
    if pg.inc.n_edges() == 0 || lambda == 0.0 {
        let n_inv = 1.0 / n as f64;
        let rows: Vec<Result<Array1<f64>>> = (0..n)
            .into_par_iter()
            .map(|i| {
                let x_col = problem.x.column(i);
                let s = problem.s[i];
                pgd_minimize_simplex(
                    |t| n_inv * nll_spot(x_col, problem.b, t, s).unwrap_or(f64::INFINITY),
                    |t| {
                        n_inv
                            * &grad_theta_nll(x_col, problem.b, t, s)
                                .expect("positive reference keeps simplex means positive")
                    },
                    theta0.row(i),
                    &cfg.pgd,
                )
                .map(|o| o.x)
            })
            .collect();
        let mut theta = Array2::zeros((n, k));
        for (i, row) in rows.into_iter().enumerate() {
            theta.row_mut(i).assign(&row?);
        }
        let omega = pg.inc.apply(theta.view());
        let multipliers = Array2::zeros((pg.inc.n_edges(), k));
        let rho = warm.map(|w| w.rho).unwrap_or(cfg.rho_init);
        return Ok(AdmmSolution {
            theta,
            omega,
            multipliers,
            rho,
            iterations: 1,
            converged: true,
        });
    }

    let (omega0, multipliers0, rho0) = match warm {
        Some(w) => (w.omega, w.multipliers, w.rho),
        None => (
            pg.inc.apply(theta0.view()),
            Array2::zeros((pg.inc.n_edges(), k)),
            cfg.rho_init,
        ),
    };
    let mut state = AdmmState {
        theta: theta0,
        omega: omega0,
        multipliers: multipliers0,
        rho: rho0,
        eta: pg.eta,
        iteration: 0,
    };

    let mut converged = false;
    for iter in 1..=cfg.max_iters {
        state.iteration = iter;
        let theta_new = theta_block_update(pg, problem, &state, &cfg.pgd)?;
        let a_theta = pg.inc.apply(theta_new.view());
        let omega_prev = std::mem::replace(
            &mut state.omega,
            omega_update(pg, theta_new.view(), state.multipliers.view(), state.rho, lambda),
        );
        state.multipliers = &state.multipliers + &(state.rho * (&state.omega - &a_theta));
        state.theta = theta_new;

        let rep = residuals(
            &pg.inc,
            a_theta.view(),
            state.omega.view(),
            omega_prev.view(),
            state.multipliers.view(),
            state.rho,
            cfg.eps_abs,
            cfg.eps_rel,
        );
        if let Some(t) = trace.as_deref_mut() {
            let objective = penalized_objective(problem, &state.theta, lambda, pg)?;
            let n_fused = state
                .omega
                .rows()
                .into_iter()
                .filter(|r| r.iter().all(|&v| v == 0.0))
                .count();
            t.push(AdmmTraceRow {
                iter,
                objective,
                primal: rep.primal,
                dual: rep.dual,
                rho: state.rho,
                n_fused_edges: n_fused,
            });
        }
        if rep.converged() {
            converged = true;
            break;
        }
        state.rho = adapt_rho(
            state.rho,
            rep.primal / rep.eps_pri,
            rep.dual / rep.eps_dual,
            cfg.tau,
            cfg.mu,
        );
    }

    Ok(AdmmSolution {
        theta: state.theta,
        omega: state.omega,
        multipliers: state.multipliers,
        rho: state.rho,
        iterations: state.iteration,
        converged,
    })
}
