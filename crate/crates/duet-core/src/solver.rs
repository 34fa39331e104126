//! Outer two-block coordinate descent, the fast single-update variant, and
//! warm-started computation of the solution path over a grid of penalty
//! strengths.

use ndarray::{Array1, Array2, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::admm::{
    penalized_objective, solve_theta, AdmmConfig, AdmmWarmStart, PenaltyGraph, ThetaProblem,
};
use crate::cluster::extract_clusters;
use crate::error::{DuetError, Result};
use crate::poisson::{check_aligned, spotwise_deconvolve, update_size_factor};
use crate::types::{CompositionMatrix, ExpressionMatrix, FitResult, ReferenceMatrix, SizeFactors};
use crate::weights::FusionGraph;

/// Outer-loop tolerances. `fuse_tol` of `None` resolves to
/// `1e-3 * sqrt(K)` at fit time.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    /// Relative-change stopping rule on both blocks.
    pub outer_tol: f64,
    pub outer_max_iters: usize,
    pub admm: AdmmConfig,
    pub fuse_tol: Option<f64>,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            outer_tol: 1e-4,
            outer_max_iters: 50,
            admm: AdmmConfig::default(),
            fuse_tol: None,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.outer_tol > 0.0 && self.outer_tol.is_finite()) {
            return Err(DuetError::invalid("outer_tol must be positive"));
        }
        if self.outer_max_iters == 0 {
            return Err(DuetError::invalid("outer_max_iters must be positive"));
        }
        if let Some(ft) = self.fuse_tol {
            if !(ft >= 0.0 && ft.is_finite()) {
                return Err(DuetError::invalid("fuse_tol must be nonnegative"));
            }
        }
        self.admm.validate()
    }

    pub fn fuse_tol_for(&self, n_celltypes: usize) -> f64 {
        self.fuse_tol
            .unwrap_or(1e-3 * (n_celltypes as f64).sqrt())
    }
}

/// Decreasing positive penalty values; a trailing zero is allowed.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LambdaGrid {
    values: Vec<f64>,
}

impl LambdaGrid {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(DuetError::invalid("lambda grid must be nonempty"));
        }
        for w in values.windows(2) {
            if !(w[1] < w[0]) {
                return Err(DuetError::invalid("lambda grid must be strictly decreasing"));
            }
        }
        let positive_prefix = match values.last() {
            Some(&0.0) => &values[..values.len() - 1],
            _ => &values[..],
        };
        if positive_prefix.iter().any(|&v| !(v > 0.0 && v.is_finite())) {
            return Err(DuetError::invalid(
                "lambda grid values must be positive (a final zero is allowed)",
            ));
        }
        Ok(LambdaGrid { values })
    }

    /// Log-spaced grid from `lambda_max` down `decades` orders of magnitude.
    pub fn log_spaced(lambda_max: f64, decades: f64, n_points: usize) -> Result<Self> {
        if !(lambda_max > 0.0 && lambda_max.is_finite()) {
            return Err(DuetError::invalid("lambda_max must be positive"));
        }
        if n_points < 2 || !(decades > 0.0) {
            return Err(DuetError::invalid("need at least two grid points over positive decades"));
        }
        let values = (0..n_points)
            .map(|k| lambda_max * 10f64.powf(-decades * k as f64 / (n_points - 1) as f64))
            .collect();
        LambdaGrid::new(values)
    }

    /// Appends an exact zero as the final entry.
    pub fn with_zero(mut self) -> Self {
        if self.values.last() != Some(&0.0) {
            self.values.push(0.0);
        }
        self
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Initial state for a fit; ADMM internals ride along on the warm-started
/// path so later penalties resume where the previous solve stopped.
#[derive(Clone, Debug)]
pub struct WarmStart {
    pub theta: Array2<f64>,
    pub s: Array1<f64>,
    pub admm: Option<AdmmWarmStart>,
}

struct Prepared {
    x: Array2<f64>,
    k: usize,
}

fn prepare(expr: &ExpressionMatrix, reference: &ReferenceMatrix, graph: &FusionGraph) -> Result<Prepared> {
    check_aligned(expr, reference)?;
    if graph.n_spots() != expr.n_spots() {
        return Err(DuetError::invalid(format!(
            "graph covers {} spots but the expression matrix has {}",
            graph.n_spots(),
            expr.n_spots()
        )));
    }
    Ok(Prepared { x: expr.counts_f64(), k: reference.n_celltypes() })
}

fn parallel_size_factors(
    x: &Array2<f64>,
    b: ndarray::ArrayView2<f64>,
    theta: &Array2<f64>,
) -> Result<Array1<f64>> {
    let cols: Vec<Result<f64>> = (0..x.ncols())
        .into_par_iter()
        .map(|i| update_size_factor(x.column(i), b, theta.row(i)))
        .collect();
    let mut s = Array1::zeros(x.ncols());
    for (i, v) in cols.into_iter().enumerate() {
        s[i] = v?;
    }
    Ok(s)
}

/// Two-block coordinate descent: parallel closed-form size-factor updates
/// alternate with proximal-ADMM composition updates until the relative
/// change of both blocks falls below `cfg.outer_tol`.
///
/// The recorded objective trace is nonincreasing: a composition update that
/// fails to improve the penalized objective (possible because the inner
/// solve is approximate) is discarded rather than accepted.
pub fn fit(
    expr: &ExpressionMatrix,
    reference: &ReferenceMatrix,
    graph: &FusionGraph,
    lambda: f64,
    cfg: &SolverConfig,
) -> Result<FitResult> {
    fit_with_init(expr, reference, graph, lambda, cfg, None)
}

/// `fit` with an explicit starting point, used by the path computation.
pub fn fit_with_init(
    expr: &ExpressionMatrix,
    reference: &ReferenceMatrix,
    graph: &FusionGraph,
    lambda: f64,
    cfg: &SolverConfig,
    init: Option<WarmStart>,
) -> Result<FitResult> {
    let pg = PenaltyGraph::prepare(graph);
    let (result, _) = fit_inner(expr, reference, graph, &pg, lambda, cfg, init)?;
    Ok(result)
}

fn fit_inner(
    expr: &ExpressionMatrix,
    reference: &ReferenceMatrix,
    graph: &FusionGraph,
    pg: &PenaltyGraph,
    lambda: f64,
    cfg: &SolverConfig,
    init: Option<WarmStart>,
) -> Result<(FitResult, WarmStart)> {
    cfg.validate()?;
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(DuetError::invalid("lambda must be nonnegative"));
    }
    let prep = prepare(expr, reference, graph)?;
    let b = reference.values().view();

    let (mut theta, mut s, mut admm_warm) = match init {
        Some(w) => {
            if w.theta.nrows() != expr.n_spots() || w.theta.ncols() != prep.k {
                return Err(DuetError::invalid("warm-start dimensions do not match the problem"));
            }
            (w.theta, w.s, w.admm)
        }
        None => {
            let (pilot, s0) = spotwise_deconvolve(expr, reference)?;
            (pilot.into_inner(), s0.values().clone(), None)
        }
    };

    fn problem_at<'a>(
        x: &'a Array2<f64>,
        b: ndarray::ArrayView2<'a, f64>,
        s: &'a Array1<f64>,
    ) -> ThetaProblem<'a> {
        ThetaProblem { x: x.view(), b, s: s.view() }
    }
    let mut objective = penalized_objective(&problem_at(&prep.x, b, &s), &theta, lambda, pg)?;
    let mut trace = vec![objective];
    let mut converged = false;
    let mut admm_all_converged = true;
    let mut iterations = 0;

    for outer in 1..=cfg.outer_max_iters {
        iterations = outer;
        // Size-factor block: exact minimizer given the compositions.
        let s_new = parallel_size_factors(&prep.x, b, &theta)?;
        let delta_s = {
            let num = (&s_new - &s).mapv(|d| d * d).sum().sqrt();
            let den = s.mapv(|v| v * v).sum().sqrt().max(f64::MIN_POSITIVE);
            num / den
        };
        s = s_new;

        // Composition block via proximal ADMM, warm-started.
        let problem = problem_at(&prep.x, b, &s);
        let sol = solve_theta(pg, &problem, theta.clone(), lambda, &cfg.admm, admm_warm.take(), None)?;
        admm_all_converged &= sol.converged;
        admm_warm = Some(AdmmWarmStart {
            omega: sol.omega,
            multipliers: sol.multipliers,
            rho: sol.rho,
        });

        let candidate_obj = penalized_objective(&problem, &sol.theta, lambda, pg)?;
        let obj_at_old_theta = penalized_objective(&problem, &theta, lambda, pg)?;
        let delta_theta;
        if candidate_obj <= obj_at_old_theta {
            delta_theta = {
                let num = (&sol.theta - &theta).mapv(|d| d * d).sum().sqrt();
                let den = theta.mapv(|v| v * v).sum().sqrt();
                num / den
            };
            theta = sol.theta;
            objective = candidate_obj;
        } else {
            // The approximate inner solve moved uphill; keep the previous
            // compositions so the trace stays a descent record.
            delta_theta = 0.0;
            objective = obj_at_old_theta;
        }
        trace.push(objective);

        if delta_theta.max(delta_s) < cfg.outer_tol {
            converged = true;
            break;
        }
    }

    let theta_hat = CompositionMatrix::new(theta.clone())?;
    let clusters = extract_clusters(&theta_hat, graph, cfg.fuse_tol_for(prep.k))?;
    let result = FitResult {
        theta_hat,
        s_hat: SizeFactors::new(s.clone())?,
        clusters,
        lambda,
        objective_trace: trace,
        converged,
        admm_converged: admm_all_converged,
        iterations,
    };
    let carry = WarmStart { theta, s, admm: admm_warm };
    Ok((result, carry))
}

/// Approximate variant: size factors come from the spotwise fit and stay
/// fixed; the compositions get exactly one ADMM solve.
pub fn fit_approx(
    expr: &ExpressionMatrix,
    reference: &ReferenceMatrix,
    graph: &FusionGraph,
    lambda: f64,
    cfg: &SolverConfig,
) -> Result<FitResult> {
    cfg.validate()?;
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(DuetError::invalid("lambda must be nonnegative"));
    }
    let prep = prepare(expr, reference, graph)?;
    let b = reference.values().view();
    let pg = PenaltyGraph::prepare(graph);

    let (pilot, s0) = spotwise_deconvolve(expr, reference)?;
    let theta0 = pilot.into_inner();
    let s = s0.values().clone();
    let problem = ThetaProblem { x: prep.x.view(), b, s: s.view() };

    let start_obj = penalized_objective(&problem, &theta0, lambda, &pg)?;
    let sol = solve_theta(&pg, &problem, theta0.clone(), lambda, &cfg.admm, None, None)?;
    let candidate_obj = penalized_objective(&problem, &sol.theta, lambda, &pg)?;
    let (theta, final_obj) = if candidate_obj <= start_obj {
        (sol.theta, candidate_obj)
    } else {
        (theta0, start_obj)
    };

    let theta_hat = CompositionMatrix::new(theta)?;
    let clusters = extract_clusters(&theta_hat, graph, cfg.fuse_tol_for(prep.k))?;
    Ok(FitResult {
        theta_hat,
        s_hat: SizeFactors::new(s)?,
        clusters,
        lambda,
        objective_trace: vec![start_obj, final_obj],
        converged: sol.converged,
        admm_converged: sol.converged,
        iterations: 1,
    })
}

/// Fits the grid from largest to smallest penalty, warm-starting each fit
/// (compositions, size factors, and ADMM internals) at the previous
/// solution.
pub fn fit_path(
    expr: &ExpressionMatrix,
    reference: &ReferenceMatrix,
    graph: &FusionGraph,
    grid: &LambdaGrid,
    cfg: &SolverConfig,
) -> Result<Vec<FitResult>> {
    let pg = PenaltyGraph::prepare(graph);
    let mut results = Vec::with_capacity(grid.len());
    let mut warm: Option<WarmStart> = None;
    for &lambda in grid.values() {
        let (res, carry) = fit_inner(expr, reference, graph, &pg, lambda, cfg, warm.take())?;
        warm = Some(carry);
        results.push(res);
    }
    Ok(results)
}

/// Smallest power-of-two multiple of the starting guess at which the fit
/// collapses to a single cluster. The guess scales with the typical
/// spotwise likelihood magnitude; the search doubles upward until one
/// cluster appears, or halves downward until it stops appearing.
pub fn lambda_max_search(
    expr: &ExpressionMatrix,
    reference: &ReferenceMatrix,
    graph: &FusionGraph,
    cfg: &SolverConfig,
) -> Result<f64> {
    let pg = PenaltyGraph::prepare(graph);
    let (pilot, s0) = spotwise_deconvolve(expr, reference)?;
    let x = expr.counts_f64();
    let b = reference.values().view();
    let mut per_spot: Vec<f64> = x
        .axis_iter(Axis(1))
        .enumerate()
        .map(|(i, col)| {
            crate::poisson::nll_spot(col, b, pilot.theta().row(i), s0.values()[i])
        })
        .collect::<Result<_>>()?;
    per_spot.sort_by(|a, b| a.partial_cmp(b).expect("finite likelihoods"));
    let median = per_spot[per_spot.len() / 2].abs();
    let lambda0 = if median > 0.0 && median.is_finite() {
        expr.n_spots() as f64 * median
    } else {
        1.0
    };

    let warm0 = WarmStart { theta: pilot.theta().clone(), s: s0.values().clone(), admm: None };
    let single_cluster = |lambda: f64, warm: Option<WarmStart>| -> Result<(bool, WarmStart)> {
        let (res, carry) = fit_inner(expr, reference, graph, &pg, lambda, cfg, warm)?;
        Ok((res.clusters.n_clusters() == 1, carry))
    };

    let (mut fused, mut carry) = single_cluster(lambda0, Some(warm0))?;
    let mut lambda = lambda0;
    if fused {
        // Walk down to the edge of the fused regime.
        for _ in 0..60 {
            let next = lambda / 2.0;
            let (f, c) = single_cluster(next, Some(carry))?;
            carry = c;
            if !f {
                return Ok(lambda);
            }
            lambda = next;
        }
        Ok(lambda)
    } else {
        for _ in 0..60 {
            lambda *= 2.0;
            let (f, c) = single_cluster(lambda, Some(carry))?;
            carry = c;
            fused = f;
            if fused {
                return Ok(lambda);
            }
        }
        Err(DuetError::invalid(
            "no single-cluster fit found within the doubling-search budget",
        ))
    }
}

/// Convenience: doubling search for the fused penalty, then a log-spaced
/// grid spanning four decades below it.
pub fn default_grid(
    expr: &ExpressionMatrix,
    reference: &ReferenceMatrix,
    graph: &FusionGraph,
    cfg: &SolverConfig,
    n_points: usize,
) -> Result<LambdaGrid> {
    let lambda_max = lambda_max_search(expr, reference, graph, cfg)?;
    LambdaGrid::log_spaced(lambda_max, 4.0, n_points)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{default_reference, gen_counts, gen_ground_truth, SimulationScenario};
    use crate::validate::{validate_inputs, QcConfig};
    use crate::weights::{build_fusion_graph, WeightConfig};

    #[test]
    fn lambda_grid_validation() {
        assert!(LambdaGrid::new(vec![1.0, 0.5, 0.1]).is_ok());
        assert!(LambdaGrid::new(vec![1.0, 0.5, 0.0]).is_ok());
        assert!(LambdaGrid::new(vec![0.5, 1.0]).is_err());
        assert!(LambdaGrid::new(vec![1.0, 1.0]).is_err());
        assert!(LambdaGrid::new(vec![]).is_err());
        assert!(LambdaGrid::new(vec![1.0, -0.5]).is_err());
        let g = LambdaGrid::log_spaced(10.0, 4.0, 5).unwrap();
        assert_eq!(g.len(), 5);
        assert!((g.values()[0] - 10.0).abs() < 1e-12);
        assert!((g.values()[4] - 10.0 * 1e-4).abs() < 1e-12);
        let g = g.with_zero();
        assert_eq!(g.values().last(), Some(&0.0));
    }

    fn small_world() -> (ExpressionMatrix, ReferenceMatrix, FusionGraph) {
        let reference = default_reference();
        let scenario = SimulationScenario {
            grid_side: 5,
            n_clusters: 5,
            smoothness: 1,
            reference,
            seed: 42,
            size_factor_max: 50,
        };
        let truth = gen_ground_truth(&scenario).unwrap();
        let expr = gen_counts(&truth, &scenario).unwrap();
        let (expr, reference) =
            validate_inputs(&expr, &scenario.reference, &QcConfig { min_spot_count: 1 }).unwrap();
        let cfg = WeightConfig { k_star: 3, k_dstar: 3, ..WeightConfig::default() };
        let graph = build_fusion_graph(&expr, &reference, &cfg).unwrap();
        (expr, reference, graph)
    }

    #[test]
    fn fit_at_zero_matches_spotwise() {
        let (expr, reference, graph) = small_world();
        let cfg = SolverConfig::default();
        let res = fit(&expr, &reference, &graph, 0.0, &cfg).unwrap();
        let (sp_theta, sp_s) = spotwise_deconvolve(&expr, &reference).unwrap();
        let dt = (res.theta_hat.theta() - sp_theta.theta())
            .iter()
            .fold(0.0f64, |a, v| a.max(v.abs()));
        assert!(dt < 1e-4, "max theta deviation {dt}");
        for i in 0..expr.n_spots() {
            let rel = (res.s_hat.values()[i] - sp_s.values()[i]).abs()
                / sp_s.values()[i].max(1e-12);
            assert!(rel < 1e-4, "size factor {i} off by {rel}");
        }
        assert!(res.trace_is_monotone());
    }

    #[test]
    fn fit_from_fixed_point_converges_immediately() {
        let (expr, reference, graph) = small_world();
        let cfg = SolverConfig::default();
        let first = fit(&expr, &reference, &graph, 0.05, &cfg).unwrap();
        let warm = WarmStart {
            theta: first.theta_hat.theta().clone(),
            s: first.s_hat.values().clone(),
            admm: None,
        };
        let second =
            fit_with_init(&expr, &reference, &graph, 0.05, &cfg, Some(warm)).unwrap();
        assert!(second.converged);
        assert!(second.iterations <= 2, "{} outer iterations", second.iterations);
    }

    #[test]
    fn approx_never_beats_full_fit_on_the_shared_objective() {
        let (expr, reference, graph) = small_world();
        let cfg = SolverConfig::default();
        for lambda in [0.01, 0.1] {
            let full = fit(&expr, &reference, &graph, lambda, &cfg).unwrap();
            let approx = fit_approx(&expr, &reference, &graph, lambda, &cfg).unwrap();
            assert!(
                full.objective() <= approx.objective() + 1e-6,
                "full {} vs approx {}",
                full.objective(),
                approx.objective()
            );
        }
    }

    #[test]
    fn approx_is_deterministic() {
        let (expr, reference, graph) = small_world();
        let cfg = SolverConfig::default();
        let a = fit_approx(&expr, &reference, &graph, 0.1, &cfg).unwrap();
        let b = fit_approx(&expr, &reference, &graph, 0.1, &cfg).unwrap();
        assert_eq!(a.theta_hat.theta(), b.theta_hat.theta());
        assert_eq!(a.s_hat.values(), b.s_hat.values());
        assert_eq!(a.objective_trace, b.objective_trace);
    }

    #[test]
    fn singleton_grid_path_equals_fit() {
        let (expr, reference, graph) = small_world();
        let cfg = SolverConfig::default();
        let grid = LambdaGrid::new(vec![0.05]).unwrap();
        let path = fit_path(&expr, &reference, &graph, &grid, &cfg).unwrap();
        assert_eq!(path.len(), 1);
        let single = fit(&expr, &reference, &graph, 0.05, &cfg).unwrap();
        assert_eq!(path[0].theta_hat.theta(), single.theta_hat.theta());
    }

    #[test]
    fn path_endpoints_fuse_and_split() {
        let (expr, reference, graph) = small_world();
        let mut cfg = SolverConfig::default();
        cfg.fuse_tol = None;
        let lambda_max = lambda_max_search(&expr, &reference, &graph, &cfg).unwrap();
        let top = fit(&expr, &reference, &graph, lambda_max, &cfg).unwrap();
        assert_eq!(top.clusters.n_clusters(), 1, "C = 1 at lambda_max");

        // exact-equality tolerance at lambda = 0: every spot its own cluster
        let mut zero_cfg = SolverConfig::default();
        zero_cfg.fuse_tol = Some(0.0);
        let bottom = fit(&expr, &reference, &graph, 0.0, &zero_cfg).unwrap();
        assert_eq!(bottom.clusters.n_clusters(), expr.n_spots());
    }
}
