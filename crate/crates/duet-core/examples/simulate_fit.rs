//! End-to-end library walkthrough on a synthetic dataset: simulate, QC,
//! build weights, search the penalty scale, fit a short path, and report
//! timings plus recovery metrics.

use std::time::Instant;

use duet_core::metrics::adjusted_rand_index;
use duet_core::select::select_lambda_bic;
use duet_core::sim::{default_reference, simulate, SimulationScenario};
use duet_core::solver::{fit_path, lambda_max_search, LambdaGrid, SolverConfig};
use duet_core::validate::{validate_inputs, QcConfig};
use duet_core::weights::{build_fusion_graph, WeightConfig};

fn main() -> duet_core::Result<()> {
    let scenario = SimulationScenario {
        grid_side: 20,
        n_clusters: 5,
        smoothness: 1,
        reference: default_reference(),
        seed: 7,
        size_factor_max: 50,
    };
    let t0 = Instant::now();
    let (expr, truth) = simulate(&scenario)?;
    println!("simulate: {:?}", t0.elapsed());

    let t = Instant::now();
    let (expr, reference) =
        validate_inputs(&expr, &scenario.reference, &QcConfig { min_spot_count: 1 })?;
    println!("validate: {:?} ({} spots, {} genes)", t.elapsed(), expr.n_spots(), expr.n_genes());

    let t = Instant::now();
    let wcfg = WeightConfig { k_star: 7, k_dstar: 6, ..WeightConfig::default() };
    let graph = build_fusion_graph(&expr, &reference, &wcfg)?;
    println!("weights: {:?} ({} edges)", t.elapsed(), graph.n_edges());

    let cfg = SolverConfig::default();
    let t = Instant::now();
    let lambda_max = lambda_max_search(&expr, &reference, &graph, &cfg)?;
    println!("lambda_max search: {:?} (lambda_max = {lambda_max:.4})", t.elapsed());

    let grid = LambdaGrid::log_spaced(lambda_max, 4.0, 10)?;
    let t = Instant::now();
    let path = fit_path(&expr, &reference, &graph, &grid, &cfg)?;
    println!("10-point path: {:?}", t.elapsed());
    for fit in &path {
        println!(
            "  lambda {:>10.4}: C = {:>3}, objective {:>12.4}, outer iters {}, admm ok {}",
            fit.lambda,
            fit.clusters.n_clusters(),
            fit.objective(),
            fit.iterations,
            fit.admm_converged,
        );
    }

    let (best, _) = select_lambda_bic(&path, &expr, &reference)?;
    let chosen = path.iter().find(|f| f.lambda == best).unwrap();
    let ari = adjusted_rand_index(chosen.clusters.labels(), truth.labels.labels())?;
    println!("selected lambda {best:.4}: C = {}, ARI = {ari:.3}", chosen.clusters.n_clusters());
    Ok(())
}
