//! Batch command line around the solver library: simulate datasets, build
//! fusion weights, fit at a fixed penalty, tune the penalty, score fits
//! against ground truth, and render cluster maps.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use duet_core::io::{self, RunConfig, ScenarioSpec, SelectionMethod, SelectionRow};
use duet_core::metrics;
use duet_core::render::render_map;
use duet_core::select::{bic, select_lambda_bic, select_lambda_thinning};
use duet_core::sim;
use duet_core::solver::{self, SolverConfig};
use duet_core::types::{ExpressionMatrix, FitResult, ReferenceMatrix};
use duet_core::validate::{apply_pseudocount, validate_inputs, QcConfig, DEFAULT_PSEUDOCOUNT};
use duet_core::weights::{build_fusion_graph, FusionGraph, WeightConfig};

#[derive(Parser)]
#[command(
    name = "duet",
    version,
    about = "Joint cell-type deconvolution and spatial-domain detection for spot-level transcriptomics"
)]
struct Cli {
    /// Seed for stages that draw randomness (simulate, thinning).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// JSON run configuration; command-line flags override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Solver thread count; DUET_THREADS is the fallback, all cores the default.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset from a scenario spec.
    Simulate(SimulateArgs),
    /// Build the fusion weight graph and write it as an edge list.
    Weights(WeightsArgs),
    /// Fit at a fixed penalty and write the fit directory.
    Fit(FitArgs),
    /// Select the penalty over a grid and write the report plus best fit.
    Tune(TuneArgs),
    /// Score a fit directory against ground truth.
    Metrics(MetricsArgs),
    /// Render a fitted cluster map as SVG.
    Render(RenderArgs),
}

#[derive(Args)]
struct DataArgs {
    /// Counts CSV: dense (genes x spots) or sparse triplet.
    #[arg(long)]
    counts: Option<PathBuf>,
    /// Companion coordinates CSV (spot_id,x,y).
    #[arg(long)]
    coords: Option<PathBuf>,
    /// Reference CSV (genes x cell types).
    #[arg(long)]
    reference: Option<PathBuf>,
    /// Single-cell counts CSV (genes x cells), alternative to --reference.
    #[arg(long)]
    sc_counts: Option<PathBuf>,
    /// Cell label CSV (cell_id,cell_type) paired with --sc-counts.
    #[arg(long)]
    sc_labels: Option<PathBuf>,
    /// Optional marker gene list (one gene id per line).
    #[arg(long)]
    markers: Option<PathBuf>,
    /// Pseudocount replacing zero reference entries.
    #[arg(long)]
    pseudocount: Option<f64>,
    /// Spots with fewer total counts are dropped.
    #[arg(long)]
    min_spot_count: Option<u64>,
}

#[derive(Args)]
struct WeightFlagArgs {
    /// Precomputed edge list to reuse instead of rebuilding weights.
    #[arg(long)]
    weights_file: Option<PathBuf>,
    #[arg(long)]
    k_star: Option<usize>,
    #[arg(long)]
    k_dstar: Option<usize>,
    #[arg(long)]
    prune_pct: Option<f64>,
    #[arg(long)]
    floor_frac: Option<f64>,
    #[arg(long)]
    adjacency_factor: Option<f64>,
}

#[derive(Args)]
struct SimulateArgs {
    /// Scenario JSON (grid_side, n_clusters, smoothness, seed, ...).
    #[arg(long)]
    scenario: Option<PathBuf>,
    /// Output directory for the dataset files.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct WeightsArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    weights: WeightFlagArgs,
    /// Output edge-list path.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct FitArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    weights: WeightFlagArgs,
    /// Fusion penalty strength.
    #[arg(long)]
    lambda: Option<f64>,
    /// Approximate variant: spotwise size factors stay fixed and the
    /// compositions get exactly one inner solve.
    #[arg(long)]
    approx: bool,
    /// Output fit directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TuneArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    weights: WeightFlagArgs,
    /// Selection method: thinning, bic, or fixed.
    #[arg(long)]
    method: Option<String>,
    /// Thinning fraction kept for training.
    #[arg(long)]
    epsilon: Option<f64>,
    /// Number of grid points on the penalty path.
    #[arg(long)]
    grid_points: Option<usize>,
    /// Fixed penalty (required when --method fixed).
    #[arg(long)]
    lambda: Option<f64>,
    /// Output directory (report CSV plus best fit).
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct MetricsArgs {
    /// Fit directory produced by `fit` or `tune`.
    #[arg(long)]
    fit: PathBuf,
    /// Ground-truth composition CSV (headerless n x K).
    #[arg(long)]
    truth_theta: PathBuf,
    /// Ground-truth label file (one 1-based label per line).
    #[arg(long)]
    truth_labels: PathBuf,
    /// Method name recorded in the report.
    #[arg(long, default_value = "duet")]
    method: String,
    /// Scenario name recorded in the report.
    #[arg(long, default_value = "unknown")]
    scenario: String,
    /// Seed recorded in the report.
    #[arg(long, default_value_t = 0)]
    record_seed: u64,
    /// Output CSV.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct RenderArgs {
    /// Fit directory.
    #[arg(long)]
    fit: PathBuf,
    /// Coordinates CSV matching the fitted spots, in order.
    #[arg(long)]
    coords: PathBuf,
    /// Output SVG path.
    #[arg(long)]
    out: PathBuf,
}

fn main() -> std::process::ExitCode {
    let cli = Cli::parse();
    let config = match load_config(cli.config.as_deref()) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e:#}");
            return std::process::ExitCode::FAILURE;
        }
    };
    init_threads(cli.threads.or(config.threads));
    match run(&cli, &config) {
        Ok(()) => std::process::ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            std::process::ExitCode::FAILURE
        }
    }
}

fn load_config(path: Option<&Path>) -> Result<RunConfig> {
    match path {
        Some(p) => io::read_run_config(p).with_context(|| format!("reading {}", p.display())),
        None => Ok(RunConfig::default()),
    }
}

fn init_threads(flag: Option<usize>) {
    let from_env = std::env::var("DUET_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok());
    if let Some(t) = flag.or(from_env) {
        let _ = rayon::ThreadPoolBuilder::new().num_threads(t).build_global();
    }
}

fn run(cli: &Cli, config: &RunConfig) -> Result<()> {
    match &cli.command {
        Command::Simulate(args) => cmd_simulate(args, cli.seed, config),
        Command::Weights(args) => cmd_weights(args, config),
        Command::Fit(args) => cmd_fit(args, config),
        Command::Tune(args) => cmd_tune(args, cli.seed, config),
        Command::Metrics(args) => cmd_metrics(args),
        Command::Render(args) => cmd_render(args),
    }
}

/// Loads, aligns, and QC-filters the expression/reference pair named by the
/// flags (with config fallback), returning the ready-to-fit pair.
fn load_inputs(data: &DataArgs, config: &RunConfig) -> Result<(ExpressionMatrix, ReferenceMatrix)> {
    let counts = data
        .counts
        .clone()
        .or_else(|| config.counts.clone())
        .context("--counts is required (or 'counts' in the config)")?;
    let coords = data
        .coords
        .clone()
        .or_else(|| config.coords.clone())
        .context("--coords is required (or 'coords' in the config)")?;
    let expr = io::read_expression(&counts, &coords)?;

    let pseudocount = data
        .pseudocount
        .or(config.pseudocount)
        .unwrap_or(DEFAULT_PSEUDOCOUNT);
    let reference = match data.reference.clone().or_else(|| config.reference.clone()) {
        Some(path) => io::read_reference(&path)?,
        None => {
            let sc_counts_path = data
                .sc_counts
                .clone()
                .or_else(|| config.sc_counts.clone())
                .context("provide --reference, or --sc-counts with --sc-labels")?;
            let sc_labels_path = data
                .sc_labels
                .clone()
                .or_else(|| config.sc_labels.clone())
                .context("--sc-labels is required with --sc-counts")?;
            let sc = io::read_reference(&sc_counts_path)?; // same dense layout, cells as columns
            let labels = load_cell_labels(&sc_labels_path, sc.celltype_ids())?;
            let markers = match data.markers.clone().or_else(|| config.markers.clone()) {
                Some(p) => Some(load_lines(&p)?),
                None => None,
            };
            io::build_reference(
                &sc.gene_ids().to_vec(),
                sc.values(),
                &labels,
                markers.as_deref(),
                pseudocount,
            )?
        }
    };
    let reference = apply_pseudocount(&reference, pseudocount)?;

    let qc = QcConfig {
        min_spot_count: data
            .min_spot_count
            .or(config.min_spot_count)
            .unwrap_or_else(|| QcConfig::default().min_spot_count),
    };
    let (expr, reference) = validate_inputs(&expr, &reference, &qc)?;
    Ok((expr, reference))
}

fn load_cell_labels(path: &Path, cell_ids: &[String]) -> Result<Vec<String>> {
    let text =
        std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut by_id = std::collections::HashMap::new();
    for (lineno, line) in text.lines().enumerate() {
        if lineno == 0 || line.trim().is_empty() {
            continue; // header
        }
        let fields: Vec<&str> = line.trim_end_matches('\r').split(',').collect();
        if fields.len() != 2 {
            bail!(
                "{}: line {}: expected 'cell_id,cell_type'",
                path.display(),
                lineno + 1
            );
        }
        by_id.insert(fields[0].trim().to_string(), fields[1].trim().to_string());
    }
    cell_ids
        .iter()
        .map(|id| {
            by_id
                .get(id)
                .cloned()
                .with_context(|| format!("cell '{id}' has no label in {}", path.display()))
        })
        .collect()
}

fn load_lines(path: &Path) -> Result<Vec<String>> {
    let text =
        std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(text
        .lines()
        .map(|l| l.trim().to_string())
        .filter(|l| !l.is_empty())
        .collect())
}

fn weight_config(flags: &WeightFlagArgs, config: &RunConfig) -> WeightConfig {
    let mut cfg = config.weights.unwrap_or_default();
    if let Some(v) = flags.k_star {
        cfg.k_star = v;
    }
    if let Some(v) = flags.k_dstar {
        cfg.k_dstar = v;
    }
    if let Some(v) = flags.prune_pct {
        cfg.prune_pct = v;
    }
    if let Some(v) = flags.floor_frac {
        cfg.floor_frac = v;
    }
    if let Some(v) = flags.adjacency_factor {
        cfg.adjacency_factor = v;
    }
    cfg
}

fn solver_config(config: &RunConfig) -> SolverConfig {
    config.solver.clone().unwrap_or_default()
}

/// Reuses a saved edge list when given, otherwise builds the graph.
fn obtain_graph(
    expr: &ExpressionMatrix,
    reference: &ReferenceMatrix,
    flags: &WeightFlagArgs,
    config: &RunConfig,
) -> Result<FusionGraph> {
    match flags
        .weights_file
        .clone()
        .or_else(|| config.weights_file.clone())
    {
        Some(path) => Ok(io::read_edge_list(&path, expr.n_spots())?),
        None => Ok(build_fusion_graph(expr, reference, &weight_config(flags, config))?),
    }
}

fn cmd_simulate(args: &SimulateArgs, seed_flag: Option<u64>, _config: &RunConfig) -> Result<()> {
    let mut spec = match &args.scenario {
        Some(p) => io::read_scenario(p)?,
        None => ScenarioSpec::default(),
    };
    if let Some(seed) = seed_flag {
        spec.seed = seed;
    }
    let reference = match &spec.reference {
        Some(path) => io::read_reference(path)?,
        None => sim::default_reference(),
    };
    let scenario = sim::SimulationScenario {
        grid_side: spec.grid_side,
        n_clusters: spec.n_clusters,
        smoothness: spec.smoothness,
        reference,
        seed: spec.seed,
        size_factor_max: spec.size_factor_max,
    };
    let (expr, truth) = sim::simulate(&scenario)?;

    std::fs::create_dir_all(&args.out)
        .with_context(|| format!("creating {}", args.out.display()))?;
    io::write_expression_dense(&expr, &args.out.join("expression.csv"))?;
    io::write_coords(&expr, &args.out.join("coords.csv"))?;
    io::write_reference(&scenario.reference, &args.out.join("reference.csv"))?;
    write_matrix(&args.out.join("truth_theta.csv"), truth.theta_star.theta())?;
    write_matrix(&args.out.join("truth_v.csv"), truth.v_star.theta())?;
    let s_text: String = truth
        .s_star
        .values()
        .iter()
        .map(|v| format!("{v}\n"))
        .collect();
    std::fs::write(args.out.join("truth_s.csv"), s_text)?;
    let l_text: String = truth
        .labels
        .labels()
        .iter()
        .map(|l| format!("{l}\n"))
        .collect();
    std::fs::write(args.out.join("truth_labels.csv"), l_text)?;
    println!(
        "simulated {} spots x {} genes into {}",
        expr.n_spots(),
        expr.n_genes(),
        args.out.display()
    );
    Ok(())
}

fn write_matrix(path: &Path, m: &ndarray::Array2<f64>) -> Result<()> {
    let mut out = String::new();
    for row in m.rows() {
        let cells: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    std::fs::write(path, out).with_context(|| format!("writing {}", path.display()))
}

fn cmd_weights(args: &WeightsArgs, config: &RunConfig) -> Result<()> {
    let (expr, reference) = load_inputs(&args.data, config)?;
    let graph = build_fusion_graph(&expr, &reference, &weight_config(&args.weights, config))?;
    io::write_edge_list(&graph, &args.out)?;
    println!(
        "wrote {} edges over {} spots to {}",
        graph.n_edges(),
        graph.n_spots(),
        args.out.display()
    );
    Ok(())
}

fn cmd_fit(args: &FitArgs, config: &RunConfig) -> Result<()> {
    let lambda = args
        .lambda
        .or(config.lambda)
        .context("--lambda is required (or 'lambda' in the config)")?;
    let (expr, reference) = load_inputs(&args.data, config)?;
    let graph = obtain_graph(&expr, &reference, &args.weights, config)?;
    let cfg = solver_config(config);
    let result = if args.approx {
        solver::fit_approx(&expr, &reference, &graph, lambda, &cfg)?
    } else {
        solver::fit(&expr, &reference, &graph, lambda, &cfg)?
    };
    io::write_fit(&result, &args.out)?;
    println!(
        "fit lambda={lambda}: {} clusters, objective {:.6}, {}",
        result.clusters.n_clusters(),
        result.objective(),
        if result.converged { "converged" } else { "not converged" }
    );
    Ok(())
}

fn cmd_tune(args: &TuneArgs, seed_flag: Option<u64>, config: &RunConfig) -> Result<()> {
    let method = match args.method.as_deref() {
        Some("thinning") => SelectionMethod::Thinning,
        Some("bic") => SelectionMethod::Bic,
        Some("fixed") => SelectionMethod::Fixed,
        Some(other) => bail!("unknown selection method '{other}' (use thinning, bic, or fixed)"),
        None => config.selection.unwrap_or(SelectionMethod::Bic),
    };
    let (expr, reference) = load_inputs(&args.data, config)?;
    let graph = obtain_graph(&expr, &reference, &args.weights, config)?;
    let cfg = solver_config(config);
    std::fs::create_dir_all(&args.out)
        .with_context(|| format!("creating {}", args.out.display()))?;

    if method == SelectionMethod::Fixed {
        let lambda = args
            .lambda
            .or(config.lambda)
            .context("--method fixed needs --lambda")?;
        let fit = solver::fit(&expr, &reference, &graph, lambda, &cfg)?;
        let rows = vec![selection_row(&fit, &expr, &reference, None)?];
        io::write_selection_report(&rows, &args.out.join("selection.csv"))?;
        io::write_fit(&fit, &args.out.join("best_fit"))?;
        println!("fixed lambda={lambda}: {} clusters", fit.clusters.n_clusters());
        return Ok(());
    }

    let grid = match config.lambda_grid()? {
        Some(g) => g,
        None => {
            let points = args.grid_points.or(config.grid_points).unwrap_or(20);
            solver::default_grid(&expr, &reference, &graph, &cfg, points)?
        }
    };

    let (best_lambda, rows) = match method {
        SelectionMethod::Thinning => {
            let epsilon = args.epsilon.or(config.epsilon).unwrap_or(0.5);
            let seed = seed_flag.or(config.seed).unwrap_or(0);
            let sel =
                select_lambda_thinning(&expr, &reference, &graph, &grid, &cfg, epsilon, seed)?;
            let mut rows = Vec::new();
            for (fit, &ll) in sel.path.iter().zip(&sel.test_loglik) {
                rows.push(selection_row(fit, &expr, &reference, Some(ll))?);
            }
            (sel.best_lambda, rows)
        }
        SelectionMethod::Bic => {
            let path = solver::fit_path(&expr, &reference, &graph, &grid, &cfg)?;
            let (best, _scores) = select_lambda_bic(&path, &expr, &reference)?;
            let mut rows = Vec::new();
            for fit in &path {
                rows.push(selection_row(fit, &expr, &reference, None)?);
            }
            (best, rows)
        }
        SelectionMethod::Fixed => unreachable!("handled above"),
    };

    io::write_selection_report(&rows, &args.out.join("selection.csv"))?;
    // Refit on the full data at the selected penalty.
    let best = solver::fit(&expr, &reference, &graph, best_lambda, &cfg)?;
    io::write_fit(&best, &args.out.join("best_fit"))?;
    println!(
        "selected lambda={best_lambda}: {} clusters over a {}-point grid",
        best.clusters.n_clusters(),
        grid.len()
    );
    Ok(())
}

fn selection_row(
    fit: &FitResult,
    expr: &ExpressionMatrix,
    reference: &ReferenceMatrix,
    test_loglik: Option<f64>,
) -> Result<SelectionRow> {
    let criterion = bic(fit, expr, reference)?;
    let x = expr.counts_f64();
    let b = reference.values().view();
    let mut train_nll = 0.0;
    for i in 0..expr.n_spots() {
        train_nll += duet_core::poisson::nll_spot(
            x.column(i),
            b,
            fit.theta_hat.theta().row(i),
            fit.s_hat.values()[i],
        )?;
    }
    Ok(SelectionRow {
        lambda: fit.lambda,
        n_clusters: fit.clusters.n_clusters(),
        train_nll,
        test_loglik,
        bic: Some(criterion),
    })
}

fn cmd_metrics(args: &MetricsArgs) -> Result<()> {
    let fit = io::read_fit(&args.fit)?;
    let truth_theta = read_matrix(&args.truth_theta)?;
    let truth_labels = read_labels(&args.truth_labels)?;
    let report = metrics::evaluate(
        fit.theta_hat.theta().view(),
        fit.clusters.labels(),
        truth_theta.view(),
        &truth_labels,
    )?;
    let row = io::MetricsRow {
        method: args.method.clone(),
        scenario: args.scenario.clone(),
        seed: args.record_seed,
        ari: report.ari,
        frob_sq: report.frob_sq_error,
        max_row: report.max_row_error,
    };
    io::write_metrics_report(&[row], &args.out)?;
    println!(
        "ari={:.4} frob_sq={:.4} max_row={:.4}",
        report.ari, report.frob_sq_error, report.max_row_error
    );
    Ok(())
}

fn read_matrix(path: &Path) -> Result<ndarray::Array2<f64>> {
    let text =
        std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let row: Vec<f64> = line
            .trim_end_matches('\r')
            .split(',')
            .map(|c| {
                c.trim()
                    .parse::<f64>()
                    .with_context(|| format!("{}: line {}", path.display(), lineno + 1))
            })
            .collect::<Result<_>>()?;
        rows.push(row);
    }
    if rows.is_empty() {
        bail!("{}: empty matrix", path.display());
    }
    let k = rows[0].len();
    if rows.iter().any(|r| r.len() != k) {
        bail!("{}: ragged rows", path.display());
    }
    let flat: Vec<f64> = rows.iter().flatten().cloned().collect();
    Ok(ndarray::Array2::from_shape_vec((rows.len(), k), flat)?)
}

fn read_labels(path: &Path) -> Result<Vec<usize>> {
    let text =
        std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(lineno, l)| {
            l.trim()
                .parse::<usize>()
                .with_context(|| format!("{}: line {}", path.display(), lineno + 1))
        })
        .collect()
}

fn cmd_render(args: &RenderArgs) -> Result<()> {
    let fit = io::read_fit(&args.fit)?;
    let text = std::fs::read_to_string(&args.coords)
        .with_context(|| format!("reading {}", args.coords.display()))?;
    let coord_rows = io::parse_coords(&text)?;
    let coords: Vec<(f64, f64)> = coord_rows.iter().map(|(_, x, y)| (*x, *y)).collect();
    render_map(&fit, &coords, &args.out)?;
    println!("rendered {} spots to {}", coords.len(), args.out.display());
    Ok(())
}
