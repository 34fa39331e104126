//! Shared domain types: expression counts, reference profiles, compositions,
//! size factors, cluster assignments, and fit results.
//!
//! All types validate their invariants at construction and are immutable
//! afterwards, so they are safe to share across threads.

use ndarray::{Array1, Array2};
use crate::error::{DuetError, Result};

/// Row sums of a composition matrix must be within this of 1.
pub const SIMPLEX_SUM_TOL: f64 = 1e-9;

/// Spot-level UMI counts (genes x spots) with spatial coordinates.
#[derive(Clone, Debug, PartialEq)]
pub struct ExpressionMatrix {
    counts: Array2<u64>,
    gene_ids: Vec<String>,
    spot_ids: Vec<String>,
    coords: Vec<(f64, f64)>,
}

impl ExpressionMatrix {
    pub fn new(
        counts: Array2<u64>,
        gene_ids: Vec<String>,
        spot_ids: Vec<String>,
        coords: Vec<(f64, f64)>,
    ) -> Result<Self> {
        let (g, n) = counts.dim();
        if g == 0 || n == 0 {
            return Err(DuetError::invalid("expression matrix must have at least one gene and one spot"));
        }
        if gene_ids.len() != g {
            return Err(DuetError::invalid(format!(
                "{} gene ids for {} count rows",
                gene_ids.len(),
                g
            )));
        }
        if spot_ids.len() != n || coords.len() != n {
            return Err(DuetError::invalid(format!(
                "{} spot ids / {} coordinates for {} count columns",
                spot_ids.len(),
                coords.len(),
                n
            )));
        }
        if coords.iter().any(|&(x, y)| !x.is_finite() || !y.is_finite()) {
            return Err(DuetError::invalid("spot coordinates must be finite"));
        }
        // Duplicate coordinate check via sort; O(n log n).
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| {
            coords[a]
                .partial_cmp(&coords[b])
                .expect("finite coords are comparable")
        });
        for w in order.windows(2) {
            if coords[w[0]] == coords[w[1]] {
                return Err(DuetError::invalid(format!(
                    "spots {} and {} share coordinates ({}, {})",
                    spot_ids[w[0]], spot_ids[w[1]], coords[w[0]].0, coords[w[0]].1
                )));
            }
        }
        Ok(ExpressionMatrix { counts, gene_ids, spot_ids, coords })
    }

    pub fn n_genes(&self) -> usize {
        self.counts.nrows()
    }

    pub fn n_spots(&self) -> usize {
        self.counts.ncols()
    }

    pub fn counts(&self) -> &Array2<u64> {
        &self.counts
    }

    /// Counts converted to floating point, for the likelihood routines.
    pub fn counts_f64(&self) -> Array2<f64> {
        self.counts.mapv(|c| c as f64)
    }

    pub fn gene_ids(&self) -> &[String] {
        &self.gene_ids
    }

    pub fn spot_ids(&self) -> &[String] {
        &self.spot_ids
    }

    pub fn coords(&self) -> &[(f64, f64)] {
        &self.coords
    }

    /// Total count per spot (column sums).
    pub fn spot_totals(&self) -> Vec<u64> {
        (0..self.n_spots())
            .map(|i| self.counts.column(i).sum())
            .collect()
    }
}

/// Mean per-cell expression for each cell type (genes x types).
#[derive(Clone, Debug, PartialEq)]
pub struct ReferenceMatrix {
    values: Array2<f64>,
    gene_ids: Vec<String>,
    celltype_ids: Vec<String>,
}

impl ReferenceMatrix {
    pub fn new(values: Array2<f64>, gene_ids: Vec<String>, celltype_ids: Vec<String>) -> Result<Self> {
        let (g, k) = values.dim();
        if g == 0 || k == 0 {
            return Err(DuetError::invalid("reference matrix must have at least one gene and one cell type"));
        }
        if gene_ids.len() != g || celltype_ids.len() != k {
            return Err(DuetError::invalid(format!(
                "{} gene ids / {} cell type ids for a {}x{} reference",
                gene_ids.len(),
                celltype_ids.len(),
                g,
                k
            )));
        }
        if values.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(DuetError::invalid("reference entries must be finite and nonnegative"));
        }
        Ok(ReferenceMatrix { values, gene_ids, celltype_ids })
    }

    pub fn n_genes(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_celltypes(&self) -> usize {
        self.values.ncols()
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn gene_ids(&self) -> &[String] {
        &self.gene_ids
    }

    pub fn celltype_ids(&self) -> &[String] {
        &self.celltype_ids
    }

    /// True when every entry is strictly positive, as the Poisson
    /// identity-link model requires (see `apply_pseudocount`).
    pub fn is_strictly_positive(&self) -> bool {
        self.values.iter().all(|v| *v > 0.0)
    }
}

/// Cell-type proportions per spot; every row lies on the unit simplex.
#[derive(Clone, Debug, PartialEq)]
pub struct CompositionMatrix {
    theta: Array2<f64>,
}

impl CompositionMatrix {
    pub fn new(theta: Array2<f64>) -> Result<Self> {
        let (n, k) = theta.dim();
        if n == 0 || k == 0 {
            return Err(DuetError::invalid("composition matrix must be nonempty"));
        }
        for (i, row) in theta.rows().into_iter().enumerate() {
            if row.iter().any(|v| !v.is_finite() || *v < 0.0) {
                return Err(DuetError::invalid(format!(
                    "composition row {i} has a negative or non-finite entry"
                )));
            }
            let sum: f64 = row.sum();
            if (sum - 1.0).abs() > SIMPLEX_SUM_TOL {
                return Err(DuetError::invalid(format!(
                    "composition row {i} sums to {sum}, not 1"
                )));
            }
        }
        Ok(CompositionMatrix { theta })
    }

    /// Uniform composition 1/K for every spot.
    pub fn uniform(n_spots: usize, n_celltypes: usize) -> Result<Self> {
        if n_spots == 0 || n_celltypes == 0 {
            return Err(DuetError::invalid("composition matrix must be nonempty"));
        }
        let theta = Array2::from_elem((n_spots, n_celltypes), 1.0 / n_celltypes as f64);
        Ok(CompositionMatrix { theta })
    }

    pub fn n_spots(&self) -> usize {
        self.theta.nrows()
    }

    pub fn n_celltypes(&self) -> usize {
        self.theta.ncols()
    }

    pub fn theta(&self) -> &Array2<f64> {
        &self.theta
    }

    pub fn into_inner(self) -> Array2<f64> {
        self.theta
    }
}

/// Per-spot scale factors, interpretable as approximate cells per spot.
#[derive(Clone, Debug, PartialEq)]
pub struct SizeFactors {
    values: Array1<f64>,
}

impl SizeFactors {
    pub fn new(values: Array1<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(DuetError::invalid("size factors must be nonempty"));
        }
        if values.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(DuetError::invalid("size factors must be finite and nonnegative"));
        }
        Ok(SizeFactors { values })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &Array1<f64> {
        &self.values
    }
}

/// Hard cluster labels (1-based) plus per-cluster simplex centroids.
#[derive(Clone, Debug, PartialEq)]
pub struct ClusterAssignment {
    labels: Vec<usize>,
    centroids: Array2<f64>,
}

impl ClusterAssignment {
    pub fn new(labels: Vec<usize>, centroids: Array2<f64>) -> Result<Self> {
        if labels.is_empty() {
            return Err(DuetError::invalid("cluster labels must be nonempty"));
        }
        let c = centroids.nrows();
        if c == 0 {
            return Err(DuetError::invalid("at least one cluster centroid required"));
        }
        let mut seen = vec![false; c];
        for (i, &l) in labels.iter().enumerate() {
            if l == 0 || l > c {
                return Err(DuetError::invalid(format!(
                    "label {l} of spot {i} outside 1..={c}"
                )));
            }
            seen[l - 1] = true;
        }
        if let Some(missing) = seen.iter().position(|s| !s) {
            return Err(DuetError::invalid(format!("cluster {} is empty", missing + 1)));
        }
        // Centroid rows must be on the simplex.
        let _ = CompositionMatrix::new(centroids.clone())?;
        Ok(ClusterAssignment { labels, centroids })
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn n_clusters(&self) -> usize {
        self.centroids.nrows()
    }

    pub fn centroids(&self) -> &Array2<f64> {
        &self.centroids
    }
}

/// Outer iterations may raise the objective by at most this before the
/// trace is considered non-monotone.
pub const OBJECTIVE_MONOTONE_TOL: f64 = 1e-8;

/// Output of a single penalized fit.
#[derive(Clone, Debug)]
pub struct FitResult {
    pub theta_hat: CompositionMatrix,
    pub s_hat: SizeFactors,
    pub clusters: ClusterAssignment,
    pub lambda: f64,
    /// Penalized objective after initialization and after each outer iteration.
    pub objective_trace: Vec<f64>,
    /// Outer coordinate-descent stopping rule was met.
    pub converged: bool,
    /// Every inner ADMM solve met its residual tolerances.
    pub admm_converged: bool,
    pub iterations: usize,
}

impl FitResult {
    /// Final penalized objective value.
    pub fn objective(&self) -> f64 {
        *self
            .objective_trace
            .last()
            .expect("fit results always trace at least the initial objective")
    }

    /// Checks the trace invariant: finite, nonincreasing up to tolerance.
    pub fn trace_is_monotone(&self) -> bool {
        if self.objective_trace.iter().any(|v| !v.is_finite()) {
            return false;
        }
        self.objective_trace
            .windows(2)
            .all(|w| w[1] <= w[0] + OBJECTIVE_MONOTONE_TOL)
    }
}
