//! Input QC and alignment: gene-set intersection, zero-gene and low-count
//! spot removal, and pseudocount substitution for the reference.

use std::collections::HashMap;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{DuetError, Result};
use crate::types::{ExpressionMatrix, ReferenceMatrix};

/// QC thresholds applied at ingestion.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct QcConfig {
    /// Spots with fewer total transcripts than this are removed.
    pub min_spot_count: u64,
}

impl Default for QcConfig {
    fn default() -> Self {
        QcConfig { min_spot_count: 100 }
    }
}

/// Default pseudocount substituted for zero reference entries.
pub const DEFAULT_PSEUDOCOUNT: f64 = 1e-4;

/// Intersects and aligns the gene sets of an expression matrix and a
/// reference, then applies QC: genes with all-zero counts are dropped, as
/// are spots whose total count is zero or below `qc.min_spot_count`.
///
/// Gene and spot filtering alternate to a fixed point, so the operation is
/// idempotent. Gene order follows the expression matrix.
pub fn validate_inputs(
    expr: &ExpressionMatrix,
    reference: &ReferenceMatrix,
    qc: &QcConfig,
) -> Result<(ExpressionMatrix, ReferenceMatrix)> {
    let ref_index: HashMap<&str, usize> = reference
        .gene_ids()
        .iter()
        .enumerate()
        .map(|(idx, g)| (g.as_str(), idx))
        .collect();

    // Genes present in both inputs, in expression order.
    let mut genes: Vec<(usize, usize)> = expr
        .gene_ids()
        .iter()
        .enumerate()
        .filter_map(|(ei, g)| ref_index.get(g.as_str()).map(|&ri| (ei, ri)))
        .collect();
    if genes.is_empty() {
        return Err(DuetError::invalid(
            "expression and reference share no gene ids",
        ));
    }

    let counts = expr.counts();
    let mut spots: Vec<usize> = (0..expr.n_spots()).collect();

    // Alternate the two QC rules until stable; each pass can only shrink.
    loop {
        let before = (genes.len(), spots.len());
        genes.retain(|&(ei, _)| spots.iter().any(|&s| counts[[ei, s]] > 0));
        if genes.is_empty() {
            return Err(DuetError::invalid(
                "no genes with nonzero counts survive QC",
            ));
        }
        spots.retain(|&s| {
            let total: u64 = genes.iter().map(|&(ei, _)| counts[[ei, s]]).sum();
            total > 0 && total >= qc.min_spot_count
        });
        if spots.is_empty() {
            return Err(DuetError::invalid(format!(
                "no spots with at least {} total counts survive QC",
                qc.min_spot_count
            )));
        }
        if (genes.len(), spots.len()) == before {
            break;
        }
    }

    let sub_counts = Array2::from_shape_fn((genes.len(), spots.len()), |(gi, si)| {
        counts[[genes[gi].0, spots[si]]]
    });
    let gene_ids: Vec<String> = genes
        .iter()
        .map(|&(ei, _)| expr.gene_ids()[ei].clone())
        .collect();
    let spot_ids: Vec<String> = spots.iter().map(|&s| expr.spot_ids()[s].clone()).collect();
    let coords: Vec<(f64, f64)> = spots.iter().map(|&s| expr.coords()[s]).collect();
    let aligned_expr = ExpressionMatrix::new(sub_counts, gene_ids.clone(), spot_ids, coords)?;

    let ref_values = Array2::from_shape_fn((genes.len(), reference.n_celltypes()), |(gi, ki)| {
        reference.values()[[genes[gi].1, ki]]
    });
    let aligned_ref =
        ReferenceMatrix::new(ref_values, gene_ids, reference.celltype_ids().to_vec())?;

    Ok((aligned_expr, aligned_ref))
}

/// Replaces every zero entry of the reference with `eps`, leaving positive
/// entries untouched. The Poisson identity-link model needs strictly
/// positive reference entries.
pub fn apply_pseudocount(reference: &ReferenceMatrix, eps: f64) -> Result<ReferenceMatrix> {
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(DuetError::invalid(format!(
            "pseudocount must be positive, got {eps}"
        )));
    }
    let values = reference.values().mapv(|v| if v == 0.0 { eps } else { v });
    ReferenceMatrix::new(
        values,
        reference.gene_ids().to_vec(),
        reference.celltype_ids().to_vec(),
    )
}
