//! Poisson negative log-likelihood with identity link, its gradient in the
//! composition, the closed-form size-factor update, and the spot-by-spot
//! deconvolution baseline.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rayon::prelude::*;

use crate::error::{DuetError, Result};
use crate::simplex::{pgd_minimize_simplex, PgdSettings};
use crate::types::{CompositionMatrix, ExpressionMatrix, ReferenceMatrix, SizeFactors};

/// Maximum alternations of the spotwise (composition, size factor) updates.
pub const SPOTWISE_MAX_ROUNDS: usize = 100;
/// Relative objective-change stopping rule for the spotwise alternation.
pub const SPOTWISE_TOL: f64 = 1e-8;

/// Per-spot loss bundle handed to the ADMM block update.
#[derive(Clone, Copy)]
pub struct SpotLoss<'a> {
    pub spot_index: usize,
    /// Counts for this spot (length G).
    pub x_col: ArrayView1<'a, f64>,
    /// Reference view (G x K), strictly positive.
    pub reference: ArrayView2<'a, f64>,
    /// Size factor, nonnegative.
    pub s: f64,
}

impl<'a> SpotLoss<'a> {
    pub fn nll(&self, theta: ArrayView1<f64>) -> Result<f64> {
        nll_spot(self.x_col, self.reference, theta, self.s)
    }

    pub fn grad(&self, theta: ArrayView1<f64>) -> Result<Array1<f64>> {
        grad_theta_nll(self.x_col, self.reference, theta, self.s)
    }
}

/// `sum_g { s * b_g' theta - x_g * log(s * b_g' theta) }`, dropping the
/// log-factorial constants. Zero counts contribute only the mean term, so
/// `0 * log 0 = 0` by convention.
pub fn nll_spot(
    x_col: ArrayView1<f64>,
    reference: ArrayView2<f64>,
    theta: ArrayView1<f64>,
    s: f64,
) -> Result<f64> {
    let bt = reference.dot(&theta);
    let mut total = 0.0;
    for (g, (&xg, &btg)) in x_col.iter().zip(bt.iter()).enumerate() {
        let mu = s * btg;
        if xg > 0.0 {
            if mu <= 0.0 {
                return Err(DuetError::domain(format!(
                    "nonpositive Poisson mean {mu} at gene {g} with count {xg}"
                )));
            }
            total += mu - xg * mu.ln();
        } else {
            total += mu;
        }
    }
    Ok(total)
}

/// Gradient of `nll_spot` in the composition:
/// `sum_g b_g * (s - x_g / (b_g' theta))`.
pub fn grad_theta_nll(
    x_col: ArrayView1<f64>,
    reference: ArrayView2<f64>,
    theta: ArrayView1<f64>,
    s: f64,
) -> Result<Array1<f64>> {
    let bt = reference.dot(&theta);
    let mut w = Array1::<f64>::zeros(x_col.len());
    for (g, (&xg, &btg)) in x_col.iter().zip(bt.iter()).enumerate() {
        if xg > 0.0 {
            if s * btg <= 0.0 {
                return Err(DuetError::domain(format!(
                    "nonpositive Poisson mean at gene {g} with count {xg}"
                )));
            }
            w[g] = s - xg / btg;
        } else {
            w[g] = s;
        }
    }
    Ok(reference.t().dot(&w))
}

/// Closed-form size-factor update `sum_g x_g / sum_g b_g' theta`, the
/// zero of the likelihood's partial derivative in the size factor.
pub fn update_size_factor(
    x_col: ArrayView1<f64>,
    reference: ArrayView2<f64>,
    theta: ArrayView1<f64>,
) -> Result<f64> {
    let denom = reference.dot(&theta).sum();
    if denom <= 0.0 || !denom.is_finite() {
        return Err(DuetError::domain(format!(
            "size-factor denominator {denom} is not positive"
        )));
    }
    Ok(x_col.sum() / denom)
}

/// Spot-by-spot maximum-likelihood deconvolution: for each spot
/// independently, alternate the closed-form size-factor update with a
/// projected-gradient composition update until the objective stabilizes.
///
/// Spots are independent subproblems; the computation parallelizes across
/// them and the result does not depend on scheduling.
pub fn spotwise_deconvolve(
    expr: &ExpressionMatrix,
    reference: &ReferenceMatrix,
) -> Result<(CompositionMatrix, SizeFactors)> {
    check_aligned(expr, reference)?;
    let x = expr.counts_f64();
    let b = reference.values().view();
    let k = reference.n_celltypes();
    let pgd = PgdSettings::default();

    let per_spot: Vec<Result<(Array1<f64>, f64)>> = (0..expr.n_spots())
        .into_par_iter()
        .map(|i| fit_single_spot(x.column(i), b, k, &pgd))
        .collect();

    let mut theta = Array2::<f64>::zeros((expr.n_spots(), k));
    let mut s = Array1::<f64>::zeros(expr.n_spots());
    for (i, res) in per_spot.into_iter().enumerate() {
        let (ti, si) = res?;
        theta.row_mut(i).assign(&ti);
        s[i] = si;
    }
    Ok((CompositionMatrix::new(theta)?, SizeFactors::new(s)?))
}

fn fit_single_spot(
    x_col: ArrayView1<f64>,
    b: ArrayView2<f64>,
    k: usize,
    pgd: &PgdSettings,
) -> Result<(Array1<f64>, f64)> {
    let mut theta = Array1::from_elem(k, 1.0 / k as f64);
    let mut s = update_size_factor(x_col, b, theta.view())?;
    if s == 0.0 {
        // All-zero spot: the likelihood is flat, keep the uniform start.
        return Ok((theta, 0.0));
    }
    let mut obj = nll_spot(x_col, b, theta.view(), s)?;
    for _ in 0..SPOTWISE_MAX_ROUNDS {
        let s_now = s;
        let out = pgd_minimize_simplex(
            |t| nll_spot(x_col, b, t, s_now).unwrap_or(f64::INFINITY),
            |t| {
                grad_theta_nll(x_col, b, t, s_now)
                    .expect("positive reference keeps the mean positive on the simplex")
            },
            theta.view(),
            pgd,
        )?;
        theta = out.x;
        s = update_size_factor(x_col, b, theta.view())?;
        let new_obj = nll_spot(x_col, b, theta.view(), s)?;
        let rel = (obj - new_obj).abs() / obj.abs().max(1.0);
        obj = new_obj;
        if rel < SPOTWISE_TOL {
            break;
        }
    }
    Ok((theta, s))
}

pub(crate) fn check_aligned(expr: &ExpressionMatrix, reference: &ReferenceMatrix) -> Result<()> {
    if expr.n_genes() != reference.n_genes() {
        return Err(DuetError::invalid(format!(
            "expression has {} genes but reference has {}; run validate_inputs first",
            expr.n_genes(),
            reference.n_genes()
        )));
    }
    if expr.gene_ids() != reference.gene_ids() {
        return Err(DuetError::invalid(
            "expression and reference gene ids differ; run validate_inputs first",
        ));
    }
    if !reference.is_strictly_positive() {
        return Err(DuetError::invalid(
            "reference has nonpositive entries; run apply_pseudocount first",
        ));
    }
    Ok(())
}

/// Total negative log-likelihood over all spots at the given fit.
pub fn total_nll(
    x: &Array2<f64>,
    b: ArrayView2<f64>,
    theta: &Array2<f64>,
    s: &Array1<f64>,
) -> Result<f64> {
    let mut total = 0.0;
    for (i, col) in x.axis_iter(Axis(1)).enumerate() {
        total += nll_spot(col, b, theta.row(i), s[i])?;
    }
    Ok(total)
}
