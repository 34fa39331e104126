//! File formats: dense and sparse-triplet count matrices, coordinate and
//! edge-list CSVs, reference construction, fit directories, selection
//! reports, and the JSON config surfaces.
//!
//! Every text format has a `parse_*` function that works on in-memory
//! strings (these are the fuzzing entry points) and a `read_*` wrapper that
//! adds file access and path context.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::error::{DuetError, Result};
use crate::solver::{LambdaGrid, SolverConfig};
use crate::types::{
    ClusterAssignment, CompositionMatrix, ExpressionMatrix, FitResult, ReferenceMatrix,
    SizeFactors,
};
use crate::validate::apply_pseudocount;
use crate::weights::{FusionGraph, GraphEdge, WeightConfig};

fn read_to_string(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| DuetError::io(path, e))
}

fn write_string(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|e| DuetError::io(path, e))
}

fn split_line(line: &str) -> Vec<&str> {
    line.trim_end_matches('\r').split(',').collect()
}

// ---------------------------------------------------------------------------
// Dense matrices (counts and reals) share one grid parser.

fn parse_dense<T, F>(text: &str, parse_cell: F) -> Result<(Vec<String>, Vec<String>, Array2<T>)>
where
    T: Clone + Default,
    F: Fn(&str) -> std::result::Result<T, String>,
{
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, header) = lines
        .next()
        .ok_or_else(|| DuetError::parse(1, "empty file".to_string()))?;
    let fields = split_line(header);
    if fields.len() < 2 {
        return Err(DuetError::parse(1, "header needs an id column plus at least one data column"));
    }
    let col_ids: Vec<String> = fields[1..].iter().map(|s| s.trim().to_string()).collect();
    if col_ids.iter().any(|c| c.is_empty()) {
        return Err(DuetError::parse(1, "empty column id in header"));
    }
    let n = col_ids.len();

    let mut row_ids = Vec::new();
    let mut values: Vec<T> = Vec::new();
    for (lineno, line) in lines {
        let fields = split_line(line);
        if fields.len() != n + 1 {
            return Err(DuetError::parse(
                lineno + 1,
                format!("expected {} fields, found {}", n + 1, fields.len()),
            ));
        }
        let row_id = fields[0].trim();
        if row_id.is_empty() {
            return Err(DuetError::parse(lineno + 1, "empty row id"));
        }
        row_ids.push(row_id.to_string());
        for (col, cell) in fields[1..].iter().enumerate() {
            let v = parse_cell(cell.trim()).map_err(|msg| {
                DuetError::parse(
                    lineno + 1,
                    format!("column {} ({}): {msg}", col + 2, col_ids[col]),
                )
            })?;
            values.push(v);
        }
    }
    if row_ids.is_empty() {
        return Err(DuetError::parse(2, "no data rows"));
    }
    let matrix = Array2::from_shape_vec((row_ids.len(), n), values)
        .expect("row-major fill matches the declared shape");
    Ok((row_ids, col_ids, matrix))
}

fn parse_count_cell(cell: &str) -> std::result::Result<u64, String> {
    cell.parse::<u64>()
        .map_err(|_| format!("'{cell}' is not a nonnegative integer count"))
}

fn parse_real_cell(cell: &str) -> std::result::Result<f64, String> {
    let v: f64 = cell
        .parse()
        .map_err(|_| format!("'{cell}' is not a real number"))?;
    if !v.is_finite() {
        return Err(format!("'{cell}' is not finite"));
    }
    Ok(v)
}

/// Dense counts: header `gene_id,<spot ids...>`, one row per gene with
/// nonnegative integer counts.
pub fn parse_dense_counts(text: &str) -> Result<(Vec<String>, Vec<String>, Array2<u64>)> {
    parse_dense(text, parse_count_cell)
}

/// Sparse triplet counts: header `%%triplet G n nnz`, then `gene,spot,count`
/// lines with 0-based indices. Ids are synthesized as `g<i>` and `s<j>`.
pub fn parse_triplet_counts(text: &str) -> Result<(Vec<String>, Vec<String>, Array2<u64>)> {
    let mut lines = text.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or_else(|| DuetError::parse(1, "empty file"))?;
    let parts: Vec<&str> = header.trim_end_matches('\r').split_whitespace().collect();
    if parts.len() != 4 || parts[0] != "%%triplet" {
        return Err(DuetError::parse(1, "expected header '%%triplet G n nnz'"));
    }
    let g: usize = parts[1]
        .parse()
        .map_err(|_| DuetError::parse(1, "G is not an integer"))?;
    let n: usize = parts[2]
        .parse()
        .map_err(|_| DuetError::parse(1, "n is not an integer"))?;
    let nnz: usize = parts[3]
        .parse()
        .map_err(|_| DuetError::parse(1, "nnz is not an integer"))?;
    if g == 0 || n == 0 {
        return Err(DuetError::parse(1, "G and n must be positive"));
    }
    if g.checked_mul(n).is_none() || g * n > 100_000_000 {
        return Err(DuetError::parse(1, format!("matrix {g}x{n} is implausibly large")));
    }

    let mut counts = Array2::<u64>::zeros((g, n));
    let mut seen = 0usize;
    for (lineno, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let fields = split_line(line);
        if fields.len() != 3 {
            return Err(DuetError::parse(
                lineno + 1,
                format!("expected 'gene,spot,count', found {} fields", fields.len()),
            ));
        }
        let gi: usize = fields[0]
            .trim()
            .parse()
            .map_err(|_| DuetError::parse(lineno + 1, "gene index is not an integer"))?;
        let si: usize = fields[1]
            .trim()
            .parse()
            .map_err(|_| DuetError::parse(lineno + 1, "spot index is not an integer"))?;
        let c: u64 = fields[2].trim().parse().map_err(|_| {
            DuetError::parse(lineno + 1, format!("'{}' is not a nonnegative integer count", fields[2]))
        })?;
        if gi >= g || si >= n {
            return Err(DuetError::parse(
                lineno + 1,
                format!("index ({gi}, {si}) outside {g}x{n}"),
            ));
        }
        counts[[gi, si]] += c;
        seen += 1;
    }
    if seen != nnz {
        return Err(DuetError::parse(
            1,
            format!("header promised {nnz} entries, file has {seen}"),
        ));
    }
    let gene_ids = (0..g).map(|i| format!("g{i}")).collect();
    let spot_ids = (0..n).map(|i| format!("s{i}")).collect();
    Ok((gene_ids, spot_ids, counts))
}

/// Coordinates: header `spot_id,x,y`, one row per spot.
pub fn parse_coords(text: &str) -> Result<Vec<(String, f64, f64)>> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, header) = lines
        .next()
        .ok_or_else(|| DuetError::parse(1, "empty file"))?;
    let fields = split_line(header);
    if fields.len() != 3 {
        return Err(DuetError::parse(1, "expected header 'spot_id,x,y'"));
    }
    let mut out = Vec::new();
    for (lineno, line) in lines {
        let fields = split_line(line);
        if fields.len() != 3 {
            return Err(DuetError::parse(
                lineno + 1,
                format!("expected 3 fields, found {}", fields.len()),
            ));
        }
        let id = fields[0].trim();
        if id.is_empty() {
            return Err(DuetError::parse(lineno + 1, "empty spot id"));
        }
        let x = parse_real_cell(fields[1].trim())
            .map_err(|m| DuetError::parse(lineno + 1, m))?;
        let y = parse_real_cell(fields[2].trim())
            .map_err(|m| DuetError::parse(lineno + 1, m))?;
        out.push((id.to_string(), x, y));
    }
    if out.is_empty() {
        return Err(DuetError::parse(2, "no coordinate rows"));
    }
    Ok(out)
}

/// Edge list: `i,j,gamma` per line, 0-based, no header.
pub fn parse_edge_list(text: &str) -> Result<Vec<(usize, usize, f64)>> {
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields = split_line(line);
        if fields.len() != 3 {
            return Err(DuetError::parse(
                lineno + 1,
                format!("expected 'i,j,gamma', found {} fields", fields.len()),
            ));
        }
        let i: usize = fields[0]
            .trim()
            .parse()
            .map_err(|_| DuetError::parse(lineno + 1, "i is not an integer"))?;
        let j: usize = fields[1]
            .trim()
            .parse()
            .map_err(|_| DuetError::parse(lineno + 1, "j is not an integer"))?;
        let w = parse_real_cell(fields[2].trim())
            .map_err(|m| DuetError::parse(lineno + 1, m))?;
        out.push((i, j, w));
    }
    if out.is_empty() {
        return Err(DuetError::parse(1, "no edges"));
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// File-level readers and writers.

/// Reads counts (dense or triplet, auto-detected) and joins the companion
/// coordinates by spot id.
pub fn read_expression(counts_path: &Path, coords_path: &Path) -> Result<ExpressionMatrix> {
    let text = read_to_string(counts_path)?;
    let (gene_ids, spot_ids, counts) = if text.starts_with("%%triplet") {
        parse_triplet_counts(&text)?
    } else {
        parse_dense_counts(&text)?
    };
    let coord_rows = parse_coords(&read_to_string(coords_path)?)?;
    let lookup: HashMap<&str, (f64, f64)> = coord_rows
        .iter()
        .map(|(id, x, y)| (id.as_str(), (*x, *y)))
        .collect();
    let coords: Vec<(f64, f64)> = spot_ids
        .iter()
        .map(|id| {
            lookup.get(id.as_str()).copied().ok_or_else(|| {
                DuetError::invalid(format!("spot '{id}' has counts but no coordinates"))
            })
        })
        .collect::<Result<_>>()?;
    ExpressionMatrix::new(counts, gene_ids, spot_ids, coords)
}

pub fn write_expression_dense(expr: &ExpressionMatrix, path: &Path) -> Result<()> {
    let mut out = String::from("gene_id");
    for id in expr.spot_ids() {
        out.push(',');
        out.push_str(id);
    }
    out.push('\n');
    for (gi, gene) in expr.gene_ids().iter().enumerate() {
        out.push_str(gene);
        for i in 0..expr.n_spots() {
            out.push(',');
            out.push_str(&expr.counts()[[gi, i]].to_string());
        }
        out.push('\n');
    }
    write_string(path, &out)
}

pub fn write_coords(expr: &ExpressionMatrix, path: &Path) -> Result<()> {
    let mut out = String::from("spot_id,x,y\n");
    for (id, &(x, y)) in expr.spot_ids().iter().zip(expr.coords()) {
        out.push_str(&format!("{id},{x},{y}\n"));
    }
    write_string(path, &out)
}

/// Reference CSV: header `gene_id,<cell type ids...>`, nonnegative reals.
pub fn read_reference(path: &Path) -> Result<ReferenceMatrix> {
    let (gene_ids, celltype_ids, values) = parse_dense(&read_to_string(path)?, |cell| {
        let v = parse_real_cell(cell)?;
        if v < 0.0 {
            return Err(format!("reference entry {v} is negative"));
        }
        Ok(v)
    })?;
    ReferenceMatrix::new(values, gene_ids, celltype_ids)
}

pub fn write_reference(reference: &ReferenceMatrix, path: &Path) -> Result<()> {
    let mut out = String::from("gene_id");
    for id in reference.celltype_ids() {
        out.push(',');
        out.push_str(id);
    }
    out.push('\n');
    for (gi, gene) in reference.gene_ids().iter().enumerate() {
        out.push_str(gene);
        for k in 0..reference.n_celltypes() {
            out.push(',');
            out.push_str(&reference.values()[[gi, k]].to_string());
        }
        out.push('\n');
    }
    write_string(path, &out)
}

/// Per-type mean of raw single-cell counts, optionally restricted to marker
/// genes, with zeros replaced by the pseudocount. Cell types appear in
/// first-occurrence order of the labels.
pub fn build_reference(
    gene_ids: &[String],
    sc_counts: &Array2<f64>,
    cell_labels: &[String],
    marker_genes: Option<&[String]>,
    pseudocount: f64,
) -> Result<ReferenceMatrix> {
    let (g, m) = sc_counts.dim();
    if gene_ids.len() != g {
        return Err(DuetError::invalid("gene id count does not match the matrix"));
    }
    if cell_labels.len() != m {
        return Err(DuetError::invalid(format!(
            "{} cell labels for {} cells",
            cell_labels.len(),
            m
        )));
    }
    let mut types: Vec<String> = Vec::new();
    for l in cell_labels {
        if !types.contains(l) {
            types.push(l.clone());
        }
    }
    let keep: Vec<usize> = match marker_genes {
        Some(markers) => {
            let wanted: Vec<&str> = markers.iter().map(|s| s.as_str()).collect();
            let keep: Vec<usize> = (0..g)
                .filter(|&gi| wanted.contains(&gene_ids[gi].as_str()))
                .collect();
            if keep.is_empty() {
                return Err(DuetError::invalid(
                    "no marker genes present in the single-cell matrix",
                ));
            }
            keep
        }
        None => (0..g).collect(),
    };

    let mut values = Array2::<f64>::zeros((keep.len(), types.len()));
    for (ti, ty) in types.iter().enumerate() {
        let members: Vec<usize> = (0..m).filter(|&ci| &cell_labels[ci] == ty).collect();
        for (row, &gi) in keep.iter().enumerate() {
            let mean =
                members.iter().map(|&ci| sc_counts[[gi, ci]]).sum::<f64>() / members.len() as f64;
            values[[row, ti]] = mean;
        }
    }
    let kept_ids: Vec<String> = keep.iter().map(|&gi| gene_ids[gi].clone()).collect();
    let raw = ReferenceMatrix::new(values, kept_ids, types)?;
    apply_pseudocount(&raw, pseudocount)
}

pub fn write_edge_list(graph: &FusionGraph, path: &Path) -> Result<()> {
    let mut out = String::new();
    for e in graph.edges() {
        out.push_str(&format!("{},{},{}\n", e.i, e.j, e.weight));
    }
    write_string(path, &out)
}

/// Reads an edge list over `n` spots, validating indices, weights, and
/// connectivity via the graph constructor.
pub fn read_edge_list(path: &Path, n: usize) -> Result<FusionGraph> {
    let rows = parse_edge_list(&read_to_string(path)?)?;
    let edges = rows
        .into_iter()
        .map(|(i, j, weight)| GraphEdge { i, j, weight })
        .collect();
    FusionGraph::new(n, edges)
}

// ---------------------------------------------------------------------------
// Fit directories.

#[derive(Serialize, Deserialize)]
struct FitMeta {
    lambda: f64,
    iterations: usize,
    converged: bool,
    admm_converged: bool,
    objective_trace: Vec<f64>,
}

fn matrix_csv(m: &Array2<f64>) -> String {
    let mut out = String::new();
    for row in m.rows() {
        let cells: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    out
}

fn parse_matrix_csv(text: &str) -> Result<Array2<f64>> {
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let row: Vec<f64> = split_line(line)
            .iter()
            .map(|c| parse_real_cell(c.trim()).map_err(|m| DuetError::parse(lineno + 1, m)))
            .collect::<Result<_>>()?;
        if let Some(first) = rows.first() {
            if first.len() != row.len() {
                return Err(DuetError::parse(lineno + 1, "ragged rows"));
            }
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(DuetError::parse(1, "empty matrix"));
    }
    let k = rows[0].len();
    let flat: Vec<f64> = rows.iter().flatten().cloned().collect();
    Ok(Array2::from_shape_vec((rows.len(), k), flat).expect("checked rectangular"))
}

/// Writes `theta.csv`, `s.csv`, `labels.csv`, `centroids.csv`, and
/// `meta.json` into `dir`, creating it if needed. Numbers use the shortest
/// representation that round-trips exactly.
pub fn write_fit(result: &FitResult, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| DuetError::io(dir, e))?;
    write_string(&dir.join("theta.csv"), &matrix_csv(result.theta_hat.theta()))?;
    let s_text: String = result
        .s_hat
        .values()
        .iter()
        .map(|v| format!("{v}\n"))
        .collect();
    write_string(&dir.join("s.csv"), &s_text)?;
    let label_text: String = result
        .clusters
        .labels()
        .iter()
        .map(|l| format!("{l}\n"))
        .collect();
    write_string(&dir.join("labels.csv"), &label_text)?;
    write_string(&dir.join("centroids.csv"), &matrix_csv(result.clusters.centroids()))?;
    let meta = FitMeta {
        lambda: result.lambda,
        iterations: result.iterations,
        converged: result.converged,
        admm_converged: result.admm_converged,
        objective_trace: result.objective_trace.clone(),
    };
    let meta_json = serde_json::to_string_pretty(&meta)
        .expect("fit metadata serializes");
    write_string(&dir.join("meta.json"), &meta_json)
}

pub fn read_fit(dir: &Path) -> Result<FitResult> {
    let theta = parse_matrix_csv(&read_to_string(&dir.join("theta.csv"))?)?;
    let centroids = parse_matrix_csv(&read_to_string(&dir.join("centroids.csv"))?)?;
    let s_text = read_to_string(&dir.join("s.csv"))?;
    let s: Vec<f64> = s_text
        .lines()
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(lineno, l)| parse_real_cell(l.trim()).map_err(|m| DuetError::parse(lineno + 1, m)))
        .collect::<Result<_>>()?;
    let labels_text = read_to_string(&dir.join("labels.csv"))?;
    let labels: Vec<usize> = labels_text
        .lines()
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(lineno, l)| {
            l.trim()
                .parse::<usize>()
                .map_err(|_| DuetError::parse(lineno + 1, "label is not an integer"))
        })
        .collect::<Result<_>>()?;
    let meta_path = dir.join("meta.json");
    let meta: FitMeta = serde_json::from_str(&read_to_string(&meta_path)?)
        .map_err(|e| DuetError::parse(e.line(), format!("{}: {e}", meta_path.display())))?;
    Ok(FitResult {
        theta_hat: CompositionMatrix::new(theta)?,
        s_hat: SizeFactors::new(Array1::from(s))?,
        clusters: ClusterAssignment::new(labels, centroids)?,
        lambda: meta.lambda,
        objective_trace: meta.objective_trace,
        converged: meta.converged,
        admm_converged: meta.admm_converged,
        iterations: meta.iterations,
    })
}

// ---------------------------------------------------------------------------
// Reports.

/// One row of the model-selection report.
#[derive(Clone, Copy, Debug)]
pub struct SelectionRow {
    pub lambda: f64,
    pub n_clusters: usize,
    pub train_nll: f64,
    pub test_loglik: Option<f64>,
    pub bic: Option<f64>,
}

pub fn write_selection_report(rows: &[SelectionRow], path: &Path) -> Result<()> {
    let mut out = String::from("lambda,n_clusters,train_nll,test_loglik,bic\n");
    for r in rows {
        let test = r.test_loglik.map(|v| v.to_string()).unwrap_or_default();
        let bic = r.bic.map(|v| v.to_string()).unwrap_or_default();
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            r.lambda, r.n_clusters, r.train_nll, test, bic
        ));
    }
    write_string(path, &out)
}

/// One row of the per-replicate metric report.
#[derive(Clone, Debug)]
pub struct MetricsRow {
    pub method: String,
    pub scenario: String,
    pub seed: u64,
    pub ari: f64,
    pub frob_sq: f64,
    pub max_row: f64,
}

pub fn write_metrics_report(rows: &[MetricsRow], path: &Path) -> Result<()> {
    let mut out = String::from("method,scenario,seed,ari,frob_sq,max_row\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.method, r.scenario, r.seed, r.ari, r.frob_sq, r.max_row
        ));
    }
    write_string(path, &out)
}

// ---------------------------------------------------------------------------
// JSON configuration surfaces.

/// Simulation scenario file.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioSpec {
    pub grid_side: usize,
    pub n_clusters: usize,
    pub smoothness: u8,
    pub seed: u64,
    pub size_factor_max: u64,
    /// Reference CSV path; the bundled synthetic reference when absent.
    pub reference: Option<PathBuf>,
}

impl Default for ScenarioSpec {
    fn default() -> Self {
        ScenarioSpec {
            grid_side: 20,
            n_clusters: 5,
            smoothness: 1,
            seed: 0,
            size_factor_max: 50,
            reference: None,
        }
    }
}

pub fn parse_scenario(text: &str) -> Result<ScenarioSpec> {
    serde_json::from_str(text).map_err(|e| DuetError::parse(e.line(), e.to_string()))
}

pub fn read_scenario(path: &Path) -> Result<ScenarioSpec> {
    parse_scenario(&read_to_string(path)?)
}

/// Selection strategies understood by the tuning pipeline.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SelectionMethod {
    Thinning,
    Bic,
    Fixed,
}

/// Batch run configuration mirrored by the CLI flags; flags win on conflict.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub counts: Option<PathBuf>,
    pub coords: Option<PathBuf>,
    pub reference: Option<PathBuf>,
    pub sc_counts: Option<PathBuf>,
    pub sc_labels: Option<PathBuf>,
    pub markers: Option<PathBuf>,
    pub weights_file: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub weights: Option<WeightConfig>,
    pub solver: Option<SolverConfig>,
    pub lambda: Option<f64>,
    pub grid: Option<Vec<f64>>,
    pub grid_points: Option<usize>,
    pub selection: Option<SelectionMethod>,
    pub epsilon: Option<f64>,
    pub seed: Option<u64>,
    pub pseudocount: Option<f64>,
    pub min_spot_count: Option<u64>,
    pub threads: Option<usize>,
}

impl RunConfig {
    pub fn lambda_grid(&self) -> Result<Option<LambdaGrid>> {
        match &self.grid {
            Some(values) => Ok(Some(LambdaGrid::new(values.clone())?)),
            None => Ok(None),
        }
    }
}

pub fn parse_run_config(text: &str) -> Result<RunConfig> {
    serde_json::from_str(text).map_err(|e| DuetError::parse(e.line(), e.to_string()))
}

pub fn read_run_config(path: &Path) -> Result<RunConfig> {
    parse_run_config(&read_to_string(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use tempfile::TempDir;

    #[test]
    fn dense_counts_round_trip() {
        let expr = ExpressionMatrix::new(
            array![[3u64, 1], [0, 2]],
            vec!["ga".into(), "gb".into()],
            vec!["s0".into(), "s1".into()],
            vec![(0.0, 0.0), (1.5, 2.25)],
        )
        .unwrap();
        let dir = TempDir::new().unwrap();
        let counts = dir.path().join("x.csv");
        let coords = dir.path().join("c.csv");
        write_expression_dense(&expr, &counts).unwrap();
        write_coords(&expr, &coords).unwrap();
        let back = read_expression(&counts, &coords).unwrap();
        assert_eq!(back, expr);
    }

    #[test]
    fn dense_parse_errors_name_the_cell() {
        let err = parse_dense_counts("gene_id,s0\ng0,-1\n").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("line 2"), "{msg}");
        assert!(msg.contains("s0"), "{msg}");
        assert!(parse_dense_counts("").is_err());
        assert!(parse_dense_counts("gene_id,s0\ng0,1,2\n").is_err());
    }

    #[test]
    fn triplet_parsing() {
        let text = "%%triplet 2 2 3\n0,0,3\n0,1,1\n1,1,2\n";
        let (genes, spots, m) = parse_triplet_counts(text).unwrap();
        assert_eq!(genes, vec!["g0", "g1"]);
        assert_eq!(spots, vec!["s0", "s1"]);
        assert_eq!(m, array![[3u64, 1], [0, 2]]);
        // nnz mismatch
        assert!(parse_triplet_counts("%%triplet 2 2 5\n0,0,3\n").is_err());
        // out-of-range index
        assert!(parse_triplet_counts("%%triplet 1 1 1\n1,0,3\n").is_err());
        // nnz=0 parses to an all-zero matrix (rejected later by QC)
        let (_, _, zero) = parse_triplet_counts("%%triplet 2 2 0\n").unwrap();
        assert_eq!(zero.iter().sum::<u64>(), 0);
    }

    #[test]
    fn coords_parsing() {
        let rows = parse_coords("spot_id,x,y\na,0,0\nb,1.5,-2\n").unwrap();
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[1], ("b".to_string(), 1.5, -2.0));
        assert!(parse_coords("spot_id,x\na,0\n").is_err());
        assert!(parse_coords("spot_id,x,y\na,zzz,0\n").is_err());
    }

    #[test]
    fn missing_coordinates_are_an_error() {
        let dir = TempDir::new().unwrap();
        let counts = dir.path().join("x.csv");
        let coords = dir.path().join("c.csv");
        fs::write(&counts, "gene_id,s0,s1\ng0,5,6\n").unwrap();
        fs::write(&coords, "spot_id,x,y\ns0,0,0\n").unwrap();
        let err = read_expression(&counts, &coords).unwrap_err();
        assert!(err.to_string().contains("s1"));
    }

    #[test]
    fn edge_list_round_trip() {
        let g = FusionGraph::new(
            3,
            vec![
                GraphEdge { i: 0, j: 1, weight: 0.25 },
                GraphEdge { i: 1, j: 2, weight: 1.0 },
            ],
        )
        .unwrap();
        let dir = TempDir::new().unwrap();
        let path = dir.path().join("edges.csv");
        write_edge_list(&g, &path).unwrap();
        let back = read_edge_list(&path, 3).unwrap();
        assert_eq!(back.n_edges(), 2);
        assert_eq!(back.edges()[0].weight, 0.25);
        // wrong n: index out of range
        assert!(read_edge_list(&path, 2).is_err());
    }

    #[test]
    fn reference_round_trip_and_builder() {
        let r = ReferenceMatrix::new(
            array![[1.5, 0.25], [0.0, 3.0]],
            vec!["g0".into(), "g1".into()],
            vec!["a".into(), "b".into()],
        )
        .unwrap();
        let dir = TempDir::new().unwrap();
        let path = dir.path().join("ref.csv");
        write_reference(&r, &path).unwrap();
        assert_eq!(read_reference(&path).unwrap(), r);

        // builder: two cells of one type average; zeros get the pseudocount
        let genes = vec!["g0".to_string(), "g1".to_string()];
        let sc = array![[2.0, 4.0, 7.0], [0.0, 0.0, 1.0]];
        let labels = vec!["t1".to_string(), "t1".to_string(), "t2".to_string()];
        let built = build_reference(&genes, &sc, &labels, None, 1e-4).unwrap();
        assert_eq!(built.celltype_ids(), &["t1".to_string(), "t2".to_string()]);
        assert_eq!(built.values()[[0, 0]], 3.0);
        assert_eq!(built.values()[[1, 0]], 1e-4);
        assert_eq!(built.values()[[0, 1]], 7.0);

        // marker restriction
        let markers = vec!["g1".to_string()];
        let built = build_reference(&genes, &sc, &labels, Some(&markers), 1e-4).unwrap();
        assert_eq!(built.n_genes(), 1);
        assert_eq!(built.gene_ids(), &["g1".to_string()]);
        // empty intersection
        let missing = vec!["nope".to_string()];
        assert!(build_reference(&genes, &sc, &labels, Some(&missing), 1e-4).is_err());
    }

    #[test]
    fn fit_dir_round_trip() {
        let result = FitResult {
            theta_hat: CompositionMatrix::new(array![[0.25, 0.75], [0.6, 0.4]]).unwrap(),
            s_hat: SizeFactors::new(array![2.5, 0.125]).unwrap(),
            clusters: ClusterAssignment::new(vec![1, 2], array![[0.25, 0.75], [0.6, 0.4]])
                .unwrap(),
            lambda: 0.037,
            objective_trace: vec![10.0, 8.5, 8.5],
            converged: true,
            admm_converged: false,
            iterations: 2,
        };
        let dir = TempDir::new().unwrap();
        let fit_dir = dir.path().join("fresh").join("fit");
        write_fit(&result, &fit_dir).unwrap();
        let back = read_fit(&fit_dir).unwrap();
        assert_eq!(back.theta_hat, result.theta_hat);
        assert_eq!(back.s_hat, result.s_hat);
        assert_eq!(back.clusters, result.clusters);
        assert_eq!(back.lambda, result.lambda);
        assert_eq!(back.objective_trace, result.objective_trace);
        assert_eq!(back.converged, result.converged);
        assert_eq!(back.admm_converged, result.admm_converged);

        let meta = fs::read_to_string(fit_dir.join("meta.json")).unwrap();
        assert!(meta.contains("lambda"));
        assert!(meta.contains("converged"));
    }

    #[test]
    fn scenario_and_run_config_parsing() {
        let sc = parse_scenario(r#"{"grid_side":7,"n_clusters":5,"smoothness":2,"seed":9}"#)
            .unwrap();
        assert_eq!(sc.grid_side, 7);
        assert_eq!(sc.smoothness, 2);
        assert_eq!(sc.size_factor_max, 50);
        assert!(parse_scenario(r#"{"bogus":1}"#).is_err());

        let rc = parse_run_config(
            r#"{"lambda":0.5,"selection":"bic","weights":{"k_star":7,"k_dstar":6}}"#,
        )
        .unwrap();
        assert_eq!(rc.lambda, Some(0.5));
        assert_eq!(rc.selection, Some(SelectionMethod::Bic));
        assert_eq!(rc.weights.unwrap().k_star, 7);
        assert!(parse_run_config(r#"{"lambda":"x"}"#).is_err());
    }

    #[test]
    fn selection_report_format() {
        let rows = vec![
            SelectionRow {
                lambda: 0.5,
                n_clusters: 3,
                train_nll: -12.5,
                test_loglik: Some(40.0),
                bic: None,
            },
            SelectionRow {
                lambda: 0.1,
                n_clusters: 9,
                train_nll: -14.0,
                test_loglik: None,
                bic: Some(123.0),
            },
        ];
        let dir = TempDir::new().unwrap();
        let path = dir.path().join("report.csv");
        write_selection_report(&rows, &path).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        assert_eq!(
            text,
            "lambda,n_clusters,train_nll,test_loglik,bic\n0.5,3,-12.5,40,\n0.1,9,-14,,123\n"
        );
    }
}
