//! Spatially informed fusion weights: distance-threshold adjacency, pilot
//! smoothing over composition-nearest neighbors, adaptive Gaussian kernel
//! bandwidths, per-node pruning, spanning-tree reconnection, and flooring.

use ndarray::{Array1, Array2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cluster::UnionFind;
use crate::error::{DuetError, Result};
use crate::poisson::spotwise_deconvolve;
use crate::types::{CompositionMatrix, ExpressionMatrix, ReferenceMatrix};

/// Bandwidths are floored here so identical local compositions cannot
/// produce a zero divisor in the kernel.
pub const SIGMA_FLOOR: f64 = 1e-8;

/// One undirected weighted edge, stored once with `i < j`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GraphEdge {
    pub i: usize,
    pub j: usize,
    pub weight: f64,
}

/// Sparse symmetric nonnegative fusion weights over spot pairs.
///
/// Invariants: edges are unique pairs with `i < j < n`, weights lie in
/// (0, 1], and the graph spans all `n` spots in one connected component.
#[derive(Clone, Debug)]
pub struct FusionGraph {
    n: usize,
    edges: Vec<GraphEdge>,
}

impl FusionGraph {
    pub fn new(n: usize, mut edges: Vec<GraphEdge>) -> Result<Self> {
        if n == 0 {
            return Err(DuetError::invalid("fusion graph needs at least one spot"));
        }
        edges.sort_by_key(|e| (e.i, e.j));
        for w in edges.windows(2) {
            if (w[0].i, w[0].j) == (w[1].i, w[1].j) {
                return Err(DuetError::invalid(format!(
                    "duplicate edge ({}, {})",
                    w[0].i, w[0].j
                )));
            }
        }
        let mut uf = UnionFind::new(n);
        let mut components = n;
        for e in &edges {
            if e.i >= e.j || e.j >= n {
                return Err(DuetError::invalid(format!(
                    "edge ({}, {}) is not an ordered pair below n = {n}",
                    e.i, e.j
                )));
            }
            if !(e.weight > 0.0 && e.weight <= 1.0) || !e.weight.is_finite() {
                return Err(DuetError::invalid(format!(
                    "edge ({}, {}) weight {} outside (0, 1]",
                    e.i, e.j, e.weight
                )));
            }
            if uf.union(e.i, e.j) {
                components -= 1;
            }
        }
        if components != 1 {
            return Err(DuetError::invalid(format!(
                "fusion graph over {n} spots has {components} components; it must be connected"
            )));
        }
        Ok(FusionGraph { n, edges })
    }

    pub fn n_spots(&self) -> usize {
        self.n
    }

    pub fn n_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self) -> &[GraphEdge] {
        &self.edges
    }
}

/// Knobs for the weight construction.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct WeightConfig {
    /// Pilot-smoothing neighbor count k*.
    pub k_star: usize,
    /// Bandwidth neighbor count k**.
    pub k_dstar: usize,
    /// Percentage of each node's weakest incident edges to prune, in [0, 100].
    pub prune_pct: f64,
    /// Weight floor as a fraction of the maximum retained weight.
    pub floor_frac: f64,
    /// Adjacency radius as a multiple of the median nearest-neighbor distance.
    pub adjacency_factor: f64,
}

impl Default for WeightConfig {
    fn default() -> Self {
        WeightConfig {
            k_star: 4,
            k_dstar: 4,
            prune_pct: 30.0,
            floor_frac: 1e-3,
            adjacency_factor: 1.2,
        }
    }
}

impl WeightConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k_star == 0 || self.k_dstar == 0 {
            return Err(DuetError::invalid("k_star and k_dstar must be at least 1"));
        }
        if !(0.0..=100.0).contains(&self.prune_pct) {
            return Err(DuetError::invalid("prune_pct must lie in [0, 100]"));
        }
        if !(self.floor_frac > 0.0 && self.floor_frac <= 1.0) {
            return Err(DuetError::invalid("floor_frac must lie in (0, 1]"));
        }
        if !(self.adjacency_factor > 0.0 && self.adjacency_factor.is_finite()) {
            return Err(DuetError::invalid("adjacency_factor must be positive"));
        }
        Ok(())
    }
}

fn euclid(a: (f64, f64), b: (f64, f64)) -> f64 {
    let (dx, dy) = (a.0 - b.0, a.1 - b.1);
    (dx * dx + dy * dy).sqrt()
}

fn median_sorted(values: &[f64]) -> f64 {
    let m = values.len();
    debug_assert!(m > 0);
    if m % 2 == 1 {
        values[m / 2]
    } else {
        0.5 * (values[m / 2 - 1] + values[m / 2])
    }
}

/// Spots are adjacent when their Euclidean distance is at most
/// `adjacency_factor` times the median nearest-neighbor distance. Returns
/// ordered pairs `i < j`, sorted.
pub fn build_adjacency(
    coords: &[(f64, f64)],
    adjacency_factor: f64,
) -> Result<Vec<(usize, usize)>> {
    let n = coords.len();
    if n < 2 {
        return Err(DuetError::invalid("adjacency needs at least two spots"));
    }
    let nn: Vec<f64> = (0..n)
        .into_par_iter()
        .map(|i| {
            (0..n)
                .filter(|&j| j != i)
                .map(|j| euclid(coords[i], coords[j]))
                .fold(f64::INFINITY, f64::min)
        })
        .collect();
    let mut sorted = nn.clone();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite distances"));
    let median_nn = median_sorted(&sorted);
    if median_nn == 0.0 {
        return Err(DuetError::invalid(
            "coincident spot coordinates leave no usable nearest-neighbor scale",
        ));
    }
    let threshold = adjacency_factor * median_nn;
    let mut edges = Vec::new();
    for i in 0..n {
        for j in (i + 1)..n {
            if euclid(coords[i], coords[j]) <= threshold {
                edges.push((i, j));
            }
        }
    }
    Ok(edges)
}

fn neighbor_lists(n: usize, adjacency: &[(usize, usize)]) -> Vec<Vec<usize>> {
    let mut nb = vec![Vec::new(); n];
    for &(i, j) in adjacency {
        nb[i].push(j);
        nb[j].push(i);
    }
    nb
}

fn row_distance(theta: &Array2<f64>, i: usize, j: usize) -> f64 {
    let diff = &theta.row(i) - &theta.row(j);
    diff.dot(&diff).sqrt()
}

/// Local average of each spot's k* composition-nearest adjacent neighbors'
/// pilot estimates. Ties in the neighbor ordering break toward the lower
/// spot index; an isolated spot keeps its own pilot row.
pub fn pilot_smooth(
    pilot: &CompositionMatrix,
    adjacency: &[(usize, usize)],
    k_star: usize,
) -> CompositionMatrix {
    let n = pilot.n_spots();
    let k = pilot.n_celltypes();
    let theta = pilot.theta();
    let nb = neighbor_lists(n, adjacency);

    let rows: Vec<Array1<f64>> = (0..n)
        .into_par_iter()
        .map(|i| {
            if nb[i].is_empty() {
                return theta.row(i).to_owned();
            }
            let mut dists: Vec<(f64, usize)> = nb[i]
                .iter()
                .map(|&j| (row_distance(theta, i, j), j))
                .collect();
            dists.sort_by(|a, b| {
                a.0.partial_cmp(&b.0)
                    .expect("finite distances")
                    .then(a.1.cmp(&b.1))
            });
            let m = k_star.min(dists.len());
            let mut mean = Array1::<f64>::zeros(k);
            for &(_, j) in &dists[..m] {
                mean += &theta.row(j);
            }
            mean / m as f64
        })
        .collect();

    let mut smoothed = Array2::<f64>::zeros((n, k));
    for (i, row) in rows.into_iter().enumerate() {
        smoothed.row_mut(i).assign(&row);
    }
    CompositionMatrix::new(smoothed).expect("averages of simplex rows stay on the simplex")
}

/// Adaptive kernel bandwidth per spot: the median of its k** smallest
/// adjacent composition distances, floored at `SIGMA_FLOOR`.
pub fn adaptive_bandwidths(
    theta_tilde: &CompositionMatrix,
    adjacency: &[(usize, usize)],
    k_dstar: usize,
) -> Array1<f64> {
    let n = theta_tilde.n_spots();
    let theta = theta_tilde.theta();
    let nb = neighbor_lists(n, adjacency);
    let sigmas: Vec<f64> = (0..n)
        .into_par_iter()
        .map(|i| {
            if nb[i].is_empty() {
                return SIGMA_FLOOR;
            }
            let mut dists: Vec<f64> = nb[i].iter().map(|&j| row_distance(theta, i, j)).collect();
            dists.sort_by(|a, b| a.partial_cmp(b).expect("finite distances"));
            let m = k_dstar.min(dists.len());
            median_sorted(&dists[..m]).max(SIGMA_FLOOR)
        })
        .collect();
    Array1::from(sigmas)
}

/// Gaussian kernel weights on adjacent pairs:
/// `exp(-||t_i - t_j||^2 / (2 sigma_i sigma_j))`.
pub fn kernel_weights(
    theta_tilde: &CompositionMatrix,
    sigmas: &Array1<f64>,
    adjacency: &[(usize, usize)],
) -> Vec<GraphEdge> {
    let theta = theta_tilde.theta();
    adjacency
        .iter()
        .map(|&(i, j)| {
            let d = row_distance(theta, i, j);
            let weight = (-(d * d) / (2.0 * sigmas[i] * sigmas[j])).exp();
            GraphEdge { i, j, weight }
        })
        .collect()
}

/// Per-node pruning of the weakest `prune_pct`% incident edges (an edge
/// survives unless both endpoints drop it), reconnection by the minimum
/// spanning tree of the full raw graph under cost `1 - weight`, and a floor
/// of `floor_frac` times the maximum retained weight.
pub fn sparsify_with_mst(
    n: usize,
    raw: &[GraphEdge],
    prune_pct: f64,
    floor_frac: f64,
) -> Result<FusionGraph> {
    if raw.is_empty() {
        return Err(DuetError::invalid("no raw edges to sparsify"));
    }
    // Which of its incident edges each node drops.
    let mut incident: Vec<Vec<(f64, usize, usize)>> = vec![Vec::new(); n]; // (weight, other, edge idx)
    for (e_idx, e) in raw.iter().enumerate() {
        incident[e.i].push((e.weight, e.j, e_idx));
        incident[e.j].push((e.weight, e.i, e_idx));
    }
    let mut dropped_by = vec![0u8; raw.len()];
    for list in incident.iter_mut() {
        list.sort_by(|a, b| {
            a.0.partial_cmp(&b.0)
                .expect("finite weights")
                .then(a.1.cmp(&b.1))
        });
        let n_drop = ((prune_pct / 100.0) * list.len() as f64).floor() as usize;
        for &(_, _, e_idx) in &list[..n_drop.min(list.len())] {
            dropped_by[e_idx] += 1;
        }
    }

    // Kruskal on cost 1 - weight over the full raw graph.
    let mut order: Vec<usize> = (0..raw.len()).collect();
    order.sort_by(|&a, &b| {
        let ca = 1.0 - raw[a].weight;
        let cb = 1.0 - raw[b].weight;
        ca.partial_cmp(&cb)
            .expect("finite costs")
            .then((raw[a].i, raw[a].j).cmp(&(raw[b].i, raw[b].j)))
    });
    let mut uf = UnionFind::new(n);
    let mut in_mst = vec![false; raw.len()];
    let mut components = n;
    for &e_idx in &order {
        if uf.union(raw[e_idx].i, raw[e_idx].j) {
            in_mst[e_idx] = true;
            components -= 1;
        }
    }
    if components != 1 {
        return Err(DuetError::invalid(
            "raw weight graph is disconnected; cannot span it",
        ));
    }

    let mut retained: Vec<GraphEdge> = raw
        .iter()
        .enumerate()
        .filter(|&(e_idx, _)| dropped_by[e_idx] < 2 || in_mst[e_idx])
        .map(|(_, e)| *e)
        .collect();
    let w_max = retained
        .iter()
        .map(|e| e.weight)
        .fold(f64::NEG_INFINITY, f64::max);
    let floor = floor_frac * w_max;
    for e in retained.iter_mut() {
        e.weight = e.weight.max(floor);
    }
    FusionGraph::new(n, retained)
}

/// Full weight pipeline: spotwise pilot, adjacency, pilot smoothing,
/// adaptive bandwidths, kernel weights, pruning with spanning-tree
/// reconnection and flooring.
pub fn build_fusion_graph(
    expr: &ExpressionMatrix,
    reference: &ReferenceMatrix,
    cfg: &WeightConfig,
) -> Result<FusionGraph> {
    cfg.validate()?;
    let (pilot, _) = spotwise_deconvolve(expr, reference)?;
    build_fusion_graph_from_pilot(&pilot, expr.coords(), cfg)
}

/// Same pipeline, reusing an existing pilot deconvolution.
pub fn build_fusion_graph_from_pilot(
    pilot: &CompositionMatrix,
    coords: &[(f64, f64)],
    cfg: &WeightConfig,
) -> Result<FusionGraph> {
    cfg.validate()?;
    let adjacency = build_adjacency(coords, cfg.adjacency_factor)?;
    if adjacency.is_empty() {
        return Err(DuetError::invalid("no adjacent spot pairs at this adjacency factor"));
    }
    let tilde = pilot_smooth(pilot, &adjacency, cfg.k_star);
    let sigmas = adaptive_bandwidths(&tilde, &adjacency, cfg.k_dstar);
    let raw = kernel_weights(&tilde, &sigmas, &adjacency);
    sparsify_with_mst(coords.len(), &raw, cfg.prune_pct, cfg.floor_frac)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    fn square_grid(side: usize) -> Vec<(f64, f64)> {
        let mut coords = Vec::new();
        for r in 0..side {
            for c in 0..side {
                coords.push((c as f64, r as f64));
            }
        }
        coords
    }

    fn hex_lattice(rows: usize, cols: usize) -> Vec<(f64, f64)> {
        let mut coords = Vec::new();
        let dy = 3.0f64.sqrt() / 2.0;
        for r in 0..rows {
            for c in 0..cols {
                let x = c as f64 + if r % 2 == 1 { 0.5 } else { 0.0 };
                coords.push((x, r as f64 * dy));
            }
        }
        coords
    }

    #[test]
    fn square_grid_rook_adjacency_at_default_factor() {
        let coords = square_grid(4);
        let edges = build_adjacency(&coords, 1.2).unwrap();
        // rook adjacency on a 4x4 grid: 2 * 4 * 3 = 24 edges
        assert_eq!(edges.len(), 24);
        for &(i, j) in &edges {
            let d = euclid(coords[i], coords[j]);
            assert_abs_diff_eq!(d, 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn square_grid_queen_adjacency_at_factor_15() {
        let coords = square_grid(4);
        let edges = build_adjacency(&coords, 1.5).unwrap();
        // diagonals sqrt(2) <= 1.5 join in: 24 rook + 2 * 3 * 3 diagonal pairs
        assert_eq!(edges.len(), 24 + 18);
    }

    #[test]
    fn two_points_single_edge() {
        let edges = build_adjacency(&[(0.0, 0.0), (1.0, 0.0)], 1.2).unwrap();
        assert_eq!(edges, vec![(0, 1)]);
    }

    #[test]
    fn hex_lattice_six_neighborhood() {
        let coords = hex_lattice(5, 5);
        let edges = build_adjacency(&coords, 1.2).unwrap();
        // an interior spot of a hex lattice has 6 neighbors; exhaustive check
        // against pairwise distances
        let mut degree = vec![0usize; coords.len()];
        for &(i, j) in &edges {
            degree[i] += 1;
            degree[j] += 1;
            assert!(euclid(coords[i], coords[j]) <= 1.2)
        }
        // spot (2,2) is interior: index 2*5+2
        assert_eq!(degree[12], 6);
        // distances beyond the threshold are excluded
        for i in 0..coords.len() {
            for j in (i + 1)..coords.len() {
                if euclid(coords[i], coords[j]) > 1.2 {
                    assert!(!edges.contains(&(i, j)));
                }
            }
        }
    }

    #[test]
    fn coincident_points_error() {
        // constructing duplicates is blocked upstream; call directly
        let coords = vec![(0.0, 0.0), (0.0, 0.0), (0.0, 0.0)];
        assert!(build_adjacency(&coords, 1.2).is_err());
    }

    fn comp(rows: Vec<[f64; 2]>) -> CompositionMatrix {
        let n = rows.len();
        let mut m = Array2::zeros((n, 2));
        for (i, r) in rows.into_iter().enumerate() {
            m.row_mut(i).assign(&array![r[0], r[1]]);
        }
        CompositionMatrix::new(m).unwrap()
    }

    #[test]
    fn pilot_smooth_identical_pilots_noop() {
        let pilot = comp(vec![[0.5, 0.5]; 4]);
        let adj = vec![(0, 1), (1, 2), (2, 3)];
        let sm = pilot_smooth(&pilot, &adj, 2);
        assert_eq!(sm.theta(), pilot.theta());
    }

    #[test]
    fn pilot_smooth_averages_all_neighbors_when_k_large() {
        let pilot = comp(vec![[1.0, 0.0], [0.5, 0.5], [0.0, 1.0]]);
        let adj = vec![(0, 1), (1, 2)];
        let sm = pilot_smooth(&pilot, &adj, 10);
        // middle spot averages both neighbors: [0.5, 0.5]
        assert_abs_diff_eq!(sm.theta()[[1, 0]], 0.5, epsilon = 1e-12);
        // ends average their single neighbor
        assert_abs_diff_eq!(sm.theta()[[0, 0]], 0.5, epsilon = 1e-12);
    }

    #[test]
    fn pilot_smooth_selects_composition_nearest() {
        // path 1-2-3 with pilots e1, e1, e2 and k* = 1:
        // spot 2's nearest (in composition) adjacent neighbor is spot 1
        let pilot = comp(vec![[1.0, 0.0], [1.0, 0.0], [0.0, 1.0]]);
        let adj = vec![(0, 1), (1, 2)];
        let sm = pilot_smooth(&pilot, &adj, 1);
        assert_abs_diff_eq!(sm.theta()[[1, 0]], 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(sm.theta()[[1, 1]], 0.0, epsilon = 1e-12);
    }

    #[test]
    fn bandwidths_floor_and_median() {
        // all identical: floored
        let t = comp(vec![[0.5, 0.5]; 3]);
        let adj = vec![(0, 1), (1, 2), (0, 2)];
        let s = adaptive_bandwidths(&t, &adj, 2);
        assert!(s.iter().all(|&v| v == SIGMA_FLOOR));

        // distances {0.1, 0.2, 0.4} from spot 0, k** = 2 -> median {0.1, 0.2} = 0.15
        // build along one axis: |a-b| on first coordinate * sqrt(2)
        let d = |a: f64| [0.5 + a / 2f64.sqrt(), 0.5 - a / 2f64.sqrt()];
        let t = comp(vec![[0.5, 0.5], d(0.1), d(0.2), d(0.4)]);
        let adj = vec![(0, 1), (0, 2), (0, 3)];
        let s = adaptive_bandwidths(&t, &adj, 2);
        assert_abs_diff_eq!(s[0], 0.15, epsilon = 1e-9);

        // k** = 1: smallest distance
        let s = adaptive_bandwidths(&t, &adj, 1);
        assert_abs_diff_eq!(s[0], 0.1, epsilon = 1e-9);
    }

    #[test]
    fn kernel_weight_values() {
        let t = comp(vec![[0.5, 0.5], [0.5, 0.5]]);
        let s = Array1::from(vec![0.3, 0.3]);
        let w = kernel_weights(&t, &s, &[(0, 1)]);
        assert_abs_diff_eq!(w[0].weight, 1.0, epsilon = 1e-12);

        // ||d||^2 = 2 sigma_i sigma_j gives e^{-1}
        let sig: f64 = 0.2;
        let d = (2.0 * sig * sig).sqrt(); // distance achieving the unit exponent
        let t = comp(vec![[0.5, 0.5], [0.5 + d / 2f64.sqrt(), 0.5 - d / 2f64.sqrt()]]);
        let s = Array1::from(vec![sig, sig]);
        let w = kernel_weights(&t, &s, &[(0, 1)]);
        assert_abs_diff_eq!(w[0].weight, (-1.0f64).exp(), epsilon = 1e-9);
    }

    #[test]
    fn sparsify_keeps_everything_at_zero_prune() {
        let raw = vec![
            GraphEdge { i: 0, j: 1, weight: 0.9 },
            GraphEdge { i: 1, j: 2, weight: 0.5 },
            GraphEdge { i: 0, j: 2, weight: 0.1 },
        ];
        let g = sparsify_with_mst(3, &raw, 0.0, 1e-3).unwrap();
        assert_eq!(g.n_edges(), 3);
    }

    #[test]
    fn sparsify_full_prune_leaves_spanning_tree() {
        // star plus ring on 6 nodes; pruning everything must leave an MST
        let mut raw = Vec::new();
        for j in 1..6 {
            raw.push(GraphEdge { i: 0, j, weight: 0.2 + 0.1 * j as f64 });
        }
        for j in 1..5 {
            raw.push(GraphEdge { i: j, j: j + 1, weight: 0.15 });
        }
        let g = sparsify_with_mst(6, &raw, 100.0, 1e-3).unwrap();
        assert_eq!(g.n_edges(), 5); // spanning tree on 6 nodes
        // brute-force: any spanning tree is connected; constructor verified it
        let best: f64 = g.edges().iter().map(|e| e.weight).sum();
        // MST under cost 1 - w maximizes total weight among spanning trees:
        // star weights {0.3..0.7} beat the 0.15 ring edges
        assert_abs_diff_eq!(best, 0.3 + 0.4 + 0.5 + 0.6 + 0.7, epsilon = 1e-12);
    }

    #[test]
    fn sparsify_floors_tiny_mst_edges() {
        // bridge edge with tiny weight survives via the MST and is floored
        let raw = vec![
            GraphEdge { i: 0, j: 1, weight: 1.0 },
            GraphEdge { i: 2, j: 3, weight: 1.0 },
            GraphEdge { i: 1, j: 2, weight: 1e-9 },
        ];
        let g = sparsify_with_mst(4, &raw, 0.0, 1e-3).unwrap();
        let bridge = g.edges().iter().find(|e| (e.i, e.j) == (1, 2)).unwrap();
        assert_abs_diff_eq!(bridge.weight, 1e-3, epsilon = 1e-15);
    }

    #[test]
    fn sparsify_rejects_disconnected() {
        let raw = vec![
            GraphEdge { i: 0, j: 1, weight: 0.5 },
            GraphEdge { i: 2, j: 3, weight: 0.5 },
        ];
        assert!(sparsify_with_mst(4, &raw, 0.0, 1e-3).is_err());
    }

    #[test]
    fn graph_constructor_validates() {
        assert!(FusionGraph::new(2, vec![GraphEdge { i: 0, j: 1, weight: 0.5 }]).is_ok());
        // weight out of range
        assert!(FusionGraph::new(2, vec![GraphEdge { i: 0, j: 1, weight: 1.5 }]).is_err());
        // unordered pair
        assert!(FusionGraph::new(2, vec![GraphEdge { i: 1, j: 0, weight: 0.5 }]).is_err());
        // disconnected
        assert!(FusionGraph::new(3, vec![GraphEdge { i: 0, j: 1, weight: 0.5 }]).is_err());
        // duplicate
        assert!(FusionGraph::new(
            2,
            vec![
                GraphEdge { i: 0, j: 1, weight: 0.5 },
                GraphEdge { i: 0, j: 1, weight: 0.6 }
            ]
        )
        .is_err());
    }

    #[test]
    fn permuting_spots_permutes_the_graph() {
        // 1x4 line with compositions making distinct weights
        let coords = vec![(0.0, 0.0), (1.0, 0.0), (2.0, 0.0), (3.0, 0.0)];
        let pilot = comp(vec![[0.9, 0.1], [0.8, 0.2], [0.3, 0.7], [0.1, 0.9]]);
        let cfg = WeightConfig { k_star: 1, k_dstar: 1, ..WeightConfig::default() };
        let g = build_fusion_graph_from_pilot(&pilot, &coords, &cfg).unwrap();

        // reverse the spot order
        let coords_r: Vec<_> = coords.iter().rev().cloned().collect();
        let theta_r = {
            let t = pilot.theta();
            let mut m = Array2::zeros((4, 2));
            for i in 0..4 {
                m.row_mut(i).assign(&t.row(3 - i));
            }
            CompositionMatrix::new(m).unwrap()
        };
        let g_r = build_fusion_graph_from_pilot(&theta_r, &coords_r, &cfg).unwrap();

        assert_eq!(g.n_edges(), g_r.n_edges());
        for e in g.edges() {
            let (ri, rj) = (3 - e.j, 3 - e.i); // reversed and reordered
            let m = g_r
                .edges()
                .iter()
                .find(|f| (f.i, f.j) == (ri, rj))
                .expect("permuted edge present");
            assert_abs_diff_eq!(e.weight, m.weight, epsilon = 1e-12);
        }
    }
}
