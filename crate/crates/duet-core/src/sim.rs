//! Synthetic data generation: grid layouts, cluster partitions, per-cluster
//! composition matrices, multinomial composition realization, and Poisson
//! count generation.

use ndarray::{Array1, Array2};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use rayon::prelude::*;

use crate::error::{DuetError, Result};
use crate::types::{
    ClusterAssignment, CompositionMatrix, ExpressionMatrix, ReferenceMatrix, SizeFactors,
};

/// One simulated dataset's parameters.
#[derive(Clone, Debug)]
pub struct SimulationScenario {
    pub grid_side: usize,
    /// One of 5, 7, or 10.
    pub n_clusters: usize,
    /// 1 = well-separated dominant types, 2-3 = increasingly mixed.
    pub smoothness: u8,
    pub reference: ReferenceMatrix,
    pub seed: u64,
    /// Size factors are uniform on 1..=size_factor_max.
    pub size_factor_max: u64,
}

impl SimulationScenario {
    pub fn validate(&self) -> Result<()> {
        if self.grid_side < self.n_clusters {
            return Err(DuetError::invalid(
                "grid_side must be at least the cluster count",
            ));
        }
        if ![5, 7, 10].contains(&self.n_clusters) {
            return Err(DuetError::invalid("n_clusters must be one of 5, 7, 10"));
        }
        if !(1..=3).contains(&self.smoothness) {
            return Err(DuetError::invalid("smoothness must be 1, 2, or 3"));
        }
        if self.reference.n_celltypes() != THETA_DAGGER_TYPES {
            return Err(DuetError::invalid(format!(
                "simulation reference must have {THETA_DAGGER_TYPES} cell types"
            )));
        }
        if self.size_factor_max == 0 {
            return Err(DuetError::invalid("size_factor_max must be at least 1"));
        }
        Ok(())
    }

    pub fn n_spots(&self) -> usize {
        self.grid_side * self.grid_side
    }
}

/// Ground truth behind one simulated dataset.
#[derive(Clone, Debug)]
pub struct GroundTruth {
    /// Cluster-constant compositions.
    pub theta_star: CompositionMatrix,
    /// Realized (multinomial) compositions actually generating counts.
    pub v_star: CompositionMatrix,
    pub s_star: SizeFactors,
    pub labels: ClusterAssignment,
}

pub const THETA_DAGGER_TYPES: usize = 5;

const BASE_SMOOTH_1: [[f64; 5]; 5] = [
    [0.05, 0.05, 0.05, 0.00, 0.85],
    [0.05, 0.05, 0.00, 0.85, 0.05],
    [0.05, 0.00, 0.85, 0.05, 0.05],
    [0.00, 0.85, 0.05, 0.05, 0.05],
    [0.85, 0.05, 0.05, 0.05, 0.00],
];

const BASE_SMOOTH_2: [[f64; 5]; 5] = [
    [0.8, 0.1, 0.1, 0.0, 0.0],
    [0.1, 0.6, 0.3, 0.0, 0.0],
    [0.2, 0.2, 0.3, 0.2, 0.1],
    [0.0, 0.0, 0.1, 0.1, 0.8],
    [0.2, 0.4, 0.0, 0.1, 0.3],
];

const BASE_SMOOTH_3: [[f64; 5]; 5] = [
    [0.70, 0.15, 0.10, 0.03, 0.02],
    [0.20, 0.40, 0.10, 0.10, 0.20],
    [0.02, 0.08, 0.85, 0.03, 0.02],
    [0.10, 0.25, 0.25, 0.30, 0.10],
    [0.15, 0.05, 0.30, 0.20, 0.30],
];

// Rows 6..10 extend the five-cluster matrices to the larger settings,
// following the same construction: dominant-type rows for smoothness 1,
// mixed rows for 2 and 3. Reconstructions; the originals ship only the
// five-cluster values.
const EXTRA_SMOOTH_1: [[f64; 5]; 5] = [
    [0.10, 0.05, 0.05, 0.05, 0.75],
    [0.05, 0.10, 0.05, 0.75, 0.05],
    [0.05, 0.05, 0.75, 0.10, 0.05],
    [0.05, 0.75, 0.10, 0.05, 0.05],
    [0.75, 0.05, 0.05, 0.05, 0.10],
];

const EXTRA_SMOOTH_2: [[f64; 5]; 5] = [
    [0.30, 0.30, 0.20, 0.10, 0.10],
    [0.10, 0.10, 0.20, 0.30, 0.30],
    [0.25, 0.10, 0.30, 0.25, 0.10],
    [0.10, 0.25, 0.10, 0.25, 0.30],
    [0.30, 0.10, 0.25, 0.10, 0.25],
];

const EXTRA_SMOOTH_3: [[f64; 5]; 5] = [
    [0.22, 0.18, 0.20, 0.25, 0.15],
    [0.12, 0.28, 0.18, 0.17, 0.25],
    [0.30, 0.20, 0.15, 0.10, 0.25],
    [0.18, 0.12, 0.25, 0.28, 0.17],
    [0.25, 0.30, 0.12, 0.15, 0.18],
];

/// Per-cluster composition matrix for a scenario: C rows on the 5-type
/// simplex, one per spatial domain.
pub fn theta_dagger(n_clusters: usize, smoothness: u8) -> Result<Array2<f64>> {
    let (base, extra) = match smoothness {
        1 => (&BASE_SMOOTH_1, &EXTRA_SMOOTH_1),
        2 => (&BASE_SMOOTH_2, &EXTRA_SMOOTH_2),
        3 => (&BASE_SMOOTH_3, &EXTRA_SMOOTH_3),
        other => {
            return Err(DuetError::invalid(format!(
                "smoothness must be 1, 2, or 3, got {other}"
            )))
        }
    };
    if ![5, 7, 10].contains(&n_clusters) {
        return Err(DuetError::invalid("n_clusters must be one of 5, 7, 10"));
    }
    let mut m = Array2::zeros((n_clusters, THETA_DAGGER_TYPES));
    for c in 0..n_clusters {
        let row = if c < 5 { &base[c] } else { &extra[c - 5] };
        for (k, &v) in row.iter().enumerate() {
            m[[c, k]] = v;
        }
    }
    Ok(m)
}

/// Deterministic geometric partition of a `grid_side x grid_side` grid into
/// `n_clusters` contiguous rectangular blocks (row-major spot order). Extra
/// blocks from the tiling merge into the final label, which keeps every
/// region connected.
pub fn make_partition(grid_side: usize, n_clusters: usize) -> Result<Vec<usize>> {
    if n_clusters == 0 || grid_side < n_clusters {
        return Err(DuetError::invalid(
            "grid_side must be at least n_clusters (and both positive)",
        ));
    }
    let block_rows = (n_clusters as f64).sqrt().floor() as usize;
    let block_cols = n_clusters.div_ceil(block_rows);
    let row_edge = |r: usize| r * grid_side / block_rows;
    let col_edge = |c: usize| c * grid_side / block_cols;

    let mut labels = vec![0usize; grid_side * grid_side];
    for row in 0..grid_side {
        let br = (0..block_rows)
            .rfind(|&r| row_edge(r) <= row)
            .expect("row edge 0 is 0");
        for col in 0..grid_side {
            let bc = (0..block_cols)
                .rfind(|&c| col_edge(c) <= col)
                .expect("col edge 0 is 0");
            let block = br * block_cols + bc;
            labels[row * grid_side + col] = block.min(n_clusters - 1) + 1;
        }
    }
    Ok(labels)
}

fn per_spot_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn multinomial_draw(rng: &mut ChaCha8Rng, trials: u64, probs: &[f64]) -> Vec<u64> {
    let k = probs.len();
    let mut cum = vec![0.0; k];
    let mut acc = 0.0;
    for (j, &p) in probs.iter().enumerate() {
        acc += p;
        cum[j] = acc;
    }
    let last_nonzero = probs
        .iter()
        .rposition(|&p| p > 0.0)
        .expect("simplex rows have a positive entry");
    let mut counts = vec![0u64; k];
    for _ in 0..trials {
        let r: f64 = rng.random_range(0.0..1.0);
        let mut chosen = last_nonzero;
        for (j, &c) in cum.iter().enumerate() {
            if r < c {
                chosen = j;
                break;
            }
        }
        counts[chosen] += 1;
    }
    counts
}

/// Draws the ground truth: uniform size factors on 1..=max, multinomial
/// realized compositions, cluster-constant target compositions.
/// Deterministic given the scenario seed; each spot uses its own stream.
pub fn gen_ground_truth(scenario: &SimulationScenario) -> Result<GroundTruth> {
    scenario.validate()?;
    let n = scenario.n_spots();
    let k = THETA_DAGGER_TYPES;
    let labels = make_partition(scenario.grid_side, scenario.n_clusters)?;
    let dagger = theta_dagger(scenario.n_clusters, scenario.smoothness)?;

    let mut theta_star = Array2::zeros((n, k));
    let mut v_star = Array2::zeros((n, k));
    let mut s_star = Array1::zeros(n);
    let draws: Vec<(u64, Vec<u64>)> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut rng = per_spot_rng(scenario.seed, i as u64);
            let s = rng.random_range(1..=scenario.size_factor_max);
            let row: Vec<f64> = dagger.row(labels[i] - 1).to_vec();
            let u = multinomial_draw(&mut rng, s, &row);
            (s, u)
        })
        .collect();
    for (i, (s, u)) in draws.into_iter().enumerate() {
        s_star[i] = s as f64;
        theta_star.row_mut(i).assign(&dagger.row(labels[i] - 1));
        let total: u64 = u.iter().sum();
        for (j, &uj) in u.iter().enumerate() {
            v_star[[i, j]] = uj as f64 / total as f64;
        }
    }

    Ok(GroundTruth {
        theta_star: CompositionMatrix::new(theta_star)?,
        v_star: CompositionMatrix::new(v_star)?,
        s_star: SizeFactors::new(s_star)?,
        labels: ClusterAssignment::new(labels, dagger)?,
    })
}

/// Generates the observed counts: independent Poisson draws with mean
/// `s_i * b_g' v_i`, with the spots laid out on the scenario grid.
/// Count streams are disjoint from the ground-truth streams.
pub fn gen_counts(truth: &GroundTruth, scenario: &SimulationScenario) -> Result<ExpressionMatrix> {
    scenario.validate()?;
    let n = scenario.n_spots();
    let g = scenario.reference.n_genes();
    if truth.v_star.n_spots() != n {
        return Err(DuetError::invalid("ground truth does not match the scenario grid"));
    }
    // G x n mean matrix in one multiply.
    let means = scenario.reference.values().dot(&truth.v_star.theta().t());
    let s = truth.s_star.values();

    let rows: Vec<Vec<u64>> = (0..g)
        .into_par_iter()
        .map(|gi| {
            let mut row = Vec::with_capacity(n);
            for i in 0..n {
                let mu = s[i] * means[[gi, i]];
                let count = if mu > 0.0 {
                    let mut rng = per_spot_rng(scenario.seed, (n + gi * n + i) as u64);
                    Poisson::new(mu).expect("positive mean").sample(&mut rng) as u64
                } else {
                    0
                };
                row.push(count);
            }
            row
        })
        .collect();
    let mut counts = Array2::zeros((g, n));
    for (gi, row) in rows.into_iter().enumerate() {
        for (i, c) in row.into_iter().enumerate() {
            counts[[gi, i]] = c;
        }
    }

    let coords: Vec<(f64, f64)> = (0..n)
        .map(|i| ((i % scenario.grid_side) as f64, (i / scenario.grid_side) as f64))
        .collect();
    ExpressionMatrix::new(
        counts,
        scenario.reference.gene_ids().to_vec(),
        (0..n).map(|i| format!("s{i}")).collect(),
        coords,
    )
}

/// Ground truth and counts in one call.
pub fn simulate(scenario: &SimulationScenario) -> Result<(ExpressionMatrix, GroundTruth)> {
    let truth = gen_ground_truth(scenario)?;
    let expr = gen_counts(&truth, scenario)?;
    Ok((expr, truth))
}

/// Bundled synthetic 66-gene, 5-type reference on the scale of a mean
/// single-cell count profile: each type gets a block of 13 elevated marker
/// genes over a low positive background, plus one shared housekeeping gene.
pub fn default_reference() -> ReferenceMatrix {
    let g = 66;
    let k = THETA_DAGGER_TYPES;
    let mut rng = ChaCha8Rng::seed_from_u64(0x0b66_0005);
    let mut values = Array2::zeros((g, k));
    for gi in 0..g {
        for ki in 0..k {
            values[[gi, ki]] = rng.random_range(0.05..0.6);
        }
    }
    for ki in 0..k {
        for gi in (ki * 13)..((ki + 1) * 13) {
            values[[gi, ki]] = rng.random_range(4.0..12.0);
        }
    }
    // shared housekeeping gene
    for ki in 0..k {
        values[[g - 1, ki]] = 8.0;
    }
    ReferenceMatrix::new(
        values,
        (0..g).map(|i| format!("gene{i:02}")).collect(),
        (1..=k).map(|i| format!("ct{i}")).collect(),
    )
    .expect("constructed values are positive")
}
