//! Cluster extraction from a fitted composition matrix, plus the union-find
//! structure shared with the spanning-tree code.

use ndarray::{Array1, Array2};

use crate::error::Result;
use crate::simplex::project_simplex;
use crate::types::{ClusterAssignment, CompositionMatrix};
use crate::weights::FusionGraph;

pub(crate) struct UnionFind {
    parent: Vec<usize>,
    rank: Vec<u8>,
}

impl UnionFind {
    pub(crate) fn new(n: usize) -> Self {
        UnionFind { parent: (0..n).collect(), rank: vec![0; n] }
    }

    pub(crate) fn find(&mut self, x: usize) -> usize {
        if self.parent[x] != x {
            let root = self.find(self.parent[x]);
            self.parent[x] = root;
        }
        self.parent[x]
    }

    /// Returns true when the two elements were in different sets.
    pub(crate) fn union(&mut self, a: usize, b: usize) -> bool {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            return false;
        }
        match self.rank[ra].cmp(&self.rank[rb]) {
            std::cmp::Ordering::Less => self.parent[ra] = rb,
            std::cmp::Ordering::Greater => self.parent[rb] = ra,
            std::cmp::Ordering::Equal => {
                self.parent[rb] = ra;
                self.rank[ra] += 1;
            }
        }
        true
    }
}

/// Groups spots whose estimated compositions were fused by the penalty.
///
/// Two spots sharing a penalized edge are merged when the Euclidean distance
/// between their composition rows is at most `fuse_tol`; clusters are the
/// connected components of the merged edge set, labeled 1..=C in order of
/// first appearance. Each centroid is the simplex projection of its members'
/// mean row. `fuse_tol = 0` demands exact equality.
pub fn extract_clusters(
    theta_hat: &CompositionMatrix,
    graph: &FusionGraph,
    fuse_tol: f64,
) -> Result<ClusterAssignment> {
    let n = theta_hat.n_spots();
    let k = theta_hat.n_celltypes();
    let theta = theta_hat.theta();
    let mut uf = UnionFind::new(n);
    for e in graph.edges() {
        let diff = &theta.row(e.i) - &theta.row(e.j);
        let dist = diff.dot(&diff).sqrt();
        if dist <= fuse_tol {
            uf.union(e.i, e.j);
        }
    }

    let mut labels = vec![0usize; n];
    let mut root_to_label: Vec<(usize, usize)> = Vec::new();
    let mut next = 0usize;
    for i in 0..n {
        let root = uf.find(i);
        let label = match root_to_label.iter().find(|(r, _)| *r == root) {
            Some(&(_, l)) => l,
            None => {
                next += 1;
                root_to_label.push((root, next));
                next
            }
        };
        labels[i] = label;
    }

    let c = next;
    let mut sums = Array2::<f64>::zeros((c, k));
    let mut counts = vec![0usize; c];
    for i in 0..n {
        let l = labels[i] - 1;
        let mut row = sums.row_mut(l);
        row += &theta.row(i);
        counts[l] += 1;
    }
    let mut centroids = Array2::<f64>::zeros((c, k));
    for l in 0..c {
        let mean = Array1::from_iter(sums.row(l).iter().map(|v| v / counts[l] as f64));
        centroids.row_mut(l).assign(&project_simplex(mean.view())?);
    }
    ClusterAssignment::new(labels, centroids)
}
