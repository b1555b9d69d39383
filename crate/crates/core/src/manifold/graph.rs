use crate::error::{Error, Result};
use crate::gradcore::{sq_dist, Matrix};

/// Weight substituted for zero-length edges between duplicate points.
pub const DUPLICATE_EDGE_WEIGHT: f64 = 1e-12;

/// Undirected, Euclidean-weighted k-nearest-neighbor graph, made connected
/// by greedy shortest bridging edges when needed.
#[derive(Clone, Debug)]
pub struct NeighborGraph {
    k: usize,
    /// The `k` nearest neighbors of every point, nearest first.
    knn: Vec<Vec<usize>>,
    /// Symmetrized adjacency (k-NN edges in both directions plus bridges),
    /// sorted by neighbor index.
    adj: Vec<Vec<(usize, f64)>>,
    bridges: Vec<(usize, usize, f64)>,
}

fn edge_weight(d: f64) -> f64 {
    if d > 0.0 {
        d
    } else {
        DUPLICATE_EDGE_WEIGHT
    }
}

struct UnionFind {
    parent: Vec<usize>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        Self { parent: (0..n).collect() }
    }

    fn find(&mut self, mut i: usize) -> usize {
        while self.parent[i] != i {
            self.parent[i] = self.parent[self.parent[i]];
            i = self.parent[i];
        }
        i
    }

    fn union(&mut self, a: usize, b: usize) -> bool {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            return false;
        }
        let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
        self.parent[hi] = lo;
        true
    }
}

/// Indices of the `k` nearest rows to row `i` (excluding `i`), ordered by
/// distance then index.
pub(crate) fn k_nearest(x: &Matrix, i: usize, k: usize) -> Vec<(usize, f64)> {
    let xi = x.row(i);
    let mut cand: Vec<(usize, f64)> = (0..x.rows())
        .filter(|&j| j != i)
        .map(|j| (j, sq_dist(xi, x.row(j))))
        .collect();
    let by = |a: &(usize, f64), b: &(usize, f64)| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0));
    if cand.len() > k {
        cand.select_nth_unstable_by(k - 1, by);
        cand.truncate(k);
    }
    cand.sort_by(by);
    cand.into_iter().map(|(j, d2)| (j, d2.sqrt())).collect()
}

impl NeighborGraph {
    /// Builds the graph over the rows of `x`.
    pub fn build(x: &Matrix, k: usize) -> Result<Self> {
        let n = x.rows();
        if k == 0 {
            return Err(Error::Config("k must be at least 1".into()));
        }
        if n <= k {
            return Err(Error::Config(format!("need more than k = {k} points, got {n}")));
        }

        let mut knn = Vec::with_capacity(n);
        let mut adj: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
        for i in 0..n {
            let nn = k_nearest(x, i, k);
            for &(j, d) in &nn {
                let w = edge_weight(d);
                adj[i].push((j, w));
                adj[j].push((i, w));
            }
            knn.push(nn.into_iter().map(|(j, _)| j).collect());
        }

        let mut uf = UnionFind::new(n);
        for (i, list) in adj.iter().enumerate() {
            for &(j, _) in list {
                uf.union(i, j);
            }
        }
        let mut components = (0..n).filter(|&i| uf.find(i) == i).count();

        let mut bridges = Vec::new();
        if components > 1 {
            let comp: Vec<usize> = (0..n).map(|i| uf.find(i)).collect();
            let mut pairs = Vec::new();
            for i in 0..n {
                for j in (i + 1)..n {
                    if comp[i] != comp[j] {
                        pairs.push((i, j, sq_dist(x.row(i), x.row(j))));
                    }
                }
            }
            pairs.sort_by(|a, b| a.2.total_cmp(&b.2).then(a.0.cmp(&b.0)).then(a.1.cmp(&b.1)));
            for (i, j, d2) in pairs {
                if uf.union(i, j) {
                    let w = edge_weight(d2.sqrt());
                    adj[i].push((j, w));
                    adj[j].push((i, w));
                    bridges.push((i, j, w));
                    components -= 1;
                    if components == 1 {
                        break;
                    }
                }
            }
        }

        for list in &mut adj {
            list.sort_by_key(|e| e.0);
            list.dedup_by(|a, b| a.0 == b.0);
        }
        Ok(Self { k, knn, adj, bridges })
    }

    pub fn n(&self) -> usize {
        self.adj.len()
    }

    pub fn k(&self) -> usize {
        self.k
    }

    /// The `k` nearest neighbors of `i` (not including bridges).
    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.knn[i]
    }

    /// All incident edges of `i` as `(neighbor, weight)`.
    pub fn edges(&self, i: usize) -> &[(usize, f64)] {
        &self.adj[i]
    }

    /// Bridging edges added to connect components, as `(i, j, weight)`.
    pub fn bridges(&self) -> &[(usize, usize, f64)] {
        &self.bridges
    }

    /// Weights of every undirected edge, each counted once.
    pub fn edge_weights(&self) -> Vec<f64> {
        self.adj
            .iter()
            .enumerate()
            .flat_map(|(i, list)| list.iter().filter(move |(j, _)| *j > i).map(|&(_, w)| w))
            .collect()
    }

    pub fn median_edge_weight(&self) -> f64 {
        let mut w = self.edge_weights();
        w.sort_by(f64::total_cmp);
        let n = w.len();
        if n == 0 {
            0.0
        } else if n % 2 == 1 {
            w[n / 2]
        } else {
            0.5 * (w[n / 2 - 1] + w[n / 2])
        }
    }
}

/// Builds the k-NN graph over the rows of `x`; see [`NeighborGraph::build`].
pub fn build_graph(x: &Matrix, k: usize) -> Result<NeighborGraph> {
    NeighborGraph::build(x, k)
}
