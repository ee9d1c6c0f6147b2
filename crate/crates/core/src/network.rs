//! Cross-immunoreactivity networks, model parameters and the immune matrices
//! derived from them.
//!
//! Nodes are 0-based. Figure labels in the literature are 1-based, so
//! figure node `k` is index `k - 1` everywhere in this crate.

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{CrinError, Result};
use crate::rng::SeededRng;

/// Directed simple graph of antigenic variants. An edge `(i, j)` means
/// variant `i` cross-reacts with the response raised against variant `j`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "GraphRepr", into = "GraphRepr")]
pub struct CrnGraph {
    n: usize,
    edges: Vec<(usize, usize)>,
    out: Vec<Vec<usize>>,
}

#[derive(Serialize, Deserialize)]
struct GraphRepr {
    n: usize,
    edges: Vec<[usize; 2]>,
}

impl TryFrom<GraphRepr> for CrnGraph {
    type Error = CrinError;

    fn try_from(r: GraphRepr) -> Result<Self> {
        CrnGraph::new(r.n, r.edges.into_iter().map(|[i, j]| (i, j)))
    }
}

impl From<CrnGraph> for GraphRepr {
    fn from(g: CrnGraph) -> Self {
        GraphRepr {
            n: g.n,
            edges: g.edges.iter().map(|&(i, j)| [i, j]).collect(),
        }
    }
}

impl CrnGraph {
    /// Builds a graph, rejecting self-loops, duplicates and out-of-range ends.
    /// Edges are stored sorted lexicographically.
    pub fn new(n: usize, edges: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        if n == 0 {
            return Err(CrinError::InvalidGraph(
                "graph needs at least one node".into(),
            ));
        }
        let mut edges: Vec<(usize, usize)> = edges.into_iter().collect();
        for &(i, j) in &edges {
            if i >= n || j >= n {
                return Err(CrinError::InvalidGraph(format!(
                    "edge ({i}, {j}) out of range for n = {n}"
                )));
            }
            if i == j {
                return Err(CrinError::InvalidGraph(format!("self-loop at node {i}")));
            }
        }
        edges.sort_unstable();
        if let Some(w) = edges.windows(2).find(|w| w[0] == w[1]) {
            return Err(CrinError::InvalidGraph(format!(
                "duplicate edge ({}, {})",
                w[0].0, w[0].1
            )));
        }
        let mut out = vec![Vec::new(); n];
        for &(i, j) in &edges {
            out[i].push(j);
        }
        Ok(Self { n, edges, out })
    }

    pub fn edgeless(n: usize) -> Result<Self> {
        Self::new(n, std::iter::empty())
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        self.out.get(i).is_some_and(|o| o.binary_search(&j).is_ok())
    }

    pub fn out_neighbors(&self, i: usize) -> &[usize] {
        &self.out[i]
    }

    pub fn in_degree(&self, j: usize) -> usize {
        self.edges.iter().filter(|&&(_, t)| t == j).count()
    }

    /// 0-1 adjacency matrix, `a_ij = 1` iff `(i, j)` is an edge.
    pub fn adjacency(&self) -> DMatrix<f64> {
        let mut a = DMatrix::zeros(self.n, self.n);
        for &(i, j) in &self.edges {
            a[(i, j)] = 1.0;
        }
        a
    }
}

/// Named topologies from the literature.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Topology {
    /// 0 -> 1 <- 2: two outer variants feeding one hub.
    Symmetric3,
    /// 0 -> 1, 1 -> 2, 2 -> 1.
    BranchCycle3,
    /// 0 -> 1.
    TwoNode,
    /// 0 -> j for every leaf j in 1..n.
    Star(usize),
}

impl Topology {
    pub const NAMES: [&'static str; 4] = ["symmetric3", "branch_cycle3", "two_node", "star"];

    /// Resolve a catalog name; `star` needs a node count.
    pub fn from_name(name: &str, n: Option<usize>) -> Result<Self> {
        match name {
            "symmetric3" => Ok(Topology::Symmetric3),
            "branch_cycle3" => Ok(Topology::BranchCycle3),
            "two_node" => Ok(Topology::TwoNode),
            "star" => {
                let n = n.ok_or_else(|| {
                    CrinError::InvalidGraph("star topology requires a node count".into())
                })?;
                if n < 2 {
                    return Err(CrinError::InvalidGraph(format!(
                        "star topology needs n >= 2, got {n}"
                    )));
                }
                Ok(Topology::Star(n))
            }
            other => Err(CrinError::UnknownTopology(other.to_string())),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Topology::Symmetric3 => "symmetric3",
            Topology::BranchCycle3 => "branch_cycle3",
            Topology::TwoNode => "two_node",
            Topology::Star(_) => "star",
        }
    }

    pub fn node_count(&self) -> usize {
        match self {
            Topology::Symmetric3 | Topology::BranchCycle3 => 3,
            Topology::TwoNode => 2,
            Topology::Star(n) => *n,
        }
    }

    pub fn graph(&self) -> Result<CrnGraph> {
        match *self {
            Topology::Symmetric3 => CrnGraph::new(3, [(0, 1), (2, 1)]),
            Topology::BranchCycle3 => CrnGraph::new(3, [(0, 1), (1, 2), (2, 1)]),
            Topology::TwoNode => CrnGraph::new(2, [(0, 1)]),
            Topology::Star(n) => {
                if n < 2 {
                    return Err(CrinError::InvalidGraph(format!(
                        "star topology needs n >= 2, got {n}"
                    )));
                }
                CrnGraph::new(n, (1..n).map(|j| (0, j)))
            }
        }
    }
}

impl fmt::Display for Topology {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Topology::Star(n) => write!(f, "star({n})"),
            t => f.write_str(t.name()),
        }
    }
}

impl FromStr for Topology {
    type Err = CrinError;

    /// Accepts the plain names plus `star(N)` / `starN`.
    fn from_str(s: &str) -> Result<Self> {
        if let Some(rest) = s.strip_prefix("star") {
            if rest.is_empty() {
                return Topology::from_name("star", None);
            }
            let digits = rest.trim_start_matches('(').trim_end_matches(')');
            let n = digits
                .parse::<usize>()
                .map_err(|_| CrinError::UnknownTopology(s.to_string()))?;
            return Topology::from_name("star", Some(n));
        }
        Topology::from_name(s, None)
    }
}

/// Catalog lookup by name, e.g. `catalog("star", Some(5))`.
pub fn catalog(name: &str, n: Option<usize>) -> Result<CrnGraph> {
    Topology::from_name(name, n)?.graph()
}

/// Ball of `ball_size` random nodes with a three-node tail.
///
/// Every ordered pair `(i, j)`, `i != j`, of ball nodes is visited in
/// row-major order and receives an edge when `bernoulli(edge_prob)` fires;
/// the diagonal is skipped (no draw). Ball node `ball_size - 1` doubles as tail
/// node 0, and tail nodes 1, 2 become `ball_size`, `ball_size + 1`. Only the
/// tail's own edges touch the two new nodes.
pub fn random_dandelion(
    seed: u64,
    ball_size: usize,
    edge_prob: f64,
    tail: Topology,
) -> Result<CrnGraph> {
    if ball_size < 1 {
        return Err(CrinError::InvalidGraph("ball_size must be >= 1".into()));
    }
    if !(edge_prob > 0.0 && edge_prob < 1.0) {
        return Err(CrinError::OutOfRange(format!(
            "edge_prob must lie in (0, 1), got {edge_prob}"
        )));
    }
    if !matches!(tail, Topology::BranchCycle3 | Topology::Symmetric3) {
        return Err(CrinError::InvalidGraph(format!(
            "tail must be branch_cycle3 or symmetric3, got {tail}"
        )));
    }
    let mut rng = SeededRng::new(seed);
    let mut edges = Vec::new();
    for i in 0..ball_size {
        for j in 0..ball_size {
            if i != j && rng.bernoulli(edge_prob) {
                edges.push((i, j));
            }
        }
    }
    let offset = ball_size - 1;
    for &(i, j) in tail.graph()?.edges() {
        let e = (i + offset, j + offset);
        if !edges.contains(&e) {
            edges.push(e);
        }
    }
    CrnGraph::new(ball_size + 2, edges)
}

/// Indices of the three tail nodes of a dandelion with the given ball size.
pub fn dandelion_tail_nodes(ball_size: usize) -> [usize; 3] {
    [ball_size - 1, ball_size, ball_size + 1]
}

/// Rate constants and cross-reactivity strengths.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    /// Replication rate of each variant.
    pub f: Vec<f64>,
    /// Neutralization rate constant.
    pub p: f64,
    /// Stimulation rate constant.
    pub c: f64,
    /// Antibody decay rate.
    pub b: f64,
    /// Cross-reactive stimulation strength.
    pub alpha: f64,
    /// Cross-reactive neutralization strength.
    pub beta: f64,
}

impl ModelParams {
    pub fn new(f: Vec<f64>, p: f64, c: f64, b: f64, alpha: f64, beta: f64) -> Result<Self> {
        let params = Self {
            f,
            p,
            c,
            b,
            alpha,
            beta,
        };
        params.validate()?;
        Ok(params)
    }

    /// `beta = alpha^k` for an integer exponent `k >= 2`.
    pub fn with_exponent(f: Vec<f64>, p: f64, c: f64, b: f64, alpha: f64, k: u32) -> Result<Self> {
        if k < 2 {
            return Err(CrinError::InvalidParams(format!(
                "cross-reactivity exponent k must be >= 2, got {k}"
            )));
        }
        Self::new(f, p, c, b, alpha, alpha.powi(k as i32))
    }

    pub fn n(&self) -> usize {
        self.f.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.f.is_empty() {
            return Err(CrinError::InvalidParams(
                "f must have at least one entry".into(),
            ));
        }
        let scalars = [("p", self.p), ("c", self.c), ("b", self.b)];
        for (i, &fi) in self.f.iter().enumerate() {
            if !fi.is_finite() || fi <= 0.0 {
                return Err(CrinError::InvalidParams(format!(
                    "f[{i}] must be finite and > 0, got {fi}"
                )));
            }
        }
        for (name, v) in scalars {
            if !v.is_finite() || v <= 0.0 {
                return Err(CrinError::InvalidParams(format!(
                    "{name} must be finite and > 0, got {v}"
                )));
            }
        }
        if !(self.beta > 0.0 && self.beta < self.alpha && self.alpha < 1.0) {
            return Err(CrinError::InvalidParams(format!(
                "need 0 < beta < alpha < 1, got alpha = {}, beta = {}",
                self.alpha, self.beta
            )));
        }
        Ok(())
    }

    pub(crate) fn check_n(&self, n: usize) -> Result<()> {
        if self.f.len() != n {
            return Err(CrinError::DimensionMismatch {
                what: "replication rates f vs node count",
                expected: n,
                got: self.f.len(),
            });
        }
        Ok(())
    }
}

/// Neutralization matrix `U` and stimulation matrix `V`.
///
/// `u[(j, i)]` scales how response `r_j` eliminates variant `x_i`;
/// `v[(j, i)]` scales how variant `x_j` stimulates response `r_i`.
#[derive(Debug, Clone, PartialEq)]
pub struct ImmuneMatrices {
    pub u: DMatrix<f64>,
    pub v: DMatrix<f64>,
    /// For each variant `i`, the nonzero `(j, u_ji)`.
    pub(crate) u_cols: Sparse,
    /// For each variant `j`, the nonzero `(i, v_ji)`.
    pub(crate) v_rows: Sparse,
    /// For each response `i`, the nonzero `(j, v_ji)`.
    pub(crate) v_cols: Sparse,
}

/// Compressed rows: `row(a)` lists the nonzero `(b, value)` of line `a`.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Sparse {
    ptr: Vec<usize>,
    idx: Vec<usize>,
    val: Vec<f64>,
}

impl Sparse {
    fn from_fn(n: usize, entry: impl Fn(usize, usize) -> f64) -> Self {
        let mut ptr = vec![0];
        let mut idx = Vec::new();
        let mut val = Vec::new();
        for a in 0..n {
            for b in 0..n {
                let e = entry(a, b);
                if e != 0.0 {
                    idx.push(b);
                    val.push(e);
                }
            }
            ptr.push(idx.len());
        }
        Self { ptr, idx, val }
    }

    pub(crate) fn row(&self, a: usize) -> impl Iterator<Item = (usize, f64)> + Clone + '_ {
        let span = self.ptr[a]..self.ptr[a + 1];
        self.idx[span.clone()]
            .iter()
            .copied()
            .zip(self.val[span].iter().copied())
    }

    /// `sum_b value(a, b) * w[b]`
    #[inline]
    pub(crate) fn dot(&self, a: usize, w: &[f64]) -> f64 {
        let span = self.ptr[a]..self.ptr[a + 1];
        self.idx[span.clone()]
            .iter()
            .zip(&self.val[span])
            .map(|(&b, &v)| v * w[b])
            .sum()
    }
}

impl ImmuneMatrices {
    /// Wrap explicit matrices; both must be square, of equal size, with unit
    /// diagonal and entries in `[0, 1]`.
    pub fn from_dense(u: DMatrix<f64>, v: DMatrix<f64>) -> Result<Self> {
        let n = u.nrows();
        for (name, m) in [("U", &u), ("V", &v)] {
            if m.nrows() != n || m.ncols() != n {
                return Err(CrinError::DimensionMismatch {
                    what: if name == "U" { "U columns" } else { "V shape" },
                    expected: n,
                    got: if m.nrows() != n { m.nrows() } else { m.ncols() },
                });
            }
            for i in 0..n {
                if m[(i, i)] != 1.0 {
                    return Err(CrinError::InvalidParams(format!(
                        "{name} must have unit diagonal (entry {i} is {})",
                        m[(i, i)]
                    )));
                }
            }
            if m.iter().any(|&e| !(0.0..=1.0).contains(&e)) {
                return Err(CrinError::InvalidParams(format!(
                    "{name} entries must lie in [0, 1]"
                )));
            }
        }
        let u_cols = Sparse::from_fn(n, |i, j| u[(j, i)]);
        let v_rows = Sparse::from_fn(n, |j, i| v[(j, i)]);
        let v_cols = Sparse::from_fn(n, |i, j| v[(j, i)]);
        Ok(Self {
            u,
            v,
            u_cols,
            v_rows,
            v_cols,
        })
    }

    pub fn n(&self) -> usize {
        self.u.nrows()
    }
}

/// `U = Id + beta * A^T`, `V = Id + alpha * A`.
pub fn build_matrices(graph: &CrnGraph, params: &ModelParams) -> Result<ImmuneMatrices> {
    params.validate()?;
    params.check_n(graph.n())?;
    let n = graph.n();
    let a = graph.adjacency();
    let id = DMatrix::<f64>::identity(n, n);
    let u = &id + a.transpose() * params.beta;
    let v = &id + a * params.alpha;
    ImmuneMatrices::from_dense(u, v)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params3() -> ModelParams {
        ModelParams::new(vec![1.0; 3], 1.0, 1.0, 1.0, 0.6, 0.36).unwrap()
    }

    #[test]
    fn symmetric_matrices_match_display() {
        let g = catalog("symmetric3", None).unwrap();
        let m = build_matrices(&g, &params3()).unwrap();
        let (a, b) = (0.6, 0.36);
        #[rustfmt::skip]
        let u = DMatrix::from_row_slice(3, 3, &[
            1.0, 0.0, 0.0,
            b,   1.0, b,
            0.0, 0.0, 1.0,
        ]);
        #[rustfmt::skip]
        let v = DMatrix::from_row_slice(3, 3, &[
            1.0, a,   0.0,
            0.0, 1.0, 0.0,
            0.0, a,   1.0,
        ]);
        assert_eq!(m.u, u);
        assert_eq!(m.v, v);
    }

    #[test]
    fn star3_matrices_match_display() {
        let g = catalog("star", Some(3)).unwrap();
        let m = build_matrices(&g, &params3()).unwrap();
        assert_eq!(m.u[(1, 0)], 0.36);
        assert_eq!(m.u[(2, 0)], 0.36);
        assert_eq!(m.u[(0, 1)], 0.0);
        assert_eq!(m.v[(0, 1)], 0.6);
        assert_eq!(m.v[(0, 2)], 0.6);
        assert_eq!(m.v[(1, 0)], 0.0);
    }

    #[test]
    fn edgeless_gives_identities() {
        for n in 1..6 {
            let g = CrnGraph::edgeless(n).unwrap();
            let p = ModelParams::new(vec![0.5; n], 1.0, 1.0, 1.0, 0.7, 0.2).unwrap();
            let m = build_matrices(&g, &p).unwrap();
            assert_eq!(m.u, DMatrix::identity(n, n));
            assert_eq!(m.v, DMatrix::identity(n, n));
        }
    }

    #[test]
    fn f_length_mismatch_is_rejected() {
        let g = catalog("two_node", None).unwrap();
        let err = build_matrices(&g, &params3()).unwrap_err();
        assert!(matches!(
            err,
            CrinError::DimensionMismatch {
                expected: 2,
                got: 3,
                ..
            }
        ));
    }

    #[test]
    fn catalog_entries() {
        assert_eq!(
            catalog("symmetric3", None).unwrap().edges(),
            &[(0, 1), (2, 1)]
        );
        assert_eq!(
            catalog("branch_cycle3", None).unwrap().edges(),
            &[(0, 1), (1, 2), (2, 1)]
        );
        assert_eq!(
            catalog("star", Some(2)).unwrap(),
            catalog("two_node", None).unwrap()
        );
        assert_eq!(
            catalog("star", Some(4)).unwrap().edges(),
            &[(0, 1), (0, 2), (0, 3)]
        );
        assert!(matches!(
            catalog("wheel", None),
            Err(CrinError::UnknownTopology(_))
        ));
        assert!(catalog("star", Some(1)).is_err());
        assert!(catalog("star", None).is_err());
    }

    #[test]
    fn topology_from_str() {
        assert_eq!("star(7)".parse::<Topology>().unwrap(), Topology::Star(7));
        assert_eq!("star7".parse::<Topology>().unwrap(), Topology::Star(7));
        assert_eq!("two_node".parse::<Topology>().unwrap(), Topology::TwoNode);
        assert!("star".parse::<Topology>().is_err());
    }

    #[test]
    fn graph_rejects_bad_edges() {
        assert!(CrnGraph::new(0, []).is_err());
        assert!(CrnGraph::new(2, [(1, 1)]).is_err());
        assert!(CrnGraph::new(2, [(0, 2)]).is_err());
        assert!(CrnGraph::new(2, [(0, 1), (0, 1)]).is_err());
    }

    #[test]
    fn params_validation() {
        assert!(ModelParams::new(vec![1.0], 1.0, 1.0, 1.0, 0.5, 0.5).is_err());
        assert!(ModelParams::new(vec![1.0], 1.0, 1.0, 1.0, 1.0, 0.5).is_err());
        assert!(ModelParams::new(vec![0.0], 1.0, 1.0, 1.0, 0.5, 0.25).is_err());
        assert!(ModelParams::new(vec![1.0], -1.0, 1.0, 1.0, 0.5, 0.25).is_err());
        let p = ModelParams::with_exponent(vec![1.0], 1.0, 1.0, 1.0, 0.75, 2).unwrap();
        assert_eq!(p.beta, 0.5625);
        assert!(ModelParams::with_exponent(vec![1.0], 1.0, 1.0, 1.0, 0.75, 1).is_err());
    }

    #[test]
    fn dandelion_branch_cycle_tail() {
        let g = random_dandelion(11, 98, 0.5, Topology::BranchCycle3).unwrap();
        assert_eq!(g.n(), 100);
        assert!(g.has_edge(97, 98));
        assert!(g.has_edge(98, 99));
        assert!(g.has_edge(99, 98));
        // the two new nodes only see tail edges
        for &(i, j) in g.edges() {
            if i >= 98 || j >= 98 {
                assert!([(97, 98), (98, 99), (99, 98)].contains(&(i, j)));
            }
        }
    }

    #[test]
    fn dandelion_is_seeded() {
        let a = random_dandelion(5, 30, 0.3, Topology::Symmetric3).unwrap();
        let b = random_dandelion(5, 30, 0.3, Topology::Symmetric3).unwrap();
        let c = random_dandelion(6, 30, 0.3, Topology::Symmetric3).unwrap();
        assert_eq!(a.edges(), b.edges());
        assert_ne!(a.edges(), c.edges());
    }

    #[test]
    fn dandelion_degenerate_ball() {
        let g = random_dandelion(3, 1, 0.5, Topology::BranchCycle3).unwrap();
        assert_eq!(g, catalog("branch_cycle3", None).unwrap());
    }

    #[test]
    fn dandelion_rejects_bad_inputs() {
        assert!(random_dandelion(1, 0, 0.5, Topology::Symmetric3).is_err());
        assert!(random_dandelion(1, 5, 1.0, Topology::Symmetric3).is_err());
        assert!(random_dandelion(1, 5, 0.5, Topology::TwoNode).is_err());
    }
}
