//! Node-attributed undirected graphs and the two graph families used by the
//! experiments: two-letter word graphs and dicyclic graphs.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::encodings::{Encoding, Letter};
use crate::error::GraphError;

/// An immutable node-attributed undirected graph.
///
/// Edges are stored as `(u, v)` with `u < v`, sorted. Features are dense and
/// row-major, one row of length `feature_dim` per node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Graph {
    num_nodes: usize,
    edges: Vec<(usize, usize)>,
    feature_dim: usize,
    features: Vec<f64>,
    marked: Option<(usize, usize)>,
    #[serde(skip)]
    adjacency: Vec<Vec<usize>>,
}

impl Graph {
    /// Validates and builds a graph. `features` holds one row per node.
    pub fn new(
        num_nodes: usize,
        edges: &[(usize, usize)],
        features: Vec<Vec<f64>>,
        marked: Option<(usize, usize)>,
    ) -> Result<Self, GraphError> {
        if features.len() != num_nodes {
            return Err(GraphError::FeatureCount {
                features: features.len(),
                num_nodes,
            });
        }
        let feature_dim = features.first().map_or(1, Vec::len);
        if feature_dim == 0 {
            return Err(GraphError::EmptyFeatures);
        }
        let mut flat = Vec::with_capacity(num_nodes * feature_dim);
        for row in &features {
            if row.len() != feature_dim {
                return Err(GraphError::FeatureDim {
                    expected: feature_dim,
                    found: row.len(),
                });
            }
            flat.extend_from_slice(row);
        }

        let mut set = BTreeSet::new();
        for &(a, b) in edges {
            for x in [a, b] {
                if x >= num_nodes {
                    return Err(GraphError::NodeOutOfRange { index: x, num_nodes });
                }
            }
            if a == b {
                return Err(GraphError::SelfLoop(a));
            }
            if !set.insert((a.min(b), a.max(b))) {
                return Err(GraphError::DuplicateEdge(a, b));
            }
        }
        if let Some((a, b)) = marked {
            if a == b || a >= num_nodes || b >= num_nodes {
                return Err(GraphError::BadMarkedPair(a, b));
            }
        }
        let edges: Vec<_> = set.into_iter().collect();
        let mut g = Graph {
            num_nodes,
            edges,
            feature_dim,
            features: flat,
            marked,
            adjacency: Vec::new(),
        };
        g.rebuild_adjacency();
        Ok(g)
    }

    fn rebuild_adjacency(&mut self) {
        let mut adj = vec![Vec::new(); self.num_nodes];
        for &(u, v) in &self.edges {
            adj[u].push(v);
            adj[v].push(u);
        }
        for list in &mut adj {
            list.sort_unstable();
        }
        self.adjacency = adj;
    }

    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    /// Row-major `num_nodes x feature_dim` feature matrix.
    pub fn features(&self) -> &[f64] {
        &self.features
    }

    pub fn feature(&self, v: usize) -> &[f64] {
        &self.features[v * self.feature_dim..(v + 1) * self.feature_dim]
    }

    pub fn marked_nodes(&self) -> Option<(usize, usize)> {
        self.marked
    }

    fn check(&self, v: usize) -> Result<(), GraphError> {
        if v >= self.num_nodes {
            Err(GraphError::NodeOutOfRange {
                index: v,
                num_nodes: self.num_nodes,
            })
        } else {
            Ok(())
        }
    }

    pub fn degree(&self, v: usize) -> Result<usize, GraphError> {
        self.check(v)?;
        Ok(self.adjacency[v].len())
    }

    /// Neighbors of `v`, sorted ascending.
    pub fn neighbors(&self, v: usize) -> Result<&[usize], GraphError> {
        self.check(v)?;
        Ok(&self.adjacency[v])
    }

    pub(crate) fn adjacency(&self) -> &[Vec<usize>] {
        &self.adjacency
    }

    /// Returns a copy with nodes relabeled so that old node `v` becomes
    /// `perm[v]`. The marked pair is carried along.
    pub fn relabel(&self, perm: &[usize]) -> Result<Self, GraphError> {
        if perm.len() != self.num_nodes {
            return Err(GraphError::FeatureCount {
                features: perm.len(),
                num_nodes: self.num_nodes,
            });
        }
        let mut seen = vec![false; self.num_nodes];
        for &p in perm {
            self.check(p)?;
            if std::mem::replace(&mut seen[p], true) {
                return Err(GraphError::Parse(format!("{p} repeated in permutation")));
            }
        }
        let edges: Vec<_> = self.edges.iter().map(|&(u, v)| (perm[u], perm[v])).collect();
        let mut features = vec![Vec::new(); self.num_nodes];
        for v in 0..self.num_nodes {
            features[perm[v]] = self.feature(v).to_vec();
        }
        let marked = self.marked.map(|(a, b)| (perm[a], perm[b]));
        Graph::new(self.num_nodes, &edges, features, marked)
    }

    /// Debug edge-list export: header `N d`, then one `u v` line per edge.
    pub fn to_edge_list(&self) -> String {
        let mut out = format!("{} {}\n", self.num_nodes, self.feature_dim);
        for &(u, v) in &self.edges {
            let _ = writeln!(out, "{u} {v}");
        }
        out
    }

    /// Parses the edge-list format; every node gets an all-ones feature row.
    pub fn from_edge_list(text: &str) -> Result<Self, GraphError> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = lines
            .next()
            .ok_or_else(|| GraphError::Parse("missing header".into()))?;
        let nums = parse_pair(header)?;
        let (n, d) = nums;
        let mut edges = Vec::new();
        for line in lines {
            edges.push(parse_pair(line)?);
        }
        Graph::new(n, &edges, vec![vec![1.0; d]; n], None)
    }
}

fn parse_pair(line: &str) -> Result<(usize, usize), GraphError> {
    let mut it = line.split_whitespace().map(str::parse::<usize>);
    match (it.next(), it.next(), it.next()) {
        (Some(Ok(a)), Some(Ok(b)), None) => Ok((a, b)),
        _ => Err(GraphError::Parse(line.to_string())),
    }
}

/// Builds the two-node word graph for `first second` with features taken
/// from `enc`. The marked pair is `(0, 1)`.
pub fn make_word_graph(first: Letter, second: Letter, enc: &Encoding) -> Result<Graph, GraphError> {
    let a = enc.code(first).to_vec();
    let b = enc.code(second).to_vec();
    Graph::new(2, &[(0, 1)], vec![a, b], Some((0, 1)))
}

/// Unordered pair of cycle lengths identifying a dicyclic graph `[m,n]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct DicyclicSpec {
    pub m: usize,
    pub n: usize,
}

impl DicyclicSpec {
    pub fn new(m: usize, n: usize) -> Result<Self, GraphError> {
        if m < 3 || n < 3 {
            return Err(GraphError::CycleTooShort(m, n));
        }
        Ok(Self { m, n })
    }

    pub fn is_symmetric(&self) -> bool {
        self.m == self.n
    }

    pub fn label(&self) -> f64 {
        if self.is_symmetric() {
            1.0
        } else {
            0.0
        }
    }
}

impl std::fmt::Display for DicyclicSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "[{},{}]", self.m, self.n)
    }
}

/// An `m`-cycle on nodes `0..m` followed by an `n`-cycle on `m..m+n`, bridged
/// by the edge `(0, m)`. Every node carries the scalar feature 1.
pub fn make_dicyclic(spec: DicyclicSpec) -> Result<Graph, GraphError> {
    let DicyclicSpec { m, n } = spec;
    if m < 3 || n < 3 {
        return Err(GraphError::CycleTooShort(m, n));
    }
    let mut edges = Vec::with_capacity(m + n + 1);
    for i in 0..m {
        edges.push((i, (i + 1) % m));
    }
    for i in 0..n {
        edges.push((m + i, m + (i + 1) % n));
    }
    edges.push((0, m));
    Graph::new(m + n, &edges, vec![vec![1.0]; m + n], Some((0, m)))
}

/// A plain `m`-cycle with unit features.
pub fn make_cycle(m: usize) -> Result<Graph, GraphError> {
    if m < 3 {
        return Err(GraphError::CycleTooShort(m, m));
    }
    let edges: Vec<_> = (0..m).map(|i| (i, (i + 1) % m)).collect();
    Graph::new(m, &edges, vec![vec![1.0]; m], None)
}

/// Disjoint union of `a` and `b`; `b`'s nodes are shifted by `a.num_nodes()`.
/// Both graphs must share a feature dimension. The marked pair is dropped.
pub fn disjoint_union(a: &Graph, b: &Graph) -> Result<Graph, GraphError> {
    if a.feature_dim != b.feature_dim {
        return Err(GraphError::FeatureDim {
            expected: a.feature_dim,
            found: b.feature_dim,
        });
    }
    let off = a.num_nodes;
    let mut edges = a.edges.clone();
    edges.extend(b.edges.iter().map(|&(u, v)| (u + off, v + off)));
    let mut features: Vec<Vec<f64>> = (0..a.num_nodes).map(|v| a.feature(v).to_vec()).collect();
    features.extend((0..b.num_nodes).map(|v| b.feature(v).to_vec()));
    Graph::new(a.num_nodes + b.num_nodes, &edges, features, None)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encodings::{make_gaussian, make_one_hot};

    fn degree_census(g: &Graph) -> (usize, usize, usize) {
        let mut c = (0, 0, 0);
        for v in 0..g.num_nodes() {
            match g.degree(v).unwrap() {
                2 => c.0 += 1,
                3 => c.1 += 1,
                _ => c.2 += 1,
            }
        }
        c
    }

    #[test]
    fn word_graph_one_hot() {
        let enc = make_one_hot();
        let g = make_word_graph(Letter::from_char('A').unwrap(), Letter::from_char('A').unwrap(), &enc)
            .unwrap();
        assert_eq!(g.num_nodes(), 2);
        assert_eq!(g.num_edges(), 1);
        let mut e1 = vec![0.0; 26];
        e1[0] = 1.0;
        assert_eq!(g.feature(0), &e1[..]);
        assert_eq!(g.feature(1), &e1[..]);
        assert_eq!(g.marked_nodes(), Some((0, 1)));

        let g = make_word_graph(Letter::from_char('E').unwrap(), Letter::from_char('Y').unwrap(), &enc)
            .unwrap();
        assert_eq!(g.feature(0)[4], 1.0);
        assert_eq!(g.feature(1)[24], 1.0);
        assert_eq!(g.feature(0).iter().sum::<f64>(), 1.0);
        assert_eq!(g.degree(0).unwrap(), 1);
        assert_eq!(g.neighbors(0).unwrap(), &[1]);
    }

    #[test]
    fn word_graph_gaussian_dim() {
        let enc = make_gaussian(16, 3).unwrap();
        let g = make_word_graph(Letter::from_char('Z').unwrap(), Letter::from_char('T').unwrap(), &enc)
            .unwrap();
        assert_eq!(g.feature_dim(), 16);
    }

    #[test]
    fn letter_out_of_range() {
        assert!(Letter::new(26).is_err());
    }

    #[test]
    fn dicyclic_shapes() {
        for (m, n) in [(5, 5), (4, 6), (3, 3)] {
            let g = make_dicyclic(DicyclicSpec::new(m, n).unwrap()).unwrap();
            assert_eq!(g.num_nodes(), m + n);
            assert_eq!(g.num_edges(), m + n + 1);
            assert_eq!(degree_census(&g), (m + n - 2, 2, 0));
            let (a, b) = g.marked_nodes().unwrap();
            assert_eq!((a, b), (0, m));
            assert_eq!(g.degree(a).unwrap(), 3);
            assert_eq!(g.degree(b).unwrap(), 3);
            assert_eq!(g.feature_dim(), 1);
        }
        let g = make_dicyclic(DicyclicSpec::new(4, 6).unwrap()).unwrap();
        // bridge endpoints sit in different cycles: node 0 in 0..4, node 4 in 4..10
        let (a, b) = g.marked_nodes().unwrap();
        assert!(a < 4 && b >= 4);
        assert_eq!(g.neighbors(2).unwrap().len(), 2);
        let g33 = make_dicyclic(DicyclicSpec::new(3, 3).unwrap()).unwrap();
        assert_eq!(g33.neighbors(0).unwrap(), &[1, 2, 3]);
        assert_eq!(g.degree(1).unwrap(), 2);
    }

    #[test]
    fn dicyclic_rejects_short_cycles() {
        assert!(DicyclicSpec::new(2, 5).is_err());
        assert!(make_dicyclic(DicyclicSpec { m: 5, n: 2 }).is_err());
    }

    #[test]
    fn invalid_graphs_rejected() {
        let f = vec![vec![1.0]; 3];
        assert_eq!(
            Graph::new(3, &[(0, 0)], f.clone(), None),
            Err(GraphError::SelfLoop(0))
        );
        assert!(matches!(
            Graph::new(3, &[(0, 1), (1, 0)], f.clone(), None),
            Err(GraphError::DuplicateEdge(..))
        ));
        assert!(matches!(
            Graph::new(3, &[(0, 3)], f.clone(), None),
            Err(GraphError::NodeOutOfRange { .. })
        ));
        assert!(matches!(
            Graph::new(3, &[(0, 1)], f.clone(), Some((1, 1))),
            Err(GraphError::BadMarkedPair(..))
        ));
        assert!(matches!(
            Graph::new(2, &[(0, 1)], vec![vec![1.0], vec![1.0, 2.0]], None),
            Err(GraphError::FeatureDim { .. })
        ));
        let g = Graph::new(3, &[(0, 1)], f, None).unwrap();
        assert!(g.degree(3).is_err());
        assert!(g.neighbors(7).is_err());
    }

    #[test]
    fn edge_list_round_trip() {
        let g = make_dicyclic(DicyclicSpec::new(3, 4).unwrap()).unwrap();
        let text = g.to_edge_list();
        assert!(text.starts_with("7 1\n"));
        let back = Graph::from_edge_list(&text).unwrap();
        assert_eq!(back.edges(), g.edges());
        assert!(Graph::from_edge_list("3\n0 1").is_err());
    }

    #[test]
    fn relabel_keeps_structure() {
        let g = make_dicyclic(DicyclicSpec::new(3, 4).unwrap()).unwrap();
        let perm = [6, 5, 4, 3, 2, 1, 0];
        let h = g.relabel(&perm).unwrap();
        assert_eq!(h.marked_nodes(), Some((6, 3)));
        assert_eq!(h.degree(6).unwrap(), 3);
        assert_eq!(h.num_edges(), g.num_edges());
    }
}
