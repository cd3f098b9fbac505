//! First-order Weisfeiler-Lehman color refinement.
//!
//! New colors are assigned by canonical relabeling: nodes are scanned in
//! ascending index and each distinct `(color, sorted neighbor colors)` key
//! receives the next unused id. Results are compared by partition, never by
//! raw color values.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::WlError;
use crate::graph::{disjoint_union, make_dicyclic, DicyclicSpec, Graph};

/// Per-node colors, canonical: ids are `0..k` in order of first appearance.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Coloring(Vec<usize>);

impl Coloring {
    /// Canonicalizes arbitrary color values.
    pub fn new(colors: &[usize]) -> Self {
        let mut ids = HashMap::new();
        let canon = colors
            .iter()
            .map(|c| {
                let next = ids.len();
                *ids.entry(*c).or_insert(next)
            })
            .collect();
        Coloring(canon)
    }

    pub fn uniform(n: usize) -> Self {
        Coloring(vec![0; n])
    }

    /// Initial coloring from node features: equal feature rows share a color.
    pub fn from_features(g: &Graph) -> Self {
        let mut ids: HashMap<Vec<u64>, usize> = HashMap::new();
        let colors = (0..g.num_nodes())
            .map(|v| {
                let key: Vec<u64> = g.feature(v).iter().map(|x| x.to_bits()).collect();
                let next = ids.len();
                *ids.entry(key).or_insert(next)
            })
            .collect();
        Coloring(colors)
    }

    pub fn colors(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.0.iter().max().map_or(0, |m| m + 1)
    }

    /// Whether both colorings induce the same partition of the nodes.
    pub fn same_partition(&self, other: &Coloring) -> bool {
        self.0.len() == other.0.len() && Coloring::new(&self.0) == Coloring::new(&other.0)
    }

    /// Whether every class of `self` lies inside a class of `coarser`.
    pub fn refines(&self, coarser: &Coloring) -> bool {
        if self.0.len() != coarser.0.len() {
            return false;
        }
        let mut owner: HashMap<usize, usize> = HashMap::new();
        self.0
            .iter()
            .zip(&coarser.0)
            .all(|(fine, coarse)| *owner.entry(*fine).or_insert(*coarse) == *coarse)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColoringTrace {
    /// Index 0 is the (canonicalized) initial coloring.
    pub per_iteration: Vec<Coloring>,
    /// First iteration whose class count equals the previous one; `None` when
    /// `max_iter` ran out first.
    pub stable_at: Option<usize>,
    pub num_classes: usize,
}

impl ColoringTrace {
    pub fn stable(&self) -> Result<&Coloring, WlError> {
        match self.stable_at {
            Some(t) => Ok(&self.per_iteration[t]),
            None => Err(WlError::NotStable(self.per_iteration.len() - 1)),
        }
    }

    pub fn last(&self) -> &Coloring {
        self.per_iteration.last().expect("trace holds the initial coloring")
    }
}

fn refine_once(g: &Graph, c: &Coloring) -> Coloring {
    let adj = g.adjacency();
    let mut ids: HashMap<(usize, Vec<usize>), usize> = HashMap::new();
    let mut next = Vec::with_capacity(c.len());
    let mut nbr = Vec::new();
    for (v, around) in adj.iter().enumerate().take(g.num_nodes()) {
        nbr.clear();
        nbr.extend(around.iter().map(|&u| c.0[u]));
        nbr.sort_unstable();
        let fresh = ids.len();
        let id = *ids.entry((c.0[v], nbr.clone())).or_insert(fresh);
        next.push(id);
    }
    Coloring(next)
}

/// Refines `init` until the class count stops changing or `max_iter`
/// refinement steps have run.
pub fn wl_refine(g: &Graph, init: &Coloring, max_iter: usize) -> Result<ColoringTrace, WlError> {
    if init.len() != g.num_nodes() {
        return Err(WlError::InitLength {
            colors: init.len(),
            nodes: g.num_nodes(),
        });
    }
    if max_iter == 0 {
        return Err(WlError::ZeroIterations);
    }
    let mut per_iteration = vec![Coloring::new(&init.0)];
    let mut stable_at = None;
    for t in 1..=max_iter {
        let prev = per_iteration.last().unwrap();
        let next = refine_once(g, prev);
        let same = next.num_classes() == prev.num_classes();
        debug_assert!(!same || next.same_partition(prev));
        per_iteration.push(next);
        if same {
            stable_at = Some(t);
            break;
        }
    }
    let num_classes = per_iteration.last().unwrap().num_classes();
    Ok(ColoringTrace {
        per_iteration,
        stable_at,
        num_classes,
    })
}

/// Refinement with the default budget of `num_nodes` iterations.
pub fn wl_refine_default(g: &Graph, init: &Coloring) -> Result<ColoringTrace, WlError> {
    wl_refine(g, init, g.num_nodes().max(1))
}

/// Closed-form coloring of an `m`-cycle started from `[0, 1, ..., 1]` after
/// `t` refinement steps.
pub fn cycle_color_oracle(m: usize, t: usize) -> Result<Coloring, WlError> {
    if m < 3 {
        return Err(WlError::CycleTooShort(m));
    }
    if t > m / 2 {
        return Err(WlError::IterationOutOfRange { m, t, max: m / 2 });
    }
    let colors = (0..m)
        .map(|i| {
            if i <= t {
                i
            } else if i < m - t {
                t + 1
            } else {
                m - i
            }
        })
        .collect();
    Ok(Coloring(colors))
}

/// Initial `[0, 1, ..., 1]` coloring used by the cycle oracle.
pub fn single_marked_init(m: usize) -> Coloring {
    let mut c = vec![1; m];
    if let Some(first) = c.first_mut() {
        *first = 0;
    }
    Coloring::new(&c)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Symmetry {
    Symmetric,
    Asymmetric,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SymmetryVerdict {
    pub symmetry: Symmetry,
    pub iterations: usize,
}

/// Uniformly colored refinement of `[m,n]` to stability; symmetric iff the
/// two degree-3 nodes end in the same class.
pub fn dicyclic_symmetric_by_wl(spec: DicyclicSpec) -> Result<SymmetryVerdict, crate::Error> {
    let g = make_dicyclic(spec)?;
    let trace = wl_refine(&g, &Coloring::uniform(g.num_nodes()), g.num_nodes())?;
    let stable = trace.stable()?;
    let (a, b) = g.marked_nodes().expect("dicyclic graphs carry their bridge pair");
    let symmetry = if stable.0[a] == stable.0[b] {
        Symmetry::Symmetric
    } else {
        Symmetry::Asymmetric
    };
    Ok(SymmetryVerdict {
        symmetry,
        iterations: trace.stable_at.unwrap_or(0),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Distinguish {
    CertainlyNonIsomorphic,
    PossiblyIsomorphic,
}

/// Refines the disjoint union (feature-based initial colors) and compares the
/// stable color multisets of the two halves.
pub fn wl_distinguish(g1: &Graph, g2: &Graph) -> Distinguish {
    if g1.num_nodes() != g2.num_nodes()
        || g1.num_edges() != g2.num_edges()
        || g1.feature_dim() != g2.feature_dim()
    {
        return Distinguish::CertainlyNonIsomorphic;
    }
    let union = disjoint_union(g1, g2).expect("feature dims checked above");
    let init = Coloring::from_features(&union);
    let trace = wl_refine(&union, &init, union.num_nodes().max(1))
        .expect("init has one color per node and budget >= 1");
    let last = trace.last();
    let n1 = g1.num_nodes();
    let mut left = last.0[..n1].to_vec();
    let mut right = last.0[n1..].to_vec();
    left.sort_unstable();
    right.sort_unstable();
    if left == right {
        Distinguish::PossiblyIsomorphic
    } else {
        Distinguish::CertainlyNonIsomorphic
    }
}
