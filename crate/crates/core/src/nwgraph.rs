//! Newman-Watts graphs with i.i.d. Exp(1) edge weights.
//!
//! Vertices are `0..n`. The cycle edge `(i, i+1 mod n)` has id `i`, so the
//! first `n` edge ids are exactly the cycle; shortcuts follow. Every other
//! unordered pair `{i, j}` with `|i - j| != 1 (mod n)` is a shortcut
//! candidate, included independently with probability `rho / n`.

use std::io::{self, Write};

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::format::f17;
use crate::rng;

#[derive(Debug, Error, PartialEq)]
pub enum GraphError {
    #[error("invalid graph config: {0}")]
    InvalidConfig(String),
    #[error("pair index {k} out of range for n = {n} (candidate pairs: {total})")]
    PairIndexOutOfRange { k: u64, n: usize, total: u64 },
    #[error("({i}, {j}) is not a shortcut candidate pair for n = {n}")]
    NotACandidate { i: usize, j: usize, n: usize },
    #[error("invalid edge list: {0}")]
    InvalidEdges(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EdgeKind {
    Cycle,
    Shortcut,
}

impl EdgeKind {
    pub fn as_str(self) -> &'static str {
        match self {
            EdgeKind::Cycle => "cycle",
            EdgeKind::Shortcut => "shortcut",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GraphConfig {
    pub n: usize,
    pub rho: f64,
    pub seed: u64,
}

impl GraphConfig {
    pub fn new(n: usize, rho: f64, seed: u64) -> Self {
        Self { n, rho, seed }
    }

    pub fn validate(&self) -> Result<(), GraphError> {
        if self.n < 3 {
            return Err(GraphError::InvalidConfig(format!("n must be >= 3, got {}", self.n)));
        }
        if self.n > u32::MAX as usize {
            return Err(GraphError::InvalidConfig(format!("n = {} exceeds u32 ids", self.n)));
        }
        if !(self.rho.is_finite() && self.rho >= 0.0) {
            return Err(GraphError::InvalidConfig(format!(
                "rho must be finite and >= 0, got {}",
                self.rho
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Edge {
    pub u: usize,
    pub v: usize,
    pub kind: EdgeKind,
    pub weight: f64,
}

/// One entry of a vertex's incidence list.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Incidence {
    pub to: u32,
    pub edge: u32,
    pub weight: f64,
}

/// An immutable weighted Newman-Watts instance.
#[derive(Debug, Clone)]
pub struct WeightedGraph {
    n: usize,
    edges: Vec<Edge>,
    offsets: Vec<usize>,
    incidence: Vec<Incidence>,
}

/// Number of shortcut candidate pairs, `n (n - 3) / 2`.
pub fn candidate_pairs(n: usize) -> u64 {
    if n < 3 {
        return 0;
    }
    let n = n as u64;
    n * (n - 3) / 2
}

/// Maps a linear index to its candidate pair `(i, j)`, `i < j`.
///
/// Pairs are ordered lexicographically: row `0` holds `(0, 2) .. (0, n-2)`,
/// row `i >= 1` holds `(i, i+2) .. (i, n-1)`.
pub fn pair_index(n: usize, k: u64) -> Result<(usize, usize), GraphError> {
    let total = candidate_pairs(n);
    if k >= total {
        return Err(GraphError::PairIndexOutOfRange { k, n, total });
    }
    let nn = n as u64;
    let row0 = nn - 3;
    if k < row0 {
        return Ok((0, (k + 2) as usize));
    }
    let kp = k - row0;
    // Rows i >= 1 start at offset start(m) = m (2n - 5 - m) / 2 with m = i - 1.
    let start = |m: u64| m * (2 * nn - 5 - m) / 2;
    let b = (2 * nn - 5) as f64;
    let disc = (b * b - 8.0 * kp as f64).max(0.0);
    let mut m = ((b - disc.sqrt()) / 2.0).floor().max(0.0) as u64;
    m = m.min(nn - 4);
    while m > 0 && start(m) > kp {
        m -= 1;
    }
    while m < nn - 4 && start(m + 1) <= kp {
        m += 1;
    }
    let i = m + 1;
    let j = i + 2 + (kp - start(m));
    Ok((i as usize, j as usize))
}

/// Inverse of [`pair_index`]; accepts the pair in either order.
pub fn pair_to_index(n: usize, a: usize, b: usize) -> Result<u64, GraphError> {
    let (i, j) = if a < b { (a, b) } else { (b, a) };
    let bad = GraphError::NotACandidate { i, j, n };
    if n < 3 || j >= n || j - i < 2 || (i == 0 && j == n - 1) {
        return Err(bad);
    }
    let nn = n as u64;
    let (i, j) = (i as u64, j as u64);
    if i == 0 {
        return Ok(j - 2);
    }
    let m = i - 1;
    Ok((nn - 3) + m * (2 * nn - 5 - m) / 2 + (j - i - 2))
}

/// Draws the shortcut candidate indices included with probability `p`, in
/// increasing order, by geometric skipping.
fn sample_shortcut_indices<R: Rng + ?Sized>(total: u64, p: f64, rng: &mut R) -> Vec<u64> {
    if total == 0 || p <= 0.0 {
        return Vec::new();
    }
    if p >= 1.0 {
        return (0..total).collect();
    }
    let mut out = Vec::with_capacity((total as f64 * p * 1.1) as usize + 16);
    let log_q = (-p).ln_1p();
    let mut idx: u64 = 0;
    loop {
        let u = rng::open01(rng);
        let skip = (u.ln() / log_q).floor();
        if !(skip < (total - idx) as f64) {
            break;
        }
        idx += skip as u64;
        out.push(idx);
        idx += 1;
        if idx >= total {
            break;
        }
    }
    out
}

pub fn generate(config: &GraphConfig) -> Result<WeightedGraph, GraphError> {
    config.validate()?;
    let n = config.n;
    let mut pair_rng = rng::stream(config.seed, "nwgraph/shortcuts", &[]);
    let mut weight_rng = rng::stream(config.seed, "nwgraph/weights", &[]);

    let picks = sample_shortcut_indices(candidate_pairs(n), config.rho / n as f64, &mut pair_rng);
    let mut edges = Vec::with_capacity(n + picks.len());
    for i in 0..n {
        edges.push(Edge {
            u: i,
            v: (i + 1) % n,
            kind: EdgeKind::Cycle,
            weight: 0.0,
        });
    }
    for k in picks {
        let (u, v) = pair_index(n, k)?;
        edges.push(Edge {
            u,
            v,
            kind: EdgeKind::Shortcut,
            weight: 0.0,
        });
    }
    for e in edges.iter_mut() {
        e.weight = rng::exp1(&mut weight_rng);
    }
    Ok(WeightedGraph::build(n, edges))
}

impl WeightedGraph {
    fn build(n: usize, edges: Vec<Edge>) -> Self {
        let mut deg = vec![0usize; n + 1];
        for e in &edges {
            deg[e.u] += 1;
            deg[e.v] += 1;
        }
        let mut offsets = vec![0usize; n + 1];
        for v in 0..n {
            offsets[v + 1] = offsets[v] + deg[v];
        }
        let mut fill = offsets.clone();
        let mut incidence = vec![
            Incidence {
                to: 0,
                edge: 0,
                weight: 0.0
            };
            offsets[n]
        ];
        for (id, e) in edges.iter().enumerate() {
            incidence[fill[e.u]] = Incidence {
                to: e.v as u32,
                edge: id as u32,
                weight: e.weight,
            };
            fill[e.u] += 1;
            incidence[fill[e.v]] = Incidence {
                to: e.u as u32,
                edge: id as u32,
                weight: e.weight,
            };
            fill[e.v] += 1;
        }
        Self {
            n,
            edges,
            offsets,
            incidence,
        }
    }

    /// Builds a graph from an explicit edge list. The list must start with
    /// the `n` cycle edges in order (`(i, i+1 mod n)` at index `i`); any
    /// further edges must be valid, distinct shortcuts. Weights must be > 0.
    pub fn from_edges(n: usize, edges: Vec<Edge>) -> Result<Self, GraphError> {
        if n < 3 {
            return Err(GraphError::InvalidEdges(format!("n must be >= 3, got {n}")));
        }
        if edges.len() < n {
            return Err(GraphError::InvalidEdges("missing cycle edges".into()));
        }
        let mut seen = std::collections::HashSet::new();
        for (id, e) in edges.iter().enumerate() {
            if !(e.weight.is_finite() && e.weight > 0.0) {
                return Err(GraphError::InvalidEdges(format!("edge {id} has weight {}", e.weight)));
            }
            if id < n {
                let ok = e.kind == EdgeKind::Cycle
                    && ((e.u == id && e.v == (id + 1) % n) || (e.v == id && e.u == (id + 1) % n));
                if !ok {
                    return Err(GraphError::InvalidEdges(format!("edge {id} must be cycle edge ({id}, {})", (id + 1) % n)));
                }
            } else {
                if e.kind != EdgeKind::Shortcut {
                    return Err(GraphError::InvalidEdges(format!("edge {id} must be a shortcut")));
                }
                let k = pair_to_index(n, e.u, e.v)
                    .map_err(|_| GraphError::InvalidEdges(format!("edge {id} ({}, {}) is not a shortcut pair", e.u, e.v)))?;
                if !seen.insert(k) {
                    return Err(GraphError::InvalidEdges(format!("duplicate shortcut ({}, {})", e.u, e.v)));
                }
            }
        }
        Ok(Self::build(n, edges))
    }

    /// Same topology with the given weights, one per edge id.
    pub fn with_weights(&self, weights: &[f64]) -> Result<Self, GraphError> {
        if weights.len() != self.edges.len() {
            return Err(GraphError::InvalidEdges(format!(
                "expected {} weights, got {}",
                self.edges.len(),
                weights.len()
            )));
        }
        let edges = self
            .edges
            .iter()
            .zip(weights)
            .map(|(e, &w)| Edge { weight: w, ..*e })
            .collect();
        Self::from_edges(self.n, edges)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn edge(&self, id: usize) -> &Edge {
        &self.edges[id]
    }

    pub fn edge_kind(&self, id: usize) -> EdgeKind {
        if id < self.n {
            EdgeKind::Cycle
        } else {
            EdgeKind::Shortcut
        }
    }

    pub fn shortcut_count(&self) -> usize {
        self.edges.len() - self.n
    }

    #[inline]
    pub fn neighbors(&self, v: usize) -> &[Incidence] {
        &self.incidence[self.offsets[v]..self.offsets[v + 1]]
    }

    pub fn degree(&self, v: usize) -> usize {
        self.offsets[v + 1] - self.offsets[v]
    }

    /// Writes `u,v,kind,weight` rows, weights with 17 significant digits.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "u,v,kind,weight")?;
        for e in &self.edges {
            writeln!(w, "{},{},{},{}", e.u, e.v, e.kind.as_str(), f17(e.weight))?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// All candidate pairs in canonical order by brute force.
    fn enumerate_pairs(n: usize) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for i in 0..n {
            for j in i + 1..n {
                let d = j - i;
                if d != 1 && d != n - 1 {
                    out.push((i, j));
                }
            }
        }
        out
    }

    #[test]
    fn n4_candidates() {
        assert_eq!(enumerate_pairs(4), vec![(0, 2), (1, 3)]);
        assert_eq!(candidate_pairs(4), 2);
        assert_eq!(pair_index(4, 0).unwrap(), (0, 2));
        assert_eq!(pair_index(4, 1).unwrap(), (1, 3));
        assert!(pair_index(4, 2).is_err());
    }

    #[test]
    fn small_n_counts() {
        assert_eq!(candidate_pairs(3), 0);
        assert_eq!(candidate_pairs(5), 5);
        for n in 3..40 {
            assert_eq!(candidate_pairs(n) as usize, enumerate_pairs(n).len());
        }
    }

    #[test]
    fn pair_index_matches_enumeration() {
        for n in 3..60 {
            for (k, &p) in enumerate_pairs(n).iter().enumerate() {
                assert_eq!(pair_index(n, k as u64).unwrap(), p, "n={n} k={k}");
                assert_eq!(pair_to_index(n, p.0, p.1).unwrap(), k as u64);
                assert_eq!(pair_to_index(n, p.1, p.0).unwrap(), k as u64);
            }
        }
    }

    #[test]
    fn pair_index_round_trip_n6() {
        for k in 0..candidate_pairs(6) {
            let (i, j) = pair_index(6, k).unwrap();
            assert_eq!(pair_to_index(6, i, j).unwrap(), k);
        }
    }

    #[test]
    fn non_candidates_rejected() {
        assert!(pair_to_index(6, 0, 1).is_err());
        assert!(pair_to_index(6, 0, 5).is_err());
        assert!(pair_to_index(6, 2, 2).is_err());
        assert!(pair_to_index(6, 2, 6).is_err());
    }

    #[test]
    fn pair_index_large_n_edges() {
        let n = 1_000_000;
        let total = candidate_pairs(n);
        for k in [0, 1, n as u64 - 4, n as u64 - 3, total / 2, total - 2, total - 1] {
            let (i, j) = pair_index(n, k).unwrap();
            assert_eq!(pair_to_index(n, i, j).unwrap(), k);
        }
        assert_eq!(pair_index(n, total - 1).unwrap(), (n - 3, n - 1));
    }

    #[test]
    fn rho_zero_gives_bare_cycle() {
        let g = generate(&GraphConfig::new(10, 0.0, 99)).unwrap();
        assert_eq!(g.edges().len(), 10);
        assert!(g.edges().iter().all(|e| e.kind == EdgeKind::Cycle));
        assert!((0..10).all(|v| g.degree(v) == 2));
    }

    #[test]
    fn invalid_configs() {
        assert!(generate(&GraphConfig::new(2, 1.0, 0)).is_err());
        assert!(generate(&GraphConfig::new(10, -0.5, 0)).is_err());
        assert!(generate(&GraphConfig::new(10, f64::NAN, 0)).is_err());
    }

    #[test]
    fn n3_has_no_shortcuts() {
        let g = generate(&GraphConfig::new(3, 50.0, 1)).unwrap();
        assert_eq!(g.edges().len(), 3);
    }

    #[test]
    fn dense_limit_includes_every_pair() {
        let g = generate(&GraphConfig::new(7, 7.0, 1)).unwrap();
        assert_eq!(g.shortcut_count() as u64, candidate_pairs(7));
    }

    #[test]
    fn from_edges_validates() {
        let cyc = |w: f64| -> Vec<Edge> {
            (0..5)
                .map(|i| Edge { u: i, v: (i + 1) % 5, kind: EdgeKind::Cycle, weight: w })
                .collect()
        };
        assert!(WeightedGraph::from_edges(5, cyc(1.0)).is_ok());
        assert!(WeightedGraph::from_edges(5, cyc(0.0)).is_err());
        let mut e = cyc(1.0);
        e.push(Edge { u: 0, v: 1, kind: EdgeKind::Shortcut, weight: 1.0 });
        assert!(WeightedGraph::from_edges(5, e).is_err());
        let mut e = cyc(1.0);
        e.push(Edge { u: 0, v: 2, kind: EdgeKind::Shortcut, weight: 1.0 });
        e.push(Edge { u: 2, v: 0, kind: EdgeKind::Shortcut, weight: 1.0 });
        assert!(WeightedGraph::from_edges(5, e).is_err());
    }

    #[test]
    fn csv_dump_header_and_rows() {
        let g = generate(&GraphConfig::new(6, 1.0, 5)).unwrap();
        let mut buf = Vec::new();
        g.write_csv(&mut buf).unwrap();
        let s = String::from_utf8(buf).unwrap();
        let mut lines = s.lines();
        assert_eq!(lines.next(), Some("u,v,kind,weight"));
        let first: Vec<&str> = lines.next().unwrap().split(',').collect();
        assert_eq!(&first[..3], &["0", "1", "cycle"]);
        let w: f64 = first[3].parse().unwrap();
        assert_eq!(w, g.edge(0).weight);
        assert_eq!(s.lines().count(), g.edges().len() + 1);
    }

    proptest! {
        #[test]
        fn generate_invariants(n in 3usize..200, rho in 0.0f64..6.0, seed: u64) {
            let cfg = GraphConfig::new(n, rho, seed);
            let g = generate(&cfg).unwrap();
            let h = generate(&cfg).unwrap();
            prop_assert_eq!(g.edges(), h.edges());
            for i in 0..n {
                let e = g.edge(i);
                prop_assert_eq!(e.kind, EdgeKind::Cycle);
                prop_assert_eq!((e.u, e.v), (i, (i + 1) % n));
            }
            let mut seen = std::collections::HashSet::new();
            for e in &g.edges()[n..] {
                prop_assert!(pair_to_index(n, e.u, e.v).is_ok());
                prop_assert!(seen.insert((e.u.min(e.v), e.u.max(e.v))));
            }
            prop_assert!(g.edges().iter().all(|e| e.weight > 0.0));
            let deg_sum: usize = (0..n).map(|v| g.degree(v)).sum();
            prop_assert_eq!(deg_sum, 2 * g.edges().len());
        }
    }
}
