//! First passage percolation on a [`WeightedGraph`]: shortest-weight trees,
//! point-to-point distances, collision-based connection of two trees and
//! epidemic curves.
//!
//! The inner loop is a binary-heap Dijkstra. The exploration-process view
//! (an active set of frontier edges with remaining lifetimes) is produced on
//! demand by [`Explorer::snapshot`]. By memorylessness of Exp(1) the two
//! views describe the same object.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use serde::Serialize;
use thiserror::Error;

use crate::nwgraph::{EdgeKind, WeightedGraph};
use crate::theory::ModelConstants;

#[derive(Debug, Error, PartialEq)]
pub enum FppError {
    #[error("vertex {v} out of range for n = {n}")]
    UnknownVertex { v: usize, n: usize },
    #[error("collision_connect needs distinct endpoints, got {0} twice")]
    SameEndpoints(usize),
    #[error("time must be finite and >= 0, got {0}")]
    InvalidTime(f64),
    #[error("frontier is empty, the whole graph has been explored")]
    EmptyFrontier,
    #[error("collision log is partial: the horizon was not reached")]
    PartialLog,
}

/// Vertex type in the branching-process picture.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum Color {
    Red,
    Blue,
}

impl Color {
    pub fn of(kind: EdgeKind) -> Color {
        match kind {
            EdgeKind::Cycle => Color::Red,
            EdgeKind::Shortcut => Color::Blue,
        }
    }

    pub fn index(self) -> usize {
        match self {
            Color::Red => 0,
            Color::Blue => 1,
        }
    }

    pub fn letter(self) -> char {
        match self {
            Color::Red => 'R',
            Color::Blue => 'B',
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Stop {
    /// Explore every vertex at distance `<= T`.
    AtTime(f64),
    /// Explore exactly `m` vertices (the root is the first split).
    AtSplits(usize),
    UntilTarget(usize),
}

/// `(N_R, N_B, A_R, A_B)`. The root counts as blue.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct Counts {
    pub n_r: u64,
    pub n_b: u64,
    pub a_r: u64,
    pub a_b: u64,
}

impl Counts {
    pub fn explored(&self) -> u64 {
        self.n_r + self.n_b
    }

    pub fn active(&self) -> u64 {
        self.a_r + self.a_b
    }
}

/// What one settled vertex did to the frontier, indexed `[red, blue]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitRecord {
    pub vertex: usize,
    pub distance: f64,
    pub color: Color,
    pub added: [u32; 2],
    pub removed: [u32; 2],
}

impl SplitRecord {
    /// No frontier entry other than the discovering edge was consumed,
    /// i.e. no repeated-label event happened at this split.
    pub fn tree_like(&self, is_root: bool) -> bool {
        let r = self.removed[0] + self.removed[1];
        if is_root {
            r == 0
        } else {
            r == 1
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ExploredVertex {
    pub vertex: usize,
    pub distance: f64,
    pub hops: u32,
    pub color: Color,
    pub parent: Option<usize>,
}

/// One frontier edge: `parent` explored, `vertex` not. The same vertex may
/// appear several times.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FrontierEntry {
    pub vertex: usize,
    pub remaining: f64,
    pub color: Color,
    pub parent: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ShortestWeightTree {
    pub root: usize,
    pub frozen_at: f64,
    pub explored: Vec<ExploredVertex>,
    pub frontier: Vec<FrontierEntry>,
    pub counts: Counts,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PathResult {
    pub weight: f64,
    pub hopcount: u32,
    pub path: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct HeapItem {
    dist: f64,
    v: u32,
}

impl Eq for HeapItem {}

impl Ord for HeapItem {
    // Reversed so the max-heap pops the smallest distance, lower id first.
    fn cmp(&self, o: &Self) -> Ordering {
        o.dist.total_cmp(&self.dist).then_with(|| o.v.cmp(&self.v))
    }
}

impl PartialOrd for HeapItem {
    fn partial_cmp(&self, o: &Self) -> Option<Ordering> {
        Some(self.cmp(o))
    }
}

const NONE: u32 = u32::MAX;

/// Incremental single-source Dijkstra with exploration-process bookkeeping.
///
/// Per-vertex state is dense; [`Explorer::reset`] only clears the vertices
/// touched by the previous run, so one explorer can serve many sources on a
/// large graph.
pub struct Explorer<'g> {
    g: &'g WeightedGraph,
    source: usize,
    dist: Vec<f64>,
    hops: Vec<u32>,
    parent: Vec<u32>,
    parent_edge: Vec<u32>,
    settled: Vec<bool>,
    touched: Vec<u32>,
    heap: BinaryHeap<HeapItem>,
    counts: Counts,
    order: Vec<u32>,
    log: Vec<SplitRecord>,
    keep_log: bool,
    last: f64,
}

impl<'g> Explorer<'g> {
    pub fn new(g: &'g WeightedGraph, source: usize) -> Result<Self, FppError> {
        let n = g.n();
        let mut e = Explorer {
            g,
            source,
            dist: vec![f64::INFINITY; n],
            hops: vec![0; n],
            parent: vec![NONE; n],
            parent_edge: vec![NONE; n],
            settled: vec![false; n],
            touched: Vec::new(),
            heap: BinaryHeap::new(),
            counts: Counts::default(),
            order: Vec::new(),
            log: Vec::new(),
            keep_log: false,
            last: 0.0,
        };
        e.reset(source)?;
        Ok(e)
    }

    /// Turns on the per-split log (off by default).
    pub fn with_log(mut self) -> Self {
        self.keep_log = true;
        self
    }

    pub fn reset(&mut self, source: usize) -> Result<(), FppError> {
        let n = self.g.n();
        if source >= n {
            return Err(FppError::UnknownVertex { v: source, n });
        }
        for &t in &self.touched {
            let t = t as usize;
            self.dist[t] = f64::INFINITY;
            self.hops[t] = 0;
            self.parent[t] = NONE;
            self.parent_edge[t] = NONE;
            self.settled[t] = false;
        }
        self.touched.clear();
        self.heap.clear();
        self.order.clear();
        self.log.clear();
        self.counts = Counts::default();
        self.last = 0.0;
        self.source = source;
        self.dist[source] = 0.0;
        self.touched.push(source as u32);
        self.heap.push(HeapItem { dist: 0.0, v: source as u32 });
        Ok(())
    }

    pub fn graph(&self) -> &'g WeightedGraph {
        self.g
    }

    pub fn source(&self) -> usize {
        self.source
    }

    /// Distance and id of the next vertex to be settled.
    pub fn peek(&mut self) -> Option<(f64, usize)> {
        while let Some(top) = self.heap.peek() {
            let v = top.v as usize;
            if self.settled[v] || top.dist != self.dist[v] {
                self.heap.pop();
                continue;
            }
            return Some((top.dist, v));
        }
        None
    }

    /// Settles the next vertex and returns it.
    pub fn step(&mut self) -> Option<usize> {
        let (d, v) = self.peek()?;
        self.heap.pop();
        self.settled[v] = true;
        self.last = d;
        self.order.push(v as u32);
        let color = self.color(v).expect("settled vertex has a color");
        match color {
            Color::Red => self.counts.n_r += 1,
            Color::Blue => self.counts.n_b += 1,
        }
        let mut added = [0u32; 2];
        let mut removed = [0u32; 2];
        let h = self.hops[v] + 1;
        for inc in self.g.neighbors(v) {
            let x = inc.to as usize;
            let c = Color::of(self.g.edge_kind(inc.edge as usize)).index();
            if self.settled[x] {
                removed[c] += 1;
                continue;
            }
            added[c] += 1;
            let nd = d + inc.weight;
            let better = nd < self.dist[x] || (nd == self.dist[x] && (v as u32) < self.parent[x]);
            if better {
                if self.dist[x].is_infinite() {
                    self.touched.push(x as u32);
                }
                self.dist[x] = nd;
                self.hops[x] = h;
                self.parent[x] = v as u32;
                self.parent_edge[x] = inc.edge;
                self.heap.push(HeapItem { dist: nd, v: x as u32 });
            }
        }
        self.counts.a_r = self.counts.a_r + u64::from(added[0]) - u64::from(removed[0]);
        self.counts.a_b = self.counts.a_b + u64::from(added[1]) - u64::from(removed[1]);
        if self.keep_log {
            self.log.push(SplitRecord {
                vertex: v,
                distance: d,
                color,
                added,
                removed,
            });
        }
        Some(v)
    }

    pub fn run(&mut self, stop: Stop) -> Result<(), FppError> {
        match stop {
            Stop::AtTime(t) => {
                if !(t.is_finite() && t >= 0.0) {
                    return Err(FppError::InvalidTime(t));
                }
                while let Some((d, _)) = self.peek() {
                    if d > t {
                        break;
                    }
                    self.step();
                }
            }
            Stop::AtSplits(m) => {
                while (self.order.len()) < m && self.step().is_some() {}
            }
            Stop::UntilTarget(v) => {
                let n = self.g.n();
                if v >= n {
                    return Err(FppError::UnknownVertex { v, n });
                }
                while !self.settled[v] && self.step().is_some() {}
            }
        }
        Ok(())
    }

    /// Settles everything.
    pub fn run_all(&mut self) {
        while self.step().is_some() {}
    }

    pub fn is_explored(&self, v: usize) -> bool {
        self.settled[v]
    }

    /// Unexplored but adjacent to an explored vertex.
    pub fn is_active(&self, v: usize) -> bool {
        !self.settled[v] && self.dist[v].is_finite()
    }

    /// Final distance if explored, best tentative distance if active,
    /// infinity otherwise.
    pub fn dist(&self, v: usize) -> f64 {
        self.dist[v]
    }

    pub fn hops(&self, v: usize) -> u32 {
        self.hops[v]
    }

    pub fn parent(&self, v: usize) -> Option<usize> {
        match self.parent[v] {
            NONE => None,
            p => Some(p as usize),
        }
    }

    /// Red if discovered over a cycle edge, blue over a shortcut; the root is
    /// blue. `None` for untouched vertices.
    pub fn color(&self, v: usize) -> Option<Color> {
        if v == self.source {
            return Some(Color::Blue);
        }
        match self.parent_edge[v] {
            NONE => None,
            e => Some(Color::of(self.g.edge_kind(e as usize))),
        }
    }

    pub fn counts(&self) -> Counts {
        self.counts
    }

    pub fn explored_order(&self) -> impl Iterator<Item = usize> + '_ {
        self.order.iter().map(|&v| v as usize)
    }

    pub fn explored_count(&self) -> usize {
        self.order.len()
    }

    pub fn split_log(&self) -> &[SplitRecord] {
        &self.log
    }

    /// Distance of the most recently settled vertex.
    pub fn last_distance(&self) -> f64 {
        self.last
    }

    /// Vertices from the source to `v` along parent pointers.
    pub fn path_to(&self, v: usize) -> Vec<usize> {
        let mut p = vec![v];
        let mut x = v;
        while let Some(y) = self.parent(x) {
            p.push(y);
            x = y;
        }
        p.reverse();
        p
    }

    /// The exploration-process view at time `t` (normally the stopping time).
    pub fn snapshot(&self, t: f64) -> ShortestWeightTree {
        let explored = self
            .order
            .iter()
            .map(|&v| {
                let v = v as usize;
                ExploredVertex {
                    vertex: v,
                    distance: self.dist[v],
                    hops: self.hops[v],
                    color: self.color(v).expect("explored"),
                    parent: self.parent(v),
                }
            })
            .collect();
        let mut frontier = Vec::new();
        for &p in &self.order {
            let p = p as usize;
            for inc in self.g.neighbors(p) {
                let x = inc.to as usize;
                if !self.settled[x] {
                    frontier.push(FrontierEntry {
                        vertex: x,
                        remaining: self.dist[p] + inc.weight - t,
                        color: Color::of(self.g.edge_kind(inc.edge as usize)),
                        parent: p,
                    });
                }
            }
        }
        ShortestWeightTree {
            root: self.source,
            frozen_at: t,
            explored,
            frontier,
            counts: self.counts,
        }
    }
}

fn check_vertex(g: &WeightedGraph, v: usize) -> Result<(), FppError> {
    if v >= g.n() {
        return Err(FppError::UnknownVertex { v, n: g.n() });
    }
    Ok(())
}

pub fn explore(g: &WeightedGraph, source: usize, stop: Stop) -> Result<ShortestWeightTree, FppError> {
    let mut e = Explorer::new(g, source)?;
    e.run(stop)?;
    let t = match stop {
        Stop::AtTime(t) => t,
        _ => e.last_distance(),
    };
    Ok(e.snapshot(t))
}

pub fn distance(g: &WeightedGraph, u: usize, v: usize) -> Result<PathResult, FppError> {
    check_vertex(g, v)?;
    let mut e = Explorer::new(g, u)?;
    e.run(Stop::UntilTarget(v))?;
    Ok(PathResult {
        weight: e.dist(v),
        hopcount: e.hops(v),
        path: e.path_to(v),
    })
}

/// A V-explored vertex that was in the frozen U-frontier. `q` is its color
/// in SWT^V, `r` its color as a U-frontier entry.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Collision {
    /// `d_V(x) - t_freeze`.
    pub s: f64,
    pub vertex: usize,
    pub q: Color,
    pub r: Color,
    /// Remaining U-lifetime of this frontier entry at the freeze.
    pub remaining: f64,
    /// Further frontier entries of an already hit vertex. They are logged
    /// but are never minimal and are not counted in the streams.
    pub duplicate: bool,
    /// The V-path to the vertex avoids the labels explored in SWT^U. Only
    /// primary collisions belong to the collision point process: SWT^V is
    /// grown on the labels SWT^U left unused, so the rest are ghosts there.
    /// They still compete for the shortest path.
    pub primary: bool,
    pub hops_u: u32,
    pub hops_v: u32,
}

impl Collision {
    pub fn pair(&self) -> ColorPair {
        ColorPair::from_colors(self.q, self.r)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CollisionLog {
    pub t_freeze: f64,
    pub horizon: Option<f64>,
    pub collisions: Vec<Collision>,
    /// SWT^V was grown at least to `t_freeze + horizon` (or the graph ran out).
    pub horizon_reached: bool,
    /// `v` was already explored by the frozen SWT^U.
    pub short_circuit: bool,
    /// U-frontier counts at the freeze, for the W estimate.
    pub u_counts: Counts,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CollisionOutcome {
    pub path: PathResult,
    pub log: CollisionLog,
    /// SWT^V frontier counts when SWT^V passed `t_freeze`, if it got there.
    pub v_counts_at_freeze: Option<Counts>,
}

/// Connects `u` and `v` through the collision process: SWT^U is frozen at
/// `t_freeze`, SWT^V grows until no better collision is possible and, if
/// `horizon` is given, at least to `t_freeze + horizon`.
pub fn collision_connect(
    g: &WeightedGraph,
    u: usize,
    v: usize,
    t_freeze: f64,
    horizon: Option<f64>,
) -> Result<CollisionOutcome, FppError> {
    check_vertex(g, u)?;
    check_vertex(g, v)?;
    if u == v {
        return Err(FppError::SameEndpoints(u));
    }
    if !(t_freeze.is_finite() && t_freeze > 0.0) {
        return Err(FppError::InvalidTime(t_freeze));
    }
    if let Some(h) = horizon {
        if !h.is_finite() {
            return Err(FppError::InvalidTime(h));
        }
    }
    let mut eu = Explorer::new(g, u)?;
    eu.run(Stop::AtTime(t_freeze))?;
    let u_counts = eu.counts();
    if eu.is_explored(v) {
        return Ok(CollisionOutcome {
            path: PathResult {
                weight: eu.dist(v),
                hopcount: eu.hops(v),
                path: eu.path_to(v),
            },
            log: CollisionLog {
                t_freeze,
                horizon,
                collisions: Vec::new(),
                horizon_reached: false,
                short_circuit: true,
                u_counts,
            },
            v_counts_at_freeze: None,
        });
    }

    let mut ev = Explorer::new(g, v)?;
    let mut clean = vec![false; g.n()];
    let mut best = f64::INFINITY;
    let mut best_x = usize::MAX;
    let mut collisions = Vec::new();
    let mut v_counts_at_freeze = None;
    let target = horizon.map(|h| t_freeze + h).unwrap_or(f64::NEG_INFINITY);
    let horizon_reached;
    loop {
        let Some((d, x)) = ev.peek() else {
            horizon_reached = horizon.is_some();
            break;
        };
        if v_counts_at_freeze.is_none() && d > t_freeze {
            v_counts_at_freeze = Some(ev.counts());
        }
        let done_min = d + t_freeze >= best;
        if done_min && d > target {
            horizon_reached = horizon.is_some();
            break;
        }
        ev.step();
        clean[x] = match ev.parent(x) {
            None => true,
            Some(p) => clean[p] && !eu.is_explored(p),
        };
        if !eu.is_active(x) {
            continue;
        }
        let primary = clean[x];
        let q = ev.color(x).expect("explored");
        let main_w = eu.dist(x);
        if d + main_w < best {
            best = d + main_w;
            best_x = x;
        }
        let mut first = true;
        let mut extra = Vec::new();
        for inc in g.neighbors(x) {
            let p = inc.to as usize;
            if !eu.is_explored(p) {
                continue;
            }
            let w = eu.dist(p) + inc.weight;
            let r = Color::of(g.edge_kind(inc.edge as usize));
            // The tentative parent is the entry realising the U-distance.
            if first && eu.parent(x) == Some(p) {
                first = false;
                collisions.push(Collision {
                    s: d - t_freeze,
                    vertex: x,
                    q,
                    r,
                    remaining: w - t_freeze,
                    duplicate: false,
                    primary,
                    hops_u: eu.hops(x),
                    hops_v: ev.hops(x),
                });
            } else {
                extra.push(Collision {
                    s: d - t_freeze,
                    vertex: x,
                    q,
                    r,
                    remaining: w - t_freeze,
                    duplicate: true,
                    primary,
                    hops_u: eu.hops(p) + 1,
                    hops_v: ev.hops(x),
                });
            }
        }
        collisions.extend(extra);
    }

    // best_x always exists: the cycle connects u and v.
    let mut path = eu.path_to(best_x);
    let mut back = ev.path_to(best_x);
    back.pop();
    back.reverse();
    path.extend(back);
    Ok(CollisionOutcome {
        path: PathResult {
            weight: best,
            hopcount: eu.hops(best_x) + ev.hops(best_x),
            path,
        },
        log: CollisionLog {
            t_freeze,
            horizon,
            collisions,
            horizon_reached,
            short_circuit: false,
            u_counts,
        },
        v_counts_at_freeze,
    })
}

/// Color pair `(q, r)`: `q` the SWT^V color, `r` the SWT^U frontier color.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum ColorPair {
    BB,
    RB,
    BR,
    RR,
}

impl ColorPair {
    pub const ALL: [ColorPair; 4] = [ColorPair::BB, ColorPair::RB, ColorPair::BR, ColorPair::RR];

    pub fn from_colors(q: Color, r: Color) -> ColorPair {
        match (q, r) {
            (Color::Blue, Color::Blue) => ColorPair::BB,
            (Color::Red, Color::Blue) => ColorPair::RB,
            (Color::Blue, Color::Red) => ColorPair::BR,
            (Color::Red, Color::Red) => ColorPair::RR,
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn label(self) -> &'static str {
        match self {
            ColorPair::BB => "BB",
            ColorPair::RB => "RB",
            ColorPair::BR => "BR",
            ColorPair::RR => "RR",
        }
    }

    /// Limiting share of each stream among all collisions.
    pub fn theory_probs(k: &ModelConstants) -> [f64; 4] {
        let (r, b) = (k.pi_r(), k.pi_b());
        let z = k.collision_factor();
        [b * b / z, b * r / z, b * r / z, r * r / 2.0 / z]
    }
}

/// The four collision streams, each a sorted list of times `s`.
#[derive(Debug, Clone, PartialEq)]
pub struct CollisionStreams {
    pub times: [Vec<f64>; 4],
}

impl CollisionStreams {
    pub fn total(&self) -> usize {
        self.times.iter().map(Vec::len).sum()
    }

    /// `C_{q,r}(s)`: collisions of the pair with time `<= s`.
    pub fn count_until(&self, pair: ColorPair, s: f64) -> usize {
        self.times[pair.index()].partition_point(|&t| t <= s)
    }

    /// Counts per pair with time in `(s0, s1]`.
    pub fn counts_between(&self, s0: f64, s1: f64) -> [u64; 4] {
        let mut out = [0u64; 4];
        for p in ColorPair::ALL {
            out[p.index()] = (self.count_until(p, s1) - self.count_until(p, s0)) as u64;
        }
        out
    }
}

/// Splits a complete log into the four time-ordered streams.
pub fn collision_log_classified(log: &CollisionLog) -> Result<CollisionStreams, FppError> {
    if !log.horizon_reached {
        return Err(FppError::PartialLog);
    }
    let mut times: [Vec<f64>; 4] = Default::default();
    for c in log.collisions.iter().filter(|c| c.primary && !c.duplicate) {
        times[c.pair().index()].push(c.s);
    }
    for t in times.iter_mut() {
        t.sort_by(f64::total_cmp);
    }
    Ok(CollisionStreams { times })
}

/// All distances from `source`, indexed by vertex.
pub fn all_distances(g: &WeightedGraph, source: usize) -> Result<Vec<f64>, FppError> {
    let mut e = Explorer::new(g, source)?;
    e.run_all();
    Ok((0..g.n()).map(|v| e.dist(v)).collect())
}

/// `I_n(t) = #{i : P_n(source, i) <= t} / n` on each grid point.
pub fn epidemic_curve(g: &WeightedGraph, source: usize, grid: &[f64]) -> Result<Vec<f64>, FppError> {
    let mut d = all_distances(g, source)?;
    d.sort_by(f64::total_cmp);
    Ok(curve_from_sorted(&d, grid))
}

pub fn curve_from_sorted(sorted: &[f64], grid: &[f64]) -> Vec<f64> {
    let n = sorted.len() as f64;
    grid.iter()
        .map(|&t| sorted.partition_point(|&x| x <= t) as f64 / n)
        .collect()
}

/// `W^(n) = e^{-lambda t} (A_R u_R + A_B u_B)` at the freeze time.
pub fn swt_martingale(tree: &ShortestWeightTree, k: &ModelConstants) -> Result<f64, FppError> {
    counts_martingale(&tree.counts, tree.frozen_at, k)
}

pub fn counts_martingale(c: &Counts, t: f64, k: &ModelConstants) -> Result<f64, FppError> {
    if c.active() == 0 {
        return Err(FppError::EmptyFrontier);
    }
    Ok((-k.lambda * t).exp() * (c.a_r as f64 * k.u[0] + c.a_b as f64 * k.u[1]))
}
