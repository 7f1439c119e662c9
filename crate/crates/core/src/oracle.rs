//! Exact shortest paths, path stretch, the ellipse-penalized reward and the
//! optimal Q-values it induces.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::SpaceGraph;

/// Penalty scale `C` used when none is configured.
pub const DEFAULT_PENALTY: f64 = 1.0;
/// Margin `epsilon` on the near-shortest-path bound.
pub const DEFAULT_EPSILON: f64 = 0.05;

/// All-pairs shortest-path lengths under metric edge weights.
/// Unreachable pairs hold `f64::INFINITY`.
#[derive(Clone, Debug, PartialEq)]
pub struct ShortestPaths {
    n: usize,
    dist: Vec<f64>,
}

impl ShortestPaths {
    /// Table with `dist(v, u) = f(v, u)`.
    pub fn from_fn(n: usize, f: impl Fn(usize, usize) -> f64) -> Self {
        let dist = (0..n).flat_map(|v| (0..n).map(move |u| (v, u))).map(|(v, u)| f(v, u)).collect();
        ShortestPaths { n, dist }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, v: usize, u: usize) -> f64 {
        self.dist[v * self.n + u]
    }

    pub fn row(&self, v: usize) -> &[f64] {
        &self.dist[v * self.n..(v + 1) * self.n]
    }

    pub fn reachable(&self, v: usize, u: usize) -> bool {
        self.get(v, u).is_finite()
    }

    /// Largest relative disagreement between two tables; infinities must match.
    pub fn max_relative_diff(&self, other: &ShortestPaths) -> f64 {
        assert_eq!(self.n, other.n, "tables of different sizes");
        self.dist
            .iter()
            .zip(&other.dist)
            .map(|(&a, &b)| {
                if a.is_infinite() || b.is_infinite() {
                    if a == b {
                        0.0
                    } else {
                        f64::INFINITY
                    }
                } else {
                    (a - b).abs() / a.abs().max(b.abs()).max(f64::MIN_POSITIVE)
                }
            })
            .fold(0.0, f64::max)
    }
}

#[derive(Copy, Clone, PartialEq)]
struct Frontier {
    dist: f64,
    node: usize,
}

impl Eq for Frontier {}

impl Ord for Frontier {
    fn cmp(&self, other: &Self) -> Ordering {
        // min-heap on distance, then node id
        other
            .dist
            .total_cmp(&self.dist)
            .then_with(|| other.node.cmp(&self.node))
    }
}

impl PartialOrd for Frontier {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Single-source Dijkstra over metric edge lengths.
pub fn dijkstra(g: &SpaceGraph, source: usize) -> Vec<f64> {
    let mut dist = vec![f64::INFINITY; g.n()];
    let mut heap = BinaryHeap::new();
    dist[source] = 0.0;
    heap.push(Frontier { dist: 0.0, node: source });
    while let Some(Frontier { dist: d, node: v }) = heap.pop() {
        if d > dist[v] {
            continue;
        }
        for &u in g.neighbors(v) {
            let nd = d + g.distance(v, u);
            if nd < dist[u] {
                dist[u] = nd;
                heap.push(Frontier { dist: nd, node: u });
            }
        }
    }
    dist
}

/// All-pairs shortest paths by one Dijkstra per source.
pub fn apsp(g: &SpaceGraph) -> ShortestPaths {
    let n = g.n();
    let mut dist = Vec::with_capacity(n * n);
    for s in 0..n {
        dist.extend(dijkstra(g, s));
    }
    ShortestPaths { n, dist }
}

/// Floyd–Warshall; cubic, used to cross-check [`apsp`].
pub fn floyd_warshall(g: &SpaceGraph) -> ShortestPaths {
    let n = g.n();
    let mut dist = vec![f64::INFINITY; n * n];
    for v in 0..n {
        dist[v * n + v] = 0.0;
        for &u in g.neighbors(v) {
            dist[v * n + u] = g.distance(v, u);
        }
    }
    for k in 0..n {
        for i in 0..n {
            let dik = dist[i * n + k];
            if dik.is_infinite() {
                continue;
            }
            for j in 0..n {
                let via = dik + dist[k * n + j];
                if via < dist[i * n + j] {
                    dist[i * n + j] = via;
                }
            }
        }
    }
    ShortestPaths { n, dist }
}

/// An origin/destination pair with its straight-line distance, shortest-path
/// length and path stretch `zeta = d_sp / d_e`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairContext {
    pub origin: usize,
    pub dest: usize,
    pub d_e: f64,
    pub d_sp: f64,
    pub zeta: f64,
    pub epsilon: f64,
}

impl PairContext {
    /// Near-shortest-path factor `zeta (1 + epsilon)`.
    pub fn bound(&self) -> f64 {
        self.zeta * (1.0 + self.epsilon)
    }

    /// The same pair judged against a different stretch value (e.g. a fixed
    /// factor when the true `zeta` is not known).
    pub fn with_zeta(mut self, zeta: f64) -> Self {
        self.zeta = zeta;
        self
    }
}

pub fn pair_context(
    g: &SpaceGraph,
    sp: &ShortestPaths,
    origin: usize,
    dest: usize,
    epsilon: f64,
) -> Result<PairContext> {
    g.check_id(origin)?;
    g.check_id(dest)?;
    if epsilon < 0.0 {
        return Err(Error::InvalidParameter(format!("epsilon must be >= 0, got {epsilon}")));
    }
    let d_e = g.distance(origin, dest);
    if origin == dest || d_e == 0.0 {
        return Err(Error::DegeneratePair { origin, dest });
    }
    let d_sp = sp.get(origin, dest);
    if !d_sp.is_finite() {
        return Err(Error::NoPath { origin, dest });
    }
    Ok(PairContext {
        origin,
        dest,
        d_e,
        d_sp,
        zeta: d_sp / d_e,
        epsilon,
    })
}

/// Instantaneous reward for forwarding from `v` to its neighbor `u`.
///
/// `-d_e(v,u)` when `(d_e(v,u) + d_sp(u,D)) / d_sp(v,D) <= zeta (1+eps)`,
/// otherwise additionally `-C * Delta` with
/// `Delta = d_e(v,u) + d_sp(u,D) - d_sp(v,D) zeta (1+eps)`.
/// Unreachable continuations score `-inf`.
pub fn reward(
    g: &SpaceGraph,
    sp: &ShortestPaths,
    ctx: &PairContext,
    v: usize,
    u: usize,
    penalty: f64,
) -> Result<f64> {
    g.check_id(v)?;
    g.check_id(u)?;
    if v == ctx.dest {
        return Err(Error::TerminalState(v));
    }
    if !g.is_edge(v, u) {
        return Err(Error::NotNeighbor(u, v));
    }
    Ok(reward_unchecked(g.distance(v, u), sp.get(u, ctx.dest), sp.get(v, ctx.dest), ctx.bound(), penalty))
}

#[inline]
pub(crate) fn reward_unchecked(step: f64, rest_from_u: f64, rest_from_v: f64, bound: f64, penalty: f64) -> f64 {
    if !rest_from_u.is_finite() || !rest_from_v.is_finite() {
        return f64::NEG_INFINITY;
    }
    let via = step + rest_from_u;
    let allowed = rest_from_v * bound;
    if via <= allowed {
        -step
    } else {
        -step - penalty * (via - allowed)
    }
}

/// Optimal Q-values toward one destination for one (O, D) context.
/// `q[v][k]` belongs to the edge `(v, g.neighbors(v)[k])`.
#[derive(Clone, Debug, PartialEq)]
pub struct OracleTable {
    pub dest: usize,
    pub dist_to_dest: Vec<f64>,
    pub value: Vec<f64>,
    pub q: Vec<Vec<f64>>,
    pub penalty: f64,
    pub ctx: PairContext,
}

impl OracleTable {
    /// `Q*(v, u)`, or `None` if `u` is not a neighbor of `v`.
    pub fn qstar(&self, g: &SpaceGraph, v: usize, u: usize) -> Option<f64> {
        g.neighbors(v)
            .binary_search(&u)
            .ok()
            .map(|k| self.q[v][k])
    }

    /// True when forwarding `v -> u` incurs no ellipse penalty.
    pub fn penalty_free(&self, g: &SpaceGraph, v: usize, u: usize) -> bool {
        let via = g.distance(v, u) + self.dist_to_dest[u];
        via <= self.dist_to_dest[v] * self.ctx.bound()
    }

    /// Writes `D,v,u,d_sp(v,D),Q*(v,u)` rows.
    pub fn write_dump<W: Write>(&self, g: &SpaceGraph, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["dest", "v", "u", "d_sp_v", "qstar"])?;
        for v in 0..g.n() {
            for (k, &u) in g.neighbors(v).iter().enumerate() {
                w.write_record([
                    self.dest.to_string(),
                    v.to_string(),
                    u.to_string(),
                    self.dist_to_dest[v].to_string(),
                    self.q[v][k].to_string(),
                ])?;
            }
        }
        w.flush().map_err(|e| Error::io("<oracle dump>", e))?;
        Ok(())
    }
}

/// Builds `Q*` for destination `ctx.dest` with `gamma = 1`.
///
/// Node values `V*(u) = max_w Q*(u, w)` are settled in increasing order of
/// `d_sp(u, D)`: the maximizing successor always lies strictly closer to the
/// destination (positive edge lengths), so it is settled first. Every edge
/// then gets `Q*(v, u) = r(v, u) + V*(u)` with `V*(D) = 0`.
pub fn optimal_q(g: &SpaceGraph, sp: &ShortestPaths, ctx: &PairContext, penalty: f64) -> Result<OracleTable> {
    if !(penalty > 0.0) {
        return Err(Error::InvalidParameter(format!("penalty C must be positive, got {penalty}")));
    }
    let n = g.n();
    let dest = ctx.dest;
    g.check_id(dest)?;
    let dist_to_dest: Vec<f64> = (0..n).map(|v| sp.get(v, dest)).collect();
    let bound = ctx.bound();

    let mut order: Vec<usize> = (0..n).filter(|&v| dist_to_dest[v].is_finite()).collect();
    order.sort_by(|&a, &b| dist_to_dest[a].total_cmp(&dist_to_dest[b]).then(a.cmp(&b)));

    let mut value = vec![f64::NEG_INFINITY; n];
    let mut settled = vec![false; n];
    value[dest] = 0.0;
    settled[dest] = true;
    for &u in &order {
        if u == dest {
            continue;
        }
        let mut best = f64::NEG_INFINITY;
        for &w in g.neighbors(u) {
            if !settled[w] {
                continue;
            }
            let r = reward_unchecked(g.distance(u, w), dist_to_dest[w], dist_to_dest[u], bound, penalty);
            best = best.max(r + value[w]);
        }
        value[u] = best;
        settled[u] = true;
    }

    let q = (0..n)
        .map(|v| {
            g.neighbors(v)
                .iter()
                .map(|&u| {
                    if v == dest {
                        // no actions leave the destination
                        return f64::NEG_INFINITY;
                    }
                    let r = reward_unchecked(g.distance(v, u), dist_to_dest[u], dist_to_dest[v], bound, penalty);
                    r + value[u]
                })
                .collect()
        })
        .collect();

    Ok(OracleTable {
        dest,
        dist_to_dest,
        value,
        q,
        penalty,
        ctx: *ctx,
    })
}
