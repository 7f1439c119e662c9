//! Local forwarding policies, route rollout with an optional bounded
//! depth-first fallback, near-shortest-path accuracy, and routing under
//! topology churn.

use std::fs::File;
use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{FeatureSchema, PairFeatures, PairGeometry};
use crate::graph::{Density, NodeCoord, SpaceGraph, SpaceKind};
use crate::nn::QModel;
use crate::oracle::{pair_context, PairContext, ShortestPaths};
use crate::symbolic::TwoLinearParams;

/// Constant of the symbolic-regression baseline `ns(O,D,u) + 0.64`.
pub const SR_NS_OFFSET: f64 = 0.64;

/// Anything that scores a candidate from pair features; higher is better.
pub trait Scorer {
    fn score(&self, f: &PairFeatures) -> f64;
}

impl Scorer for QModel {
    fn score(&self, f: &PairFeatures) -> f64 {
        self.net.eval(f.vector(self.schema).as_slice())
    }
}

/// A neighbor the holder can forward to.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Candidate {
    pub id: usize,
    pub coord: NodeCoord,
}

/// Everything a forwarding decision may look at: the holder, the packet's
/// origin and destination coordinates, and the holder's current neighbors.
#[derive(Clone, Copy, Debug)]
pub struct LocalView<'a> {
    pub holder: usize,
    pub holder_coord: NodeCoord,
    pub dest: usize,
    pub geometry: PairGeometry,
    pub candidates: &'a [Candidate],
}

#[derive(Clone, Debug)]
pub enum Policy {
    NeuralQ(Arc<QModel>),
    GreedyForwarding,
    SrNodeStretch,
    TwoLinearAction(TwoLinearParams),
    /// Next hop on a true shortest path; needs the graph's distance table.
    OracleShortest(Arc<ShortestPaths>),
}

impl Policy {
    pub fn id(&self) -> String {
        match self {
            Policy::NeuralQ(m) => format!("neural-q-{}", m.schema),
            Policy::GreedyForwarding => "gf".into(),
            Policy::SrNodeStretch => "sr-ns".into(),
            Policy::TwoLinearAction(_) => "two-linear".into(),
            Policy::OracleShortest(_) => "oracle".into(),
        }
    }

    /// Score of forwarding to `c`; the chosen neighbor maximizes it.
    pub fn score(&self, view: &LocalView<'_>, c: &Candidate) -> f64 {
        match self {
            Policy::NeuralQ(m) => m.score(&view.geometry.pair(&view.holder_coord, &c.coord)),
            Policy::GreedyForwarding => -view.geometry.state(&c.coord).0,
            Policy::SrNodeStretch => -(view.geometry.state(&c.coord).1 + SR_NS_OFFSET),
            Policy::TwoLinearAction(p) => p.score(&view.geometry.pair(&view.holder_coord, &c.coord)),
            Policy::OracleShortest(sp) => -(view.holder_coord.distance(&c.coord) + sp.get(c.id, view.dest)),
        }
    }

    /// Best candidate, ties to the lowest id; `None` when there is none.
    pub fn choose(&self, view: &LocalView<'_>) -> Option<usize> {
        let mut best: Option<(f64, usize)> = None;
        for c in view.candidates {
            let s = self.score(view, c);
            best = match best {
                Some((bs, bid)) if bs > s || (bs == s && bid < c.id) => Some((bs, bid)),
                _ if s.is_nan() => best,
                _ => Some((s, c.id)),
            };
        }
        best.map(|(_, id)| id)
    }

    /// Candidates ordered best first (ties by id).
    fn ranked(&self, view: &LocalView<'_>) -> Vec<usize> {
        let mut scored: Vec<(f64, usize)> = view.candidates.iter().map(|c| (self.score(view, c), c.id)).collect();
        scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        scored.into_iter().map(|(_, id)| id).collect()
    }
}

/// Builds the view at `v` from its live, unvisited neighbors.
pub fn local_candidates(g: &SpaceGraph, v: usize, usable: impl Fn(usize) -> bool) -> Vec<Candidate> {
    g.neighbors(v)
        .iter()
        .copied()
        .filter(|&u| usable(u))
        .map(|id| Candidate { id, coord: *g.coord(id) })
        .collect()
}

/// One forwarding decision at `v` over its neighbors not in `visited`.
pub fn choose_forwarder(policy: &Policy, g: &SpaceGraph, ctx: &PairContext, v: usize, visited: &[bool]) -> Result<Option<usize>> {
    g.check_id(v)?;
    if v == ctx.dest {
        return Err(Error::TerminalState(v));
    }
    let geometry = PairGeometry::for_graph(g, ctx.origin, ctx.dest)?;
    let candidates = local_candidates(g, v, |u| !visited.get(u).copied().unwrap_or(false));
    Ok(policy.choose(&LocalView {
        holder: v,
        holder_coord: *g.coord(v),
        dest: ctx.dest,
        geometry,
        candidates: &candidates,
    }))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Fallback {
    None,
    DfsInEllipse,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RouteOutcome {
    /// The delivered walk (greedy prefix then the depth-first branch), or the
    /// walk up to the dead end.
    pub path: Vec<usize>,
    pub delivered: bool,
    /// Length of `path` when delivered, `+inf` otherwise.
    pub d_p: f64,
    /// Everything the packet moved, including depth-first backtracking.
    pub traversed: f64,
    pub fallback_used: bool,
}

impl RouteOutcome {
    pub fn hops(&self) -> usize {
        self.path.len().saturating_sub(1)
    }
}

/// Nodes removed from the live graph once the packet has made `at_hop` hops.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RemovalEvent {
    pub at_hop: usize,
    pub nodes: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Adaptation {
    /// Nodes went down; `lost` lists the holder's neighbors among them.
    Removed {
        hop: usize,
        holder: usize,
        removed: Vec<usize>,
        lost: Vec<usize>,
    },
    /// The policy's choice changed because of an earlier removal.
    Rerouted { hop: usize, holder: usize, chose: usize, would_have: usize },
    DeadEnd { hop: usize, holder: usize },
    FallbackStarted { hop: usize, holder: usize },
}

struct Walker<'a> {
    policy: &'a Policy,
    g: &'a SpaceGraph,
    ctx: &'a PairContext,
    geometry: PairGeometry,
    alive: Vec<bool>,
    log: Vec<Adaptation>,
}

impl Walker<'_> {
    fn view_at<'c>(&self, v: usize, candidates: &'c [Candidate]) -> LocalView<'c> {
        LocalView {
            holder: v,
            holder_coord: *self.g.coord(v),
            dest: self.ctx.dest,
            geometry: self.geometry,
            candidates,
        }
    }

    fn apply(&mut self, event: &RemovalEvent, hop: usize, holder: usize) {
        let removed: Vec<usize> = event
            .nodes
            .iter()
            .copied()
            .filter(|&w| w != holder && w != self.ctx.dest && w < self.alive.len() && self.alive[w])
            .collect();
        for &w in &removed {
            self.alive[w] = false;
        }
        let lost = self.g.neighbors(holder).iter().copied().filter(|u| removed.contains(u)).collect();
        self.log.push(Adaptation::Removed { hop, holder, removed, lost });
    }

    fn run(&mut self, fallback: Fallback, schedule: &[RemovalEvent]) -> RouteOutcome {
        let n = self.g.n();
        let (origin, dest) = (self.ctx.origin, self.ctx.dest);
        let mut visited = vec![false; n];
        let mut path = vec![origin];
        visited[origin] = true;
        let mut length = 0.0;
        let mut pending: Vec<&RemovalEvent> = schedule.iter().collect();
        pending.sort_by_key(|e| e.at_hop);
        let mut next_event = 0;
        let mut v = origin;
        let mut hop = 0;
        let mut disturbed = false;
        loop {
            while next_event < pending.len() && pending[next_event].at_hop <= hop {
                self.apply(pending[next_event], hop, v);
                next_event += 1;
                disturbed = true;
            }
            if v == dest {
                return RouteOutcome { path, delivered: true, d_p: length, traversed: length, fallback_used: false };
            }
            let alive = &self.alive;
            let candidates = local_candidates(self.g, v, |u| alive[u] && !visited[u]);
            let chosen = self.policy.choose(&self.view_at(v, &candidates));
            if let Some(u) = chosen {
                if disturbed {
                    let all = local_candidates(self.g, v, |u| !visited[u]);
                    if let Some(w) = self.policy.choose(&self.view_at(v, &all)) {
                        if w != u {
                            self.log.push(Adaptation::Rerouted { hop, holder: v, chose: u, would_have: w });
                        }
                    }
                }
                length += self.g.distance(v, u);
                visited[u] = true;
                path.push(u);
                v = u;
                hop += 1;
                continue;
            }
            self.log.push(Adaptation::DeadEnd { hop, holder: v });
            if fallback == Fallback::None {
                return RouteOutcome { path, delivered: false, d_p: f64::INFINITY, traversed: length, fallback_used: false };
            }
            // the search sees the topology after every scheduled removal
            for event in &pending[next_event..] {
                self.apply(event, hop, v);
            }
            self.log.push(Adaptation::FallbackStarted { hop, holder: v });
            return self.dfs(path, length, &visited);
        }
    }

    /// Depth-first search from the stuck holder over live nodes inside the
    /// ellipse (plus the nodes already walked), children in policy order.
    fn dfs(&self, mut path: Vec<usize>, prefix: f64, walked: &[bool]) -> RouteOutcome {
        let g = self.g;
        let bound = self.ctx.bound();
        let start = *path.last().expect("non-empty walk");
        let allowed = |w: usize| self.alive[w] && (walked[w] || self.geometry.state(g.coord(w)).1 <= bound);
        let mut seen = vec![false; g.n()];
        seen[start] = true;
        let mut stack: Vec<(usize, Vec<usize>)> = vec![(start, self.children(start, &seen, &allowed))];
        let mut traversed = prefix;
        while let Some((v, children)) = stack.last_mut() {
            let v = *v;
            if v == self.ctx.dest {
                break;
            }
            match children.pop() {
                Some(u) if !seen[u] => {
                    seen[u] = true;
                    traversed += g.distance(v, u);
                    let next = self.children(u, &seen, &allowed);
                    stack.push((u, next));
                }
                Some(_) => {}
                None => {
                    stack.pop();
                    if let Some((parent, _)) = stack.last() {
                        traversed += g.distance(v, *parent);
                    }
                }
            }
        }
        if stack.is_empty() {
            return RouteOutcome { path, delivered: false, d_p: f64::INFINITY, traversed, fallback_used: true };
        }
        path.extend(stack.iter().skip(1).map(|(v, _)| *v));
        let d_p = path.windows(2).map(|w| g.distance(w[0], w[1])).sum();
        RouteOutcome { path, delivered: true, d_p, traversed, fallback_used: true }
    }

    /// Unseen allowed neighbors, best last so `pop` yields the best.
    fn children(&self, v: usize, seen: &[bool], allowed: &impl Fn(usize) -> bool) -> Vec<usize> {
        let candidates = local_candidates(self.g, v, |u| !seen[u] && allowed(u));
        let mut order = self.policy.ranked(&self.view_at(v, &candidates));
        order.reverse();
        order
    }
}

/// Forwards a packet from `ctx.origin` until it reaches `ctx.dest` or no
/// unvisited neighbor remains.
pub fn route(policy: &Policy, g: &SpaceGraph, ctx: &PairContext, fallback: Fallback) -> Result<RouteOutcome> {
    Ok(dynamics_run(policy, g, ctx, fallback, &[])?.route)
}

#[derive(Clone, Debug, PartialEq)]
pub struct DynamicsOutcome {
    pub route: RouteOutcome,
    pub log: Vec<Adaptation>,
    /// Whether the final live graph still connects the last holder to D.
    pub recoverable: bool,
    pub reason: Option<String>,
}

/// Routes while nodes disappear according to `schedule`. Decisions only ever
/// see the holder's current live neighbors.
pub fn dynamics_run(
    policy: &Policy,
    g: &SpaceGraph,
    ctx: &PairContext,
    fallback: Fallback,
    schedule: &[RemovalEvent],
) -> Result<DynamicsOutcome> {
    g.check_id(ctx.origin)?;
    g.check_id(ctx.dest)?;
    if ctx.origin == ctx.dest {
        return Err(Error::DegeneratePair { origin: ctx.origin, dest: ctx.dest });
    }
    let mut walker = Walker {
        policy,
        g,
        ctx,
        geometry: PairGeometry::for_graph(g, ctx.origin, ctx.dest)?,
        alive: vec![true; g.n()],
        log: Vec::new(),
    };
    let route = walker.run(fallback, schedule);
    let holder = *route.path.last().expect("non-empty walk");
    let recoverable = route.delivered || connected(g, &walker.alive, holder, ctx.dest);
    let reason = (!route.delivered).then(|| {
        if recoverable {
            format!("stuck at {holder} although a live path to {} exists", ctx.dest)
        } else {
            format!("holder {holder} is disconnected from {}", ctx.dest)
        }
    });
    Ok(DynamicsOutcome {
        route,
        log: walker.log,
        recoverable,
        reason,
    })
}

fn connected(g: &SpaceGraph, alive: &[bool], from: usize, to: usize) -> bool {
    let mut seen = vec![false; g.n()];
    let mut stack = vec![from];
    seen[from] = true;
    while let Some(v) = stack.pop() {
        if v == to {
            return true;
        }
        for &u in g.neighbors(v) {
            if alive[u] && !seen[u] {
                seen[u] = true;
                stack.push(u);
            }
        }
    }
    false
}

/// Which ordered pairs an evaluation covers.
#[derive(Clone, Debug, PartialEq)]
pub enum PairFilter {
    All,
    List(Vec<(usize, usize)>),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairRecord {
    pub origin: usize,
    pub dest: usize,
    pub d_p: f64,
    pub d_sp: f64,
    pub zeta: f64,
    pub eta: bool,
    pub delivered: bool,
    pub hops: usize,
    pub fallback_used: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct GraphSummary {
    pub space: &'static str,
    pub n: usize,
    pub density: f64,
    pub radius: f64,
    pub seed: u64,
    pub mean_degree: f64,
}

impl GraphSummary {
    pub fn of(g: &SpaceGraph) -> Self {
        let (space, density) = match (g.space(), g.density()) {
            (SpaceKind::Euclidean, Density::Rho(r)) => ("euclidean", r),
            (SpaceKind::Euclidean, Density::Delta(d)) => ("euclidean", d),
            (SpaceKind::Hyperbolic { .. }, Density::Rho(r)) => ("hyperbolic", r),
            (SpaceKind::Hyperbolic { .. }, Density::Delta(d)) => ("hyperbolic", d),
        };
        GraphSummary {
            space,
            n: g.n(),
            density,
            radius: g.radius(),
            seed: g.seed(),
            mean_degree: g.mean_degree(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub graph: GraphSummary,
    pub policy: String,
    pub fallback: Fallback,
    pub epsilon: f64,
    /// Mean of eta over ordered pairs with `O != D` and a path between them.
    pub accuracy: f64,
    pub counted_pairs: usize,
    pub delivered_pairs: usize,
    /// Sum of eta over `n^2`, counting every ordered pair.
    pub accuracy_all_pairs: f64,
    /// Mean of eta over delivered pairs only (dead ends excluded).
    pub accuracy_delivered: f64,
    pub records: Vec<PairRecord>,
    pub runtime_ms: u128,
}

/// `eta = 1` iff the packet arrived and `d_p / d_sp <= zeta (1 + eps)`.
pub fn eta(delivered: bool, d_p: f64, ctx: &PairContext) -> bool {
    delivered && d_p / ctx.d_sp <= ctx.bound()
}

pub fn apnsp_accuracy(
    policy: &Policy,
    g: &SpaceGraph,
    sp: &ShortestPaths,
    epsilon: f64,
    fallback: Fallback,
    filter: &PairFilter,
) -> Result<EvalReport> {
    let started = Instant::now();
    let n = g.n();
    let pairs: Vec<(usize, usize)> = match filter {
        PairFilter::All => (0..n).flat_map(|o| (0..n).map(move |d| (o, d))).collect(),
        PairFilter::List(list) => list.clone(),
    };
    let records = pairs
        .par_iter()
        .filter_map(|&(o, d)| match pair_context(g, sp, o, d, epsilon) {
            Ok(ctx) => Some(route(policy, g, &ctx, fallback).map(|r| PairRecord {
                origin: o,
                dest: d,
                d_p: r.d_p,
                d_sp: ctx.d_sp,
                zeta: ctx.zeta,
                eta: eta(r.delivered, r.d_p, &ctx),
                delivered: r.delivered,
                hops: r.hops(),
                fallback_used: r.fallback_used,
            })),
            Err(Error::DegeneratePair { .. } | Error::NoPath { .. }) => None,
            Err(e) => Some(Err(e)),
        })
        .collect::<Result<Vec<_>>>()?;
    let hits = records.iter().filter(|r| r.eta).count();
    let delivered = records.iter().filter(|r| r.delivered).count();
    let ratio = |num: usize, den: usize| if den == 0 { 0.0 } else { num as f64 / den as f64 };
    Ok(EvalReport {
        graph: GraphSummary::of(g),
        policy: policy.id(),
        fallback,
        epsilon,
        accuracy: ratio(hits, records.len()),
        counted_pairs: records.len(),
        delivered_pairs: delivered,
        accuracy_all_pairs: ratio(hits, n * n),
        accuracy_delivered: ratio(hits, delivered),
        records,
        runtime_ms: started.elapsed().as_millis(),
    })
}

#[derive(Serialize)]
struct ReportRow<'a> {
    space: &'a str,
    n: usize,
    density: f64,
    graph_seed: u64,
    mean_degree: f64,
    policy: &'a str,
    fallback: Fallback,
    epsilon: f64,
    accuracy: f64,
    counted_pairs: usize,
    delivered_pairs: usize,
    accuracy_all_pairs: f64,
    accuracy_delivered: f64,
}

#[derive(Serialize)]
struct DetailRow<'a> {
    graph_seed: u64,
    policy: &'a str,
    origin: usize,
    dest: usize,
    d_p: f64,
    d_sp: f64,
    zeta: f64,
    eta: bool,
    delivered: bool,
    hops: usize,
    fallback_used: bool,
}

/// One row per (graph, policy).
pub fn write_reports(path: impl AsRef<Path>, reports: &[EvalReport]) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_writer(File::create(path).map_err(|e| Error::io(path, e))?);
    for r in reports {
        w.serialize(ReportRow {
            space: r.graph.space,
            n: r.graph.n,
            density: r.graph.density,
            graph_seed: r.graph.seed,
            mean_degree: r.graph.mean_degree,
            policy: &r.policy,
            fallback: r.fallback,
            epsilon: r.epsilon,
            accuracy: r.accuracy,
            counted_pairs: r.counted_pairs,
            delivered_pairs: r.delivered_pairs,
            accuracy_all_pairs: r.accuracy_all_pairs,
            accuracy_delivered: r.accuracy_delivered,
        })?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// One row per evaluated pair.
pub fn write_pair_details(path: impl AsRef<Path>, reports: &[EvalReport]) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_writer(File::create(path).map_err(|e| Error::io(path, e))?);
    for r in reports {
        for record in &r.records {
            let &PairRecord { origin, dest, d_p, d_sp, zeta, eta, delivered, hops, fallback_used } = record;
            w.serialize(DetailRow {
                graph_seed: r.graph.seed,
                policy: &r.policy,
                origin,
                dest,
                d_p,
                d_sp,
                zeta,
                eta,
                delivered,
                hops,
                fallback_used,
            })?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Whether the model needs node-stretch features.
pub fn needs_stretch(policy: &Policy) -> bool {
    match policy {
        Policy::NeuralQ(m) => m.schema == FeatureSchema::DistAndStretch,
        Policy::SrNodeStretch | Policy::TwoLinearAction(_) => true,
        Policy::GreedyForwarding | Policy::OracleShortest(_) => false,
    }
}
