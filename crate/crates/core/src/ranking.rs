//! Local ranking metrics, DCG ranking similarity against optimal Q-values,
//! pointwise monotonicity, and knowledge-guided seed/subsample selection.

use rand::seq::SliceRandom;
use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{FeatureSchema, PairFeatures, PairGeometry};
use crate::graph::{GraphSpec, SpaceGraph};
use crate::oracle::{apsp, optimal_q, pair_context, OracleTable, ShortestPaths};
use crate::samples::{Provenance, SampleSet};
use crate::seed::Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MetricId {
    M1,
    M2,
    Custom,
}

/// Linear score over `(d(v,D), ns(O,D,v), d(u,D), ns(O,D,u))`; higher is better.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankingMetric {
    pub id: MetricId,
    pub weights: [f64; 4],
}

impl RankingMetric {
    /// `-d(u, D)`
    pub const M1: RankingMetric = RankingMetric {
        id: MetricId::M1,
        weights: [0.0, 0.0, -1.0, 0.0],
    };

    /// `-0.875 d(u, D) - 0.277 ns(O, D, u)`
    pub const M2: RankingMetric = RankingMetric {
        id: MetricId::M2,
        weights: [0.0, 0.0, -0.875, -0.277],
    };

    pub fn custom(weights: [f64; 4]) -> Self {
        RankingMetric {
            id: MetricId::Custom,
            weights,
        }
    }

    pub fn name(&self) -> &'static str {
        match self.id {
            MetricId::M1 => "m1",
            MetricId::M2 => "m2",
            MetricId::Custom => "custom",
        }
    }

    #[inline]
    pub fn score(&self, f: &PairFeatures) -> f64 {
        let a = f.as_array();
        self.weights.iter().zip(a).map(|(w, x)| w * x).sum()
    }

    /// Whether the score reads node stretch, which makes it depend on the origin.
    pub fn uses_stretch(&self) -> bool {
        self.weights[1] != 0.0 || self.weights[3] != 0.0
    }

    /// Feature schema a network imitating this metric needs.
    pub fn schema(&self) -> FeatureSchema {
        if self.uses_stretch() {
            FeatureSchema::DistAndStretch
        } else {
            FeatureSchema::DistOnly
        }
    }
}

/// `sum_{i=1..tau} rel[i] / log2(i + 1)` with 1-indexed positions.
pub fn dcg(rel: &[f64], tau: usize) -> Result<f64> {
    if tau == 0 || tau > rel.len() {
        return Err(Error::InvalidParameter(format!(
            "rank cutoff {tau} outside 1..={}",
            rel.len()
        )));
    }
    Ok(rel[..tau]
        .iter()
        .enumerate()
        .map(|(i, r)| r / ((i + 2) as f64).log2())
        .sum())
}

/// Graded relevance of an ideal ranking of length `len`: `(len - i + 1)^2` at
/// 1-indexed position `i`.
pub fn graded_relevance(len: usize) -> Vec<f64> {
    (1..=len).map(|i| ((len - i + 1) * (len - i + 1)) as f64).collect()
}

/// DCG of `estimated` divided by DCG of `ideal`, both cut at `tau`. Items of
/// `estimated` missing from `ideal` get zero relevance.
pub fn ranking_similarity<T: PartialEq>(ideal: &[T], estimated: &[T], tau: usize) -> Result<f64> {
    let rel_a = graded_relevance(ideal.len());
    let rel_b: Vec<f64> = estimated
        .iter()
        .map(|b| ideal.iter().position(|a| a == b).map_or(0.0, |i| rel_a[i]))
        .collect();
    Ok(dcg(&rel_b, tau)? / dcg(&rel_a, tau)?)
}

/// Orders `ids` best-first by `key` (descending), ties by ascending id.
fn best_first(ids: &mut [usize], key: impl Fn(usize) -> f64) {
    ids.sort_by(|&a, &b| key(b).total_cmp(&key(a)).then(a.cmp(&b)));
}

/// `SIM_v` for an already built oracle; `None` when no neighbor reaches `D`.
fn sim_at(g: &SpaceGraph, geo: &PairGeometry, oracle: &OracleTable, v: usize, metric: &RankingMetric) -> Option<f64> {
    let nbrs = g.neighbors(v);
    let q = &oracle.q[v];
    let mut ideal: Vec<usize> = (0..nbrs.len()).filter(|&k| q[k].is_finite()).collect();
    if ideal.is_empty() {
        return None;
    }
    if ideal.len() == 1 {
        return Some(1.0);
    }
    let mut estimated = ideal.clone();
    // positions index into nbrs, which is sorted by node id
    best_first(&mut ideal, |k| q[k]);
    let cv = g.coord(v);
    let scores: Vec<f64> = nbrs
        .iter()
        .map(|&u| metric.score(&geo.pair(cv, g.coord(u))))
        .collect();
    best_first(&mut estimated, |k| scores[k]);
    let tau = ideal.len();
    Some(ranking_similarity(&ideal, &estimated, tau).expect("tau within range"))
}

/// Ranking similarity at `v` between `metric` and the oracle's `Q*`.
///
/// Both rankings are best-first; ties go to the lower node id. `Ok(None)` is
/// the undefined sentinel (every neighbor is cut off from `D`).
pub fn sim_v(g: &SpaceGraph, oracle: &OracleTable, v: usize, metric: &RankingMetric) -> Result<Option<f64>> {
    g.check_id(v)?;
    if v == oracle.dest {
        return Err(Error::TerminalState(v));
    }
    if g.degree(v) == 0 {
        return Err(Error::InvalidParameter(format!("node {v} has no neighbors")));
    }
    let geo = PairGeometry::for_graph(g, oracle.ctx.origin, oracle.ctx.dest)?;
    Ok(sim_at(g, &geo, oracle, v, metric))
}

/// One `SIM_v` observation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimPoint {
    pub origin: usize,
    pub dest: usize,
    pub v: usize,
    pub sim: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SimSummary {
    pub metric: MetricId,
    /// Mean of the defined points.
    pub mean: f64,
    pub points: Vec<SimPoint>,
}

impl SimSummary {
    pub fn fraction_at_least(&self, threshold: f64) -> f64 {
        if self.points.is_empty() {
            return 0.0;
        }
        self.points.iter().filter(|p| p.sim >= threshold).count() as f64 / self.points.len() as f64
    }
}

/// Knobs for [`sim_graph`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SimOptions {
    pub epsilon: f64,
    pub penalty: f64,
    /// Above this many nodes, origin-dependent metrics are estimated from a
    /// uniform sample of triples instead of all `n^3`.
    pub exhaustive_max_n: usize,
    pub sampled_triples: usize,
    pub sample_seed: u64,
}

impl Default for SimOptions {
    fn default() -> Self {
        SimOptions {
            epsilon: crate::oracle::DEFAULT_EPSILON,
            penalty: crate::oracle::DEFAULT_PENALTY,
            exhaustive_max_n: 100,
            sampled_triples: 100_000,
            sample_seed: 0,
        }
    }
}

/// Graph-level ranking similarity `SIM_G`.
///
/// Metrics that ignore node stretch are scored on every `(v, D)` pair (with
/// the packet originating at `v`); stretch-aware metrics on every
/// `(O, D, v)` triple, or a uniform sample of them for large graphs.
pub fn sim_graph(g: &SpaceGraph, sp: &ShortestPaths, metric: &RankingMetric, opts: &SimOptions) -> Result<SimSummary> {
    let n = g.n();
    let mut points = Vec::new();
    if !metric.uses_stretch() {
        for dest in 0..n {
            for v in 0..n {
                if v == dest || !sp.reachable(v, dest) || g.degree(v) == 0 {
                    continue;
                }
                let Ok(ctx) = pair_context(g, sp, v, dest, opts.epsilon) else { continue };
                let oracle = optimal_q(g, sp, &ctx, opts.penalty)?;
                let geo = PairGeometry::for_graph(g, v, dest)?;
                if let Some(sim) = sim_at(g, &geo, &oracle, v, metric) {
                    points.push(SimPoint { origin: v, dest, v, sim });
                }
            }
        }
    } else if n <= opts.exhaustive_max_n {
        for origin in 0..n {
            for dest in 0..n {
                let Ok(ctx) = pair_context(g, sp, origin, dest, opts.epsilon) else { continue };
                let oracle = optimal_q(g, sp, &ctx, opts.penalty)?;
                let geo = PairGeometry::for_graph(g, origin, dest)?;
                for v in 0..n {
                    if v == dest || g.degree(v) == 0 {
                        continue;
                    }
                    if let Some(sim) = sim_at(g, &geo, &oracle, v, metric) {
                        points.push(SimPoint { origin, dest, v, sim });
                    }
                }
            }
        }
    } else {
        let mut rng = crate::seed::rng_from_seed(opts.sample_seed);
        let mut attempts = 0;
        while points.len() < opts.sampled_triples && attempts < 20 * opts.sampled_triples {
            attempts += 1;
            let (origin, dest, v) = (rng.gen_range(0..n), rng.gen_range(0..n), rng.gen_range(0..n));
            if v == dest || g.degree(v) == 0 {
                continue;
            }
            let Ok(ctx) = pair_context(g, sp, origin, dest, opts.epsilon) else { continue };
            let oracle = optimal_q(g, sp, &ctx, opts.penalty)?;
            let geo = PairGeometry::for_graph(g, origin, dest)?;
            if let Some(sim) = sim_at(g, &geo, &oracle, v, metric) {
                points.push(SimPoint { origin, dest, v, sim });
            }
        }
    }
    if points.is_empty() {
        return Err(Error::Empty("no (v, D) pair with a defined similarity"));
    }
    let mean = points.iter().map(|p| p.sim).sum::<f64>() / points.len() as f64;
    Ok(SimSummary {
        metric: metric.id,
        mean,
        points,
    })
}

/// Direction a metric must move in as features grow pointwise.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Orientation {
    /// Larger distances/stretch must never score higher (cost features).
    NonIncreasing,
    NonDecreasing,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MonotonicityCheck {
    pub holds: bool,
    /// Indices `(a, b)` with `x[a] <= x[b]` pointwise but scores out of order.
    pub witness: Option<(usize, usize)>,
}

fn pointwise_le(a: &[f64; 4], b: &[f64; 4]) -> bool {
    a.iter().zip(b).all(|(x, y)| x <= y)
}

/// Checks that every pointwise-comparable pair of feature vectors is scored
/// in the required direction.
pub fn check_pointwise_monotonicity(
    metric: &RankingMetric,
    features: &[PairFeatures],
    orientation: Orientation,
) -> MonotonicityCheck {
    let arrays: Vec<[f64; 4]> = features.iter().map(PairFeatures::as_array).collect();
    let scores: Vec<f64> = features.iter().map(|f| metric.score(f)).collect();
    for a in 0..arrays.len() {
        for b in 0..arrays.len() {
            if a == b || !pointwise_le(&arrays[a], &arrays[b]) {
                continue;
            }
            let ok = match orientation {
                Orientation::NonIncreasing => scores[a] >= scores[b],
                Orientation::NonDecreasing => scores[a] <= scores[b],
            };
            if !ok {
                return MonotonicityCheck {
                    holds: false,
                    witness: Some((a, b)),
                };
            }
        }
    }
    MonotonicityCheck {
        holds: true,
        witness: None,
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RankedSeed {
    pub spec: GraphSpec,
    pub sim_g: f64,
}

/// Generates each candidate, scores it by `SIM_G`, and returns the best `k`
/// in descending order (ties keep candidate order).
pub fn select_seed_graph(
    candidates: &[GraphSpec],
    metric: &RankingMetric,
    opts: &SimOptions,
    k: usize,
) -> Result<Vec<RankedSeed>> {
    if candidates.is_empty() {
        return Err(Error::Empty("seed-graph candidate list"));
    }
    let mut ranked = candidates
        .par_iter()
        .map(|spec| {
            let g = spec.generate()?;
            let sp = apsp(&g);
            let sim_g = match sim_graph(&g, &sp, metric, opts) {
                Ok(s) => s.mean,
                Err(Error::Empty(_)) => 0.0,
                Err(e) => return Err(e),
            };
            Ok(RankedSeed { spec: *spec, sim_g })
        })
        .collect::<Result<Vec<_>>>()?;
    ranked.sort_by(|a, b| b.sim_g.total_cmp(&a.sim_g));
    ranked.truncate(k.max(1));
    Ok(ranked)
}

/// How many nodes to draw samples from. Serialized as a count or `"all"`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "PhiRepr", into = "PhiRepr")]
pub enum Phi {
    Count(usize),
    All,
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum PhiRepr {
    Count(usize),
    Word(String),
}

impl TryFrom<PhiRepr> for Phi {
    type Error = String;

    fn try_from(r: PhiRepr) -> std::result::Result<Self, String> {
        match r {
            PhiRepr::Count(k) => Ok(Phi::Count(k)),
            PhiRepr::Word(w) => w.parse().map_err(|e: Error| e.to_string()),
        }
    }
}

impl From<Phi> for PhiRepr {
    fn from(p: Phi) -> Self {
        match p {
            Phi::Count(k) => PhiRepr::Count(k),
            Phi::All => PhiRepr::Word("all".into()),
        }
    }
}

impl std::str::FromStr for Phi {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "all" => Ok(Phi::All),
            _ => s
                .parse()
                .map(Phi::Count)
                .map_err(|_| Error::Config(format!("phi must be a count or `all`, got `{s}`"))),
        }
    }
}

impl std::fmt::Display for Phi {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Phi::Count(k) => write!(f, "{k}"),
            Phi::All => f.write_str("all"),
        }
    }
}

impl Default for Phi {
    fn default() -> Self {
        Phi::Count(3)
    }
}

/// Picks, among `candidates` random reachable ordered pairs, the one with the
/// largest straight-line distance.
pub fn choose_subsample_pair(g: &SpaceGraph, sp: &ShortestPaths, rng: &mut Rng, candidates: usize) -> Option<(usize, usize)> {
    let n = g.n();
    let mut pairs: Vec<(usize, usize)> = (0..n)
        .flat_map(|o| (0..n).map(move |d| (o, d)))
        .filter(|&(o, d)| o != d && sp.reachable(o, d) && g.distance(o, d) > 0.0)
        .collect();
    if pairs.is_empty() {
        return None;
    }
    pairs.shuffle(rng);
    pairs.truncate(candidates.max(1));
    pairs
        .into_iter()
        .enumerate()
        .max_by(|(ia, a), (ib, b)| {
            g.distance(a.0, a.1)
                .total_cmp(&g.distance(b.0, b.1))
                .then(ib.cmp(ia))
        })
        .map(|(_, p)| p)
}

/// Options for [`subsample`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SubsampleOptions {
    pub phi: Phi,
    pub epsilon: f64,
    pub penalty: f64,
    pub schema: FeatureSchema,
}

/// Nodes eligible for subsampling, best first: `SIM_v` descending, then
/// degree descending, then id ascending.
pub fn rank_subsample_nodes(
    g: &SpaceGraph,
    oracle: &OracleTable,
    metric: &RankingMetric,
    exclude: &[usize],
) -> Result<Vec<(usize, f64)>> {
    let geo = PairGeometry::for_graph(g, oracle.ctx.origin, oracle.ctx.dest)?;
    let mut ranked: Vec<(usize, f64)> = (0..g.n())
        .filter(|&v| v != oracle.dest && g.degree(v) > 0 && !exclude.contains(&v))
        .filter_map(|v| sim_at(g, &geo, oracle, v, metric).map(|s| (v, s)))
        .collect();
    ranked.sort_by(|a, b| {
        b.1.total_cmp(&a.1)
            .then(g.degree(b.0).cmp(&g.degree(a.0)))
            .then(a.0.cmp(&b.0))
    });
    Ok(ranked)
}

/// Samples `<f_s(v) f_a(u), Q*(v, u)>` for every neighbor `u` of the `phi`
/// best-ranked nodes. Targets are divided by the radius.
pub fn subsample(
    g: &SpaceGraph,
    sp: &ShortestPaths,
    origin: usize,
    dest: usize,
    metric: &RankingMetric,
    opts: &SubsampleOptions,
) -> Result<SampleSet> {
    if let Phi::Count(0) = opts.phi {
        return Err(Error::InvalidParameter("phi must be at least 1".into()));
    }
    let ctx = pair_context(g, sp, origin, dest, opts.epsilon)?;
    let oracle = optimal_q(g, sp, &ctx, opts.penalty)?;
    let ranked = rank_subsample_nodes(g, &oracle, metric, &[])?;
    let take = match opts.phi {
        Phi::Count(k) => k,
        Phi::All => ranked.len(),
    };
    let mut set = SampleSet::empty(opts.schema);
    if ranked.len() < take {
        log::warn!("only {} of {} requested subsample nodes are eligible", ranked.len(), take);
        set.short = true;
    }
    let geo = PairGeometry::for_graph(g, origin, dest)?;
    let unit = g.radius();
    for &(v, _) in ranked.iter().take(take) {
        for (k, &u) in g.neighbors(v).iter().enumerate() {
            let q = oracle.q[v][k];
            if !q.is_finite() {
                continue;
            }
            let f = geo.pair(g.coord(v), g.coord(u));
            set.push(
                f.vector(opts.schema),
                q / unit,
                Provenance {
                    graph_seed: g.seed(),
                    v,
                    u,
                    origin,
                    dest,
                },
            );
        }
    }
    Ok(set)
}
