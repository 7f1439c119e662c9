//! Episodic Q-learning on a single seed graph: greedy rollouts from a few
//! sources, bootstrapped targets from the current network, full-batch fits.

use std::fs::File;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{FeatureSchema, FeatureVector, PairGeometry};
use crate::graph::SpaceGraph;
use crate::nn::{fit, Adam, ModelProvenance, QModel, QNetwork};
use crate::oracle::{pair_context, reward_unchecked, ShortestPaths, DEFAULT_EPSILON, DEFAULT_PENALTY};
use crate::policy::Scorer;
use crate::samples::{Provenance, SampleSet};

/// Which path stretch the reward's ellipse bound uses.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", content = "factor", rename_all = "kebab-case")]
pub enum StretchBound {
    /// The true `zeta(O, D)` of each source.
    OracleZeta,
    /// The same constant for every source.
    FixedFactor(f64),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RlConfig {
    pub episodes: usize,
    /// Fitting steps per episode.
    pub iterations: usize,
    pub sources: Vec<usize>,
    pub dest: usize,
    pub gamma: f64,
    pub penalty: f64,
    pub epsilon: f64,
    pub bound: StretchBound,
    pub learning_rate: f64,
    pub schema: FeatureSchema,
}

impl RlConfig {
    pub fn new(sources: Vec<usize>, dest: usize) -> Self {
        RlConfig {
            episodes: 20,
            iterations: 1000,
            sources,
            dest,
            gamma: 1.0,
            penalty: DEFAULT_PENALTY,
            epsilon: DEFAULT_EPSILON,
            bound: StretchBound::OracleZeta,
            learning_rate: 1e-3,
            schema: FeatureSchema::DistAndStretch,
        }
    }

    fn validate(&self, g: &SpaceGraph) -> Result<()> {
        if self.episodes == 0 {
            return Err(Error::InvalidParameter("EpiNum must be at least 1".into()));
        }
        if self.sources.is_empty() {
            return Err(Error::Empty("RL source set"));
        }
        g.check_id(self.dest)?;
        for &s in &self.sources {
            g.check_id(s)?;
            if s == self.dest {
                return Err(Error::InvalidParameter(format!("source {s} is the destination")));
            }
        }
        if let StretchBound::FixedFactor(k) = self.bound {
            if !(k >= 1.0) {
                return Err(Error::InvalidParameter(format!("fixed stretch factor must be >= 1, got {k}")));
            }
        }
        Ok(())
    }
}

/// The `k` nodes farthest (straight-line) from `dest` that can reach it.
pub fn choose_sources(g: &SpaceGraph, sp: &ShortestPaths, dest: usize, k: usize) -> Vec<usize> {
    let mut nodes: Vec<usize> = (0..g.n())
        .filter(|&v| v != dest && sp.reachable(v, dest) && g.distance(v, dest) > 0.0)
        .collect();
    nodes.sort_by(|&a, &b| g.distance(b, dest).total_cmp(&g.distance(a, dest)).then(a.cmp(&b)));
    nodes.truncate(k);
    nodes
}

fn best_action(scorer: &dyn Scorer, g: &SpaceGraph, geo: &PairGeometry, v: usize, usable: impl Fn(usize) -> bool) -> Option<(usize, f64)> {
    let cv = g.coord(v);
    let mut best: Option<(usize, f64)> = None;
    for &u in g.neighbors(v) {
        if !usable(u) {
            continue;
        }
        let s = scorer.score(&geo.pair(cv, g.coord(u)));
        if best.map_or(true, |(_, b)| s > b) {
            best = Some((u, s));
        }
    }
    best
}

/// Greedy walk under the network with a visited set; stops at `dest` or at
/// a node with no unvisited neighbor, so the path may not end at `dest`.
pub fn rollout_path(scorer: &dyn Scorer, g: &SpaceGraph, origin: usize, dest: usize) -> Result<Vec<usize>> {
    let geo = PairGeometry::for_graph(g, origin, dest)?;
    let mut visited = vec![false; g.n()];
    let mut path = vec![origin];
    visited[origin] = true;
    let mut v = origin;
    while v != dest {
        let Some((u, _)) = best_action(scorer, g, &geo, v, |u| !visited[u]) else { break };
        visited[u] = true;
        path.push(u);
        v = u;
    }
    Ok(path)
}

/// Bootstrapped targets `Y = r(v,u)/R + gamma max_a' Q(u, a')` for every
/// neighbor of every non-terminal node on the given `(origin, path)` rollouts.
pub fn collect_episode_samples(
    scorer: &dyn Scorer,
    g: &SpaceGraph,
    sp: &ShortestPaths,
    paths: &[(usize, Vec<usize>)],
    cfg: &RlConfig,
) -> Result<SampleSet> {
    let dest = cfg.dest;
    let unit = g.radius();
    let mut set = SampleSet::empty(cfg.schema);
    for (origin, path) in paths {
        let mut ctx = pair_context(g, sp, *origin, dest, cfg.epsilon)?;
        if let StretchBound::FixedFactor(k) = cfg.bound {
            ctx = ctx.with_zeta(k);
        }
        let bound = ctx.bound();
        let geo = PairGeometry::for_graph(g, *origin, dest)?;
        for &v in path.iter().filter(|&&v| v != dest) {
            for &u in g.neighbors(v) {
                let r = reward_unchecked(g.distance(v, u), sp.get(u, dest), sp.get(v, dest), bound, cfg.penalty);
                if !r.is_finite() {
                    continue;
                }
                let mut y = r / unit;
                if u != dest {
                    let (_, next) = best_action(scorer, g, &geo, u, |_| true).expect("u has at least one neighbor (v)");
                    y += cfg.gamma * next;
                }
                let f = geo.pair(g.coord(v), g.coord(u));
                set.push(
                    f.vector(cfg.schema),
                    y,
                    Provenance { graph_seed: g.seed(), v, u, origin: *origin, dest },
                );
            }
        }
    }
    Ok(set)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeMetrics {
    pub episode: usize,
    /// Mean `|Y - Q(X)|` on the episode's samples before fitting.
    pub mean_td_error: f64,
    /// Fraction of rollouts that reached the destination.
    pub rollout_success_rate: f64,
    /// Mean `d_p / d_sp` over successful rollouts (`NaN` when none).
    pub mean_path_stretch: f64,
    pub samples: usize,
    /// Mean squared error after this episode's fit.
    pub fit_loss: f64,
}

pub fn write_episode_metrics(path: impl AsRef<Path>, metrics: &[EpisodeMetrics]) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_writer(File::create(path).map_err(|e| Error::io(path, e))?);
    for m in metrics {
        w.serialize(m)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Runs `cfg.episodes` rounds of rollout, sample collection and fitting; the
/// optimizer state carries over between episodes. Before the first fit the
/// output bias is shifted so the mean prediction matches the mean target.
pub fn train_rl(g: &SpaceGraph, sp: &ShortestPaths, cfg: &RlConfig, net: QNetwork, init_seed: u64) -> Result<(QModel, Vec<EpisodeMetrics>)> {
    cfg.validate(g)?;
    if net.input_width() != cfg.schema.width() {
        return Err(Error::Schema { expected: cfg.schema.width(), got: net.input_width() });
    }
    let mut model = QModel {
        net,
        schema: cfg.schema,
        norm_radius: g.radius(),
        provenance: ModelProvenance {
            mode: "rl".into(),
            seed_graph: None,
            phi: None,
            pairs: Vec::new(),
            restart: None,
            init_seed,
            iterations: cfg.iterations,
            episodes: Some(cfg.episodes),
            learning_rate: cfg.learning_rate,
        },
    };
    let mut opt = Adam::new(model.net.param_count(), cfg.learning_rate);
    let mut metrics = Vec::with_capacity(cfg.episodes);
    for episode in 0..cfg.episodes {
        let mut paths = Vec::with_capacity(cfg.sources.len());
        for &o in &cfg.sources {
            paths.push((o, rollout_path(&model, g, o, cfg.dest)?));
        }
        let samples = collect_episode_samples(&model, g, sp, &paths, cfg)?;
        let xs: Vec<&[f64]> = samples.x.iter().map(FeatureVector::as_slice).collect();
        let mean_td_error = if xs.is_empty() {
            0.0
        } else {
            xs.iter().zip(&samples.y).map(|(x, y)| (model.net.eval(x) - y).abs()).sum::<f64>() / xs.len() as f64
        };
        if episode == 0 && cfg.iterations > 0 && !xs.is_empty() {
            let k = xs.len() as f64;
            let shift = samples.y.iter().sum::<f64>() / k - xs.iter().map(|x| model.net.eval(x)).sum::<f64>() / k;
            let b = model.net.layers().last().expect("non-empty").bias()[0];
            model.net.set_output_bias(b + shift);
        }
        let delivered: Vec<f64> = paths
            .iter()
            .filter(|(_, p)| p.last() == Some(&cfg.dest))
            .map(|(o, p)| p.windows(2).map(|w| g.distance(w[0], w[1])).sum::<f64>() / sp.get(*o, cfg.dest))
            .collect();
        metrics.push(EpisodeMetrics {
            episode,
            mean_td_error,
            rollout_success_rate: delivered.len() as f64 / paths.len() as f64,
            mean_path_stretch: if delivered.is_empty() {
                f64::NAN
            } else {
                delivered.iter().sum::<f64>() / delivered.len() as f64
            },
            samples: samples.len(),
            fit_loss: f64::NAN,
        });
        log::debug!("rl episode {episode}: {} samples, td {mean_td_error:.4}", samples.len());
        if cfg.iterations > 0 && !xs.is_empty() {
            let trace = fit(&mut model.net, &mut opt, &xs, &samples.y, cfg.iterations)
                .map_err(|e| Error::RlDivergence { episode, source: Box::new(e) })?;
            metrics.last_mut().expect("pushed above").fit_loss = *trace.last().expect("non-empty trace");
        }
    }
    Ok((model, metrics))
}
