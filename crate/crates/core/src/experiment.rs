//! Experiment configuration and the end-to-end pipelines built on it:
//! seed-graph selection, supervised and RL training, evaluation cells,
//! similarity suites, churn runs and the subsampling ablation.

use std::collections::BTreeMap;
use std::fs::File;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::FeatureSchema;
use crate::graph::{GraphSpec, SpaceGraph};
use crate::nn::{train_supervised, ModelProvenance, QModel, QNetwork, TrainConfig};
use crate::oracle::{apsp, pair_context, ShortestPaths};
use crate::policy::{apnsp_accuracy, dynamics_run, route, EvalReport, Fallback, LocalView, PairFilter, Policy, RemovalEvent};
use crate::ranking::{choose_subsample_pair, select_seed_graph, sim_graph, Phi, RankedSeed, RankingMetric, SimOptions, SimSummary, SubsampleOptions};
use crate::rl::{choose_sources, train_rl, EpisodeMetrics, RlConfig, StretchBound};
use crate::samples::SampleSet;
use crate::seed::{derive_seed, rng_from_seed};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Space {
    Euclidean,
    Hyperbolic,
}

/// Every knob of an experiment; keys follow the usual symbol names.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub master_seed: u64,
    /// Space of the seed graph.
    pub space: Space,
    #[serde(rename = "N_train")]
    pub n_train: usize,
    pub rho_train: f64,
    /// Target mean degree of a hyperbolic seed graph.
    pub delta_train: f64,
    #[serde(rename = "N_test")]
    pub n_test: Vec<usize>,
    pub rho_test: Vec<f64>,
    #[serde(rename = "R")]
    pub radius: f64,
    /// Input width: 2 for distances only, 4 with node stretch.
    #[serde(rename = "Omega")]
    pub omega: usize,
    /// Number of hidden layers.
    #[serde(rename = "K")]
    pub hidden_layers: usize,
    /// Hidden widths; empty means `[50 Omega, Omega]`.
    #[serde(rename = "N_e")]
    pub hidden_widths: Vec<usize>,
    pub epsilon: f64,
    pub phi: Phi,
    pub gamma: f64,
    #[serde(rename = "IterNum_S")]
    pub iter_num_s: usize,
    #[serde(rename = "IterNum_RL")]
    pub iter_num_rl: usize,
    #[serde(rename = "EpiNum")]
    pub epi_num: usize,
    pub delta_test: Vec<f64>,
    pub alpha: f64,
    /// Node count of hyperbolic test graphs.
    #[serde(rename = "N_hyperbolic")]
    pub n_hyperbolic: usize,
    pub graphs_per_cell: usize,
    #[serde(rename = "C")]
    pub penalty: f64,
    pub learning_rate: f64,
    pub seed_candidates: usize,
    pub pair_candidates: usize,
    /// `(O, D)` pairs whose subsamples are pooled into one training set.
    pub subsample_pairs: usize,
    /// Independent initializations fitted; the lowest final loss is kept.
    pub restarts: usize,
    pub rl_sources: usize,
    pub stretch_bound: StretchBound,
    pub output_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            master_seed: 2024,
            space: Space::Euclidean,
            n_train: 50,
            rho_train: 5.0,
            delta_train: 4.0,
            n_test: vec![27, 64, 125, 216],
            rho_test: vec![2.0, 3.0, 4.0, 5.0],
            radius: 1000.0,
            omega: 4,
            hidden_layers: 2,
            hidden_widths: Vec::new(),
            epsilon: 0.05,
            phi: Phi::Count(3),
            gamma: 1.0,
            iter_num_s: 5000,
            iter_num_rl: 1000,
            epi_num: 20,
            delta_test: vec![1.0, 2.0, 3.0, 4.0],
            alpha: 0.6,
            n_hyperbolic: 64,
            graphs_per_cell: 20,
            penalty: 1.0,
            learning_rate: 1e-3,
            seed_candidates: 20,
            pair_candidates: 32,
            subsample_pairs: 40,
            restarts: 4,
            rl_sources: 3,
            stretch_bound: StretchBound::OracleZeta,
            output_dir: PathBuf::from("out"),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        ExperimentConfig::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.omega != 2 && self.omega != 4 {
            return bad(format!("Omega must be 2 or 4, got {}", self.omega));
        }
        if !self.hidden_widths.is_empty() && self.hidden_widths.len() != self.hidden_layers {
            return bad(format!("K = {} but N_e lists {} widths", self.hidden_layers, self.hidden_widths.len()));
        }
        if self.hidden_widths.contains(&0) {
            return bad("hidden widths must be positive".into());
        }
        if !(self.radius > 0.0) || !(self.rho_train > 0.0) || !(self.epsilon >= 0.0) || !(self.penalty > 0.0) {
            return bad("R, rho_train and C must be positive and epsilon non-negative".into());
        }
        if self.gamma != 1.0 {
            return bad(format!("only gamma = 1 is supported, got {}", self.gamma));
        }
        if self.n_train < 2 || self.iter_num_s == 0 || self.epi_num == 0 || self.graphs_per_cell == 0 {
            return bad("N_train >= 2 and IterNum_S, EpiNum, graphs_per_cell >= 1 required".into());
        }
        if self.seed_candidates == 0 || self.pair_candidates == 0 || self.rl_sources == 0 {
            return bad("seed_candidates, pair_candidates and rl_sources must be >= 1".into());
        }
        if self.subsample_pairs == 0 || self.restarts == 0 {
            return bad("subsample_pairs and restarts must be >= 1".into());
        }
        if let Phi::Count(0) = self.phi {
            return bad("phi must be at least 1".into());
        }
        Ok(())
    }

    pub fn schema(&self) -> FeatureSchema {
        if self.omega == 2 {
            FeatureSchema::DistOnly
        } else {
            FeatureSchema::DistAndStretch
        }
    }

    /// Copy of this config with a different input width.
    pub fn with_schema(&self, schema: FeatureSchema) -> Self {
        ExperimentConfig { omega: schema.width(), ..self.clone() }
    }

    /// Layer widths `[Omega, N_e..., 1]`.
    pub fn layer_widths(&self) -> Vec<usize> {
        let w = self.omega;
        let hidden = if self.hidden_widths.is_empty() {
            match self.hidden_layers {
                0 => Vec::new(),
                1 => vec![50 * w],
                k => std::iter::once(50 * w).chain(std::iter::repeat(w).take(k - 1)).collect(),
            }
        } else {
            self.hidden_widths.clone()
        };
        std::iter::once(w).chain(hidden).chain(std::iter::once(1)).collect()
    }

    /// Keys whose values differ from the defaults, as `key = value` lines.
    pub fn overrides(&self) -> Vec<String> {
        let mine = toml::Value::try_from(self).ok();
        let base = toml::Value::try_from(ExperimentConfig::default()).ok();
        match (mine, base) {
            (Some(toml::Value::Table(a)), Some(toml::Value::Table(b))) => a
                .iter()
                .filter(|(k, v)| b.get(*k) != Some(*v))
                .map(|(k, v)| format!("{k} = {v}"))
                .collect(),
            _ => Vec::new(),
        }
    }

    fn sim_options(&self) -> SimOptions {
        SimOptions {
            epsilon: self.epsilon,
            penalty: self.penalty,
            sample_seed: derive_seed(self.master_seed, "sim-sample", 0),
            ..SimOptions::default()
        }
    }

    fn seed_spec(&self, index: u64) -> GraphSpec {
        let seed = derive_seed(self.master_seed, "seed-graph", index);
        match self.space {
            Space::Euclidean => GraphSpec::Euclidean { n: self.n_train, rho: self.rho_train, radius: self.radius, seed },
            Space::Hyperbolic => GraphSpec::Hyperbolic {
                n: self.n_train,
                delta: self.delta_train,
                alpha: self.alpha,
                radius: None,
                seed,
            },
        }
    }
}

/// A family of test graphs sharing size and density.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub space: Space,
    pub n: usize,
    /// `rho` for Euclidean cells, target mean degree for hyperbolic ones.
    pub density: f64,
}

impl Cell {
    pub fn euclidean(n: usize, rho: f64) -> Self {
        Cell { space: Space::Euclidean, n, density: rho }
    }

    pub fn hyperbolic(n: usize, delta: f64) -> Self {
        Cell { space: Space::Hyperbolic, n, density: delta }
    }

    pub fn label(&self) -> String {
        let space = match self.space {
            Space::Euclidean => "euclidean",
            Space::Hyperbolic => "hyperbolic",
        };
        format!("{space}-n{}-d{}", self.n, self.density)
    }

    /// Spec of the `index`-th graph of this cell.
    pub fn spec(&self, cfg: &ExperimentConfig, stream: &str, index: usize) -> GraphSpec {
        let seed = derive_seed(cfg.master_seed, &format!("{stream}/{}", self.label()), index as u64);
        match self.space {
            Space::Euclidean => GraphSpec::Euclidean { n: self.n, rho: self.density, radius: cfg.radius, seed },
            Space::Hyperbolic => GraphSpec::Hyperbolic {
                n: self.n,
                delta: self.density,
                alpha: cfg.alpha,
                radius: None,
                seed,
            },
        }
    }

    pub fn graphs(&self, cfg: &ExperimentConfig, stream: &str, count: usize) -> Result<Vec<SpaceGraph>> {
        (0..count).into_par_iter().map(|i| self.spec(cfg, stream, i).generate()).collect()
    }
}

/// The default Euclidean evaluation grid.
pub fn euclidean_cells(cfg: &ExperimentConfig) -> Vec<Cell> {
    cfg.n_test
        .iter()
        .flat_map(|&n| cfg.rho_test.iter().map(move |&rho| Cell::euclidean(n, rho)))
        .collect()
}

pub fn hyperbolic_cells(cfg: &ExperimentConfig) -> Vec<Cell> {
    cfg.delta_test.iter().map(|&d| Cell::hyperbolic(cfg.n_hyperbolic, d)).collect()
}

/// The chosen seed graph and how it ranked.
#[derive(Clone, Debug)]
pub struct SeedSelection {
    pub spec: GraphSpec,
    pub graph: SpaceGraph,
    pub sp: ShortestPaths,
    pub ranking: Vec<RankedSeed>,
}

/// Scores `seed_candidates` generated graphs by `SIM_G(metric)` and keeps
/// the best.
pub fn select_seed(cfg: &ExperimentConfig, metric: &RankingMetric) -> Result<SeedSelection> {
    let candidates: Vec<GraphSpec> = (0..cfg.seed_candidates as u64).map(|i| cfg.seed_spec(i)).collect();
    let ranking = select_seed_graph(&candidates, metric, &cfg.sim_options(), candidates.len())?;
    let spec = ranking[0].spec;
    let graph = spec.generate()?;
    let sp = apsp(&graph);
    Ok(SeedSelection { spec, graph, sp, ranking })
}

/// Metric used to rank seed graphs and subsample nodes for a schema.
pub fn metric_for(schema: FeatureSchema) -> RankingMetric {
    match schema {
        FeatureSchema::DistOnly => RankingMetric::M1,
        FeatureSchema::DistAndStretch => RankingMetric::M2,
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub model: QModel,
    pub seed: GraphSpec,
    /// Supervised runs: the subsample and its loss trace.
    pub samples: Option<SampleSet>,
    pub loss_trace: Vec<f64>,
    /// RL runs: per-episode metrics.
    pub episodes: Vec<EpisodeMetrics>,
}

fn initial_net(cfg: &ExperimentConfig, label: &str, restart: usize) -> Result<(QNetwork, u64)> {
    let seed = derive_seed(cfg.master_seed, label, (cfg.omega * 1000 + restart) as u64);
    Ok((QNetwork::new(&cfg.layer_widths(), seed)?, seed))
}

/// Up to `count` distinct pairs, each the farthest of `pair_candidates` draws.
pub fn subsample_pairs(cfg: &ExperimentConfig, g: &SpaceGraph, sp: &ShortestPaths, count: usize) -> Vec<(usize, usize)> {
    let mut rng = rng_from_seed(derive_seed(cfg.master_seed, "subsample-pair", 0));
    let mut pairs = Vec::with_capacity(count);
    for _ in 0..count * 4 {
        if pairs.len() == count {
            break;
        }
        match choose_subsample_pair(g, sp, &mut rng, cfg.pair_candidates) {
            Some(p) if !pairs.contains(&p) => pairs.push(p),
            Some(_) => {}
            None => break,
        }
    }
    pairs
}

/// Seed graph, pooled subsamples over several `(O, D)` pairs and a
/// supervised fit from `restarts` initializations.
pub fn run_supervised(cfg: &ExperimentConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    let schema = cfg.schema();
    let metric = metric_for(schema);
    let seed = select_seed(cfg, &metric)?;
    let pairs = subsample_pairs(cfg, &seed.graph, &seed.sp, cfg.subsample_pairs);
    if pairs.is_empty() {
        return Err(Error::Empty("reachable pair on the seed graph"));
    }
    let opts = SubsampleOptions { phi: cfg.phi, epsilon: cfg.epsilon, penalty: cfg.penalty, schema };
    let mut samples = SampleSet::empty(schema);
    for &(o, d) in &pairs {
        samples.extend(crate::ranking::subsample(&seed.graph, &seed.sp, o, d, &metric, &opts)?);
    }
    let mean = samples.y.iter().sum::<f64>() / samples.y.len().max(1) as f64;
    let fits = (0..cfg.restarts)
        .into_par_iter()
        .map(|k| {
            let (mut net, init_seed) = initial_net(cfg, "init-supervised", k)?;
            net.set_output_bias(mean);
            let train = TrainConfig { iterations: cfg.iter_num_s, learning_rate: cfg.learning_rate, seed: init_seed };
            let (net, trace) = train_supervised(&net, &samples, &train)?;
            Ok((k, init_seed, net, trace))
        })
        .collect::<Result<Vec<_>>>()?;
    let (restart, init_seed, net, loss_trace) = fits
        .into_iter()
        .min_by(|a, b| a.3.last().copied().unwrap_or(f64::INFINITY).total_cmp(&b.3.last().copied().unwrap_or(f64::INFINITY)))
        .expect("restarts >= 1");
    log::info!("supervised fit kept restart {restart} (loss {:.3e})", loss_trace.last().copied().unwrap_or(f64::NAN));
    let model = QModel {
        net,
        schema,
        norm_radius: seed.graph.radius(),
        provenance: ModelProvenance {
            mode: "supervised".into(),
            seed_graph: Some(seed.spec),
            phi: Some(cfg.phi),
            pairs,
            restart: Some(restart),
            init_seed,
            iterations: cfg.iter_num_s,
            episodes: None,
            learning_rate: cfg.learning_rate,
        },
    };
    Ok(TrainOutcome { model, seed: seed.spec, samples: Some(samples), loss_trace, episodes: Vec::new() })
}

/// Seed graph, destination and sources, then episodic RL from `restarts`
/// initializations; the run with the lowest final fit loss is kept.
pub fn run_rl(cfg: &ExperimentConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    let schema = cfg.schema();
    let seed = select_seed(cfg, &metric_for(schema))?;
    let (_, dest) = *subsample_pairs(cfg, &seed.graph, &seed.sp, 1)
        .first()
        .ok_or(Error::Empty("reachable pair on the seed graph"))?;
    let sources = choose_sources(&seed.graph, &seed.sp, dest, cfg.rl_sources);
    let rl = RlConfig {
        episodes: cfg.epi_num,
        iterations: cfg.iter_num_rl,
        sources,
        dest,
        gamma: cfg.gamma,
        penalty: cfg.penalty,
        epsilon: cfg.epsilon,
        bound: cfg.stretch_bound,
        learning_rate: cfg.learning_rate,
        schema,
    };
    let runs = (0..cfg.restarts)
        .into_par_iter()
        .map(|k| {
            let (net, init_seed) = initial_net(cfg, "init-rl", k)?;
            let (model, episodes) = train_rl(&seed.graph, &seed.sp, &rl, net, init_seed)?;
            Ok((k, model, episodes))
        })
        .collect::<Result<Vec<_>>>()?;
    let final_loss = |e: &[EpisodeMetrics]| e.last().map_or(f64::INFINITY, |m| if m.fit_loss.is_nan() { f64::INFINITY } else { m.fit_loss });
    let (restart, mut model, episodes) = runs
        .into_iter()
        .min_by(|a, b| final_loss(&a.2).total_cmp(&final_loss(&b.2)))
        .expect("restarts >= 1");
    log::info!("rl kept restart {restart}");
    model.provenance.seed_graph = Some(seed.spec);
    model.provenance.restart = Some(restart);
    Ok(TrainOutcome { model, seed: seed.spec, samples: None, loss_trace: Vec::new(), episodes })
}

/// A named policy for evaluation tables.
#[derive(Clone, Debug)]
pub struct NamedPolicy {
    pub name: String,
    pub policy: Policy,
}

impl NamedPolicy {
    pub fn new(name: impl Into<String>, policy: Policy) -> Self {
        NamedPolicy { name: name.into(), policy }
    }

    pub fn model(name: impl Into<String>, model: QModel) -> Self {
        NamedPolicy::new(name, Policy::NeuralQ(Arc::new(model)))
    }
}

/// Evaluates every policy on `count` graphs of `cell`; one report per
/// (graph, policy).
pub fn eval_cell(
    cfg: &ExperimentConfig,
    cell: &Cell,
    policies: &[NamedPolicy],
    fallback: Fallback,
    count: usize,
) -> Result<Vec<EvalReport>> {
    let graphs = cell.graphs(cfg, "eval", count)?;
    let mut reports = Vec::with_capacity(graphs.len() * policies.len());
    for g in &graphs {
        let sp = apsp(g);
        for p in policies {
            let mut r = apnsp_accuracy(&p.policy, g, &sp, cfg.epsilon, fallback, &PairFilter::All)?;
            r.policy.clone_from(&p.name);
            reports.push(r);
        }
    }
    Ok(reports)
}

/// The shortest-path oracle on the same graphs as [`eval_cell`]; it needs
/// each graph's distance table, so it cannot be a shared [`NamedPolicy`].
pub fn eval_oracle_cell(cfg: &ExperimentConfig, cell: &Cell, fallback: Fallback, count: usize) -> Result<Vec<EvalReport>> {
    let graphs = cell.graphs(cfg, "eval", count)?;
    let mut reports = Vec::with_capacity(graphs.len());
    for g in &graphs {
        let sp = Arc::new(apsp(g));
        let mut r = apnsp_accuracy(&Policy::OracleShortest(sp.clone()), g, &sp, cfg.epsilon, fallback, &PairFilter::All)?;
        r.policy = "oracle".into();
        reports.push(r);
    }
    Ok(reports)
}

/// Mean accuracy of one policy over one cell.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CellSummary {
    pub cell: String,
    pub n: usize,
    pub density: f64,
    pub policy: String,
    pub graphs: usize,
    pub accuracy: f64,
    pub accuracy_all_pairs: f64,
    pub accuracy_delivered: f64,
}

pub fn summarize(cell: &Cell, reports: &[EvalReport]) -> Vec<CellSummary> {
    let mut by_policy: BTreeMap<&str, Vec<&EvalReport>> = BTreeMap::new();
    for r in reports {
        by_policy.entry(&r.policy).or_default().push(r);
    }
    let mean = |rs: &[&EvalReport], f: fn(&EvalReport) -> f64| rs.iter().map(|r| f(r)).sum::<f64>() / rs.len() as f64;
    by_policy
        .into_iter()
        .map(|(policy, rs)| CellSummary {
            cell: cell.label(),
            n: cell.n,
            density: cell.density,
            policy: policy.to_string(),
            graphs: rs.len(),
            accuracy: mean(&rs, |r| r.accuracy),
            accuracy_all_pairs: mean(&rs, |r| r.accuracy_all_pairs),
            accuracy_delivered: mean(&rs, |r| r.accuracy_delivered),
        })
        .collect()
}

pub fn write_csv<T: Serialize>(path: impl AsRef<Path>, rows: &[T]) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_writer(File::create(path).map_err(|e| Error::io(path, e))?);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Decision-level agreement between two policies over every `(v, D)` with
/// `O = v`, skipping points where `reference` has a tie at the top.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct Agreement {
    pub decisions: usize,
    pub agreeing: usize,
    pub tied: usize,
}

impl Agreement {
    pub fn rate(&self) -> f64 {
        if self.decisions == 0 {
            1.0
        } else {
            self.agreeing as f64 / self.decisions as f64
        }
    }
}

pub fn decision_agreement(a: &Policy, reference: &Policy, g: &SpaceGraph) -> Result<Agreement> {
    let n = g.n();
    let per_dest = (0..n)
        .into_par_iter()
        .map(|dest| {
            let mut acc = Agreement::default();
            for v in 0..n {
                if v == dest || g.degree(v) < 2 || g.distance(v, dest) == 0.0 {
                    continue;
                }
                let geometry = crate::features::PairGeometry::for_graph(g, v, dest)?;
                let candidates = crate::policy::local_candidates(g, v, |_| true);
                let view = LocalView { holder: v, holder_coord: *g.coord(v), dest, geometry, candidates: &candidates };
                let mut scores: Vec<f64> = candidates.iter().map(|c| reference.score(&view, c)).collect();
                scores.sort_by(|x, y| y.total_cmp(x));
                if scores[0] == scores[1] {
                    acc.tied += 1;
                    continue;
                }
                acc.decisions += 1;
                if a.choose(&view) == reference.choose(&view) {
                    acc.agreeing += 1;
                }
            }
            Ok(acc)
        })
        .collect::<Result<Vec<Agreement>>>()?;
    Ok(per_dest.into_iter().fold(Agreement::default(), |s, a| Agreement {
        decisions: s.decisions + a.decisions,
        agreeing: s.agreeing + a.agreeing,
        tied: s.tied + a.tied,
    }))
}

/// `SIM_G` of `metric` on `count` graphs of the seed-graph distribution.
pub fn similarity_suite(cfg: &ExperimentConfig, metric: &RankingMetric, count: usize) -> Result<Vec<(GraphSpec, SimSummary)>> {
    let cell = match cfg.space {
        Space::Euclidean => Cell::euclidean(cfg.n_train, cfg.rho_train),
        Space::Hyperbolic => Cell::hyperbolic(cfg.n_train, cfg.delta_train),
    };
    if count == 0 {
        return Err(Error::Empty("similarity graph list"));
    }
    let opts = cfg.sim_options();
    (0..count)
        .into_par_iter()
        .map(|i| {
            let spec = cell.spec(cfg, "similarity", i);
            let g = spec.generate()?;
            let sp = apsp(&g);
            Ok((spec, sim_graph(&g, &sp, metric, &opts)?))
        })
        .collect()
}

/// Churn experiment totals.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct ChurnSummary {
    pub packets: usize,
    /// Packets whose holder could still reach D after the removals.
    pub recoverable: usize,
    pub delivered: usize,
    pub delivered_recoverable: usize,
}

impl ChurnSummary {
    pub fn delivery_rate(&self) -> f64 {
        if self.recoverable == 0 {
            1.0
        } else {
            self.delivered_recoverable as f64 / self.recoverable as f64
        }
    }
}

/// Routes `pairs_per_graph` random pairs per graph, removing `fraction` of
/// the nodes halfway along the undisturbed route.
pub fn churn_suite(
    cfg: &ExperimentConfig,
    cell: &Cell,
    policy: &Policy,
    fallback: Fallback,
    count: usize,
    pairs_per_graph: usize,
    fraction: f64,
) -> Result<ChurnSummary> {
    let graphs = cell.graphs(cfg, "churn", count)?;
    let parts = graphs
        .par_iter()
        .enumerate()
        .map(|(gi, g)| {
            let sp = apsp(g);
            let n = g.n();
            let mut rng = rng_from_seed(derive_seed(cfg.master_seed, "churn-removals", gi as u64));
            let mut pairs: Vec<(usize, usize)> = (0..n)
                .flat_map(|o| (0..n).map(move |d| (o, d)))
                .filter(|&(o, d)| o != d && sp.reachable(o, d) && g.distance(o, d) > 0.0)
                .collect();
            pairs.shuffle(&mut rng);
            pairs.truncate(pairs_per_graph);
            let k = ((n as f64) * fraction).round() as usize;
            let mut acc = ChurnSummary::default();
            for (o, d) in pairs {
                let ctx = pair_context(g, &sp, o, d, cfg.epsilon)?;
                let plain = route(policy, g, &ctx, fallback)?;
                let at_hop = (plain.hops() / 2).max(1);
                let mut nodes: Vec<usize> = (0..n).collect();
                nodes.shuffle(&mut rng);
                nodes.truncate(k);
                let run = dynamics_run(policy, g, &ctx, fallback, &[RemovalEvent { at_hop, nodes }])?;
                acc.packets += 1;
                acc.delivered += run.route.delivered as usize;
                if run.recoverable {
                    acc.recoverable += 1;
                    acc.delivered_recoverable += run.route.delivered as usize;
                }
            }
            Ok(acc)
        })
        .collect::<Result<Vec<ChurnSummary>>>()?;
    Ok(parts.into_iter().fold(ChurnSummary::default(), |s, a| ChurnSummary {
        packets: s.packets + a.packets,
        recoverable: s.recoverable + a.recoverable,
        delivered: s.delivered + a.delivered,
        delivered_recoverable: s.delivered_recoverable + a.delivered_recoverable,
    }))
}

/// Accuracy of models trained with subsampling and with every node.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AblationRow {
    pub cell: String,
    pub phi: String,
    pub samples: usize,
    pub accuracy: f64,
}

pub fn subsampling_ablation(cfg: &ExperimentConfig, cells: &[Cell], count: usize) -> Result<Vec<AblationRow>> {
    let mut rows = Vec::new();
    for phi in [cfg.phi, Phi::All] {
        let run = run_supervised(&ExperimentConfig { phi, ..cfg.clone() })?;
        let samples = run.samples.as_ref().map_or(0, SampleSet::len);
        let policy = NamedPolicy::model(format!("phi-{phi}"), run.model);
        for cell in cells {
            let reports = eval_cell(cfg, cell, std::slice::from_ref(&policy), Fallback::None, count)?;
            for s in summarize(cell, &reports) {
                rows.push(AblationRow { cell: s.cell, phi: phi.to_string(), samples, accuracy: s.accuracy });
            }
        }
    }
    Ok(rows)
}
