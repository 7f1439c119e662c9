//! Property tests, one per stated invariant of each module.

use std::sync::{Arc, OnceLock};

use proptest::prelude::*;

use tensile_core::experiment::{decision_agreement, run_supervised, ExperimentConfig};
use tensile_core::features::{node_stretch, FeatureSchema, FeatureVector, PairFeatures, PairGeometry};
use tensile_core::graph::{generate_euclidean, generate_hyperbolic, Density, NodeCoord, SpaceKind};
use tensile_core::nn::{gradient_check, ModelProvenance, QModel, QNetwork, TrainConfig};
use tensile_core::oracle::{apsp, floyd_warshall, optimal_q, pair_context, OracleTable, DEFAULT_EPSILON, DEFAULT_PENALTY};
use tensile_core::policy::{choose_forwarder, eta, route, Fallback, Policy, Scorer};
use tensile_core::ranking::{check_pointwise_monotonicity, dcg, ranking_similarity, sim_v, Orientation, RankingMetric};
use tensile_core::rl::{collect_episode_samples, rollout_path, train_rl, RlConfig};
use tensile_core::samples::{Provenance, SampleSet};
use tensile_core::SpaceGraph;

const R: f64 = 1000.0;

fn euclid(n: usize, rho: f64, seed: u64) -> SpaceGraph {
    generate_euclidean(n, rho, R, seed).unwrap()
}

fn hyper(n: usize, delta: f64, seed: u64) -> SpaceGraph {
    generate_hyperbolic(n, delta, 0.6, None, seed).unwrap()
}

fn reachable_pairs(g: &SpaceGraph, sp: &tensile_core::ShortestPaths) -> Vec<(usize, usize)> {
    (0..g.n())
        .flat_map(|o| (0..g.n()).map(move |d| (o, d)))
        .filter(|&(o, d)| o != d && sp.reachable(o, d) && g.distance(o, d) > 0.0)
        .collect()
}

/// Expected degree for uniform points in a square of side `side`, radius `r`.
fn expected_degree(n: usize, side: f64, r: f64) -> f64 {
    let t = r / side;
    let p = std::f64::consts::PI * t * t - 8.0 / 3.0 * t.powi(3) + t.powi(4) / 2.0;
    (n - 1) as f64 * p
}

// ---- space-graph ----

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn graphs_are_deterministic_per_seed(n in 2usize..60, rho in 1.0f64..6.0, seed: u64) {
        prop_assert_eq!(euclid(n, rho, seed), euclid(n, rho, seed));
        let h = hyper(n.max(10), 3.0, seed);
        prop_assert_eq!(h, hyper(n.max(10), 3.0, seed));
    }

    #[test]
    fn metric_distance_obeys_the_triangle_inequality(seed: u64, hyperbolic: bool, picks in prop::collection::vec((0usize..30, 0usize..30, 0usize..30), 50)) {
        let g = if hyperbolic { hyper(30, 4.0, seed) } else { euclid(30, 4.0, seed) };
        for (a, b, c) in picks {
            let ab = g.metric_distance(a, b).unwrap();
            let bc = g.metric_distance(b, c).unwrap();
            let ac = g.metric_distance(a, c).unwrap();
            prop_assert!(ac <= (ab + bc) * (1.0 + 1e-9) + 1e-9, "{} > {} + {}", ac, ab, bc);
        }
    }

    #[test]
    fn adjacency_and_distance_are_symmetric(seed: u64, hyperbolic: bool) {
        let g = if hyperbolic { hyper(20, 3.0, seed) } else { euclid(20, 3.0, seed) };
        for v in 0..20 {
            for u in 0..20 {
                prop_assert_eq!(g.is_edge(v, u), g.is_edge(u, v));
                prop_assert_eq!(g.metric_distance(v, u).unwrap(), g.metric_distance(u, v).unwrap());
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    /// Nodes per `R^2` equal `rho` exactly; the mean degree over 20 seeds
    /// tracks the square's exact expectation.
    #[test]
    fn realized_euclidean_density(n in 50usize..120, rho in 2.0f64..6.0, base: u32) {
        let side = tensile_core::graph::square_side(n, rho, R);
        prop_assert!((n as f64 * R * R / (side * side) - rho).abs() < 1e-9);
        let mean = (0..20u64).map(|i| euclid(n, rho, base as u64 * 64 + i).mean_degree()).sum::<f64>() / 20.0;
        let expected = expected_degree(n, side, R);
        prop_assert!((mean / expected - 1.0).abs() <= 0.3, "mean {} expected {}", mean, expected);
    }
}

// ---- shortest-path-oracle ----

fn table(g: &SpaceGraph, sp: &tensile_core::ShortestPaths, o: usize, d: usize) -> OracleTable {
    let ctx = pair_context(g, sp, o, d, DEFAULT_EPSILON).unwrap();
    optimal_q(g, sp, &ctx, DEFAULT_PENALTY).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn qstar_argmax_includes_a_shortest_path_neighbor(n in 5usize..=20, seed: u64, pick: prop::sample::Index) {
        let g = euclid(n, 4.0, seed);
        let sp = apsp(&g);
        let pairs = reachable_pairs(&g, &sp);
        prop_assume!(!pairs.is_empty());
        let (o, d) = pairs[pick.index(pairs.len())];
        let t = table(&g, &sp, o, d);
        for v in (0..n).filter(|&v| v != d && sp.reachable(v, d)) {
            let best = t.q[v].iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let ok = g.neighbors(v).iter().zip(&t.q[v]).any(|(&u, &q)| {
                q >= best - 1e-9 && (g.distance(v, u) + sp.get(u, d) - sp.get(v, d)).abs() <= 1e-9 * sp.get(v, d)
            });
            prop_assert!(ok, "v = {}", v);
        }
    }

    #[test]
    fn penalty_free_edges_have_closed_form_qstar(n in 5usize..30, seed: u64, pick: prop::sample::Index) {
        let g = euclid(n, 4.0, seed);
        let sp = apsp(&g);
        let pairs = reachable_pairs(&g, &sp);
        prop_assume!(!pairs.is_empty());
        let (o, d) = pairs[pick.index(pairs.len())];
        let t = table(&g, &sp, o, d);
        for v in (0..n).filter(|&v| v != d) {
            for &u in g.neighbors(v) {
                if sp.reachable(u, d) && t.penalty_free(&g, v, u) {
                    let closed = -(g.distance(v, u) + sp.get(u, d));
                    prop_assert!((t.qstar(&g, v, u).unwrap() - closed).abs() <= 1e-12 * closed.abs());
                }
            }
        }
    }

    #[test]
    fn qstar_is_monotone_in_path_length(n in 5usize..30, seed: u64, pick: prop::sample::Index) {
        let g = euclid(n, 4.0, seed);
        let sp = apsp(&g);
        let pairs = reachable_pairs(&g, &sp);
        prop_assume!(!pairs.is_empty());
        let (o, d) = pairs[pick.index(pairs.len())];
        let t = table(&g, &sp, o, d);
        for v in (0..n).filter(|&v| v != d) {
            let free: Vec<usize> = g.neighbors(v).iter().copied()
                .filter(|&u| sp.reachable(u, d) && t.penalty_free(&g, v, u)).collect();
            for &a in &free {
                for &b in &free {
                    if g.distance(v, a) + sp.get(a, d) < g.distance(v, b) + sp.get(b, d) {
                        prop_assert!(t.qstar(&g, v, a).unwrap() > t.qstar(&g, v, b).unwrap());
                    }
                }
            }
        }
    }

    #[test]
    fn dijkstra_matches_floyd_warshall(n in 2usize..=30, rho in 1.0f64..6.0, seed: u64) {
        let g = euclid(n, rho, seed);
        prop_assert!(apsp(&g).max_relative_diff(&floyd_warshall(&g)) <= 1e-9);
    }
}

// ---- feature-ranking ----

fn argsort(scores: &[f64]) -> Vec<usize> {
    let mut ids: Vec<usize> = (0..scores.len()).collect();
    ids.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    ids
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn similarity_ignores_positive_affine_maps(scores in prop::collection::vec(-1000i32..1000, 2..10), a in 1i32..50, b in -500i32..500, ideal_seed: u64) {
        let s: Vec<f64> = scores.iter().map(|&x| x as f64).collect();
        let t: Vec<f64> = s.iter().map(|x| a as f64 * x + b as f64).collect();
        let (ra, rb) = (argsort(&s), argsort(&t));
        prop_assert_eq!(&ra, &rb);
        let mut ideal: Vec<usize> = (0..s.len()).collect();
        let k = (ideal_seed % s.len() as u64) as usize;
        ideal.rotate_left(k);
        prop_assert_eq!(ranking_similarity(&ideal, &ra, s.len()).unwrap(), ranking_similarity(&ideal, &rb, s.len()).unwrap());
    }

    #[test]
    fn sim_v_ignores_metric_scaling(n in 10usize..30, seed: u64, c in 0.01f64..100.0, pick: prop::sample::Index) {
        let g = euclid(n, 4.0, seed);
        let sp = apsp(&g);
        let pairs = reachable_pairs(&g, &sp);
        prop_assume!(!pairs.is_empty());
        let (o, d) = pairs[pick.index(pairs.len())];
        let t = table(&g, &sp, o, d);
        let m = RankingMetric::M2;
        let scaled = RankingMetric::custom(m.weights.map(|w| w * c));
        for v in (0..n).filter(|&v| v != d && g.degree(v) > 0) {
            prop_assert_eq!(sim_v(&g, &t, v, &m).unwrap(), sim_v(&g, &t, v, &scaled).unwrap());
        }
    }

    #[test]
    fn dcg_strictly_increases_with_any_relevance(rel in prop::collection::vec(0.0f64..50.0, 1..12), i: prop::sample::Index, bump in 1e-3f64..10.0) {
        let tau = rel.len();
        let i = i.index(tau);
        let mut up = rel.clone();
        up[i] += bump;
        prop_assert!(dcg(&up, tau).unwrap() > dcg(&rel, tau).unwrap());
    }

    #[test]
    fn node_stretch_is_at_least_one(seed: u64, hyperbolic: bool, picks in prop::collection::vec((0usize..40, 0usize..40, 0usize..40), 160)) {
        let g = if hyperbolic { hyper(40, 4.0, seed) } else { euclid(40, 4.0, seed) };
        for (o, d, w) in picks {
            if o == d || g.distance(o, d) == 0.0 {
                continue;
            }
            prop_assert!(node_stretch(&g, o, d, w).unwrap() >= 1.0 - 1e-12);
        }
    }

    #[test]
    fn m1_and_m2_are_pointwise_monotone(raw in prop::collection::vec((0.0f64..10.0, 1.0f64..3.0, 0.0f64..10.0, 1.0f64..3.0), 160)) {
        let feats: Vec<PairFeatures> = raw.iter().map(|&(d_v, ns_v, d_u, ns_u)| PairFeatures { d_v, ns_v, d_u, ns_u }).collect();
        for m in [RankingMetric::M1, RankingMetric::M2] {
            prop_assert!(check_pointwise_monotonicity(&m, &feats, Orientation::NonIncreasing).holds);
        }
    }
}

/// Every permutation of up to 6 items ranked against itself scores 1.
#[test]
fn identical_rankings_have_similarity_one() {
    fn perms(k: usize) -> Vec<Vec<usize>> {
        if k == 0 {
            return vec![Vec::new()];
        }
        let mut out = Vec::new();
        for p in perms(k - 1) {
            for i in 0..=p.len() {
                let mut q = p.clone();
                q.insert(i, k - 1);
                out.push(q);
            }
        }
        out
    }
    for k in 1..=6 {
        for p in perms(k) {
            assert_eq!(ranking_similarity(&p, &p, k).unwrap(), 1.0);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    /// Where the metric's order agrees with `Q*` on a node of degree at most
    /// 6, `sim_v` is exactly 1.
    #[test]
    fn agreeing_orders_give_similarity_one(n in 8usize..25, seed: u64, pick: prop::sample::Index) {
        let g = euclid(n, 3.0, seed);
        let sp = apsp(&g);
        let pairs = reachable_pairs(&g, &sp);
        prop_assume!(!pairs.is_empty());
        let (o, d) = pairs[pick.index(pairs.len())];
        let t = table(&g, &sp, o, d);
        let geo = PairGeometry::for_graph(&g, o, d).unwrap();
        for v in (0..n).filter(|&v| v != d && (1..=6).contains(&g.degree(v))) {
            if t.q[v].iter().any(|q| !q.is_finite()) {
                continue;
            }
            let m: Vec<f64> = g.neighbors(v).iter().map(|&u| RankingMetric::M1.score(&geo.pair(g.coord(v), g.coord(u)))).collect();
            if argsort(&m) == argsort(&t.q[v]) {
                prop_assert_eq!(sim_v(&g, &t, v, &RankingMetric::M1).unwrap(), Some(1.0));
            }
        }
    }
}

// ---- neural-q ----

fn random_samples(schema: FeatureSchema, seed: u64, count: usize) -> SampleSet {
    let mut set = SampleSet::empty(schema);
    let mut x = seed | 1;
    let mut next = || {
        x ^= x << 13;
        x ^= x >> 7;
        x ^= x << 17;
        (x >> 11) as f64 / (1u64 << 53) as f64
    };
    for i in 0..count {
        let vals: Vec<f64> = (0..schema.width()).map(|_| next() * 3.0).collect();
        let y = -vals.iter().sum::<f64>() + next() * 0.1;
        set.push(FeatureVector::new(schema, &vals).unwrap(), y, Provenance { graph_seed: seed, v: i, u: i + 1, origin: 0, dest: 1 });
    }
    set
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn training_is_bit_deterministic(seed: u64, init: u64, omega in prop::sample::select(vec![2usize, 4])) {
        let schema = if omega == 2 { FeatureSchema::DistOnly } else { FeatureSchema::DistAndStretch };
        let samples = random_samples(schema, seed, 30);
        let net = QNetwork::new(&[omega, 12, omega, 1], init).unwrap();
        let cfg = TrainConfig { iterations: 40, learning_rate: 1e-3, seed: init };
        let a = tensile_core::nn::train_supervised(&net, &samples, &cfg).unwrap();
        let b = tensile_core::nn::train_supervised(&net, &samples, &cfg).unwrap();
        prop_assert_eq!(a.0.params(), b.0.params());
        prop_assert_eq!(a.1, b.1);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(50))]

    #[test]
    fn gradients_match_finite_differences(init: u64, omega in prop::sample::select(vec![2usize, 4]), hidden in 1usize..3, width in 2usize..9, x in prop::collection::vec(0.0f64..3.0, 4), y in -3.0f64..0.0) {
        let mut widths = vec![omega];
        widths.extend(std::iter::repeat(width).take(hidden));
        widths.push(1);
        let net = QNetwork::new(&widths, init).unwrap();
        let check = gradient_check(&net, &x[..omega], y).unwrap();
        prop_assert!(check.max_relative_error <= 1e-4, "{}", check.max_relative_error);
    }
}

fn gf_model() -> &'static QModel {
    static MODEL: OnceLock<QModel> = OnceLock::new();
    MODEL.get_or_init(|| {
        let cfg = ExperimentConfig::default().with_schema(FeatureSchema::DistOnly);
        run_supervised(&cfg).expect("training succeeds").model
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    #[test]
    fn distance_only_network_decides_like_gf(n in 30usize..70, rho in prop::sample::select(vec![3.0, 4.0, 5.0]), seed: u64) {
        let g = euclid(n, rho, seed);
        let model = Policy::NeuralQ(Arc::new(gf_model().clone()));
        let a = decision_agreement(&model, &Policy::GreedyForwarding, &g).unwrap();
        prop_assert!(a.rate() >= 0.99, "{:?}", a);
    }
}

// ---- rl-trainer ----

/// `Q*(v, u) / R` looked up by matching features back to the edge.
struct QstarScorer<'a> {
    g: &'a SpaceGraph,
    geo: PairGeometry,
    table: OracleTable,
}

impl Scorer for QstarScorer<'_> {
    fn score(&self, f: &PairFeatures) -> f64 {
        let g = self.g;
        for v in 0..g.n() {
            for &u in g.neighbors(v) {
                if self.geo.pair(g.coord(v), g.coord(u)) == *f {
                    return self.table.qstar(g, v, u).unwrap() / g.radius();
                }
            }
        }
        panic!("features do not match any edge");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn qstar_is_a_fixed_point_of_the_bootstrap(n in 8usize..25, seed: u64, pick: prop::sample::Index) {
        let g = euclid(n, 4.0, seed);
        let sp = apsp(&g);
        let pairs = reachable_pairs(&g, &sp);
        prop_assume!(!pairs.is_empty());
        let (o, d) = pairs[pick.index(pairs.len())];
        let scorer = QstarScorer { g: &g, geo: PairGeometry::for_graph(&g, o, d).unwrap(), table: table(&g, &sp, o, d) };
        let cfg = RlConfig::new(vec![o], d);
        let path = rollout_path(&scorer, &g, o, d).unwrap();
        let set = collect_episode_samples(&scorer, &g, &sp, &[(o, path)], &cfg).unwrap();
        for (p, y) in set.provenance.iter().zip(&set.y) {
            if scorer.table.penalty_free(&g, p.v, p.u) {
                let q = scorer.table.qstar(&g, p.v, p.u).unwrap() / R;
                prop_assert!((y - q).abs() <= 1e-6, "({}, {}): {} vs {}", p.v, p.u, y, q);
            }
        }
    }

    #[test]
    fn rollouts_end_within_n_steps(n in 2usize..40, seed: u64, w in prop::array::uniform4(-1.0f64..1.0), pick: prop::sample::Index) {
        let g = euclid(n, 3.0, seed);
        let sp = apsp(&g);
        let pairs = reachable_pairs(&g, &sp);
        prop_assume!(!pairs.is_empty());
        let (o, d) = pairs[pick.index(pairs.len())];
        struct Lin(RankingMetric);
        impl Scorer for Lin {
            fn score(&self, f: &PairFeatures) -> f64 { self.0.score(f) }
        }
        let path = rollout_path(&Lin(RankingMetric::custom(w)), &g, o, d).unwrap();
        prop_assert!(path.len() <= n);
        let mut sorted = path.clone();
        sorted.sort_unstable();
        sorted.dedup();
        prop_assert_eq!(sorted.len(), path.len());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    #[test]
    fn rl_training_is_deterministic(seed: u64, init: u64) {
        let g = euclid(20, 4.0, seed);
        let sp = apsp(&g);
        let pairs = reachable_pairs(&g, &sp);
        prop_assume!(!pairs.is_empty());
        let (o, d) = pairs[0];
        let mut cfg = RlConfig::new(vec![o], d);
        cfg.episodes = 3;
        cfg.iterations = 20;
        let a = train_rl(&g, &sp, &cfg, QNetwork::new(&[4, 16, 4, 1], init).unwrap(), init).unwrap();
        let b = train_rl(&g, &sp, &cfg, QNetwork::new(&[4, 16, 4, 1], init).unwrap(), init).unwrap();
        prop_assert_eq!(a.0, b.0);
        prop_assert_eq!(format!("{:?}", a.1), format!("{:?}", b.1));
    }
}

// ---- policy-eval ----

fn random_model(init: u64) -> QModel {
    QModel {
        net: QNetwork::new(&[4, 20, 4, 1], init).unwrap(),
        schema: FeatureSchema::DistAndStretch,
        norm_radius: R,
        provenance: ModelProvenance::default(),
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn scaling_model_scores_keeps_every_choice(n in 5usize..40, seed: u64, init: u64, c in 0.01f64..100.0, pick: prop::sample::Index) {
        let g = euclid(n, 4.0, seed);
        let sp = apsp(&g);
        let pairs = reachable_pairs(&g, &sp);
        prop_assume!(!pairs.is_empty());
        let (o, d) = pairs[pick.index(pairs.len())];
        let ctx = pair_context(&g, &sp, o, d, DEFAULT_EPSILON).unwrap();
        let model = random_model(init);
        let mut scaled = model.clone();
        scaled.net.scale_output(c);
        let (a, b) = (Policy::NeuralQ(Arc::new(model)), Policy::NeuralQ(Arc::new(scaled)));
        let visited = vec![false; n];
        for v in (0..n).filter(|&v| v != d) {
            prop_assert_eq!(choose_forwarder(&a, &g, &ctx, v, &visited).unwrap(), choose_forwarder(&b, &g, &ctx, v, &visited).unwrap());
        }
    }

    #[test]
    fn sr_ns_choice_ignores_its_offset(n in 5usize..40, seed: u64, pick: prop::sample::Index) {
        let g = euclid(n, 4.0, seed);
        let sp = apsp(&g);
        let pairs = reachable_pairs(&g, &sp);
        prop_assume!(!pairs.is_empty());
        let (o, d) = pairs[pick.index(pairs.len())];
        let ctx = pair_context(&g, &sp, o, d, DEFAULT_EPSILON).unwrap();
        let visited = vec![false; n];
        for v in (0..n).filter(|&v| v != d) {
            let plain = g.neighbors(v).iter().copied()
                .min_by(|&a, &b| node_stretch(&g, o, d, a).unwrap().total_cmp(&node_stretch(&g, o, d, b).unwrap()).then(a.cmp(&b)));
            prop_assert_eq!(choose_forwarder(&Policy::SrNodeStretch, &g, &ctx, v, &visited).unwrap(), plain);
        }
    }

    #[test]
    fn routes_without_fallback_stop_within_n_hops(n in 2usize..60, seed: u64, init: u64, pick: prop::sample::Index) {
        let g = euclid(n, 3.0, seed);
        let sp = apsp(&g);
        let pairs = reachable_pairs(&g, &sp);
        prop_assume!(!pairs.is_empty());
        let (o, d) = pairs[pick.index(pairs.len())];
        let ctx = pair_context(&g, &sp, o, d, DEFAULT_EPSILON).unwrap();
        for p in [Policy::GreedyForwarding, Policy::SrNodeStretch, Policy::NeuralQ(Arc::new(random_model(init)))] {
            let out = route(&p, &g, &ctx, Fallback::None).unwrap();
            prop_assert!(out.hops() < n);
        }
    }

    #[test]
    fn eta_is_monotone_in_epsilon(n in 5usize..50, seed: u64, e1 in 0.0f64..0.5, extra in 0.0f64..0.5) {
        let g = euclid(n, 3.0, seed);
        let sp = apsp(&g);
        for (o, d) in reachable_pairs(&g, &sp).into_iter().take(40) {
            let lo = pair_context(&g, &sp, o, d, e1).unwrap();
            let hi = pair_context(&g, &sp, o, d, e1 + extra).unwrap();
            let out = route(&Policy::GreedyForwarding, &g, &lo, Fallback::None).unwrap();
            if eta(out.delivered, out.d_p, &lo) {
                prop_assert!(eta(out.delivered, out.d_p, &hi));
            }
        }
    }

    #[test]
    fn delivered_paths_are_never_shorter_than_shortest(n in 5usize..50, seed: u64, init: u64, dfs: bool) {
        let g = euclid(n, 3.0, seed);
        let sp = apsp(&g);
        let fallback = if dfs { Fallback::DfsInEllipse } else { Fallback::None };
        let model = Policy::NeuralQ(Arc::new(random_model(init)));
        for (o, d) in reachable_pairs(&g, &sp).into_iter().take(40) {
            let ctx = pair_context(&g, &sp, o, d, DEFAULT_EPSILON).unwrap();
            for p in [&Policy::GreedyForwarding, &model] {
                let out = route(p, &g, &ctx, fallback).unwrap();
                if out.delivered {
                    prop_assert!(out.d_p >= ctx.d_sp * (1.0 - 1e-9));
                }
            }
        }
    }

    /// Moving nodes outside the holder's neighborhood never changes its choice.
    #[test]
    fn far_away_changes_do_not_move_local_decisions(n in 20usize..50, seed: u64, init: u64, shift in prop::array::uniform2(-3000.0f64..3000.0)) {
        let g = euclid(n, 4.0, seed);
        let sp = apsp(&g);
        let pairs = reachable_pairs(&g, &sp);
        prop_assume!(!pairs.is_empty());
        let (o, d) = pairs[0];
        let v = o;
        let local: Vec<usize> = std::iter::once(v).chain(g.neighbors(v).iter().copied()).collect();
        let keep = |w: usize| w == o || w == d || local.contains(&w) || g.neighbors(w).iter().any(|x| *x == v);
        let coords: Vec<NodeCoord> = (0..n).map(|w| {
            let c = *g.coord(w);
            if keep(w) { return c; }
            let NodeCoord::Cartesian { x, y } = c else { unreachable!() };
            // far nodes stay at least R from v
            let moved = NodeCoord::Cartesian { x: x + shift[0], y: y + shift[1] };
            if moved.distance(g.coord(v)) > R { moved } else { c }
        }).collect();
        let h = SpaceGraph::from_coords(SpaceKind::Euclidean, R, coords, seed, Density::Rho(4.0)).unwrap();
        prop_assert_eq!(g.neighbors(v), h.neighbors(v));
        let sp_h = apsp(&h);
        let visited = vec![false; n];
        for p in [Policy::GreedyForwarding, Policy::SrNodeStretch, Policy::NeuralQ(Arc::new(random_model(init)))] {
            let a = choose_forwarder(&p, &g, &pair_context(&g, &sp, o, d, DEFAULT_EPSILON).unwrap(), v, &visited).unwrap();
            let ctx_h = match pair_context(&h, &sp_h, o, d, DEFAULT_EPSILON) {
                Ok(c) => c,
                // the move may disconnect O from D; the view is built without d_sp
                Err(_) => pair_context(&g, &sp, o, d, DEFAULT_EPSILON).unwrap(),
            };
            let b = choose_forwarder(&p, &h, &ctx_h, v, &visited).unwrap();
            prop_assert_eq!(a, b);
        }
    }
}
