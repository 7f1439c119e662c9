//! Uniform random geometric graphs in the Euclidean plane and the hyperbolic
//! disk, with radius-derived adjacency.

use std::f64::consts::TAU;
use std::fs;
use std::path::Path;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed::rng_from_seed;

/// Geometry the nodes live in.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum SpaceKind {
    Euclidean,
    /// Hyperbolic disk; `alpha` shapes the radial density only, distances use
    /// the curvature -1 metric.
    Hyperbolic { alpha: f64 },
}

/// Position of a node: Cartesian in the Euclidean plane, polar `(r, theta)`
/// in the hyperbolic disk.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum NodeCoord {
    Cartesian { x: f64, y: f64 },
    Polar { r: f64, theta: f64 },
}

impl NodeCoord {
    pub fn distance(&self, other: &NodeCoord) -> f64 {
        match (*self, *other) {
            (NodeCoord::Cartesian { x: x1, y: y1 }, NodeCoord::Cartesian { x: x2, y: y2 }) => {
                (x1 - x2).hypot(y1 - y2)
            }
            (NodeCoord::Polar { r: r1, theta: t1 }, NodeCoord::Polar { r: r2, theta: t2 }) => {
                hyperbolic_distance(r1, t1, r2, t2)
            }
            _ => unreachable!("mixed coordinate systems in one graph"),
        }
    }
}

/// Hyperbolic law of cosines in the form
/// `cosh d = cosh(r1 - r2) + 2 sinh r1 sinh r2 sin^2(dtheta / 2)`,
/// evaluated through `acosh(1 + y)` to stay accurate for nearby points.
fn hyperbolic_distance(r1: f64, t1: f64, r2: f64, t2: f64) -> f64 {
    let mut dt = (t1 - t2).abs() % TAU;
    if dt > std::f64::consts::PI {
        dt = TAU - dt;
    }
    let half_dr = ((r1 - r2) / 2.0).sinh();
    let half_dt = (dt / 2.0).sin();
    acosh_1p(2.0 * half_dr * half_dr + 2.0 * r1.sinh() * r2.sinh() * half_dt * half_dt)
}

/// How the graph's size/connectivity was parameterized.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Density {
    /// Nodes per `R^2` area (Euclidean).
    Rho(f64),
    /// Target mean degree (hyperbolic).
    Delta(f64),
}

/// Immutable node set with coordinates and the adjacency induced by `radius`.
#[derive(Clone, Debug, PartialEq)]
pub struct SpaceGraph {
    space: SpaceKind,
    radius: f64,
    nodes: Vec<NodeCoord>,
    adjacency: Vec<Vec<usize>>,
    seed: u64,
    density: Density,
}

impl SpaceGraph {
    /// Builds a graph from explicit coordinates; edge `(v, u)` iff their
    /// metric distance is at most `radius`.
    pub fn from_coords(
        space: SpaceKind,
        radius: f64,
        nodes: Vec<NodeCoord>,
        seed: u64,
        density: Density,
    ) -> Result<Self> {
        if nodes.len() < 2 {
            return Err(Error::InvalidParameter(format!(
                "a graph needs at least 2 nodes, got {}",
                nodes.len()
            )));
        }
        if !(radius > 0.0) || !radius.is_finite() {
            return Err(Error::InvalidParameter(format!("radius must be positive, got {radius}")));
        }
        let consistent = nodes.iter().all(|c| {
            matches!(
                (space, c),
                (SpaceKind::Euclidean, NodeCoord::Cartesian { .. })
                    | (SpaceKind::Hyperbolic { .. }, NodeCoord::Polar { .. })
            )
        });
        if !consistent {
            return Err(Error::InvalidParameter(
                "coordinate kind does not match the space".into(),
            ));
        }
        let adjacency = build_adjacency(&nodes, radius);
        Ok(SpaceGraph {
            space,
            radius,
            nodes,
            adjacency,
            seed,
            density,
        })
    }

    pub fn space(&self) -> SpaceKind {
        self.space
    }

    /// Connection radius; also the normalization unit of all features.
    pub fn radius(&self) -> f64 {
        self.radius
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn density(&self) -> Density {
        self.density
    }

    pub fn n(&self) -> usize {
        self.nodes.len()
    }

    pub fn coord(&self, v: usize) -> &NodeCoord {
        &self.nodes[v]
    }

    pub fn coords(&self) -> &[NodeCoord] {
        &self.nodes
    }

    pub fn neighbors(&self, v: usize) -> &[usize] {
        &self.adjacency[v]
    }

    pub fn degree(&self, v: usize) -> usize {
        self.adjacency[v].len()
    }

    pub fn is_edge(&self, v: usize, u: usize) -> bool {
        self.adjacency[v].binary_search(&u).is_ok()
    }

    pub fn edge_count(&self) -> usize {
        self.adjacency.iter().map(Vec::len).sum::<usize>() / 2
    }

    pub fn mean_degree(&self) -> f64 {
        2.0 * self.edge_count() as f64 / self.n() as f64
    }

    /// Side length of the generation square (Euclidean graphs generated from a density).
    pub fn side(&self) -> Option<f64> {
        match (self.space, self.density) {
            (SpaceKind::Euclidean, Density::Rho(rho)) => Some(square_side(self.n(), rho, self.radius)),
            _ => None,
        }
    }

    /// Metric distance between two nodes (unchecked ids).
    #[inline]
    pub fn distance(&self, v: usize, u: usize) -> f64 {
        self.nodes[v].distance(&self.nodes[u])
    }

    pub fn metric_distance(&self, v: usize, u: usize) -> Result<f64> {
        self.check_id(v)?;
        self.check_id(u)?;
        Ok(self.distance(v, u))
    }

    pub fn check_id(&self, v: usize) -> Result<()> {
        if v < self.n() {
            Ok(())
        } else {
            Err(Error::NodeOutOfRange { id: v, n: self.n() })
        }
    }

    pub fn to_file(&self) -> GraphFile {
        let (rho, delta) = match self.density {
            Density::Rho(r) => (Some(r), None),
            Density::Delta(d) => (None, Some(d)),
        };
        GraphFile {
            space: self.space,
            radius: self.radius,
            rho,
            delta,
            seed: self.seed,
            n: self.n(),
            nodes: self
                .nodes
                .iter()
                .enumerate()
                .map(|(id, coord)| NodeRecord { id, coord: *coord })
                .collect(),
        }
    }

    pub fn from_file(file: GraphFile) -> Result<Self> {
        if file.nodes.len() != file.n {
            return Err(Error::Format(format!(
                "header declares {} nodes but {} records follow",
                file.n,
                file.nodes.len()
            )));
        }
        if let Some(bad) = file.nodes.iter().enumerate().find(|(i, rec)| rec.id != *i) {
            return Err(Error::Format(format!(
                "node records must be in id order; record {} has id {}",
                bad.0, bad.1.id
            )));
        }
        let density = match (file.rho, file.delta) {
            (Some(r), None) => Density::Rho(r),
            (None, Some(d)) => Density::Delta(d),
            _ => {
                return Err(Error::Format(
                    "exactly one of `rho` and `delta` must be present".into(),
                ))
            }
        };
        let coords = file.nodes.into_iter().map(|rec| rec.coord).collect();
        SpaceGraph::from_coords(file.space, file.radius, coords, file.seed, density)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(&self.to_file())?;
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        SpaceGraph::from_file(serde_json::from_str(&text)?)
    }
}

/// On-disk form: generation parameters plus coordinates. Adjacency is
/// recomputed on load.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GraphFile {
    pub space: SpaceKind,
    pub radius: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rho: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta: Option<f64>,
    pub seed: u64,
    pub n: usize,
    pub nodes: Vec<NodeRecord>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NodeRecord {
    pub id: usize,
    #[serde(flatten)]
    pub coord: NodeCoord,
}

fn build_adjacency(nodes: &[NodeCoord], radius: f64) -> Vec<Vec<usize>> {
    let n = nodes.len();
    let mut adj = vec![Vec::new(); n];
    for v in 0..n {
        for u in (v + 1)..n {
            if nodes[v].distance(&nodes[u]) <= radius {
                adj[v].push(u);
                adj[u].push(v);
            }
        }
    }
    // pushes arrive in increasing order for u > v but interleave for u < v
    for list in &mut adj {
        list.sort_unstable();
    }
    adj
}

/// Side of the square holding `n` nodes at `rho` nodes per `R^2`.
pub fn square_side(n: usize, rho: f64, radius: f64) -> f64 {
    (n as f64 * radius * radius / rho).sqrt()
}

/// `n` nodes i.i.d. uniform on a square sized so that the density is `rho`.
pub fn generate_euclidean(n: usize, rho: f64, radius: f64, seed: u64) -> Result<SpaceGraph> {
    if n < 2 {
        return Err(Error::InvalidParameter(format!("n must be at least 2, got {n}")));
    }
    if !(rho > 0.0 && rho.is_finite()) {
        return Err(Error::InvalidParameter(format!("rho must be positive, got {rho}")));
    }
    if !(radius > 0.0 && radius.is_finite()) {
        return Err(Error::InvalidParameter(format!("R must be positive, got {radius}")));
    }
    let side = square_side(n, rho, radius);
    let mut rng = rng_from_seed(seed);
    let nodes = (0..n)
        .map(|_| NodeCoord::Cartesian {
            x: rng.gen::<f64>() * side,
            y: rng.gen::<f64>() * side,
        })
        .collect();
    SpaceGraph::from_coords(SpaceKind::Euclidean, radius, nodes, seed, Density::Rho(rho))
}

/// Parameters of one generated graph.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "space", rename_all = "lowercase")]
pub enum GraphSpec {
    Euclidean {
        n: usize,
        rho: f64,
        radius: f64,
        seed: u64,
    },
    Hyperbolic {
        n: usize,
        delta: f64,
        alpha: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        radius: Option<f64>,
        seed: u64,
    },
}

impl GraphSpec {
    pub fn generate(&self) -> Result<SpaceGraph> {
        match *self {
            GraphSpec::Euclidean { n, rho, radius, seed } => generate_euclidean(n, rho, radius, seed),
            GraphSpec::Hyperbolic { n, delta, alpha, radius, seed } => {
                generate_hyperbolic(n, delta, alpha, radius, seed)
            }
        }
    }

    pub fn n(&self) -> usize {
        match *self {
            GraphSpec::Euclidean { n, .. } | GraphSpec::Hyperbolic { n, .. } => n,
        }
    }

    pub fn seed(&self) -> u64 {
        match *self {
            GraphSpec::Euclidean { seed, .. } | GraphSpec::Hyperbolic { seed, .. } => seed,
        }
    }

    /// `rho` for Euclidean specs, `delta` for hyperbolic ones.
    pub fn density_value(&self) -> f64 {
        match *self {
            GraphSpec::Euclidean { rho, .. } => rho,
            GraphSpec::Hyperbolic { delta, .. } => delta,
        }
    }
}

/// Inverse CDF of the radial density `alpha sinh(alpha r) / (cosh(alpha R) - 1)` on `[0, R]`.
pub fn radial_quantile(q: f64, alpha: f64, disk_radius: f64) -> f64 {
    let r = acosh_1p(q * ((alpha * disk_radius).cosh() - 1.0)) / alpha;
    r.min(disk_radius)
}

/// `acosh(1 + y)` without cancellation for small `y`.
fn acosh_1p(y: f64) -> f64 {
    (y + (y * (y + 2.0)).sqrt()).ln_1p()
}

/// Random hyperbolic graph on `n` nodes.
///
/// With `disk_radius = Some(R)` the disk radius and the connection radius are
/// both `R`. With `None`, `R` is calibrated by bisection (keeping each node's
/// radial quantile and angle fixed) so the realized mean degree is close to
/// `delta`.
pub fn generate_hyperbolic(
    n: usize,
    delta: f64,
    alpha: f64,
    disk_radius: Option<f64>,
    seed: u64,
) -> Result<SpaceGraph> {
    if n < 2 {
        return Err(Error::InvalidParameter(format!("n must be at least 2, got {n}")));
    }
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(Error::InvalidParameter(format!("alpha must be positive, got {alpha}")));
    }
    if !(delta > 0.0 && delta.is_finite()) {
        return Err(Error::InvalidParameter(format!("delta must be positive, got {delta}")));
    }
    let mut rng = rng_from_seed(seed);
    let samples: Vec<(f64, f64)> = (0..n)
        .map(|_| (rng.gen::<f64>(), rng.gen::<f64>() * TAU))
        .collect();
    let place = |big_r: f64| -> Vec<NodeCoord> {
        samples
            .iter()
            .map(|&(q, theta)| NodeCoord::Polar {
                r: radial_quantile(q, alpha, big_r),
                theta,
            })
            .collect()
    };
    let radius = match disk_radius {
        Some(r) => {
            if !(r > 0.0 && r.is_finite()) {
                return Err(Error::InvalidParameter(format!("R must be positive, got {r}")));
            }
            r
        }
        None => calibrate_radius(n, delta, &place)?,
    };
    SpaceGraph::from_coords(
        SpaceKind::Hyperbolic { alpha },
        radius,
        place(radius),
        seed,
        Density::Delta(delta),
    )
}

fn mean_degree_at(nodes: &[NodeCoord], radius: f64) -> f64 {
    let n = nodes.len();
    let mut edges = 0usize;
    for v in 0..n {
        for u in (v + 1)..n {
            if nodes[v].distance(&nodes[u]) <= radius {
                edges += 1;
            }
        }
    }
    2.0 * edges as f64 / n as f64
}

fn calibrate_radius(n: usize, delta: f64, place: &dyn Fn(f64) -> Vec<NodeCoord>) -> Result<f64> {
    // Small disks are nearly Euclidean and dense; mean degree falls off
    // roughly like exp(-R/2) for large R.
    let mut lo = 1e-3;
    let deg_lo = mean_degree_at(&place(lo), lo);
    let mut hi = (2.0 * (n as f64).ln()).max(1.0);
    let mut deg_hi = mean_degree_at(&place(hi), hi);
    while deg_hi > delta && hi < 256.0 {
        hi *= 2.0;
        deg_hi = mean_degree_at(&place(hi), hi);
    }
    if delta > deg_lo || delta < deg_hi {
        return Err(Error::Calibration {
            target: delta,
            min: deg_hi,
            max: deg_lo,
        });
    }
    let mut best = if (deg_lo - delta).abs() <= (deg_hi - delta).abs() {
        (lo, deg_lo)
    } else {
        (hi, deg_hi)
    };
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        let deg = mean_degree_at(&place(mid), mid);
        if (deg - delta).abs() < (best.1 - delta).abs() {
            best = (mid, deg);
        }
        if deg > delta {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-9 {
            break;
        }
    }
    Ok(best.0)
}
