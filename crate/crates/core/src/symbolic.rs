//! The two-linear-action guarded command: evaluating it, recovering it from
//! a trained network, and exporting score surfaces for plotting.

use std::fs::File;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{FeatureSchema, PairFeatures};
use crate::nn::{Dense, QModel, QNetwork};
use crate::policy::Scorer;

/// `if d_u < g1 d_v + g2 ns_u + g0 { a1 d_v + a2 ns_u + a3 d_u + a0 } else { b1 d_v + b2 d_u + b0 }`
/// with distances in units of the connection radius.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TwoLinearParams {
    /// `[g1, g2, g0]`
    pub guard: [f64; 3],
    /// `[a1, a2, a3, a0]`
    pub branch1: [f64; 4],
    /// `[b1, b2, b0]`
    pub branch2: [f64; 3],
}

impl TwoLinearParams {
    pub fn published() -> Self {
        TwoLinearParams {
            guard: [1.02, 0.57, -0.69],
            branch1: [-0.01, -0.02, -0.01, -0.06],
            branch2: [0.03, -0.04, -0.15],
        }
    }

    pub fn threshold(&self, d_v: f64, ns_u: f64) -> f64 {
        let [g1, g2, g0] = self.guard;
        g1 * d_v + g2 * ns_u + g0
    }

    pub fn guard_holds(&self, d_v: f64, ns_u: f64, d_u: f64) -> bool {
        d_u < self.threshold(d_v, ns_u)
    }

    pub fn z(&self, d_v: f64, ns_u: f64, d_u: f64) -> f64 {
        if self.guard_holds(d_v, ns_u, d_u) {
            let [a1, a2, a3, a0] = self.branch1;
            a1 * d_v + a2 * ns_u + a3 * d_u + a0
        } else {
            let [b1, b2, b0] = self.branch2;
            b1 * d_v + b2 * d_u + b0
        }
    }

    /// Exact ReLU network for this command (inputs `d_v, ns_v, d_u, ns_u`,
    /// all assumed non-negative). The guard is a steep ramp of width
    /// `1/steepness` just inside the threshold; `big` must exceed the gap
    /// between the two branches anywhere it is evaluated.
    pub fn to_network(&self, steepness: f64, big: f64) -> QNetwork {
        let [g1, g2, g0] = self.guard;
        let [a1, a2, a3, a0] = self.branch1;
        let [b1, b2, b0] = self.branch2;
        let k = steepness;
        // layer 1: pass the four features through, then relu(k g), relu(k g - 1)
        // with g = threshold - d_u
        let guard_row = [k * g1, 0.0, -k, k * g2];
        let mut w1 = Vec::with_capacity(24);
        for i in 0..4 {
            let mut row = [0.0; 4];
            row[i] = 1.0;
            w1.extend_from_slice(&row);
        }
        w1.extend_from_slice(&guard_row);
        w1.extend_from_slice(&guard_row);
        let bias1 = vec![0.0, 0.0, 0.0, 0.0, k * g0, k * g0 - 1.0];
        // layer 2: h = branch1 - branch2, s = relu(k g) - relu(k g - 1) in [0, 1]
        // p = relu(h - big (1 - s)), q = relu(-h - big (1 - s)), r = relu(branch2 + big)
        let h = [a1 - b1, 0.0, a3 - b2, a2];
        let h0 = a0 - b0;
        let mut w2 = Vec::with_capacity(18);
        w2.extend_from_slice(&[h[0], h[1], h[2], h[3], big, -big]);
        w2.extend_from_slice(&[-h[0], -h[1], -h[2], -h[3], big, -big]);
        w2.extend_from_slice(&[b1, 0.0, b2, 0.0, 0.0, 0.0]);
        let bias2 = vec![h0 - big, -h0 - big, b0 + big];
        let layers = vec![
            Dense::new(4, 6, w1, bias1).expect("shape"),
            Dense::new(6, 3, w2, bias2).expect("shape"),
            Dense::new(3, 1, vec![1.0, -1.0, 1.0], vec![-big]).expect("shape"),
        ];
        QNetwork::from_layers(layers).expect("chained")
    }
}

impl Scorer for TwoLinearParams {
    fn score(&self, f: &PairFeatures) -> f64 {
        self.z(f.d_v, f.ns_u, f.d_u)
    }
}

/// Probe points for [`fit_two_plane`]; lines run along `d_u`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeGrid {
    pub d_v: Vec<f64>,
    pub ns_v: Vec<f64>,
    pub ns_u: Vec<f64>,
    pub d_u: Vec<f64>,
}

fn linspace(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    (0..count)
        .map(|i| lo + (hi - lo) * i as f64 / (count - 1).max(1) as f64)
        .collect()
}

impl Default for ProbeGrid {
    fn default() -> Self {
        ProbeGrid {
            d_v: linspace(1.0, 6.0, 6),
            ns_v: vec![1.0, 1.2, 1.5],
            ns_u: linspace(1.0, 2.0, 5),
            d_u: linspace(0.0, 8.0, 81),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TwoPlaneFit {
    pub params: TwoLinearParams,
    /// Largest |net - fit| over probe points away from the boundary.
    pub max_residual: f64,
    /// No transition was found; `branch1` holds a single plane and the guard
    /// always holds.
    pub single_plane: bool,
    pub boundary_points: usize,
}

/// Solves `min |A x - y|` through the normal equations.
fn least_squares(rows: &[Vec<f64>], y: &[f64]) -> Option<Vec<f64>> {
    let k = rows.first()?.len();
    let mut a = vec![vec![0.0; k + 1]; k];
    for (row, &t) in rows.iter().zip(y) {
        for i in 0..k {
            for j in 0..k {
                a[i][j] += row[i] * row[j];
            }
            a[i][k] += row[i] * t;
        }
    }
    for col in 0..k {
        let pivot = (col..k).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[pivot][col].abs() < 1e-12 {
            return None;
        }
        a.swap(col, pivot);
        for r in 0..k {
            if r != col {
                let f = a[r][col] / a[col][col];
                for c in col..=k {
                    a[r][c] -= f * a[col][c];
                }
            }
        }
    }
    Some((0..k).map(|i| a[i][k] / a[i][i]).collect())
}

/// Recovers the guarded command from a four-feature network.
///
/// Along each `d_u` line the largest second difference marks the transition;
/// its position is refined by bisection, deciding at each midpoint which
/// neighboring linear piece the network agrees with. The boundary points give
/// the guard; each side is then fitted by least squares, leaving out probe
/// points within two grid steps of the boundary.
pub fn fit_two_plane(model: &QModel, grid: &ProbeGrid) -> Result<TwoPlaneFit> {
    if model.schema != FeatureSchema::DistAndStretch {
        return Err(Error::Schema { expected: 4, got: model.schema.width() });
    }
    if grid.d_u.len() < 5 || grid.d_v.is_empty() || grid.ns_v.is_empty() || grid.ns_u.is_empty() {
        return Err(Error::InvalidParameter("probe grid needs at least 5 d_u points and non-empty axes".into()));
    }
    let f = |d_v: f64, ns_v: f64, d_u: f64, ns_u: f64| model.score(&PairFeatures { d_v, ns_v, d_u, ns_u });
    let du = &grid.d_u;
    let step = (du[du.len() - 1] - du[0]) / (du.len() - 1) as f64;

    let mut samples = Vec::new();
    let mut boundary = Vec::new();
    let mut largest_kink: f64 = 0.0;
    let mut scale: f64 = 0.0;
    for &d_v in &grid.d_v {
        for &ns_v in &grid.ns_v {
            for &ns_u in &grid.ns_u {
                let z: Vec<f64> = du.iter().map(|&d_u| f(d_v, ns_v, d_u, ns_u)).collect();
                scale = z.iter().fold(scale, |m, v| m.max(v.abs()));
                let (k, kink) = (2..du.len() - 2)
                    .map(|k| (k, (z[k + 1] - 2.0 * z[k] + z[k - 1]).abs()))
                    .fold((0, 0.0), |best, cur| if cur.1 > best.1 { cur } else { best });
                largest_kink = largest_kink.max(kink);
                for (&d_u, &zv) in du.iter().zip(&z) {
                    samples.push(([d_v, ns_v, ns_u, d_u], zv));
                }
                if k == 0 {
                    continue;
                }
                let left = |x: f64| z[k - 1] + (z[k - 1] - z[k - 2]) * (x - du[k - 1]) / step;
                let right = |x: f64| z[k + 1] + (z[k + 1] - z[k + 2]) * (du[k + 1] - x) / step;
                let (mut lo, mut hi) = (du[k - 1], du[k + 1]);
                for _ in 0..60 {
                    let mid = 0.5 * (lo + hi);
                    let v = f(d_v, ns_v, mid, ns_u);
                    if (v - left(mid)).abs() <= (v - right(mid)).abs() {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
                boundary.push((d_v, ns_u, 0.5 * (lo + hi), kink));
            }
        }
    }

    let tolerance = 1e-9 * (1.0 + scale);
    let boundary: Vec<_> = boundary.into_iter().filter(|b| b.3 > tolerance).collect();
    let plane = |pts: &[([f64; 4], f64)], cols: &dyn Fn(&[f64; 4]) -> Vec<f64>| -> Option<Vec<f64>> {
        let rows: Vec<Vec<f64>> = pts.iter().map(|(x, _)| cols(x)).collect();
        let y: Vec<f64> = pts.iter().map(|(_, z)| *z).collect();
        least_squares(&rows, &y)
    };
    let full = |x: &[f64; 4]| vec![x[0], x[2], x[3], 1.0];
    let reduced = |x: &[f64; 4]| vec![x[0], x[3], 1.0];

    if largest_kink <= tolerance || boundary.len() < 3 {
        let c = plane(&samples, &full).ok_or_else(|| Error::InvalidParameter("degenerate probe grid".into()))?;
        let params = TwoLinearParams {
            guard: [0.0, 0.0, f64::MAX],
            branch1: [c[0], c[1], c[2], c[3]],
            branch2: [0.0, 0.0, 0.0],
        };
        let max_residual = samples
            .iter()
            .map(|(x, z)| (params.z(x[0], x[2], x[3]) - z).abs())
            .fold(0.0, f64::max);
        return Ok(TwoPlaneFit { params, max_residual, single_plane: true, boundary_points: 0 });
    }

    let rows: Vec<Vec<f64>> = boundary.iter().map(|b| vec![b.0, b.1, 1.0]).collect();
    let y: Vec<f64> = boundary.iter().map(|b| b.2).collect();
    let g = least_squares(&rows, &y).ok_or_else(|| Error::InvalidParameter("boundary fit is degenerate".into()))?;
    let guard = [g[0], g[1], g[2]];
    let threshold = |x: &[f64; 4]| guard[0] * x[0] + guard[1] * x[2] + guard[2];
    let margin = 2.0 * step;
    let (side1, side2): (Vec<_>, Vec<_>) = samples
        .into_iter()
        .filter(|(x, _)| (x[3] - threshold(x)).abs() >= margin)
        .partition(|(x, _)| x[3] < threshold(x));
    let a = plane(&side1, &full).ok_or_else(|| Error::InvalidParameter("too few points below the boundary".into()))?;
    let b = plane(&side2, &reduced).ok_or_else(|| Error::InvalidParameter("too few points above the boundary".into()))?;
    let params = TwoLinearParams {
        guard,
        branch1: [a[0], a[1], a[2], a[3]],
        branch2: [b[0], b[1], b[2]],
    };
    let max_residual = side1
        .iter()
        .chain(&side2)
        .map(|(x, z)| (params.z(x[0], x[2], x[3]) - z).abs())
        .fold(0.0, f64::max);
    Ok(TwoPlaneFit { params, max_residual, single_plane: false, boundary_points: boundary.len() })
}

/// Scores over an `ns_u x d_u` grid at fixed holder features.
#[derive(Clone, Debug, PartialEq)]
pub struct Surface {
    pub d_v: f64,
    pub ns_v: f64,
    /// `(ns_u, d_u, z)`
    pub points: Vec<(f64, f64, f64)>,
}

pub fn surface_export(scorer: &dyn Scorer, d_v: f64, ns_v: f64, ns_u: &[f64], d_u: &[f64]) -> Surface {
    let points = ns_u
        .iter()
        .flat_map(|&s| d_u.iter().map(move |&d| (s, d)))
        .map(|(s, d)| (s, d, scorer.score(&PairFeatures { d_v, ns_v, d_u: d, ns_u: s })))
        .collect();
    Surface { d_v, ns_v, points }
}

impl Surface {
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut w = csv::Writer::from_writer(File::create(path).map_err(|e| Error::io(path, e))?);
        w.write_record(["d_v", "ns_v", "ns_u", "d_u", "z"])?;
        for &(s, d, z) in &self.points {
            w.write_record([self.d_v, self.ns_v, s, d, z].map(|x| x.to_string()))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::ModelProvenance;

    fn model(net: QNetwork) -> QModel {
        QModel {
            net,
            schema: FeatureSchema::DistAndStretch,
            norm_radius: 1.0,
            provenance: ModelProvenance::default(),
        }
    }

    #[test]
    fn reference_command_examples() {
        let p = TwoLinearParams::published();
        assert!((p.threshold(4.0, 1.2) - 4.074).abs() < 1e-12);
        assert!(p.guard_holds(4.0, 1.2, 3.0));
        assert!((p.z(4.0, 1.2, 3.0) - -0.154).abs() < 1e-12);
        assert!(!p.guard_holds(4.0, 1.2, 4.2));
        assert!((p.z(4.0, 1.2, 4.2) - -0.198).abs() < 1e-12);
    }

    #[test]
    fn network_reproduces_the_command() {
        let p = TwoLinearParams::published();
        let net = p.to_network(1e6, 10.0);
        for &(d_v, ns_u, d_u) in &[(4.0, 1.2, 3.0), (4.0, 1.2, 4.2), (1.5, 1.9, 0.2), (6.0, 1.0, 7.5), (2.0, 1.4, 1.9)] {
            let want = p.z(d_v, ns_u, d_u);
            let got = net.eval(&[d_v, 1.1, d_u, ns_u]);
            assert!((got - want).abs() < 1e-9, "{d_v} {ns_u} {d_u}: {got} vs {want}");
        }
    }

    #[test]
    fn recovers_the_reference_coefficients() {
        let p = TwoLinearParams::published();
        let fit = fit_two_plane(&model(p.to_network(1e6, 10.0)), &ProbeGrid::default()).unwrap();
        assert!(!fit.single_plane);
        let got = fit.params;
        for (a, b) in got.guard.iter().zip(&p.guard) {
            assert!((a - b).abs() <= 0.01, "guard {:?}", got.guard);
        }
        for (a, b) in got.branch1.iter().zip(&p.branch1) {
            assert!((a - b).abs() <= 0.01, "branch1 {:?}", got.branch1);
        }
        for (a, b) in got.branch2.iter().zip(&p.branch2) {
            assert!((a - b).abs() <= 0.01, "branch2 {:?}", got.branch2);
        }
    }

    #[test]
    fn affine_net_is_a_single_plane() {
        let net = QNetwork::from_layers(vec![Dense::new(4, 1, vec![0.3, 0.0, -0.7, 0.2], vec![0.05]).unwrap()]).unwrap();
        let fit = fit_two_plane(&model(net), &ProbeGrid::default()).unwrap();
        assert!(fit.single_plane);
        assert!(fit.max_residual < 1e-9);
        assert!((fit.params.branch1[2] - -0.7).abs() < 1e-9);
    }

    #[test]
    fn two_feature_model_is_rejected() {
        let m = QModel {
            net: QNetwork::for_schema(FeatureSchema::DistOnly, 0),
            schema: FeatureSchema::DistOnly,
            norm_radius: 1.0,
            provenance: ModelProvenance::default(),
        };
        assert!(matches!(fit_two_plane(&m, &ProbeGrid::default()), Err(Error::Schema { expected: 4, got: 2 })));
    }

    #[test]
    fn reference_surface_has_two_decreasing_planes() {
        let p = TwoLinearParams::published();
        let d_u: Vec<f64> = (0..=60).map(|i| 1.0 + i as f64 * 0.1).collect();
        let s = surface_export(&p, 4.0, 1.2, &[1.0, 1.2, 1.5], &d_u);
        assert_eq!(s.points.len(), 3 * 61);
        for row in s.points.chunks(61) {
            let (ns_u, _, _) = row[0];
            let t = p.threshold(4.0, ns_u);
            let (below, above): (Vec<&(f64, f64, f64)>, Vec<_>) = row.iter().partition(|(_, d, _)| *d < t);
            assert!(!below.is_empty() && !above.is_empty());
            for side in [below, above] {
                assert!(side.windows(2).all(|w| w[1].2 < w[0].2));
            }
        }
    }

    #[test]
    fn constant_scorer_gives_a_constant_grid() {
        struct Flat;
        impl Scorer for Flat {
            fn score(&self, _: &PairFeatures) -> f64 {
                -0.5
            }
        }
        let s = surface_export(&Flat, 4.0, 1.2, &[1.0, 2.0], &[0.0, 1.0, 2.0]);
        assert!(s.points.iter().all(|p| p.2 == -0.5));
    }
}
