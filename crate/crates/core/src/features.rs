//! Distance-to-destination and node-stretch features, normalized by the
//! connection radius.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{NodeCoord, SpaceGraph};

/// Which features feed the network.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FeatureSchema {
    /// `(d(v,D), d(u,D))`
    DistOnly,
    /// `(d(v,D), ns(O,D,v), d(u,D), ns(O,D,u))`
    DistAndStretch,
}

impl FeatureSchema {
    pub fn width(self) -> usize {
        match self {
            FeatureSchema::DistOnly => 2,
            FeatureSchema::DistAndStretch => 4,
        }
    }

    pub fn id(self) -> &'static str {
        match self {
            FeatureSchema::DistOnly => "dist",
            FeatureSchema::DistAndStretch => "dist-ns",
        }
    }
}

impl fmt::Display for FeatureSchema {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

impl FromStr for FeatureSchema {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dist" | "dist-only" => Ok(FeatureSchema::DistOnly),
            "dist-ns" | "dist+ns" | "dist-and-stretch" => Ok(FeatureSchema::DistAndStretch),
            other => Err(Error::Config(format!("unknown feature schema `{other}`"))),
        }
    }
}

/// A network input row; only the first `schema.width()` values are meaningful.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FeatureVector {
    pub schema: FeatureSchema,
    values: [f64; 4],
}

impl FeatureVector {
    pub fn new(schema: FeatureSchema, values: &[f64]) -> Result<Self> {
        if values.len() != schema.width() {
            return Err(Error::Schema {
                expected: schema.width(),
                got: values.len(),
            });
        }
        let mut buf = [0.0; 4];
        buf[..values.len()].copy_from_slice(values);
        Ok(FeatureVector { schema, values: buf })
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values[..self.schema.width()]
    }
}

/// State features of the holder `v` and action features of a candidate `u`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PairFeatures {
    pub d_v: f64,
    pub ns_v: f64,
    pub d_u: f64,
    pub ns_u: f64,
}

impl PairFeatures {
    pub fn vector(&self, schema: FeatureSchema) -> FeatureVector {
        let values = match schema {
            FeatureSchema::DistOnly => [self.d_v, self.d_u, 0.0, 0.0],
            FeatureSchema::DistAndStretch => [self.d_v, self.ns_v, self.d_u, self.ns_u],
        };
        FeatureVector { schema, values }
    }

    /// Canonical `(d_v, ns_v, d_u, ns_u)` layout.
    pub fn as_array(&self) -> [f64; 4] {
        [self.d_v, self.ns_v, self.d_u, self.ns_u]
    }
}

/// Geometry of one (O, D) pair, enough to compute any node's features from
/// its coordinates alone.
#[derive(Clone, Copy, Debug)]
pub struct PairGeometry {
    origin: NodeCoord,
    dest: NodeCoord,
    d_od: f64,
    unit: f64,
}

impl PairGeometry {
    pub fn new(origin: NodeCoord, dest: NodeCoord, unit: f64) -> Result<Self> {
        let d_od = origin.distance(&dest);
        if !(d_od > 0.0) {
            return Err(Error::DegeneratePair { origin: 0, dest: 0 });
        }
        Ok(PairGeometry { origin, dest, d_od, unit })
    }

    pub fn for_graph(g: &SpaceGraph, origin: usize, dest: usize) -> Result<Self> {
        g.check_id(origin)?;
        g.check_id(dest)?;
        PairGeometry::new(*g.coord(origin), *g.coord(dest), g.radius())
            .map_err(|_| Error::DegeneratePair { origin, dest })
    }

    /// `(d(w,D) / R, ns(O,D,w))`
    #[inline]
    pub fn state(&self, w: &NodeCoord) -> (f64, f64) {
        let to_dest = w.distance(&self.dest);
        let stretch = (self.origin.distance(w) + to_dest) / self.d_od;
        (to_dest / self.unit, stretch)
    }

    #[inline]
    pub fn pair(&self, v: &NodeCoord, u: &NodeCoord) -> PairFeatures {
        let (d_v, ns_v) = self.state(v);
        let (d_u, ns_u) = self.state(u);
        PairFeatures { d_v, ns_v, d_u, ns_u }
    }
}

/// `ns(O,D,w) = (d(O,w) + d(w,D)) / d(O,D)`.
pub fn node_stretch(g: &SpaceGraph, origin: usize, dest: usize, w: usize) -> Result<f64> {
    g.check_id(w)?;
    let geo = PairGeometry::for_graph(g, origin, dest)?;
    Ok(geo.state(g.coord(w)).1)
}
