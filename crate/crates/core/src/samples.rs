//! Training samples `<X, Y>` with provenance, and their CSV form.

use std::fs::File;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{FeatureSchema, FeatureVector};

/// Where one sample came from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub graph_seed: u64,
    pub v: usize,
    pub u: usize,
    pub origin: usize,
    pub dest: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SampleSet {
    pub schema: FeatureSchema,
    pub x: Vec<FeatureVector>,
    pub y: Vec<f64>,
    pub provenance: Vec<Provenance>,
    /// Set when fewer nodes than requested were eligible.
    pub short: bool,
}

#[derive(Debug, Serialize, Deserialize)]
struct Row {
    f0: f64,
    f1: f64,
    #[serde(default)]
    f2: Option<f64>,
    #[serde(default)]
    f3: Option<f64>,
    target: f64,
    graph_seed: u64,
    v: usize,
    u: usize,
    origin: usize,
    dest: usize,
}

impl SampleSet {
    pub fn empty(schema: FeatureSchema) -> Self {
        SampleSet {
            schema,
            x: Vec::new(),
            y: Vec::new(),
            provenance: Vec::new(),
            short: false,
        }
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    pub fn push(&mut self, x: FeatureVector, y: f64, provenance: Provenance) {
        debug_assert_eq!(x.schema, self.schema);
        self.x.push(x);
        self.y.push(y);
        self.provenance.push(provenance);
    }

    pub fn extend(&mut self, other: SampleSet) {
        assert_eq!(self.schema, other.schema, "mixing feature schemas");
        self.x.extend(other.x);
        self.y.extend(other.y);
        self.provenance.extend(other.provenance);
        self.short |= other.short;
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = csv::Writer::from_writer(file);
        for ((x, &y), p) in self.x.iter().zip(&self.y).zip(&self.provenance) {
            let f = x.as_slice();
            w.serialize(Row {
                f0: f[0],
                f1: f[1],
                f2: f.get(2).copied(),
                f3: f.get(3).copied(),
                target: y,
                graph_seed: p.graph_seed,
                v: p.v,
                u: p.u,
                origin: p.origin,
                dest: p.dest,
            })?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn read_csv(path: impl AsRef<Path>, schema: FeatureSchema) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut set = SampleSet::empty(schema);
        for row in csv::Reader::from_reader(file).deserialize() {
            let row: Row = row?;
            let values: Vec<f64> = [Some(row.f0), Some(row.f1), row.f2, row.f3]
                .into_iter()
                .flatten()
                .collect();
            set.push(
                FeatureVector::new(schema, &values)?,
                row.target,
                Provenance {
                    graph_seed: row.graph_seed,
                    v: row.v,
                    u: row.u,
                    origin: row.origin,
                    dest: row.dest,
                },
            );
        }
        Ok(set)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_roundtrip() {
        let mut s = SampleSet::empty(FeatureSchema::DistAndStretch);
        let p = Provenance { graph_seed: 3, v: 1, u: 2, origin: 0, dest: 4 };
        s.push(FeatureVector::new(FeatureSchema::DistAndStretch, &[0.1, 1.2, 0.3, 1.0 / 3.0]).unwrap(), -0.7, p);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.csv");
        s.write_csv(&path).unwrap();
        assert_eq!(SampleSet::read_csv(&path, FeatureSchema::DistAndStretch).unwrap(), s);
        assert!(matches!(
            SampleSet::read_csv(&path, FeatureSchema::DistOnly),
            Err(Error::Schema { expected: 2, got: 4 })
        ));
    }
}
