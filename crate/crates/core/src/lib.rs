//! Geometric random graphs, optimal-Q oracles, ranking similarity and
//! learned local routing policies.

pub mod error;
pub mod experiment;
pub mod features;
pub mod graph;
pub mod nn;
pub mod oracle;
pub mod policy;
pub mod ranking;
pub mod rl;
pub mod samples;
pub mod seed;
pub mod symbolic;

pub use error::{Error, Result};
pub use features::{FeatureSchema, FeatureVector, PairFeatures, PairGeometry};
pub use graph::{GraphSpec, NodeCoord, SpaceGraph, SpaceKind};
pub use nn::{QModel, QNetwork, TrainConfig};
pub use oracle::{OracleTable, PairContext, ShortestPaths};
pub use ranking::{Phi, RankingMetric};
pub use samples::SampleSet;
pub use policy::{EvalReport, Fallback, Policy};
pub use rl::{RlConfig, StretchBound};
pub use symbolic::TwoLinearParams;
