//! Hierarchical ball coverings of point clouds and the self-supervised
//! training stack built on them.
//!
//! The pipeline runs: [`geometry`] loads and normalizes clouds,
//! [`covertree`] builds the leveled ball hierarchy, [`pretext`] turns each
//! tree into distance-regression and quadrant-classification labels,
//! [`episodes`] draws few-shot support/query splits, [`sslnet`] trains the
//! two-branch network on [`autonet`], and [`probe`] measures how well the
//! exported point embeddings separate classes. [`experiment`] wires the
//! stages into reproducible runs.

pub mod autonet;
pub mod cli;
pub mod covertree;
pub mod episodes;
pub mod error;
pub mod experiment;
pub mod geometry;
pub mod pretext;
pub mod probe;
pub mod seeds;
pub mod sslnet;
pub mod synth;

pub use covertree::{build_cover_tree, validate_invariants, CoverNode, CoverTree, ValidationReport};
pub use episodes::{sample_episode, Episode, Manifest, ManifestEntry};
pub use error::{Error, Result};
pub use geometry::{load_cloud, normalize_unit_cube, subsample, PointCloud};
pub use pretext::{PretextDataset, PretextRecord, QuadrantPair, RegressionPair, Task};
pub use sslnet::{PretrainConfig, SslConfig, SslModel, TrainingCloud};
