//! Self-supervised labels derived from a cover-tree.
//!
//! * Task R: every unordered pair of distinct centers on the same level,
//!   labelled with their Euclidean distance.
//! * Task C: every parent/child edge between consecutive levels below the
//!   root, labelled with the quadrant of the parent ball holding the child.

use std::collections::BTreeSet;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::covertree::{CoverTree, NodeId};
use crate::error::{Error, Result};
use crate::geometry::{distance, PointCloud};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionPair {
    pub level: i32,
    pub node_a: NodeId,
    pub node_b: NodeId,
    pub distance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuadrantPair {
    pub parent_level: i32,
    pub parent: NodeId,
    pub child: NodeId,
    pub quadrant: u8,
}

/// Quadrant (1..=4) of `child` relative to `parent`, read from the signs of
/// the first two offset coordinates. Zero counts as non-negative.
pub fn quadrant_of(parent: &[f64], child: &[f64]) -> u8 {
    debug_assert!(parent.len() >= 2 && parent.len() == child.len());
    let dx = child[0] - parent[0];
    let dy = child[1] - parent[1];
    match (dx >= 0.0, dy >= 0.0) {
        (true, true) => 1,
        (false, true) => 2,
        (false, false) => 3,
        (true, false) => 4,
    }
}

pub fn gen_regression_pairs(tree: &CoverTree, cloud: &PointCloud) -> Vec<RegressionPair> {
    let mut out = Vec::new();
    for (level, group) in tree.levels() {
        for (i, a) in group.iter().enumerate() {
            for b in &group[i + 1..] {
                let (a, b) = if a.id < b.id { (a, b) } else { (b, a) };
                out.push(RegressionPair {
                    level,
                    node_a: a.id,
                    node_b: b.id,
                    distance: distance(cloud.point(a.center_index), cloud.point(b.center_index)),
                });
            }
        }
    }
    out
}

pub fn gen_quadrant_pairs(tree: &CoverTree, cloud: &PointCloud) -> Vec<QuadrantPair> {
    let levels = tree.levels();
    let mut out = Vec::new();
    for w in levels.windows(2) {
        for parent in &w[0].1 {
            for &c in &parent.children {
                let child = &tree.nodes[c];
                out.push(QuadrantPair {
                    parent_level: parent.level,
                    parent: parent.id,
                    child: child.id,
                    quadrant: quadrant_of(
                        cloud.point(parent.center_index),
                        cloud.point(child.center_index),
                    ),
                });
            }
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Task {
    /// Quadrant classification.
    C,
    /// Distance regression.
    R,
}

/// One line of the JSON-lines label file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PretextRecord {
    pub task: Task,
    pub cloud: String,
    pub level: i32,
    pub a: NodeId,
    pub b: NodeId,
    pub label: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PretextDataset {
    pub cloud_id: String,
    pub regression_pairs: Vec<RegressionPair>,
    pub quadrant_pairs: Vec<QuadrantPair>,
    pub epsilon: f64,
    pub levels_used: Vec<i32>,
}

impl PretextDataset {
    pub fn generate(tree: &CoverTree, cloud: &PointCloud) -> Self {
        PretextDataset {
            cloud_id: cloud.id().to_string(),
            regression_pairs: gen_regression_pairs(tree, cloud),
            quadrant_pairs: gen_quadrant_pairs(tree, cloud),
            epsilon: tree.epsilon,
            levels_used: tree.levels().iter().map(|(l, _)| *l).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.regression_pairs.len() + self.quadrant_pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// C records first, then R records, each in generation order.
    pub fn records(&self) -> Vec<PretextRecord> {
        let c = self.quadrant_pairs.iter().map(|q| PretextRecord {
            task: Task::C,
            cloud: self.cloud_id.clone(),
            level: q.parent_level,
            a: q.parent,
            b: q.child,
            label: f64::from(q.quadrant),
        });
        let r = self.regression_pairs.iter().map(|p| PretextRecord {
            task: Task::R,
            cloud: self.cloud_id.clone(),
            level: p.level,
            a: p.node_a,
            b: p.node_b,
            label: p.distance,
        });
        c.chain(r).collect()
    }

    /// Rebuilds a dataset from records, checking every node id against `tree`.
    pub fn from_records(records: &[PretextRecord], tree: &CoverTree) -> Result<Self> {
        let cloud_id = records
            .first()
            .map_or_else(|| tree.cloud_id.clone(), |r| r.cloud.clone());
        let mut ds = PretextDataset {
            cloud_id: cloud_id.clone(),
            regression_pairs: Vec::new(),
            quadrant_pairs: Vec::new(),
            epsilon: tree.epsilon,
            levels_used: tree.levels().iter().map(|(l, _)| *l).collect(),
        };
        for (i, r) in records.iter().enumerate() {
            if r.cloud != cloud_id {
                return Err(Error::Data(format!(
                    "record {i} belongs to `{}`, expected `{cloud_id}`",
                    r.cloud
                )));
            }
            for id in [r.a, r.b] {
                if tree.node(id).is_none() {
                    return Err(Error::Data(format!("record {i} references unknown node {id}")));
                }
            }
            match r.task {
                Task::R => ds.regression_pairs.push(RegressionPair {
                    level: r.level,
                    node_a: r.a,
                    node_b: r.b,
                    distance: r.label,
                }),
                Task::C => {
                    let q = r.label;
                    if !(1.0..=4.0).contains(&q) || q.fract() != 0.0 {
                        return Err(Error::Data(format!("record {i}: quadrant label {q}")));
                    }
                    ds.quadrant_pairs.push(QuadrantPair {
                        parent_level: r.level,
                        parent: r.a,
                        child: r.b,
                        quadrant: q as u8,
                    })
                }
            }
        }
        Ok(ds)
    }
}

pub fn write_jsonl<W: Write>(records: &[PretextRecord], mut w: W) -> Result<()> {
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")
            .map_err(|e| Error::io("<jsonl output>", e))?;
    }
    Ok(())
}

pub fn read_jsonl<R: BufRead>(r: R) -> Result<Vec<PretextRecord>> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line.map_err(|e| Error::io("<jsonl input>", e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: "<jsonl>".into(),
            line: i + 1,
            msg: e.to_string(),
        })?);
    }
    Ok(out)
}

/// Ids of every node a record set touches.
pub fn referenced_nodes(records: &[PretextRecord]) -> BTreeSet<NodeId> {
    records.iter().flat_map(|r| [r.a, r.b]).collect()
}
