//! Leveled cover-tree over a point cloud.
//!
//! Level `i` holds a set of centers `C_i` whose closed balls of radius `ε^i`
//! cover every point of the cloud. Centers nest (`C_i ⊆ C_{i-1}`), are
//! separated by more than `ε^i`, and each center lies within `ε^{i+1}` of its
//! parent one level up. The tree is materialized for `max_depth` levels below
//! the root.

use std::collections::BTreeSet;
use std::fmt;
use std::fs;
use std::path::Path;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{distance, PointCloud};

/// Levels materialized below the root when no depth is given.
pub const DEFAULT_MAX_DEPTH: usize = 3;
pub const DEFAULT_EPSILON: f64 = 2.0;

pub type NodeId = usize;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverNode {
    pub id: NodeId,
    pub level: i32,
    pub center_index: usize,
    pub parent: Option<NodeId>,
    pub children: Vec<NodeId>,
    /// Every cloud point inside the closed ball of radius `ε^level`.
    pub member_points: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverTree {
    pub epsilon: f64,
    pub top_level: i32,
    pub max_depth: usize,
    #[serde(default)]
    pub cloud_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub estimated_expansion_constant: Option<f64>,
    /// Ordered by descending level; ids equal positions, root is node 0.
    pub nodes: Vec<CoverNode>,
}

/// Ball radius at `level`. Builder, validator and label generators all go
/// through here so boundary comparisons agree exactly.
#[inline]
pub fn radius(epsilon: f64, level: i32) -> f64 {
    epsilon.powi(level)
}

fn top_level_for(epsilon: f64, diameter: f64) -> i32 {
    if diameter <= 0.0 {
        return 0;
    }
    let mut level = (diameter.ln() / epsilon.ln()).ceil() as i32;
    while radius(epsilon, level) < diameter {
        level += 1;
    }
    while radius(epsilon, level - 1) >= diameter {
        level -= 1;
    }
    level
}

/// Builds the tree level by level from the top. Each level starts from the
/// centers of the level above; points are then scanned in cloud order and
/// every point not yet within `ε^i` of a center becomes a new center, attached
/// to its nearest center one level up.
pub fn build_cover_tree(cloud: &PointCloud, epsilon: f64, max_depth: usize) -> Result<CoverTree> {
    if !(epsilon > 1.0) || !epsilon.is_finite() {
        return Err(Error::Argument(format!(
            "base of the expansion constant must exceed 1, got {epsilon}"
        )));
    }
    if cloud.is_empty() {
        return Err(Error::EmptyCloud(cloud.id().to_string()));
    }
    let n = cloud.len();
    let top_level = top_level_for(epsilon, cloud.diameter());

    let mut nodes = vec![CoverNode {
        id: 0,
        level: top_level,
        center_index: 0,
        parent: None,
        children: Vec::new(),
        member_points: Vec::new(),
    }];
    // (center point index, node id) for the level above the one being built.
    let mut above: Vec<(usize, NodeId)> = vec![(0, 0)];

    for depth in 1..=max_depth {
        let level = top_level - depth as i32;
        let r = radius(epsilon, level);
        let mut centers: Vec<usize> = above.iter().map(|&(c, _)| c).collect();
        let mut parents: Vec<NodeId> = above.iter().map(|&(_, id)| id).collect();

        for p in 0..n {
            let pt = cloud.point(p);
            if centers.iter().any(|&c| distance(pt, cloud.point(c)) <= r) {
                continue;
            }
            let mut best = above[0];
            let mut best_d = f64::INFINITY;
            for &(c, id) in &above {
                let d = distance(pt, cloud.point(c));
                if d < best_d {
                    best_d = d;
                    best = (c, id);
                }
            }
            centers.push(p);
            parents.push(best.1);
        }

        let mut next = Vec::with_capacity(centers.len());
        for (c, parent) in centers.into_iter().zip(parents) {
            let id = nodes.len();
            nodes.push(CoverNode {
                id,
                level,
                center_index: c,
                parent: Some(parent),
                children: Vec::new(),
                member_points: Vec::new(),
            });
            nodes[parent].children.push(id);
            next.push((c, id));
        }
        above = next;
    }

    for node in &mut nodes {
        node.member_points = ball_members(cloud, node.center_index, radius(epsilon, node.level));
    }

    Ok(CoverTree {
        epsilon,
        top_level,
        max_depth,
        cloud_id: cloud.id().to_string(),
        estimated_expansion_constant: None,
        nodes,
    })
}

fn ball_members(cloud: &PointCloud, center: usize, r: f64) -> Vec<usize> {
    let c = cloud.point(center);
    (0..cloud.len())
        .filter(|&p| distance(cloud.point(p), c) <= r)
        .collect()
}

impl CoverTree {
    pub fn root(&self) -> &CoverNode {
        &self.nodes[0]
    }

    pub fn node(&self, id: NodeId) -> Option<&CoverNode> {
        self.nodes.get(id)
    }

    pub fn radius(&self, level: i32) -> f64 {
        radius(self.epsilon, level)
    }

    /// Lowest materialized level.
    pub fn bottom_level(&self) -> i32 {
        self.nodes.last().map_or(self.top_level, |n| n.level)
    }

    /// Levels below the root, in descending order of level.
    pub fn levels(&self) -> Vec<(i32, Vec<&CoverNode>)> {
        self.all_levels().into_iter().skip(1).collect()
    }

    /// Every level including the root's.
    pub fn all_levels(&self) -> Vec<(i32, Vec<&CoverNode>)> {
        let mut out: Vec<(i32, Vec<&CoverNode>)> = Vec::new();
        for node in &self.nodes {
            match out.last_mut() {
                Some((level, group)) if *level == node.level => group.push(node),
                _ => out.push((node.level, vec![node])),
            }
        }
        out
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    Root { detail: String },
    Structure { node: NodeId, detail: String },
    Nesting { node: NodeId, level: i32 },
    Covering { node: NodeId, parent: NodeId, distance: f64, radius: f64 },
    Separation { a: NodeId, b: NodeId, distance: f64, radius: f64 },
    LevelCovering { level: i32, point: usize, nearest: f64 },
    Members { node: NodeId, missing: Vec<usize>, extra: Vec<usize> },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::Root { detail } => write!(f, "root: {detail}"),
            Violation::Structure { node, detail } => write!(f, "node {node}: {detail}"),
            Violation::Nesting { node, level } => {
                write!(f, "node {node}: center missing from level {level}")
            }
            Violation::Covering { node, parent, distance, radius } => write!(
                f,
                "node {node}: distance {distance} to parent {parent} exceeds {radius}"
            ),
            Violation::Separation { a, b, distance, radius } => {
                write!(f, "nodes {a},{b}: separation {distance} <= {radius}")
            }
            Violation::LevelCovering { level, point, nearest } => write!(
                f,
                "level {level}: point {point} is {nearest} from the nearest center"
            ),
            Violation::Members { node, missing, extra } => write!(
                f,
                "node {node}: {} member(s) missing, {} extra",
                missing.len(),
                extra.len()
            ),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Exhaustively checks the root, nesting, parent covering, separation, level
/// covering and ball membership against brute-force scans of `cloud`.
pub fn validate_invariants(tree: &CoverTree, cloud: &PointCloud) -> ValidationReport {
    let mut v = Vec::new();
    let n = cloud.len();
    let eps = tree.epsilon;

    for (pos, node) in tree.nodes.iter().enumerate() {
        if node.id != pos {
            v.push(Violation::Structure {
                node: node.id,
                detail: format!("stored at position {pos}"),
            });
        }
        if node.center_index >= n {
            v.push(Violation::Structure {
                node: node.id,
                detail: format!("center index {} out of range", node.center_index),
            });
        }
    }
    if !v.is_empty() {
        return ValidationReport { violations: v };
    }

    let roots: Vec<&CoverNode> = tree.nodes.iter().filter(|n| n.parent.is_none()).collect();
    if roots.len() != 1 {
        v.push(Violation::Root {
            detail: format!("{} parentless nodes", roots.len()),
        });
    }
    for node in &tree.nodes {
        if node.level == tree.top_level && node.parent.is_some() {
            v.push(Violation::Root {
                detail: format!("node {} shares the root level", node.id),
            });
        }
        if node.parent.is_none() && node.level != tree.top_level {
            v.push(Violation::Root {
                detail: format!("parentless node {} at level {}", node.id, node.level),
            });
        }
        if node.level > tree.top_level {
            v.push(Violation::Structure {
                node: node.id,
                detail: format!("level {} above the root", node.level),
            });
        }
    }

    // Parent/child linkage and parent covering.
    for node in &tree.nodes {
        for &c in &node.children {
            match tree.node(c) {
                Some(child) if child.level == node.level - 1 && child.parent == Some(node.id) => {}
                Some(child) => v.push(Violation::Structure {
                    node: node.id,
                    detail: format!(
                        "child {c} at level {} with parent {:?}",
                        child.level, child.parent
                    ),
                }),
                None => v.push(Violation::Structure {
                    node: node.id,
                    detail: format!("unknown child {c}"),
                }),
            }
        }
        let Some(pid) = node.parent else { continue };
        let Some(parent) = tree.node(pid) else {
            v.push(Violation::Structure {
                node: node.id,
                detail: format!("unknown parent {pid}"),
            });
            continue;
        };
        if !parent.children.contains(&node.id) {
            v.push(Violation::Structure {
                node: node.id,
                detail: format!("not listed among the children of {pid}"),
            });
        }
        let d = distance(cloud.point(node.center_index), cloud.point(parent.center_index));
        let r = radius(eps, parent.level);
        if d > r {
            v.push(Violation::Covering {
                node: node.id,
                parent: pid,
                distance: d,
                radius: r,
            });
        }
    }

    let levels = tree.all_levels();
    for (k, (level, group)) in levels.iter().enumerate() {
        let r = radius(eps, *level);

        if let Some((_, below)) = levels.get(k + 1) {
            let lower: BTreeSet<usize> = below.iter().map(|n| n.center_index).collect();
            for node in group {
                if !lower.contains(&node.center_index) {
                    v.push(Violation::Nesting {
                        node: node.id,
                        level: level - 1,
                    });
                }
            }
        }

        for (i, a) in group.iter().enumerate() {
            for b in &group[i + 1..] {
                let d = distance(cloud.point(a.center_index), cloud.point(b.center_index));
                if d <= r {
                    v.push(Violation::Separation {
                        a: a.id,
                        b: b.id,
                        distance: d,
                        radius: r,
                    });
                }
            }
        }

        for p in 0..n {
            let pt = cloud.point(p);
            let nearest = group
                .iter()
                .map(|c| distance(pt, cloud.point(c.center_index)))
                .fold(f64::INFINITY, f64::min);
            if nearest > r {
                v.push(Violation::LevelCovering {
                    level: *level,
                    point: p,
                    nearest,
                });
            }
        }

        for node in group {
            let truth: BTreeSet<usize> = ball_members(cloud, node.center_index, r).into_iter().collect();
            let stored: BTreeSet<usize> = node.member_points.iter().copied().collect();
            if truth != stored || stored.len() != node.member_points.len() {
                v.push(Violation::Members {
                    node: node.id,
                    missing: truth.difference(&stored).copied().collect(),
                    extra: stored.difference(&truth).copied().collect(),
                });
            }
        }
    }

    ValidationReport { violations: v }
}

/// Empirical growth ratio: the largest `|B(p, 2r)| / |B(p, r)|` over sampled
/// points `p` and dyadic radii `r = diam / 2^k`. Radii below the sampled
/// point's nearest-neighbour distance are skipped, since there the ratio
/// measures grid spacing rather than the intrinsic dimension.
pub fn estimate_expansion_constant(cloud: &PointCloud, sample: usize, seed: u64) -> Result<f64> {
    let n = cloud.len();
    if sample > n {
        return Err(Error::Argument(format!(
            "sample of {sample} exceeds cloud size {n}"
        )));
    }
    let diam = cloud.diameter();
    if n == 1 || diam == 0.0 || sample == 0 {
        return Ok(1.0);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let picked = index::sample(&mut rng, n, sample);

    let mut best = 1.0f64;
    for p in picked.iter() {
        let pt = cloud.point(p);
        let mut dists: Vec<f64> = (0..n).map(|q| distance(pt, cloud.point(q))).collect();
        dists.sort_by(f64::total_cmp);
        let nn = dists[1];
        let count_within = |r: f64| dists.partition_point(|&d| d <= r).max(1);
        let mut r = diam;
        for _ in 0..64 {
            if r < nn {
                break;
            }
            let ratio = count_within(2.0 * r) as f64 / count_within(r) as f64;
            best = best.max(ratio);
            r *= 0.5;
        }
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn random_cloud(n: usize, seed: u64) -> PointCloud {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pts: Vec<[f64; 3]> = (0..n).map(|_| [rng.gen(), rng.gen(), rng.gen()]).collect();
        PointCloud::from_points("r", &pts).unwrap()
    }

    #[test]
    fn single_point_replicates_center() {
        let c = PointCloud::from_points("p", &[[0.0, 0.0, 0.0]]).unwrap();
        let t = build_cover_tree(&c, 2.0, 3).unwrap();
        let levels = t.levels();
        assert_eq!(levels.len(), 3);
        for (_, group) in &levels {
            assert_eq!(group.len(), 1);
            assert_eq!(group[0].member_points, vec![0]);
            assert_eq!(group[0].center_index, 0);
        }
        assert!(validate_invariants(&t, &c).is_valid());
    }

    #[test]
    fn two_points_split_one_level_down() {
        let c = PointCloud::from_points("p", &[[0.0, 0.0, 0.0], [1.0, 0.0, 0.0]]).unwrap();
        let t = build_cover_tree(&c, 2.0, 1).unwrap();
        assert_eq!(t.top_level, 0);
        let shape: Vec<(i32, usize)> = t.all_levels().iter().map(|(l, g)| (*l, g.len())).collect();
        assert_eq!(shape, vec![(0, 1), (-1, 2)]);
        assert_eq!(t.levels().len(), 1);
        assert!(validate_invariants(&t, &c).is_valid());
        // Root ball of radius 1 reaches the second point (closed ball).
        assert_eq!(t.root().member_points, vec![0, 1]);
    }

    #[test]
    fn root_only_tree_has_no_levels() {
        let c = random_cloud(10, 1);
        let t = build_cover_tree(&c, 2.0, 0).unwrap();
        assert!(t.levels().is_empty());
        assert_eq!(t.nodes.len(), 1);
    }

    #[test]
    fn rejects_bad_epsilon() {
        let c = random_cloud(4, 1);
        assert!(matches!(build_cover_tree(&c, 1.0, 3), Err(Error::Argument(_))));
        assert!(matches!(build_cover_tree(&c, f64::NAN, 3), Err(Error::Argument(_))));
    }

    #[test]
    fn random_cloud_is_valid_and_deterministic() {
        let c = random_cloud(512, 9);
        let t = build_cover_tree(&c, 2.0, 3).unwrap();
        let report = validate_invariants(&t, &c);
        assert!(report.is_valid(), "{:?}", report.violations);
        assert_eq!(t, build_cover_tree(&c, 2.0, 3).unwrap());
        assert!(radius(2.0, t.top_level) >= c.diameter());
        assert!(radius(2.0, t.top_level - 1) < c.diameter());
    }

    #[test]
    fn displaced_center_is_reported() {
        let c = random_cloud(256, 2);
        let mut t = build_cover_tree(&c, 2.0, 3).unwrap();
        let bottom = t.bottom_level();
        let (a, b) = {
            let group: Vec<&CoverNode> = t.nodes.iter().filter(|n| n.level == bottom).collect();
            (group[0].id, group[1].id)
        };
        t.nodes[b].center_index = t.nodes[a].center_index;
        let report = validate_invariants(&t, &c);
        assert!(report
            .violations
            .iter()
            .any(|v| matches!(v, Violation::Separation { .. } | Violation::Covering { .. })));
    }

    #[test]
    fn removed_member_is_reported() {
        let c = random_cloud(128, 3);
        let mut t = build_cover_tree(&c, 2.0, 3).unwrap();
        let id = t.nodes.len() - 1;
        let dropped = t.nodes[id].member_points.pop().unwrap();
        let report = validate_invariants(&t, &c);
        assert_eq!(
            report.violations,
            vec![Violation::Members {
                node: id,
                missing: vec![dropped],
                extra: vec![]
            }]
        );
    }

    #[test]
    fn json_round_trip() {
        let c = random_cloud(64, 4);
        let mut t = build_cover_tree(&c, 1.5, 3).unwrap();
        t.estimated_expansion_constant = Some(2.5);
        let back = CoverTree::from_json(&t.to_json().unwrap()).unwrap();
        assert_eq!(back, t);
    }

    #[test]
    fn radii_shrink_down_the_tree() {
        let c = random_cloud(64, 5);
        let t = build_cover_tree(&c, 2.5, 3).unwrap();
        for w in t.levels().windows(2) {
            assert!(t.radius(w[1].0) < t.radius(w[0].0));
            assert_eq!(w[1].0, w[0].0 - 1);
        }
    }

    #[test]
    fn expansion_of_a_line_is_about_two() {
        let pts: Vec<[f64; 2]> = (0..1001).map(|i| [i as f64 / 1000.0, 0.0]).collect();
        let c = PointCloud::from_points("line", &pts).unwrap();
        let k = estimate_expansion_constant(&c, 200, 1).unwrap();
        assert!((k - 2.0).abs() <= 0.5, "estimate {k}");
    }

    #[test]
    fn expansion_of_single_point_is_one() {
        let c = PointCloud::from_points("p", &[[1.0, 2.0]]).unwrap();
        assert_eq!(estimate_expansion_constant(&c, 1, 0).unwrap(), 1.0);
    }

    #[test]
    fn expansion_of_two_far_clusters() {
        let mut pts = Vec::new();
        for i in 0..20 {
            let j = i as f64 * 1e-3;
            pts.push([j, 0.0]);
            pts.push([10.0 + j, 0.0]);
        }
        let c = PointCloud::from_points("two", &pts).unwrap();
        let k = estimate_expansion_constant(&c, 40, 0).unwrap();
        assert!(k >= 2.0, "estimate {k}");
        assert!(estimate_expansion_constant(&c, 41, 0).is_err());
    }
}
