//! Labelled dataset manifests and m-shot K'-way episode sampling.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::{index, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{load_cloud, PointCloud};

pub const DEFAULT_QUERY_PER_CLASS: usize = 20;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub path: String,
    pub class: i64,
}

/// A labelled collection of clouds. Relative paths resolve against `root`.
#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub entries: Vec<ManifestEntry>,
    pub root: PathBuf,
}

impl Manifest {
    pub fn new(entries: Vec<ManifestEntry>, root: impl Into<PathBuf>) -> Self {
        Manifest {
            entries,
            root: root.into(),
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let entries: Vec<ManifestEntry> = serde_json::from_str(&text)?;
        let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(Manifest { entries, root })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(&self.entries)?;
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn resolve(&self, cloud_id: &str) -> PathBuf {
        let p = Path::new(cloud_id);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.root.join(p)
        }
    }

    pub fn class_of(&self, cloud_id: &str) -> Option<i64> {
        self.entries
            .iter()
            .find(|e| e.path == cloud_id)
            .map(|e| e.class)
    }

    /// Loads one entry's cloud, keyed by the manifest path and carrying its class.
    pub fn load_cloud(&self, entry: &ManifestEntry) -> Result<PointCloud> {
        Ok(load_cloud(self.resolve(&entry.path))?
            .with_id(entry.path.clone())
            .with_class(entry.class))
    }

    pub fn by_class(&self) -> BTreeMap<i64, Vec<&ManifestEntry>> {
        let mut out: BTreeMap<i64, Vec<&ManifestEntry>> = BTreeMap::new();
        for e in &self.entries {
            out.entry(e.class).or_default().push(e);
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EpisodeItem {
    pub cloud_id: String,
    pub class: i64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Episode {
    pub way: usize,
    pub shot: usize,
    pub q_per_class: usize,
    pub seed: u64,
    pub classes: Vec<i64>,
    pub support: Vec<EpisodeItem>,
    pub query: Vec<EpisodeItem>,
}

impl Episode {
    pub fn in_support(&self, cloud_id: &str) -> bool {
        self.support.iter().any(|s| s.cloud_id == cloud_id)
    }

    /// Guard used by the trainer: only support clouds may feed pretraining.
    pub fn ensure_support(&self, cloud_id: &str) -> Result<()> {
        if self.in_support(cloud_id) {
            Ok(())
        } else {
            Err(Error::Data(format!(
                "cloud `{cloud_id}` is not in the episode support set"
            )))
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

/// Samples `way` classes uniformly among those holding at least
/// `shot + q_per_class` clouds, then `shot` support and `q_per_class` query
/// clouds per class, all without replacement.
pub fn sample_episode(
    manifest: &Manifest,
    way: usize,
    shot: usize,
    q_per_class: usize,
    seed: u64,
) -> Result<Episode> {
    if way == 0 || shot == 0 {
        return Err(Error::Argument("way and shot must be positive".into()));
    }
    let need = shot + q_per_class;
    let groups = manifest.by_class();
    let eligible: Vec<(i64, Vec<&ManifestEntry>)> = groups
        .into_iter()
        .filter(|(_, v)| v.len() >= need)
        .collect();
    if eligible.len() < way {
        return Err(Error::Capacity(format!(
            "{way}-way episode needs {way} classes with at least {need} clouds each \
             ({shot} support + {q_per_class} query); only {} qualify",
            eligible.len()
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut chosen = index::sample(&mut rng, eligible.len(), way).into_vec();
    chosen.sort_unstable();

    let mut support = Vec::with_capacity(way * shot);
    let mut query = Vec::with_capacity(way * q_per_class);
    let mut classes = Vec::with_capacity(way);
    for ci in chosen {
        let (class, members) = &eligible[ci];
        classes.push(*class);
        let mut picks: Vec<&ManifestEntry> = members.clone();
        picks.shuffle(&mut rng);
        let item = |e: &&ManifestEntry| EpisodeItem {
            cloud_id: e.path.clone(),
            class: *class,
        };
        support.extend(picks[..shot].iter().map(item));
        query.extend(picks[shot..need].iter().map(item));
    }

    debug_assert!({
        let s: BTreeSet<&str> = support.iter().map(|i| i.cloud_id.as_str()).collect();
        query.iter().all(|q| !s.contains(q.cloud_id.as_str()))
    });

    Ok(Episode {
        way,
        shot,
        q_per_class,
        seed,
        classes,
        support,
        query,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn toy_manifest(classes: i64, per_class: usize) -> Manifest {
        let mut entries = Vec::new();
        for c in 0..classes {
            for i in 0..per_class {
                entries.push(ManifestEntry {
                    path: format!("c{c}/{i}.xyz"),
                    class: c,
                });
            }
        }
        Manifest::new(entries, "")
    }

    #[test]
    fn ten_by_forty_episode() {
        let m = toy_manifest(10, 40);
        let e = sample_episode(&m, 5, 10, 20, 3).unwrap();
        assert_eq!(e.support.len(), 50);
        assert_eq!(e.query.len(), 100);
        let s: BTreeSet<&str> = e.support.iter().map(|i| i.cloud_id.as_str()).collect();
        assert_eq!(s.len(), 50);
        assert!(e.query.iter().all(|q| !s.contains(q.cloud_id.as_str())));
        for c in &e.classes {
            assert_eq!(e.support.iter().filter(|i| i.class == *c).count(), 10);
            assert_eq!(e.query.iter().filter(|i| i.class == *c).count(), 20);
        }
        for item in e.support.iter().chain(&e.query) {
            assert_eq!(m.class_of(&item.cloud_id), Some(item.class));
        }
    }

    #[test]
    fn minimal_episode() {
        let m = toy_manifest(1, 2);
        let e = sample_episode(&m, 1, 1, 1, 0).unwrap();
        assert_eq!((e.support.len(), e.query.len()), (1, 1));
        assert_ne!(e.support[0], e.query[0]);
    }

    #[test]
    fn capacity_errors() {
        let m = toy_manifest(3, 40);
        assert!(matches!(sample_episode(&m, 5, 1, 1, 0), Err(Error::Capacity(_))));
        assert!(matches!(sample_episode(&m, 2, 30, 20, 0), Err(Error::Capacity(_))));
    }

    #[test]
    fn deterministic_per_seed() {
        let m = toy_manifest(8, 30);
        let a = sample_episode(&m, 4, 5, 5, 11).unwrap();
        assert_eq!(a, sample_episode(&m, 4, 5, 5, 11).unwrap());
        assert_ne!(a, sample_episode(&m, 4, 5, 5, 12).unwrap());
    }

    #[test]
    fn class_frequencies_are_uniform() {
        let m = toy_manifest(10, 10);
        let mut counts = BTreeMap::new();
        let seeds = 1000u64;
        for s in 0..seeds {
            for c in sample_episode(&m, 3, 2, 2, s).unwrap().classes {
                *counts.entry(c).or_insert(0usize) += 1;
            }
        }
        // Each class expected in 3/10 of episodes; chi-square with 9 dof.
        let expected = seeds as f64 * 3.0 / 10.0;
        let chi2: f64 = counts
            .values()
            .map(|&o| (o as f64 - expected).powi(2) / expected)
            .sum();
        assert_eq!(counts.len(), 10);
        assert!(chi2 < 27.9, "chi2 = {chi2}"); // p ≈ 0.001
    }

    #[test]
    fn support_guard() {
        let m = toy_manifest(2, 4);
        let e = sample_episode(&m, 2, 1, 2, 5).unwrap();
        assert!(e.ensure_support(&e.support[0].cloud_id).is_ok());
        assert!(e.ensure_support(&e.query[0].cloud_id).is_err());
    }

    #[test]
    fn episode_json_round_trip() {
        let m = toy_manifest(3, 5);
        let e = sample_episode(&m, 2, 2, 1, 9).unwrap();
        let back = Episode::from_json(&e.to_json().unwrap()).unwrap();
        assert_eq!(back, e);
        let v: serde_json::Value = serde_json::from_str(&e.to_json().unwrap()).unwrap();
        for key in ["way", "shot", "seed", "support", "query"] {
            assert!(v.get(key).is_some());
        }
    }
}
