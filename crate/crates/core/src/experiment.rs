//! Repeated few-shot episodes: pretrain on each episode's support set, probe
//! frozen embeddings, and aggregate accuracies across episode seeds.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::covertree::{build_cover_tree, DEFAULT_EPSILON, DEFAULT_MAX_DEPTH};
use crate::episodes::{
    sample_episode, Episode, EpisodeItem, Manifest, ManifestEntry, DEFAULT_QUERY_PER_CLASS,
};
use crate::error::{Error, Result, StageExt};
use crate::geometry::{normalize_unit_cube, subsample, PointCloud};
use crate::pretext::{PretextDataset, Task};
use crate::probe::{
    evaluate, pool_cloud, silhouette, train_linear_probe, CloudEmbedding, PoolMode, ProbeConfig,
};
use crate::seeds;
use crate::sslnet::{pretrain, PretrainConfig, SslConfig, SslModel, TrainingCloud};

pub const DEFAULT_EPSILON_GRID: [f64; 5] = [1.5, 1.7, 2.0, 2.2, 2.5];

pub const PRETRAINED: &str = "pretrained";
pub const RANDOM_INIT: &str = "random-init";

/// Which pretext tasks drive pretraining.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Ablation {
    #[serde(rename = "C")]
    C,
    #[serde(rename = "R")]
    R,
    #[default]
    #[serde(rename = "C+R")]
    Both,
    /// No pretraining: the "pretrained" row reuses the initial weights.
    #[serde(rename = "none")]
    None,
}

impl Ablation {
    fn keeps(self, task: Task) -> bool {
        matches!(
            (self, task),
            (Ablation::Both, _) | (Ablation::C, Task::C) | (Ablation::R, Task::R)
        )
    }
}

impl fmt::Display for Ablation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Ablation::C => "C",
            Ablation::R => "R",
            Ablation::Both => "C+R",
            Ablation::None => "none",
        })
    }
}

impl FromStr for Ablation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "C" | "c" => Ok(Ablation::C),
            "R" | "r" => Ok(Ablation::R),
            "C+R" | "c+r" | "CR" | "both" => Ok(Ablation::Both),
            "none" => Ok(Ablation::None),
            _ => Err(Error::Config(format!(
                "unknown ablation `{s}` (expected C, R, C+R or none)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub epsilon: f64,
    pub max_depth: usize,
    pub way: usize,
    pub shot: usize,
    pub q_per_class: usize,
    pub repetitions: usize,
    pub epochs: usize,
    pub batch_clouds: usize,
    pub lr: f64,
    pub lambda: f64,
    pub seed: u64,
    pub ablation: Ablation,
    pub subsample_points: Option<usize>,
    pub extractor_widths: Vec<usize>,
    pub branch_widths: Vec<usize>,
    pub head_hidden: usize,
    pub keep_prob: f64,
    pub probe_epochs: usize,
    pub probe_lr: f64,
    pub pool: PoolMode,
}

impl Default for RunConfig {
    fn default() -> Self {
        let model = SslConfig::default();
        let train = PretrainConfig::default();
        let probe = ProbeConfig::default();
        RunConfig {
            epsilon: DEFAULT_EPSILON,
            max_depth: DEFAULT_MAX_DEPTH,
            way: 5,
            shot: 10,
            q_per_class: DEFAULT_QUERY_PER_CLASS,
            repetitions: 10,
            epochs: train.epochs,
            batch_clouds: train.batch_clouds,
            lr: train.lr,
            lambda: train.lambda,
            seed: 0,
            ablation: Ablation::Both,
            subsample_points: None,
            extractor_widths: model.extractor_widths,
            branch_widths: model.branch_widths,
            head_hidden: model.head_hidden,
            keep_prob: model.keep_prob,
            probe_epochs: probe.epochs,
            probe_lr: probe.lr,
            pool: PoolMode::MeanMax,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if !(self.epsilon > 1.0) {
            return bad(format!("epsilon must exceed 1, got {}", self.epsilon));
        }
        if self.way < 2 {
            return bad("a probe needs way >= 2".into());
        }
        if self.shot == 0 || self.q_per_class == 0 || self.repetitions == 0 {
            return bad("shot, q_per_class and repetitions must be positive".into());
        }
        if self.batch_clouds == 0 {
            return bad("batch_clouds must be positive".into());
        }
        if !(self.lr > 0.0) || !(self.probe_lr > 0.0) || !(self.lambda >= 0.0) {
            return bad("learning rates must be positive and lambda non-negative".into());
        }
        if self.subsample_points == Some(0) {
            return bad("subsample_points must be positive".into());
        }
        Ok(())
    }

    /// Episode seeds `seed, seed + 1, ..., seed + repetitions - 1`.
    pub fn episode_seeds(&self) -> Vec<u64> {
        (0..self.repetitions as u64)
            .map(|r| self.seed.wrapping_add(r))
            .collect()
    }

    pub fn model_config(&self, init_seed: u64) -> SslConfig {
        SslConfig {
            extractor_widths: self.extractor_widths.clone(),
            branch_widths: self.branch_widths.clone(),
            head_hidden: self.head_hidden,
            keep_prob: self.keep_prob,
            init_seed,
            ..SslConfig::default()
        }
    }
}

/// Per-episode seed streams.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EpisodeSeeds {
    pub episode: u64,
    pub init: u64,
    pub train: u64,
    pub probe: u64,
    pub subsample: u64,
}

impl EpisodeSeeds {
    pub fn new(episode: u64) -> Self {
        EpisodeSeeds {
            episode,
            init: seeds::derive(episode, "init"),
            train: seeds::derive(episode, "train"),
            probe: seeds::derive(episode, "probe"),
            subsample: seeds::derive(episode, "subsample"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodScore {
    pub method: String,
    pub accuracy: f64,
    /// Silhouette of the query descriptors grouped by class.
    pub silhouette: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeOutcome {
    pub episode_seed: u64,
    pub scores: Vec<MethodScore>,
    pub final_loss: Option<f64>,
}

impl EpisodeOutcome {
    pub fn score(&self, method: &str) -> Option<&MethodScore> {
        self.scores.iter().find(|s| s.method == method)
    }
}

fn prepare(cloud: PointCloud, config: &RunConfig, seed: u64) -> Result<PointCloud> {
    let cloud = match config.subsample_points {
        Some(k) if k < cloud.len() => {
            subsample(&cloud, k, seeds::derive(seed, cloud.id()))?
        }
        _ => cloud,
    };
    Ok(normalize_unit_cube(&cloud))
}

/// Loads, optionally subsamples, and normalizes the clouds named by `items`.
pub fn load_split(
    manifest: &Manifest,
    items: &[EpisodeItem],
    config: &RunConfig,
    seed: u64,
) -> Result<Vec<PointCloud>> {
    items
        .iter()
        .map(|item| {
            let entry = ManifestEntry {
                path: item.cloud_id.clone(),
                class: item.class,
            };
            prepare(manifest.load_cloud(&entry)?, config, seed)
        })
        .collect()
}

/// Pooled eval-mode descriptors for each cloud.
pub fn describe(model: &SslModel, clouds: &[PointCloud], pool: PoolMode) -> Result<Vec<CloudEmbedding>> {
    clouds
        .iter()
        .map(|c| {
            Ok(CloudEmbedding {
                cloud_id: c.id().to_string(),
                vector: pool_cloud(&model.embed_points(c)?, pool)?,
                class_label: c.class_label().unwrap_or_default(),
            })
        })
        .collect()
}

fn score(
    method: &str,
    model: &SslModel,
    support: &[PointCloud],
    query: &[PointCloud],
    config: &RunConfig,
    probe_seed: u64,
) -> Result<MethodScore> {
    let s = describe(model, support, config.pool).stage("embed")?;
    let q = describe(model, query, config.pool).stage("embed")?;
    let probe_cfg = ProbeConfig {
        epochs: config.probe_epochs,
        lr: config.probe_lr,
        seed: probe_seed,
        standardize: true,
    };
    let probe = train_linear_probe(&s, &probe_cfg).stage("probe")?;
    let eval = evaluate(&probe, &q).stage("evaluate")?;
    let vectors: Vec<Vec<f64>> = q.iter().map(|e| e.vector.clone()).collect();
    let labels: Vec<i64> = q.iter().map(|e| e.class_label).collect();
    Ok(MethodScore {
        method: method.to_string(),
        accuracy: eval.accuracy,
        silhouette: silhouette(&vectors, &labels).stage("silhouette")?,
    })
}

/// Builds trees and pretext records for the support clouds of an episode.
pub fn training_set(
    episode: &Episode,
    support: &[PointCloud],
    config: &RunConfig,
) -> Result<Vec<TrainingCloud>> {
    support
        .iter()
        .map(|cloud| {
            episode.ensure_support(cloud.id())?;
            let tree = build_cover_tree(cloud, config.epsilon, config.max_depth).stage("build-tree")?;
            let records = PretextDataset::generate(&tree, cloud)
                .records()
                .into_iter()
                .filter(|r| config.ablation.keeps(r.task))
                .collect();
            Ok(TrainingCloud {
                cloud: cloud.clone(),
                tree,
                records,
            })
        })
        .collect()
}

/// One full episode: sample, pretrain on support, probe both the trained
/// model and its untouched initial copy.
pub fn run_episode(manifest: &Manifest, config: &RunConfig, episode_seed: u64) -> Result<EpisodeOutcome> {
    let seeds = EpisodeSeeds::new(episode_seed);
    let episode = sample_episode(
        manifest,
        config.way,
        config.shot,
        config.q_per_class,
        seeds.episode,
    )
    .stage("episode")?;
    let support = load_split(manifest, &episode.support, config, seeds.subsample).stage("load")?;
    let query = load_split(manifest, &episode.query, config, seeds.subsample).stage("load")?;

    let initial = SslModel::new(config.model_config(seeds.init)).stage("init")?;
    let mut model = initial.clone();
    let mut final_loss = None;
    if config.ablation != Ablation::None {
        let data = training_set(&episode, &support, config)?;
        let train_cfg = PretrainConfig {
            epochs: config.epochs,
            batch_clouds: config.batch_clouds,
            lr: config.lr,
            lambda: config.lambda,
            train_c: config.ablation != Ablation::R,
            seed: seeds.train,
        };
        let report = pretrain(&mut model, &episode, &data, &train_cfg).stage("pretrain")?;
        final_loss = report.curve.last().map(|e| e.combined);
    }

    Ok(EpisodeOutcome {
        episode_seed,
        scores: vec![
            score(PRETRAINED, &model, &support, &query, config, seeds.probe)?,
            score(RANDOM_INIT, &initial, &support, &query, config, seeds.probe)?,
        ],
        final_loss,
    })
}

/// Runs every repetition (in parallel) and returns outcomes in seed order.
pub fn run_repetitions(manifest: &Manifest, config: &RunConfig) -> Result<Vec<EpisodeOutcome>> {
    config.validate()?;
    config
        .episode_seeds()
        .into_par_iter()
        .map(|s| run_episode(manifest, config, s))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    /// Sample standard deviation; zero for a single value.
    pub std: f64,
    pub n: usize,
}

pub fn summarize(values: &[f64]) -> Summary {
    let n = values.len();
    if n == 0 {
        return Summary { mean: f64::NAN, std: f64::NAN, n };
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let std = if n > 1 {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
    } else {
        0.0
    };
    Summary { mean, std, n }
}

/// Accuracy and silhouette summaries keyed by method name.
pub fn summarize_methods(outcomes: &[EpisodeOutcome]) -> BTreeMap<String, (Summary, Summary)> {
    let mut acc: BTreeMap<String, (Vec<f64>, Vec<f64>)> = BTreeMap::new();
    for o in outcomes {
        for s in &o.scores {
            let e = acc.entry(s.method.clone()).or_default();
            e.0.push(s.accuracy);
            e.1.push(s.silhouette);
        }
    }
    acc.into_iter()
        .map(|(k, (a, s))| (k, (summarize(&a), summarize(&s))))
        .collect()
}

/// `episode_seed,way,shot,method,accuracy`
pub fn write_results_csv<W: Write>(config: &RunConfig, outcomes: &[EpisodeOutcome], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["episode_seed", "way", "shot", "method", "accuracy"])?;
    for o in outcomes {
        for s in &o.scores {
            out.write_record([
                o.episode_seed.to_string(),
                config.way.to_string(),
                config.shot.to_string(),
                s.method.clone(),
                s.accuracy.to_string(),
            ])?;
        }
    }
    out.flush().map_err(|e| Error::io("<results>", e))
}

/// `method,ablation,subsample_points,accuracy_mean,accuracy_std,silhouette_mean,silhouette_std,repetitions`
pub fn write_summary_csv<W: Write>(config: &RunConfig, outcomes: &[EpisodeOutcome], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record([
        "method",
        "ablation",
        "subsample_points",
        "accuracy_mean",
        "accuracy_std",
        "silhouette_mean",
        "silhouette_std",
        "repetitions",
    ])?;
    for (method, (acc, sil)) in summarize_methods(outcomes) {
        out.write_record([
            method,
            config.ablation.to_string(),
            config.subsample_points.map_or_else(|| "all".into(), |k| k.to_string()),
            acc.mean.to_string(),
            acc.std.to_string(),
            sil.mean.to_string(),
            sil.std.to_string(),
            acc.n.to_string(),
        ])?;
    }
    out.flush().map_err(|e| Error::io("<summary>", e))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub epsilon: f64,
    pub accuracy: f64,
    pub silhouette: f64,
}

/// Runs the pretrained pipeline once per grid value, reporting mean query
/// accuracy and mean query silhouette across repetitions.
pub fn sweep_epsilon(manifest: &Manifest, config: &RunConfig, grid: &[f64]) -> Result<Vec<SweepRow>> {
    if grid.is_empty() {
        return Err(Error::Config("empty epsilon grid".into()));
    }
    grid.iter()
        .map(|&epsilon| {
            let cfg = RunConfig {
                epsilon,
                ..config.clone()
            };
            let outcomes = run_repetitions(manifest, &cfg)?;
            let (acc, sil) = summarize_methods(&outcomes)
                .remove(PRETRAINED)
                .expect("pretrained scores present");
            Ok(SweepRow {
                epsilon,
                accuracy: acc.mean,
                silhouette: sil.mean,
            })
        })
        .collect()
}

pub fn write_sweep_csv<W: Write>(rows: &[SweepRow], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["epsilon", "accuracy", "silhouette"])?;
    for r in rows {
        out.write_record([r.epsilon.to_string(), r.accuracy.to_string(), r.silhouette.to_string()])?;
    }
    out.flush().map_err(|e| Error::io("<sweep>", e))
}

pub fn version_string() -> String {
    format!(
        "coverssl {}-{}",
        env!("CARGO_PKG_VERSION"),
        option_env!("COVERSSL_GIT_DESCRIBE").unwrap_or("unknown")
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RunKind {
    Pipeline,
    SweepEpsilon,
}

/// Everything needed to regenerate a run's CSVs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub kind: RunKind,
    pub version: String,
    pub manifest: PathBuf,
    pub config: RunConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<Vec<f64>>,
    pub episode_seeds: Vec<EpisodeSeeds>,
}

impl RunRecord {
    pub fn new(kind: RunKind, manifest: &Path, config: &RunConfig, grid: Option<Vec<f64>>) -> Self {
        RunRecord {
            kind,
            version: version_string(),
            manifest: manifest.to_path_buf(),
            config: config.clone(),
            grid,
            episode_seeds: config.episode_seeds().into_iter().map(EpisodeSeeds::new).collect(),
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, serde_json::to_string_pretty(self)?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

pub const RESULTS_FILE: &str = "results.csv";
pub const SUMMARY_FILE: &str = "summary.csv";
pub const SWEEP_FILE: &str = "epsilon_sweep.csv";
pub const RECORD_FILE: &str = "run_record.json";

fn create(path: &Path) -> Result<fs::File> {
    fs::File::create(path).map_err(|e| Error::io(path, e))
}

/// Executes a recorded run and writes its CSVs plus the record into `out_dir`.
pub fn execute(record: &RunRecord, out_dir: &Path) -> Result<()> {
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let manifest = Manifest::load(&record.manifest)?;
    match record.kind {
        RunKind::Pipeline => {
            let outcomes = run_repetitions(&manifest, &record.config)?;
            write_results_csv(&record.config, &outcomes, create(&out_dir.join(RESULTS_FILE))?)?;
            write_summary_csv(&record.config, &outcomes, create(&out_dir.join(SUMMARY_FILE))?)?;
        }
        RunKind::SweepEpsilon => {
            let grid = record.grid.clone().unwrap_or_else(|| DEFAULT_EPSILON_GRID.to_vec());
            let rows = sweep_epsilon(&manifest, &record.config, &grid)?;
            write_sweep_csv(&rows, create(&out_dir.join(SWEEP_FILE))?)?;
        }
    }
    record.save(out_dir.join(RECORD_FILE))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::synthesize;

    fn tiny() -> RunConfig {
        RunConfig {
            way: 2,
            shot: 2,
            q_per_class: 2,
            repetitions: 2,
            epochs: 2,
            batch_clouds: 2,
            extractor_widths: vec![4, 8],
            branch_widths: vec![8],
            head_hidden: 8,
            probe_epochs: 20,
            ..RunConfig::default()
        }
    }

    #[test]
    fn defaults() {
        let c = RunConfig::default();
        assert_eq!((c.epsilon, c.max_depth, c.epochs, c.batch_clouds), (2.0, 3, 200, 8));
        assert_eq!(c.lr, 0.001);
        assert_eq!(c.ablation, Ablation::Both);
        assert_eq!(RunConfig { repetitions: 3, seed: 7, ..c }.episode_seeds(), vec![7, 8, 9]);
    }

    #[test]
    fn ablation_parsing() {
        for a in [Ablation::C, Ablation::R, Ablation::Both, Ablation::None] {
            assert_eq!(a.to_string().parse::<Ablation>().unwrap(), a);
            let json = serde_json::to_string(&a).unwrap();
            assert_eq!(json, format!("\"{a}\""));
        }
        assert!("Q".parse::<Ablation>().is_err());
    }

    #[test]
    fn summary_statistics() {
        let s = summarize(&[1.0, 2.0, 3.0]);
        assert_eq!((s.mean, s.std, s.n), (2.0, 1.0, 3));
        assert_eq!(summarize(&[4.0]).std, 0.0);
    }

    #[test]
    fn bad_config_is_a_config_error() {
        let c = RunConfig { epsilon: 1.0, ..tiny() };
        assert_eq!(c.validate().unwrap_err().exit_code(), 1);
    }

    #[test]
    fn pipeline_replays_bit_identically() {
        let data = tempfile::tempdir().unwrap();
        synthesize(data.path(), 3, 5, 48, 0.01, 4).unwrap();
        let manifest = data.path().join("manifest.json");
        let record = RunRecord::new(RunKind::Pipeline, &manifest, &tiny(), None);
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        execute(&record, a.path()).unwrap();
        let replay = RunRecord::load(a.path().join(RECORD_FILE)).unwrap();
        assert_eq!(replay, record);
        execute(&replay, b.path()).unwrap();
        for f in [RESULTS_FILE, SUMMARY_FILE] {
            assert_eq!(
                fs::read(a.path().join(f)).unwrap(),
                fs::read(b.path().join(f)).unwrap()
            );
        }
        let text = fs::read_to_string(a.path().join(RESULTS_FILE)).unwrap();
        assert_eq!(text.lines().count(), 1 + 2 * 2);
    }

    #[test]
    fn missing_cloud_reports_stage() {
        let data = tempfile::tempdir().unwrap();
        let m = synthesize(data.path(), 2, 4, 16, 0.0, 1).unwrap();
        fs::remove_file(data.path().join(&m.entries[0].path)).unwrap();
        fs::remove_file(data.path().join(&m.entries[4].path)).unwrap();
        let cfg = RunConfig { shot: 3, q_per_class: 1, ..tiny() };
        let err = run_episode(&m, &cfg, 0).unwrap_err();
        assert!(err.to_string().contains("load"), "{err}");
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn ablation_none_matches_random_init() {
        let data = tempfile::tempdir().unwrap();
        let m = synthesize(data.path(), 2, 4, 32, 0.01, 2).unwrap();
        let cfg = RunConfig { ablation: Ablation::None, ..tiny() };
        let o = run_episode(&m, &cfg, 3).unwrap();
        assert_eq!(o.scores[0].accuracy, o.scores[1].accuracy);
        assert!(o.final_loss.is_none());
    }
}
