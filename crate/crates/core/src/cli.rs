//! The `coverssl` command line. Exit codes: 0 success, 1 configuration or
//! usage error, 2 data error.

use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::Value;

use crate::autonet::TensorArchive;
use crate::covertree::{build_cover_tree, validate_invariants, CoverTree};
use crate::episodes::{sample_episode, Episode, Manifest};
use crate::error::{Error, Result, StageExt};
use crate::experiment::{
    self, execute, load_split, training_set, version_string, Ablation, EpisodeSeeds,
    RunConfig, RunKind, RunRecord, DEFAULT_EPSILON_GRID,
};
use crate::geometry::{load_cloud, normalize_unit_cube};
use crate::pretext::{write_jsonl, PretextDataset};
use crate::probe::{
    evaluate, feature_heatmap, pool_cloud, train_linear_probe, write_heatmap_csv, CloudEmbedding,
    PoolMode, ProbeConfig,
};
use crate::sslnet::{export_embeddings, pretrain, PretrainConfig, SslModel};
use crate::synth::synthesize;

pub const OUTPUT_DIR_ENV: &str = "COVERSSL_OUTPUT_DIR";

#[derive(Debug, Parser)]
#[command(name = "coverssl", version, about = "Cover-tree self-supervised pretraining for point clouds")]
pub struct Cli {
    /// Directory for every artifact the command writes.
    #[arg(long, global = true, env = OUTPUT_DIR_ENV, default_value = "coverssl-out")]
    pub out_dir: PathBuf,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate the procedural shape dataset and its manifest.
    Synthesize(SynthArgs),
    /// Build a cover-tree for one cloud and write it as JSON.
    BuildTree(TreeArgs),
    /// Write the pretext records of one cloud as JSON lines.
    GenLabels(TreeArgs),
    /// Sample an episode and pretrain on its support set.
    Pretrain(EpisodeArgs),
    /// Export per-point embeddings of an episode's clouds.
    Embed(EmbedArgs),
    /// Fit a linear probe on support embeddings and score the query set.
    Probe(ProbeArgs),
    /// Repeated episodes, pretrained against random-init.
    Pipeline(RunArgs),
    /// The pipeline once per base of the expansion constant.
    SweepEpsilon(SweepArgs),
    /// Feature-space distances from one anchor point, as CSV.
    Heatmap(HeatmapArgs),
}

#[derive(Debug, Args, Serialize)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 6)]
    pub classes: usize,
    #[arg(long, default_value_t = 40)]
    pub per_class: usize,
    #[arg(long, default_value_t = 1024)]
    pub points: usize,
    #[arg(long, default_value_t = 0.01)]
    pub noise: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args, Serialize)]
pub struct TreeArgs {
    /// Input `.xyz` cloud.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, default_value_t = crate::covertree::DEFAULT_EPSILON)]
    pub epsilon: f64,
    #[arg(long, default_value_t = crate::covertree::DEFAULT_MAX_DEPTH)]
    pub max_depth: usize,
    /// Skip rescaling into the unit cube.
    #[arg(long)]
    pub raw: bool,
}

/// Flags that overlay a [`RunConfig`]; unset flags keep the file or
/// default value.
#[derive(Debug, Args, Serialize, Default)]
pub struct ConfigArgs {
    /// JSON file with a full or partial run configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub epsilon: Option<f64>,
    #[arg(long)]
    pub max_depth: Option<usize>,
    #[arg(long)]
    pub way: Option<usize>,
    #[arg(long)]
    pub shot: Option<usize>,
    #[arg(long)]
    pub q_per_class: Option<usize>,
    #[arg(long)]
    pub repetitions: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_clouds: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// C, R, C+R or none.
    #[arg(long)]
    pub ablation: Option<String>,
    #[arg(long)]
    pub subsample_points: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    pub extractor_widths: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',')]
    pub branch_widths: Option<Vec<usize>>,
    #[arg(long)]
    pub head_hidden: Option<usize>,
    #[arg(long)]
    pub keep_prob: Option<f64>,
    #[arg(long)]
    pub probe_epochs: Option<usize>,
    #[arg(long)]
    pub probe_lr: Option<f64>,
    /// mean or meanmax.
    #[arg(long)]
    pub pool: Option<String>,
}

impl ConfigArgs {
    pub fn resolve(&self) -> Result<RunConfig> {
        let mut c = match &self.config {
            Some(path) => {
                let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
                serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?
            }
            None => RunConfig::default(),
        };
        macro_rules! overlay {
            ($($f:ident),*) => { $( if let Some(v) = &self.$f { c.$f = v.clone(); } )* };
        }
        overlay!(
            epsilon, max_depth, way, shot, q_per_class, repetitions, epochs, batch_clouds, lr,
            lambda, seed, extractor_widths, branch_widths, head_hidden, keep_prob, probe_epochs,
            probe_lr
        );
        if let Some(k) = self.subsample_points {
            c.subsample_points = Some(k);
        }
        if let Some(a) = &self.ablation {
            c.ablation = a.parse::<Ablation>()?;
        }
        if let Some(p) = &self.pool {
            c.pool = parse_pool(p)?;
        }
        c.validate()?;
        Ok(c)
    }
}

fn parse_pool(s: &str) -> Result<PoolMode> {
    match s {
        "mean" => Ok(PoolMode::Mean),
        "meanmax" => Ok(PoolMode::MeanMax),
        _ => Err(Error::Config(format!("unknown pooling `{s}` (expected mean or meanmax)"))),
    }
}

#[derive(Debug, Args, Serialize)]
pub struct EpisodeArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[command(flatten)]
    pub run: ConfigArgs,
}

#[derive(Debug, Args, Serialize)]
pub struct EmbedArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub manifest: PathBuf,
    /// Episode JSON written by `pretrain`.
    #[arg(long)]
    pub episode: PathBuf,
    #[arg(long)]
    pub subsample_points: Option<usize>,
}

#[derive(Debug, Args, Serialize)]
pub struct ProbeArgs {
    /// Embedding archive written by `embed`.
    #[arg(long)]
    pub embeddings: PathBuf,
    #[arg(long)]
    pub episode: PathBuf,
    #[arg(long, default_value = "meanmax")]
    pub pool: String,
    #[arg(long, default_value_t = 300)]
    pub epochs: usize,
    #[arg(long, default_value_t = 0.01)]
    pub lr: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args, Serialize)]
pub struct RunArgs {
    #[arg(long, required_unless_present = "replay")]
    pub manifest: Option<PathBuf>,
    /// Re-run a `run_record.json` exactly.
    #[arg(long, conflicts_with = "manifest")]
    pub replay: Option<PathBuf>,
    #[command(flatten)]
    pub run: ConfigArgs,
}

#[derive(Debug, Args, Serialize)]
pub struct SweepArgs {
    #[command(flatten)]
    pub base: RunArgs,
    /// Comma-separated epsilon values.
    #[arg(long, value_delimiter = ',')]
    pub grid: Option<Vec<f64>>,
}

#[derive(Debug, Args, Serialize)]
pub struct HeatmapArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub anchor: usize,
}

#[derive(Serialize)]
struct CommandRecord<'a, T: Serialize> {
    version: String,
    command: &'a str,
    args: &'a T,
}

fn prepare_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)?).map_err(|e| Error::io(path, e))
}

fn create(path: &Path) -> Result<BufWriter<fs::File>> {
    Ok(BufWriter::new(fs::File::create(path).map_err(|e| Error::io(path, e))?))
}

fn record<T: Serialize>(out: &Path, command: &str, args: &T) -> Result<()> {
    write_json(
        &out.join(experiment::RECORD_FILE),
        &CommandRecord {
            version: version_string(),
            command,
            args,
        },
    )
}

fn load_tree_input(args: &TreeArgs) -> Result<(crate::PointCloud, CoverTree)> {
    let cloud = load_cloud(&args.input)?;
    let cloud = if args.raw { cloud } else { normalize_unit_cube(&cloud) };
    let tree = build_cover_tree(&cloud, args.epsilon, args.max_depth)?;
    Ok((cloud, tree))
}

fn file_stem(path: &Path) -> String {
    path.file_stem()
        .map_or_else(|| "cloud".into(), |s| s.to_string_lossy().into_owned())
}

fn read_episode(path: &Path) -> Result<Episode> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Episode::from_json(&text)
}

/// Runs one parsed command and returns a one-line summary for stdout.
pub fn run(cli: &Cli) -> Result<String> {
    let out = cli.out_dir.as_path();
    match &cli.command {
        Command::Synthesize(a) => {
            let m = synthesize(out, a.classes, a.per_class, a.points, a.noise, a.seed)?;
            record(out, "synthesize", a)?;
            Ok(format!(
                "wrote {} clouds and {}",
                m.entries.len(),
                out.join("manifest.json").display()
            ))
        }
        Command::BuildTree(a) => {
            let (cloud, tree) = load_tree_input(a)?;
            let report = validate_invariants(&tree, &cloud);
            if !report.is_valid() {
                return Err(Error::Internal(format!(
                    "tree failed validation: {}",
                    report.violations[0]
                )));
            }
            prepare_dir(out)?;
            let path = out.join(format!("{}.tree.json", file_stem(&a.input)));
            tree.save(&path)?;
            record(out, "build-tree", a)?;
            Ok(format!(
                "{} nodes over levels {}..={} -> {}",
                tree.nodes.len(),
                tree.bottom_level(),
                tree.top_level,
                path.display()
            ))
        }
        Command::GenLabels(a) => {
            let (cloud, tree) = load_tree_input(a)?;
            let ds = PretextDataset::generate(&tree, &cloud);
            prepare_dir(out)?;
            let path = out.join(format!("{}.labels.jsonl", file_stem(&a.input)));
            write_jsonl(&ds.records(), create(&path)?)?;
            record(out, "gen-labels", a)?;
            Ok(format!(
                "{} quadrant and {} distance records -> {}",
                ds.quadrant_pairs.len(),
                ds.regression_pairs.len(),
                path.display()
            ))
        }
        Command::Pretrain(a) => cmd_pretrain(a, out),
        Command::Embed(a) => {
            let model = SslModel::from_archive(&TensorArchive::load(&a.checkpoint)?)?;
            let manifest = Manifest::load(&a.manifest)?;
            let episode = read_episode(&a.episode)?;
            let cfg = RunConfig {
                subsample_points: a.subsample_points,
                ..RunConfig::default()
            };
            let seed = EpisodeSeeds::new(episode.seed).subsample;
            let mut clouds = load_split(&manifest, &episode.support, &cfg, seed)?;
            clouds.extend(load_split(&manifest, &episode.query, &cfg, seed)?);
            prepare_dir(out)?;
            let mut archive = export_embeddings(&model, &clouds).stage("embed")?;
            let classes: serde_json::Map<String, Value> = clouds
                .iter()
                .map(|c| (c.id().to_string(), Value::from(c.class_label().unwrap_or_default())))
                .collect();
            archive.meta.insert("classes".into(), Value::Object(classes));
            let path = out.join("embeddings.tensors");
            archive.save(&path)?;
            record(out, "embed", a)?;
            Ok(format!("{} clouds embedded -> {}", clouds.len(), path.display()))
        }
        Command::Probe(a) => cmd_probe(a, out),
        Command::Pipeline(a) => {
            let rec = run_record(a, RunKind::Pipeline, None)?;
            execute(&rec, out)?;
            let summary = fs::read_to_string(out.join(experiment::SUMMARY_FILE))
                .map_err(|e| Error::io(out, e))?;
            Ok(summary.trim_end().to_string())
        }
        Command::SweepEpsilon(a) => {
            let grid = a.grid.clone().unwrap_or_else(|| DEFAULT_EPSILON_GRID.to_vec());
            if let Some(bad) = grid.iter().find(|e| !(**e > 1.0)) {
                return Err(Error::Config(format!("grid values must exceed 1, got {bad}")));
            }
            let rec = run_record(&a.base, RunKind::SweepEpsilon, Some(grid))?;
            execute(&rec, out)?;
            let sweep = fs::read_to_string(out.join(experiment::SWEEP_FILE))
                .map_err(|e| Error::io(out, e))?;
            Ok(sweep.trim_end().to_string())
        }
        Command::Heatmap(a) => {
            let model = SslModel::from_archive(&TensorArchive::load(&a.checkpoint)?)?;
            let cloud = normalize_unit_cube(&load_cloud(&a.input)?);
            let dists = feature_heatmap(&model.embed_points(&cloud)?, a.anchor)?;
            prepare_dir(out)?;
            let path = out.join(format!("{}.heatmap.csv", file_stem(&a.input)));
            write_heatmap_csv(&cloud, &dists, create(&path)?)?;
            record(out, "heatmap", a)?;
            Ok(format!("{} distances -> {}", dists.len(), path.display()))
        }
    }
}

fn run_record(a: &RunArgs, kind: RunKind, grid: Option<Vec<f64>>) -> Result<RunRecord> {
    match (&a.replay, &a.manifest) {
        (Some(path), _) => {
            let rec = RunRecord::load(path)?;
            if rec.kind != kind {
                return Err(Error::Config(format!(
                    "{} records a different command",
                    path.display()
                )));
            }
            Ok(rec)
        }
        (None, Some(manifest)) => Ok(RunRecord::new(kind, manifest, &a.run.resolve()?, grid)),
        (None, None) => Err(Error::Config("either --manifest or --replay is required".into())),
    }
}

fn cmd_pretrain(a: &EpisodeArgs, out: &Path) -> Result<String> {
    let cfg = a.run.resolve()?;
    let manifest = Manifest::load(&a.manifest)?;
    let seeds = EpisodeSeeds::new(cfg.seed);
    let episode = sample_episode(&manifest, cfg.way, cfg.shot, cfg.q_per_class, seeds.episode)
        .stage("episode")?;
    let support = load_split(&manifest, &episode.support, &cfg, seeds.subsample).stage("load")?;
    let data = training_set(&episode, &support, &cfg)?;
    let mut model = SslModel::new(cfg.model_config(seeds.init))?;
    let train = PretrainConfig {
        epochs: cfg.epochs,
        batch_clouds: cfg.batch_clouds,
        lr: cfg.lr,
        lambda: cfg.lambda,
        train_c: !matches!(cfg.ablation, Ablation::R | Ablation::None),
        seed: seeds.train,
    };
    let report = pretrain(&mut model, &episode, &data, &train).stage("pretrain")?;

    prepare_dir(out)?;
    model.to_archive()?.save(out.join("model.tensors"))?;
    report.write_curve_csv(create(&out.join("loss_curve.csv"))?)?;
    fs::write(out.join("episode.json"), episode.to_json()?).map_err(|e| Error::io(out, e))?;
    write_json(
        &out.join(experiment::RECORD_FILE),
        &serde_json::json!({
            "version": version_string(),
            "command": "pretrain",
            "manifest": a.manifest,
            "config": cfg,
            "episode_seeds": [seeds],
        }),
    )?;
    let last = report.curve.last().map_or(f64::NAN, |e| e.combined);
    Ok(format!(
        "{} epochs on {} support clouds, final loss {last:.6} -> {}",
        cfg.epochs,
        episode.support.len(),
        out.join("model.tensors").display()
    ))
}

fn cmd_probe(a: &ProbeArgs, out: &Path) -> Result<String> {
    let archive = TensorArchive::load(&a.embeddings)?;
    let episode = read_episode(&a.episode)?;
    let pool = parse_pool(&a.pool)?;
    let gather = |items: &[crate::episodes::EpisodeItem]| -> Result<Vec<CloudEmbedding>> {
        items
            .iter()
            .map(|item| {
                let entry = archive.get(&item.cloud_id).ok_or_else(|| {
                    Error::Data(format!("no embedding for `{}`", item.cloud_id))
                })?;
                Ok(CloudEmbedding {
                    cloud_id: item.cloud_id.clone(),
                    vector: pool_cloud(&entry.tensor, pool)?,
                    class_label: item.class,
                })
            })
            .collect()
    };
    let support = gather(&episode.support)?;
    let query = gather(&episode.query)?;
    let cfg = ProbeConfig {
        epochs: a.epochs,
        lr: a.lr,
        seed: a.seed,
        standardize: true,
    };
    let probe = train_linear_probe(&support, &cfg).stage("probe")?;
    let eval = evaluate(&probe, &query)?;
    prepare_dir(out)?;
    write_json(&out.join("evaluation.json"), &eval)?;
    record(out, "probe", a)?;
    Ok(format!("accuracy {:.4} on {} query clouds", eval.accuracy, query.len()))
}

/// Parses the process arguments, runs the command and exits with its code.
pub fn main() -> ! {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            std::process::exit(code);
        }
    };
    match run(&cli) {
        Ok(msg) => {
            println!("{msg}");
            std::process::exit(0)
        }
        Err(e) => {
            eprintln!("error: {e}");
            std::process::exit(e.exit_code())
        }
    }
}
