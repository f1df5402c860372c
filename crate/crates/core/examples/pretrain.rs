//! Pretrain on one episode's support set and print the loss curve as CSV.
//!
//!     cargo run --release --example pretrain [epochs]

use coverssl::episodes::sample_episode;
use coverssl::experiment::{load_split, training_set, EpisodeSeeds, RunConfig};
use coverssl::synth::synthesize;
use coverssl::{PretrainConfig, SslModel};

fn main() -> coverssl::Result<()> {
    let epochs: usize = std::env::args().nth(1).map_or(20, |s| s.parse().expect("epochs"));
    let dir = tempfile::tempdir().expect("temp dir");
    let manifest = synthesize(dir.path(), 6, 30, 128, 0.01, 1)?;

    let config = RunConfig { epochs, ..RunConfig::default() };
    let seeds = EpisodeSeeds::new(0);
    let episode = sample_episode(&manifest, config.way, config.shot, config.q_per_class, seeds.episode)?;
    let support = load_split(&manifest, &episode.support, &config, seeds.subsample)?;
    let data = training_set(&episode, &support, &config)?;
    let records: usize = data.iter().map(|d| d.records.len()).sum();
    eprintln!("{} support clouds, {records} pretext records", data.len());

    let mut model = SslModel::new(config.model_config(seeds.init))?;
    let train = PretrainConfig { epochs, seed: seeds.train, ..PretrainConfig::default() };
    let report = coverssl::sslnet::pretrain(&mut model, &episode, &data, &train)?;
    report.write_curve_csv(std::io::stdout().lock())
}
