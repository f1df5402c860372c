//! One full few-shot episode: pretrain, then compare a linear probe and a
//! k-NN classifier on pretrained and untrained descriptors.
//!
//!     cargo run --release --example probe [epochs]

use coverssl::episodes::sample_episode;
use coverssl::experiment::{describe, load_split, training_set, EpisodeSeeds, RunConfig};
use coverssl::probe::{evaluate, silhouette, train_linear_probe, Knn, ProbeConfig};
use coverssl::synth::synthesize;
use coverssl::{PretrainConfig, SslModel};

fn main() -> coverssl::Result<()> {
    let epochs: usize = std::env::args().nth(1).map_or(30, |s| s.parse().expect("epochs"));
    let dir = tempfile::tempdir().expect("temp dir");
    let manifest = synthesize(dir.path(), 6, 30, 128, 0.01, 1)?;

    let config = RunConfig { epochs, ..RunConfig::default() };
    let seeds = EpisodeSeeds::new(3);
    let episode = sample_episode(&manifest, config.way, config.shot, config.q_per_class, seeds.episode)?;
    let support = load_split(&manifest, &episode.support, &config, seeds.subsample)?;
    let query = load_split(&manifest, &episode.query, &config, seeds.subsample)?;

    let untrained = SslModel::new(config.model_config(seeds.init))?;
    let mut trained = untrained.clone();
    let data = training_set(&episode, &support, &config)?;
    let train = PretrainConfig { epochs, seed: seeds.train, ..PretrainConfig::default() };
    coverssl::sslnet::pretrain(&mut trained, &episode, &data, &train)?;

    for (name, model) in [("pretrained", &trained), ("random-init", &untrained)] {
        let s = describe(model, &support, config.pool)?;
        let q = describe(model, &query, config.pool)?;
        let probe = train_linear_probe(&s, &ProbeConfig { seed: seeds.probe, ..ProbeConfig::default() })?;
        let linear = evaluate(&probe, &q)?;
        let knn = evaluate(&Knn { k: 3, support: s }, &q)?;
        let vectors: Vec<Vec<f64>> = q.iter().map(|e| e.vector.clone()).collect();
        let labels: Vec<i64> = q.iter().map(|e| e.class_label).collect();
        println!(
            "{name:>12}: linear {:.3}  3-nn {:.3}  silhouette {:.3}",
            linear.accuracy,
            knn.accuracy,
            silhouette(&vectors, &labels)?
        );
        println!("{:>12}  confusion (rows = true class {:?}): {:?}", "", linear.labels, linear.confusion);
    }
    Ok(())
}
