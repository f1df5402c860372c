//! Pretext-task ablation: C only, R only and both, each over repeated
//! episodes on the synthetic benchmark. Prints one summary row per setting.
//!
//!     cargo run --release --example ablation [repetitions] [epochs]

use coverssl::experiment::{run_repetitions, summarize_methods, Ablation, RunConfig, PRETRAINED, RANDOM_INIT};
use coverssl::synth::synthesize;

fn main() -> coverssl::Result<()> {
    let mut args = std::env::args().skip(1);
    let repetitions: usize = args.next().map_or(3, |s| s.parse().expect("repetitions"));
    let epochs: usize = args.next().map_or(20, |s| s.parse().expect("epochs"));
    let dir = tempfile::tempdir().expect("temp dir");
    let manifest = synthesize(dir.path(), 6, 30, 128, 0.01, 1)?;

    println!("setting,accuracy_mean,accuracy_std,random_init_mean");
    for ablation in [Ablation::C, Ablation::R, Ablation::Both] {
        let config = RunConfig { ablation, repetitions, epochs, ..RunConfig::default() };
        let summary = summarize_methods(&run_repetitions(&manifest, &config)?);
        let (acc, _) = summary[PRETRAINED];
        let (random, _) = summary[RANDOM_INIT];
        println!("{ablation},{:.4},{:.4},{:.4}", acc.mean, acc.std, random.mean);
    }
    Ok(())
}
