//! Point-density study: the same episodes with clouds randomly subsampled to
//! different point counts before normalization.
//!
//!     cargo run --release --example density_sweep [repetitions] [epochs]

use coverssl::experiment::{run_repetitions, summarize_methods, RunConfig, PRETRAINED, RANDOM_INIT};
use coverssl::synth::synthesize;

fn main() -> coverssl::Result<()> {
    let mut args = std::env::args().skip(1);
    let repetitions: usize = args.next().map_or(2, |s| s.parse().expect("repetitions"));
    let epochs: usize = args.next().map_or(10, |s| s.parse().expect("epochs"));
    let dir = tempfile::tempdir().expect("temp dir");
    let manifest = synthesize(dir.path(), 6, 30, 1024, 0.01, 1)?;

    println!("points,pretrained_mean,pretrained_std,random_init_mean");
    for points in [128, 256, 512, 1024] {
        let config = RunConfig {
            subsample_points: Some(points),
            repetitions,
            epochs,
            ..RunConfig::default()
        };
        let summary = summarize_methods(&run_repetitions(&manifest, &config)?);
        let (acc, _) = summary[PRETRAINED];
        let (random, _) = summary[RANDOM_INIT];
        println!("{points},{:.4},{:.4},{:.4}", acc.mean, acc.std, random.mean);
    }
    Ok(())
}
