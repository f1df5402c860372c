//! Sweep the base of the expansion constant and report probe accuracy and
//! query-set silhouette per value, as CSV on stdout.
//!
//!     cargo run --release --example epsilon_sweep [repetitions] [epochs]

use coverssl::experiment::{sweep_epsilon, write_sweep_csv, RunConfig, DEFAULT_EPSILON_GRID};
use coverssl::synth::synthesize;

fn main() -> coverssl::Result<()> {
    let mut args = std::env::args().skip(1);
    let repetitions: usize = args.next().map_or(2, |s| s.parse().expect("repetitions"));
    let epochs: usize = args.next().map_or(10, |s| s.parse().expect("epochs"));
    let dir = tempfile::tempdir().expect("temp dir");
    let manifest = synthesize(dir.path(), 6, 30, 128, 0.01, 1)?;

    let config = RunConfig { repetitions, epochs, ..RunConfig::default() };
    let rows = sweep_epsilon(&manifest, &config, &DEFAULT_EPSILON_GRID)?;
    write_sweep_csv(&rows, std::io::stdout().lock())?;
    let best = rows
        .iter()
        .max_by(|a, b| a.accuracy.total_cmp(&b.accuracy))
        .expect("non-empty grid");
    eprintln!("best accuracy at epsilon = {}", best.epsilon);
    Ok(())
}
