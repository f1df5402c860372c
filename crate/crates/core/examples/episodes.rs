//! Synthesize the shape dataset and draw a few-shot episode from its manifest.
//!
//!     cargo run --release --example episodes [way] [shot]

use coverssl::sample_episode;
use coverssl::synth::synthesize;

fn main() -> coverssl::Result<()> {
    let mut args = std::env::args().skip(1);
    let way: usize = args.next().map_or(5, |s| s.parse().expect("way"));
    let shot: usize = args.next().map_or(10, |s| s.parse().expect("shot"));

    let dir = tempfile::tempdir().expect("temp dir");
    let manifest = synthesize(dir.path(), 6, 40, 256, 0.01, 1)?;
    println!("{} clouds in {} classes", manifest.entries.len(), manifest.by_class().len());

    let episode = sample_episode(&manifest, way, shot, 20, 42)?;
    println!("classes {:?}", episode.classes);
    println!("support {} clouds, query {} clouds", episode.support.len(), episode.query.len());
    for item in episode.support.iter().take(way) {
        println!("  support {} (class {})", item.cloud_id, item.class);
    }
    Ok(())
}
