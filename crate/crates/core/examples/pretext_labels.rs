//! Generate both pretext label sets for one cloud and print a summary plus
//! the first few JSON-lines records.
//!
//!     cargo run --release --example pretext_labels

use coverssl::pretext::write_jsonl;
use coverssl::synth::{generate_shape, Primitive};
use coverssl::{build_cover_tree, normalize_unit_cube, PretextDataset, Task};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> coverssl::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let (cloud, _) = generate_shape(Primitive::Cone, 512, 0.01, "cone", &mut rng)?;
    let cloud = normalize_unit_cube(&cloud);
    let tree = build_cover_tree(&cloud, 2.0, 3)?;
    let labels = PretextDataset::generate(&tree, &cloud);

    let mut quadrants = [0usize; 4];
    for q in &labels.quadrant_pairs {
        quadrants[usize::from(q.quadrant) - 1] += 1;
    }
    println!("levels used: {:?}", labels.levels_used);
    println!("quadrant records: {} (per quadrant {quadrants:?})", labels.quadrant_pairs.len());
    println!("distance records: {}", labels.regression_pairs.len());

    let records = labels.records();
    let sample: Vec<_> = records
        .iter()
        .filter(|r| r.task == Task::C)
        .take(3)
        .chain(records.iter().filter(|r| r.task == Task::R).take(3))
        .cloned()
        .collect();
    write_jsonl(&sample, std::io::stdout().lock())
}
