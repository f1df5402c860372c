//! Build a cover-tree over a synthetic torus, check its invariants and print
//! the ball hierarchy level by level.
//!
//!     cargo run --release --example build_tree [epsilon] [points]

use coverssl::covertree::{estimate_expansion_constant, radius};
use coverssl::synth::{generate_shape, Primitive};
use coverssl::{build_cover_tree, normalize_unit_cube, validate_invariants};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> coverssl::Result<()> {
    let mut args = std::env::args().skip(1);
    let epsilon: f64 = args.next().map_or(2.0, |s| s.parse().expect("epsilon"));
    let points: usize = args.next().map_or(1024, |s| s.parse().expect("points"));

    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (cloud, _) = generate_shape(Primitive::Torus, points, 0.005, "torus", &mut rng)?;
    let cloud = normalize_unit_cube(&cloud);
    let tree = build_cover_tree(&cloud, epsilon, 3)?;

    println!("diameter {:.4}, top level {}", cloud.diameter(), tree.top_level);
    for (level, nodes) in tree.all_levels() {
        let sizes: Vec<usize> = nodes.iter().map(|n| n.member_points.len()).collect();
        println!(
            "level {level:>3}  radius {:.4}  balls {:>4}  largest ball {:>5} points",
            radius(epsilon, level),
            nodes.len(),
            sizes.iter().max().unwrap()
        );
    }
    let report = validate_invariants(&tree, &cloud);
    println!("invariant violations: {}", report.violations.len());
    println!(
        "estimated expansion constant: {:.2}",
        estimate_expansion_constant(&cloud, 64, 1)?
    );
    Ok(())
}
