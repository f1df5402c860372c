//! Train briefly on a handful of shapes, then write feature-space distances
//! from one anchor point of a held-out cube as `x,y,z,distance` CSV.
//!
//!     cargo run --release --example heatmap > cube_heatmap.csv

use coverssl::episodes::{Episode, EpisodeItem};
use coverssl::probe::{feature_heatmap, write_heatmap_csv};
use coverssl::sslnet::{pretrain, TrainingCloud};
use coverssl::synth::{generate_shape, Primitive};
use coverssl::{build_cover_tree, normalize_unit_cube, PretextDataset, PretrainConfig, SslConfig, SslModel};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> coverssl::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let mut data = Vec::new();
    for (i, shape) in Primitive::ALL.iter().enumerate() {
        let id = format!("{}-{i}", shape.name());
        let (cloud, _) = generate_shape(*shape, 256, 0.01, &id, &mut rng)?;
        let cloud = normalize_unit_cube(&cloud);
        let tree = build_cover_tree(&cloud, 2.0, 3)?;
        let records = PretextDataset::generate(&tree, &cloud).records();
        data.push(TrainingCloud { cloud, tree, records });
    }
    let episode = Episode {
        way: 1,
        shot: data.len(),
        q_per_class: 0,
        seed: 21,
        classes: vec![0],
        support: data
            .iter()
            .map(|d| EpisodeItem { cloud_id: d.cloud.id().to_string(), class: 0 })
            .collect(),
        query: vec![],
    };
    let mut model = SslModel::new(SslConfig { init_seed: 21, ..SslConfig::default() })?;
    pretrain(&mut model, &episode, &data, &PretrainConfig { epochs: 30, seed: 21, ..PretrainConfig::default() })?;

    let (cube, _) = generate_shape(Primitive::Cube, 1024, 0.0, "held-out-cube", &mut rng)?;
    let cube = normalize_unit_cube(&cube);
    let distances = feature_heatmap(&model.embed_points(&cube)?, 0)?;
    write_heatmap_csv(&cube, &distances, std::io::stdout().lock())
}
