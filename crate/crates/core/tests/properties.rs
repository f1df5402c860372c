use std::collections::BTreeMap;

use coverssl::covertree::{build_cover_tree, validate_invariants};
use coverssl::geometry::{distance, normalize_unit_cube, subsample, PointCloud};
use coverssl::pretext::{gen_quadrant_pairs, gen_regression_pairs, quadrant_of};
use coverssl::probe::{evaluate, miou, pool_cloud, silhouette, CloudEmbedding, Knn, PoolMode};
use coverssl::autonet::Tensor;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn cloud_strategy(max_n: usize) -> impl Strategy<Value = PointCloud> {
    prop::collection::vec(prop::array::uniform3(-5.0f64..5.0), 1..max_n)
        .prop_map(|pts| PointCloud::from_points("p", &pts).unwrap())
}

/// Points on a 1/16 grid so translations by integers stay exact.
fn grid_cloud_strategy(max_n: usize) -> impl Strategy<Value = PointCloud> {
    prop::collection::vec(prop::array::uniform3(0i32..64), 2..max_n).prop_map(|pts| {
        let pts: Vec<[f64; 3]> = pts
            .iter()
            .map(|p| [p[0] as f64 / 16.0, p[1] as f64 / 16.0, p[2] as f64 / 16.0])
            .collect();
        PointCloud::from_points("g", &pts).unwrap()
    })
}

fn ratio_close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-9 * a.abs().max(b.abs()).max(1.0)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn normalize_is_idempotent(c in cloud_strategy(60)) {
        let once = normalize_unit_cube(&c);
        let twice = normalize_unit_cube(&once);
        for (a, b) in once.coords().iter().zip(twice.coords()) {
            prop_assert!((a - b).abs() < 1e-12);
        }
        prop_assert!(once.coords().iter().all(|v| (-1e-12..=1.0 + 1e-12).contains(v)));
    }

    #[test]
    fn normalize_preserves_distance_ratios(c in cloud_strategy(30)) {
        let n = normalize_unit_cube(&c);
        prop_assume!(c.len() >= 3 && c.diameter() > 1e-6);
        let d0 = distance(c.point(0), c.point(1));
        let e0 = distance(n.point(0), n.point(1));
        prop_assume!(d0 > 1e-6);
        for i in 0..c.len() {
            for j in 0..c.len() {
                let d = distance(c.point(i), c.point(j));
                let e = distance(n.point(i), n.point(j));
                prop_assert!(ratio_close(d / d0, e / e0));
            }
        }
    }

    #[test]
    fn subsample_draws_without_replacement(c in cloud_strategy(80), k in 1usize..80, seed in any::<u64>()) {
        let k = k.min(c.len());
        let s = subsample(&c, k, seed).unwrap();
        prop_assert_eq!(s.len(), k);
        let mut pool: Vec<Vec<u64>> = c.points().map(|p| p.iter().map(|v| v.to_bits()).collect()).collect();
        for p in s.points() {
            let key: Vec<u64> = p.iter().map(|v| v.to_bits()).collect();
            let pos = pool.iter().position(|q| *q == key);
            prop_assert!(pos.is_some());
            pool.swap_remove(pos.unwrap());
        }
        prop_assert_eq!(subsample(&c, k, seed).unwrap(), s);
    }

    #[test]
    fn trees_satisfy_invariants(c in cloud_strategy(120), eps in 1.1f64..3.0, depth in 0usize..5) {
        let t = build_cover_tree(&c, eps, depth).unwrap();
        let report = validate_invariants(&t, &c);
        prop_assert!(report.is_valid(), "{:?}", report.violations);
    }

    #[test]
    fn labels_match_their_oracles(c in cloud_strategy(150), eps in 1.2f64..3.0) {
        let t = build_cover_tree(&c, eps, 3).unwrap();
        for p in gen_regression_pairs(&t, &c) {
            let a = c.point(t.nodes[p.node_a].center_index);
            let b = c.point(t.nodes[p.node_b].center_index);
            let direct = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
            prop_assert!((p.distance - direct).abs() <= 1e-12);
            prop_assert!(p.node_a < p.node_b);
            prop_assert_eq!(t.nodes[p.node_a].level, p.level);
            prop_assert_eq!(t.nodes[p.node_b].level, p.level);
        }
        for q in gen_quadrant_pairs(&t, &c) {
            let parent = &t.nodes[q.parent];
            let child = &t.nodes[q.child];
            prop_assert_eq!(child.parent, Some(parent.id));
            prop_assert_eq!(child.level, parent.level - 1);
            let dx = c.point(child.center_index)[0] - c.point(parent.center_index)[0];
            let dy = c.point(child.center_index)[1] - c.point(parent.center_index)[1];
            let expect = match (dx < 0.0, dy < 0.0) {
                (false, false) => 1,
                (true, false) => 2,
                (true, true) => 3,
                (false, true) => 4,
            };
            prop_assert_eq!(q.quadrant, expect);
        }
    }

    #[test]
    fn translation_leaves_trees_and_labels_unchanged(
        c in grid_cloud_strategy(80),
        shift in prop::array::uniform3(-8i32..8),
    ) {
        let offset = [shift[0] as f64, shift[1] as f64, shift[2] as f64];
        let moved = c.translated(&offset);
        let a = build_cover_tree(&c, 2.0, 3).unwrap();
        let b = build_cover_tree(&moved, 2.0, 3).unwrap();
        prop_assert_eq!(&a.nodes, &b.nodes);
        prop_assert_eq!(gen_quadrant_pairs(&a, &c), gen_quadrant_pairs(&b, &moved));
        prop_assert_eq!(gen_regression_pairs(&a, &c), gen_regression_pairs(&b, &moved));
    }

    #[test]
    fn silhouette_ignores_isometries(
        pts in prop::collection::vec(prop::array::uniform3(-3.0f64..3.0), 4..40),
        labels in prop::collection::vec(0i64..4, 40),
        angle in 0.0f64..std::f64::consts::TAU,
        shift in prop::array::uniform3(-10.0f64..10.0),
    ) {
        let labels = &labels[..pts.len()];
        prop_assume!(labels.iter().any(|&l| l != labels[0]));
        let (s, c) = angle.sin_cos();
        let vectors: Vec<Vec<f64>> = pts.iter().map(|p| p.to_vec()).collect();
        let moved: Vec<Vec<f64>> = pts
            .iter()
            .map(|p| vec![c * p[0] - s * p[1] + shift[0], s * p[0] + c * p[1] + shift[1], p[2] + shift[2]])
            .collect();
        let a = silhouette(&vectors, labels).unwrap();
        let b = silhouette(&moved, labels).unwrap();
        prop_assert!((a - b).abs() < 1e-9);
        prop_assert!((-1.0..=1.0).contains(&a));
    }

    #[test]
    fn miou_ignores_part_renaming(
        truth in prop::collection::vec(0i64..5, 1..60),
        pred in prop::collection::vec(0i64..5, 60),
        perm in Just([0i64, 1, 2, 3, 4]).prop_shuffle(),
    ) {
        let pred = &pred[..truth.len()];
        let parts = [0, 1, 2, 3, 4];
        let rename = |v: &[i64]| v.iter().map(|&x| perm[x as usize] + 10).collect::<Vec<_>>();
        let renamed_parts: Vec<i64> = parts.iter().map(|&p| perm[p as usize] + 10).collect();
        let a = miou(pred, &truth, &parts).unwrap();
        let b = miou(&rename(pred), &rename(&truth), &renamed_parts).unwrap();
        prop_assert!((a - b).abs() < 1e-12);
        prop_assert!((0.0..=1.0).contains(&a));
    }

    #[test]
    fn accuracy_and_confusion_are_consistent(
        support in prop::collection::vec((prop::array::uniform2(-1.0f64..1.0), 0i64..4), 1..20),
        query in prop::collection::vec((prop::array::uniform2(-1.0f64..1.0), 0i64..4), 1..40),
        k in 1usize..5,
    ) {
        let wrap = |v: &[([f64; 2], i64)]| -> Vec<CloudEmbedding> {
            v.iter().enumerate().map(|(i, (x, l))| CloudEmbedding {
                cloud_id: i.to_string(),
                vector: x.to_vec(),
                class_label: *l,
            }).collect()
        };
        let knn = Knn { k, support: wrap(&support) };
        let q = wrap(&query);
        let eval = evaluate(&knn, &q).unwrap();
        prop_assert!((0.0..=1.0).contains(&eval.accuracy));
        let mut per_class: BTreeMap<i64, usize> = BTreeMap::new();
        for e in &q {
            *per_class.entry(e.class_label).or_default() += 1;
        }
        for (row, label) in eval.confusion.iter().zip(&eval.labels) {
            prop_assert_eq!(row.iter().sum::<usize>(), per_class.get(label).copied().unwrap_or(0));
        }
    }

    #[test]
    fn pooling_matches_direct_sums(rows in prop::collection::vec(prop::collection::vec(-4.0f64..4.0, 6), 1..30)) {
        let n = rows.len();
        let t = Tensor::new(vec![n, 6], rows.concat()).unwrap();
        let pooled = pool_cloud(&t, PoolMode::MeanMax).unwrap();
        for d in 0..6 {
            let mean = rows.iter().map(|r| r[d]).sum::<f64>() / n as f64;
            let max = rows.iter().map(|r| r[d]).fold(f64::NEG_INFINITY, f64::max);
            prop_assert!((pooled[d] - mean).abs() < 1e-12);
            prop_assert_eq!(pooled[6 + d], max);
        }
    }
}

#[test]
fn child_quadrants_are_uniform_on_random_clouds() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut counts = [0usize; 4];
    for i in 0..200 {
        let pts: Vec<[f64; 3]> = (0..256).map(|_| [rng.gen(), rng.gen(), rng.gen()]).collect();
        let c = PointCloud::from_points(format!("u{i}"), &pts).unwrap();
        let t = build_cover_tree(&c, 2.0, 3).unwrap();
        for q in gen_quadrant_pairs(&t, &c) {
            let parent = &t.nodes[q.parent];
            let child = &t.nodes[q.child];
            // A center kept from the level above sits at offset zero.
            if parent.center_index != child.center_index {
                counts[usize::from(q.quadrant) - 1] += 1;
            }
        }
    }
    let total: usize = counts.iter().sum();
    let expected = total as f64 / 4.0;
    let chi2: f64 = counts
        .iter()
        .map(|&o| (o as f64 - expected).powi(2) / expected)
        .sum();
    assert!(total > 1000, "{total}");
    assert!(chi2 < 16.27, "counts {counts:?}, chi2 {chi2}"); // 3 dof, p = 0.001
}

#[test]
fn quadrant_oracle_agrees_on_axes() {
    assert_eq!(quadrant_of(&[0.0, 0.0], &[0.0, 0.0]), 1);
    assert_eq!(quadrant_of(&[1.0, 1.0], &[1.0, 0.0]), 4);
}
