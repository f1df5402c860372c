//! Downstream evaluation of point embeddings: cloud pooling, a linear softmax
//! probe, k-nearest-neighbour classification, silhouette, part mIoU and
//! feature-distance heatmaps.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;

use ndarray::{Array1, Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autonet::{cross_entropy, AdamState, Tensor};
use crate::error::{Error, Result};
use crate::geometry::{distance, PointCloud};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PoolMode {
    #[default]
    Mean,
    /// Mean followed by per-dimension max.
    MeanMax,
}

/// Pools per-point embeddings `(n, w)` into one cloud descriptor.
pub fn pool_cloud(embeddings: &Tensor, mode: PoolMode) -> Result<Vec<f64>> {
    let view = embeddings.view2()?;
    if view.nrows() == 0 {
        return Err(Error::Argument("cannot pool an empty embedding set".into()));
    }
    let mut out = view.mean_axis(Axis(0)).expect("rows > 0").to_vec();
    if mode == PoolMode::MeanMax {
        out.extend(
            view.fold_axis(Axis(0), f64::NEG_INFINITY, |&a, &b| a.max(b))
                .iter(),
        );
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CloudEmbedding {
    pub cloud_id: String,
    pub vector: Vec<f64>,
    pub class_label: i64,
}

pub trait Classifier {
    fn predict(&self, vector: &[f64]) -> i64;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeConfig {
    pub epochs: usize,
    pub lr: f64,
    pub seed: u64,
    /// Z-score features with support-set statistics before fitting.
    pub standardize: bool,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        ProbeConfig {
            epochs: 300,
            lr: 0.01,
            seed: 0,
            standardize: true,
        }
    }
}

/// Softmax regression over frozen descriptors.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearProbe {
    pub classes: Vec<i64>,
    pub shift: Vec<f64>,
    pub scale: Vec<f64>,
    /// `(dim, classes)`
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl LinearProbe {
    fn features(&self, v: &[f64]) -> Vec<f64> {
        v.iter()
            .zip(&self.shift)
            .zip(&self.scale)
            .map(|((x, m), s)| (x - m) * s)
            .collect()
    }

    pub fn logits(&self, vector: &[f64]) -> Vec<f64> {
        let x = Array1::from(self.features(vector));
        (x.dot(&self.weight) + &self.bias).to_vec()
    }
}

impl Classifier for LinearProbe {
    fn predict(&self, vector: &[f64]) -> i64 {
        let logits = self.logits(vector);
        let mut best = 0;
        for (k, &v) in logits.iter().enumerate() {
            if v > logits[best] {
                best = k;
            }
        }
        self.classes[best]
    }
}

/// Full-batch softmax regression trained with Adam on the support set only.
pub fn train_linear_probe(support: &[CloudEmbedding], config: &ProbeConfig) -> Result<LinearProbe> {
    let classes: Vec<i64> = support
        .iter()
        .map(|e| e.class_label)
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    if classes.len() < 2 {
        return Err(Error::Argument(format!(
            "a probe needs at least two support classes, got {}",
            classes.len()
        )));
    }
    let dim = support[0].vector.len();
    if support.iter().any(|e| e.vector.len() != dim) {
        return Err(Error::Argument("support vectors differ in length".into()));
    }
    let n = support.len();

    let mut shift = vec![0.0; dim];
    let mut scale = vec![1.0; dim];
    if config.standardize {
        for k in 0..dim {
            let mean = support.iter().map(|e| e.vector[k]).sum::<f64>() / n as f64;
            let var = support.iter().map(|e| (e.vector[k] - mean).powi(2)).sum::<f64>() / n as f64;
            shift[k] = mean;
            scale[k] = if var > 1e-24 { 1.0 / var.sqrt() } else { 0.0 };
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let bound = 1.0 / (dim.max(1) as f64).sqrt();
    let mut probe = LinearProbe {
        weight: Array2::from_shape_fn((dim, classes.len()), |_| rng.gen_range(-bound..=bound) * 0.01),
        bias: Array1::zeros(classes.len()),
        classes,
        shift,
        scale,
    };
    let x = Array2::from_shape_fn((n, dim), |(i, k)| {
        (support[i].vector[k] - probe.shift[k]) * probe.scale[k]
    });
    let labels: Vec<usize> = support
        .iter()
        .map(|e| probe.classes.binary_search(&e.class_label).expect("class present"))
        .collect();

    let mut adam = AdamState::new(config.lr);
    for _ in 0..config.epochs {
        let logits = x.dot(&probe.weight) + &probe.bias;
        let (_, g) = cross_entropy(logits.view(), &labels)?;
        let dw = x.t().dot(&g);
        let db = g.sum_axis(Axis(0));
        adam.step(
            vec![
                probe.weight.as_slice_mut().expect("standard layout"),
                probe.bias.as_slice_mut().expect("standard layout"),
            ],
            &[dw.into_raw_vec_and_offset().0, db.into_raw_vec_and_offset().0],
        )?;
    }
    Ok(probe)
}

/// k-nearest-neighbour vote under Euclidean distance. Ties in the vote go to
/// the class whose nearest member is closest.
#[derive(Debug, Clone, PartialEq)]
pub struct Knn {
    pub k: usize,
    pub support: Vec<CloudEmbedding>,
}

impl Classifier for Knn {
    fn predict(&self, vector: &[f64]) -> i64 {
        let mut ranked: Vec<(f64, usize)> = self
            .support
            .iter()
            .enumerate()
            .map(|(i, e)| (distance(vector, &e.vector), i))
            .collect();
        ranked.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let mut votes: BTreeMap<i64, (usize, usize)> = BTreeMap::new();
        for (rank, &(_, i)) in ranked.iter().take(self.k.max(1)).enumerate() {
            let v = votes.entry(self.support[i].class_label).or_insert((0, rank));
            v.0 += 1;
        }
        votes
            .into_iter()
            .max_by(|a, b| a.1 .0.cmp(&b.1 .0).then(b.1 .1.cmp(&a.1 .1)))
            .map(|(c, _)| c)
            .expect("non-empty support")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub accuracy: f64,
    /// Row and column label order for `confusion`.
    pub labels: Vec<i64>,
    /// `confusion[true][predicted]` counts.
    pub confusion: Vec<Vec<usize>>,
}

pub fn evaluate<C: Classifier + ?Sized>(classifier: &C, query: &[CloudEmbedding]) -> Result<Evaluation> {
    if query.is_empty() {
        return Err(Error::Argument("empty query set".into()));
    }
    let predictions: Vec<i64> = query.iter().map(|q| classifier.predict(&q.vector)).collect();
    let labels: Vec<i64> = query
        .iter()
        .map(|q| q.class_label)
        .chain(predictions.iter().copied())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let pos = |c: i64| labels.binary_search(&c).expect("label present");
    let mut confusion = vec![vec![0usize; labels.len()]; labels.len()];
    let mut correct = 0;
    for (q, &p) in query.iter().zip(&predictions) {
        confusion[pos(q.class_label)][pos(p)] += 1;
        correct += usize::from(q.class_label == p);
    }
    Ok(Evaluation {
        accuracy: correct as f64 / query.len() as f64,
        labels,
        confusion,
    })
}

/// Mean IoU over the parts in `parts` that occur in either labelling.
/// Parts absent from both are skipped; if none occur the score is 1.
pub fn miou(pred: &[i64], truth: &[i64], parts: &[i64]) -> Result<f64> {
    if pred.len() != truth.len() {
        return Err(Error::Argument(format!(
            "{} predictions for {} ground-truth labels",
            pred.len(),
            truth.len()
        )));
    }
    let mut total = 0.0;
    let mut counted = 0usize;
    for &part in parts.iter().collect::<BTreeSet<_>>() {
        let mut inter = 0usize;
        let mut union = 0usize;
        for (&p, &t) in pred.iter().zip(truth) {
            let (a, b) = (p == part, t == part);
            inter += usize::from(a && b);
            union += usize::from(a || b);
        }
        if union > 0 {
            total += inter as f64 / union as f64;
            counted += 1;
        }
    }
    Ok(if counted == 0 { 1.0 } else { total / counted as f64 })
}

/// Mean silhouette of labelled vectors. Samples whose class has a single
/// member score 0, as do samples with `a = b = 0`.
pub fn silhouette(vectors: &[Vec<f64>], labels: &[i64]) -> Result<f64> {
    if vectors.len() != labels.len() {
        return Err(Error::Argument("vectors and labels differ in length".into()));
    }
    let classes: Vec<i64> = labels.iter().copied().collect::<BTreeSet<_>>().into_iter().collect();
    if classes.len() < 2 {
        return Err(Error::Argument(format!(
            "silhouette needs at least two classes, got {}",
            classes.len()
        )));
    }
    let n = vectors.len();
    let class_of: Vec<usize> = labels
        .iter()
        .map(|l| classes.binary_search(l).expect("class present"))
        .collect();
    let mut sizes = vec![0usize; classes.len()];
    for &c in &class_of {
        sizes[c] += 1;
    }

    let mut total = 0.0;
    let mut sums = vec![0.0; classes.len()];
    for i in 0..n {
        sums.iter_mut().for_each(|s| *s = 0.0);
        for j in 0..n {
            if i != j {
                sums[class_of[j]] += distance(&vectors[i], &vectors[j]);
            }
        }
        let own = class_of[i];
        if sizes[own] < 2 {
            continue;
        }
        let a = sums[own] / (sizes[own] - 1) as f64;
        let b = (0..classes.len())
            .filter(|&c| c != own)
            .map(|c| sums[c] / sizes[c] as f64)
            .fold(f64::INFINITY, f64::min);
        let m = a.max(b);
        if m > 0.0 {
            total += (b - a) / m;
        }
    }
    Ok(total / n as f64)
}

/// Euclidean distance in embedding space from `anchor`'s row to every row.
pub fn feature_heatmap(embeddings: &Tensor, anchor: usize) -> Result<Vec<f64>> {
    let view = embeddings.view2()?;
    if anchor >= view.nrows() {
        return Err(Error::Argument(format!(
            "anchor {anchor} outside {} points",
            view.nrows()
        )));
    }
    let a = embeddings.row(anchor);
    Ok((0..view.nrows())
        .map(|i| distance(a, embeddings.row(i)))
        .collect())
}

/// CSV `x,y,z,distance`, one row per point. Missing coordinates are written as 0.
pub fn write_heatmap_csv<W: Write>(cloud: &PointCloud, distances: &[f64], w: W) -> Result<()> {
    if distances.len() != cloud.len() {
        return Err(Error::Argument("one distance per point required".into()));
    }
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["x", "y", "z", "distance"])?;
    for (p, d) in cloud.points().zip(distances) {
        let coord = |k: usize| p.get(k).copied().unwrap_or(0.0).to_string();
        out.write_record([coord(0), coord(1), coord(2), d.to_string()])?;
    }
    out.flush().map_err(|e| Error::io("<heatmap>", e))?;
    Ok(())
}
