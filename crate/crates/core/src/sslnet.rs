//! Two-branch self-supervised network.
//!
//! A pointwise extractor maps every point to an embedding; each cover-tree
//! ball is summarized by the centroid of its members' embeddings. Ball
//! vectors then pass through one branch per task, ball pairs are joined by
//! concatenation (first-listed ball first) and a small head predicts either
//! the quadrant (task C) or the center distance (task R).

use std::collections::HashMap;
use std::io::Write;

use ndarray::{s, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::autonet::{
    cross_entropy, mse, AdamState, Affine, LayerSpec, Mode, Sequential, Tape, Tensor,
    TensorArchive, TensorEntry,
};
use crate::covertree::{CoverNode, CoverTree, NodeId};
use crate::episodes::Episode;
use crate::error::{Error, Result};
use crate::geometry::PointCloud;
use crate::pretext::{PretextRecord, Task};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SslConfig {
    pub input_dim: usize,
    pub extractor_widths: Vec<usize>,
    pub branch_widths: Vec<usize>,
    pub head_hidden: usize,
    pub slope: f64,
    pub keep_prob: f64,
    /// Bypass batchnorm for train-mode batches of fewer than four rows.
    pub small_batch_bn_off: bool,
    pub init_seed: u64,
}

impl Default for SslConfig {
    fn default() -> Self {
        SslConfig {
            input_dim: 3,
            extractor_widths: vec![32, 64, 128],
            branch_widths: vec![64, 128, 256],
            head_hidden: 256,
            slope: 0.2,
            keep_prob: 0.5,
            small_batch_bn_off: false,
            init_seed: 0,
        }
    }
}

impl SslConfig {
    pub fn embedding_width(&self) -> usize {
        *self.extractor_widths.last().expect("non-empty extractor")
    }

    pub fn ball_width(&self) -> usize {
        *self.branch_widths.last().expect("non-empty branch")
    }
}

fn mlp_specs(width_in: usize, widths: &[usize], slope: f64) -> Vec<LayerSpec> {
    let mut specs = Vec::with_capacity(widths.len() * 3);
    let mut w_in = width_in;
    for &w in widths {
        specs.push(LayerSpec::Affine { width_in: w_in, width_out: w });
        specs.push(LayerSpec::BatchNorm { width: w });
        specs.push(LayerSpec::LeakyRelu { slope });
        w_in = w;
    }
    specs
}

/// Head over ball pairs. The first affine layer acts on the concatenation
/// `[u_a, u_b]`; it is evaluated as `u_a W_top + u_b W_bottom` so each ball is
/// multiplied once no matter how many pairs it joins.
#[derive(Debug, Clone, PartialEq)]
pub struct PairHead {
    pub first: Affine,
    pub rest: Sequential,
}

struct PairTape {
    balls: Array2<f64>,
    pairs: Vec<(usize, usize)>,
    rest: Tape,
}

impl PairHead {
    fn new<R: Rng + ?Sized>(ball_width: usize, cfg: &SslConfig, outputs: usize, rng: &mut R) -> Result<Self> {
        let first = Affine::init(2 * ball_width, cfg.head_hidden, rng);
        let rest = Sequential::from_specs(
            &[
                LayerSpec::BatchNorm { width: cfg.head_hidden },
                LayerSpec::LeakyRelu { slope: cfg.slope },
                LayerSpec::Dropout { keep_prob: cfg.keep_prob },
                LayerSpec::Affine { width_in: cfg.head_hidden, width_out: outputs },
            ],
            rng,
        )?;
        Ok(PairHead { first, rest })
    }

    fn split(&self) -> (ArrayView2<'_, f64>, ArrayView2<'_, f64>) {
        let w = self.first.width_in() / 2;
        (
            self.first.weight.slice(s![..w, ..]),
            self.first.weight.slice(s![w.., ..]),
        )
    }

    fn joined(&self, balls: &Array2<f64>, pairs: &[(usize, usize)]) -> Array2<f64> {
        let (top, bottom) = self.split();
        let a = balls.dot(&top);
        let b = balls.dot(&bottom);
        let mut z = Array2::zeros((pairs.len(), self.first.width_out()));
        for (k, &(i, j)) in pairs.iter().enumerate() {
            let mut row = z.row_mut(k);
            row.assign(&a.row(i));
            row += &b.row(j);
            row += &self.first.bias;
        }
        z
    }

    fn forward<R: Rng + ?Sized>(
        &mut self,
        balls: Array2<f64>,
        pairs: Vec<(usize, usize)>,
        mode: Mode,
        rng: &mut R,
    ) -> Result<(Array2<f64>, PairTape)> {
        let z = self.joined(&balls, &pairs);
        let (out, rest) = self.rest.forward(z.view(), mode, rng)?;
        Ok((out, PairTape { balls, pairs, rest }))
    }

    fn predict(&self, balls: &Array2<f64>, pairs: &[(usize, usize)]) -> Result<Array2<f64>> {
        self.rest.predict(self.joined(balls, pairs).view())
    }

    fn backward(&self, tape: &PairTape, upstream: Array2<f64>) -> Result<(Vec<Vec<f64>>, Array2<f64>)> {
        let g = self.rest.backward(&tape.rest, upstream)?;
        let dz = g.input;
        let nb = tape.balls.nrows();
        let hidden = dz.ncols();
        let mut ga = Array2::<f64>::zeros((nb, hidden));
        let mut gb = Array2::<f64>::zeros((nb, hidden));
        for (k, &(i, j)) in tape.pairs.iter().enumerate() {
            let row = dz.row(k);
            let mut ra = ga.row_mut(i);
            ra += &row;
            let mut rb = gb.row_mut(j);
            rb += &row;
        }
        let (top, bottom) = self.split();
        let mut dw = tape.balls.t().dot(&ga).into_raw_vec_and_offset().0;
        dw.extend(tape.balls.t().dot(&gb).iter());
        let db = dz.sum_axis(Axis(0)).into_raw_vec_and_offset().0;
        let dballs = ga.dot(&top.t()) + gb.dot(&bottom.t());

        let mut params = vec![dw, db];
        params.extend(g.params);
        Ok((params, dballs))
    }

    fn params(&self) -> Vec<&[f64]> {
        let mut out = vec![
            self.first.weight.as_slice().expect("standard layout"),
            self.first.bias.as_slice().expect("standard layout"),
        ];
        out.extend(self.rest.params());
        out
    }

    fn params_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = vec![
            self.first.weight.as_slice_mut().expect("standard layout"),
            self.first.bias.as_slice_mut().expect("standard layout"),
        ];
        out.extend(self.rest.params_mut());
        out
    }

    fn to_entries(&self, prefix: &str) -> Vec<TensorEntry> {
        let mut out = vec![
            TensorEntry {
                name: format!("{prefix}.pair.weight"),
                layer_index: Some(0),
                kind: "affine".into(),
                tensor: Tensor::from(self.first.weight.clone()),
            },
            TensorEntry {
                name: format!("{prefix}.pair.bias"),
                layer_index: Some(0),
                kind: "affine".into(),
                tensor: Tensor::new(vec![self.first.bias.len()], self.first.bias.to_vec())
                    .expect("rank-1 shape"),
            },
        ];
        out.extend(self.rest.to_entries(&format!("{prefix}.rest")));
        out
    }

    fn load_entries(&mut self, prefix: &str, entries: &[TensorEntry]) -> Result<()> {
        for (name, dst) in [
            ("weight", self.first.weight.as_slice_mut().expect("standard layout")),
            ("bias", self.first.bias.as_slice_mut().expect("standard layout")),
        ] {
            let key = format!("{prefix}.pair.{name}");
            let e = entries
                .iter()
                .find(|e| e.name == key)
                .ok_or_else(|| Error::Data(format!("checkpoint lacks `{key}`")))?;
            if e.tensor.data().len() != dst.len() {
                return Err(Error::Data(format!("`{key}` has the wrong size")));
            }
            dst.copy_from_slice(e.tensor.data());
        }
        self.rest.load_entries(&format!("{prefix}.rest"), entries)
    }
}

/// Named parameter groups, in the order used by gradients and the optimizer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Component {
    Extractor,
    BranchC,
    HeadC,
    BranchR,
    HeadR,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SslModel {
    pub config: SslConfig,
    pub extractor: Sequential,
    pub branch_c: Sequential,
    pub head_c: PairHead,
    pub branch_r: Sequential,
    pub head_r: PairHead,
}

impl SslModel {
    pub fn new(config: SslConfig) -> Result<Self> {
        if config.extractor_widths.is_empty() || config.branch_widths.is_empty() {
            return Err(Error::Config("extractor and branch need at least one layer".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.init_seed);
        let mut extractor =
            Sequential::from_specs(&mlp_specs(config.input_dim, &config.extractor_widths, config.slope), &mut rng)?;
        let e = config.embedding_width();
        let mut branch_c = Sequential::from_specs(&mlp_specs(e, &config.branch_widths, config.slope), &mut rng)?;
        let mut head_c = PairHead::new(config.ball_width(), &config, 4, &mut rng)?;
        let mut branch_r = Sequential::from_specs(&mlp_specs(e, &config.branch_widths, config.slope), &mut rng)?;
        let mut head_r = PairHead::new(config.ball_width(), &config, 1, &mut rng)?;
        if config.small_batch_bn_off {
            for s in [
                &mut extractor,
                &mut branch_c,
                &mut head_c.rest,
                &mut branch_r,
                &mut head_r.rest,
            ] {
                s.set_batchnorm_min_batch(4);
            }
        }
        Ok(SslModel {
            config,
            extractor,
            branch_c,
            head_c,
            branch_r,
            head_r,
        })
    }

    pub fn params(&self) -> Vec<&[f64]> {
        self.component_params().into_iter().map(|(_, p)| p).collect()
    }

    pub fn component_params(&self) -> Vec<(Component, &[f64])> {
        let mut out = Vec::new();
        out.extend(self.extractor.params().into_iter().map(|p| (Component::Extractor, p)));
        out.extend(self.branch_c.params().into_iter().map(|p| (Component::BranchC, p)));
        out.extend(self.head_c.params().into_iter().map(|p| (Component::HeadC, p)));
        out.extend(self.branch_r.params().into_iter().map(|p| (Component::BranchR, p)));
        out.extend(self.head_r.params().into_iter().map(|p| (Component::HeadR, p)));
        out
    }

    pub fn components(&self) -> Vec<Component> {
        self.component_params().into_iter().map(|(c, _)| c).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = self.extractor.params_mut();
        out.extend(self.branch_c.params_mut());
        out.extend(self.head_c.params_mut());
        out.extend(self.branch_r.params_mut());
        out.extend(self.head_r.params_mut());
        out
    }

    fn stacked_points(&self, clouds: &[&PointCloud]) -> Result<(Array2<f64>, Vec<usize>)> {
        let d = self.config.input_dim;
        let total: usize = clouds.iter().map(|c| c.len()).sum();
        let mut x = Vec::with_capacity(total * d);
        let mut offsets = Vec::with_capacity(clouds.len());
        for c in clouds {
            if c.dim() != d {
                return Err(Error::Shape {
                    layer: 0,
                    expected: format!("{d}-dimensional points"),
                    got: format!("{}-dimensional cloud `{}`", c.dim(), c.id()),
                });
            }
            offsets.push(x.len() / d);
            x.extend_from_slice(c.coords());
        }
        let x = Array2::from_shape_vec((total, d), x).map_err(|e| Error::Internal(e.to_string()))?;
        Ok((x, offsets))
    }

    /// Per-point embeddings in eval mode, shape `(n, embedding_width)`.
    pub fn embed_points(&self, cloud: &PointCloud) -> Result<Tensor> {
        let (x, _) = self.stacked_points(&[cloud])?;
        Ok(Tensor::from(self.extractor.predict(x.view())?))
    }

    /// Joint forward pass over a group of clouds and their pretext records.
    pub fn pretext_forward<R: Rng + ?Sized>(
        &mut self,
        group: &[&TrainingCloud],
        tasks: TaskMask,
        mode: Mode,
        rng: &mut R,
    ) -> Result<PretextPass> {
        let clouds: Vec<&PointCloud> = group.iter().map(|g| &g.cloud).collect();
        let (x, offsets) = self.stacked_points(&clouds)?;
        let (emb, extractor_tape) = self.extractor.forward(x.view(), mode, rng)?;

        let mut pass = PretextPass {
            loss_c: 0.0,
            loss_r: 0.0,
            count_c: 0,
            count_r: 0,
            logits: Array2::zeros((0, 4)),
            preds: Array2::zeros((0, 1)),
            tape: PassTape {
                extractor: extractor_tape,
                emb_rows: emb.nrows(),
                c: None,
                r: None,
            },
        };

        for task in [Task::C, Task::R] {
            let enabled = match task {
                Task::C => tasks.c,
                Task::R => tasks.r,
            };
            if !enabled {
                continue;
            }
            let Some(batch) = BallBatch::collect(group, &offsets, task)? else {
                continue;
            };
            let balls = batch.pool(&emb);
            let (branch, head) = match task {
                Task::C => (&mut self.branch_c, &mut self.head_c),
                Task::R => (&mut self.branch_r, &mut self.head_r),
            };
            let (u, branch_tape) = branch.forward(balls.view(), mode, rng)?;
            let (out, head_tape) = head.forward(u, batch.pairs.clone(), mode, rng)?;
            let (loss, grad) = match task {
                Task::C => cross_entropy(out.view(), &batch.class_labels)?,
                Task::R => mse(out.view(), &batch.targets)?,
            };
            let task_tape = TaskTape {
                batch,
                branch: branch_tape,
                head: head_tape,
                grad,
            };
            match task {
                Task::C => {
                    pass.loss_c = loss;
                    pass.count_c = out.nrows();
                    pass.logits = out;
                    pass.tape.c = Some(task_tape);
                }
                Task::R => {
                    pass.loss_r = loss;
                    pass.count_r = out.nrows();
                    pass.preds = out;
                    pass.tape.r = Some(task_tape);
                }
            }
        }
        Ok(pass)
    }

    /// Gradient of `weight_c * L_C + weight_r * L_R`, aligned with [`SslModel::params`].
    /// A task with zero weight or no records contributes exact zeros.
    pub fn pretext_backward(&self, pass: &PretextPass, weight_c: f64, weight_r: f64) -> Result<Vec<Vec<f64>>> {
        let t = &pass.tape;
        let width = self.extractor.width_out();
        let mut demb = Array2::<f64>::zeros((t.emb_rows, width));

        let mut task_grads = |task: Task, weight: f64| -> Result<(Vec<Vec<f64>>, Vec<Vec<f64>>)> {
            let (branch, head, tape) = match task {
                Task::C => (&self.branch_c, &self.head_c, &t.c),
                Task::R => (&self.branch_r, &self.head_r, &t.r),
            };
            let zeros = || {
                (
                    branch.zero_grads(),
                    head.params().iter().map(|p| vec![0.0; p.len()]).collect(),
                )
            };
            let Some(tape) = tape else { return Ok(zeros()) };
            if weight == 0.0 {
                return Ok(zeros());
            }
            let (head_grads, du) = head.backward(&tape.head, &tape.grad * weight)?;
            let bg = branch.backward(&tape.branch, du)?;
            tape.batch.scatter(&bg.input, &mut demb);
            Ok((bg.params, head_grads))
        };
        let (branch_c, head_c) = task_grads(Task::C, weight_c)?;
        let (branch_r, head_r) = task_grads(Task::R, weight_r)?;

        let mut grads = self.extractor.backward(&t.extractor, demb)?.params;
        grads.extend(branch_c);
        grads.extend(head_c);
        grads.extend(branch_r);
        grads.extend(head_r);
        Ok(grads)
    }

    /// Eval-mode predictions for records of one cloud: quadrant logits for C
    /// records and distances for R records, in record order per task.
    pub fn predict_pretext(&self, sample: &TrainingCloud) -> Result<(Array2<f64>, Array2<f64>)> {
        let emb = self.embed_points(&sample.cloud)?;
        let emb: Array2<f64> = emb.try_into()?;
        let group = [sample];
        let mut out = (Array2::zeros((0, 4)), Array2::zeros((0, 1)));
        for task in [Task::C, Task::R] {
            let Some(batch) = BallBatch::collect(&group, &[0], task)? else { continue };
            let balls = batch.pool(&emb);
            let (branch, head) = match task {
                Task::C => (&self.branch_c, &self.head_c),
                Task::R => (&self.branch_r, &self.head_r),
            };
            let u = branch.predict(balls.view())?;
            let y = head.predict(&u, &batch.pairs)?;
            match task {
                Task::C => out.0 = y,
                Task::R => out.1 = y,
            }
        }
        Ok(out)
    }

    pub fn to_archive(&self) -> Result<TensorArchive> {
        let mut archive = TensorArchive::default();
        archive
            .meta
            .insert("config".into(), serde_json::to_value(&self.config)?);
        archive.entries.extend(self.extractor.to_entries("extractor"));
        archive.entries.extend(self.branch_c.to_entries("branch_c"));
        archive.entries.extend(self.head_c.to_entries("head_c"));
        archive.entries.extend(self.branch_r.to_entries("branch_r"));
        archive.entries.extend(self.head_r.to_entries("head_r"));
        Ok(archive)
    }

    pub fn from_archive(archive: &TensorArchive) -> Result<Self> {
        let config: SslConfig = serde_json::from_value(
            archive
                .meta
                .get("config")
                .cloned()
                .ok_or_else(|| Error::Data("checkpoint has no model config".into()))?,
        )?;
        let mut model = SslModel::new(config)?;
        let e = &archive.entries;
        model.extractor.load_entries("extractor", e)?;
        model.branch_c.load_entries("branch_c", e)?;
        model.head_c.load_entries("head_c", e)?;
        model.branch_r.load_entries("branch_r", e)?;
        model.head_r.load_entries("head_r", e)?;
        Ok(model)
    }
}

/// Centroid of the member rows of `embeddings` for one ball.
pub fn ball_vector(embeddings: &Tensor, node: &CoverNode) -> Result<Vec<f64>> {
    if node.member_points.is_empty() {
        return Err(Error::Internal(format!("ball {} has no members", node.id)));
    }
    let rows = embeddings.rows();
    let width = embeddings.shape().get(1).copied().unwrap_or(0);
    let mut acc = vec![0.0; width];
    for &m in &node.member_points {
        if m >= rows {
            return Err(Error::Argument(format!(
                "member {m} outside embeddings of {rows} rows"
            )));
        }
        for (a, v) in acc.iter_mut().zip(embeddings.row(m)) {
            *a += v;
        }
    }
    let n = node.member_points.len() as f64;
    acc.iter_mut().for_each(|a| *a /= n);
    Ok(acc)
}

/// Which pretext tasks run in a forward pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskMask {
    pub c: bool,
    pub r: bool,
}

impl TaskMask {
    pub const BOTH: TaskMask = TaskMask { c: true, r: true };
}

/// A support cloud with its tree and pretext records.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingCloud {
    pub cloud: PointCloud,
    pub tree: CoverTree,
    pub records: Vec<PretextRecord>,
}

/// Unique balls touched by one task's records across a group of clouds.
struct BallBatch {
    /// Global member rows (cloud offset applied) for each ball.
    members: Vec<Vec<usize>>,
    pairs: Vec<(usize, usize)>,
    class_labels: Vec<usize>,
    targets: Vec<f64>,
}

impl BallBatch {
    fn collect(group: &[&TrainingCloud], offsets: &[usize], task: Task) -> Result<Option<Self>> {
        let mut index: HashMap<(usize, NodeId), usize> = HashMap::new();
        let mut batch = BallBatch {
            members: Vec::new(),
            pairs: Vec::new(),
            class_labels: Vec::new(),
            targets: Vec::new(),
        };
        for (ci, sample) in group.iter().enumerate() {
            for rec in sample.records.iter().filter(|r| r.task == task) {
                if rec.cloud != sample.cloud.id() {
                    return Err(Error::Data(format!(
                        "record for `{}` attached to cloud `{}`",
                        rec.cloud,
                        sample.cloud.id()
                    )));
                }
                let mut row = |id: NodeId| -> Result<usize> {
                    if let Some(&r) = index.get(&(ci, id)) {
                        return Ok(r);
                    }
                    let node = sample.tree.node(id).ok_or_else(|| {
                        Error::Data(format!("record references unknown node {id} in `{}`", rec.cloud))
                    })?;
                    if node.member_points.is_empty() {
                        return Err(Error::Internal(format!("ball {id} has no members")));
                    }
                    let r = batch.members.len();
                    batch
                        .members
                        .push(node.member_points.iter().map(|m| m + offsets[ci]).collect());
                    index.insert((ci, id), r);
                    Ok(r)
                };
                let pair = (row(rec.a)?, row(rec.b)?);
                batch.pairs.push(pair);
                match task {
                    Task::C => {
                        let q = rec.label;
                        if !(1.0..=4.0).contains(&q) || q.fract() != 0.0 {
                            return Err(Error::Data(format!("quadrant label {q} outside 1..=4")));
                        }
                        batch.class_labels.push(q as usize - 1);
                    }
                    Task::R => batch.targets.push(rec.label),
                }
            }
        }
        Ok((!batch.pairs.is_empty()).then_some(batch))
    }

    fn pool(&self, emb: &Array2<f64>) -> Array2<f64> {
        let mut out = Array2::zeros((self.members.len(), emb.ncols()));
        for (b, members) in self.members.iter().enumerate() {
            let mut row = out.row_mut(b);
            for &m in members {
                row += &emb.row(m);
            }
            row /= members.len() as f64;
        }
        out
    }

    fn scatter(&self, dballs: &Array2<f64>, demb: &mut Array2<f64>) {
        for (b, members) in self.members.iter().enumerate() {
            let g = &dballs.row(b) / members.len() as f64;
            for &m in members {
                let mut row = demb.row_mut(m);
                row += &g;
            }
        }
    }
}

struct TaskTape {
    batch: BallBatch,
    branch: Tape,
    head: PairTape,
    grad: Array2<f64>,
}

struct PassTape {
    extractor: Tape,
    emb_rows: usize,
    c: Option<TaskTape>,
    r: Option<TaskTape>,
}

/// Losses and outputs of one pretext forward pass. A task without records
/// reports a loss of zero with a count of zero.
pub struct PretextPass {
    pub loss_c: f64,
    pub loss_r: f64,
    pub count_c: usize,
    pub count_r: usize,
    pub logits: Array2<f64>,
    pub preds: Array2<f64>,
    tape: PassTape,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PretrainConfig {
    pub epochs: usize,
    pub batch_clouds: usize,
    pub lr: f64,
    /// Weight of the regression loss, `L = L_C + lambda * L_R`.
    pub lambda: f64,
    /// When false, task C is masked out entirely.
    pub train_c: bool,
    pub seed: u64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        PretrainConfig {
            epochs: 200,
            batch_clouds: 8,
            lr: 0.001,
            lambda: 1.0,
            train_c: true,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLoss {
    pub epoch: usize,
    pub loss_c: f64,
    pub loss_r: f64,
    pub combined: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub curve: Vec<EpochLoss>,
    pub optimizer: AdamState,
}

impl TrainReport {
    /// CSV with header `epoch,loss_C,loss_R,combined`.
    pub fn write_curve_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["epoch", "loss_C", "loss_R", "combined"])?;
        for e in &self.curve {
            out.write_record([
                e.epoch.to_string(),
                e.loss_c.to_string(),
                e.loss_r.to_string(),
                e.combined.to_string(),
            ])?;
        }
        out.flush().map_err(|e| Error::io("<loss curve>", e))?;
        Ok(())
    }
}

/// Trains on the support clouds of `episode`: each epoch visits the clouds in
/// a seeded shuffled order, `batch_clouds` at a time, with one Adam step per
/// group on the combined loss of all the group's records.
pub fn pretrain(
    model: &mut SslModel,
    episode: &Episode,
    data: &[TrainingCloud],
    config: &PretrainConfig,
) -> Result<TrainReport> {
    if config.batch_clouds == 0 {
        return Err(Error::Config("batch_clouds must be positive".into()));
    }
    let mut total_records = 0;
    for sample in data {
        episode.ensure_support(sample.cloud.id())?;
        for rec in &sample.records {
            episode.ensure_support(&rec.cloud)?;
        }
        total_records += sample.records.len();
    }
    if total_records == 0 {
        return Err(Error::Config("no pretext records to train on".into()));
    }

    let weight_c = if config.train_c { 1.0 } else { 0.0 };
    let tasks = TaskMask {
        c: config.train_c,
        r: true,
    };
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x9e37_79b9_7f4a_7c15);
    let mut adam = AdamState::new(config.lr);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut curve = Vec::with_capacity(config.epochs);

    for epoch in 1..=config.epochs {
        order.shuffle(&mut shuffle_rng);
        let (mut sum_c, mut sum_r, mut steps) = (0.0, 0.0, 0usize);
        for chunk in order.chunks(config.batch_clouds) {
            let group: Vec<&TrainingCloud> = chunk.iter().map(|&i| &data[i]).collect();
            if group.iter().all(|g| g.records.is_empty()) {
                continue;
            }
            let pass = model.pretext_forward(&group, tasks, Mode::Train, &mut dropout_rng)?;
            let grads = model.pretext_backward(&pass, weight_c, config.lambda)?;
            adam.step(model.params_mut(), &grads)?;
            sum_c += pass.loss_c;
            sum_r += pass.loss_r;
            steps += 1;
        }
        let steps = steps.max(1) as f64;
        let (loss_c, loss_r) = (sum_c / steps, sum_r / steps);
        curve.push(EpochLoss {
            epoch,
            loss_c,
            loss_r,
            combined: weight_c * loss_c + config.lambda * loss_r,
        });
    }
    Ok(TrainReport {
        curve,
        optimizer: adam,
    })
}

/// Eval-mode embeddings for each cloud, keyed by cloud id.
pub fn export_embeddings(model: &SslModel, clouds: &[PointCloud]) -> Result<TensorArchive> {
    let mut archive = TensorArchive::default();
    archive.meta.insert(
        "embedding_width".into(),
        Value::from(model.config.embedding_width()),
    );
    for cloud in clouds {
        archive.entries.push(TensorEntry {
            name: cloud.id().to_string(),
            layer_index: None,
            kind: "embedding".into(),
            tensor: model.embed_points(cloud)?,
        });
    }
    Ok(archive)
}
