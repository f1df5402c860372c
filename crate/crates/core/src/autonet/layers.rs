use std::sync::atomic::{AtomicU64, Ordering};

use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::archive::TensorEntry;
use super::tensor::Tensor;
use crate::error::{Error, Result};

pub const DEFAULT_BN_EPS: f64 = 1e-5;
pub const DEFAULT_BN_MOMENTUM: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Layer description. Every layer acts on the rows of a `(items, width)`
/// matrix independently (apart from batch statistics), so weights are shared
/// across points or balls.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum LayerSpec {
    Affine { width_in: usize, width_out: usize },
    BatchNorm { width: usize },
    LeakyRelu { slope: f64 },
    Dropout { keep_prob: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Affine {
    /// `(width_in, width_out)`
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Affine {
    /// Uniform fan-in initialization, `U(-1/sqrt(in), 1/sqrt(in))`.
    pub fn init<R: Rng + ?Sized>(width_in: usize, width_out: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (width_in as f64).sqrt();
        let weight = Array2::from_shape_fn((width_in, width_out), |_| rng.gen_range(-bound..=bound));
        let bias = Array1::from_shape_fn(width_out, |_| rng.gen_range(-bound..=bound));
        Affine { weight, bias }
    }

    pub fn width_in(&self) -> usize {
        self.weight.nrows()
    }

    pub fn width_out(&self) -> usize {
        self.weight.ncols()
    }

    pub fn apply(&self, x: &ArrayView2<f64>) -> Array2<f64> {
        let mut y = x.dot(&self.weight);
        y += &self.bias;
        y
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm {
    pub gamma: Array1<f64>,
    pub beta: Array1<f64>,
    pub running_mean: Array1<f64>,
    pub running_var: Array1<f64>,
    pub momentum: f64,
    pub eps: f64,
    /// Train-mode batches with fewer rows pass through unchanged.
    pub min_batch: usize,
}

impl BatchNorm {
    pub fn new(width: usize) -> Self {
        BatchNorm {
            gamma: Array1::ones(width),
            beta: Array1::zeros(width),
            running_mean: Array1::zeros(width),
            running_var: Array1::ones(width),
            momentum: DEFAULT_BN_MOMENTUM,
            eps: DEFAULT_BN_EPS,
            min_batch: 1,
        }
    }

    pub fn width(&self) -> usize {
        self.gamma.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Layer {
    Affine(Affine),
    BatchNorm(BatchNorm),
    LeakyRelu { slope: f64 },
    Dropout { keep_prob: f64 },
}

impl Layer {
    fn kind(&self) -> &'static str {
        match self {
            Layer::Affine(_) => "affine",
            Layer::BatchNorm(_) => "batchnorm",
            Layer::LeakyRelu { .. } => "leakyrelu",
            Layer::Dropout { .. } => "dropout",
        }
    }
}

enum Cache {
    Affine { input: Array2<f64> },
    BatchNorm { xhat: Array2<f64>, inv_std: Array1<f64>, batch_stats: bool },
    Skip,
    LeakyRelu { input: Array2<f64> },
    Dropout { mask: Array2<f64> },
}

/// Activations recorded by one forward pass, valid until the stack's
/// parameters change.
pub struct Tape {
    owner: u64,
    version: u64,
    input_shape: (usize, usize),
    caches: Vec<Cache>,
}

impl Tape {
    pub fn rows(&self) -> usize {
        self.input_shape.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StackGrads {
    /// Aligned with [`Sequential::params`].
    pub params: Vec<Vec<f64>>,
    pub input: Array2<f64>,
}

static NEXT_UID: AtomicU64 = AtomicU64::new(1);

#[derive(Debug)]
pub struct Sequential {
    layers: Vec<Layer>,
    width_in: usize,
    uid: u64,
    version: u64,
}

/// Compares layers only; tape ownership is not part of a stack's value.
impl PartialEq for Sequential {
    fn eq(&self, other: &Self) -> bool {
        self.width_in == other.width_in && self.layers == other.layers
    }
}

impl Clone for Sequential {
    fn clone(&self) -> Self {
        Sequential {
            layers: self.layers.clone(),
            width_in: self.width_in,
            uid: NEXT_UID.fetch_add(1, Ordering::Relaxed),
            version: 0,
        }
    }
}

impl Sequential {
    pub fn from_specs<R: Rng + ?Sized>(specs: &[LayerSpec], rng: &mut R) -> Result<Self> {
        let mut width: Option<usize> = None;
        let mut width_in = None;
        let mut layers = Vec::with_capacity(specs.len());
        for (i, spec) in specs.iter().enumerate() {
            let check = |w: usize, width: Option<usize>| -> Result<()> {
                match width {
                    Some(cur) if cur != w => Err(Error::Shape {
                        layer: i,
                        expected: format!("width {cur}"),
                        got: format!("width {w}"),
                    }),
                    _ => Ok(()),
                }
            };
            match *spec {
                LayerSpec::Affine { width_in: a, width_out: b } => {
                    check(a, width)?;
                    width_in.get_or_insert(a);
                    width = Some(b);
                    layers.push(Layer::Affine(Affine::init(a, b, rng)));
                }
                LayerSpec::BatchNorm { width: w } => {
                    check(w, width)?;
                    width_in.get_or_insert(w);
                    width = Some(w);
                    layers.push(Layer::BatchNorm(BatchNorm::new(w)));
                }
                LayerSpec::LeakyRelu { slope } => {
                    if !(slope >= 0.0) {
                        return Err(Error::Argument(format!("negative slope {slope}")));
                    }
                    layers.push(Layer::LeakyRelu { slope });
                }
                LayerSpec::Dropout { keep_prob } => {
                    if !(keep_prob > 0.0 && keep_prob <= 1.0) {
                        return Err(Error::Argument(format!(
                            "keep probability {keep_prob} outside (0, 1]"
                        )));
                    }
                    layers.push(Layer::Dropout { keep_prob });
                }
            }
        }
        let width_in = width_in.ok_or_else(|| {
            Error::Argument("a layer stack needs at least one affine or batchnorm layer".into())
        })?;
        Ok(Sequential {
            layers,
            width_in,
            uid: NEXT_UID.fetch_add(1, Ordering::Relaxed),
            version: 0,
        })
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    /// Mutable layer access; invalidates outstanding tapes.
    pub fn layers_mut(&mut self) -> &mut [Layer] {
        self.version += 1;
        &mut self.layers
    }

    pub fn width_in(&self) -> usize {
        self.width_in
    }

    pub fn width_out(&self) -> usize {
        self.layers
            .iter()
            .rev()
            .find_map(|l| match l {
                Layer::Affine(a) => Some(a.width_out()),
                Layer::BatchNorm(b) => Some(b.width()),
                _ => None,
            })
            .unwrap_or(self.width_in)
    }

    /// Sets the small-batch threshold on every batchnorm layer.
    pub fn set_batchnorm_min_batch(&mut self, min_batch: usize) {
        for layer in &mut self.layers {
            if let Layer::BatchNorm(bn) = layer {
                bn.min_batch = min_batch;
            }
        }
    }

    pub fn params(&self) -> Vec<&[f64]> {
        let mut out = Vec::new();
        for layer in &self.layers {
            match layer {
                Layer::Affine(a) => {
                    out.push(a.weight.as_slice().expect("standard layout"));
                    out.push(a.bias.as_slice().expect("standard layout"));
                }
                Layer::BatchNorm(b) => {
                    out.push(b.gamma.as_slice().expect("standard layout"));
                    out.push(b.beta.as_slice().expect("standard layout"));
                }
                _ => {}
            }
        }
        out
    }

    /// Mutable parameter slices; invalidates outstanding tapes.
    pub fn params_mut(&mut self) -> Vec<&mut [f64]> {
        self.version += 1;
        let mut out = Vec::new();
        for layer in &mut self.layers {
            match layer {
                Layer::Affine(a) => {
                    out.push(a.weight.as_slice_mut().expect("standard layout"));
                    out.push(a.bias.as_slice_mut().expect("standard layout"));
                }
                Layer::BatchNorm(b) => {
                    out.push(b.gamma.as_slice_mut().expect("standard layout"));
                    out.push(b.beta.as_slice_mut().expect("standard layout"));
                }
                _ => {}
            }
        }
        out
    }

    pub fn zero_grads(&self) -> Vec<Vec<f64>> {
        self.params().iter().map(|p| vec![0.0; p.len()]).collect()
    }

    pub fn forward<R: Rng + ?Sized>(
        &mut self,
        x: ArrayView2<f64>,
        mode: Mode,
        rng: &mut R,
    ) -> Result<(Array2<f64>, Tape)> {
        if x.ncols() != self.width_in {
            return Err(Error::Shape {
                layer: 0,
                expected: format!("width {}", self.width_in),
                got: format!("width {}", x.ncols()),
            });
        }
        let input_shape = x.dim();
        let mut caches = Vec::with_capacity(self.layers.len());
        let mut h = x.to_owned();
        for layer in &mut self.layers {
            h = match layer {
                Layer::Affine(a) => {
                    let y = a.apply(&h.view());
                    caches.push(Cache::Affine { input: h });
                    y
                }
                Layer::BatchNorm(bn) => {
                    let rows = h.nrows();
                    match mode {
                        Mode::Train if rows < bn.min_batch.max(1) => {
                            caches.push(Cache::Skip);
                            h
                        }
                        Mode::Train => {
                            let mean = h.mean_axis(Axis(0)).expect("rows > 0");
                            let centered = &h - &mean;
                            let var = centered.mapv(|v| v * v).mean_axis(Axis(0)).expect("rows > 0");
                            let inv_std = var.mapv(|v| 1.0 / (v + bn.eps).sqrt());
                            let xhat = centered * &inv_std;
                            let y = &xhat * &bn.gamma + &bn.beta;
                            let m = bn.momentum;
                            let unbias = if rows > 1 {
                                rows as f64 / (rows as f64 - 1.0)
                            } else {
                                1.0
                            };
                            Zip::from(&mut bn.running_mean)
                                .and(&mean)
                                .for_each(|r, &v| *r = (1.0 - m) * *r + m * v);
                            Zip::from(&mut bn.running_var)
                                .and(&var)
                                .for_each(|r, &v| *r = (1.0 - m) * *r + m * v * unbias);
                            caches.push(Cache::BatchNorm {
                                xhat,
                                inv_std,
                                batch_stats: true,
                            });
                            y
                        }
                        Mode::Eval => {
                            let inv_std = bn.running_var.mapv(|v| 1.0 / (v + bn.eps).sqrt());
                            let xhat = (h - &bn.running_mean) * &inv_std;
                            let y = &xhat * &bn.gamma + &bn.beta;
                            caches.push(Cache::BatchNorm {
                                xhat,
                                inv_std,
                                batch_stats: false,
                            });
                            y
                        }
                    }
                }
                Layer::LeakyRelu { slope } => {
                    let s = *slope;
                    let y = h.mapv(|v| if v > 0.0 { v } else { s * v });
                    caches.push(Cache::LeakyRelu { input: h });
                    y
                }
                Layer::Dropout { keep_prob } => {
                    let keep = *keep_prob;
                    if mode == Mode::Eval || keep >= 1.0 {
                        caches.push(Cache::Skip);
                        h
                    } else {
                        let scale = 1.0 / keep;
                        let mask = Array2::from_shape_fn(h.dim(), |_| {
                            if rng.gen::<f64>() < keep {
                                scale
                            } else {
                                0.0
                            }
                        });
                        let y = &h * &mask;
                        caches.push(Cache::Dropout { mask });
                        y
                    }
                }
            };
        }
        Ok((
            h,
            Tape {
                owner: self.uid,
                version: self.version,
                input_shape,
                caches,
            },
        ))
    }

    /// Eval-mode forward without recording.
    pub fn predict(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        if x.ncols() != self.width_in {
            return Err(Error::Shape {
                layer: 0,
                expected: format!("width {}", self.width_in),
                got: format!("width {}", x.ncols()),
            });
        }
        let mut h = x.to_owned();
        for layer in &self.layers {
            h = match layer {
                Layer::Affine(a) => a.apply(&h.view()),
                Layer::BatchNorm(bn) => {
                    let inv_std = bn.running_var.mapv(|v| 1.0 / (v + bn.eps).sqrt());
                    (h - &bn.running_mean) * &inv_std * &bn.gamma + &bn.beta
                }
                Layer::LeakyRelu { slope } => {
                    let s = *slope;
                    h.mapv_into(|v| if v > 0.0 { v } else { s * v })
                }
                Layer::Dropout { .. } => h,
            };
        }
        Ok(h)
    }

    pub fn backward(&self, tape: &Tape, upstream: Array2<f64>) -> Result<StackGrads> {
        if tape.owner != self.uid || tape.version != self.version {
            return Err(Error::Usage(
                "tape was recorded before the last parameter update or by another stack".into(),
            ));
        }
        let out_shape = (tape.input_shape.0, self.width_out());
        if upstream.dim() != out_shape {
            return Err(Error::Shape {
                layer: self.layers.len(),
                expected: format!("{out_shape:?}"),
                got: format!("{:?}", upstream.dim()),
            });
        }

        let mut grads: Vec<Vec<f64>> = Vec::new();
        let mut g = upstream;
        for (layer, cache) in self.layers.iter().zip(&tape.caches).rev() {
            g = match (layer, cache) {
                (Layer::Affine(a), Cache::Affine { input }) => {
                    let dw = input.t().dot(&g);
                    let db = g.sum_axis(Axis(0));
                    let dx = g.dot(&a.weight.t());
                    grads.push(db.into_raw_vec_and_offset().0);
                    grads.push(dw.into_raw_vec_and_offset().0);
                    dx
                }
                (Layer::BatchNorm(bn), Cache::BatchNorm { xhat, inv_std, batch_stats }) => {
                    let dgamma = (&g * xhat).sum_axis(Axis(0));
                    let dbeta = g.sum_axis(Axis(0));
                    let dxhat = &g * &bn.gamma;
                    let dx = if *batch_stats {
                        let n = g.nrows() as f64;
                        let sum_dxhat = dxhat.sum_axis(Axis(0));
                        let sum_dxhat_xhat = (&dxhat * xhat).sum_axis(Axis(0));
                        let mut dx = dxhat * n - &sum_dxhat - &(xhat * &sum_dxhat_xhat);
                        dx *= &(inv_std / n);
                        dx
                    } else {
                        dxhat * inv_std
                    };
                    grads.push(dbeta.into_raw_vec_and_offset().0);
                    grads.push(dgamma.into_raw_vec_and_offset().0);
                    dx
                }
                (Layer::BatchNorm(bn), Cache::Skip) => {
                    grads.push(vec![0.0; bn.width()]);
                    grads.push(vec![0.0; bn.width()]);
                    g
                }
                (Layer::LeakyRelu { slope }, Cache::LeakyRelu { input }) => {
                    let s = *slope;
                    Zip::from(&mut g)
                        .and(input)
                        .for_each(|gv, &x| if x <= 0.0 { *gv *= s });
                    g
                }
                (Layer::Dropout { .. }, Cache::Dropout { mask }) => g * mask,
                (Layer::Dropout { .. }, Cache::Skip) => g,
                (layer, _) => {
                    return Err(Error::Usage(format!(
                        "tape does not match {} layer",
                        layer.kind()
                    )))
                }
            };
        }
        grads.reverse();
        Ok(StackGrads {
            params: grads,
            input: g,
        })
    }

    /// Parameters and batchnorm running statistics as named archive entries.
    pub fn to_entries(&self, prefix: &str) -> Vec<TensorEntry> {
        let mut out = Vec::new();
        for (i, layer) in self.layers.iter().enumerate() {
            let mut push = |name: &str, t: Tensor| {
                out.push(TensorEntry {
                    name: format!("{prefix}.{i}.{name}"),
                    layer_index: Some(i),
                    kind: layer.kind().to_string(),
                    tensor: t,
                });
            };
            match layer {
                Layer::Affine(a) => {
                    push("weight", Tensor::from(a.weight.clone()));
                    push("bias", vec1(&a.bias));
                }
                Layer::BatchNorm(b) => {
                    push("gamma", vec1(&b.gamma));
                    push("beta", vec1(&b.beta));
                    push("running_mean", vec1(&b.running_mean));
                    push("running_var", vec1(&b.running_var));
                }
                _ => {}
            }
        }
        out
    }

    /// Restores values written by [`Sequential::to_entries`] into a stack of
    /// identical layout.
    pub fn load_entries(&mut self, prefix: &str, entries: &[TensorEntry]) -> Result<()> {
        self.version += 1;
        let find = |i: usize, name: &str| -> Result<&Tensor> {
            let key = format!("{prefix}.{i}.{name}");
            entries
                .iter()
                .find(|e| e.name == key)
                .map(|e| &e.tensor)
                .ok_or_else(|| Error::Data(format!("checkpoint lacks `{key}`")))
        };
        fn fill(dst: &mut [f64], src: &Tensor, what: &str) -> Result<()> {
            if dst.len() != src.data().len() {
                return Err(Error::Data(format!(
                    "`{what}` holds {} values, expected {}",
                    src.data().len(),
                    dst.len()
                )));
            }
            dst.copy_from_slice(src.data());
            Ok(())
        }
        for (i, layer) in self.layers.iter_mut().enumerate() {
            match layer {
                Layer::Affine(a) => {
                    fill(a.weight.as_slice_mut().unwrap(), find(i, "weight")?, "weight")?;
                    fill(a.bias.as_slice_mut().unwrap(), find(i, "bias")?, "bias")?;
                }
                Layer::BatchNorm(b) => {
                    fill(b.gamma.as_slice_mut().unwrap(), find(i, "gamma")?, "gamma")?;
                    fill(b.beta.as_slice_mut().unwrap(), find(i, "beta")?, "beta")?;
                    fill(
                        b.running_mean.as_slice_mut().unwrap(),
                        find(i, "running_mean")?,
                        "running_mean",
                    )?;
                    fill(
                        b.running_var.as_slice_mut().unwrap(),
                        find(i, "running_var")?,
                        "running_var",
                    )?;
                }
                _ => {}
            }
        }
        Ok(())
    }
}

fn vec1(a: &Array1<f64>) -> Tensor {
    Tensor::new(vec![a.len()], a.to_vec()).expect("rank-1 shape")
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(0)
    }

    #[test]
    fn identity_affine() {
        let mut net =
            Sequential::from_specs(&[LayerSpec::Affine { width_in: 3, width_out: 3 }], &mut rng())
                .unwrap();
        if let Layer::Affine(a) = &mut net.layers_mut()[0] {
            a.weight = Array2::eye(3);
            a.bias.fill(0.0);
        }
        let x = array![[1.0, -2.0, 3.5], [0.25, 0.0, -9.0]];
        let (y, _) = net.forward(x.view(), Mode::Train, &mut rng()).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn leaky_relu_slope() {
        let net = Sequential::from_specs(
            &[LayerSpec::BatchNorm { width: 1 }, LayerSpec::LeakyRelu { slope: 0.2 }],
            &mut rng(),
        )
        .unwrap();
        let y = net.predict(array![[-1.0]].view()).unwrap();
        assert!((y[[0, 0]] - (-0.2 / (1.0 + DEFAULT_BN_EPS).sqrt())).abs() < 1e-15);
        let relu = Layer::LeakyRelu { slope: 0.2 };
        assert_eq!(relu.kind(), "leakyrelu");
    }

    #[test]
    fn dropout_keep_one_is_identity() {
        let mut net = Sequential::from_specs(
            &[LayerSpec::BatchNorm { width: 2 }, LayerSpec::Dropout { keep_prob: 1.0 }],
            &mut rng(),
        )
        .unwrap();
        net.set_batchnorm_min_batch(100);
        let x = array![[1.0, 2.0], [3.0, 4.0]];
        let (y, _) = net.forward(x.view(), Mode::Train, &mut rng()).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn dropout_scales_kept_units() {
        let mut net = Sequential::from_specs(
            &[LayerSpec::BatchNorm { width: 4 }, LayerSpec::Dropout { keep_prob: 0.5 }],
            &mut rng(),
        )
        .unwrap();
        net.set_batchnorm_min_batch(usize::MAX);
        let x = Array2::from_elem((50, 4), 1.0);
        let (y, _) = net.forward(x.view(), Mode::Train, &mut rng()).unwrap();
        assert!(y.iter().all(|&v| v == 0.0 || v == 2.0));
        let kept = y.iter().filter(|&&v| v == 2.0).count();
        assert!((60..140).contains(&kept), "{kept}");
        let (y, _) = net.forward(x.view(), Mode::Eval, &mut rng()).unwrap();
        let unit = 1.0 / (1.0 + DEFAULT_BN_EPS).sqrt();
        assert!(y.iter().all(|&v| v == unit));
    }

    #[test]
    fn width_mismatch_is_a_shape_error() {
        let specs = [
            LayerSpec::Affine { width_in: 3, width_out: 4 },
            LayerSpec::Affine { width_in: 5, width_out: 2 },
        ];
        assert!(matches!(
            Sequential::from_specs(&specs, &mut rng()),
            Err(Error::Shape { layer: 1, .. })
        ));
        let mut net = Sequential::from_specs(&specs[..1], &mut rng()).unwrap();
        assert!(matches!(
            net.forward(Array2::zeros((2, 2)).view(), Mode::Eval, &mut rng()),
            Err(Error::Shape { layer: 0, .. })
        ));
    }

    #[test]
    fn invalid_specs_rejected() {
        let bad = [
            vec![LayerSpec::BatchNorm { width: 2 }, LayerSpec::Dropout { keep_prob: 0.0 }],
            vec![LayerSpec::BatchNorm { width: 2 }, LayerSpec::Dropout { keep_prob: 1.5 }],
            vec![LayerSpec::BatchNorm { width: 2 }, LayerSpec::LeakyRelu { slope: -0.1 }],
            vec![LayerSpec::LeakyRelu { slope: 0.1 }],
        ];
        for specs in bad {
            assert!(Sequential::from_specs(&specs, &mut rng()).is_err());
        }
    }

    #[test]
    fn single_weight_chain_rule() {
        let mut net =
            Sequential::from_specs(&[LayerSpec::Affine { width_in: 1, width_out: 1 }], &mut rng())
                .unwrap();
        if let Layer::Affine(a) = &mut net.layers_mut()[0] {
            a.weight[[0, 0]] = 0.7;
            a.bias[0] = 0.0;
        }
        let (_, tape) = net.forward(array![[3.0]].view(), Mode::Train, &mut rng()).unwrap();
        let g = net.backward(&tape, array![[1.0]]).unwrap();
        assert_eq!(g.params[0], vec![3.0]);
        assert_eq!(g.params[1], vec![1.0]);
        assert_eq!(g.input[[0, 0]], 0.7);
    }

    #[test]
    fn zero_upstream_gives_zero_grads() {
        let specs = [
            LayerSpec::Affine { width_in: 3, width_out: 5 },
            LayerSpec::BatchNorm { width: 5 },
            LayerSpec::LeakyRelu { slope: 0.2 },
            LayerSpec::Affine { width_in: 5, width_out: 2 },
        ];
        let mut net = Sequential::from_specs(&specs, &mut rng()).unwrap();
        let x = Array2::from_shape_fn((6, 3), |(i, j)| (i * 3 + j) as f64 * 0.1 - 0.5);
        let (_, tape) = net.forward(x.view(), Mode::Train, &mut rng()).unwrap();
        let g = net.backward(&tape, Array2::zeros((6, 2))).unwrap();
        assert!(g.params.iter().flatten().all(|&v| v == 0.0));
        assert!(g.input.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn stale_tape_rejected() {
        let mut net =
            Sequential::from_specs(&[LayerSpec::Affine { width_in: 2, width_out: 2 }], &mut rng())
                .unwrap();
        let (_, tape) = net.forward(Array2::ones((1, 2)).view(), Mode::Train, &mut rng()).unwrap();
        net.params_mut()[0][0] += 1.0;
        assert!(matches!(
            net.backward(&tape, Array2::ones((1, 2))),
            Err(Error::Usage(_))
        ));
        let other = net.clone();
        let (_, tape) = net.forward(Array2::ones((1, 2)).view(), Mode::Train, &mut rng()).unwrap();
        assert!(other.backward(&tape, Array2::ones((1, 2))).is_err());
        assert!(net.backward(&tape, Array2::ones((1, 2))).is_ok());
    }

    #[test]
    fn batchnorm_train_statistics() {
        let mut net = Sequential::from_specs(&[LayerSpec::BatchNorm { width: 4 }], &mut rng()).unwrap();
        let mut r = rng();
        let x = Array2::from_shape_fn((64, 4), |(_, j)| r.gen_range(-1.0..1.0) * (j + 1) as f64 + j as f64);
        let (y, _) = net.forward(x.view(), Mode::Train, &mut rng()).unwrap();
        let mean = y.mean_axis(Axis(0)).unwrap();
        let var = y.mapv(|v| v * v).mean_axis(Axis(0)).unwrap() - mean.mapv(|m| m * m);
        for j in 0..4 {
            assert!(mean[j].abs() < 1e-6);
            assert!((var[j] - 1.0).abs() < 1e-4, "var {}", var[j]);
        }
    }

    #[test]
    fn batchnorm_small_batch_switch() {
        let mut net = Sequential::from_specs(&[LayerSpec::BatchNorm { width: 2 }], &mut rng()).unwrap();
        net.set_batchnorm_min_batch(4);
        let x = array![[1.0, 2.0], [3.0, 5.0]];
        let (y, tape) = net.forward(x.view(), Mode::Train, &mut rng()).unwrap();
        assert_eq!(y, x);
        let g = net.backward(&tape, array![[1.0, 1.0], [1.0, 1.0]]).unwrap();
        assert_eq!(g.input, array![[1.0, 1.0], [1.0, 1.0]]);
    }

    #[test]
    fn predict_matches_eval_forward() {
        let specs = [
            LayerSpec::Affine { width_in: 3, width_out: 4 },
            LayerSpec::BatchNorm { width: 4 },
            LayerSpec::LeakyRelu { slope: 0.2 },
            LayerSpec::Dropout { keep_prob: 0.5 },
        ];
        let mut net = Sequential::from_specs(&specs, &mut rng()).unwrap();
        let x = Array2::from_shape_fn((5, 3), |(i, j)| (i as f64 - j as f64) * 0.3);
        net.forward(x.view(), Mode::Train, &mut rng()).unwrap();
        let (a, _) = net.forward(x.view(), Mode::Eval, &mut rng()).unwrap();
        assert_eq!(a, net.predict(x.view()).unwrap());
    }

    #[test]
    fn entries_round_trip() {
        let specs = [
            LayerSpec::Affine { width_in: 3, width_out: 4 },
            LayerSpec::BatchNorm { width: 4 },
        ];
        let mut a = Sequential::from_specs(&specs, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        a.forward(Array2::ones((3, 3)).view(), Mode::Train, &mut rng()).unwrap();
        let mut b = Sequential::from_specs(&specs, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        b.load_entries("x", &a.to_entries("x")).unwrap();
        assert_eq!(a.layers(), b.layers());
    }
}
