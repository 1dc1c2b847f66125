use ndarray::{Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::embed::EmbeddingVector;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MapperKind {
    Lstm,
    Linear,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Infer,
}

/// A named parameter. Biases are stored as `1 × n`.
#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub value: Array2<f64>,
}

impl Param {
    /// Logical shape: `[n]` for biases, `[rows, cols]` otherwise.
    pub fn shape(&self) -> Vec<usize> {
        if self.name.ends_with(".bias") {
            vec![self.value.ncols()]
        } else {
            self.value.shape().to_vec()
        }
    }
}

/// Query-embedding → cluster classifier.
///
/// The LSTM kind reads each embedding as a length-one sequence with zero
/// initial state. With no previous hidden or cell state the recurrent kernel
/// and the forget gate never reach the output, so each layer stores only the
/// input, candidate and output gate blocks: kernel `[in, 3h]` laid out as
/// `[i | g | o]`.
#[derive(Debug, Clone, PartialEq)]
pub struct MapperModel {
    pub kind: MapperKind,
    pub input_dim: usize,
    pub hidden1: usize,
    pub hidden2: usize,
    pub classes: usize,
    pub dropout: f64,
    pub params: Vec<Param>,
    /// Cluster id per class id.
    pub label_map: Vec<usize>,
}

fn uniform(rows: usize, cols: usize, bound: f64, rng: &mut ChaCha8Rng) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || rng.random_range(-bound..=bound))
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl MapperModel {
    /// Parameters drawn uniformly in `±1/√fan_in`.
    pub fn init(
        kind: MapperKind,
        input_dim: usize,
        hidden1: usize,
        hidden2: usize,
        label_map: Vec<usize>,
        dropout: f64,
        seed: u64,
    ) -> Result<Self> {
        let classes = label_map.len();
        if classes < 2 {
            return Err(Error::Contract(format!("mapper needs >= 2 classes, got {classes}")));
        }
        if input_dim == 0 || (kind == MapperKind::Lstm && (hidden1 == 0 || hidden2 == 0)) {
            return Err(Error::Contract("mapper dimensions must be positive".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = Vec::new();
        let mut layer = |name: &str, fan_in: usize, width: usize, params: &mut Vec<Param>| {
            let bound = 1.0 / (fan_in as f64).sqrt();
            params.push(Param {
                name: format!("{name}.kernel"),
                value: uniform(fan_in, width, bound, &mut rng),
            });
            params.push(Param {
                name: format!("{name}.bias"),
                value: uniform(1, width, bound, &mut rng),
            });
        };
        let head_in = match kind {
            MapperKind::Lstm => {
                layer("lstm1", input_dim, 3 * hidden1, &mut params);
                layer("lstm2", hidden1, 3 * hidden2, &mut params);
                hidden2
            }
            MapperKind::Linear => input_dim,
        };
        layer("dense", head_in, classes, &mut params);
        let (hidden1, hidden2) = match kind {
            MapperKind::Lstm => (hidden1, hidden2),
            MapperKind::Linear => (0, 0),
        };
        Ok(MapperModel {
            kind,
            input_dim,
            hidden1,
            hidden2,
            classes,
            dropout,
            params,
            label_map,
        })
    }

    /// Expected `(name, shape)` list for this architecture.
    pub fn expected_shapes(&self) -> Vec<(String, [usize; 2])> {
        let mut out = Vec::new();
        let mut push = |name: &str, rows: usize, cols: usize| {
            out.push((format!("{name}.kernel"), [rows, cols]));
            out.push((format!("{name}.bias"), [1, cols]));
        };
        let head_in = match self.kind {
            MapperKind::Lstm => {
                push("lstm1", self.input_dim, 3 * self.hidden1);
                push("lstm2", self.hidden1, 3 * self.hidden2);
                self.hidden2
            }
            MapperKind::Linear => self.input_dim,
        };
        push("dense", head_in, self.classes);
        out
    }

    pub fn validate(&self) -> Result<()> {
        if self.classes < 2 || self.label_map.len() != self.classes {
            return Err(Error::Contract("mapper class count and label map disagree".into()));
        }
        let expected = self.expected_shapes();
        if expected.len() != self.params.len() {
            return Err(Error::Contract("mapper parameter list incomplete".into()));
        }
        for ((name, shape), p) in expected.iter().zip(&self.params) {
            if *name != p.name || p.value.shape() != shape {
                return Err(Error::Contract(format!(
                    "parameter {} has shape {:?}, expected {name} {shape:?}",
                    p.name,
                    p.value.shape()
                )));
            }
            if p.value.iter().any(|x| !x.is_finite()) {
                return Err(Error::Contract(format!("parameter {} not finite", p.name)));
            }
        }
        Ok(())
    }

    pub fn param(&self, name: &str) -> Option<&Param> {
        self.params.iter().find(|p| p.name == name)
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    /// Rounds every parameter to the nearest f32.
    pub fn round_to_f32(&mut self) {
        for p in &mut self.params {
            p.value.mapv_inplace(|x| f64::from(x as f32));
        }
    }
}

/// Stacks embeddings into a batch matrix, checking the input dimension.
pub(crate) fn batch_matrix(model: &MapperModel, batch: &[&EmbeddingVector]) -> Result<Array2<f64>> {
    let mut x = Array2::zeros((batch.len(), model.input_dim));
    for (r, e) in batch.iter().enumerate() {
        if e.dim() != model.input_dim {
            return Err(Error::Contract(format!(
                "embedding dimension {} does not match mapper input {}",
                e.dim(),
                model.input_dim
            )));
        }
        x.row_mut(r).iter_mut().zip(e.as_slice()).for_each(|(d, s)| *d = *s);
    }
    Ok(x)
}

pub(crate) struct LstmCache {
    input: Array2<f64>,
    i: Array2<f64>,
    g: Array2<f64>,
    o: Array2<f64>,
    tanh_c: Array2<f64>,
}

pub(crate) struct ForwardCache {
    layers: Vec<LstmCache>,
    /// Head input after dropout.
    head_in: Array2<f64>,
    mask: Option<Array2<f64>>,
    pub probs: Array2<f64>,
}

fn lstm_step(x: &Array2<f64>, kernel: &Array2<f64>, bias: &Array2<f64>) -> (Array2<f64>, LstmCache) {
    let h = kernel.ncols() / 3;
    let z = x.dot(kernel) + bias;
    let i = z.slice(ndarray::s![.., 0..h]).mapv(sigmoid);
    let g = z.slice(ndarray::s![.., h..2 * h]).mapv(f64::tanh);
    let o = z.slice(ndarray::s![.., 2 * h..3 * h]).mapv(sigmoid);
    let tanh_c = (&i * &g).mapv(f64::tanh);
    let out = &o * &tanh_c;
    (
        out,
        LstmCache {
            input: x.clone(),
            i,
            g,
            o,
            tanh_c,
        },
    )
}

fn lstm_backward(cache: &LstmCache, kernel: &Array2<f64>, d_out: &Array2<f64>, need_dx: bool) -> (Array2<f64>, Array2<f64>, Option<Array2<f64>>) {
    let d_o = d_out * &cache.tanh_c;
    let d_c = d_out * &cache.o * &cache.tanh_c.mapv(|t| 1.0 - t * t);
    let dz_i = &d_c * &cache.g * &cache.i.mapv(|s| s * (1.0 - s));
    let dz_g = &d_c * &cache.i * &cache.g.mapv(|t| 1.0 - t * t);
    let dz_o = d_o * &cache.o.mapv(|s| s * (1.0 - s));
    let dz = ndarray::concatenate![Axis(1), dz_i, dz_g, dz_o];
    let dk = cache.input.t().dot(&dz);
    let db = dz.sum_axis(Axis(0)).insert_axis(Axis(0));
    let dx = need_dx.then(|| dz.dot(&kernel.t()));
    (dk, db, dx)
}

fn softmax_rows(logits: &mut Array2<f64>) {
    for mut row in logits.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |m, &x| m.max(x));
        row.mapv_inplace(|x| (x - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|x| x / sum);
    }
}

/// Inverted dropout mask: kept entries scaled by `1 / (1 − rate)`.
fn dropout_mask(rows: usize, cols: usize, rate: f64, seed: u64) -> Array2<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let keep = 1.0 / (1.0 - rate);
    Array2::from_shape_simple_fn((rows, cols), || {
        if rng.random::<f64>() < rate {
            0.0
        } else {
            keep
        }
    })
}

pub(crate) fn forward_cached(model: &MapperModel, x: Array2<f64>, mode: Mode, seed: u64) -> ForwardCache {
    let p = &model.params;
    let (layers, mut head_in) = match model.kind {
        MapperKind::Lstm => {
            let (h1, c1) = lstm_step(&x, &p[0].value, &p[1].value);
            let (h2, c2) = lstm_step(&h1, &p[2].value, &p[3].value);
            (vec![c1, c2], h2)
        }
        MapperKind::Linear => (Vec::new(), x),
    };
    let mask = (mode == Mode::Train && model.kind == MapperKind::Lstm && model.dropout > 0.0)
        .then(|| dropout_mask(head_in.nrows(), head_in.ncols(), model.dropout, seed));
    if let Some(m) = &mask {
        head_in *= m;
    }
    let n = p.len();
    let mut probs = head_in.dot(&p[n - 2].value) + &p[n - 1].value;
    softmax_rows(&mut probs);
    ForwardCache {
        layers,
        head_in,
        mask,
        probs,
    }
}

/// Mean cross-entropy of cached probabilities against class ids.
pub(crate) fn cross_entropy(probs: &Array2<f64>, labels: &[usize]) -> f64 {
    let total: f64 = labels
        .iter()
        .enumerate()
        .map(|(r, &y)| {
            let p = probs[[r, y]];
            // f64::max would swallow a NaN here
            if p.is_nan() { p } else { -p.max(f64::MIN_POSITIVE).ln() }
        })
        .sum();
    total / labels.len() as f64
}

/// Gradients of mean cross-entropy, aligned with `model.params`.
pub(crate) fn backward(model: &MapperModel, cache: &ForwardCache, labels: &[usize]) -> Vec<Array2<f64>> {
    let n = labels.len() as f64;
    let mut d_logits = cache.probs.clone();
    for (r, &y) in labels.iter().enumerate() {
        d_logits[[r, y]] -= 1.0;
    }
    d_logits.mapv_inplace(|v| v / n);
    let p = &model.params;
    let last = p.len();
    let dk = cache.head_in.t().dot(&d_logits);
    let db = d_logits.sum_axis(Axis(0)).insert_axis(Axis(0));
    match model.kind {
        MapperKind::Linear => vec![dk, db],
        MapperKind::Lstm => {
            let mut d_h2 = d_logits.dot(&p[last - 2].value.t());
            if let Some(m) = &cache.mask {
                d_h2 *= m;
            }
            let (dk2, db2, d_h1) = lstm_backward(&cache.layers[1], &p[2].value, &d_h2, true);
            let (dk1, db1, _) = lstm_backward(&cache.layers[0], &p[0].value, &d_h1.expect("dx"), false);
            vec![dk1, db1, dk2, db2, dk, db]
        }
    }
}

/// Class-probability rows for a batch. Dropout only applies in train mode,
/// with its mask drawn from `seed`.
pub fn lstm_forward(
    model: &MapperModel,
    batch: &[EmbeddingVector],
    mode: Mode,
    seed: u64,
) -> Result<Array2<f64>> {
    let refs: Vec<&EmbeddingVector> = batch.iter().collect();
    let x = batch_matrix(model, &refs)?;
    Ok(forward_cached(model, x, mode, seed).probs)
}

/// Argmax class and its probability; ties go to the lowest class id.
pub fn predict_cluster(model: &MapperModel, embedding: &EmbeddingVector) -> Result<(usize, f64)> {
    let probs = lstm_forward(model, std::slice::from_ref(embedding), Mode::Infer, 0)?;
    Ok(argmax(probs.row(0).as_slice().expect("contiguous row")))
}

pub(crate) fn argmax(row: &[f64]) -> (usize, f64) {
    let mut best = (0, row[0]);
    for (c, &p) in row.iter().enumerate().skip(1) {
        if p > best.1 {
            best = (c, p);
        }
    }
    best
}

/// Gradient check report.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheck {
    pub max_relative_error: f64,
    /// Tensors whose analytic gradient is identically zero.
    pub zero_gradient: Vec<String>,
}

/// Compares analytic gradients of mean cross-entropy (dropout off) with
/// central differences of step `1e-5` on every parameter. Relative error is
/// `|a − f| / max(|a|, |f|, 1e-6)`.
pub fn gradient_check(model: &MapperModel, batch: &[(EmbeddingVector, usize)]) -> Result<GradCheck> {
    const STEP: f64 = 1e-5;
    let refs: Vec<&EmbeddingVector> = batch.iter().map(|(e, _)| e).collect();
    let labels: Vec<usize> = batch.iter().map(|(_, l)| *l).collect();
    if labels.iter().any(|&l| l >= model.classes) {
        return Err(Error::Contract("label outside class range".into()));
    }
    let x = batch_matrix(model, &refs)?;
    let cache = forward_cached(model, x.clone(), Mode::Infer, 0);
    let grads = backward(model, &cache, &labels);
    let loss_at = |m: &MapperModel| cross_entropy(&forward_cached(m, x.clone(), Mode::Infer, 0).probs, &labels);
    let mut probe = model.clone();
    let mut worst = 0.0f64;
    let mut zero_gradient = Vec::new();
    for (t, grad) in grads.iter().enumerate() {
        if grad.iter().all(|g| *g == 0.0) {
            zero_gradient.push(model.params[t].name.clone());
        }
        for idx in 0..grad.len() {
            let (r, c) = (idx / grad.ncols(), idx % grad.ncols());
            let orig = probe.params[t].value[[r, c]];
            probe.params[t].value[[r, c]] = orig + STEP;
            let up = loss_at(&probe);
            probe.params[t].value[[r, c]] = orig - STEP;
            let down = loss_at(&probe);
            probe.params[t].value[[r, c]] = orig;
            let numeric = (up - down) / (2.0 * STEP);
            let analytic = grad[[r, c]];
            let denom = analytic.abs().max(numeric.abs()).max(1e-6);
            worst = worst.max((analytic - numeric).abs() / denom);
        }
    }
    Ok(GradCheck {
        max_relative_error: worst,
        zero_gradient,
    })
}
