use std::collections::{BTreeMap, BTreeSet};

use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::embed::EmbeddingVector;
use crate::error::{Error, Result};

use super::model::{backward, batch_matrix, cross_entropy, forward_cached, MapperKind, MapperModel, Mode};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub dropout: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub seed: u64,
    pub train_fraction: f64,
    pub hidden1: usize,
    pub hidden2: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            batch_size: 32,
            epochs: 30,
            dropout: 0.2,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            seed: 0,
            train_fraction: 0.8,
            hidden1: 768,
            hidden2: 512,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::Config(what.to_string()));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be > 0");
        }
        if !(self.dropout > 0.0 && self.dropout < 1.0) {
            return bad("dropout must be in (0, 1)");
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return bad("train_fraction must be in (0, 1)");
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return bad("batch_size and epochs must be >= 1");
        }
        if self.hidden1 == 0 || self.hidden2 == 0 {
            return bad("hidden sizes must be >= 1");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || self.epsilon <= 0.0 {
            return bad("Adam constants out of range");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledExample {
    pub embedding: EmbeddingVector,
    pub label: usize,
}

#[derive(Debug, Clone)]
pub struct TrainedMapper {
    pub model: MapperModel,
    /// Mean training cross-entropy per epoch (dropout active).
    pub epoch_loss: Vec<f64>,
}

fn canonical_order(examples: &[LabeledExample]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..examples.len()).collect();
    order.sort_by(|&a, &b| {
        let (ea, eb) = (&examples[a], &examples[b]);
        ea.label.cmp(&eb.label).then_with(|| {
            let bits = |e: &EmbeddingVector| e.as_slice().iter().map(|x| x.to_bits()).collect::<Vec<_>>();
            bits(&ea.embedding).cmp(&bits(&eb.embedding))
        })
    });
    order
}

/// Stratified split. Per label, `floor(fraction · count)` examples (clamped so
/// both sides get at least one) go to train after a seeded shuffle.
pub fn split_dataset(
    examples: &[LabeledExample],
    fraction: f64,
    seed: u64,
) -> Result<(Vec<LabeledExample>, Vec<LabeledExample>)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::Config(format!("split fraction {fraction} outside (0, 1)")));
    }
    let mut by_label: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for i in canonical_order(examples) {
        by_label.entry(examples[i].label).or_default().push(i);
    }
    if let Some((label, _)) = by_label.iter().find(|(_, v)| v.len() < 2) {
        return Err(Error::Contract(format!(
            "label {label} has a single example and cannot be split"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for (_, mut idx) in by_label {
        idx.shuffle(&mut rng);
        let n_train = ((fraction * idx.len() as f64).floor() as usize).clamp(1, idx.len() - 1);
        train.extend(idx[..n_train].iter().map(|&i| examples[i].clone()));
        test.extend(idx[n_train..].iter().map(|&i| examples[i].clone()));
    }
    Ok((train, test))
}

struct Adam {
    m: Vec<Array2<f64>>,
    v: Vec<Array2<f64>>,
    t: i32,
}

impl Adam {
    fn new(model: &MapperModel) -> Self {
        let zeros = || model.params.iter().map(|p| Array2::zeros(p.value.raw_dim())).collect();
        Adam { m: zeros(), v: zeros(), t: 0 }
    }

    fn step(&mut self, model: &mut MapperModel, grads: &[Array2<f64>], cfg: &TrainConfig) {
        self.t += 1;
        let c1 = 1.0 - cfg.beta1.powi(self.t);
        let c2 = 1.0 - cfg.beta2.powi(self.t);
        let (b1, b2, lr, eps) = (cfg.beta1, cfg.beta2, cfg.learning_rate, cfg.epsilon);
        for (((p, g), m), v) in model.params.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            let (w, g) = (p.value.as_slice_mut().expect("standard layout"), g.as_standard_layout());
            let g = g.as_slice().expect("standard layout");
            let (m, v) = (m.as_slice_mut().expect("standard layout"), v.as_slice_mut().expect("standard layout"));
            for (((w, &g), m), v) in w.iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
                *m = b1 * *m + (1.0 - b1) * g;
                *v = b2 * *v + (1.0 - b2) * g * g;
                *w -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
            }
        }
    }
}

/// Adam on mean cross-entropy over shuffled mini-batches.
///
/// Classes are the distinct training labels in ascending order. Examples are
/// put in a canonical order first, and the per-epoch shuffle depends only on
/// the seed and the epoch, so input order does not affect the result.
pub fn train_mapper(train: &[LabeledExample], config: &TrainConfig, kind: MapperKind) -> Result<TrainedMapper> {
    config.validate()?;
    let label_map: Vec<usize> = train.iter().map(|e| e.label).collect::<BTreeSet<_>>().into_iter().collect();
    if label_map.len() < 2 {
        return Err(Error::Contract(format!(
            "training set has {} classes, need at least 2",
            label_map.len()
        )));
    }
    let class_of: BTreeMap<usize, usize> = label_map.iter().enumerate().map(|(c, &l)| (l, c)).collect();
    let input_dim = train[0].embedding.dim();
    let mut model = MapperModel::init(
        kind,
        input_dim,
        config.hidden1,
        config.hidden2,
        label_map,
        config.dropout,
        config.seed,
    )?;

    let order = canonical_order(train);
    let refs: Vec<&EmbeddingVector> = order.iter().map(|&i| &train[i].embedding).collect();
    let x_all = batch_matrix(&model, &refs)?;
    let y_all: Vec<usize> = order.iter().map(|&i| class_of[&train[i].label]).collect();
    let n = order.len();

    let mut adam = Adam::new(&model);
    let mut epoch_loss = Vec::with_capacity(config.epochs);
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(config.seed);
    dropout_rng.set_stream(1);
    for epoch in 0..config.epochs {
        let mut shuffle_rng = ChaCha8Rng::seed_from_u64(config.seed);
        shuffle_rng.set_stream(2 + epoch as u64);
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut shuffle_rng);
        let mut total = 0.0;
        for (batch, idx) in perm.chunks(config.batch_size).enumerate() {
            let x = x_all.select(Axis(0), idx);
            let y: Vec<usize> = idx.iter().map(|&i| y_all[i]).collect();
            let cache = forward_cached(&model, x, Mode::Train, dropout_rng.random());
            let loss = cross_entropy(&cache.probs, &y);
            if !loss.is_finite() {
                return Err(Error::Training { epoch, batch, loss });
            }
            let grads = backward(&model, &cache, &y);
            adam.step(&mut model, &grads, config);
            total += loss * idx.len() as f64;
        }
        let mean = total / n as f64;
        log::debug!("epoch {epoch}: loss {mean:.6}");
        epoch_loss.push(mean);
    }
    Ok(TrainedMapper { model, epoch_loss })
}
