//! Linear probes on frozen embeddings.
//!
//! A probe is a single affine layer trained with label-smoothed softmax
//! cross-entropy and AdamW (decoupled weight decay) at a flat learning rate.
//! Test accuracy is measured at the end of every epoch and the best value is
//! reported.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::embedding::EmbeddingSet;
use crate::error::{invalid, Error, Result};
use crate::rng;

/// Optimizer recipe family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Profile {
    Cnn,
    Vit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub label_smoothing: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub seed: u64,
    /// Extra key folded into the shuffling stream (the grid uses the dataset id).
    pub stream_key: u64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self::profile(Profile::Cnn)
    }
}

impl ProbeConfig {
    /// CNN probes: lr 1e-3, no weight decay, batch 128.
    /// ViT probes: lr 1e-2, weight decay 1e-4, batch 512.
    /// Both run 30 epochs with label smoothing 0.1.
    pub fn profile(profile: Profile) -> Self {
        let (learning_rate, weight_decay, batch_size) = match profile {
            Profile::Cnn => (1e-3, 0.0, 128),
            Profile::Vit => (1e-2, 1e-4, 512),
        };
        Self {
            epochs: 30,
            batch_size,
            learning_rate,
            weight_decay,
            label_smoothing: 0.1,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            seed: 0,
            stream_key: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(invalid("epochs", "epochs must be >= 1"));
        }
        if self.batch_size == 0 {
            return Err(invalid("batch_size", "batch_size must be >= 1"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(invalid("learning_rate", "learning_rate must be positive"));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(invalid("weight_decay", "weight_decay must be non-negative"));
        }
        if !(0.0..1.0).contains(&self.label_smoothing) {
            return Err(invalid("label_smoothing", "label_smoothing must be in [0, 1)"));
        }
        Ok(())
    }
}

/// Description of the weight initialization, recorded in probe outputs.
pub const INIT_SCHEME: &str = "normal(0, 0.01) weights, zero bias";
const INIT_STD: f64 = 0.01;

#[derive(Debug, Clone, PartialEq)]
pub struct ProbeModel {
    pub n_classes: usize,
    pub dim: usize,
    /// Row-major `n_classes x dim`.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl ProbeModel {
    pub fn zeros(n_classes: usize, dim: usize) -> Self {
        Self { n_classes, dim, weights: vec![0.0; n_classes * dim], bias: vec![0.0; n_classes] }
    }

    fn logits_into(&self, x: &[f32], out: &mut [f64]) {
        for (k, o) in out.iter_mut().enumerate() {
            let w = &self.weights[k * self.dim..(k + 1) * self.dim];
            *o = self.bias[k] + w.iter().zip(x).map(|(w, x)| w * f64::from(*x)).sum::<f64>();
        }
    }

    /// Class with the largest logit; ties go to the lowest index.
    pub fn predict(&self, x: &[f32]) -> usize {
        let mut logits = vec![0.0; self.n_classes];
        self.logits_into(x, &mut logits);
        argmax(&logits)
    }

    /// Mean label-smoothed cross-entropy over a set.
    pub fn loss(&self, set: &EmbeddingSet, label_smoothing: f64) -> Result<f64> {
        self.check(set)?;
        let mut logits = vec![0.0; self.n_classes];
        let total: f64 = set
            .rows()
            .zip(&set.labels)
            .map(|(x, &y)| {
                self.logits_into(x, &mut logits);
                sample_loss(&mut logits, y as usize, label_smoothing)
            })
            .sum();
        Ok(total / set.n_samples() as f64)
    }

    fn check(&self, set: &EmbeddingSet) -> Result<()> {
        if set.dim != self.dim {
            return Err(Error::DimMismatch { expected: self.dim, found: set.dim });
        }
        if set.n_classes as usize > self.n_classes {
            return Err(invalid("n_classes", "set has more classes than the probe"));
        }
        Ok(())
    }
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (k, &x) in v.iter().enumerate().skip(1) {
        if x > v[best] {
            best = k;
        }
    }
    best
}

// Replaces `logits` with softmax probabilities and returns the smoothed loss.
fn sample_loss(logits: &mut [f64], label: usize, smoothing: f64) -> f64 {
    let c = logits.len() as f64;
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut z = 0.0;
    for l in logits.iter_mut() {
        *l = libm::exp(*l - max);
        z += *l;
    }
    let log_z = libm::log(z);
    let mut loss = 0.0;
    for (k, p) in logits.iter_mut().enumerate() {
        let log_p = libm::log(*p) - log_z;
        let target = if k == label { 1.0 - smoothing + smoothing / c } else { smoothing / c };
        if target > 0.0 {
            loss -= target * log_p;
        }
        *p /= z;
    }
    loss
}

/// Top-1 accuracy of `model` on `set`.
pub fn evaluate_probe(model: &ProbeModel, set: &EmbeddingSet) -> Result<f64> {
    model.check(set)?;
    let correct = set
        .rows()
        .zip(&set.labels)
        .filter(|(x, &y)| model.predict(x) == y as usize)
        .count();
    Ok(correct as f64 / set.n_samples() as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProbeOutcome {
    /// Parameters at the epoch with the best test accuracy (earliest on ties).
    pub model: ProbeModel,
    pub best_top1: f64,
    /// 1-based epoch that produced `best_top1`.
    pub best_epoch: usize,
    pub epochs_run: usize,
    /// Full-train-set loss before the first update.
    pub initial_loss: f64,
    /// Full-train-set loss after the last epoch.
    pub final_loss: f64,
    /// Test accuracy after each epoch.
    pub epoch_top1: Vec<f64>,
}

struct AdamW {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl AdamW {
    fn new(n: usize) -> Self {
        Self { m: vec![0.0; n], v: vec![0.0; n], t: 0 }
    }

    fn step(&mut self, params: &mut [f64], grads: &[f64], cfg: &ProbeConfig) {
        self.t += 1;
        let bc1 = 1.0 - libm::pow(cfg.beta1, f64::from(self.t));
        let bc2 = 1.0 - libm::pow(cfg.beta2, f64::from(self.t));
        let decay = 1.0 - cfg.learning_rate * cfg.weight_decay;
        for ((p, g), (m, v)) in params.iter_mut().zip(grads).zip(self.m.iter_mut().zip(self.v.iter_mut())) {
            *p *= decay;
            *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
            *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *p -= cfg.learning_rate * m_hat / (libm::sqrt(v_hat) + cfg.eps);
        }
    }
}

/// Trains one probe and reports its best epoch-end test accuracy.
///
/// Parameters live in one flat buffer (`weights` then `bias`) so a single
/// AdamW state covers both.
pub fn train_probe(train: &EmbeddingSet, test: &EmbeddingSet, cfg: &ProbeConfig) -> Result<ProbeOutcome> {
    cfg.validate()?;
    if train.n_samples() == 0 {
        return Err(Error::Empty("train split"));
    }
    if test.n_samples() == 0 {
        return Err(Error::Empty("test split"));
    }
    if train.dim != test.dim {
        return Err(Error::DimMismatch { expected: train.dim, found: test.dim });
    }
    if train.n_classes != test.n_classes {
        return Err(invalid("n_classes", "train and test splits disagree on n_classes"));
    }
    let (c, d) = (train.n_classes as usize, train.dim);
    let n_w = c * d;

    let mut init_rng = rng::stream(cfg.seed, &[u64::from(train.layer_index), cfg.stream_key, 0]);
    let init = Normal::new(0.0, INIT_STD).expect("positive std");
    let mut params: Vec<f64> = (0..n_w).map(|_| init.sample(&mut init_rng)).chain(core::iter::repeat_n(0.0, c)).collect();
    let unpack = |p: &[f64]| ProbeModel { n_classes: c, dim: d, weights: p[..n_w].to_vec(), bias: p[n_w..].to_vec() };

    let initial_loss = unpack(&params).loss(train, cfg.label_smoothing)?;

    let mut shuffle_rng = rng::stream(cfg.seed, &[u64::from(train.layer_index), cfg.stream_key, 1]);
    let mut order: Vec<usize> = (0..train.n_samples()).collect();
    let mut opt = AdamW::new(params.len());
    let mut grads = vec![0.0; params.len()];
    let mut probs = vec![0.0; c];

    let mut best: Option<(f64, usize, Vec<f64>)> = None;
    let mut epoch_top1 = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut shuffle_rng);
        for batch in order.chunks(cfg.batch_size) {
            grads.iter_mut().for_each(|g| *g = 0.0);
            let model_view = ProbeModelRef { params: &params, c, d };
            for &i in batch {
                let x = train.row(i);
                let y = train.labels[i] as usize;
                model_view.logits_into(x, &mut probs);
                sample_loss(&mut probs, y, cfg.label_smoothing);
                for (k, p) in probs.iter().enumerate() {
                    let target = if k == y {
                        1.0 - cfg.label_smoothing + cfg.label_smoothing / c as f64
                    } else {
                        cfg.label_smoothing / c as f64
                    };
                    let delta = p - target;
                    let row = &mut grads[k * d..(k + 1) * d];
                    for (g, xv) in row.iter_mut().zip(x) {
                        *g += delta * f64::from(*xv);
                    }
                    grads[n_w + k] += delta;
                }
            }
            let scale = 1.0 / batch.len() as f64;
            grads.iter_mut().for_each(|g| *g *= scale);
            opt.step(&mut params, &grads, cfg);
        }
        let top1 = evaluate_probe(&unpack(&params), test)?;
        epoch_top1.push(top1);
        if best.as_ref().is_none_or(|(b, _, _)| top1 > *b) {
            best = Some((top1, epoch, params.clone()));
        }
    }
    let final_loss = unpack(&params).loss(train, cfg.label_smoothing)?;
    let (best_top1, best_epoch, best_params) = best.expect("epochs >= 1");
    Ok(ProbeOutcome {
        model: unpack(&best_params),
        best_top1,
        best_epoch,
        epochs_run: cfg.epochs,
        initial_loss,
        final_loss,
        epoch_top1,
    })
}

struct ProbeModelRef<'a> {
    params: &'a [f64],
    c: usize,
    d: usize,
}

impl ProbeModelRef<'_> {
    fn logits_into(&self, x: &[f32], out: &mut [f64]) {
        let bias = &self.params[self.c * self.d..];
        for (k, o) in out.iter_mut().enumerate() {
            let w = &self.params[k * self.d..(k + 1) * self.d];
            *o = bias[k] + w.iter().zip(x).map(|(w, x)| w * f64::from(*x)).sum::<f64>();
        }
    }
}

/// Per-layer best top-1 accuracies of one (backbone, dataset) pair,
/// covering layers `1..=n` where `n` is the penultimate layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeCurve {
    pub backbone_id: String,
    pub dataset_id: String,
    /// `1 / n_classes` of the probed dataset.
    pub chance: f64,
    pub accuracies: Vec<f64>,
}

impl ProbeCurve {
    pub fn new(backbone_id: impl Into<String>, dataset_id: impl Into<String>, chance: f64, accuracies: Vec<f64>) -> Self {
        Self { backbone_id: backbone_id.into(), dataset_id: dataset_id.into(), chance, accuracies }
    }

    /// Number of layers covered (the penultimate index).
    pub fn len(&self) -> usize {
        self.accuracies.len()
    }

    pub fn is_empty(&self) -> bool {
        self.accuracies.is_empty()
    }

    /// Accuracy at the penultimate layer.
    pub fn penultimate(&self) -> Option<f64> {
        self.accuracies.last().copied()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::Split;

    fn blobs(centers: &[[f32; 2]], per_class: usize, sigma: f32, seed: u64, split: Split) -> EmbeddingSet {
        let mut r = rng::stream(seed, &[]);
        let noise = Normal::new(0.0f32, sigma).unwrap();
        let mut features = Vec::new();
        let mut labels = Vec::new();
        for _ in 0..per_class {
            for (k, c) in centers.iter().enumerate() {
                features.push(c[0] + noise.sample(&mut r));
                features.push(c[1] + noise.sample(&mut r));
                labels.push(k as u32);
            }
        }
        EmbeddingSet::new(1, "", centers.len() as u32, split, 2, features, labels).unwrap()
    }

    fn one_hot_set(labels: &[u32], classes: usize) -> EmbeddingSet {
        let mut f = vec![0.0f32; labels.len() * classes];
        for (i, &l) in labels.iter().enumerate() {
            f[i * classes + l as usize] = 1.0;
        }
        EmbeddingSet::new(1, "", classes as u32, Split::Test, classes, f, labels.to_vec()).unwrap()
    }

    #[test]
    fn defaults_match_cnn_recipe() {
        let cfg = ProbeConfig::default();
        assert_eq!((cfg.epochs, cfg.batch_size), (30, 128));
        assert_eq!((cfg.learning_rate, cfg.weight_decay, cfg.label_smoothing), (1e-3, 0.0, 0.1));
        let vit = ProbeConfig::profile(Profile::Vit);
        assert_eq!((vit.learning_rate, vit.weight_decay, vit.batch_size), (1e-2, 1e-4, 512));
    }

    #[test]
    fn zero_model_ties_to_class_zero() {
        let set = EmbeddingSet::new(1, "", 3, Split::Test, 2, vec![1.0, 2.0, -3.0, 0.5], vec![0, 0]).unwrap();
        assert_eq!(evaluate_probe(&ProbeModel::zeros(3, 2), &set).unwrap(), 1.0);
    }

    #[test]
    fn perfect_and_negated_one_hot_weights() {
        let set = one_hot_set(&[0, 1, 1, 0], 2);
        let mut model = ProbeModel::zeros(2, 2);
        model.weights = vec![1.0, 0.0, 0.0, 1.0];
        assert_eq!(evaluate_probe(&model, &set).unwrap(), 1.0);
        model.weights.iter_mut().for_each(|w| *w = -*w);
        assert_eq!(evaluate_probe(&model, &set).unwrap(), 0.0);
    }

    #[test]
    fn evaluate_rejects_dim_mismatch() {
        let set = one_hot_set(&[0, 1], 2);
        assert!(matches!(evaluate_probe(&ProbeModel::zeros(2, 3), &set), Err(Error::DimMismatch { .. })));
    }

    #[test]
    fn unsmoothed_loss_is_plain_cross_entropy() {
        let set = EmbeddingSet::new(1, "", 3, Split::Train, 2, vec![0.3, -1.2, 2.0, 0.7, -0.4, 0.1], vec![2, 0, 1]).unwrap();
        let model = ProbeModel {
            n_classes: 3,
            dim: 2,
            weights: vec![0.5, -0.25, 1.5, 0.75, -1.0, 0.125],
            bias: vec![0.1, -0.2, 0.3],
        };
        let mut plain = 0.0;
        for (x, &y) in set.rows().zip(&set.labels) {
            let logits: Vec<f64> = (0..3)
                .map(|k| model.bias[k] + model.weights[2 * k] * f64::from(x[0]) + model.weights[2 * k + 1] * f64::from(x[1]))
                .collect();
            let z: f64 = logits.iter().map(|l| libm::exp(*l)).sum();
            plain += libm::log(z) - logits[y as usize];
        }
        plain /= 3.0;
        assert!((model.loss(&set, 0.0).unwrap() - plain).abs() < 1e-6);
        assert!(model.loss(&set, 0.1).unwrap() != plain);
    }

    #[test]
    fn separable_blobs_reach_full_accuracy() {
        let centers = [[-4.0, -4.0], [4.0, 4.0]];
        let train = blobs(&centers, 100, 0.3, 1, Split::Train);
        let test = blobs(&centers, 100, 0.3, 2, Split::Test);
        let out = train_probe(&train, &test, &ProbeConfig::default()).unwrap();
        assert_eq!(out.best_top1, 1.0);
        assert!(out.final_loss < out.initial_loss);
        assert_eq!(out.epoch_top1.len(), 30);
        assert_eq!(evaluate_probe(&out.model, &test).unwrap(), out.best_top1);
    }

    #[test]
    fn constant_labels_reach_full_accuracy() {
        let train = EmbeddingSet::new(1, "", 3, Split::Train, 2, vec![0.1, 0.2, -0.3, 0.4, 0.5, -0.6], vec![1, 1, 1]).unwrap();
        let test = EmbeddingSet::new(1, "", 3, Split::Test, 2, vec![1.0, -1.0], vec![1]).unwrap();
        let out = train_probe(&train, &test, &ProbeConfig::default()).unwrap();
        assert_eq!(out.best_top1, 1.0);
    }

    #[test]
    fn unit_corner_blobs() {
        // 200 points per class and split; value frozen from a run at probe seed 0
        // with data seeds 11/12.
        let centers = [[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [1.0, 1.0]];
        let train = blobs(&centers, 200, 0.1, 11, Split::Train);
        let test = blobs(&centers, 200, 0.1, 12, Split::Test);
        let out = train_probe(&train, &test, &ProbeConfig::default()).unwrap();
        assert!(out.best_top1 >= 0.95, "{}", out.best_top1);
        assert_eq!(out.best_top1, UNIT_CORNER_TOP1);
    }

    // 792 of 800 test points.
    const UNIT_CORNER_TOP1: f64 = 0.99;

    #[test]
    fn reruns_are_identical() {
        let centers = [[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]];
        let train = blobs(&centers, 40, 0.4, 3, Split::Train);
        let test = blobs(&centers, 40, 0.4, 4, Split::Test);
        let cfg = ProbeConfig { seed: 9, ..ProbeConfig::default() };
        let a = train_probe(&train, &test, &cfg).unwrap();
        let b = train_probe(&train, &test, &cfg).unwrap();
        assert_eq!(a, b);
        let c = train_probe(&train, &test, &ProbeConfig { seed: 10, ..cfg }).unwrap();
        assert_ne!(a.model, c.model);
    }

    #[test]
    fn balanced_accuracy_not_far_below_chance() {
        let centers = [[0.0, 0.0], [0.2, 0.0], [0.0, 0.2], [0.2, 0.2]];
        let train = blobs(&centers, 30, 1.0, 5, Split::Train);
        let test = blobs(&centers, 30, 1.0, 6, Split::Test);
        let out = train_probe(&train, &test, &ProbeConfig::default()).unwrap();
        assert!(out.best_top1 >= 0.25 - 0.05 && out.best_top1 <= 1.0);
    }

    #[test]
    fn input_errors() {
        let a = one_hot_set(&[0, 1], 2);
        let b = EmbeddingSet::new(1, "", 2, Split::Test, 3, vec![0.0; 3], vec![0]).unwrap();
        assert!(matches!(train_probe(&a, &b, &ProbeConfig::default()), Err(Error::DimMismatch { .. })));
        let bad = ProbeConfig { label_smoothing: 1.0, ..ProbeConfig::default() };
        assert!(train_probe(&a, &a, &bad).is_err());
    }
}
