//! Supervised readout: a softmax classifier over hidden-layer spike counts,
//! trained full-batch with Adam and early stopping on validation loss.
//!
//! The readout is a separate linear model (`scores = x W + b`); it does not
//! touch the network's hidden->output synapses, which stay reserved for the
//! fault experiments.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tracing::debug;

use crate::events::SpikeRaster;
use crate::sim::{SimConfig, SimError, Simulation};

#[derive(Debug, Error, PartialEq)]
pub enum TrainError {
    #[error("{features} feature rows but {labels} labels")]
    LengthMismatch { features: usize, labels: usize },
    #[error("need at least two distinct classes, found {0}")]
    SingleClass(usize),
    #[error("need at least two trials to split into train and validation sets")]
    TooFewTrials,
    #[error("feature rows must all have {expected} finite values (row {row})")]
    BadFeatures { row: usize, expected: usize },
    #[error("evaluation set is empty")]
    EmptySet,
    #[error("invalid Adam parameters: {0}")]
    BadAdam(&'static str),
    #[error("invalid training settings: {0}")]
    BadSettings(&'static str),
    #[error("sample window of {0} bins is empty")]
    ZeroSample(usize),
    #[error(transparent)]
    Sim(#[from] SimError),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamParams {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamParams {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl AdamParams {
    pub fn validate(&self) -> Result<(), TrainError> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(TrainError::BadAdam("learning_rate must be positive"));
        }
        if !(self.beta1 > 0.0 && self.beta1 < 1.0) {
            return Err(TrainError::BadAdam("beta1 must lie in (0, 1)"));
        }
        if !(self.beta2 > 0.0 && self.beta2 < 1.0) {
            return Err(TrainError::BadAdam("beta2 must lie in (0, 1)"));
        }
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(TrainError::BadAdam("epsilon must be positive"));
        }
        Ok(())
    }
}

/// Adam state for a flat parameter vector.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    params: AdamParams,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    pub fn new(params: AdamParams, n: usize) -> Self {
        Self {
            params,
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    /// One bias-corrected update of `theta` against `grad`.
    pub fn step(&mut self, theta: &mut [f64], grad: &[f64]) {
        let AdamParams {
            learning_rate,
            beta1,
            beta2,
            epsilon,
        } = self.params;
        self.t += 1;
        let c1 = 1.0 - beta1.powi(self.t);
        let c2 = 1.0 - beta2.powi(self.t);
        for (((p, &g), m), v) in theta.iter_mut().zip(grad).zip(&mut self.m).zip(&mut self.v) {
            *m = beta1 * *m + (1.0 - beta1) * g;
            *v = beta2 * *v + (1.0 - beta2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *p -= learning_rate * m_hat / (v_hat.sqrt() + epsilon);
        }
    }
}

/// Early stopping on validation loss. An epoch improves when its loss is
/// strictly below the best so far by at least `min_delta`; training stops
/// at the non-improving epoch that brings the run of consecutive
/// non-improving epochs to `patience` (so `patience = 0` stops at the first
/// one).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EarlyStopSpec {
    pub patience: usize,
    pub min_delta: f64,
}

impl Default for EarlyStopSpec {
    fn default() -> Self {
        Self {
            patience: 10,
            min_delta: 0.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EarlyStopper {
    spec: EarlyStopSpec,
    best: f64,
    best_epoch: Option<usize>,
    stale: usize,
    epoch: usize,
}

impl EarlyStopper {
    pub fn new(spec: EarlyStopSpec) -> Self {
        Self {
            spec,
            best: f64::INFINITY,
            best_epoch: None,
            stale: 0,
            epoch: 0,
        }
    }

    /// Records one epoch's monitored loss; returns `true` when training
    /// should stop after this epoch.
    pub fn observe(&mut self, loss: f64) -> bool {
        let epoch = self.epoch;
        self.epoch += 1;
        if loss < self.best && self.best - loss >= self.spec.min_delta {
            self.best = loss;
            self.best_epoch = Some(epoch);
            self.stale = 0;
            false
        } else {
            self.stale += 1;
            self.stale >= self.spec.patience
        }
    }

    pub fn best_epoch(&self) -> Option<usize> {
        self.best_epoch
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub adam: AdamParams,
    pub stop: EarlyStopSpec,
    pub max_epochs: usize,
    /// Fraction of trials held out for validation.
    pub val_split: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            adam: AdamParams::default(),
            stop: EarlyStopSpec::default(),
            max_epochs: 1000,
            val_split: 0.2,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        self.adam.validate()?;
        if self.max_epochs == 0 {
            return Err(TrainError::BadSettings("max_epochs must be at least 1"));
        }
        if !(self.val_split > 0.0 && self.val_split < 1.0) {
            return Err(TrainError::BadSettings("val_split must lie in (0, 1)"));
        }
        if !(self.stop.min_delta >= 0.0 && self.stop.min_delta.is_finite()) {
            return Err(TrainError::BadSettings("min_delta must be non-negative"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub train_accuracy: f64,
    pub val_accuracy: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ReadoutModel {
    pub n_features: usize,
    pub n_classes: usize,
    /// Row-major `n_features x n_classes`.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    pub history: Vec<EpochStats>,
    /// Last epoch trained (0-based).
    pub stopped_epoch: usize,
    pub early_stopped: bool,
}

impl ReadoutModel {
    pub fn scores(&self, x: &[f64]) -> Vec<f64> {
        scores(&self.weights, &self.bias, x, self.n_classes)
    }

    /// Index of the highest score (lowest index on ties).
    pub fn predict(&self, x: &[f64]) -> usize {
        argmax(&self.scores(x))
    }

    pub fn history_csv(&self) -> String {
        let mut out = String::from("epoch,train_loss,val_loss,train_accuracy,val_accuracy\n");
        for h in &self.history {
            out.push_str(&format!(
                "{},{:.9},{:.9},{:.6},{:.6}\n",
                h.epoch, h.train_loss, h.val_loss, h.train_accuracy, h.val_accuracy
            ));
        }
        out
    }
}

fn scores(w: &[f64], b: &[f64], x: &[f64], n_classes: usize) -> Vec<f64> {
    let mut s = b.to_vec();
    for (i, &xi) in x.iter().enumerate() {
        if xi != 0.0 {
            for (c, sc) in s.iter_mut().enumerate() {
                *sc += xi * w[i * n_classes + c];
            }
        }
    }
    s
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

fn softmax(s: &[f64]) -> Vec<f64> {
    let max = s.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = s.iter().map(|v| (v - max).exp()).collect();
    let z: f64 = e.iter().sum();
    e.into_iter().map(|v| v / z).collect()
}

/// Mean softmax cross-entropy over `rows` and its gradient with respect to
/// the weights (row-major `n_features x n_classes`) and the bias.
pub fn loss_and_grad(
    weights: &[f64],
    bias: &[f64],
    features: &[Vec<f64>],
    labels: &[usize],
    rows: &[usize],
) -> (f64, Vec<f64>, Vec<f64>) {
    let k = bias.len();
    let mut gw = vec![0.0; weights.len()];
    let mut gb = vec![0.0; k];
    let mut loss = 0.0;
    for &r in rows {
        let x = &features[r];
        let p = softmax(&scores(weights, bias, x, k));
        loss -= p[labels[r]].max(f64::MIN_POSITIVE).ln();
        for c in 0..k {
            let d = p[c] - (c == labels[r]) as u8 as f64;
            gb[c] += d;
            for (i, &xi) in x.iter().enumerate() {
                gw[i * k + c] += d * xi;
            }
        }
    }
    let n = rows.len().max(1) as f64;
    gw.iter_mut().for_each(|g| *g /= n);
    gb.iter_mut().for_each(|g| *g /= n);
    (loss / n, gw, gb)
}

fn accuracy_on(w: &[f64], b: &[f64], features: &[Vec<f64>], labels: &[usize], rows: &[usize]) -> f64 {
    if rows.is_empty() {
        return f64::NAN;
    }
    let hits = rows
        .iter()
        .filter(|&&r| argmax(&scores(w, b, &features[r], b.len())) == labels[r])
        .count();
    hits as f64 / rows.len() as f64
}

fn check_data(features: &[Vec<f64>], labels: &[usize]) -> Result<usize, TrainError> {
    if features.len() != labels.len() {
        return Err(TrainError::LengthMismatch {
            features: features.len(),
            labels: labels.len(),
        });
    }
    let width = features.first().map_or(0, Vec::len);
    for (row, f) in features.iter().enumerate() {
        if f.len() != width || f.iter().any(|v| !v.is_finite()) {
            return Err(TrainError::BadFeatures { row, expected: width });
        }
    }
    Ok(width)
}

/// Trains a softmax readout. Trials are split train/validation by a seeded
/// shuffle; the same seed draws the small initial weights, so identical
/// inputs give bit-identical models.
pub fn train_readout(
    features: &[Vec<f64>],
    labels: &[usize],
    config: &TrainConfig,
) -> Result<ReadoutModel, TrainError> {
    config.validate()?;
    let n_features = check_data(features, labels)?;
    let mut present: Vec<usize> = labels.to_vec();
    present.sort_unstable();
    present.dedup();
    if present.len() < 2 {
        return Err(TrainError::SingleClass(present.len()));
    }
    if features.len() < 2 {
        return Err(TrainError::TooFewTrials);
    }
    let n_classes = present[present.len() - 1] + 1;

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..features.len()).collect();
    order.shuffle(&mut rng);
    let n_val = ((features.len() as f64 * config.val_split).round() as usize).clamp(1, features.len() - 1);
    let (val, train) = order.split_at(n_val);

    let mut weights: Vec<f64> = (0..n_features * n_classes)
        .map(|_| rng.random_range(-0.01..0.01))
        .collect();
    let mut bias = vec![0.0; n_classes];
    let mut adam_w = Adam::new(config.adam, weights.len());
    let mut adam_b = Adam::new(config.adam, bias.len());
    let mut stopper = EarlyStopper::new(config.stop);
    let mut history = Vec::new();
    let mut early_stopped = false;

    for epoch in 0..config.max_epochs {
        let (train_loss, gw, gb) = loss_and_grad(&weights, &bias, features, labels, train);
        adam_w.step(&mut weights, &gw);
        adam_b.step(&mut bias, &gb);
        let (val_loss, _, _) = loss_and_grad(&weights, &bias, features, labels, val);
        history.push(EpochStats {
            epoch,
            train_loss,
            val_loss,
            train_accuracy: accuracy_on(&weights, &bias, features, labels, train),
            val_accuracy: accuracy_on(&weights, &bias, features, labels, val),
        });
        if stopper.observe(val_loss) {
            early_stopped = true;
            debug!(epoch, val_loss, "early stop");
            break;
        }
    }
    Ok(ReadoutModel {
        n_features,
        n_classes,
        weights,
        bias,
        stopped_epoch: history.len() - 1,
        history,
        early_stopped,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Metrics {
    pub accuracy: f64,
    /// Precision of class 1 for two classes, macro average otherwise.
    pub precision: f64,
    /// Recall of class 1 for two classes, macro average otherwise.
    pub recall: f64,
    pub per_class_precision: Vec<f64>,
    pub per_class_recall: Vec<f64>,
}

/// Confusion-matrix metrics. With two classes, precision and recall refer
/// to class 1 (the positive class). With more, they are macro averages over
/// every class that occurs in the labels or the predictions; a class that is
/// never predicted has precision 0.
pub fn metrics(predictions: &[usize], labels: &[usize]) -> Result<Metrics, TrainError> {
    if predictions.len() != labels.len() {
        return Err(TrainError::LengthMismatch {
            features: predictions.len(),
            labels: labels.len(),
        });
    }
    if labels.is_empty() {
        return Err(TrainError::EmptySet);
    }
    let k = predictions.iter().chain(labels).max().map_or(0, |m| m + 1).max(2);
    let mut tp = vec![0usize; k];
    let mut predicted = vec![0usize; k];
    let mut actual = vec![0usize; k];
    for (&p, &l) in predictions.iter().zip(labels) {
        predicted[p] += 1;
        actual[l] += 1;
        if p == l {
            tp[p] += 1;
        }
    }
    let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    let per_class_precision: Vec<f64> = (0..k).map(|c| ratio(tp[c], predicted[c])).collect();
    let per_class_recall: Vec<f64> = (0..k).map(|c| ratio(tp[c], actual[c])).collect();
    let accuracy = tp.iter().sum::<usize>() as f64 / labels.len() as f64;
    let (precision, recall) = if k == 2 {
        (per_class_precision[1], per_class_recall[1])
    } else {
        let seen: Vec<usize> = (0..k).filter(|&c| predicted[c] + actual[c] > 0).collect();
        let mean = |v: &[f64]| seen.iter().map(|&c| v[c]).sum::<f64>() / seen.len() as f64;
        (mean(&per_class_precision), mean(&per_class_recall))
    };
    Ok(Metrics {
        accuracy,
        precision,
        recall,
        per_class_precision,
        per_class_recall,
    })
}

pub fn evaluate(model: &ReadoutModel, features: &[Vec<f64>], labels: &[usize]) -> Result<Metrics, TrainError> {
    if features.is_empty() {
        return Err(TrainError::EmptySet);
    }
    let width = check_data(features, labels)?;
    if width != model.n_features {
        return Err(TrainError::BadFeatures {
            row: 0,
            expected: model.n_features,
        });
    }
    let predictions: Vec<usize> = features.iter().map(|x| model.predict(x)).collect();
    metrics(&predictions, labels)
}

/// Hidden-layer spike counts per consecutive `sample_bins`-bin sample of
/// `raster`, from a simulation of `config`. A trailing partial sample is
/// dropped.
pub fn hidden_count_features(
    config: &SimConfig,
    raster: &SpikeRaster,
    sample_bins: usize,
) -> Result<Vec<Vec<f64>>, TrainError> {
    if sample_bins == 0 {
        return Err(TrainError::ZeroSample(sample_bins));
    }
    let mut sim = Simulation::new(config)?;
    sim.check_raster(raster)?;
    let n_hidden = config.network.n_hidden;
    let samples = raster.bins() / sample_bins;
    let mut features = Vec::with_capacity(samples);
    for s in 0..samples {
        let mut counts = vec![0.0; n_hidden];
        for b in s * sample_bins..(s + 1) * sample_bins {
            sim.step_bin(raster.bin(b))?;
            for &j in &sim.last_spikes().hidden {
                counts[j as usize] += 1.0;
            }
        }
        features.push(counts);
    }
    Ok(features)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn first_adam_step_is_lr_sized() {
        let mut adam = Adam::new(AdamParams::default(), 1);
        let mut theta = [0.0];
        adam.step(&mut theta, &[1.0]);
        assert!((theta[0] + 1e-3 / (1.0 + 1e-8)).abs() < 1e-15, "{}", theta[0]);
        assert!((theta[0] + 0.000999999).abs() < 1e-9);
    }

    #[test]
    fn adam_validation() {
        assert!(AdamParams::default().validate().is_ok());
        for bad in [
            AdamParams {
                learning_rate: 0.0,
                ..Default::default()
            },
            AdamParams {
                beta1: 1.0,
                ..Default::default()
            },
            AdamParams {
                beta2: 0.0,
                ..Default::default()
            },
            AdamParams {
                epsilon: -1.0,
                ..Default::default()
            },
        ] {
            assert!(bad.validate().is_err());
        }
    }

    #[test]
    fn early_stop_patience_zero_stops_at_first_stale_epoch() {
        let mut s = EarlyStopper::new(EarlyStopSpec {
            patience: 0,
            min_delta: 0.0,
        });
        assert!(!s.observe(1.0));
        assert!(!s.observe(0.9));
        assert!(s.observe(0.95));
        assert_eq!(s.best_epoch(), Some(1));
    }

    #[test]
    fn early_stop_patience_and_min_delta() {
        let mut s = EarlyStopper::new(EarlyStopSpec {
            patience: 2,
            min_delta: 0.1,
        });
        let losses = [1.0, 0.8, 0.75, 0.5, 0.45, 0.44];
        let stops: Vec<bool> = losses.iter().map(|&l| s.observe(l)).collect();
        assert_eq!(stops, [false, false, false, false, false, true]);
        assert_eq!(s.best_epoch(), Some(3));
    }

    #[test]
    fn metric_examples() {
        let all = metrics(&[0, 1, 2, 1], &[0, 1, 2, 1]).unwrap();
        assert_eq!((all.accuracy, all.precision, all.recall), (1.0, 1.0, 1.0));

        // TP=2, FP=1, FN=1, TN=6
        let labels = [1, 1, 1, 0, 0, 0, 0, 0, 0, 0];
        let preds = [1, 1, 0, 1, 0, 0, 0, 0, 0, 0];
        let m = metrics(&preds, &labels).unwrap();
        assert!((m.precision - 2.0 / 3.0).abs() < 1e-12);
        assert!((m.recall - 2.0 / 3.0).abs() < 1e-12);
        assert!((m.accuracy - 0.8).abs() < 1e-12);

        let m = metrics(&[0, 0, 0, 0], &[0, 0, 1, 1]).unwrap();
        assert_eq!(m.accuracy, 0.5);
        assert_eq!(m.per_class_recall[1], 0.0);
        assert_eq!(m.precision, 0.0);

        assert_eq!(metrics(&[], &[]), Err(TrainError::EmptySet));
    }

    #[test]
    fn never_predicted_class_counts_as_zero_precision() {
        let m = metrics(&[0, 1, 0], &[0, 1, 2]).unwrap();
        assert!((m.precision - (0.5 + 1.0 + 0.0) / 3.0).abs() < 1e-12);
        assert!((m.recall - (1.0 + 1.0 + 0.0) / 3.0).abs() < 1e-12);
    }

    #[test]
    fn training_errors() {
        let cfg = TrainConfig::default();
        assert_eq!(
            train_readout(&[vec![1.0], vec![2.0]], &[0, 0], &cfg).unwrap_err(),
            TrainError::SingleClass(1)
        );
        assert!(matches!(
            train_readout(&[vec![1.0]], &[0, 1], &cfg),
            Err(TrainError::LengthMismatch { .. })
        ));
        assert!(matches!(
            train_readout(&[vec![1.0], vec![f64::NAN]], &[0, 1], &cfg),
            Err(TrainError::BadFeatures { .. })
        ));
    }

    fn toy() -> (Vec<Vec<f64>>, Vec<usize>) {
        let mut f = Vec::new();
        let mut l = Vec::new();
        for a in 0..6 {
            for b in 0..6 {
                if a != b {
                    f.push(vec![a as f64, b as f64]);
                    l.push((a > b) as usize);
                }
            }
        }
        (f, l)
    }

    #[test]
    fn determinism() {
        let (f, l) = toy();
        let cfg = TrainConfig {
            max_epochs: 50,
            ..Default::default()
        };
        assert_eq!(
            train_readout(&f, &l, &cfg).unwrap(),
            train_readout(&f, &l, &cfg).unwrap()
        );
    }

    #[test]
    fn convex_toy_loss_is_non_increasing() {
        let (f, l) = toy();
        let cfg = TrainConfig {
            adam: AdamParams {
                learning_rate: 1e-4,
                ..Default::default()
            },
            max_epochs: 200,
            stop: EarlyStopSpec {
                patience: 1000,
                min_delta: 0.0,
            },
            ..Default::default()
        };
        let m = train_readout(&f, &l, &cfg).unwrap();
        for w in m.history.windows(2) {
            assert!(w[1].train_loss <= w[0].train_loss, "{:?}", w);
        }
    }

    proptest! {
        #[test]
        fn evaluate_is_permutation_invariant(
            rows in prop::collection::vec((0usize..3, 0usize..3), 1..40),
            seed in any::<u64>(),
        ) {
            let (preds, labels): (Vec<usize>, Vec<usize>) = rows.iter().copied().unzip();
            let mut idx: Vec<usize> = (0..rows.len()).collect();
            idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
            let p2: Vec<usize> = idx.iter().map(|&i| preds[i]).collect();
            let l2: Vec<usize> = idx.iter().map(|&i| labels[i]).collect();
            let a = metrics(&preds, &labels).unwrap();
            let b = metrics(&p2, &l2).unwrap();
            prop_assert_eq!(a.per_class_precision, b.per_class_precision);
            prop_assert_eq!(a.per_class_recall, b.per_class_recall);
            prop_assert!((a.accuracy - b.accuracy).abs() < 1e-12);
        }
    }
}
