//! Single-layer softmax readout trained by minibatch SGD on cross-entropy.
//!
//! The feature vectors coming out of the biological path are mostly zeros
//! (spike counts in a short window), so score computation and weight updates
//! walk only the nonzero entries of each sample. Weights are stored
//! feature-major (`weights[f * n_classes + c]`) to keep those walks on
//! contiguous memory. Training runs for a fixed number of epochs with no
//! early stopping and no validation split, and is bit-reproducible for a
//! fixed seed.

use std::io::{Read as IoRead, Write as IoWrite};
use std::path::Path;

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::readout::{shuffle_spatial, FeatureVector};
use crate::seed::{derive_seed, rng_from_seed};
use crate::signal::NUM_CHANNELS;

pub const NUM_CLASSES: usize = 10;

const MODEL_MAGIC: &[u8; 4] = b"SLPM";
const MODEL_VERSION: u16 = 1;

/// Training hyperparameters. The epoch count is honored exactly.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Hyperparams {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Standardize features to zero mean and unit variance on the training
    /// set; the transform is folded into the affine map after training, so
    /// prediction always consumes raw features.
    pub standardize: bool,
    pub seed: u64,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Hyperparams {
            learning_rate: 0.01,
            batch_size: 16,
            epochs: 1000,
            standardize: false,
            seed: 0,
        }
    }
}

impl Hyperparams {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::invalid("learning_rate must be finite and >= 0"));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch_size must be positive"));
        }
        Ok(())
    }
}

/// Trained affine readout 4096 -> 10. Hyperparameters are kept when the
/// model was trained in-process; models loaded from disk carry only the
/// affine map.
#[derive(Debug, Clone, PartialEq)]
pub struct SLPModel {
    weights: Vec<f64>,
    bias: Vec<f64>,
    hp: Option<Hyperparams>,
}

impl SLPModel {
    pub fn zeroed() -> SLPModel {
        SLPModel {
            weights: vec![0.0; NUM_CHANNELS * NUM_CLASSES],
            bias: vec![0.0; NUM_CLASSES],
            hp: None,
        }
    }

    pub fn n_features(&self) -> usize {
        NUM_CHANNELS
    }

    pub fn n_classes(&self) -> usize {
        NUM_CLASSES
    }

    /// Weight for (class, feature) in the logical 10 x 4096 matrix.
    pub fn weight(&self, class: usize, feature: usize) -> f64 {
        self.weights[feature * NUM_CLASSES + class]
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    pub fn hyperparams(&self) -> Option<&Hyperparams> {
        self.hp.as_ref()
    }
}

/// Class scores for one feature vector, skipping zero entries.
fn scores_for(model: &SLPModel, values: &[f64]) -> Vec<f64> {
    let mut scores = model.bias.clone();
    for (f, &v) in values.iter().enumerate() {
        if v != 0.0 {
            let row = &model.weights[f * NUM_CLASSES..(f + 1) * NUM_CLASSES];
            for (s, &w) in scores.iter_mut().zip(row.iter()) {
                *s += w * v;
            }
        }
    }
    scores
}

fn softmax_in_place(scores: &mut [f64]) {
    let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for s in scores.iter_mut() {
        *s = (*s - max).exp();
        sum += *s;
    }
    for s in scores.iter_mut() {
        *s /= sum;
    }
}

/// Predicted label and class probabilities. Ties break toward the lowest
/// class index.
pub fn predict(model: &SLPModel, fv: &FeatureVector) -> (u8, Vec<f64>) {
    let mut scores = scores_for(model, fv.values());
    softmax_in_place(&mut scores);
    let mut best = 0usize;
    for c in 1..scores.len() {
        if scores[c] > scores[best] {
            best = c;
        }
    }
    (best as u8, scores)
}

/// Mean cross-entropy loss and its gradient for an arbitrary shape, used by
/// gradient checks. `weights` and the returned weight gradient are
/// feature-major; samples are dense.
pub fn batch_loss_and_grad(
    weights: &[f64],
    bias: &[f64],
    samples: &[(Vec<f64>, usize)],
    n_features: usize,
    n_classes: usize,
) -> Result<(f64, Vec<f64>, Vec<f64>)> {
    if weights.len() != n_features * n_classes || bias.len() != n_classes {
        return Err(Error::mismatch("parameter shapes disagree"));
    }
    if samples.is_empty() {
        return Err(Error::invalid("empty batch"));
    }
    let mut grad_w = vec![0.0; weights.len()];
    let mut grad_b = vec![0.0; n_classes];
    let mut loss = 0.0;
    let inv = 1.0 / samples.len() as f64;
    for (x, label) in samples {
        if x.len() != n_features {
            return Err(Error::mismatch("sample dimension disagrees"));
        }
        if *label >= n_classes {
            return Err(Error::range(format!("label {label} out of range")));
        }
        let mut probs = bias.to_vec();
        for (f, &v) in x.iter().enumerate() {
            if v != 0.0 {
                for c in 0..n_classes {
                    probs[c] += weights[f * n_classes + c] * v;
                }
            }
        }
        softmax_in_place(&mut probs);
        loss -= probs[*label].ln() * inv;
        for c in 0..n_classes {
            let delta = (probs[c] - if c == *label { 1.0 } else { 0.0 }) * inv;
            grad_b[c] += delta;
            for (f, &v) in x.iter().enumerate() {
                if v != 0.0 {
                    grad_w[f * n_classes + c] += delta * v;
                }
            }
        }
    }
    if !loss.is_finite() {
        return Err(Error::NonFinite("cross-entropy loss is not finite".into()));
    }
    Ok((loss, grad_w, grad_b))
}

struct SparseSample {
    entries: Vec<(u32, f64)>,
    label: usize,
}

fn to_sparse(features: &[FeatureVector]) -> Result<Vec<SparseSample>> {
    features
        .iter()
        .map(|fv| {
            if fv.values().len() != NUM_CHANNELS {
                return Err(Error::mismatch("feature dimension disagrees"));
            }
            if usize::from(fv.label) >= NUM_CLASSES {
                return Err(Error::range(format!("label {} out of range", fv.label)));
            }
            Ok(SparseSample {
                entries: fv
                    .values()
                    .iter()
                    .enumerate()
                    .filter(|(_, &v)| v != 0.0)
                    .map(|(f, &v)| (f as u32, v))
                    .collect(),
                label: usize::from(fv.label),
            })
        })
        .collect()
}

/// Trains a fresh zero-initialized model with plain minibatch SGD.
pub fn train_slp(features: &[FeatureVector], hp: &Hyperparams) -> Result<SLPModel> {
    hp.validate()?;
    if features.is_empty() {
        return Err(Error::invalid("no training samples"));
    }
    let mut samples = to_sparse(features)?;

    let standardizer = if hp.standardize {
        let n = samples.len() as f64;
        let mut mean = vec![0.0; NUM_CHANNELS];
        for s in &samples {
            for &(f, v) in &s.entries {
                mean[f as usize] += v;
            }
        }
        for m in mean.iter_mut() {
            *m /= n;
        }
        let mut sq = vec![0.0; NUM_CHANNELS];
        for s in &samples {
            for &(f, v) in &s.entries {
                sq[f as usize] += v * v;
            }
        }
        let sd: Vec<f64> = sq
            .iter()
            .zip(mean.iter())
            .map(|(&sq, &m)| {
                let var = (sq / n - m * m).max(0.0);
                if var > 0.0 {
                    var.sqrt()
                } else {
                    1.0
                }
            })
            .collect();
        // Standardized features are dense; rebuild every sample accordingly.
        for s in samples.iter_mut() {
            let mut dense = vec![0.0f64; NUM_CHANNELS];
            for &(f, v) in &s.entries {
                dense[f as usize] = v;
            }
            s.entries = dense
                .iter()
                .enumerate()
                .map(|(f, &v)| (f as u32, (v - mean[f]) / sd[f]))
                .collect();
        }
        Some((mean, sd))
    } else {
        None
    };

    let mut weights = vec![0.0f64; NUM_CHANNELS * NUM_CLASSES];
    let mut bias = vec![0.0f64; NUM_CLASSES];
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut rng = rng_from_seed(derive_seed(hp.seed, "slp-train", &[]));
    let mut deltas = vec![0.0f64; hp.batch_size * NUM_CLASSES];
    for epoch in 0..hp.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(hp.batch_size) {
            let step = hp.learning_rate / batch.len() as f64;
            for (slot, &idx) in batch.iter().enumerate() {
                let s = &samples[idx];
                let probs = &mut deltas[slot * NUM_CLASSES..(slot + 1) * NUM_CLASSES];
                probs.copy_from_slice(&bias);
                for &(f, v) in &s.entries {
                    let row = &weights[f as usize * NUM_CLASSES..(f as usize + 1) * NUM_CLASSES];
                    for (p, &w) in probs.iter_mut().zip(row.iter()) {
                        *p += w * v;
                    }
                }
                softmax_in_place(probs);
                if !probs[s.label].is_finite() || probs[s.label] <= 0.0 {
                    return Err(Error::NonFinite(format!(
                        "training loss diverged at epoch {epoch}"
                    )));
                }
                probs[s.label] -= 1.0;
            }
            for (slot, &idx) in batch.iter().enumerate() {
                let s = &samples[idx];
                let delta = &deltas[slot * NUM_CLASSES..(slot + 1) * NUM_CLASSES];
                for (b, &d) in bias.iter_mut().zip(delta.iter()) {
                    *b -= step * d;
                }
                for &(f, v) in &s.entries {
                    let row =
                        &mut weights[f as usize * NUM_CLASSES..(f as usize + 1) * NUM_CLASSES];
                    for (w, &d) in row.iter_mut().zip(delta.iter()) {
                        *w -= step * d * v;
                    }
                }
            }
        }
    }

    if let Some((mean, sd)) = standardizer {
        // Fold x' = (x - mean) / sd into the affine map so that prediction
        // consumes raw features.
        for f in 0..NUM_CHANNELS {
            for c in 0..NUM_CLASSES {
                let w = weights[f * NUM_CLASSES + c] / sd[f];
                weights[f * NUM_CLASSES + c] = w;
                bias[c] -= w * mean[f];
            }
        }
    }
    if weights.iter().chain(bias.iter()).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("trained parameters are not finite".into()));
    }
    Ok(SLPModel {
        weights,
        bias,
        hp: Some(hp.clone()),
    })
}

/// Accuracy and confusion matrix (`confusion[true][predicted]`) of a model
/// over a labeled set.
pub fn evaluate(model: &SLPModel, features: &[FeatureVector]) -> Result<(f64, Vec<Vec<usize>>)> {
    if features.is_empty() {
        return Err(Error::invalid("no evaluation samples"));
    }
    let mut confusion = vec![vec![0usize; NUM_CLASSES]; NUM_CLASSES];
    let mut correct = 0usize;
    for fv in features {
        let (pred, _) = predict(model, fv);
        confusion[usize::from(fv.label)][usize::from(pred)] += 1;
        if pred == fv.label {
            correct += 1;
        }
    }
    Ok((correct as f64 / features.len() as f64, confusion))
}

/// Stratified fold assignment: within each class the (seeded) shuffled
/// indices are dealt round-robin, with the deal position carried across
/// classes so fold sizes stay within one of each other.
pub fn stratified_folds(labels: &[u8], k: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if k < 2 {
        return Err(Error::invalid("need at least two folds"));
    }
    if labels.len() < k {
        return Err(Error::invalid("fewer samples than folds"));
    }
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); NUM_CLASSES];
    for (i, &l) in labels.iter().enumerate() {
        let c = usize::from(l);
        if c >= NUM_CLASSES {
            return Err(Error::range(format!("label {l} out of range")));
        }
        by_class[c].push(i);
    }
    let mut rng = rng_from_seed(derive_seed(seed, "cv-partition", &[]));
    let mut folds: Vec<Vec<usize>> = vec![Vec::new(); k];
    let mut pos = 0usize;
    for class_indices in by_class.iter_mut() {
        class_indices.shuffle(&mut rng);
        for &idx in class_indices.iter() {
            folds[pos % k].push(idx);
            pos += 1;
        }
    }
    Ok(folds)
}

/// Cross-validation summary.
#[derive(Debug, Clone, PartialEq)]
pub struct CVReport {
    pub fold_accuracies: Vec<f64>,
    pub mean_accuracy: f64,
    pub sd_accuracy: f64,
    /// Fraction correct per true class, aggregated over all held-out folds.
    pub per_class_accuracy: Vec<f64>,
    /// `confusion[true][predicted]`, aggregated over all held-out folds.
    pub confusion: Vec<Vec<usize>>,
}

/// Stratified k-fold cross-validation. Each fold trains a fresh model on the
/// other folds (with a fold-specific seed derived from `seed`) and is scored
/// once on the held-out fold.
pub fn cross_validate(
    features: &[FeatureVector],
    k: usize,
    hp: &Hyperparams,
    seed: u64,
) -> Result<CVReport> {
    let labels: Vec<u8> = features.iter().map(|fv| fv.label).collect();
    let folds = stratified_folds(&labels, k, seed)?;
    let present: Vec<usize> = (0..NUM_CLASSES)
        .filter(|&c| labels.iter().any(|&l| usize::from(l) == c))
        .collect();

    let mut fold_accuracies = Vec::with_capacity(k);
    let mut confusion = vec![vec![0usize; NUM_CLASSES]; NUM_CLASSES];
    for (f, fold) in folds.iter().enumerate() {
        let test: Vec<FeatureVector> = fold.iter().map(|&i| features[i].clone()).collect();
        let train: Vec<FeatureVector> = folds
            .iter()
            .enumerate()
            .filter(|(g, _)| *g != f)
            .flat_map(|(_, idxs)| idxs.iter().map(|&i| features[i].clone()))
            .collect();
        for &c in &present {
            if !train.iter().any(|fv| usize::from(fv.label) == c) {
                return Err(Error::invalid(format!(
                    "class {c} is absent from the training split of fold {f}"
                )));
            }
        }
        let fold_hp = Hyperparams {
            seed: derive_seed(seed, "cv-train", &[f as u64]),
            ..hp.clone()
        };
        let model = train_slp(&train, &fold_hp)?;
        let (acc, fold_confusion) = evaluate(&model, &test)?;
        fold_accuracies.push(acc);
        for (row, fold_row) in confusion.iter_mut().zip(fold_confusion.iter()) {
            for (cell, &add) in row.iter_mut().zip(fold_row.iter()) {
                *cell += add;
            }
        }
    }

    let mean = fold_accuracies.iter().sum::<f64>() / k as f64;
    let var = fold_accuracies
        .iter()
        .map(|a| (a - mean) * (a - mean))
        .sum::<f64>()
        / (k - 1) as f64;
    let per_class_accuracy: Vec<f64> = confusion
        .iter()
        .enumerate()
        .map(|(c, row)| {
            let total: usize = row.iter().sum();
            if total == 0 {
                0.0
            } else {
                row[c] as f64 / total as f64
            }
        })
        .collect();
    Ok(CVReport {
        fold_accuracies,
        mean_accuracy: mean,
        sd_accuracy: var.sqrt(),
        per_class_accuracy,
        confusion,
    })
}

/// Result of evaluating one later session against a model trained on an
/// earlier one, together with the spatially shuffled control.
#[derive(Debug, Clone, PartialEq)]
pub struct SessionEval {
    pub session: String,
    pub n_trials: usize,
    pub accuracy: f64,
    pub shuffled_accuracy: f64,
    pub confusion: Vec<Vec<usize>>,
}

/// Trains one model on `train` and evaluates it on every test session, both
/// as recorded and with each feature vector spatially shuffled (the chance
/// control).
pub fn cross_session_eval(
    train: &[FeatureVector],
    test_sessions: &[Vec<FeatureVector>],
    hp: &Hyperparams,
    seed: u64,
) -> Result<Vec<SessionEval>> {
    let model = train_slp(train, hp)?;
    let mut out = Vec::with_capacity(test_sessions.len());
    for (s, session) in test_sessions.iter().enumerate() {
        if session.is_empty() {
            return Err(Error::invalid("empty test session"));
        }
        let (accuracy, confusion) = evaluate(&model, session)?;
        let shuffled: Vec<FeatureVector> = session
            .iter()
            .enumerate()
            .map(|(t, fv)| {
                shuffle_spatial(fv, derive_seed(seed, "shuffle-control", &[s as u64, t as u64]))
            })
            .collect();
        let (shuffled_accuracy, _) = evaluate(&model, &shuffled)?;
        out.push(SessionEval {
            session: session[0].session.clone(),
            n_trials: session.len(),
            accuracy,
            shuffled_accuracy,
            confusion,
        });
    }
    Ok(out)
}

/// Serializes the affine map: magic, version, shapes, then weights in
/// class-major order and the bias, all little-endian.
pub fn write_model(model: &SLPModel) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + 8 * (model.weights.len() + model.bias.len()));
    out.extend_from_slice(MODEL_MAGIC);
    out.extend_from_slice(&MODEL_VERSION.to_le_bytes());
    out.extend_from_slice(&(NUM_CLASSES as u32).to_le_bytes());
    out.extend_from_slice(&(NUM_CHANNELS as u32).to_le_bytes());
    for c in 0..NUM_CLASSES {
        for f in 0..NUM_CHANNELS {
            out.extend_from_slice(&model.weights[f * NUM_CLASSES + c].to_le_bytes());
        }
    }
    for b in &model.bias {
        out.extend_from_slice(&b.to_le_bytes());
    }
    out
}

pub fn read_model(bytes: &[u8]) -> Result<SLPModel> {
    let mut cursor = bytes;
    let mut take = |n: usize| -> Result<&[u8]> {
        if cursor.len() < n {
            return Err(Error::format("model file truncated"));
        }
        let (head, tail) = cursor.split_at(n);
        cursor = tail;
        Ok(head)
    };
    if take(4)? != MODEL_MAGIC {
        return Err(Error::format("bad model magic"));
    }
    let version = u16::from_le_bytes(take(2)?.try_into().unwrap());
    if version != MODEL_VERSION {
        return Err(Error::format(format!("unsupported model version {version}")));
    }
    let n_classes = u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize;
    let n_features = u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize;
    if n_classes != NUM_CLASSES || n_features != NUM_CHANNELS {
        return Err(Error::format(format!(
            "model shape {n_classes} x {n_features} is not {NUM_CLASSES} x {NUM_CHANNELS}"
        )));
    }
    let mut weights = vec![0.0f64; NUM_CHANNELS * NUM_CLASSES];
    for c in 0..NUM_CLASSES {
        for f in 0..NUM_CHANNELS {
            let v = f64::from_le_bytes(take(8)?.try_into().unwrap());
            if !v.is_finite() {
                return Err(Error::format("non-finite weight in model file"));
            }
            weights[f * NUM_CLASSES + c] = v;
        }
    }
    let mut bias = vec![0.0f64; NUM_CLASSES];
    for b in bias.iter_mut() {
        let v = f64::from_le_bytes(take(8)?.try_into().unwrap());
        if !v.is_finite() {
            return Err(Error::format("non-finite bias in model file"));
        }
        *b = v;
    }
    if !cursor.is_empty() {
        return Err(Error::format(format!(
            "{} trailing bytes after model payload",
            cursor.len()
        )));
    }
    Ok(SLPModel {
        weights,
        bias,
        hp: None,
    })
}

pub fn write_model_file(model: &SLPModel, path: &Path) -> Result<()> {
    let mut file = std::fs::File::create(path)?;
    file.write_all(&write_model(model))?;
    Ok(())
}

pub fn read_model_file(path: &Path) -> Result<SLPModel> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    read_model(&bytes)
}
