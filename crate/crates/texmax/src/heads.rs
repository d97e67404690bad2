//! Trainable linear heads over frozen texture descriptors: per-tap K-class
//! softmax classifiers and one-vs-rest logistic phrase scorers.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::descriptor::TextureDescriptor;
use crate::error::{Error, Result};

mod io;
pub use io::{load_heads, load_phrases, save_heads, save_phrases};

/// Default phrase-list length, matching the phrase-cloud presentation.
pub const DEFAULT_TOP_K: usize = 20;

#[derive(Debug, Clone, PartialEq)]
pub struct TapHead {
    /// Descriptor length Dᵢ² this head consumes.
    pub dim: usize,
    /// Row-major [K][dim].
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

/// One softmax classifier per tap over a shared class table.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftmaxHead {
    pub class_names: Vec<String>,
    pub taps: Vec<TapHead>,
}

impl SoftmaxHead {
    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.num_classes();
        if k < 2 {
            return Err(Error::config("softmax head needs at least 2 classes"));
        }
        if self.taps.is_empty() {
            return Err(Error::config("softmax head has no tap heads"));
        }
        for (i, tap) in self.taps.iter().enumerate() {
            if tap.weights.len() != k * tap.dim || tap.bias.len() != k {
                return Err(Error::config(format!("tap head {i} has inconsistent dims")));
            }
            if tap.weights.iter().chain(&tap.bias).any(|v| !v.is_finite()) {
                return Err(Error::numeric(format!("tap head {i} has non-finite weights")));
            }
        }
        Ok(())
    }
}

/// One-vs-rest logistic scorers over the concatenated per-tap descriptor.
#[derive(Debug, Clone, PartialEq)]
pub struct PhraseModel {
    pub phrases: Vec<String>,
    pub dim: usize,
    /// Row-major [phrase][dim].
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl PhraseModel {
    pub fn validate(&self) -> Result<()> {
        let p = self.phrases.len();
        if self.weights.len() != p * self.dim || self.bias.len() != p {
            return Err(Error::config("phrase model has inconsistent dims"));
        }
        let mut seen = std::collections::HashSet::new();
        for ph in &self.phrases {
            if ph.trim().is_empty() {
                return Err(Error::data("empty phrase in lexicon"));
            }
            if !seen.insert(ph.as_str()) {
                return Err(Error::data(format!("duplicate phrase {ph:?} in lexicon")));
            }
        }
        if self.weights.iter().chain(&self.bias).any(|v| !v.is_finite()) {
            return Err(Error::numeric("non-finite phrase weights"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub weight_decay: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.1,
            epochs: 200,
            batch_size: 32,
            weight_decay: 1e-4,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.learning_rate <= 0.0
            || !self.learning_rate.is_finite()
            || self.epochs == 0
            || self.batch_size == 0
            || self.weight_decay < 0.0
        {
            return Err(Error::config("train config fields must be positive"));
        }
        Ok(())
    }
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - m).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

fn log_sum_exp(logits: &[f64]) -> f64 {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    m + logits.iter().map(|z| (z - m).exp()).sum::<f64>().ln()
}

fn tap_logits(tap: &TapHead, d: &[f64]) -> Vec<f64> {
    let k = tap.bias.len();
    let mut z = tap.bias.clone();
    for (c, zc) in z.iter_mut().enumerate().take(k) {
        let row = &tap.weights[c * tap.dim..(c + 1) * tap.dim];
        *zc += row.iter().zip(d).map(|(w, x)| w * x).sum::<f64>();
    }
    z
}

/// Per-tap class probability vectors for one descriptor.
pub fn predict_proba(desc: &TextureDescriptor, head: &SoftmaxHead) -> Result<Vec<Vec<f64>>> {
    if desc.taps.len() != head.taps.len() {
        return Err(Error::config(format!(
            "descriptor has {} taps, head has {}",
            desc.taps.len(),
            head.taps.len()
        )));
    }
    let mut out = Vec::with_capacity(head.taps.len());
    for (tap_head, tap_desc) in head.taps.iter().zip(&desc.taps) {
        if tap_head.dim != tap_desc.vector.len() {
            return Err(Error::config(format!(
                "tap descriptor length {} does not match head dim {}",
                tap_desc.vector.len(),
                tap_head.dim
            )));
        }
        out.push(softmax(&tap_logits(tap_head, &tap_desc.vector)));
    }
    Ok(out)
}

/// Softmax cross-entropy from probabilities: (-ln p_target, probs - one_hot).
pub fn cross_entropy(probs: &[f64], target: usize) -> Result<(f64, Vec<f64>)> {
    if target >= probs.len() {
        return Err(Error::config(format!(
            "target class {target} out of range for {} classes",
            probs.len()
        )));
    }
    let loss = -probs[target].max(1e-300).ln();
    let mut grad = probs.to_vec();
    grad[target] -= 1.0;
    Ok((loss, grad))
}

/// Numerically stable cross-entropy straight from logits; same gradient
/// convention as [`cross_entropy`].
pub fn cross_entropy_from_logits(logits: &[f64], target: usize) -> Result<(f64, Vec<f64>)> {
    if target >= logits.len() {
        return Err(Error::config(format!(
            "target class {target} out of range for {} classes",
            logits.len()
        )));
    }
    let loss = log_sum_exp(logits) - logits[target];
    let mut grad = softmax(logits);
    grad[target] -= 1.0;
    Ok((loss, grad))
}

fn check_descriptor_batch(descriptors: &[TextureDescriptor]) -> Result<Vec<usize>> {
    let first = descriptors
        .first()
        .ok_or_else(|| Error::data("empty training set"))?;
    let dims: Vec<usize> = first.taps.iter().map(|t| t.vector.len()).collect();
    for (i, d) in descriptors.iter().enumerate() {
        let got: Vec<usize> = d.taps.iter().map(|t| t.vector.len()).collect();
        if got != dims {
            return Err(Error::data(format!("descriptor {i} has mismatched tap dims")));
        }
    }
    Ok(dims)
}

/// Trains one softmax head per tap with minibatch SGD on mean cross-entropy
/// plus (λ/2)‖W‖². Returns the heads and the per-epoch mean loss summed over
/// taps.
pub fn train_softmax(
    descriptors: &[TextureDescriptor],
    labels: &[usize],
    class_names: &[String],
    cfg: &TrainConfig,
) -> Result<(SoftmaxHead, Vec<f64>)> {
    cfg.validate()?;
    let k = class_names.len();
    if k < 2 {
        return Err(Error::data("need at least 2 classes"));
    }
    if labels.len() != descriptors.len() {
        return Err(Error::data("label count does not match descriptor count"));
    }
    for class in 0..k {
        if !labels.contains(&class) {
            return Err(Error::data(format!(
                "class {:?} has no training examples",
                class_names[class]
            )));
        }
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
        return Err(Error::data(format!("label {bad} out of range for {k} classes")));
    }
    let dims = check_descriptor_batch(descriptors)?;

    let results: Vec<Result<(TapHead, Vec<f64>)>> = dims
        .par_iter()
        .enumerate()
        .map(|(tap_idx, &dim)| {
            let data: Vec<&[f64]> = descriptors
                .iter()
                .map(|d| d.taps[tap_idx].vector.as_slice())
                .collect();
            train_linear_softmax(&data, labels, k, dim, cfg, cfg.seed ^ tap_idx as u64)
        })
        .collect();

    let mut taps = Vec::with_capacity(dims.len());
    let mut trace = vec![0.0; cfg.epochs];
    for r in results {
        let (tap, tap_trace) = r?;
        for (t, v) in trace.iter_mut().zip(tap_trace) {
            *t += v;
        }
        taps.push(tap);
    }
    let head = SoftmaxHead {
        class_names: class_names.to_vec(),
        taps,
    };
    head.validate()?;
    Ok((head, trace))
}

fn train_linear_softmax(
    data: &[&[f64]],
    labels: &[usize],
    k: usize,
    dim: usize,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<(TapHead, Vec<f64>)> {
    let n = data.len();
    let mut weights = vec![0.0; k * dim];
    let mut bias = vec![0.0; k];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..n).collect();
    let mut trace = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let mut grad_w = vec![0.0; k * dim];
            let mut grad_b = vec![0.0; k];
            for &i in batch {
                let x = data[i];
                let mut logits = bias.clone();
                for (c, z) in logits.iter_mut().enumerate() {
                    *z += weights[c * dim..(c + 1) * dim]
                        .iter()
                        .zip(x)
                        .map(|(w, v)| w * v)
                        .sum::<f64>();
                }
                let (loss, g) = cross_entropy_from_logits(&logits, labels[i])?;
                epoch_loss += loss;
                for c in 0..k {
                    if g[c] == 0.0 {
                        continue;
                    }
                    let row = &mut grad_w[c * dim..(c + 1) * dim];
                    for (r, &v) in row.iter_mut().zip(x) {
                        *r += g[c] * v;
                    }
                    grad_b[c] += g[c];
                }
            }
            let scale = cfg.learning_rate / batch.len() as f64;
            let decay = cfg.learning_rate * cfg.weight_decay;
            for (w, g) in weights.iter_mut().zip(&grad_w) {
                *w -= scale * g + decay * *w;
            }
            for (b, g) in bias.iter_mut().zip(&grad_b) {
                *b -= scale * g;
            }
        }
        let mean_loss = epoch_loss / n as f64;
        if !mean_loss.is_finite() || mean_loss > 1e6 {
            return Err(Error::numeric(format!(
                "softmax training diverged at epoch {epoch} (loss {mean_loss})"
            )));
        }
        trace.push(mean_loss);
    }
    Ok((TapHead { dim, weights, bias }, trace))
}

/// Builds the phrase lexicon from per-image annotations and trains an
/// independent logistic scorer per phrase on concatenated descriptors.
pub fn train_phrases(
    descriptors: &[TextureDescriptor],
    phrase_sets: &[Vec<String>],
    cfg: &TrainConfig,
) -> Result<PhraseModel> {
    cfg.validate()?;
    if descriptors.len() != phrase_sets.len() {
        return Err(Error::data("phrase annotation count does not match descriptors"));
    }
    check_descriptor_batch(descriptors)?;
    let mut lexicon: Vec<String> = phrase_sets
        .iter()
        .flatten()
        .map(|p| p.trim().to_string())
        .filter(|p| !p.is_empty())
        .collect();
    lexicon.sort();
    lexicon.dedup();
    if lexicon.is_empty() {
        return Err(Error::data("no phrases in annotations"));
    }

    let data: Vec<Vec<f64>> = descriptors.iter().map(|d| d.concat()).collect();
    let dim = data[0].len();

    let rows: Vec<Result<(Vec<f64>, f64)>> = lexicon
        .par_iter()
        .enumerate()
        .map(|(pi, phrase)| {
            let targets: Vec<bool> = phrase_sets
                .iter()
                .map(|set| set.iter().any(|p| p.trim() == phrase))
                .collect();
            if !targets.iter().any(|&t| t) {
                return Err(Error::data(format!("phrase {phrase:?} has no positive examples")));
            }
            train_logistic(&data, &targets, cfg, cfg.seed ^ (0x5851 + pi as u64))
        })
        .collect();

    let mut weights = Vec::with_capacity(lexicon.len() * dim);
    let mut bias = Vec::with_capacity(lexicon.len());
    for r in rows {
        let (w, b) = r?;
        weights.extend(w);
        bias.push(b);
    }
    let model = PhraseModel {
        phrases: lexicon,
        dim,
        weights,
        bias,
    };
    model.validate()?;
    Ok(model)
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn train_logistic(
    data: &[Vec<f64>],
    targets: &[bool],
    cfg: &TrainConfig,
    seed: u64,
) -> Result<(Vec<f64>, f64)> {
    let n = data.len();
    let dim = data[0].len();
    let mut w = vec![0.0; dim];
    let mut b = 0.0;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..n).collect();
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let mut grad_w = vec![0.0; dim];
            let mut grad_b = 0.0;
            for &i in batch {
                let x = &data[i];
                let z = b + w.iter().zip(x).map(|(wi, xi)| wi * xi).sum::<f64>();
                let y = if targets[i] { 1.0 } else { 0.0 };
                // softplus form of the logistic loss
                epoch_loss += z.max(0.0) - z * y + (-z.abs()).exp().ln_1p();
                let g = sigmoid(z) - y;
                for (gw, &xi) in grad_w.iter_mut().zip(x) {
                    *gw += g * xi;
                }
                grad_b += g;
            }
            let scale = cfg.learning_rate / batch.len() as f64;
            let decay = cfg.learning_rate * cfg.weight_decay;
            for (wi, g) in w.iter_mut().zip(&grad_w) {
                *wi -= scale * g + decay * *wi;
            }
            b -= scale * grad_b;
        }
        if !epoch_loss.is_finite() || epoch_loss / n as f64 > 1e6 {
            return Err(Error::numeric(format!(
                "phrase training diverged at epoch {epoch}"
            )));
        }
    }
    Ok((w, b))
}

/// Scores every phrase against a descriptor, sorted by descending
/// probability with ties kept in lexicon order.
pub fn score_phrases(desc: &TextureDescriptor, model: &PhraseModel) -> Result<Vec<(String, f64)>> {
    score_phrases_concat(&desc.concat(), model)
}

/// [`score_phrases`] on an already-concatenated descriptor vector.
pub fn score_phrases_concat(x: &[f64], model: &PhraseModel) -> Result<Vec<(String, f64)>> {
    if x.len() != model.dim {
        return Err(Error::config(format!(
            "descriptor length {} does not match phrase model dim {}",
            x.len(),
            model.dim
        )));
    }
    let mut scored: Vec<(String, f64)> = model
        .phrases
        .iter()
        .enumerate()
        .map(|(pi, phrase)| {
            let row = &model.weights[pi * model.dim..(pi + 1) * model.dim];
            let z = model.bias[pi] + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>();
            (phrase.clone(), sigmoid(z))
        })
        .collect();
    scored.sort_by(|a, b| b.1.partial_cmp(&a.1).expect("probabilities are finite"));
    Ok(scored)
}

/// Mean class probabilities across taps, the layer ensemble.
pub fn ensemble_proba(per_tap: &[Vec<f64>]) -> Vec<f64> {
    let k = per_tap[0].len();
    let mut mean = vec![0.0; k];
    for probs in per_tap {
        for (m, p) in mean.iter_mut().zip(probs) {
            *m += p;
        }
    }
    for m in &mut mean {
        *m /= per_tap.len() as f64;
    }
    mean
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

/// Per-tap and mean-of-probabilities ensemble accuracy on a labeled set.
pub fn evaluate_accuracy(
    head: &SoftmaxHead,
    descriptors: &[TextureDescriptor],
    labels: &[usize],
) -> Result<(Vec<f64>, f64)> {
    let m = head.taps.len();
    let mut per_tap_hits = vec![0usize; m];
    let mut ensemble_hits = 0usize;
    for (desc, &label) in descriptors.iter().zip(labels) {
        let per_tap = predict_proba(desc, head)?;
        for (hits, probs) in per_tap_hits.iter_mut().zip(&per_tap) {
            if argmax(probs) == label {
                *hits += 1;
            }
        }
        if argmax(&ensemble_proba(&per_tap)) == label {
            ensemble_hits += 1;
        }
    }
    let n = descriptors.len() as f64;
    Ok((
        per_tap_hits.iter().map(|&h| h as f64 / n).collect(),
        ensemble_hits as f64 / n,
    ))
}

/// Average precision of a ranked binary-relevance list.
pub fn average_precision(scores: &[f64], relevant: &[bool]) -> f64 {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).expect("finite scores"));
    let total = relevant.iter().filter(|&&r| r).count();
    if total == 0 {
        return 0.0;
    }
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (rank, &i) in order.iter().enumerate() {
        if relevant[i] {
            hits += 1;
            sum += hits as f64 / (rank + 1) as f64;
        }
    }
    sum / total as f64
}
