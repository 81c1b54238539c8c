//! Layerwise diagnostic classifiers.
//!
//! A probe is one sigmoid unit `ŷ = σ(w·e + b)` applied to every word
//! embedding of a sentence. Training minimizes the summed per-word binary
//! cross-entropy with Adam; evaluation picks the highest-scoring word and
//! counts the sentence correct when that word carries the label.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::actstore::{locate_sentences, pool_words, ActivationSource, BundleError, EmbeddingLayer, Pooling};
use crate::tasks::{LabeledExample, TaskId};

pub const MODEL_SCHEMA: &str = "sesame-probe/1";

/// Misclassifications kept per evaluation.
pub const MAX_ERROR_CASES: usize = 20;

#[derive(Debug, Error)]
pub enum ProbeError {
    #[error(transparent)]
    Bundle(#[from] BundleError),
    #[error("example {index}: {message}")]
    Example { index: usize, message: String },
    #[error("hidden size mismatch: model has {model}, bundle has {bundle}")]
    Hidden { model: usize, bundle: usize },
    #[error("bad training configuration: {0}")]
    Config(String),
    #[error("no examples")]
    Empty,
    #[error("model file: {0}")]
    Format(String),
    #[error("model file i/o: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub epochs: usize,
    /// Sentences per Adam step.
    pub batch_size: usize,
    pub seed: u64,
    pub pooling: Pooling,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.001,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            epochs: 1,
            batch_size: 32,
            seed: 0,
            pooling: Pooling::FirstSubword,
        }
    }
}

impl TrainConfig {
    pub fn check(&self) -> Result<(), ProbeError> {
        let positive = [self.learning_rate, self.epsilon]
            .iter()
            .all(|&x| x > 0.0 && x.is_finite());
        let betas = [self.beta1, self.beta2].iter().all(|&b| (0.0..1.0).contains(&b));
        if !positive || !betas || self.epochs == 0 || self.batch_size == 0 {
            return Err(ProbeError::Config(format!("{self:?}")));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ProbeModel {
    pub task: TaskId,
    pub layer: EmbeddingLayer,
    pub pooling: Pooling,
    pub weights: Vec<f64>,
    pub bias: f64,
}

impl ProbeModel {
    pub fn zeros(task: TaskId, layer: EmbeddingLayer, hidden: usize, pooling: Pooling) -> Self {
        Self {
            task,
            layer,
            pooling,
            weights: vec![0.0; hidden],
            bias: 0.0,
        }
    }

    pub fn logit(&self, x: &[f32]) -> f64 {
        self.weights.iter().zip(x).map(|(w, &x)| w * f64::from(x)).sum::<f64>() + self.bias
    }

    pub fn logits(&self, words: &[Vec<f32>]) -> Vec<f64> {
        words.iter().map(|x| self.logit(x)).collect()
    }
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + e^z)` without overflow.
fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

/// Summed binary cross-entropy of one sentence.
pub fn sentence_loss(weights: &[f64], bias: f64, words: &[Vec<f32>], labels: &[u8]) -> f64 {
    words
        .iter()
        .zip(labels)
        .map(|(x, &y)| {
            let z = weights.iter().zip(x).map(|(w, &x)| w * f64::from(x)).sum::<f64>() + bias;
            // -[y log σ(z) + (1-y) log(1-σ(z))] = softplus(z) - y z
            softplus(z) - f64::from(y) * z
        })
        .sum()
}

/// Gradient of [`sentence_loss`] with respect to `(weights, bias)`,
/// accumulated into `grad` (length `weights.len() + 1`, bias last).
pub fn accumulate_gradient(weights: &[f64], bias: f64, words: &[Vec<f32>], labels: &[u8], grad: &mut [f64]) {
    let h = weights.len();
    for (x, &y) in words.iter().zip(labels) {
        let z = weights.iter().zip(x).map(|(w, &x)| w * f64::from(x)).sum::<f64>() + bias;
        let r = sigmoid(z) - f64::from(y);
        for (g, &x) in grad[..h].iter_mut().zip(x) {
            *g += r * f64::from(x);
        }
        grad[h] += r;
    }
}

/// Adam state over a flat parameter vector.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    pub fn new(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64], cfg: &TrainConfig) {
        self.t += 1;
        let c1 = 1.0 - cfg.beta1.powi(self.t);
        let c2 = 1.0 - cfg.beta2.powi(self.t);
        for i in 0..params.len() {
            self.m[i] = cfg.beta1 * self.m[i] + (1.0 - cfg.beta1) * grad[i];
            self.v[i] = cfg.beta2 * self.v[i] + (1.0 - cfg.beta2) * grad[i] * grad[i];
            let m_hat = self.m[i] / c1;
            let v_hat = self.v[i] / c2;
            params[i] -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.epsilon);
        }
    }
}

/// Lowest index among the maximal scores.
pub fn argmax_lowest(scores: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, &s) in scores.iter().enumerate() {
        match best {
            Some(b) if scores[b] >= s => {}
            _ => best = Some(i),
        }
    }
    best
}

/// Word vectors of every example at one layer, resolved against the
/// source once.
struct FeatureReader<'a> {
    source: &'a dyn ActivationSource,
    indices: Vec<usize>,
    layer: EmbeddingLayer,
    pooling: Pooling,
}

impl<'a> FeatureReader<'a> {
    fn new(
        examples: &[LabeledExample],
        source: &'a dyn ActivationSource,
        layer: EmbeddingLayer,
        pooling: Pooling,
    ) -> Result<Self, ProbeError> {
        let manifest = source.manifest();
        let indices = locate_sentences(manifest, examples.iter().map(|e| e.words.as_slice()))?;
        for (i, (ex, &s)) in examples.iter().zip(&indices).enumerate() {
            let n = manifest.sentences[s].words.len();
            if ex.labels.len() != n {
                return Err(ProbeError::Example {
                    index: i,
                    message: format!("{} labels for {n} words", ex.labels.len()),
                });
            }
        }
        Ok(Self {
            source,
            indices,
            layer,
            pooling,
        })
    }

    fn words(&self, example: usize) -> Result<Vec<Vec<f32>>, ProbeError> {
        let s = self.indices[example];
        let m = self.source.layer_embeddings(s, self.layer)?;
        let entry = self.source.entry(s)?;
        Ok(pool_words(
            &m,
            self.source.manifest().hidden,
            &entry.word_to_token,
            self.pooling,
        ))
    }
}

/// Trains a probe from zero on `examples` at `layer`.
pub fn train(
    examples: &[LabeledExample],
    source: &dyn ActivationSource,
    layer: EmbeddingLayer,
    cfg: &TrainConfig,
) -> Result<ProbeModel, ProbeError> {
    cfg.check()?;
    let first = examples.first().ok_or(ProbeError::Empty)?;
    let reader = FeatureReader::new(examples, source, layer, cfg.pooling)?;
    let h = source.manifest().hidden;
    let mut params = vec![0.0; h + 1];
    let mut adam = Adam::new(h + 1);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..examples.len()).collect();
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(cfg.batch_size) {
            let mut grad = vec![0.0; h + 1];
            let (w, b) = params.split_at(h);
            for &i in batch {
                let words = reader.words(i)?;
                accumulate_gradient(w, b[0], &words, &examples[i].labels, &mut grad);
            }
            adam.step(&mut params, &grad, cfg);
        }
    }
    let bias = params.pop().expect("bias present");
    Ok(ProbeModel {
        task: first.task,
        layer,
        pooling: cfg.pooling,
        weights: params,
        bias,
    })
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorCase {
    pub example: usize,
    pub predicted: usize,
    pub sentence: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub accuracy: f64,
    pub n: usize,
    pub errors: Vec<ErrorCase>,
}

/// Whether the lowest-index argmax of `scores` carries a positive label.
pub fn is_correct(scores: &[f64], labels: &[u8]) -> bool {
    argmax_lowest(scores).is_some_and(|i| labels.get(i) == Some(&1))
}

pub fn evaluate(
    model: &ProbeModel,
    examples: &[LabeledExample],
    source: &dyn ActivationSource,
) -> Result<Evaluation, ProbeError> {
    let hidden = source.manifest().hidden;
    if model.weights.len() != hidden {
        return Err(ProbeError::Hidden {
            model: model.weights.len(),
            bundle: hidden,
        });
    }
    if examples.is_empty() {
        return Err(ProbeError::Empty);
    }
    let reader = FeatureReader::new(examples, source, model.layer, model.pooling)?;
    let mut correct = 0;
    let mut errors = Vec::new();
    for (i, ex) in examples.iter().enumerate() {
        let scores = model.logits(&reader.words(i)?);
        if is_correct(&scores, &ex.labels) {
            correct += 1;
        } else if errors.len() < MAX_ERROR_CASES {
            errors.push(ErrorCase {
                example: i,
                predicted: argmax_lowest(&scores).unwrap_or(0),
                sentence: ex.sentence(),
            });
        }
    }
    Ok(Evaluation {
        accuracy: correct as f64 / examples.len() as f64,
        n: examples.len(),
        errors,
    })
}

/// Accuracy per layer on one evaluation split.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerwiseReport {
    pub split: String,
    pub layers: BTreeMap<EmbeddingLayer, Evaluation>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sweep {
    pub models: BTreeMap<EmbeddingLayer, ProbeModel>,
    pub reports: Vec<LayerwiseReport>,
}

/// Trains one independent probe per layer, in parallel, and evaluates each
/// on every named split.
pub fn sweep_layers(
    train_set: &[LabeledExample],
    eval_sets: &[(&str, &[LabeledExample])],
    source: &dyn ActivationSource,
    layers: &[EmbeddingLayer],
    cfg: &TrainConfig,
) -> Result<Sweep, ProbeError> {
    let runs: Vec<(ProbeModel, Vec<Evaluation>)> = layers
        .par_iter()
        .map(|&layer| {
            let model = train(train_set, source, layer, cfg)?;
            let evals = eval_sets
                .iter()
                .map(|(_, set)| evaluate(&model, set, source))
                .collect::<Result<Vec<_>, _>>()?;
            Ok((model, evals))
        })
        .collect::<Result<_, ProbeError>>()?;
    Ok(assemble(runs, eval_sets.iter().map(|(name, _)| *name)))
}

/// Evaluates saved models on every named split.
pub fn evaluate_models(
    models: Vec<ProbeModel>,
    eval_sets: &[(&str, &[LabeledExample])],
    source: &dyn ActivationSource,
) -> Result<Sweep, ProbeError> {
    let runs: Vec<(ProbeModel, Vec<Evaluation>)> = models
        .into_par_iter()
        .map(|model| {
            let evals = eval_sets
                .iter()
                .map(|(_, set)| evaluate(&model, set, source))
                .collect::<Result<Vec<_>, _>>()?;
            Ok((model, evals))
        })
        .collect::<Result<_, ProbeError>>()?;
    Ok(assemble(runs, eval_sets.iter().map(|(name, _)| *name)))
}

fn assemble<'a>(runs: Vec<(ProbeModel, Vec<Evaluation>)>, names: impl Iterator<Item = &'a str>) -> Sweep {
    let mut reports: Vec<LayerwiseReport> = names
        .map(|n| LayerwiseReport {
            split: n.to_string(),
            layers: BTreeMap::new(),
        })
        .collect();
    let mut models = BTreeMap::new();
    for (model, evals) in runs {
        for (report, e) in reports.iter_mut().zip(evals) {
            report.layers.insert(model.layer, e);
        }
        models.insert(model.layer, model);
    }
    Sweep { models, reports }
}

#[derive(Serialize, Deserialize)]
struct ModelHeader {
    schema: String,
    task: String,
    layer: String,
    hidden: usize,
    pooling: Pooling,
}

/// Writes `[u64 LE header length][JSON header][f32 LE weights][f32 LE bias]`.
pub fn write_model<W: Write>(mut w: W, model: &ProbeModel) -> Result<(), ProbeError> {
    let header = ModelHeader {
        schema: MODEL_SCHEMA.to_string(),
        task: model.task.to_string(),
        layer: model.layer.to_string(),
        hidden: model.weights.len(),
        pooling: model.pooling,
    };
    let json = serde_json::to_vec(&header).map_err(|e| ProbeError::Format(e.to_string()))?;
    w.write_all(&(json.len() as u64).to_le_bytes())?;
    w.write_all(&json)?;
    for &x in model.weights.iter().chain(std::iter::once(&model.bias)) {
        w.write_all(&(x as f32).to_le_bytes())?;
    }
    Ok(())
}

pub fn read_model<R: Read>(mut r: R) -> Result<ProbeModel, ProbeError> {
    let mut len = [0u8; 8];
    r.read_exact(&mut len)?;
    let len = u64::from_le_bytes(len);
    if len > 1 << 20 {
        return Err(ProbeError::Format(format!("header length {len} is implausible")));
    }
    let mut json = vec![0u8; len as usize];
    r.read_exact(&mut json)?;
    let header: ModelHeader = serde_json::from_slice(&json).map_err(|e| ProbeError::Format(e.to_string()))?;
    if header.schema != MODEL_SCHEMA {
        return Err(ProbeError::Format(format!("schema `{}`", header.schema)));
    }
    let task: TaskId = header.task.parse().map_err(|e| ProbeError::Format(format!("{e}")))?;
    let layer: EmbeddingLayer = header.layer.parse().map_err(ProbeError::Format)?;
    let mut payload = vec![0u8; (header.hidden + 1) * 4];
    r.read_exact(&mut payload)?;
    let mut values: Vec<f64> = payload
        .chunks_exact(4)
        .map(|c| f64::from(f32::from_le_bytes([c[0], c[1], c[2], c[3]])))
        .collect();
    let bias = values.pop().expect("bias present");
    if values.iter().chain([&bias]).any(|x| !x.is_finite()) {
        return Err(ProbeError::Format("non-finite parameter".into()));
    }
    Ok(ProbeModel {
        task,
        layer,
        pooling: header.pooling,
        weights: values,
        bias,
    })
}

pub fn save_model(path: impl AsRef<Path>, model: &ProbeModel) -> Result<(), ProbeError> {
    let f = std::fs::File::create(path)?;
    let mut w = std::io::BufWriter::new(f);
    write_model(&mut w, model)?;
    w.flush()?;
    Ok(())
}

pub fn load_model(path: impl AsRef<Path>) -> Result<ProbeModel, ProbeError> {
    read_model(std::io::BufReader::new(std::fs::File::open(path)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn argmax_examples() {
        assert!(is_correct(&[0.1, 0.9, 0.3], &[0, 1, 0]));
        assert!(!is_correct(&[0.5, 0.5], &[0, 1]));
        assert_eq!(argmax_lowest(&[]), None);
        assert_eq!(argmax_lowest(&[2.0, 3.0, 3.0, 1.0]), Some(1));
    }

    #[test]
    fn one_adam_step_by_hand() {
        // x = 2, y = 1, zero init: g_w = (σ(0) - 1) * 2 = -1, g_b = -0.5.
        let cfg = TrainConfig::default();
        let mut grad = vec![0.0; 2];
        accumulate_gradient(&[0.0], 0.0, &[vec![2.0]], &[1], &mut grad);
        assert_eq!(grad, vec![-1.0, -0.5]);
        let mut params = vec![0.0, 0.0];
        let mut adam = Adam::new(2);
        adam.step(&mut params, &grad, &cfg);
        // m̂ = g, v̂ = g², so the step is lr * g / (|g| + eps).
        let expect_w = 0.001 * 1.0 / (1.0 + 1e-8);
        let expect_b = 0.001 * 0.5 / (0.5 + 1e-8);
        assert!((params[0] - expect_w).abs() < 1e-15);
        assert!((params[1] - expect_b).abs() < 1e-15);
    }

    #[test]
    fn loss_at_zero_is_n_log_2() {
        let words = vec![vec![1.0, 2.0]; 3];
        let l = sentence_loss(&[0.0, 0.0], 0.0, &words, &[0, 1, 0]);
        assert!((l - 3.0 * 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn model_file_round_trip() {
        let m = ProbeModel {
            task: TaskId::NthToken(4),
            layer: EmbeddingLayer::PeMinusPos,
            pooling: Pooling::Mean,
            weights: vec![0.5, -1.25, 3.0],
            bias: 0.125,
        };
        let mut buf = Vec::new();
        write_model(&mut buf, &m).unwrap();
        assert_eq!(read_model(&buf[..]).unwrap(), m);
        buf[8] = b'[';
        assert!(read_model(&buf[..]).is_err());
    }

    #[test]
    fn config_rejects_bad_values() {
        let bad = TrainConfig {
            learning_rate: 0.0,
            ..TrainConfig::default()
        };
        assert!(bad.check().is_err());
        let bad = TrainConfig {
            beta2: 1.0,
            ..TrainConfig::default()
        };
        assert!(bad.check().is_err());
        TrainConfig::default().check().unwrap();
    }
}
