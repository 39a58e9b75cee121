use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::network::{cross_entropy, Gradients, NetworkModel};
use super::tensor::Tensor;
use crate::data::Sample;
use crate::error::{Error, Result};
use crate::rng;

/// In-memory labelled images, each of shape `item_shape`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub item_shape: Vec<usize>,
    pub inputs: Vec<f64>,
    pub labels: Vec<i32>,
}

impl Dataset {
    pub fn new(item_shape: Vec<usize>, inputs: Vec<f64>, labels: Vec<i32>) -> Result<Self> {
        let s: usize = item_shape.iter().product();
        if s == 0 || inputs.len() != s * labels.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} values for {} items of shape {item_shape:?}",
                inputs.len(),
                labels.len()
            )));
        }
        Ok(Dataset {
            item_shape,
            inputs,
            labels,
        })
    }

    pub fn from_samples(samples: &[Sample]) -> Result<Self> {
        let first = samples.first().ok_or_else(|| Error::EmptyInput("no samples".into()))?;
        let p = &first.profile;
        let shape = vec![p.channels, p.height, p.width];
        let mut inputs = Vec::with_capacity(samples.len() * p.data.len());
        let mut labels = Vec::with_capacity(samples.len());
        for s in samples {
            let q = &s.profile;
            if [q.channels, q.height, q.width] != shape[..] {
                return Err(Error::ShapeMismatch(format!(
                    "profile {}x{}x{} differs from {shape:?}",
                    q.channels, q.height, q.width
                )));
            }
            inputs.extend(q.data.iter().map(|v| f64::from(*v)));
            labels.push(s.chern);
        }
        Dataset::new(shape, inputs, labels)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    fn item_len(&self) -> usize {
        self.item_shape.iter().product()
    }

    /// Sorted distinct labels.
    pub fn classes(&self) -> Vec<i32> {
        let mut c = self.labels.clone();
        c.sort_unstable();
        c.dedup();
        c
    }

    pub fn batch(&self, indices: &[usize]) -> Tensor {
        let s = self.item_len();
        let mut data = Vec::with_capacity(indices.len() * s);
        for &i in indices {
            data.extend_from_slice(&self.inputs[i * s..(i + 1) * s]);
        }
        let mut shape = vec![indices.len()];
        shape.extend_from_slice(&self.item_shape);
        Tensor { shape, data }
    }

    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            item_shape: self.item_shape.clone(),
            inputs: self.batch(indices).data,
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub batch: usize,
    pub iters: usize,
    pub lr: f64,
    pub lr_decay: f64,
    pub decay_every: usize,
    pub val_every: usize,
    pub seed: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch: 64,
            iters: 1000,
            lr: 1e-4,
            lr_decay: 0.9,
            decay_every: 100,
            val_every: 50,
            seed: 0,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch == 0 || self.iters == 0 || self.decay_every == 0 || self.val_every == 0 {
            return Err(Error::InvalidParameter(
                "batch, iters and schedule steps must be positive".into(),
            ));
        }
        if !(self.lr > 0.0 && self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return Err(Error::InvalidParameter(format!(
                "bad learning-rate schedule {} x {}",
                self.lr, self.lr_decay
            )));
        }
        Ok(())
    }

    /// Step-decayed learning rate at zero-based iteration `it`.
    pub fn lr_at(&self, it: usize) -> f64 {
        self.lr * self.lr_decay.powi((it / self.decay_every) as i32)
    }
}

/// Adam moment estimates for every parameter tensor of a model.
#[derive(Debug, Clone)]
pub struct Adam {
    m: Gradients,
    v: Gradients,
    t: i32,
}

impl Adam {
    pub fn new(model: &NetworkModel) -> Self {
        Adam {
            m: model.zero_grads(),
            v: model.zero_grads(),
            t: 0,
        }
    }

    pub fn step(&mut self, model: &mut NetworkModel, grads: &Gradients, lr: f64, cfg: &TrainConfig) {
        self.t += 1;
        let (b1, b2) = (cfg.beta1, cfg.beta2);
        let c1 = 1.0 - b1.powi(self.t);
        let c2 = 1.0 - b2.powi(self.t);
        let step = lr * c2.sqrt() / c1;
        let eps = cfg.epsilon * c2.sqrt();
        for (li, layer) in model.layers.iter_mut().enumerate() {
            for (pi, w) in layer.params_mut().into_iter().enumerate() {
                let g = &grads[li][pi];
                let m = &mut self.m[li][pi];
                let v = &mut self.v[li][pi];
                for j in 0..w.len() {
                    m[j] = b1 * m[j] + (1.0 - b1) * g[j];
                    v[j] = b2 * v[j] + (1.0 - b2) * g[j] * g[j];
                    w[j] -= step * m[j] / (v[j].sqrt() + eps);
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub classes: Vec<i32>,
    pub per_class_accuracy: BTreeMap<i32, f64>,
    pub overall: f64,
    /// `confusion[true][predicted]`, indexed like `classes`.
    pub confusion: Vec<Vec<u64>>,
    #[serde(default)]
    pub loss: Option<f64>,
}

impl Metrics {
    pub fn from_predictions(classes: &[i32], truth: &[i32], predicted: &[i32]) -> Result<Self> {
        if truth.len() != predicted.len() {
            return Err(Error::LengthMismatch(truth.len(), predicted.len()));
        }
        if truth.is_empty() {
            return Err(Error::EmptyInput("no predictions to score".into()));
        }
        let index = |c: i32| {
            classes
                .iter()
                .position(|&k| k == c)
                .ok_or_else(|| Error::InvalidParameter(format!("label {c} not among classes {classes:?}")))
        };
        let k = classes.len();
        let mut confusion = vec![vec![0u64; k]; k];
        for (&t, &p) in truth.iter().zip(predicted) {
            confusion[index(t)?][index(p)?] += 1;
        }
        let correct: u64 = (0..k).map(|i| confusion[i][i]).sum();
        let per_class_accuracy = classes
            .iter()
            .enumerate()
            .filter_map(|(i, &c)| {
                let n: u64 = confusion[i].iter().sum();
                (n > 0).then(|| (c, confusion[i][i] as f64 / n as f64))
            })
            .collect();
        Ok(Metrics {
            classes: classes.to_vec(),
            per_class_accuracy,
            overall: correct as f64 / truth.len() as f64,
            confusion,
            loss: None,
        })
    }

    pub fn class_count(&self, label: i32) -> u64 {
        self.classes
            .iter()
            .position(|&c| c == label)
            .map_or(0, |i| self.confusion[i].iter().sum())
    }
}

pub const EVAL_BATCH: usize = 64;

/// Predicted labels, output probabilities and mean cross-entropy.
pub fn predict(model: &NetworkModel, data: &Dataset) -> Result<(Vec<i32>, Vec<Vec<f64>>, f64)> {
    let mut labels = Vec::with_capacity(data.len());
    let mut probs = Vec::with_capacity(data.len());
    let mut loss = 0.0;
    let idx: Vec<usize> = (0..data.len()).collect();
    for chunk in idx.chunks(EVAL_BATCH) {
        let out = model.forward(&data.batch(chunk))?;
        let k = out.shape[1];
        let targets: Vec<usize> = chunk
            .iter()
            .map(|&i| {
                model
                    .classes
                    .iter()
                    .position(|&c| c == data.labels[i])
                    .unwrap_or(usize::MAX)
            })
            .collect();
        if targets.iter().all(|&t| t < k) {
            loss += cross_entropy(&out, &targets)? * chunk.len() as f64;
        } else {
            loss = f64::NAN;
        }
        for row in out.data.chunks(k) {
            let best = row
                .iter()
                .enumerate()
                .fold(0, |b, (j, v)| if *v > row[b] { j } else { b });
            labels.push(model.classes[best]);
            probs.push(row.to_vec());
        }
    }
    Ok((labels, probs, loss / data.len().max(1) as f64))
}

pub fn evaluate(model: &NetworkModel, data: &Dataset) -> Result<Metrics> {
    if data.is_empty() {
        return Err(Error::EmptyInput("empty evaluation set".into()));
    }
    let (pred, _, loss) = predict(model, data)?;
    let mut m = Metrics::from_predictions(&model.classes, &data.labels, &pred)?;
    m.loss = loss.is_finite().then_some(loss);
    Ok(m)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationPoint {
    pub iteration: usize,
    pub accuracy: f64,
    pub loss: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: NetworkModel,
    /// Mini-batch loss at every iteration.
    pub loss_curve: Vec<f64>,
    pub validation: Vec<ValidationPoint>,
    pub best_iteration: usize,
    pub metrics: Metrics,
}

/// Mini-batch cross-entropy descent with Adam and a step-decayed learning rate.
/// Returns the model with the best validation accuracy (ties go to lower loss).
pub fn train_supervised(
    model: NetworkModel,
    cfg: &TrainConfig,
    train: &Dataset,
    val: &Dataset,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train.is_empty() || val.is_empty() {
        return Err(Error::EmptyInput(
            "training and validation sets must be nonempty".into(),
        ));
    }
    let targets: Vec<usize> = train
        .labels
        .iter()
        .map(|l| {
            model
                .classes
                .iter()
                .position(|c| c == l)
                .ok_or_else(|| Error::InvalidParameter(format!("label {l} has no output unit")))
        })
        .collect::<Result<_>>()?;

    let mut model = model;
    let mut adam = Adam::new(&model);
    let mut rng = rng::stream(cfg.seed, 1);
    let mut order: Vec<usize> = (0..train.len()).collect();
    order.shuffle(&mut rng);
    let mut cursor = 0;

    let mut loss_curve = Vec::with_capacity(cfg.iters);
    let mut validation = Vec::new();
    let mut best: Option<(f64, f64, usize, NetworkModel)> = None;

    for it in 0..cfg.iters {
        let mut idx = Vec::with_capacity(cfg.batch);
        while idx.len() < cfg.batch.min(train.len()) {
            if cursor == order.len() {
                order.shuffle(&mut rng);
                cursor = 0;
            }
            idx.push(order[cursor]);
            cursor += 1;
        }
        let x = train.batch(&idx);
        let t: Vec<usize> = idx.iter().map(|&i| targets[i]).collect();
        let (loss, grads) = model.loss_and_gradients(&x, &t)?;
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss { iteration: it + 1 });
        }
        loss_curve.push(loss);
        adam.step(&mut model, &grads, cfg.lr_at(it), cfg);

        let done = it + 1;
        if done % cfg.val_every == 0 || done == cfg.iters {
            let m = evaluate(&model, val)?;
            let vloss = m.loss.unwrap_or(f64::INFINITY);
            validation.push(ValidationPoint {
                iteration: done,
                accuracy: m.overall,
                loss: vloss,
            });
            let better = match &best {
                None => true,
                Some((acc, bl, _, _)) => m.overall > *acc || (m.overall == *acc && vloss < *bl),
            };
            if better {
                best = Some((m.overall, vloss, done, model.clone()));
            }
        }
    }
    let (_, _, best_iteration, model) = best.expect("at least one validation pass");
    let metrics = evaluate(&model, val)?;
    Ok(TrainOutcome {
        model,
        loss_curve,
        validation,
        best_iteration,
        metrics,
    })
}
