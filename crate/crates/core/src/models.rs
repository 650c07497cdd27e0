//! Local training models with hand-derived gradients, registered by name.
//!
//! All models work on a flat parameter vector so the training engine can
//! treat them uniformly. Gradients are exact analytic derivatives of the
//! mean loss; finite-difference checks live in the test suites.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::datasets::LabeledDataset;
use crate::error::{Error, Result};

/// A differentiable model over a flat parameter vector.
pub trait Model: Send + Sync {
    fn name(&self) -> &'static str;
    fn param_len(&self) -> usize;
    fn init_params(&self, rng: &mut ChaCha8Rng) -> Vec<f64>;
    /// Mean loss over the dataset, or over `subset` rows when given.
    fn mean_loss(&self, params: &[f64], data: &LabeledDataset, subset: Option<&[usize]>) -> f64;
    /// Gradient of [`Model::mean_loss`] with respect to the parameters.
    fn mean_gradient(&self, params: &[f64], data: &LabeledDataset, subset: Option<&[usize]>) -> Vec<f64>;
    /// Fraction of samples the model handles correctly, in `[0, 1]`.
    fn accuracy(&self, params: &[f64], data: &LabeledDataset) -> f64;
}

/// Registered model names, in registry order.
pub fn model_names() -> &'static [&'static str] {
    &["quadratic", "linear", "logistic", "mlp"]
}

/// Build a model by registry name, sized for the given dataset shape.
pub fn build_model(
    kind: &str,
    num_features: usize,
    num_classes: usize,
    hidden: &[usize],
) -> Result<Box<dyn Model>> {
    match kind {
        "quadratic" => Ok(Box::new(QuadraticModel { dim: num_features })),
        "linear" => Ok(Box::new(LinearRegression { num_features })),
        "logistic" => {
            if num_classes < 2 {
                return Err(Error::InvalidInput(format!(
                    "logistic model needs at least 2 classes, got {num_classes}"
                )));
            }
            Ok(Box::new(LogisticRegression {
                num_features,
                num_classes,
            }))
        }
        "mlp" => {
            if hidden.len() != 2 || hidden.contains(&0) {
                return Err(Error::InvalidInput(
                    "mlp model needs exactly two positive hidden sizes".into(),
                ));
            }
            if num_classes < 2 {
                return Err(Error::InvalidInput(format!(
                    "mlp model needs at least 2 classes, got {num_classes}"
                )));
            }
            Ok(Box::new(MlpClassifier {
                num_features,
                hidden: [hidden[0], hidden[1]],
                num_classes,
            }))
        }
        other => Err(Error::Config(format!(
            "unknown model kind `{other}`; available: {}",
            model_names().join(", ")
        ))),
    }
}

fn rows(data: &LabeledDataset, subset: Option<&[usize]>) -> Vec<usize> {
    match subset {
        Some(indices) => indices.to_vec(),
        None => (0..data.len()).collect(),
    }
}

/// Mean squared distance to the dataset's feature rows: each sample is a
/// target point and the loss is half the squared distance to it. Useful as a
/// convex diagnostic objective with a closed-form minimum.
pub struct QuadraticModel {
    pub dim: usize,
}

impl Model for QuadraticModel {
    fn name(&self) -> &'static str {
        "quadratic"
    }

    fn param_len(&self) -> usize {
        self.dim
    }

    fn init_params(&self, _rng: &mut ChaCha8Rng) -> Vec<f64> {
        vec![0.0; self.dim]
    }

    fn mean_loss(&self, params: &[f64], data: &LabeledDataset, subset: Option<&[usize]>) -> f64 {
        let rows = rows(data, subset);
        let mut acc = 0.0;
        for &i in &rows {
            acc += params
                .iter()
                .zip(data.feature_row(i))
                .map(|(t, x)| 0.5 * (t - x) * (t - x))
                .sum::<f64>();
        }
        acc / rows.len() as f64
    }

    fn mean_gradient(&self, params: &[f64], data: &LabeledDataset, subset: Option<&[usize]>) -> Vec<f64> {
        let rows = rows(data, subset);
        let mut grad = vec![0.0; self.dim];
        for &i in &rows {
            for (g, (t, x)) in grad.iter_mut().zip(params.iter().zip(data.feature_row(i))) {
                *g += t - x;
            }
        }
        let n = rows.len() as f64;
        for g in &mut grad {
            *g /= n;
        }
        grad
    }

    fn accuracy(&self, params: &[f64], data: &LabeledDataset) -> f64 {
        // Diagnostic score in (0, 1]: approaches 1 as the loss approaches 0.
        1.0 / (1.0 + self.mean_loss(params, data, None))
    }
}

/// Linear regression with squared loss; parameters are `[weights..., bias]`.
pub struct LinearRegression {
    pub num_features: usize,
}

impl LinearRegression {
    fn predict(&self, params: &[f64], x: &[f64]) -> f64 {
        params[..self.num_features]
            .iter()
            .zip(x)
            .map(|(w, xi)| w * xi)
            .sum::<f64>()
            + params[self.num_features]
    }
}

impl Model for LinearRegression {
    fn name(&self) -> &'static str {
        "linear"
    }

    fn param_len(&self) -> usize {
        self.num_features + 1
    }

    fn init_params(&self, _rng: &mut ChaCha8Rng) -> Vec<f64> {
        vec![0.0; self.param_len()]
    }

    fn mean_loss(&self, params: &[f64], data: &LabeledDataset, subset: Option<&[usize]>) -> f64 {
        let rows = rows(data, subset);
        let mut acc = 0.0;
        for &i in &rows {
            let target = data.real_label(i).unwrap_or_else(|| {
                data.class_label(i).map(|c| c as f64).unwrap_or(0.0)
            });
            let r = self.predict(params, data.feature_row(i)) - target;
            acc += 0.5 * r * r;
        }
        acc / rows.len() as f64
    }

    fn mean_gradient(&self, params: &[f64], data: &LabeledDataset, subset: Option<&[usize]>) -> Vec<f64> {
        let rows = rows(data, subset);
        let mut grad = vec![0.0; self.param_len()];
        for &i in &rows {
            let target = data.real_label(i).unwrap_or_else(|| {
                data.class_label(i).map(|c| c as f64).unwrap_or(0.0)
            });
            let r = self.predict(params, data.feature_row(i)) - target;
            for (g, x) in grad[..self.num_features].iter_mut().zip(data.feature_row(i)) {
                *g += r * x;
            }
            grad[self.num_features] += r;
        }
        let n = rows.len() as f64;
        for g in &mut grad {
            *g /= n;
        }
        grad
    }

    fn accuracy(&self, params: &[f64], data: &LabeledDataset) -> f64 {
        // Hit rate within half a unit of the target.
        let mut hits = 0;
        for i in 0..data.len() {
            let target = data.real_label(i).unwrap_or_else(|| {
                data.class_label(i).map(|c| c as f64).unwrap_or(0.0)
            });
            if (self.predict(params, data.feature_row(i)) - target).abs() <= 0.5 {
                hits += 1;
            }
        }
        hits as f64 / data.len() as f64
    }
}

/// Numerically stable `log(sum(exp(z)))`.
fn log_sum_exp(logits: &[f64]) -> f64 {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + logits.iter().map(|z| (z - max).exp()).sum::<f64>().ln()
}

fn softmax_in_place(logits: &mut [f64]) {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for z in logits.iter_mut() {
        *z = (*z - max).exp();
        total += *z;
    }
    for z in logits.iter_mut() {
        *z /= total;
    }
}

fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

/// Multinomial (softmax) logistic regression; parameters are the row-major
/// class-by-feature weight matrix followed by per-class biases.
pub struct LogisticRegression {
    pub num_features: usize,
    pub num_classes: usize,
}

impl LogisticRegression {
    fn logits(&self, params: &[f64], x: &[f64]) -> Vec<f64> {
        let p = self.num_features;
        let c = self.num_classes;
        let bias = &params[c * p..];
        (0..c)
            .map(|class| {
                params[class * p..(class + 1) * p]
                    .iter()
                    .zip(x)
                    .map(|(w, xi)| w * xi)
                    .sum::<f64>()
                    + bias[class]
            })
            .collect()
    }
}

impl Model for LogisticRegression {
    fn name(&self) -> &'static str {
        "logistic"
    }

    fn param_len(&self) -> usize {
        self.num_classes * (self.num_features + 1)
    }

    fn init_params(&self, _rng: &mut ChaCha8Rng) -> Vec<f64> {
        vec![0.0; self.param_len()]
    }

    fn mean_loss(&self, params: &[f64], data: &LabeledDataset, subset: Option<&[usize]>) -> f64 {
        let rows = rows(data, subset);
        let mut acc = 0.0;
        for &i in &rows {
            let logits = self.logits(params, data.feature_row(i));
            let label = data.class_label(i).unwrap_or(0);
            acc += log_sum_exp(&logits) - logits[label];
        }
        acc / rows.len() as f64
    }

    fn mean_gradient(&self, params: &[f64], data: &LabeledDataset, subset: Option<&[usize]>) -> Vec<f64> {
        let rows = rows(data, subset);
        let p = self.num_features;
        let c = self.num_classes;
        let mut grad = vec![0.0; self.param_len()];
        for &i in &rows {
            let x = data.feature_row(i);
            let mut probs = self.logits(params, x);
            softmax_in_place(&mut probs);
            let label = data.class_label(i).unwrap_or(0);
            for class in 0..c {
                let delta = probs[class] - if class == label { 1.0 } else { 0.0 };
                for (g, xi) in grad[class * p..(class + 1) * p].iter_mut().zip(x) {
                    *g += delta * xi;
                }
                grad[c * p + class] += delta;
            }
        }
        let n = rows.len() as f64;
        for g in &mut grad {
            *g /= n;
        }
        grad
    }

    fn accuracy(&self, params: &[f64], data: &LabeledDataset) -> f64 {
        let mut hits = 0;
        for i in 0..data.len() {
            let logits = self.logits(params, data.feature_row(i));
            if Some(argmax(&logits)) == data.class_label(i) {
                hits += 1;
            }
        }
        hits as f64 / data.len() as f64
    }
}

/// Fully-connected classifier with two tanh hidden layers and a softmax
/// output. Parameter layout: `W1 | b1 | W2 | b2 | W3 | b3`, all row-major.
pub struct MlpClassifier {
    pub num_features: usize,
    pub hidden: [usize; 2],
    pub num_classes: usize,
}

struct MlpForward {
    hidden1: Vec<f64>,
    hidden2: Vec<f64>,
    probs: Vec<f64>,
    log_loss: f64,
}

impl MlpClassifier {
    fn offsets(&self) -> [usize; 6] {
        let (p, h1, h2, c) = (self.num_features, self.hidden[0], self.hidden[1], self.num_classes);
        let w1 = 0;
        let b1 = w1 + h1 * p;
        let w2 = b1 + h1;
        let b2 = w2 + h2 * h1;
        let w3 = b2 + h2;
        let b3 = w3 + c * h2;
        [w1, b1, w2, b2, w3, b3]
    }

    fn forward(&self, params: &[f64], x: &[f64], label: usize) -> MlpForward {
        let (p, h1, h2, c) = (self.num_features, self.hidden[0], self.hidden[1], self.num_classes);
        let [w1, b1, w2, b2, w3, b3] = self.offsets();
        let mut hidden1 = vec![0.0; h1];
        for j in 0..h1 {
            let mut z = params[b1 + j];
            for (w, xi) in params[w1 + j * p..w1 + (j + 1) * p].iter().zip(x) {
                z += w * xi;
            }
            hidden1[j] = z.tanh();
        }
        let mut hidden2 = vec![0.0; h2];
        for j in 0..h2 {
            let mut z = params[b2 + j];
            for (w, a) in params[w2 + j * h1..w2 + (j + 1) * h1].iter().zip(&hidden1) {
                z += w * a;
            }
            hidden2[j] = z.tanh();
        }
        let mut logits = vec![0.0; c];
        for class in 0..c {
            let mut z = params[b3 + class];
            for (w, a) in params[w3 + class * h2..w3 + (class + 1) * h2].iter().zip(&hidden2) {
                z += w * a;
            }
            logits[class] = z;
        }
        let log_loss = log_sum_exp(&logits) - logits[label];
        softmax_in_place(&mut logits);
        MlpForward {
            hidden1,
            hidden2,
            probs: logits,
            log_loss,
        }
    }
}

impl Model for MlpClassifier {
    fn name(&self) -> &'static str {
        "mlp"
    }

    fn param_len(&self) -> usize {
        let (p, h1, h2, c) = (self.num_features, self.hidden[0], self.hidden[1], self.num_classes);
        h1 * p + h1 + h2 * h1 + h2 + c * h2 + c
    }

    fn init_params(&self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        let (p, h1, h2) = (self.num_features, self.hidden[0], self.hidden[1]);
        let [_, b1, w2, b2, w3, b3] = self.offsets();
        let mut params = vec![0.0; self.param_len()];
        let mut fill = |lo: usize, hi: usize, fan_in: usize, rng: &mut ChaCha8Rng| {
            let scale = 1.0 / (fan_in as f64).sqrt();
            for w in &mut params[lo..hi] {
                let z: f64 = rng.sample(StandardNormal);
                *w = scale * z;
            }
        };
        fill(0, b1, p, rng);
        fill(w2, b2, h1, rng);
        fill(w3, b3, h2, rng);
        params
    }

    fn mean_loss(&self, params: &[f64], data: &LabeledDataset, subset: Option<&[usize]>) -> f64 {
        let rows = rows(data, subset);
        let mut acc = 0.0;
        for &i in &rows {
            let label = data.class_label(i).unwrap_or(0);
            acc += self.forward(params, data.feature_row(i), label).log_loss;
        }
        acc / rows.len() as f64
    }

    fn mean_gradient(&self, params: &[f64], data: &LabeledDataset, subset: Option<&[usize]>) -> Vec<f64> {
        let rows = rows(data, subset);
        let (p, h1, h2, c) = (self.num_features, self.hidden[0], self.hidden[1], self.num_classes);
        let [w1, b1, w2, b2, w3, b3] = self.offsets();
        let mut grad = vec![0.0; self.param_len()];
        for &i in &rows {
            let x = data.feature_row(i);
            let label = data.class_label(i).unwrap_or(0);
            let fwd = self.forward(params, x, label);
            // Output layer: dL/dz3 = probs - onehot(label).
            let mut delta3 = fwd.probs.clone();
            delta3[label] -= 1.0;
            for class in 0..c {
                for (g, a) in grad[w3 + class * h2..w3 + (class + 1) * h2]
                    .iter_mut()
                    .zip(&fwd.hidden2)
                {
                    *g += delta3[class] * a;
                }
                grad[b3 + class] += delta3[class];
            }
            // Second hidden layer, through the tanh derivative 1 - a^2.
            let mut delta2 = vec![0.0; h2];
            for j in 0..h2 {
                let mut back = 0.0;
                for class in 0..c {
                    back += delta3[class] * params[w3 + class * h2 + j];
                }
                delta2[j] = back * (1.0 - fwd.hidden2[j] * fwd.hidden2[j]);
            }
            for j in 0..h2 {
                for (g, a) in grad[w2 + j * h1..w2 + (j + 1) * h1].iter_mut().zip(&fwd.hidden1) {
                    *g += delta2[j] * a;
                }
                grad[b2 + j] += delta2[j];
            }
            // First hidden layer.
            let mut delta1 = vec![0.0; h1];
            for j in 0..h1 {
                let mut back = 0.0;
                for l in 0..h2 {
                    back += delta2[l] * params[w2 + l * h1 + j];
                }
                delta1[j] = back * (1.0 - fwd.hidden1[j] * fwd.hidden1[j]);
            }
            for j in 0..h1 {
                for (g, xi) in grad[w1 + j * p..w1 + (j + 1) * p].iter_mut().zip(x) {
                    *g += delta1[j] * xi;
                }
                grad[b1 + j] += delta1[j];
            }
        }
        let n = rows.len() as f64;
        for g in &mut grad {
            *g /= n;
        }
        grad
    }

    fn accuracy(&self, params: &[f64], data: &LabeledDataset) -> f64 {
        let mut hits = 0;
        for i in 0..data.len() {
            let fwd = self.forward(params, data.feature_row(i), 0);
            if Some(argmax(&fwd.probs)) == data.class_label(i) {
                hits += 1;
            }
        }
        hits as f64 / data.len() as f64
    }
}

#[cfg(test)]
pub(crate) mod test_support {
    use super::*;

    /// Central finite-difference gradient of a model's mean loss.
    pub fn finite_difference_gradient(
        model: &dyn Model,
        params: &[f64],
        data: &LabeledDataset,
        step: f64,
    ) -> Vec<f64> {
        let mut grad = vec![0.0; params.len()];
        let mut probe = params.to_vec();
        for i in 0..params.len() {
            probe[i] = params[i] + step;
            let plus = model.mean_loss(&probe, data, None);
            probe[i] = params[i] - step;
            let minus = model.mean_loss(&probe, data, None);
            probe[i] = params[i];
            grad[i] = (plus - minus) / (2.0 * step);
        }
        grad
    }

    pub fn relative_gradient_error(analytic: &[f64], numeric: &[f64]) -> f64 {
        let diff: f64 = analytic
            .iter()
            .zip(numeric)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        let norm: f64 = analytic.iter().map(|a| a * a).sum::<f64>().sqrt();
        diff / norm.max(1e-12)
    }
}
