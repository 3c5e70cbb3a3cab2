//! Model parameters, local SGD, evaluation, and uniform model averaging.
//!
//! Models are plain named layers of f64 vectors so that layer-wise similarity
//! is meaningful. Two architectures interpret them: multinomial logistic
//! regression (layers `weights`, `bias`) and a one-hidden-layer tanh MLP.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

use crate::data::{Dataset, Example};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("model shapes do not match ({0})")]
    ShapeMismatch(String),
    #[error("batch is empty")]
    EmptyBatch,
}

/// One named parameter vector.
#[derive(Clone, Debug, PartialEq)]
pub struct Layer {
    pub name: String,
    pub values: Vec<f64>,
}

/// A model as an ordered list of named layers.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub layers: Vec<Layer>,
}

impl ModelParams {
    pub fn new(layers: Vec<(&str, Vec<f64>)>) -> Self {
        ModelParams {
            layers: layers
                .into_iter()
                .map(|(name, values)| Layer {
                    name: name.to_string(),
                    values,
                })
                .collect(),
        }
    }

    pub fn layer(&self, name: &str) -> Option<&Layer> {
        self.layers.iter().find(|l| l.name == name)
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.values.len()).sum()
    }

    /// Same layer names, in the same order, with the same lengths.
    pub fn shape_matches(&self, other: &ModelParams) -> bool {
        self.layers.len() == other.layers.len()
            && self
                .layers
                .iter()
                .zip(&other.layers)
                .all(|(a, b)| a.name == b.name && a.values.len() == b.values.len())
    }

    pub fn zeros_like(&self) -> ModelParams {
        ModelParams {
            layers: self
                .layers
                .iter()
                .map(|l| Layer {
                    name: l.name.clone(),
                    values: vec![0.0; l.values.len()],
                })
                .collect(),
        }
    }

    /// `self += c * other`, layer by layer.
    pub fn add_scaled(&mut self, other: &ModelParams, c: f64) {
        debug_assert!(self.shape_matches(other));
        for (dst, src) in self.layers.iter_mut().zip(&other.layers) {
            for (d, s) in dst.values.iter_mut().zip(&src.values) {
                *d += c * s;
            }
        }
    }

    pub fn scale(&mut self, c: f64) {
        for layer in &mut self.layers {
            for v in &mut layer.values {
                *v *= c;
            }
        }
    }

    pub fn all_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.values.iter().all(|v| v.is_finite()))
    }

    pub fn max_abs_diff(&self, other: &ModelParams) -> f64 {
        self.layers
            .iter()
            .zip(&other.layers)
            .flat_map(|(a, b)| a.values.iter().zip(&b.values))
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max)
    }
}

/// Elementwise mean of the given models, summed in slice order.
pub fn mean_of(models: &[&ModelParams]) -> Result<ModelParams, ModelError> {
    let first = models
        .first()
        .ok_or_else(|| ModelError::InvalidArgument("mean of zero models".into()))?;
    for m in &models[1..] {
        if !first.shape_matches(m) {
            return Err(ModelError::ShapeMismatch(
                "all averaged models must share layer names and sizes".into(),
            ));
        }
    }
    let mut acc = first.zeros_like();
    for m in models {
        acc.add_scaled(m, 1.0);
    }
    acc.scale(1.0 / models.len() as f64);
    Ok(acc)
}

/// Uniform average of a node's own model with the models it received.
pub fn average_models(own: &ModelParams, received: &[ModelParams]) -> Result<ModelParams, ModelError> {
    let mut refs: Vec<&ModelParams> = Vec::with_capacity(received.len() + 1);
    refs.push(own);
    refs.extend(received.iter());
    mean_of(&refs)
}

/// Which classifier the layer vectors encode.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ModelArch {
    /// Multinomial logistic regression: `weights` (classes x features,
    /// row-major) and `bias` (classes).
    Softmax {
        feature_dim: usize,
        num_classes: usize,
    },
    /// One tanh hidden layer: `hidden_weights`, `hidden_bias`,
    /// `output_weights`, `output_bias`.
    Mlp {
        feature_dim: usize,
        hidden_dim: usize,
        num_classes: usize,
    },
}

impl ModelArch {
    pub fn feature_dim(&self) -> usize {
        match *self {
            ModelArch::Softmax { feature_dim, .. } | ModelArch::Mlp { feature_dim, .. } => feature_dim,
        }
    }

    pub fn num_classes(&self) -> usize {
        match *self {
            ModelArch::Softmax { num_classes, .. } | ModelArch::Mlp { num_classes, .. } => num_classes,
        }
    }

    fn layer_shapes(&self) -> Vec<(&'static str, usize)> {
        match *self {
            ModelArch::Softmax {
                feature_dim,
                num_classes,
            } => vec![("weights", num_classes * feature_dim), ("bias", num_classes)],
            ModelArch::Mlp {
                feature_dim,
                hidden_dim,
                num_classes,
            } => vec![
                ("hidden_weights", hidden_dim * feature_dim),
                ("hidden_bias", hidden_dim),
                ("output_weights", num_classes * hidden_dim),
                ("output_bias", num_classes),
            ],
        }
    }

    /// Gaussian-initialized parameters (std `init_std`, every layer).
    pub fn init_params<R: Rng>(&self, init_std: f64, rng: &mut R) -> ModelParams {
        let normal = Normal::new(0.0, init_std.max(0.0)).expect("valid normal");
        ModelParams {
            layers: self
                .layer_shapes()
                .into_iter()
                .map(|(name, len)| Layer {
                    name: name.to_string(),
                    values: (0..len).map(|_| normal.sample(rng)).collect(),
                })
                .collect(),
        }
    }

    pub fn zero_params(&self) -> ModelParams {
        ModelParams {
            layers: self
                .layer_shapes()
                .into_iter()
                .map(|(name, len)| Layer {
                    name: name.to_string(),
                    values: vec![0.0; len],
                })
                .collect(),
        }
    }

    fn check_model(&self, model: &ModelParams) -> Result<(), ModelError> {
        let shapes = self.layer_shapes();
        if model.layers.len() != shapes.len()
            || model
                .layers
                .iter()
                .zip(&shapes)
                .any(|(l, (name, len))| l.name != *name || l.values.len() != *len)
        {
            return Err(ModelError::DimensionMismatch(format!(
                "model layers do not fit {self:?}"
            )));
        }
        Ok(())
    }

    fn check_features(&self, features: &[f64]) -> Result<(), ModelError> {
        if features.len() != self.feature_dim() {
            return Err(ModelError::DimensionMismatch(format!(
                "feature dim {} does not match arch dim {}",
                features.len(),
                self.feature_dim()
            )));
        }
        Ok(())
    }

    /// Raw class scores for one example.
    pub fn logits(&self, model: &ModelParams, features: &[f64]) -> Result<Vec<f64>, ModelError> {
        self.check_model(model)?;
        self.check_features(features)?;
        Ok(match *self {
            ModelArch::Softmax { .. } => self.softmax_logits(model, features),
            ModelArch::Mlp { .. } => self.mlp_forward(model, features).1,
        })
    }

    fn softmax_logits(&self, model: &ModelParams, x: &[f64]) -> Vec<f64> {
        let (d, c) = (self.feature_dim(), self.num_classes());
        let w = &model.layers[0].values;
        let b = &model.layers[1].values;
        (0..c)
            .map(|class| {
                let row = &w[class * d..(class + 1) * d];
                b[class] + row.iter().zip(x).map(|(wi, xi)| wi * xi).sum::<f64>()
            })
            .collect()
    }

    /// Returns (hidden activations, logits).
    fn mlp_forward(&self, model: &ModelParams, x: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let ModelArch::Mlp {
            feature_dim: d,
            hidden_dim: h,
            num_classes: c,
        } = *self
        else {
            unreachable!("mlp_forward on non-mlp arch");
        };
        let w1 = &model.layers[0].values;
        let b1 = &model.layers[1].values;
        let w2 = &model.layers[2].values;
        let b2 = &model.layers[3].values;
        let hidden: Vec<f64> = (0..h)
            .map(|j| {
                let row = &w1[j * d..(j + 1) * d];
                (b1[j] + row.iter().zip(x).map(|(wi, xi)| wi * xi).sum::<f64>()).tanh()
            })
            .collect();
        let logits: Vec<f64> = (0..c)
            .map(|class| {
                let row = &w2[class * h..(class + 1) * h];
                b2[class] + row.iter().zip(&hidden).map(|(wi, hi)| wi * hi).sum::<f64>()
            })
            .collect();
        (hidden, logits)
    }

    /// Mean cross-entropy gradient over a batch, shaped like the model.
    pub fn gradient(&self, model: &ModelParams, batch: &[&Example]) -> Result<ModelParams, ModelError> {
        self.check_model(model)?;
        if batch.is_empty() {
            return Err(ModelError::EmptyBatch);
        }
        let c = self.num_classes();
        for e in batch {
            self.check_features(&e.features)?;
            if e.label >= c {
                return Err(ModelError::DimensionMismatch(format!(
                    "label {} out of range for {} classes",
                    e.label, c
                )));
            }
        }
        let inv_batch = 1.0 / batch.len() as f64;
        let mut grad = model.zeros_like();
        match *self {
            ModelArch::Softmax { feature_dim: d, .. } => {
                for e in batch {
                    let logits = self.softmax_logits(model, &e.features);
                    let probs = stable_softmax(&logits);
                    let (gw, gb) = {
                        let (a, b) = grad.layers.split_at_mut(1);
                        (&mut a[0].values, &mut b[0].values)
                    };
                    for class in 0..c {
                        let coeff = (probs[class] - f64::from(u8::from(class == e.label))) * inv_batch;
                        gb[class] += coeff;
                        for (gwi, xi) in gw[class * d..(class + 1) * d].iter_mut().zip(&e.features) {
                            *gwi += coeff * xi;
                        }
                    }
                }
            }
            ModelArch::Mlp {
                feature_dim: d,
                hidden_dim: h,
                ..
            } => {
                let w2 = model.layers[2].values.clone();
                for e in batch {
                    let (hidden, logits) = self.mlp_forward(model, &e.features);
                    let probs = stable_softmax(&logits);
                    let delta_out: Vec<f64> = (0..c)
                        .map(|class| (probs[class] - f64::from(u8::from(class == e.label))) * inv_batch)
                        .collect();
                    for class in 0..c {
                        grad.layers[3].values[class] += delta_out[class];
                        for j in 0..h {
                            grad.layers[2].values[class * h + j] += delta_out[class] * hidden[j];
                        }
                    }
                    for j in 0..h {
                        let upstream: f64 = (0..c).map(|class| w2[class * h + j] * delta_out[class]).sum();
                        let delta_hidden = upstream * (1.0 - hidden[j] * hidden[j]);
                        grad.layers[1].values[j] += delta_hidden;
                        for (gwi, xi) in grad.layers[0].values[j * d..(j + 1) * d]
                            .iter_mut()
                            .zip(&e.features)
                        {
                            *gwi += delta_hidden * xi;
                        }
                    }
                }
            }
        }
        Ok(grad)
    }
}

fn stable_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.iter().map(|e| e / sum).collect()
}

/// `max + ln(sum(exp(z - max)))`, the stable log-normalizer.
fn log_sum_exp(logits: &[f64]) -> f64 {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + logits.iter().map(|z| (z - max).exp()).sum::<f64>().ln()
}

/// One gradient-descent step on the mean batch cross-entropy:
/// `model - gamma * grad`. The input model is left untouched.
pub fn local_sgd_step(
    arch: &ModelArch,
    model: &ModelParams,
    batch: &[&Example],
    gamma: f64,
) -> Result<ModelParams, ModelError> {
    if !(gamma >= 0.0) {
        return Err(ModelError::InvalidArgument("gamma must be >= 0".into()));
    }
    if gamma == 0.0 {
        arch.check_model(model)?;
        if batch.is_empty() {
            return Err(ModelError::EmptyBatch);
        }
        return Ok(model.clone());
    }
    let grad = arch.gradient(model, batch)?;
    let mut updated = model.clone();
    updated.add_scaled(&grad, -gamma);
    debug_assert!(updated.all_finite());
    Ok(updated)
}

/// Accuracy (fraction of argmax-correct predictions, ties to the lowest
/// class) and mean cross-entropy loss on a test set.
pub fn evaluate(arch: &ModelArch, model: &ModelParams, testset: &Dataset) -> Result<(f64, f64), ModelError> {
    arch.check_model(model)?;
    if testset.is_empty() {
        return Err(ModelError::InvalidArgument("empty test set".into()));
    }
    let mut correct = 0usize;
    let mut loss_sum = 0.0;
    for e in &testset.examples {
        let logits = arch.logits(model, &e.features)?;
        if e.label >= logits.len() {
            return Err(ModelError::DimensionMismatch(format!(
                "label {} out of range for {} classes",
                e.label,
                logits.len()
            )));
        }
        let predicted = logits
            .iter()
            .enumerate()
            .max_by(|(ia, a), (ib, b)| a.partial_cmp(b).unwrap().then(ib.cmp(ia)))
            .map(|(i, _)| i)
            .unwrap();
        if predicted == e.label {
            correct += 1;
        }
        loss_sum += log_sum_exp(&logits) - logits[e.label];
    }
    let n = testset.len() as f64;
    Ok((correct as f64 / n, loss_sum / n))
}
