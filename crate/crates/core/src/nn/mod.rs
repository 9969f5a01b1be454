//! Dense multilayer perceptron: flat parameter vectors, forward pass,
//! softmax cross-entropy and exact backpropagation.
//!
//! Parameters for every layer are stored contiguously in one flat `Vec<f64>`:
//! the `d_in x d_out` weight matrix in row-major order followed by the `d_out`
//! bias vector, layer after layer. A forward pass computes `a_next = a W + b`.

mod optim;

use std::sync::Arc;

use ndarray::linalg::general_mat_mul;
use ndarray::{Array2, ArrayView1, ArrayView2, ArrayViewMut2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};

pub use optim::{server_apply, ServerOptimizer, ServerOptimizerState};

/// Probabilities are clamped here before taking the log.
pub const PROB_FLOOR: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Identity,
}

/// Layer sizes of a fully connected network, input first, classes last.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MlpSpec {
    layer_sizes: Vec<usize>,
    hidden_activation: Activation,
}

/// Position of one dense layer inside a flat parameter vector.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LayerShape {
    pub d_in: usize,
    pub d_out: usize,
    pub weight_offset: usize,
    pub bias_offset: usize,
}

impl LayerShape {
    pub fn end(&self) -> usize {
        self.bias_offset + self.d_out
    }
}

impl MlpSpec {
    pub fn new(layer_sizes: Vec<usize>, hidden_activation: Activation) -> Result<Self> {
        if layer_sizes.len() < 2 {
            return Err(Error::InvalidSpec(format!(
                "need at least input and output sizes, got {layer_sizes:?}"
            )));
        }
        if layer_sizes.contains(&0) {
            return Err(Error::InvalidSpec(format!(
                "layer sizes must be positive, got {layer_sizes:?}"
            )));
        }
        Ok(Self {
            layer_sizes,
            hidden_activation,
        })
    }

    /// Relu hidden layers.
    pub fn relu(layer_sizes: &[usize]) -> Result<Self> {
        Self::new(layer_sizes.to_vec(), Activation::Relu)
    }

    /// Builds `[input, hidden..., classes]` from the `[hidden..., classes]`
    /// notation used for the MNIST experiments (`[500, 200, 10]`).
    pub fn with_input(input_dim: usize, layers: &[usize]) -> Result<Self> {
        let mut sizes = Vec::with_capacity(layers.len() + 1);
        sizes.push(input_dim);
        sizes.extend_from_slice(layers);
        Self::relu(&sizes)
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.layer_sizes
    }

    pub fn hidden_activation(&self) -> Activation {
        self.hidden_activation
    }

    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn num_classes(&self) -> usize {
        *self.layer_sizes.last().unwrap()
    }

    pub fn num_layers(&self) -> usize {
        self.layer_sizes.len() - 1
    }

    pub fn parameter_count(&self) -> usize {
        self.layer_sizes
            .windows(2)
            .map(|w| (w[0] + 1) * w[1])
            .sum()
    }

    pub fn layers(&self) -> impl Iterator<Item = LayerShape> + '_ {
        let mut offset = 0;
        self.layer_sizes.windows(2).map(move |w| {
            let shape = LayerShape {
                d_in: w[0],
                d_out: w[1],
                weight_offset: offset,
                bias_offset: offset + w[0] * w[1],
            };
            offset = shape.end();
            shape
        })
    }
}

macro_rules! flat_vector {
    ($name:ident) => {
        impl $name {
            pub fn zeros(spec: Arc<MlpSpec>) -> Self {
                let values = vec![0.0; spec.parameter_count()];
                Self { values, spec }
            }

            pub fn from_values(spec: Arc<MlpSpec>, values: Vec<f64>) -> Result<Self> {
                if values.len() != spec.parameter_count() {
                    return Err(Error::ShapeMismatch {
                        context: stringify!($name),
                        expected: spec.parameter_count(),
                        found: values.len(),
                    });
                }
                Ok(Self { values, spec })
            }

            pub fn spec(&self) -> &Arc<MlpSpec> {
                &self.spec
            }

            pub fn values(&self) -> &[f64] {
                &self.values
            }

            pub fn values_mut(&mut self) -> &mut [f64] {
                &mut self.values
            }

            pub fn into_values(self) -> Vec<f64> {
                self.values
            }

            pub fn len(&self) -> usize {
                self.values.len()
            }

            pub fn is_empty(&self) -> bool {
                self.values.is_empty()
            }

            pub fn is_finite(&self) -> bool {
                self.values.iter().all(|v| v.is_finite())
            }
        }
    };
}

/// Model parameters `w`.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamVector {
    values: Vec<f64>,
    spec: Arc<MlpSpec>,
}

/// A gradient, or any other quantity with the shape of the parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct GradVector {
    values: Vec<f64>,
    spec: Arc<MlpSpec>,
}

flat_vector!(ParamVector);
flat_vector!(GradVector);

impl ParamVector {
    fn check_same_shape(&self, other: &[f64], context: &'static str) -> Result<()> {
        if other.len() != self.values.len() {
            return Err(Error::ShapeMismatch {
                context,
                expected: self.values.len(),
                found: other.len(),
            });
        }
        Ok(())
    }

    /// `self -= lr * grad`, in place.
    pub fn apply_sgd(&mut self, grad: &GradVector, lr: f64) -> Result<()> {
        self.check_same_shape(&grad.values, "sgd_step")?;
        for (w, g) in self.values.iter_mut().zip(&grad.values) {
            *w -= lr * g;
        }
        Ok(())
    }

    /// `self - base`, the weight difference a client reports in delta mode.
    pub fn delta_from(&self, base: &ParamVector) -> Result<GradVector> {
        self.check_same_shape(&base.values, "delta_from")?;
        let values = self
            .values
            .iter()
            .zip(&base.values)
            .map(|(a, b)| a - b)
            .collect();
        Ok(GradVector {
            values,
            spec: Arc::clone(&self.spec),
        })
    }

    fn layer(&self, shape: &LayerShape) -> (ArrayView2<'_, f64>, ArrayView1<'_, f64>) {
        let w = ArrayView2::from_shape(
            (shape.d_in, shape.d_out),
            &self.values[shape.weight_offset..shape.bias_offset],
        )
        .expect("layer shape derived from spec");
        let b = ArrayView1::from(&self.values[shape.bias_offset..shape.end()]);
        (w, b)
    }
}

impl GradVector {
    pub fn scaled(mut self, factor: f64) -> Self {
        self.values.iter_mut().for_each(|v| *v *= factor);
        self
    }
}

/// A batch of examples: one row of `inputs` per label.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    inputs: Array2<f64>,
    labels: Vec<usize>,
}

impl Batch {
    pub fn new(inputs: Array2<f64>, labels: Vec<usize>) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::InvalidBatch("batch must hold at least one sample".into()));
        }
        if inputs.nrows() != labels.len() {
            return Err(Error::InvalidBatch(format!(
                "{} input rows but {} labels",
                inputs.nrows(),
                labels.len()
            )));
        }
        Ok(Self { inputs, labels })
    }

    pub fn inputs(&self) -> &Array2<f64> {
        &self.inputs
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    fn check_compatible(&self, spec: &MlpSpec) -> Result<()> {
        if self.inputs.ncols() != spec.input_dim() {
            return Err(Error::ShapeMismatch {
                context: "batch input dimension",
                expected: spec.input_dim(),
                found: self.inputs.ncols(),
            });
        }
        let classes = spec.num_classes();
        if let Some(&bad) = self.labels.iter().find(|&&y| y >= classes) {
            return Err(Error::InvalidBatch(format!(
                "label {bad} out of range for {classes} classes"
            )));
        }
        Ok(())
    }
}

/// Deterministic fan-in scaled normal initialisation with zero biases.
///
/// Layers feeding a relu use `sqrt(2 / fan_in)`, all others `sqrt(1 / fan_in)`.
pub fn init_params(spec: &Arc<MlpSpec>, seed: u64) -> ParamVector {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = ParamVector::zeros(Arc::clone(spec));
    let num_layers = spec.num_layers();
    for (i, shape) in spec.layers().enumerate() {
        let feeds_relu = i + 1 < num_layers && spec.hidden_activation == Activation::Relu;
        let gain = if feeds_relu { 2.0 } else { 1.0 };
        let std = (gain / shape.d_in as f64).sqrt();
        let normal = Normal::new(0.0, std).expect("positive std");
        for w in &mut params.values[shape.weight_offset..shape.bias_offset] {
            *w = normal.sample(&mut rng);
        }
    }
    params
}

/// Output of a forward pass: post-activation outputs of every hidden layer,
/// then the logits.
fn forward_all(params: &ParamVector, inputs: ArrayView2<'_, f64>) -> Vec<Array2<f64>> {
    let spec = params.spec();
    let num_layers = spec.num_layers();
    let mut outputs: Vec<Array2<f64>> = Vec::with_capacity(num_layers);
    for (i, shape) in spec.layers().enumerate() {
        let (w, b) = params.layer(&shape);
        let mut z = match outputs.last() {
            Some(prev) => prev.dot(&w),
            None => inputs.dot(&w),
        };
        z += &b;
        if i + 1 < num_layers && spec.hidden_activation == Activation::Relu {
            z.mapv_inplace(|v| v.max(0.0));
        }
        outputs.push(z);
    }
    outputs
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(row: ArrayView1<'_, f64>) -> usize {
    let mut best = 0;
    let mut best_val = f64::NEG_INFINITY;
    for (i, &v) in row.iter().enumerate() {
        if v > best_val {
            best = i;
            best_val = v;
        }
    }
    best
}

/// Softmax of each row in place (max-subtracted). Returns per-row clamped
/// cross-entropy against `labels`.
fn softmax_xent(logits: &mut Array2<f64>, labels: &[usize]) -> Vec<f64> {
    let mut losses = Vec::with_capacity(labels.len());
    for (mut row, &y) in logits.axis_iter_mut(Axis(0)).zip(labels) {
        let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|v| v / sum);
        losses.push(-row[y].max(PROB_FLOOR).ln());
    }
    losses
}

/// Loss, gradient and the number of argmax-correct predictions on a batch.
#[derive(Clone, Debug)]
pub struct BatchEval {
    pub loss: f64,
    pub correct: usize,
    pub grad: GradVector,
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Mean softmax cross-entropy over the batch.
pub fn loss(params: &ParamVector, batch: &Batch) -> Result<f64> {
    batch.check_compatible(params.spec())?;
    let mut outputs = forward_all(params, batch.inputs.view());
    let logits = outputs.last_mut().unwrap();
    Ok(mean(&softmax_xent(logits, &batch.labels)))
}

pub fn loss_grad(params: &ParamVector, batch: &Batch) -> Result<(f64, GradVector)> {
    let eval = forward_backward(params, batch)?;
    Ok((eval.loss, eval.grad))
}

/// Full forward and backward pass.
pub fn forward_backward(params: &ParamVector, batch: &Batch) -> Result<BatchEval> {
    let spec = Arc::clone(params.spec());
    batch.check_compatible(&spec)?;
    let n = batch.len() as f64;
    let mut outputs = forward_all(params, batch.inputs.view());

    let correct = outputs
        .last()
        .unwrap()
        .axis_iter(Axis(0))
        .zip(&batch.labels)
        .filter(|(row, &y)| argmax(row.view()) == y)
        .count();

    // dL/dlogits = (softmax - onehot) / n
    let mut delta = outputs.pop().unwrap();
    let loss = mean(&softmax_xent(&mut delta, &batch.labels));
    for (mut row, &y) in delta.axis_iter_mut(Axis(0)).zip(&batch.labels) {
        row[y] -= 1.0;
    }
    delta.mapv_inplace(|v| v / n);

    let mut grad = GradVector::zeros(Arc::clone(&spec));
    let shapes: Vec<LayerShape> = spec.layers().collect();
    for (i, shape) in shapes.iter().enumerate().rev() {
        let input = match i {
            0 => batch.inputs.view(),
            _ => outputs[i - 1].view(),
        };
        {
            let mut dw = ArrayViewMut2::from_shape(
                (shape.d_in, shape.d_out),
                &mut grad.values[shape.weight_offset..shape.bias_offset],
            )
            .expect("layer shape derived from spec");
            general_mat_mul(1.0, &input.t(), &delta, 0.0, &mut dw);
        }
        for (db, col) in grad.values[shape.bias_offset..shape.end()]
            .iter_mut()
            .zip(delta.axis_iter(Axis(1)))
        {
            *db = col.sum();
        }
        if i > 0 {
            let (w, _) = params.layer(shape);
            let mut prev_delta = delta.dot(&w.t());
            if spec.hidden_activation == Activation::Relu {
                ndarray::Zip::from(&mut prev_delta)
                    .and(&input)
                    .for_each(|d, &a| {
                        if a <= 0.0 {
                            *d = 0.0;
                        }
                    });
            }
            delta = prev_delta;
        }
    }

    Ok(BatchEval {
        loss,
        correct,
        grad,
    })
}

/// Argmax class for each row of `inputs`, evaluated in chunks.
pub fn predict(params: &ParamVector, inputs: ArrayView2<'_, f64>) -> Result<Vec<usize>> {
    const CHUNK: usize = 2048;
    if inputs.ncols() != params.spec().input_dim() {
        return Err(Error::ShapeMismatch {
            context: "predict input dimension",
            expected: params.spec().input_dim(),
            found: inputs.ncols(),
        });
    }
    let mut predictions = Vec::with_capacity(inputs.nrows());
    for chunk in inputs.axis_chunks_iter(Axis(0), CHUNK) {
        let outputs = forward_all(params, chunk);
        let logits = outputs.last().unwrap();
        predictions.extend(logits.axis_iter(Axis(0)).map(argmax));
    }
    Ok(predictions)
}

/// `params - lr * grad`.
pub fn sgd_step(params: &ParamVector, grad: &GradVector, lr: f64) -> Result<ParamVector> {
    let mut next = params.clone();
    next.apply_sgd(grad, lr)?;
    Ok(next)
}
