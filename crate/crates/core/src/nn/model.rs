use serde::{Deserialize, Serialize};

use super::layer::Layer;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Ordered stack of layers mapping a flat input to `num_classes` logits.
///
/// Flat parameter order: layers in sequence; within a layer the weight (or
/// kernel) array row-major, then the bias.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Model {
    input_shape: Vec<usize>,
    num_classes: usize,
    layers: Vec<Layer>,
}

/// Supervision for a single example.
#[derive(Debug, Clone, Copy)]
pub enum Target<'a> {
    Hard(usize),
    Soft(&'a [f64]),
}

/// Loss whose gradient `backward` computes.
#[derive(Debug, Clone, Copy)]
pub enum Loss<'a> {
    /// Cross-entropy of `softmax(z / temperature)` against the target.
    CrossEntropy {
        target: Target<'a>,
        temperature: f64,
    },
    /// Caller-supplied `∂loss/∂logits`.
    LogitGradient(&'a [f64]),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    /// Loss value (0 for `Loss::LogitGradient`).
    pub loss: f64,
    /// Same order and length as `Model::flatten_params`.
    pub params: Vec<f64>,
    pub input: Vec<f64>,
}

/// Activations recorded by a forward pass: `acts[0]` is the input and
/// `acts[i + 1]` is the output of layer `i`.
#[derive(Debug, Clone)]
pub struct Trace {
    pub acts: Vec<Vec<f64>>,
}

impl Trace {
    pub fn logits(&self) -> &[f64] {
        self.acts.last().expect("trace holds at least the input")
    }
}

impl Model {
    pub fn new(input_shape: Vec<usize>, layers: Vec<Layer>) -> Result<Self> {
        let input_dim: usize = input_shape.iter().product();
        if input_dim == 0 {
            return Err(Error::rejected("input shape must be non-empty"));
        }
        if layers.is_empty() {
            return Err(Error::rejected("model needs at least one layer"));
        }
        let mut dim = input_dim;
        for (i, layer) in layers.iter().enumerate() {
            if layer.in_dim() != dim {
                return Err(Error::rejected(format!(
                    "layer {i} ({}) expects {} inputs but receives {dim}",
                    layer.kind(),
                    layer.in_dim()
                )));
            }
            dim = layer.out_dim();
        }
        if matches!(layers.last(), Some(Layer::Relu { .. })) {
            return Err(Error::rejected("final layer must emit logits, not a ReLU"));
        }
        Ok(Self {
            input_shape,
            num_classes: dim,
            layers,
        })
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn input_dim(&self) -> usize {
        self.input_shape.iter().product()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(Layer::param_count).sum()
    }

    /// Flat offset of each layer's parameter block.
    pub fn param_offsets(&self) -> Vec<usize> {
        let mut offsets = Vec::with_capacity(self.layers.len());
        let mut acc = 0;
        for layer in &self.layers {
            offsets.push(acc);
            acc += layer.param_count();
        }
        offsets
    }

    /// Logits for one flat example. Panics if `x` has the wrong length.
    pub fn logits(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.input_dim(), "input length mismatch");
        let mut cur = x.to_vec();
        for layer in &self.layers {
            cur = layer.forward(&cur);
        }
        cur
    }

    pub fn predict(&self, x: &[f64]) -> usize {
        crate::tensor::argmax(&self.logits(x))
    }

    pub fn trace(&self, x: &[f64]) -> Trace {
        assert_eq!(x.len(), self.input_dim(), "input length mismatch");
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        acts.push(x.to_vec());
        for layer in &self.layers {
            let next = layer.forward(acts.last().unwrap());
            acts.push(next);
        }
        Trace { acts }
    }

    /// Forward pass on a single example (shaped as `input_shape` or flat) or
    /// a batch (`[B] ++ input_shape`).
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let batch = self.batch_size_of(x)?;
        let d = self.input_dim();
        let mut out = Vec::with_capacity(batch * self.num_classes);
        for chunk in x.data().chunks(d) {
            out.extend(self.logits(chunk));
        }
        let shape = if batch == 1 && x.shape().len() <= self.input_shape.len() {
            vec![self.num_classes]
        } else {
            vec![batch, self.num_classes]
        };
        Tensor::new(shape, out)
    }

    fn batch_size_of(&self, x: &Tensor) -> Result<usize> {
        let s = x.shape();
        if s == self.input_shape.as_slice() || s == [self.input_dim()] {
            return Ok(1);
        }
        if s.len() == self.input_shape.len() + 1 && s[1..] == self.input_shape[..] {
            return Ok(s[0]);
        }
        if s.len() == 2 && s[1] == self.input_dim() {
            return Ok(s[0]);
        }
        Err(Error::rejected(format!(
            "input shape {:?} does not match model input {:?}",
            s, self.input_shape
        )))
    }

    /// Backpropagates `logit_grad` through a recorded trace. Parameter
    /// gradients are only computed when `want_params` is set.
    pub fn backprop(
        &self,
        trace: &Trace,
        logit_grad: &[f64],
        want_params: bool,
    ) -> (Option<Vec<f64>>, Vec<f64>) {
        let mut params = want_params.then(|| vec![0.0; self.param_count()]);
        let offsets = self.param_offsets();
        let mut g = logit_grad.to_vec();
        for (i, layer) in self.layers.iter().enumerate().rev() {
            let input = &trace.acts[i];
            match layer {
                Layer::Relu { .. } => {
                    for (gj, &xj) in g.iter_mut().zip(input) {
                        if xj <= 0.0 {
                            *gj = 0.0;
                        }
                    }
                }
                _ => {
                    if let Some(p) = params.as_mut() {
                        let block = &mut p[offsets[i]..offsets[i] + layer.param_count()];
                        layer.accumulate_param_grad(input, &g, block, true);
                    }
                    g = layer.linear_transpose(&g);
                }
            }
        }
        (params, g)
    }

    /// Gradients of `loss` with respect to every parameter and the input.
    pub fn backward(&self, x: &Tensor, loss: Loss<'_>) -> Result<Gradients> {
        if x.len() != self.input_dim() {
            return Err(Error::rejected(format!(
                "backward expects a single example of {} values, got {}",
                self.input_dim(),
                x.len()
            )));
        }
        let trace = self.trace(x.data());
        let (value, logit_grad) = match loss {
            Loss::CrossEntropy {
                target,
                temperature,
            } => cross_entropy_grad(trace.logits(), target, temperature)?,
            Loss::LogitGradient(g) => {
                if g.len() != self.num_classes {
                    return Err(Error::rejected("logit gradient length mismatch"));
                }
                (0.0, g.to_vec())
            }
        };
        let (params, input) = self.backprop(&trace, &logit_grad, true);
        Ok(Gradients {
            loss: value,
            params: params.unwrap(),
            input,
        })
    }

    pub fn flatten_params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for layer in &self.layers {
            layer.write_params(&mut out);
        }
        out
    }

    /// Returns a copy of the model with parameters taken from `params`.
    pub fn load_params(&self, params: &[f64]) -> Result<Model> {
        let mut m = self.clone();
        m.set_params(params)?;
        Ok(m)
    }

    pub fn set_params(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.param_count() {
            return Err(Error::rejected(format!(
                "parameter vector has {} entries, model needs {}",
                params.len(),
                self.param_count()
            )));
        }
        if params.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("non-finite parameter".into()));
        }
        let mut pos = 0;
        for layer in &mut self.layers {
            for block in layer.params_mut() {
                block.copy_from_slice(&params[pos..pos + block.len()]);
                pos += block.len();
            }
        }
        Ok(())
    }

    /// `θ ← θ − lr · grad` over the flat parameter order.
    pub fn sgd_step(&mut self, grad: &[f64], lr: f64) {
        debug_assert_eq!(grad.len(), self.param_count());
        let mut pos = 0;
        for layer in &mut self.layers {
            for block in layer.params_mut() {
                for (p, g) in block.iter_mut().zip(&grad[pos..]) {
                    *p -= lr * g;
                }
                pos += block.len();
            }
        }
    }
}

/// Softmax of `logits / temperature` with max subtraction.
pub fn softmax_slice(logits: &[f64], temperature: f64) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits
        .iter()
        .map(|&z| ((z - max) / temperature).exp())
        .collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Row-wise temperature softmax on a 1-D or 2-D logits tensor.
pub fn softmax_t(logits: &Tensor, temperature: f64) -> Result<Tensor> {
    if !(temperature > 0.0) || !temperature.is_finite() {
        return Err(Error::config(format!(
            "temperature must be positive, got {temperature}"
        )));
    }
    if logits.data().iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("non-finite logits".into()));
    }
    let width = *logits
        .shape()
        .last()
        .ok_or_else(|| Error::rejected("softmax of a scalar"))?;
    let mut out = Vec::with_capacity(logits.len());
    for row in logits.data().chunks(width.max(1)) {
        out.extend(softmax_slice(row, temperature));
    }
    Tensor::new(logits.shape().to_vec(), out)
}

/// Cross-entropy of `softmax(z / T)` and its gradient `(p − t) / T`.
pub fn cross_entropy_grad(
    logits: &[f64],
    target: Target<'_>,
    temperature: f64,
) -> Result<(f64, Vec<f64>)> {
    if !(temperature > 0.0) {
        return Err(Error::config("temperature must be positive"));
    }
    if logits.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("non-finite logits".into()));
    }
    let k = logits.len();
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let scaled: Vec<f64> = logits.iter().map(|&z| (z - max) / temperature).collect();
    let log_sum = scaled.iter().map(|s| s.exp()).sum::<f64>().ln();
    let p: Vec<f64> = scaled.iter().map(|s| (s - log_sum).exp()).collect();
    match target {
        Target::Hard(y) => {
            if y >= k {
                return Err(Error::rejected(format!("label {y} out of range for {k} classes")));
            }
            let loss = log_sum - scaled[y];
            let grad = p
                .iter()
                .enumerate()
                .map(|(i, &pi)| (pi - if i == y { 1.0 } else { 0.0 }) / temperature)
                .collect();
            Ok((loss, grad))
        }
        Target::Soft(t) => {
            if t.len() != k {
                return Err(Error::rejected("soft target length mismatch"));
            }
            let loss = t
                .iter()
                .zip(&scaled)
                .map(|(&ti, &si)| if ti > 0.0 { -ti * (si - log_sum) } else { 0.0 })
                .sum();
            let grad = p
                .iter()
                .zip(t)
                .map(|(&pi, &ti)| (pi - ti) / temperature)
                .collect();
            Ok((loss, grad))
        }
    }
}
