use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Layer, Model};

/// Axis-aligned box `lower ≤ x ≤ upper`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntervalBox {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl IntervalBox {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.len() != upper.len() {
            return Err(Error::rejected("bound vectors differ in length"));
        }
        if lower.iter().zip(&upper).any(|(l, u)| !(l <= u)) {
            return Err(Error::rejected("lower bound exceeds upper bound"));
        }
        Ok(Self { lower, upper })
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim()
            && x
                .iter()
                .zip(self.lower.iter().zip(&self.upper))
                .all(|(v, (l, u))| *l <= *v && *v <= *u)
    }

    pub fn width(&self, j: usize) -> f64 {
        self.upper[j] - self.lower[j]
    }
}

/// Interval bound propagation through the model (the non-relational
/// baseline domain).
pub fn propagate_interval(model: &Model, input: &IntervalBox) -> Result<IntervalBox> {
    if input.dim() != model.input_dim() {
        return Err(Error::rejected("interval box does not match model input"));
    }
    let mut lo = input.lower.clone();
    let mut hi = input.upper.clone();
    for layer in model.layers() {
        match layer {
            Layer::Relu { .. } => {
                lo.iter_mut().for_each(|v| *v = v.max(0.0));
                hi.iter_mut().for_each(|v| *v = v.max(0.0));
            }
            _ => {
                let mid: Vec<f64> = lo.iter().zip(&hi).map(|(l, h)| (l + h) / 2.0).collect();
                let rad: Vec<f64> = lo.iter().zip(&hi).map(|(l, h)| (h - l) / 2.0).collect();
                let center = layer.forward(&mid);
                let spread = abs_linear(layer, &rad);
                lo = center.iter().zip(&spread).map(|(c, s)| c - s).collect();
                hi = center.iter().zip(&spread).map(|(c, s)| c + s).collect();
            }
        }
    }
    Ok(IntervalBox { lower: lo, upper: hi })
}

/// `|W| r` for the linear part of a layer.
fn abs_linear(layer: &Layer, r: &[f64]) -> Vec<f64> {
    match layer {
        Layer::Dense(d) => (0..d.out_dim())
            .map(|o| d.weight_row(o).iter().zip(r).map(|(w, x)| w.abs() * x).sum())
            .collect(),
        Layer::Conv2d(c) => {
            let abs = crate::nn::Conv2d::new(
                c.geometry(),
                c.kernel().iter().map(|k| k.abs()).collect(),
                vec![0.0; c.bias().len()],
            )
            .expect("same geometry");
            Layer::Conv2d(abs).linear(r)
        }
        Layer::Relu { .. } => r.to_vec(),
    }
}
