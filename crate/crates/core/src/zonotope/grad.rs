//! Gradient of the certifiable loss with respect to model parameters.
//!
//! Center and generator coefficients are differentiated exactly through the
//! linear layers. For crossing ReLU dimensions the slope `λ` and offset `μ`
//! are held constant for the step, so the fresh symbols carry no gradient;
//! `|·|` uses the sign subgradient.

use super::{from_linf_ball, linear_layer, relu_with_cases, CertEpsilon, CertOptions, ReluCase, Zonotope};
use crate::error::{Error, Result};
use crate::nn::{Layer, Model};

#[derive(Debug, Clone, PartialEq)]
pub struct CertLossGrad {
    pub loss: f64,
    pub certified: bool,
    /// `∂loss/∂θ` in flat parameter order (all zeros when `loss == 0`).
    pub params: Vec<f64>,
}

pub fn cert_loss_grad(
    model: &Model,
    x: &[f64],
    y: usize,
    eps: CertEpsilon,
    opts: &CertOptions,
) -> Result<CertLossGrad> {
    if x.len() != model.input_dim() {
        return Err(Error::rejected("input length does not match the model"));
    }
    if y >= model.num_classes() {
        return Err(Error::rejected(format!("label {y} out of range")));
    }
    let mut inputs: Vec<Zonotope> = Vec::with_capacity(model.layers().len());
    let mut cases: Vec<Vec<ReluCase>> = Vec::new();
    let mut cur = from_linf_ball(x, eps, opts.clip)?;
    for layer in model.layers() {
        let next = match layer {
            Layer::Relu { .. } => {
                let (z, c) = relu_with_cases(&cur);
                cases.push(c);
                z
            }
            _ => linear_layer(&cur, layer)?,
        };
        inputs.push(std::mem::replace(&mut cur, next));
    }
    let out = cur;
    let k = out.dim();
    let n_out = out.num_symbols();

    // Worst rival on the shared-symbol difference.
    let mut best: Option<(usize, f64)> = None;
    for q in (0..k).filter(|&q| q != y) {
        let v = super::pairwise_diff_upper(&out, q, y)?;
        if best.is_none_or(|(_, b)| v > b) {
            best = Some((q, v));
        }
    }
    let mut params = vec![0.0; model.param_count()];
    let Some((q, worst)) = best else {
        return Ok(CertLossGrad {
            loss: 0.0,
            certified: true,
            params,
        });
    };
    if worst <= 0.0 {
        return Ok(CertLossGrad {
            loss: 0.0,
            certified: worst < 0.0,
            params,
        });
    }

    let mut dc = vec![0.0; k];
    dc[q] = 1.0;
    dc[y] = -1.0;
    let mut dg = vec![0.0; n_out * k];
    for i in 0..n_out {
        let g = out.generator(i);
        let diff = g[q] - g[y];
        let s = if diff > 0.0 {
            1.0
        } else if diff < 0.0 {
            -1.0
        } else {
            0.0
        };
        dg[i * k + q] = s;
        dg[i * k + y] = -s;
    }

    let offsets = model.param_offsets();
    let mut relu_idx = cases.len();
    for (li, layer) in model.layers().iter().enumerate().rev() {
        let zin = &inputs[li];
        let d_in = zin.dim();
        let n_in = zin.num_symbols();
        let d_out = dc.len();
        match layer {
            Layer::Relu { .. } => {
                relu_idx -= 1;
                let scale: Vec<f64> = cases[relu_idx]
                    .iter()
                    .map(|c| match *c {
                        ReluCase::Pass => 1.0,
                        ReluCase::Zero => 0.0,
                        ReluCase::Cross(l) => l,
                    })
                    .collect();
                for (c, s) in dc.iter_mut().zip(&scale) {
                    *c *= s;
                }
                dg.truncate(n_in * d_out);
                for block in dg.chunks_exact_mut(d_out) {
                    for (v, s) in block.iter_mut().zip(&scale) {
                        *v *= s;
                    }
                }
            }
            _ => {
                let block = &mut params[offsets[li]..offsets[li] + layer.param_count()];
                layer.accumulate_param_grad(zin.center(), &dc, block, true);
                let mut next_dg = Vec::with_capacity(n_in * d_in);
                for i in 0..n_in {
                    let gi = &dg[i * d_out..(i + 1) * d_out];
                    if gi.iter().any(|&v| v != 0.0) {
                        layer.accumulate_param_grad(zin.generator(i), gi, block, false);
                        if li > 0 {
                            next_dg.extend(layer.linear_transpose(gi));
                        }
                    } else if li > 0 {
                        next_dg.extend(std::iter::repeat_n(0.0, d_in));
                    }
                }
                if li > 0 {
                    dc = layer.linear_transpose(&dc);
                    dg = next_dg;
                }
            }
        }
    }
    Ok(CertLossGrad {
        loss: worst,
        certified: false,
        params,
    })
}
