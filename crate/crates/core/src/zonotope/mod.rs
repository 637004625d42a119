//! Interval and zonotope abstract domains.
//!
//! A zonotope over `d` dimensions is `x̂ = η₀ + Σᵢ ηᵢ εᵢ` with shared error
//! symbols `εᵢ ∈ [−1, 1]`. Generators are stored symbol-major: generator `i`
//! is the contiguous slice `ηᵢ ∈ ℝᵈ`, so the symbol index is the symbol's
//! identity and appending fresh symbols never moves existing ones.

mod certify;
mod grad;
mod interval;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Layer, Model};

pub use certify::{
    cert_loss, cert_loss_with, certified_stats, certified_stats_with, certify, certify_with,
    naive_diff_upper, pairwise_diff_upper, CertOptions, CertStats, CertVerdict, LossMode,
};
pub use grad::{cert_loss_grad, CertLossGrad};
pub use interval::{propagate_interval, IntervalBox};

/// Which role an L∞ radius plays: certification or adversarial crafting.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EpsRole {
    Crt,
    Adv,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CertEpsilon {
    value: f64,
    role: EpsRole,
}

impl CertEpsilon {
    pub fn new(value: f64, role: EpsRole) -> Result<Self> {
        if !(value >= 0.0) || !value.is_finite() {
            return Err(Error::config(format!("epsilon must be finite and >= 0, got {value}")));
        }
        Ok(Self { value, role })
    }

    pub fn crt(value: f64) -> Result<Self> {
        Self::new(value, EpsRole::Crt)
    }

    pub fn adv(value: f64) -> Result<Self> {
        Self::new(value, EpsRole::Adv)
    }

    pub fn value(&self) -> f64 {
        self.value
    }

    pub fn role(&self) -> EpsRole {
        self.role
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Zonotope {
    center: Vec<f64>,
    /// `num_symbols * dim` coefficients, symbol-major.
    gens: Vec<f64>,
}

impl Zonotope {
    /// Builds a zonotope from its center and a `d x N` coefficient matrix
    /// given as `d` rows of `N` coefficients.
    pub fn from_rows(center: Vec<f64>, rows: &[Vec<f64>]) -> Result<Self> {
        let d = center.len();
        if rows.len() != d {
            return Err(Error::rejected(format!(
                "expected {d} generator rows, got {}",
                rows.len()
            )));
        }
        let n = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != n) {
            return Err(Error::rejected("generator rows have different lengths"));
        }
        let mut gens = vec![0.0; n * d];
        for (j, row) in rows.iter().enumerate() {
            for (i, &c) in row.iter().enumerate() {
                gens[i * d + j] = c;
            }
        }
        Self::from_symbol_major(center, gens)
    }

    /// Builds a zonotope from symbol-major generators (`N` blocks of `d`).
    pub fn from_symbol_major(center: Vec<f64>, gens: Vec<f64>) -> Result<Self> {
        let d = center.len();
        if d == 0 {
            return Err(Error::rejected("zonotope must have at least one dimension"));
        }
        if !gens.len().is_multiple_of(d) {
            return Err(Error::rejected("generator storage is not a multiple of the dimension"));
        }
        if center.iter().chain(&gens).any(|v| !v.is_finite()) {
            return Err(Error::Numeric("non-finite zonotope coefficient".into()));
        }
        Ok(Self { center, gens })
    }

    /// A point (no error symbols).
    pub fn point(x: &[f64]) -> Result<Self> {
        Self::from_symbol_major(x.to_vec(), Vec::new())
    }

    pub fn dim(&self) -> usize {
        self.center.len()
    }

    pub fn num_symbols(&self) -> usize {
        self.gens.len() / self.center.len()
    }

    pub fn center(&self) -> &[f64] {
        &self.center
    }

    /// Coefficients of symbol `i` across all dimensions.
    pub fn generator(&self, i: usize) -> &[f64] {
        let d = self.dim();
        &self.gens[i * d..(i + 1) * d]
    }

    pub fn coefficient(&self, dim: usize, symbol: usize) -> f64 {
        self.gens[symbol * self.dim() + dim]
    }

    /// Coefficients of dimension `j` over all symbols.
    pub fn row(&self, j: usize) -> Vec<f64> {
        (0..self.num_symbols()).map(|i| self.coefficient(j, i)).collect()
    }

    /// Concrete point for a full assignment of the error symbols.
    pub fn instantiate(&self, eps: &[f64]) -> Vec<f64> {
        assert_eq!(eps.len(), self.num_symbols(), "one value per error symbol");
        let mut out = self.center.clone();
        for (i, &e) in eps.iter().enumerate() {
            for (o, g) in out.iter_mut().zip(self.generator(i)) {
                *o += e * g;
            }
        }
        out
    }

    /// Sum of absolute coefficients per dimension.
    pub fn radius(&self) -> Vec<f64> {
        let d = self.dim();
        let mut r = vec![0.0; d];
        for g in self.gens.chunks_exact(d) {
            for (rj, gj) in r.iter_mut().zip(g) {
                *rj += gj.abs();
            }
        }
        r
    }

    /// Concrete per-dimension bounds `η₀ ∓ Σ|ηᵢ|`.
    pub fn bounds(&self) -> IntervalBox {
        let r = self.radius();
        IntervalBox {
            lower: self.center.iter().zip(&r).map(|(c, r)| c - r).collect(),
            upper: self.center.iter().zip(&r).map(|(c, r)| c + r).collect(),
        }
    }
}

pub fn bounds(z: &Zonotope) -> IntervalBox {
    z.bounds()
}

/// Zonotope of the L∞ ball of radius `eps` around `x`, optionally
/// intersected with the box `[lo, hi]`. One fresh symbol per input dimension.
pub fn from_linf_ball(x: &[f64], eps: CertEpsilon, clip: Option<(f64, f64)>) -> Result<Zonotope> {
    let e = eps.value();
    let d = x.len();
    if d == 0 {
        return Err(Error::rejected("empty input"));
    }
    if let Some((lo, hi)) = clip {
        if lo > hi {
            return Err(Error::config(format!("clip range [{lo}, {hi}] is empty")));
        }
    }
    let mut center = Vec::with_capacity(d);
    let mut gens = vec![0.0; d * d];
    for (j, &xj) in x.iter().enumerate() {
        let (c, h) = match clip {
            None => (xj, e),
            Some((lo, hi)) => {
                let a = (xj - e).clamp(lo, hi);
                let b = (xj + e).clamp(lo, hi);
                ((a + b) / 2.0, (b - a) / 2.0)
            }
        };
        center.push(c);
        gens[j * d + j] = h;
    }
    Zonotope::from_symbol_major(center, gens)
}

/// Exact image under `v ↦ W v + b` with `W` row-major `out x in`.
pub fn affine(z: &Zonotope, weight: &[f64], bias: &[f64]) -> Result<Zonotope> {
    let inp = z.dim();
    let out = bias.len();
    if weight.len() != out * inp {
        return Err(Error::rejected(format!(
            "weight has {} entries, expected {out}x{inp}",
            weight.len()
        )));
    }
    let matvec = |v: &[f64]| -> Vec<f64> {
        (0..out)
            .map(|o| crate::nn::layer::dot(&weight[o * inp..(o + 1) * inp], v))
            .collect()
    };
    let center = matvec(&z.center)
        .into_iter()
        .zip(bias)
        .map(|(c, b)| c + b)
        .collect();
    let mut gens = Vec::with_capacity(z.num_symbols() * out);
    for g in z.gens.chunks_exact(inp) {
        gens.extend(matvec(g));
    }
    Ok(Zonotope { center, gens })
}

/// Exact image under a dense or convolutional layer (bias included).
pub fn linear_layer(z: &Zonotope, layer: &Layer) -> Result<Zonotope> {
    if matches!(layer, Layer::Relu { .. }) {
        return Err(Error::rejected("ReLU is not a linear layer"));
    }
    if z.dim() != layer.in_dim() {
        return Err(Error::rejected(format!(
            "zonotope has {} dimensions, layer expects {}",
            z.dim(),
            layer.in_dim()
        )));
    }
    let mut center = layer.linear(&z.center);
    match layer {
        Layer::Dense(d) => {
            for (c, b) in center.iter_mut().zip(d.bias()) {
                *c += b;
            }
        }
        Layer::Conv2d(c) => {
            let per = center.len() / c.bias().len();
            for (co, chunk) in center.chunks_mut(per).enumerate() {
                for v in chunk {
                    *v += c.bias()[co];
                }
            }
        }
        Layer::Relu { .. } => unreachable!(),
    }
    let mut gens = Vec::with_capacity(z.num_symbols() * layer.out_dim());
    for g in z.gens.chunks_exact(z.dim()) {
        gens.extend(layer.linear(g));
    }
    Ok(Zonotope { center, gens })
}

/// Convolution transformer; equal to `affine` with the unrolled matrix.
pub fn conv2d_abs(z: &Zonotope, layer: &crate::nn::Conv2d) -> Result<Zonotope> {
    linear_layer(z, &Layer::Conv2d(layer.clone()))
}

/// How ReLU treated one dimension.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) enum ReluCase {
    Pass,
    Zero,
    /// Crossing with slope λ.
    Cross(f64),
}

/// DeepZono ReLU. Dimensions with `l ≥ 0` pass through, `u ≤ 0` collapse
/// to zero, and crossing dimensions get slope `λ = u/(u−l)`, offset
/// `μ = −λl/2` and one fresh symbol with coefficient `μ`, appended in
/// dimension order.
pub fn relu_deepzono(z: &Zonotope) -> Zonotope {
    relu_with_cases(z).0
}

pub(crate) fn relu_with_cases(z: &Zonotope) -> (Zonotope, Vec<ReluCase>) {
    let d = z.dim();
    let b = z.bounds();
    let mut cases = Vec::with_capacity(d);
    let mut center = z.center.clone();
    let mut scale = vec![1.0; d];
    let mut fresh: Vec<(usize, f64)> = Vec::new();
    for j in 0..d {
        let (l, u) = (b.lower[j], b.upper[j]);
        if l >= 0.0 {
            cases.push(ReluCase::Pass);
        } else if u <= 0.0 {
            cases.push(ReluCase::Zero);
            center[j] = 0.0;
            scale[j] = 0.0;
        } else {
            let lambda = u / (u - l);
            let mu = -lambda * l / 2.0;
            cases.push(ReluCase::Cross(lambda));
            center[j] = lambda * center[j] + mu;
            scale[j] = lambda;
            fresh.push((j, mu));
        }
    }
    let mut gens = Vec::with_capacity(z.gens.len() + fresh.len() * d);
    for g in z.gens.chunks_exact(d) {
        gens.extend(g.iter().zip(&scale).map(|(c, s)| c * s));
    }
    for (j, mu) in fresh {
        let start = gens.len();
        gens.resize(start + d, 0.0);
        gens[start + j] = mu;
    }
    (Zonotope { center, gens }, cases)
}

/// Pushes a zonotope through every layer of the model.
pub fn propagate(model: &Model, z: &Zonotope) -> Result<Zonotope> {
    if z.dim() != model.input_dim() {
        return Err(Error::rejected(format!(
            "zonotope has {} dimensions, model input has {}",
            z.dim(),
            model.input_dim()
        )));
    }
    let mut cur = z.clone();
    for layer in model.layers() {
        cur = match layer {
            Layer::Relu { .. } => relu_deepzono(&cur),
            _ => linear_layer(&cur, layer)?,
        };
    }
    Ok(cur)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn worked_input() -> Zonotope {
        from_linf_ball(&[0.25, 0.25], CertEpsilon::crt(0.25).unwrap(), None).unwrap()
    }

    const W: [f64; 4] = [2.0, 1.0, 1.0, -1.0];

    #[test]
    fn ball_without_clip() {
        let z = worked_input();
        assert_eq!(z.center(), &[0.25, 0.25]);
        assert_eq!(z.row(0), vec![0.25, 0.0]);
        assert_eq!(z.row(1), vec![0.0, 0.25]);
        let b = z.bounds();
        assert_eq!(b.lower, vec![0.0, 0.0]);
        assert_eq!(b.upper, vec![0.5, 0.5]);
    }

    #[test]
    fn ball_zero_radius_is_point() {
        let z = from_linf_ball(&[0.3, 0.7], CertEpsilon::crt(0.0).unwrap(), None).unwrap();
        assert_eq!(z.num_symbols(), 2);
        let b = z.bounds();
        assert_eq!(b.lower, vec![0.3, 0.7]);
        assert_eq!(b.upper, vec![0.3, 0.7]);
    }

    #[test]
    fn ball_with_clip() {
        let z = from_linf_ball(&[0.9], CertEpsilon::crt(0.25).unwrap(), Some((0.0, 1.0))).unwrap();
        assert!((z.center()[0] - 0.825).abs() < 1e-15);
        assert!((z.coefficient(0, 0) - 0.175).abs() < 1e-15);
        let b = z.bounds();
        assert!((b.lower[0] - 0.65).abs() < 1e-15);
        assert_eq!(b.upper[0], 1.0);
        assert!(from_linf_ball(&[0.5], CertEpsilon::crt(0.1).unwrap(), Some((1.0, 0.0))).is_err());
    }

    #[test]
    fn affine_matches_worked_example() {
        let z = affine(&worked_input(), &W, &[0.0, 0.0]).unwrap();
        assert_eq!(z.center(), &[0.75, 0.0]);
        assert_eq!(z.row(0), vec![0.5, 0.25]);
        assert_eq!(z.row(1), vec![0.25, -0.25]);
        let b = z.bounds();
        assert_eq!((b.lower[0], b.upper[0]), (0.0, 1.5));
        assert_eq!((b.lower[1], b.upper[1]), (-0.5, 0.5));
    }

    #[test]
    fn affine_identity_is_noop() {
        let z = Zonotope::from_rows(vec![1.0, -2.0], &[vec![0.5, 0.1, 0.0], vec![0.2, -0.3, 1.0]])
            .unwrap();
        let out = affine(&z, &[1.0, 0.0, 0.0, 1.0], &[0.0, 0.0]).unwrap();
        assert_eq!(out, z);
        assert!(affine(&z, &[1.0, 0.0], &[0.0, 0.0]).is_err());
    }

    #[test]
    fn relu_worked_example() {
        let z = relu_deepzono(&affine(&worked_input(), &W, &[0.0, 0.0]).unwrap());
        assert_eq!(z.num_symbols(), 3);
        assert_eq!(z.center(), &[0.75, 0.125]);
        assert_eq!(z.row(0), vec![0.5, 0.25, 0.0]);
        assert_eq!(z.row(1), vec![0.125, -0.125, 0.125]);
        let b = z.bounds();
        assert_eq!((b.lower[1], b.upper[1]), (-0.25, 0.5));
    }

    #[test]
    fn relu_negative_dimension_collapses() {
        let z = Zonotope::from_rows(vec![-1.5, 2.0], &[vec![0.5], vec![0.5]]).unwrap();
        let r = relu_deepzono(&z);
        assert_eq!(r.center(), &[0.0, 2.0]);
        assert_eq!(r.row(0), vec![0.0]);
        assert_eq!(r.row(1), vec![0.5]);
        assert_eq!(r.num_symbols(), 1);
    }

    #[test]
    fn relu_boundary_cases_do_not_cross() {
        // l = 0 passes through, u = 0 collapses.
        let z = Zonotope::from_rows(vec![1.0, -1.0], &[vec![1.0], vec![1.0]]).unwrap();
        let r = relu_deepzono(&z);
        assert_eq!(r.num_symbols(), 1);
        assert_eq!(r.center(), &[1.0, 0.0]);
    }

    #[test]
    fn relaxation_contains_relu_at_extremes() {
        for &(l, u) in &[(-0.5, 0.5), (-2.0, 0.1), (-0.01, 3.0)] {
            let lambda: f64 = u / (u - l);
            let mu = -lambda * l / 2.0;
            for v in [l, 0.0, u] {
                let r = f64::max(v, 0.0);
                assert!(lambda * v - 1e-12 <= r && r <= lambda * v + 2.0 * mu + 1e-12);
            }
        }
    }
}
