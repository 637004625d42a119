use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Fully connected layer, `y = W x + b` with `W` stored row-major (out x in).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    in_dim: usize,
    out_dim: usize,
    weight: Vec<f64>,
    bias: Vec<f64>,
}

impl Dense {
    pub fn new(in_dim: usize, out_dim: usize, weight: Vec<f64>, bias: Vec<f64>) -> Result<Self> {
        if in_dim == 0 || out_dim == 0 {
            return Err(Error::rejected("dense layer dimensions must be positive"));
        }
        if weight.len() != in_dim * out_dim || bias.len() != out_dim {
            return Err(Error::rejected(format!(
                "dense {in_dim}->{out_dim} needs {} weights and {out_dim} biases, got {} and {}",
                in_dim * out_dim,
                weight.len(),
                bias.len()
            )));
        }
        Ok(Self {
            in_dim,
            out_dim,
            weight,
            bias,
        })
    }

    pub fn in_dim(&self) -> usize {
        self.in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.out_dim
    }

    pub fn weight(&self) -> &[f64] {
        &self.weight
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    #[inline]
    pub fn weight_row(&self, o: usize) -> &[f64] {
        &self.weight[o * self.in_dim..(o + 1) * self.in_dim]
    }
}

/// Valid (unpadded) 2-D convolution over a `C x H x W` input.
///
/// The kernel is stored `C_out x C_in x kH x kW`; strides are given as
/// `(s_w, s_h)`, width first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Conv2d {
    in_channels: usize,
    in_h: usize,
    in_w: usize,
    out_channels: usize,
    kernel_h: usize,
    kernel_w: usize,
    stride_w: usize,
    stride_h: usize,
    kernel: Vec<f64>,
    bias: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeometry {
    pub in_channels: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub out_channels: usize,
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub stride_w: usize,
    pub stride_h: usize,
}

impl ConvGeometry {
    pub fn out_h(&self) -> usize {
        (self.in_h - self.kernel_h) / self.stride_h + 1
    }

    pub fn out_w(&self) -> usize {
        (self.in_w - self.kernel_w) / self.stride_w + 1
    }

    pub fn kernel_len(&self) -> usize {
        self.out_channels * self.in_channels * self.kernel_h * self.kernel_w
    }

    fn validate(&self) -> Result<()> {
        let g = self;
        if g.stride_w == 0 || g.stride_h == 0 {
            return Err(Error::rejected("convolution strides must be >= 1"));
        }
        if [g.in_channels, g.out_channels, g.kernel_h, g.kernel_w].contains(&0)
        {
            return Err(Error::rejected("convolution extents must be positive"));
        }
        if g.kernel_h > g.in_h || g.kernel_w > g.in_w {
            return Err(Error::rejected(format!(
                "kernel {}x{} does not fit input {}x{}",
                g.kernel_h, g.kernel_w, g.in_h, g.in_w
            )));
        }
        Ok(())
    }
}

impl Conv2d {
    pub fn new(geometry: ConvGeometry, kernel: Vec<f64>, bias: Vec<f64>) -> Result<Self> {
        geometry.validate()?;
        if kernel.len() != geometry.kernel_len() || bias.len() != geometry.out_channels {
            return Err(Error::rejected(format!(
                "conv needs {} kernel values and {} biases, got {} and {}",
                geometry.kernel_len(),
                geometry.out_channels,
                kernel.len(),
                bias.len()
            )));
        }
        let g = geometry;
        Ok(Self {
            in_channels: g.in_channels,
            in_h: g.in_h,
            in_w: g.in_w,
            out_channels: g.out_channels,
            kernel_h: g.kernel_h,
            kernel_w: g.kernel_w,
            stride_w: g.stride_w,
            stride_h: g.stride_h,
            kernel,
            bias,
        })
    }

    pub fn geometry(&self) -> ConvGeometry {
        ConvGeometry {
            in_channels: self.in_channels,
            in_h: self.in_h,
            in_w: self.in_w,
            out_channels: self.out_channels,
            kernel_h: self.kernel_h,
            kernel_w: self.kernel_w,
            stride_w: self.stride_w,
            stride_h: self.stride_h,
        }
    }

    pub fn kernel(&self) -> &[f64] {
        &self.kernel
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    pub fn in_dim(&self) -> usize {
        self.in_channels * self.in_h * self.in_w
    }

    pub fn out_dim(&self) -> usize {
        let g = self.geometry();
        self.out_channels * g.out_h() * g.out_w()
    }

    pub fn output_shape(&self) -> [usize; 3] {
        let g = self.geometry();
        [self.out_channels, g.out_h(), g.out_w()]
    }

    /// Convolution without bias, accumulated into `out` (which must be zeroed
    /// or hold a prior partial sum).
    pub(crate) fn correlate_into(&self, x: &[f64], out: &mut [f64]) {
        let g = self.geometry();
        let (oh_n, ow_n) = (g.out_h(), g.out_w());
        let plane = self.in_h * self.in_w;
        for co in 0..self.out_channels {
            for ci in 0..self.in_channels {
                let kbase = (co * self.in_channels + ci) * self.kernel_h * self.kernel_w;
                let xplane = &x[ci * plane..(ci + 1) * plane];
                for kh in 0..self.kernel_h {
                    for kw in 0..self.kernel_w {
                        let k = self.kernel[kbase + kh * self.kernel_w + kw];
                        if k == 0.0 {
                            continue;
                        }
                        for oh in 0..oh_n {
                            let row = (oh * self.stride_h + kh) * self.in_w;
                            let obase = (co * oh_n + oh) * ow_n;
                            for ow in 0..ow_n {
                                out[obase + ow] += k * xplane[row + ow * self.stride_w + kw];
                            }
                        }
                    }
                }
            }
        }
    }

    /// Transposed convolution: accumulates `Kᵀ g` into `grad_in`.
    pub(crate) fn correlate_transpose_into(&self, grad_out: &[f64], grad_in: &mut [f64]) {
        let g = self.geometry();
        let (oh_n, ow_n) = (g.out_h(), g.out_w());
        let plane = self.in_h * self.in_w;
        for co in 0..self.out_channels {
            for ci in 0..self.in_channels {
                let kbase = (co * self.in_channels + ci) * self.kernel_h * self.kernel_w;
                for kh in 0..self.kernel_h {
                    for kw in 0..self.kernel_w {
                        let k = self.kernel[kbase + kh * self.kernel_w + kw];
                        for oh in 0..oh_n {
                            let row = ci * plane + (oh * self.stride_h + kh) * self.in_w;
                            let obase = (co * oh_n + oh) * ow_n;
                            for ow in 0..ow_n {
                                grad_in[row + ow * self.stride_w + kw] += k * grad_out[obase + ow];
                            }
                        }
                    }
                }
            }
        }
    }

    /// Kernel gradient for one example, accumulated into `grad_kernel`.
    pub(crate) fn kernel_grad_into(&self, x: &[f64], grad_out: &[f64], grad_kernel: &mut [f64]) {
        let g = self.geometry();
        let (oh_n, ow_n) = (g.out_h(), g.out_w());
        let plane = self.in_h * self.in_w;
        for co in 0..self.out_channels {
            for ci in 0..self.in_channels {
                let kbase = (co * self.in_channels + ci) * self.kernel_h * self.kernel_w;
                for kh in 0..self.kernel_h {
                    for kw in 0..self.kernel_w {
                        let mut acc = 0.0;
                        for oh in 0..oh_n {
                            let row = ci * plane + (oh * self.stride_h + kh) * self.in_w;
                            let obase = (co * oh_n + oh) * ow_n;
                            for ow in 0..ow_n {
                                acc += grad_out[obase + ow] * x[row + ow * self.stride_w + kw];
                            }
                        }
                        grad_kernel[kbase + kh * self.kernel_w + kw] += acc;
                    }
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Layer {
    Dense(Dense),
    Conv2d(Conv2d),
    /// Elementwise ReLU over `dim` units.
    Relu { dim: usize },
}

impl Layer {
    pub fn in_dim(&self) -> usize {
        match self {
            Layer::Dense(d) => d.in_dim,
            Layer::Conv2d(c) => c.in_dim(),
            Layer::Relu { dim } => *dim,
        }
    }

    pub fn out_dim(&self) -> usize {
        match self {
            Layer::Dense(d) => d.out_dim,
            Layer::Conv2d(c) => c.out_dim(),
            Layer::Relu { dim } => *dim,
        }
    }

    pub fn param_count(&self) -> usize {
        match self {
            Layer::Dense(d) => d.weight.len() + d.bias.len(),
            Layer::Conv2d(c) => c.kernel.len() + c.bias.len(),
            Layer::Relu { .. } => 0,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Layer::Dense(_) => "dense",
            Layer::Conv2d(_) => "conv2d",
            Layer::Relu { .. } => "relu",
        }
    }

    /// Forward pass for a single flat example.
    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        match self {
            Layer::Dense(d) => (0..d.out_dim)
                .map(|o| d.bias[o] + dot(d.weight_row(o), x))
                .collect(),
            Layer::Conv2d(c) => {
                let mut out = vec![0.0; c.out_dim()];
                c.correlate_into(x, &mut out);
                let per = out.len() / c.out_channels;
                for (co, chunk) in out.chunks_mut(per).enumerate() {
                    for v in chunk {
                        *v += c.bias[co];
                    }
                }
                out
            }
            Layer::Relu { .. } => x.iter().map(|&v| v.max(0.0)).collect(),
        }
    }

    /// The linear part of the layer (no bias) applied to `v`. Identity for ReLU
    /// is not meaningful and panics.
    pub(crate) fn linear(&self, v: &[f64]) -> Vec<f64> {
        match self {
            Layer::Dense(d) => (0..d.out_dim).map(|o| dot(d.weight_row(o), v)).collect(),
            Layer::Conv2d(c) => {
                let mut out = vec![0.0; c.out_dim()];
                c.correlate_into(v, &mut out);
                out
            }
            Layer::Relu { .. } => unreachable!("relu has no linear part"),
        }
    }

    /// Transposed linear part: `Wᵀ g`.
    pub(crate) fn linear_transpose(&self, g: &[f64]) -> Vec<f64> {
        match self {
            Layer::Dense(d) => {
                let mut out = vec![0.0; d.in_dim];
                for (o, &go) in g.iter().enumerate() {
                    if go != 0.0 {
                        axpy(go, d.weight_row(o), &mut out);
                    }
                }
                out
            }
            Layer::Conv2d(c) => {
                let mut out = vec![0.0; c.in_dim()];
                c.correlate_transpose_into(g, &mut out);
                out
            }
            Layer::Relu { .. } => unreachable!("relu has no linear part"),
        }
    }

    /// Accumulates `∂/∂W` of `gᵀ (W x)` into the weight part of `grad` and
    /// `g` into the bias part (when `with_bias`).
    pub(crate) fn accumulate_param_grad(
        &self,
        x: &[f64],
        g: &[f64],
        grad: &mut [f64],
        with_bias: bool,
    ) {
        match self {
            Layer::Dense(d) => {
                let (gw, gb) = grad.split_at_mut(d.weight.len());
                for (o, &go) in g.iter().enumerate() {
                    if go != 0.0 {
                        axpy(go, x, &mut gw[o * d.in_dim..(o + 1) * d.in_dim]);
                    }
                    if with_bias {
                        gb[o] += go;
                    }
                }
            }
            Layer::Conv2d(c) => {
                let (gk, gb) = grad.split_at_mut(c.kernel.len());
                c.kernel_grad_into(x, g, gk);
                if with_bias {
                    let per = g.len() / c.out_channels;
                    for (co, chunk) in g.chunks(per).enumerate() {
                        gb[co] += chunk.iter().sum::<f64>();
                    }
                }
            }
            Layer::Relu { .. } => {}
        }
    }

    pub(crate) fn write_params(&self, out: &mut Vec<f64>) {
        match self {
            Layer::Dense(d) => {
                out.extend_from_slice(&d.weight);
                out.extend_from_slice(&d.bias);
            }
            Layer::Conv2d(c) => {
                out.extend_from_slice(&c.kernel);
                out.extend_from_slice(&c.bias);
            }
            Layer::Relu { .. } => {}
        }
    }

    /// Mutable parameter slices in flat order (weights, then bias).
    pub(crate) fn params_mut(&mut self) -> [&mut [f64]; 2] {
        match self {
            Layer::Dense(d) => [&mut d.weight, &mut d.bias],
            Layer::Conv2d(c) => [&mut c.kernel, &mut c.bias],
            Layer::Relu { .. } => [&mut [], &mut []],
        }
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub(crate) fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}
