//! Architecture descriptions, seeded initialization and named presets.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::layer::{Conv2d, ConvGeometry, Dense, Layer};
use super::model::Model;
use crate::error::{Error, Result};
use crate::rng::rng_for;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerSpec {
    Dense {
        out: usize,
    },
    Conv {
        out_channels: usize,
        kernel_w: usize,
        kernel_h: usize,
        stride_w: usize,
        stride_h: usize,
    },
    Relu,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Arch {
    pub input_shape: Vec<usize>,
    pub layers: Vec<LayerSpec>,
}

pub const PRESETS: [&str; 3] = ["mnist_conv", "cifar_conv", "desk_mlp"];

fn conv(out_channels: usize, k: usize, s: usize) -> LayerSpec {
    LayerSpec::Conv {
        out_channels,
        kernel_w: k,
        kernel_h: k,
        stride_w: s,
        stride_h: s,
    }
}

impl Arch {
    /// Named preset. `mnist_conv` and `cifar_conv` fix their input shapes
    /// (1x28x28, 3x32x32); `desk_mlp` adapts to `input_shape`.
    pub fn preset(name: &str, input_shape: &[usize], num_classes: usize) -> Result<Arch> {
        use LayerSpec::*;
        let arch = match name {
            "mnist_conv" => Arch {
                input_shape: vec![1, 28, 28],
                layers: vec![
                    conv(16, 4, 2),
                    Relu,
                    conv(32, 4, 2),
                    Relu,
                    Dense { out: 1000 },
                    Relu,
                    Dense { out: num_classes },
                ],
            },
            "cifar_conv" => Arch {
                input_shape: vec![3, 32, 32],
                layers: vec![
                    conv(32, 3, 1),
                    Relu,
                    conv(64, 4, 2),
                    Relu,
                    conv(64, 3, 1),
                    Relu,
                    conv(128, 4, 2),
                    Relu,
                    Dense { out: 512 },
                    Relu,
                    Dense { out: 512 },
                    Relu,
                    Dense { out: num_classes },
                ],
            },
            "desk_mlp" => Arch {
                input_shape: input_shape.to_vec(),
                layers: vec![
                    Dense { out: 64 },
                    Relu,
                    Dense { out: 64 },
                    Relu,
                    Dense { out: num_classes },
                ],
            },
            other => {
                return Err(Error::config(format!(
                    "unknown architecture preset '{other}' (expected one of {PRESETS:?})"
                )))
            }
        };
        Ok(arch)
    }

    /// Instantiates the architecture with Glorot-uniform weights and zero
    /// biases. Layer `i` draws from its own stream derived from `seed`.
    pub fn build(&self, seed: u64) -> Result<Model> {
        let mut layers = Vec::with_capacity(self.layers.len());
        let mut shape: Vec<usize> = self.input_shape.clone();
        for (i, spec) in self.layers.iter().enumerate() {
            let mut rng = rng_for(seed, &[0x1A7E, i as u64]);
            let in_dim: usize = shape.iter().product();
            match *spec {
                LayerSpec::Dense { out } => {
                    let limit = (6.0 / (in_dim + out) as f64).sqrt();
                    let weight = (0..in_dim * out)
                        .map(|_| rng.random_range(-limit..limit))
                        .collect();
                    layers.push(Layer::Dense(Dense::new(in_dim, out, weight, vec![0.0; out])?));
                    shape = vec![out];
                }
                LayerSpec::Conv {
                    out_channels,
                    kernel_w,
                    kernel_h,
                    stride_w,
                    stride_h,
                } => {
                    let [c, h, w] = match shape.as_slice() {
                        &[c, h, w] => [c, h, w],
                        &[h, w] => [1, h, w],
                        other => {
                            return Err(Error::config(format!(
                                "convolution needs an image-shaped input, got {other:?}"
                            )))
                        }
                    };
                    let geometry = ConvGeometry {
                        in_channels: c,
                        in_h: h,
                        in_w: w,
                        out_channels,
                        kernel_h,
                        kernel_w,
                        stride_w,
                        stride_h,
                    };
                    let fan_in = c * kernel_h * kernel_w;
                    let fan_out = out_channels * kernel_h * kernel_w;
                    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
                    let kernel = (0..geometry.kernel_len())
                        .map(|_| rng.random_range(-limit..limit))
                        .collect();
                    let layer = Conv2d::new(geometry, kernel, vec![0.0; out_channels])?;
                    shape = layer.output_shape().to_vec();
                    layers.push(Layer::Conv2d(layer));
                }
                LayerSpec::Relu => layers.push(Layer::Relu { dim: in_dim }),
            }
        }
        Model::new(self.input_shape.clone(), layers)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_compose() {
        let m = Arch::preset("mnist_conv", &[], 10).unwrap().build(1).unwrap();
        assert_eq!(m.num_classes(), 10);
        // 16x13x13 -> 32x5x5 -> 1000 -> 10
        assert_eq!(m.layers()[1].in_dim(), 16 * 13 * 13);
        assert_eq!(m.layers()[3].in_dim(), 32 * 5 * 5);
        let c = Arch::preset("cifar_conv", &[], 10).unwrap().build(1).unwrap();
        assert_eq!(c.input_dim(), 3 * 32 * 32);
        let d = Arch::preset("desk_mlp", &[1, 8, 8], 4).unwrap().build(1).unwrap();
        assert_eq!(d.num_classes(), 4);
        assert!(Arch::preset("resnet", &[], 10).is_err());
    }

    #[test]
    fn init_is_seeded_and_bounded() {
        let arch = Arch::preset("desk_mlp", &[5], 3).unwrap();
        let a = arch.build(3).unwrap().flatten_params();
        let b = arch.build(3).unwrap().flatten_params();
        let c = arch.build(4).unwrap().flatten_params();
        assert_eq!(a, b);
        assert_ne!(a, c);
        let limit = (6.0f64 / (5 + 64) as f64).sqrt();
        assert!(a[..5 * 64].iter().all(|w| w.abs() <= limit));
    }
}
