//! Minimal deterministic feed-forward engine: dense / convolution / ReLU
//! layers, temperature softmax, backprop and SGD.

pub mod arch;
pub mod layer;
pub mod model;
pub mod serialize;
pub mod train;

pub use arch::{Arch, LayerSpec, PRESETS};
pub use layer::{Conv2d, ConvGeometry, Dense, Layer};
pub use model::{cross_entropy_grad, softmax_slice, softmax_t, Gradients, Loss, Model, Target, Trace};
pub use train::{accuracy, train, train_soft, TrainConfig};
