//! Labeled image datasets: IDX ingestion, synthetic generation, defender splits.

use std::io::Read;
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::rng_for;
use crate::tensor::Tensor;

const IMAGES_MAGIC: u32 = 0x0000_0803;
const LABELS_MAGIC: u32 = 0x0000_0801;

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    pub name: String,
    /// `N x C x H x W` (or `N x D` for flat data), values in `[0, 1]`.
    pub images: Tensor,
    pub labels: Vec<usize>,
    pub num_classes: usize,
}

impl LabeledDataset {
    pub fn new(
        name: impl Into<String>,
        images: Tensor,
        labels: Vec<usize>,
        num_classes: usize,
    ) -> Result<Self> {
        let n = images.shape().first().copied().unwrap_or(0);
        if n != labels.len() {
            return Err(Error::rejected(format!(
                "{n} images but {} labels",
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(Error::rejected(format!(
                "label {bad} outside [0, {num_classes})"
            )));
        }
        if images.data().iter().any(|&v| !(0.0..=1.0).contains(&v)) {
            return Err(Error::rejected("pixel values must lie in [0, 1]"));
        }
        Ok(Self {
            name: name.into(),
            images,
            labels,
            num_classes,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Shape of one example (`C x H x W` or `D`).
    pub fn sample_shape(&self) -> &[usize] {
        &self.images.shape()[1..]
    }

    pub fn sample_dim(&self) -> usize {
        self.sample_shape().iter().product()
    }

    pub fn x(&self, i: usize) -> &[f64] {
        let d = self.sample_dim();
        &self.images.data()[i * d..(i + 1) * d]
    }

    pub fn y(&self, i: usize) -> usize {
        self.labels[i]
    }

    /// Sub-dataset made of the given indices, in order.
    pub fn subset(&self, indices: &[usize], name: impl Into<String>) -> LabeledDataset {
        let d = self.sample_dim();
        let mut data = Vec::with_capacity(indices.len() * d);
        for &i in indices {
            data.extend_from_slice(self.x(i));
        }
        let mut shape = vec![indices.len()];
        shape.extend_from_slice(self.sample_shape());
        LabeledDataset {
            name: name.into(),
            images: Tensor::new(shape, data).expect("subset shape"),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            num_classes: self.num_classes,
        }
    }

    pub fn range(&self, start: usize, end: usize, name: impl Into<String>) -> LabeledDataset {
        let idx: Vec<usize> = (start..end).collect();
        self.subset(&idx, name)
    }

    /// Concatenation of datasets with identical sample shapes.
    pub fn concat(parts: &[&LabeledDataset], name: impl Into<String>) -> Result<LabeledDataset> {
        let first = parts
            .first()
            .ok_or_else(|| Error::config("cannot concatenate zero datasets"))?;
        let mut data = Vec::new();
        let mut labels = Vec::new();
        for p in parts {
            if p.sample_shape() != first.sample_shape() || p.num_classes != first.num_classes {
                return Err(Error::rejected("concatenating incompatible datasets"));
            }
            data.extend_from_slice(p.images.data());
            labels.extend_from_slice(&p.labels);
        }
        let mut shape = vec![labels.len()];
        shape.extend_from_slice(first.sample_shape());
        Ok(LabeledDataset {
            name: name.into(),
            images: Tensor::new(shape, data)?,
            labels,
            num_classes: first.num_classes,
        })
    }
}

fn read_u32(bytes: &[u8], offset: usize, field: &str) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::format(field, "file truncated in header"))
}

/// Parses an IDX image/label byte-stream pair.
pub fn parse_idx(images: &[u8], labels: &[u8], name: &str) -> Result<LabeledDataset> {
    let magic = read_u32(images, 0, "images.magic")?;
    if magic != IMAGES_MAGIC {
        return Err(Error::format(
            "images.magic",
            format!("expected 0x{IMAGES_MAGIC:08x}, found 0x{magic:08x}"),
        ));
    }
    let n = read_u32(images, 4, "images.count")? as usize;
    let rows = read_u32(images, 8, "images.rows")? as usize;
    let cols = read_u32(images, 12, "images.cols")? as usize;
    let lmagic = read_u32(labels, 0, "labels.magic")?;
    if lmagic != LABELS_MAGIC {
        return Err(Error::format(
            "labels.magic",
            format!("expected 0x{LABELS_MAGIC:08x}, found 0x{lmagic:08x}"),
        ));
    }
    let ln = read_u32(labels, 4, "labels.count")? as usize;
    if ln != n {
        return Err(Error::format(
            "labels.count",
            format!("labels file holds {ln} entries but images file holds {n}"),
        ));
    }
    let pixels = &images[16..];
    if pixels.len() != n * rows * cols {
        return Err(Error::format(
            "images.data",
            format!("expected {} pixel bytes, found {}", n * rows * cols, pixels.len()),
        ));
    }
    let label_bytes = &labels[8..];
    if label_bytes.len() != n {
        return Err(Error::format(
            "labels.data",
            format!("expected {n} label bytes, found {}", label_bytes.len()),
        ));
    }
    let data = pixels.iter().map(|&b| b as f64 / 255.0).collect();
    let labels: Vec<usize> = label_bytes.iter().map(|&b| b as usize).collect();
    let num_classes = labels.iter().max().map_or(1, |m| m + 1);
    LabeledDataset::new(
        name,
        Tensor::new(vec![n, 1, rows, cols], data)?,
        labels,
        num_classes,
    )
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    std::fs::File::open(path)
        .map_err(|e| Error::config(format!("cannot open {}: {e}", path.display())))?
        .read_to_end(&mut buf)?;
    Ok(buf)
}

/// Loads an MNIST-style IDX pair; pixels are scaled by 1/255.
pub fn load_idx(images_path: impl AsRef<Path>, labels_path: impl AsRef<Path>) -> Result<LabeledDataset> {
    let images_path = images_path.as_ref();
    let name = images_path
        .file_name()
        .and_then(|s| s.to_str())
        .unwrap_or("idx")
        .to_string();
    parse_idx(&read_file(images_path)?, &read_file(labels_path.as_ref())?, &name)
}

/// Serializes a single-channel dataset back to IDX bytes `(images, labels)`.
/// Pixels are rounded to the nearest byte, so datasets loaded from IDX
/// reproduce their original streams exactly.
pub fn to_idx(data: &LabeledDataset) -> Result<(Vec<u8>, Vec<u8>)> {
    let (rows, cols) = match data.sample_shape() {
        &[1, h, w] | &[h, w] => (h, w),
        other => {
            return Err(Error::rejected(format!(
                "IDX export needs single-channel images, got {other:?}"
            )))
        }
    };
    let n = data.len();
    let mut images = Vec::with_capacity(16 + n * rows * cols);
    for v in [IMAGES_MAGIC, n as u32, rows as u32, cols as u32] {
        images.extend_from_slice(&v.to_be_bytes());
    }
    images.extend(data.images.data().iter().map(|&p| (p * 255.0).round() as u8));
    let mut labels = Vec::with_capacity(8 + n);
    for v in [LABELS_MAGIC, n as u32] {
        labels.extend_from_slice(&v.to_be_bytes());
    }
    for &l in &data.labels {
        if l > 255 {
            return Err(Error::rejected("IDX labels must fit in a byte"));
        }
        labels.push(l as u8);
    }
    Ok((images, labels))
}

/// Parameters of the synthetic desk-scale generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSpec {
    pub classes: usize,
    /// Sample shape: `[D]` for flat Gaussian blobs, `[C, H, W]` for images.
    pub shape: Vec<usize>,
    pub per_class: usize,
    /// Distance scale between class prototypes (blobs) or pattern contrast
    /// (images).
    pub separation: f64,
    #[serde(default = "default_noise")]
    pub noise: f64,
    pub seed: u64,
}

fn default_noise() -> f64 {
    0.1
}

/// Generates Gaussian class blobs (flat shape) or class-patterned images,
/// clipped to `[0, 1]`. Samples are interleaved by class.
pub fn synth_dataset(spec: &SynthSpec) -> Result<LabeledDataset> {
    if spec.per_class == 0 || spec.classes == 0 {
        return Err(Error::config("synthetic dataset needs classes >= 1 and per_class >= 1"));
    }
    let dim: usize = spec.shape.iter().product();
    if dim == 0 {
        return Err(Error::config("synthetic sample shape must be non-empty"));
    }
    if !(spec.noise >= 0.0) || !(spec.separation >= 0.0) {
        return Err(Error::config("noise and separation must be non-negative"));
    }
    let mut proto_rng = rng_for(spec.seed, &[0x5EED, 0]);
    let prototypes: Vec<Vec<f64>> = if spec.shape.len() == 1 {
        // Blob centres scattered around 0.5 with spread `separation`.
        (0..spec.classes)
            .map(|_| {
                (0..dim)
                    .map(|_| 0.5 + spec.separation * proto_rng.random_range(-0.5..0.5))
                    .collect()
            })
            .collect()
    } else {
        // Each class lights a random subset of pixels; contrast = separation.
        (0..spec.classes)
            .map(|_| {
                (0..dim)
                    .map(|_| {
                        let on: bool = proto_rng.random_bool(0.35);
                        let base = 0.5 - spec.separation / 2.0;
                        if on {
                            base + spec.separation
                        } else {
                            base
                        }
                    })
                    .collect()
            })
            .collect()
    };
    let normal = Normal::new(0.0, spec.noise.max(f64::MIN_POSITIVE)).expect("valid normal");
    let mut rng = rng_for(spec.seed, &[0x5EED, 1]);
    let n = spec.classes * spec.per_class;
    let mut data = Vec::with_capacity(n * dim);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..spec.per_class {
        for (c, proto) in prototypes.iter().enumerate() {
            for &p in proto {
                let noise = if spec.noise > 0.0 { normal.sample(&mut rng) } else { 0.0 };
                data.push((p + noise).clamp(0.0, 1.0));
            }
            labels.push(c);
        }
    }
    let mut shape = vec![n];
    shape.extend_from_slice(&spec.shape);
    LabeledDataset::new(
        format!("synth-{}c-{}", spec.classes, spec.seed),
        Tensor::new(shape, data)?,
        labels,
        spec.classes,
    )
}

/// Defender-side split of the training order.
#[derive(Debug, Clone, PartialEq)]
pub struct DefenderSplits {
    pub cert_set: LabeledDataset,
    pub validation_set: LabeledDataset,
    pub client_pool: LabeledDataset,
}

/// `cert = [0, cert_n)`, `validation = [cert_n, cert_n + val_n)`, the
/// remainder goes to the client pool. An empty certification set is only
/// accepted when `allow_empty_cert` is set (certification checks disabled).
pub fn make_splits(
    data: &LabeledDataset,
    cert_n: usize,
    val_n: usize,
    allow_empty_cert: bool,
) -> Result<DefenderSplits> {
    if cert_n == 0 && !allow_empty_cert {
        return Err(Error::config(
            "certification set is empty but certification checks are enabled",
        ));
    }
    if cert_n + val_n >= data.len() {
        return Err(Error::config(format!(
            "cert ({cert_n}) + validation ({val_n}) must leave client data out of {} points",
            data.len()
        )));
    }
    Ok(DefenderSplits {
        cert_set: data.range(0, cert_n, format!("{}-cert", data.name)),
        validation_set: data.range(cert_n, cert_n + val_n, format!("{}-val", data.name)),
        client_pool: data.range(cert_n + val_n, data.len(), format!("{}-pool", data.name)),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn idx_pair(n_images: u32, n_labels: u32, rows: u32, cols: u32, pixels: &[u8], labels: &[u8]) -> (Vec<u8>, Vec<u8>) {
        let mut im = Vec::new();
        for v in [IMAGES_MAGIC, n_images, rows, cols] {
            im.extend_from_slice(&v.to_be_bytes());
        }
        im.extend_from_slice(pixels);
        let mut lb = Vec::new();
        for v in [LABELS_MAGIC, n_labels] {
            lb.extend_from_slice(&v.to_be_bytes());
        }
        lb.extend_from_slice(labels);
        (im, lb)
    }

    #[test]
    fn hand_built_idx_pair() {
        let pixels: Vec<u8> = (0..32).map(|i| (i * 8) as u8).chain([]).collect();
        let mut pixels = pixels;
        pixels[0] = 0;
        pixels[31] = 255;
        let (im, lb) = idx_pair(2, 2, 4, 4, &pixels, &[3, 7]);
        let ds = parse_idx(&im, &lb, "hand").unwrap();
        assert_eq!(ds.len(), 2);
        assert_eq!(ds.sample_shape(), &[1, 4, 4]);
        assert_eq!(ds.labels, vec![3, 7]);
        assert_eq!(ds.x(0)[0], 0.0);
        assert_eq!(ds.x(1)[15], 1.0);
        assert_eq!(ds.x(0)[1], 8.0 / 255.0);
        let (im2, lb2) = to_idx(&ds).unwrap();
        assert_eq!(im, im2);
        assert_eq!(lb, lb2);
    }

    #[test]
    fn count_mismatch_names_field() {
        let (im, lb) = idx_pair(2, 3, 2, 2, &[0; 8], &[0, 1, 2]);
        match parse_idx(&im, &lb, "x") {
            Err(Error::Format { field, .. }) => assert_eq!(field, "labels.count"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn bad_magic_and_truncation() {
        let (mut im, lb) = idx_pair(1, 1, 2, 2, &[0; 4], &[0]);
        im[3] = 0x01;
        assert!(matches!(parse_idx(&im, &lb, "x"), Err(Error::Format { field, .. }) if field == "images.magic"));
        let (im, lb) = idx_pair(1, 1, 2, 2, &[0; 3], &[0]);
        assert!(matches!(parse_idx(&im, &lb, "x"), Err(Error::Format { field, .. }) if field == "images.data"));
        assert!(matches!(parse_idx(&im[..6], &lb, "x"), Err(Error::Format { .. })));
    }

    #[test]
    fn synth_is_deterministic_and_counted() {
        let spec = SynthSpec {
            classes: 2,
            shape: vec![1, 4, 4],
            per_class: 1,
            separation: 0.6,
            noise: 0.1,
            seed: 9,
        };
        let a = synth_dataset(&spec).unwrap();
        let b = synth_dataset(&spec).unwrap();
        assert_eq!(a.len(), 2);
        assert_eq!(a.images.data(), b.images.data());
        assert!(a.images.data().iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn mnist_sized_split() {
        let n = 60_000;
        let ds = LabeledDataset::new(
            "zeros",
            Tensor::zeros(vec![n, 1]),
            vec![0; n],
            10,
        )
        .unwrap();
        let s = make_splits(&ds, 1000, 5000, false).unwrap();
        assert_eq!(s.cert_set.len(), 1000);
        assert_eq!(s.validation_set.len(), 5000);
        assert_eq!(s.client_pool.len(), 54_000);
    }

    #[test]
    fn empty_cert_needs_opt_in() {
        let ds = LabeledDataset::new("z", Tensor::zeros(vec![10, 1]), vec![0; 10], 2).unwrap();
        assert!(matches!(make_splits(&ds, 0, 3, false), Err(Error::Config(_))));
        assert_eq!(make_splits(&ds, 0, 3, true).unwrap().client_pool.len(), 7);
        assert!(make_splits(&ds, 5, 5, false).is_err());
    }
}
