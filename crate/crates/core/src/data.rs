//! Dataset synthesis and IDX ingestion.

use std::fs;
use std::path::Path;

use thiserror::Error;

use crate::error::{Error, Result};
use crate::models::LabeledSample;
use crate::tensor::{derive_seed, SeededRng, Vector};

/// Isotropic Gaussian blobs, one per class, clamped to the unit box.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub dim: usize,
    pub classes: usize,
    pub means: Vec<Vector>,
    pub sigma: f64,
    pub per_class: usize,
    pub seed: u64,
}

impl SyntheticSpec {
    /// Class means drawn uniformly from `[low, high]^dim` using `mean_seed`.
    pub fn with_random_means(
        dim: usize,
        classes: usize,
        (low, high): (f64, f64),
        mean_seed: u64,
        sigma: f64,
        per_class: usize,
        seed: u64,
    ) -> Self {
        let mut rng = SeededRng::new(mean_seed);
        let means = (0..classes)
            .map(|_| (0..dim).map(|_| low + (high - low) * rng.next_f64()).collect())
            .collect();
        SyntheticSpec {
            dim,
            classes,
            means,
            sigma,
            per_class,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.classes < 2 || self.means.len() != self.classes {
            return Err(Error::InvalidConfig(format!(
                "need one mean per class ({} classes, {} means)",
                self.classes,
                self.means.len()
            )));
        }
        if let Some(m) = self.means.iter().find(|m| m.len() != self.dim) {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                actual: m.len(),
            });
        }
        for i in 0..self.classes {
            for j in i + 1..self.classes {
                if self.means[i] == self.means[j] {
                    return Err(Error::InvalidConfig(format!("class means {i} and {j} coincide")));
                }
            }
        }
        if !(self.sigma > 0.0) {
            return Err(Error::InvalidConfig("sigma must be positive".into()));
        }
        Ok(())
    }

    /// Same means and noise, different sample seed.
    pub fn reseeded(&self, seed: u64) -> Self {
        SyntheticSpec { seed, ..self.clone() }
    }
}

/// Draws `per_class` samples around each mean, class by class.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<Vec<LabeledSample>> {
    spec.validate()?;
    let mut out = Vec::with_capacity(spec.classes * spec.per_class);
    for (k, mean) in spec.means.iter().enumerate() {
        let mut rng = SeededRng::new(derive_seed(spec.seed, k as u64));
        for _ in 0..spec.per_class {
            let x: Vector = mean
                .iter()
                .map(|m| (m + spec.sigma * rng.standard_normal()).clamp(0.0, 1.0))
                .collect();
            out.push(LabeledSample::new(x, k, spec.classes)?);
        }
    }
    Ok(out)
}

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum IdxError {
    #[error("{file}: bad magic 0x{found:08x} at byte 0 (expected 0x{expected:08x})")]
    BadMagic {
        file: &'static str,
        expected: u32,
        found: u32,
    },

    #[error("{file}: truncated at byte {offset} (need {needed} more bytes)")]
    Truncated {
        file: &'static str,
        offset: usize,
        needed: usize,
    },

    #[error("{file}: {extra} unexpected trailing bytes at byte {offset}")]
    TrailingBytes {
        file: &'static str,
        offset: usize,
        extra: usize,
    },

    #[error("count mismatch: images header at byte 4 says {images}, labels header at byte 4 says {labels}")]
    CountMismatch { images: usize, labels: usize },

    #[error("labels: value {value} at byte {offset} is not below {classes} classes")]
    LabelOutOfRange { offset: usize, value: u8, classes: usize },
}

fn read_u32(bytes: &[u8], offset: usize, file: &'static str) -> Result<u32, IdxError> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| IdxError::Truncated {
            file,
            offset: bytes.len(),
            needed: offset + 4 - bytes.len(),
        })
}

fn expect_magic(bytes: &[u8], expected: u32, file: &'static str) -> Result<(), IdxError> {
    let found = read_u32(bytes, 0, file)?;
    if found != expected {
        return Err(IdxError::BadMagic { file, expected, found });
    }
    Ok(())
}

fn expect_len(bytes: &[u8], len: usize, file: &'static str) -> Result<(), IdxError> {
    if bytes.len() < len {
        return Err(IdxError::Truncated {
            file,
            offset: bytes.len(),
            needed: len - bytes.len(),
        });
    }
    if bytes.len() > len {
        return Err(IdxError::TrailingBytes {
            file,
            offset: len,
            extra: bytes.len() - len,
        });
    }
    Ok(())
}

/// Decodes an unsigned-byte image file and label file.
///
/// Pixels are scaled by 1/255. With `classes == None` the class count is the
/// largest label plus one.
pub fn parse_idx(images: &[u8], labels: &[u8], classes: Option<usize>) -> Result<Vec<LabeledSample>, IdxError> {
    expect_magic(images, IDX_IMAGES_MAGIC, "images")?;
    let n_images = read_u32(images, 4, "images")? as usize;
    let rows = read_u32(images, 8, "images")? as usize;
    let cols = read_u32(images, 12, "images")? as usize;
    expect_magic(labels, IDX_LABELS_MAGIC, "labels")?;
    let n_labels = read_u32(labels, 4, "labels")? as usize;
    if n_images != n_labels {
        return Err(IdxError::CountMismatch {
            images: n_images,
            labels: n_labels,
        });
    }
    let dim = rows * cols;
    expect_len(images, 16 + n_images * dim, "images")?;
    expect_len(labels, 8 + n_labels, "labels")?;

    let label_bytes = &labels[8..];
    let classes = classes.unwrap_or_else(|| label_bytes.iter().copied().max().map_or(0, |m| m as usize + 1));
    if let Some((i, &value)) = label_bytes.iter().enumerate().find(|(_, &v)| v as usize >= classes) {
        return Err(IdxError::LabelOutOfRange {
            offset: 8 + i,
            value,
            classes,
        });
    }

    Ok(images[16..]
        .chunks_exact(dim.max(1))
        .take(n_images)
        .zip(label_bytes)
        .map(|(px, &label)| {
            let x: Vector = px.iter().map(|&p| f64::from(p) / 255.0).collect();
            LabeledSample::new(x, label as usize, classes.max(2)).expect("scaled pixels lie in [0, 1]")
        })
        .collect())
}

pub fn load_idx(images: impl AsRef<Path>, labels: impl AsRef<Path>) -> Result<Vec<LabeledSample>> {
    let images = fs::read(images)?;
    let labels = fs::read(labels)?;
    Ok(parse_idx(&images, &labels, None)?)
}

/// Encodes samples as an IDX image/label pair (`rows * cols` must equal the
/// sample dimension). Coordinates are rounded to the nearest byte.
pub fn encode_idx(samples: &[LabeledSample], rows: usize, cols: usize) -> (Vec<u8>, Vec<u8>) {
    let mut images = Vec::with_capacity(16 + samples.len() * rows * cols);
    images.extend(IDX_IMAGES_MAGIC.to_be_bytes());
    images.extend((samples.len() as u32).to_be_bytes());
    images.extend((rows as u32).to_be_bytes());
    images.extend((cols as u32).to_be_bytes());
    let mut labels = Vec::with_capacity(8 + samples.len());
    labels.extend(IDX_LABELS_MAGIC.to_be_bytes());
    labels.extend((samples.len() as u32).to_be_bytes());
    for s in samples {
        assert_eq!(s.x().len(), rows * cols, "sample dimension must be rows * cols");
        images.extend(s.x().iter().map(|v| (v * 255.0).round() as u8));
        labels.push(s.label() as u8);
    }
    (images, labels)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(sigma: f64) -> SyntheticSpec {
        SyntheticSpec {
            dim: 3,
            classes: 2,
            means: vec![Vector::from(vec![0.2, 0.3, 0.4]), Vector::from(vec![0.8, 0.7, 0.6])],
            sigma,
            per_class: 7,
            seed: 5,
        }
    }

    #[test]
    fn class_counts_match() {
        let data = generate_synthetic(&spec(0.1)).unwrap();
        assert_eq!(data.len(), 14);
        assert_eq!(data.iter().filter(|s| s.label() == 1).count(), 7);
        assert!(data.iter().all(|s| s.x().iter().all(|v| (0.0..=1.0).contains(v))));
    }

    #[test]
    fn vanishing_noise_gives_means() {
        let s = spec(1e-300);
        let data = generate_synthetic(&s).unwrap();
        for sample in data {
            assert_eq!(sample.x(), &s.means[sample.label()]);
        }
    }

    #[test]
    fn generation_is_pure() {
        assert_eq!(
            generate_synthetic(&spec(0.1)).unwrap(),
            generate_synthetic(&spec(0.1)).unwrap()
        );
        assert_ne!(
            generate_synthetic(&spec(0.1)).unwrap(),
            generate_synthetic(&spec(0.1).reseeded(6)).unwrap()
        );
    }

    #[test]
    fn invalid_specs_rejected() {
        let mut s = spec(0.1);
        s.means[1] = s.means[0].clone();
        assert!(generate_synthetic(&s).is_err());
        assert!(generate_synthetic(&spec(0.0)).is_err());
    }

    fn fixture() -> (Vec<u8>, Vec<u8>) {
        let mut images = vec![0, 0, 8, 3, 0, 0, 0, 2, 0, 0, 0, 2, 0, 0, 0, 2];
        images.extend([0, 51, 255, 102, 255, 0, 0, 255]);
        let labels = vec![0, 0, 8, 1, 0, 0, 0, 2, 1, 0];
        (images, labels)
    }

    #[test]
    fn hand_built_fixture() {
        let (images, labels) = fixture();
        let data = parse_idx(&images, &labels, None).unwrap();
        assert_eq!(data.len(), 2);
        assert_eq!(data[0].x().as_slice(), &[0.0, 0.2, 1.0, 0.4]);
        assert_eq!(data[0].label(), 1);
        assert_eq!(data[1].x().as_slice(), &[1.0, 0.0, 0.0, 1.0]);
        assert_eq!(data[1].label(), 0);
        assert_eq!(data[1].one_hot().as_slice(), &[1.0, 0.0]);
        let (re_images, re_labels) = encode_idx(&data, 2, 2);
        assert_eq!((re_images, re_labels), fixture());
    }

    #[test]
    fn malformed_fixtures() {
        let (images, labels) = fixture();
        let mut bad = images.clone();
        bad[3] = 0x01;
        assert_eq!(
            parse_idx(&bad, &labels, None),
            Err(IdxError::BadMagic {
                file: "images",
                expected: IDX_IMAGES_MAGIC,
                found: 0x0801
            })
        );
        assert_eq!(
            parse_idx(&images[..20], &labels, None),
            Err(IdxError::Truncated {
                file: "images",
                offset: 20,
                needed: 4
            })
        );
        let mut three = labels.clone();
        three[7] = 3;
        three.push(1);
        assert_eq!(
            parse_idx(&images, &three, None),
            Err(IdxError::CountMismatch { images: 2, labels: 3 })
        );
        assert_eq!(
            parse_idx(&images, &labels, Some(1)),
            Err(IdxError::LabelOutOfRange {
                offset: 8,
                value: 1,
                classes: 1
            })
        );
        let mut long = labels.clone();
        long.push(0);
        assert!(matches!(
            parse_idx(&images, &long, None),
            Err(IdxError::TrailingBytes { offset: 10, .. })
        ));
    }
}
