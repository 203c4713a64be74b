//! Reader for the IDX files of the MNIST digit set.
//!
//! Layout: a big-endian `u32` magic (2051 for images, 2049 for labels), one
//! big-endian `u32` per dimension, then raw unsigned bytes.

use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::perceptron::{self, Sample, IMAGE_PIXELS, IMAGE_SIDE, OUTPUTS};

const IMAGE_MAGIC: u32 = 2051;
const LABEL_MAGIC: u32 = 2049;

pub const TRAIN_IMAGES: &str = "train-images-idx3-ubyte";
pub const TRAIN_LABELS: &str = "train-labels-idx1-ubyte";
pub const TEST_IMAGES: &str = "t10k-images-idx3-ubyte";
pub const TEST_LABELS: &str = "t10k-labels-idx1-ubyte";
pub const TRAIN_COUNT: usize = 60_000;
pub const TEST_COUNT: usize = 10_000;

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    /// `len() * 784` pixels, image-major.
    pub images: Vec<u8>,
    pub labels: Vec<u8>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn image(&self, k: usize) -> &[u8] {
        &self.images[k * IMAGE_PIXELS..(k + 1) * IMAGE_PIXELS]
    }

    /// Down-sample every image to an 8x8 binary pattern.
    pub fn encode(&self, threshold: u8) -> Result<Vec<Sample>> {
        (0..self.len())
            .map(|k| {
                Ok(Sample {
                    x: perceptron::preprocess(self.image(k), threshold)?,
                    label: self.labels[k],
                })
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    fn files(self) -> (&'static str, &'static str, usize) {
        match self {
            Split::Train => (TRAIN_IMAGES, TRAIN_LABELS, TRAIN_COUNT),
            Split::Test => (TEST_IMAGES, TEST_LABELS, TEST_COUNT),
        }
    }
}

/// Load one split from `dir`, checking it holds the canonical item count.
pub fn load_split(dir: &Path, split: Split) -> Result<Dataset> {
    let (images, labels, count) = split.files();
    let set = load_mnist(&dir.join(images), &dir.join(labels))?;
    if set.len() != count {
        return Err(Error::Format {
            path: dir.join(labels),
            offset: 4,
            message: format!("expected {count} items, found {}", set.len()),
        });
    }
    Ok(set)
}

pub fn load_mnist(images: &Path, labels: &Path) -> Result<Dataset> {
    let image_bytes = std::fs::read(images)?;
    let label_bytes = std::fs::read(labels)?;
    let images_v = parse_images(&image_bytes, images)?;
    let labels_v = parse_labels(&label_bytes, labels)?;
    if images_v.len() != labels_v.len() * IMAGE_PIXELS {
        return Err(Error::Format {
            path: labels.to_path_buf(),
            offset: 4,
            message: format!(
                "{} labels for {} images",
                labels_v.len(),
                images_v.len() / IMAGE_PIXELS
            ),
        });
    }
    Ok(Dataset {
        images: images_v,
        labels: labels_v,
    })
}

struct Cursor<'a> {
    bytes: &'a [u8],
    path: PathBuf,
}

impl Cursor<'_> {
    fn fail(&self, offset: usize, message: String) -> Error {
        Error::Format {
            path: self.path.clone(),
            offset: offset as u64,
            message,
        }
    }

    fn u32_at(&self, offset: usize, what: &str) -> Result<u32> {
        match self.bytes.get(offset..offset + 4) {
            Some(b) => Ok(u32::from_be_bytes([b[0], b[1], b[2], b[3]])),
            None => Err(self.fail(offset, format!("file ends inside the {what} field"))),
        }
    }

    /// Validates the magic and returns the dimension sizes.
    fn header(&self, magic: u32, dims: usize) -> Result<Vec<usize>> {
        let found = self.u32_at(0, "magic")?;
        if found != magic {
            return Err(self.fail(0, format!("magic number {found}, expected {magic}")));
        }
        (0..dims).map(|d| Ok(self.u32_at(4 + 4 * d, "dimension")? as usize)).collect()
    }

    fn body(&self, start: usize, len: usize) -> Result<&[u8]> {
        let end = start.checked_add(len).ok_or_else(|| self.fail(start, "dimensions overflow".into()))?;
        if self.bytes.len() < end {
            return Err(self.fail(
                self.bytes.len(),
                format!("truncated: {} data bytes expected, {} present", len, self.bytes.len() - start),
            ));
        }
        if self.bytes.len() > end {
            return Err(self.fail(end, format!("{} trailing bytes", self.bytes.len() - end)));
        }
        Ok(&self.bytes[start..end])
    }
}

/// Parse an image file of 28x28 images.
pub fn parse_images(bytes: &[u8], path: &Path) -> Result<Vec<u8>> {
    let c = Cursor {
        bytes,
        path: path.to_path_buf(),
    };
    let dims = c.header(IMAGE_MAGIC, 3)?;
    if dims[1] != IMAGE_SIDE || dims[2] != IMAGE_SIDE {
        return Err(c.fail(8, format!("images are {}x{}, expected 28x28", dims[1], dims[2])));
    }
    let len = dims[0].checked_mul(IMAGE_PIXELS).ok_or_else(|| c.fail(4, "image count overflows".into()))?;
    Ok(c.body(16, len)?.to_vec())
}

pub fn parse_labels(bytes: &[u8], path: &Path) -> Result<Vec<u8>> {
    let c = Cursor {
        bytes,
        path: path.to_path_buf(),
    };
    let n = c.header(LABEL_MAGIC, 1)?[0];
    let body = c.body(8, n)?;
    if let Some(k) = body.iter().position(|&l| usize::from(l) >= OUTPUTS) {
        return Err(c.fail(8 + k, format!("label {} outside 0-9", body[k])));
    }
    Ok(body.to_vec())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn image_file(n: u32) -> Vec<u8> {
        let mut b = Vec::new();
        for v in [IMAGE_MAGIC, n, 28, 28] {
            b.extend_from_slice(&v.to_be_bytes());
        }
        b.extend((0..n as usize * IMAGE_PIXELS).map(|k| (k % 251) as u8));
        b
    }

    fn label_file(labels: &[u8]) -> Vec<u8> {
        let mut b = Vec::new();
        b.extend_from_slice(&LABEL_MAGIC.to_be_bytes());
        b.extend_from_slice(&(labels.len() as u32).to_be_bytes());
        b.extend_from_slice(labels);
        b
    }

    fn offset_of(e: Error) -> u64 {
        match e {
            Error::Format { offset, .. } => offset,
            other => panic!("expected a format error, got {other:?}"),
        }
    }

    #[test]
    fn parses_well_formed_files() {
        let p = Path::new("mem");
        let img = parse_images(&image_file(3), p).unwrap();
        assert_eq!(img.len(), 3 * IMAGE_PIXELS);
        assert_eq!(img[IMAGE_PIXELS], (IMAGE_PIXELS % 251) as u8);
        assert_eq!(parse_labels(&label_file(&[7, 0, 9]), p).unwrap(), vec![7, 0, 9]);
    }

    #[test]
    fn rejects_bad_magic_truncation_and_labels() {
        let p = Path::new("mem");
        let mut bad = image_file(1);
        bad[3] = 0x04;
        assert_eq!(offset_of(parse_images(&bad, p).unwrap_err()), 0);

        let full = image_file(2);
        assert_eq!(offset_of(parse_images(&full[..full.len() - 1], p).unwrap_err()), full.len() as u64 - 1);
        assert_eq!(offset_of(parse_images(&full[..10], p).unwrap_err()), 8);

        let mut wrong_side = image_file(1);
        wrong_side[11] = 27;
        assert_eq!(offset_of(parse_images(&wrong_side, p).unwrap_err()), 8);

        assert_eq!(offset_of(parse_labels(&label_file(&[1, 2, 10]), p).unwrap_err()), 10);
        assert!(parse_labels(&image_file(0), p).is_err());
    }

    #[test]
    fn count_mismatch_fails_closed() {
        let dir = tempfile::tempdir().unwrap();
        let (i, l) = (dir.path().join("i"), dir.path().join("l"));
        std::fs::write(&i, image_file(2)).unwrap();
        std::fs::write(&l, label_file(&[1])).unwrap();
        assert!(matches!(load_mnist(&i, &l), Err(Error::Format { .. })));
        std::fs::write(&l, label_file(&[1, 2])).unwrap();
        assert_eq!(load_mnist(&i, &l).unwrap().len(), 2);
    }
}
