use std::fs;
use std::io::Read;
use std::path::Path;

use flate2::read::GzDecoder;

use crate::autodiff::Matrix;

use super::{DataError, Dataset, Task};

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;
const CLASSES: usize = 10;

/// Reads a file, inflating it when it starts with the gzip magic `1f 8b`.
fn read_maybe_gzip(path: &Path) -> Result<Vec<u8>, DataError> {
    let io_err = |source| DataError::Io {
        path: path.to_path_buf(),
        source,
    };
    let raw = fs::read(path).map_err(io_err)?;
    if raw.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        GzDecoder::new(raw.as_slice()).read_to_end(&mut out).map_err(io_err)?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

struct IdxReader<'a> {
    path: &'a Path,
    bytes: &'a [u8],
}

impl IdxReader<'_> {
    fn u32_at(&self, offset: usize) -> Result<u32, DataError> {
        self.bytes
            .get(offset..offset + 4)
            .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
            .ok_or_else(|| self.err(format!("truncated header at offset {offset}")))
    }

    fn err(&self, detail: String) -> DataError {
        DataError::Format {
            path: self.path.to_path_buf(),
            detail,
        }
    }

    fn expect_magic(&self, magic: u32) -> Result<(), DataError> {
        let found = self.u32_at(0)?;
        if found != magic {
            return Err(self.err(format!(
                "bad magic number at offset 0: expected {magic:#010x}, found {found:#010x}"
            )));
        }
        Ok(())
    }
}

/// MNIST-format images and labels. Pixels are scaled to `[0, 1]`, labels
/// one-hot over 10 classes. Only the first `limit` items are kept if given.
pub fn load_idx(images_path: &Path, labels_path: &Path, limit: Option<usize>) -> Result<Dataset, DataError> {
    let image_bytes = read_maybe_gzip(images_path)?;
    let label_bytes = read_maybe_gzip(labels_path)?;
    let images = IdxReader {
        path: images_path,
        bytes: &image_bytes,
    };
    let labels = IdxReader {
        path: labels_path,
        bytes: &label_bytes,
    };
    images.expect_magic(IDX_IMAGES_MAGIC)?;
    labels.expect_magic(IDX_LABELS_MAGIC)?;

    let n_images = images.u32_at(4)? as usize;
    let rows = images.u32_at(8)? as usize;
    let cols = images.u32_at(12)? as usize;
    let n_labels = labels.u32_at(4)? as usize;
    if n_images != n_labels {
        return Err(images.err(format!(
            "{n_images} images but {n_labels} labels in {}",
            labels_path.display()
        )));
    }
    let pixels = rows * cols;
    let n = limit.map_or(n_images, |l| l.min(n_images));
    if n == 0 {
        return Err(images.err("no items to load".into()));
    }

    let image_data = image_bytes
        .get(16..16 + n * pixels)
        .ok_or_else(|| images.err(format!("truncated: expected {} bytes of pixel data", n * pixels)))?;
    let label_data = label_bytes
        .get(8..8 + n)
        .ok_or_else(|| labels.err(format!("truncated: expected {n} label bytes")))?;

    let features = Matrix::from_vec(n, pixels, image_data.iter().map(|&b| f64::from(b) / 255.0).collect());
    let mut targets = Matrix::zeros(n, CLASSES);
    for (i, &label) in label_data.iter().enumerate() {
        if usize::from(label) >= CLASSES {
            return Err(labels.err(format!("label {label} at offset {} is out of range", 8 + i)));
        }
        targets.set(i, usize::from(label), 1.0);
    }
    let name = images_path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "idx".into());
    Dataset::new(name, Task::Classification, features, targets)
}
