//! Reader for the IDX files MNIST ships in.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::learning::data::Dataset;

const IMAGES_MAGIC: u32 = 0x0000_0803;
const LABELS_MAGIC: u32 = 0x0000_0801;

fn idx_error(path: &Path, reason: impl Into<String>) -> Error {
    Error::Idx { path: path.to_path_buf(), reason: reason.into() }
}

fn read_u32(bytes: &[u8], at: usize) -> Option<u32> {
    bytes.get(at..at + 4).map(|b| u32::from_be_bytes(b.try_into().unwrap()))
}

/// Parse an IDX image file into `(count, rows·cols, pixels / 255)`.
pub fn parse_images(bytes: &[u8], path: &Path) -> Result<(usize, usize, Vec<f64>)> {
    let magic = read_u32(bytes, 0).ok_or_else(|| idx_error(path, "truncated header"))?;
    if magic != IMAGES_MAGIC {
        return Err(idx_error(path, format!("bad magic {magic:#010x}, expected {IMAGES_MAGIC:#010x}")));
    }
    let dims: Vec<usize> = (0..3)
        .map(|i| read_u32(bytes, 4 + 4 * i).map(|d| d as usize))
        .collect::<Option<_>>()
        .ok_or_else(|| idx_error(path, "truncated header"))?;
    let (n, pixels) = (dims[0], dims[1] * dims[2]);
    let body = &bytes[16..];
    if body.len() != n * pixels {
        return Err(idx_error(path, format!("expected {} pixel bytes, found {}", n * pixels, body.len())));
    }
    Ok((n, pixels, body.iter().map(|&b| b as f64 / 255.0).collect()))
}

pub fn parse_labels(bytes: &[u8], path: &Path) -> Result<Vec<usize>> {
    let magic = read_u32(bytes, 0).ok_or_else(|| idx_error(path, "truncated header"))?;
    if magic != LABELS_MAGIC {
        return Err(idx_error(path, format!("bad magic {magic:#010x}, expected {LABELS_MAGIC:#010x}")));
    }
    let n = read_u32(bytes, 4).ok_or_else(|| idx_error(path, "truncated header"))? as usize;
    let body = &bytes[8..];
    if body.len() != n {
        return Err(idx_error(path, format!("expected {n} labels, found {}", body.len())));
    }
    Ok(body.iter().map(|&b| b as usize).collect())
}

/// Load an image/label file pair as a 10-class dataset.
pub fn load_mnist(images: &Path, labels: &Path) -> Result<Dataset> {
    let (n, dim, pixels) = parse_images(&fs::read(images).map_err(Error::io_at(images))?, images)?;
    let ys = parse_labels(&fs::read(labels).map_err(Error::io_at(labels))?, labels)?;
    if ys.len() != n {
        return Err(idx_error(labels, format!("{} labels for {n} images", ys.len())));
    }
    Dataset::new(dim, 10, pixels, ys)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn images(n: u32, rows: u32, cols: u32, body: &[u8]) -> Vec<u8> {
        let mut v = Vec::new();
        for word in [IMAGES_MAGIC, n, rows, cols] {
            v.extend(word.to_be_bytes());
        }
        v.extend(body);
        v
    }

    #[test]
    fn round_trip_small_file() {
        let dir = tempfile::tempdir().unwrap();
        let (ip, lp) = (dir.path().join("img"), dir.path().join("lbl"));
        fs::write(&ip, images(2, 1, 2, &[0, 255, 51, 102])).unwrap();
        let mut labels = LABELS_MAGIC.to_be_bytes().to_vec();
        labels.extend(2u32.to_be_bytes());
        labels.extend([7, 3]);
        fs::write(&lp, labels).unwrap();
        let d = load_mnist(&ip, &lp).unwrap();
        assert_eq!(d.input_dim, 2);
        assert_eq!(d.labels, vec![7, 3]);
        assert_eq!(d.features, vec![0.0, 1.0, 0.2, 0.4]);
    }

    #[test]
    fn wrong_magic_and_truncation() {
        let p = Path::new("x");
        let mut bad = images(1, 1, 1, &[0]);
        bad[3] = 0x01;
        assert!(parse_images(&bad, p).unwrap_err().to_string().contains("magic"));
        assert!(parse_images(&images(2, 1, 1, &[0]), p).is_err());
        assert!(parse_labels(&[0, 0], p).is_err());
    }
}
