//! IDX files (the MNIST container): big-endian header, unsigned-byte data.

use std::path::Path;

use ndarray::Array2;

use super::dataset::{Dataset, Normalization};
use crate::error::{Error, Result};

pub const LABELS_MAGIC: u32 = 0x0000_0801;
pub const IMAGES_MAGIC: u32 = 0x0000_0803;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdxArray {
    pub dims: Vec<usize>,
    pub data: Vec<u8>,
}

fn parse_err(path: &Path, offset: u64, reason: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        offset,
        reason: reason.into(),
    }
}

/// Parses an unsigned-byte IDX file with 1 to 3 dimensions.
pub fn parse_idx(bytes: &[u8], path: &Path) -> Result<IdxArray> {
    if bytes.len() < 4 {
        return Err(parse_err(path, bytes.len() as u64, "file shorter than the 4-byte magic"));
    }
    let magic = u32::from_be_bytes(bytes[0..4].try_into().expect("4 bytes"));
    if magic >> 8 != 0x08 || !(1..=3).contains(&(magic & 0xff)) {
        return Err(parse_err(path, 0, format!("bad magic 0x{magic:08x}")));
    }
    let ndims = (magic & 0xff) as usize;
    let mut dims = Vec::with_capacity(ndims);
    for d in 0..ndims {
        let at = 4 + 4 * d;
        let raw = bytes
            .get(at..at + 4)
            .ok_or_else(|| parse_err(path, at as u64, "truncated header"))?;
        dims.push(u32::from_be_bytes(raw.try_into().expect("4 bytes")) as usize);
    }
    let header = 4 + 4 * ndims;
    let count: usize = dims.iter().product();
    let data = bytes.get(header..header + count).ok_or_else(|| {
        parse_err(
            path,
            bytes.len() as u64,
            format!("truncated data: expected {count} bytes after the header"),
        )
    })?;
    if bytes.len() != header + count {
        return Err(parse_err(path, (header + count) as u64, "trailing bytes after data"));
    }
    Ok(IdxArray {
        dims,
        data: data.to_vec(),
    })
}

pub fn read_idx(path: &Path) -> Result<IdxArray> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_idx(&bytes, path)
}

/// Loads an image file and its label file; pixels are scaled by 1/255.
pub fn load_idx(images: &Path, labels: &Path, classes: usize) -> Result<Dataset> {
    let img = read_idx(images)?;
    let lab = read_idx(labels)?;
    if img.dims.len() != 3 {
        return Err(parse_err(images, 3, format!("expected 3 image dimensions, found {}", img.dims.len())));
    }
    if lab.dims.len() != 1 {
        return Err(parse_err(labels, 3, format!("expected 1 label dimension, found {}", lab.dims.len())));
    }
    let n = img.dims[0];
    let dim = img.dims[1] * img.dims[2];
    if lab.dims[0] != n {
        return Err(Error::dim("idx label count", n, lab.dims[0]));
    }
    let mut label_vec = Vec::with_capacity(n);
    for (i, &y) in lab.data.iter().enumerate() {
        if y as usize >= classes {
            return Err(Error::Range(format!(
                "label {y} at record {i} of {} exceeds {classes} classes",
                labels.display()
            )));
        }
        label_vec.push(y as usize);
    }
    let features = Array2::from_shape_vec((n, dim), img.data.iter().map(|&p| f64::from(p) / 255.0).collect())
        .map_err(|e| Error::Config(e.to_string()))?;
    let mut ds = Dataset::new(features, label_vec, classes)?;
    ds.normalization = Some(Normalization::fixed(dim, 0.0, 255.0));
    Ok(ds)
}

/// Standard MNIST file names inside `dir` (uncompressed).
pub fn load_mnist_dir(dir: &Path) -> Result<super::TrainTest> {
    let train = load_idx(
        &dir.join("train-images-idx3-ubyte"),
        &dir.join("train-labels-idx1-ubyte"),
        10,
    )?;
    let test = load_idx(
        &dir.join("t10k-images-idx3-ubyte"),
        &dir.join("t10k-labels-idx1-ubyte"),
        10,
    )?;
    Ok(super::TrainTest { train, test })
}

/// Serializes an unsigned-byte IDX array.
pub fn write_idx(array: &IdxArray) -> Vec<u8> {
    let mut out = Vec::with_capacity(4 + 4 * array.dims.len() + array.data.len());
    out.extend_from_slice(&(0x0800u32 | array.dims.len() as u32).to_be_bytes());
    for &d in &array.dims {
        out.extend_from_slice(&(d as u32).to_be_bytes());
    }
    out.extend_from_slice(&array.data);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_images_of_two_by_two() {
        let dir = tempfile::tempdir().unwrap();
        let images = IdxArray {
            dims: vec![2, 2, 2],
            data: vec![0, 1, 2, 255, 10, 20, 30, 40],
        };
        let labels = IdxArray {
            dims: vec![2],
            data: vec![3, 7],
        };
        std::fs::write(dir.path().join("i"), write_idx(&images)).unwrap();
        std::fs::write(dir.path().join("l"), write_idx(&labels)).unwrap();
        let ds = load_idx(&dir.path().join("i"), &dir.path().join("l"), 10).unwrap();
        assert_eq!(ds.features.row(0).to_vec(), vec![0.0, 1.0 / 255.0, 2.0 / 255.0, 1.0]);
        assert_eq!(ds.features[[1, 3]], 40.0 / 255.0);
        assert_eq!(ds.labels, vec![3, 7]);

        assert!(matches!(
            load_idx(&dir.path().join("i"), &dir.path().join("l"), 7),
            Err(Error::Range(_))
        ));
    }

    #[test]
    fn truncated_header_reports_offset_four() {
        let p = Path::new("mem");
        let err = parse_idx(&[0, 0, 8, 3], p).unwrap_err();
        assert!(matches!(err, Error::Parse { offset: 4, .. }), "{err}");
        let err = parse_idx(&[0, 0, 9, 3, 0, 0, 0, 1], p).unwrap_err();
        assert!(matches!(err, Error::Parse { offset: 0, .. }));
        let err = parse_idx(&[0, 0, 8, 1, 0, 0, 0, 3, 1, 2], p).unwrap_err();
        assert!(matches!(err, Error::Parse { .. }));
    }

    #[test]
    fn label_ten_of_ten_classes_is_out_of_range() {
        let dir = tempfile::tempdir().unwrap();
        let images = IdxArray {
            dims: vec![1, 1, 1],
            data: vec![5],
        };
        let labels = IdxArray {
            dims: vec![1],
            data: vec![10],
        };
        std::fs::write(dir.path().join("i"), write_idx(&images)).unwrap();
        std::fs::write(dir.path().join("l"), write_idx(&labels)).unwrap();
        assert!(matches!(
            load_idx(&dir.path().join("i"), &dir.path().join("l"), 10),
            Err(Error::Range(_))
        ));
    }
}
