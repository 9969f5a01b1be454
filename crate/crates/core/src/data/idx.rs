//! IDX containers as used by MNIST.
//!
//! Big-endian throughout. Images: magic `0x00000803`, then count, rows and
//! cols as `u32`, then `count * rows * cols` unsigned pixel bytes. Labels:
//! magic `0x00000801`, then count, then one byte per label. Files whose name
//! ends in `.gz` are decompressed first.

use std::fs::File;
use std::io::{BufReader, Read};
use std::path::{Path, PathBuf};

use flate2::bufread::GzDecoder;
use ndarray::Array2;

use super::Dataset;
use crate::error::{IdxError, Result};

pub const IMAGES_MAGIC: u32 = 0x0000_0803;
pub const LABELS_MAGIC: u32 = 0x0000_0801;

/// Labels in MNIST-format files are digits.
const MIN_CLASSES: usize = 10;

fn read_file(path: &Path) -> Result<Vec<u8>, IdxError> {
    let io_err = |source| IdxError::Io {
        path: path.to_path_buf(),
        source,
    };
    let file = File::open(path).map_err(io_err)?;
    let mut reader: Box<dyn Read> = if path.extension().is_some_and(|e| e == "gz") {
        Box::new(GzDecoder::new(BufReader::new(file)))
    } else {
        Box::new(BufReader::new(file))
    };
    let mut bytes = Vec::new();
    reader.read_to_end(&mut bytes).map_err(io_err)?;
    Ok(bytes)
}

fn header(bytes: &[u8], words: usize, path: &Path) -> Result<Vec<u32>, IdxError> {
    if bytes.len() < 4 * words {
        return Err(IdxError::Truncated {
            path: path.to_path_buf(),
            expected: 4 * words,
            found: bytes.len(),
        });
    }
    Ok(bytes[..4 * words]
        .chunks_exact(4)
        .map(|c| u32::from_be_bytes([c[0], c[1], c[2], c[3]]))
        .collect())
}

fn check_magic(found: u32, expected: u32, path: &Path) -> Result<(), IdxError> {
    if found != expected {
        return Err(IdxError::BadMagic {
            path: path.to_path_buf(),
            expected,
            found,
        });
    }
    Ok(())
}

fn payload<'a>(bytes: &'a [u8], offset: usize, len: usize, path: &Path) -> Result<&'a [u8], IdxError> {
    let found = bytes.len() - offset;
    if found < len {
        return Err(IdxError::Truncated {
            path: path.to_path_buf(),
            expected: len,
            found,
        });
    }
    Ok(&bytes[offset..offset + len])
}

/// Raw image block: `(rows, cols, pixels)` with `count * rows * cols` pixels.
pub struct IdxImages {
    pub count: usize,
    pub rows: usize,
    pub cols: usize,
    pub pixels: Vec<u8>,
}

pub fn parse_images(bytes: &[u8], path: &Path) -> Result<IdxImages, IdxError> {
    check_magic(header(bytes, 1, path)?[0], IMAGES_MAGIC, path)?;
    let h = header(bytes, 4, path)?;
    let (count, rows, cols) = (h[1] as usize, h[2] as usize, h[3] as usize);
    let pixels = payload(bytes, 16, count * rows * cols, path)?.to_vec();
    Ok(IdxImages {
        count,
        rows,
        cols,
        pixels,
    })
}

pub fn parse_labels(bytes: &[u8], path: &Path) -> Result<Vec<u8>, IdxError> {
    check_magic(header(bytes, 1, path)?[0], LABELS_MAGIC, path)?;
    let h = header(bytes, 2, path)?;
    Ok(payload(bytes, 8, h[1] as usize, path)?.to_vec())
}

pub fn encode_images(rows: usize, cols: usize, pixels: &[u8]) -> Vec<u8> {
    let count = pixels.len() / (rows * cols);
    let mut out = Vec::with_capacity(16 + pixels.len());
    for word in [IMAGES_MAGIC, count as u32, rows as u32, cols as u32] {
        out.extend_from_slice(&word.to_be_bytes());
    }
    out.extend_from_slice(pixels);
    out
}

pub fn encode_labels(labels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&LABELS_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    out
}

/// Loads an image/label file pair. Pixels are scaled to `[0, 1]` by `/ 255`
/// and each image is flattened row-major.
pub fn load_idx(images_path: impl AsRef<Path>, labels_path: impl AsRef<Path>) -> Result<Dataset> {
    let (images_path, labels_path) = (images_path.as_ref(), labels_path.as_ref());
    let images = parse_images(&read_file(images_path)?, images_path)?;
    let labels = parse_labels(&read_file(labels_path)?, labels_path)?;
    if images.count != labels.len() {
        return Err(IdxError::CountMismatch {
            images: images.count,
            labels: labels.len(),
        }
        .into());
    }
    let dim = images.rows * images.cols;
    let inputs = Array2::from_shape_vec(
        (images.count, dim),
        images.pixels.iter().map(|&p| f64::from(p) / 255.0).collect(),
    )
    .expect("payload length checked against header");
    let labels: Vec<usize> = labels.into_iter().map(usize::from).collect();
    let num_classes = labels.iter().max().map_or(0, |&m| m + 1).max(MIN_CLASSES);
    Dataset::new(inputs, labels, num_classes)
}

#[derive(Clone, Debug)]
pub struct MnistSplit {
    pub train: Dataset,
    pub test: Dataset,
}

fn find(dir: &Path, stem: &str) -> PathBuf {
    let plain = dir.join(stem);
    if plain.exists() {
        return plain;
    }
    let gz = dir.join(format!("{stem}.gz"));
    if gz.exists() {
        gz
    } else {
        plain
    }
}

/// Loads the standard four MNIST files (plain or `.gz`) from `dir`.
pub fn load_mnist(dir: impl AsRef<Path>) -> Result<MnistSplit> {
    let dir = dir.as_ref();
    let train = load_idx(
        find(dir, "train-images-idx3-ubyte"),
        find(dir, "train-labels-idx1-ubyte"),
    )?;
    let test = load_idx(
        find(dir, "t10k-images-idx3-ubyte"),
        find(dir, "t10k-labels-idx1-ubyte"),
    )?;
    Ok(MnistSplit { train, test })
}

#[cfg(test)]
mod tests {
    use std::io::Write;

    use flate2::write::GzEncoder;
    use flate2::Compression;

    use super::*;
    use crate::error::Error;

    fn write(dir: &Path, name: &str, bytes: &[u8]) -> PathBuf {
        let path = dir.join(name);
        std::fs::write(&path, bytes).unwrap();
        path
    }

    // Two 2x3 images, bytes written out by hand.
    const FIXTURE_IMAGES: [u8; 28] = [
        0x00, 0x00, 0x08, 0x03, // magic
        0x00, 0x00, 0x00, 0x02, // count
        0x00, 0x00, 0x00, 0x02, // rows
        0x00, 0x00, 0x00, 0x03, // cols
        0, 255, 51, 102, 153, 204, // image 0
        255, 0, 0, 0, 0, 1, // image 1
    ];
    const FIXTURE_LABELS: [u8; 10] = [0x00, 0x00, 0x08, 0x01, 0x00, 0x00, 0x00, 0x02, 7, 3];

    #[test]
    fn hand_built_fixture_decodes_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let images = write(dir.path(), "img", &FIXTURE_IMAGES);
        let labels = write(dir.path(), "lbl", &FIXTURE_LABELS);
        let ds = load_idx(&images, &labels).unwrap();
        assert_eq!(ds.len(), 2);
        assert_eq!(ds.input_dim(), 6);
        assert_eq!(ds.labels(), &[7, 3]);
        assert_eq!(ds.num_classes(), 10);
        let row0: Vec<f64> = ds.inputs().row(0).to_vec();
        assert_eq!(row0, vec![0.0, 1.0, 0.2, 0.4, 0.6, 0.8]);
        let row1: Vec<f64> = ds.inputs().row(1).to_vec();
        assert_eq!(row1, vec![1.0, 0.0, 0.0, 0.0, 0.0, 1.0 / 255.0]);
        assert_eq!(encode_images(2, 3, &FIXTURE_IMAGES[16..]), FIXTURE_IMAGES);
        assert_eq!(encode_labels(&[7, 3]), FIXTURE_LABELS);
    }

    #[test]
    fn gzip_inputs_are_accepted() {
        let dir = tempfile::tempdir().unwrap();
        let gz = |bytes: &[u8]| {
            let mut enc = GzEncoder::new(Vec::new(), Compression::default());
            enc.write_all(bytes).unwrap();
            enc.finish().unwrap()
        };
        let images = write(dir.path(), "img.gz", &gz(&FIXTURE_IMAGES));
        let labels = write(dir.path(), "lbl.gz", &gz(&FIXTURE_LABELS));
        let plain = load_idx(
            write(dir.path(), "img", &FIXTURE_IMAGES),
            write(dir.path(), "lbl", &FIXTURE_LABELS),
        )
        .unwrap();
        assert_eq!(load_idx(images, labels).unwrap(), plain);
    }

    #[test]
    fn each_defect_has_its_own_error() {
        let dir = tempfile::tempdir().unwrap();
        let labels = write(dir.path(), "lbl", &FIXTURE_LABELS);

        let swapped = write(dir.path(), "swapped", &FIXTURE_LABELS);
        match load_idx(&swapped, &labels) {
            Err(Error::Idx(IdxError::BadMagic { expected, found, .. })) => {
                assert_eq!(expected, IMAGES_MAGIC);
                assert_eq!(found, LABELS_MAGIC);
            }
            other => panic!("expected bad magic, got {other:?}"),
        }

        let short = write(dir.path(), "short", &FIXTURE_IMAGES[..20]);
        assert!(matches!(
            load_idx(&short, &labels),
            Err(Error::Idx(IdxError::Truncated { expected: 12, found: 4, .. }))
        ));
        let stub = write(dir.path(), "stub", &FIXTURE_IMAGES[..6]);
        assert!(matches!(
            load_idx(&stub, &labels),
            Err(Error::Idx(IdxError::Truncated { .. }))
        ));

        let images = write(dir.path(), "img", &FIXTURE_IMAGES);
        let one_label = write(dir.path(), "one", &encode_labels(&[1]));
        assert!(matches!(
            load_idx(&images, &one_label),
            Err(Error::Idx(IdxError::CountMismatch { images: 2, labels: 1 }))
        ));

        assert!(matches!(
            load_idx(dir.path().join("missing"), &labels),
            Err(Error::Idx(IdxError::Io { .. }))
        ));
    }
}
