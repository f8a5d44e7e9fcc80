//! Readers for the IDX (MNIST) and CIFAR binary layouts.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::harness::dataset::{Dataset, Split};
use crate::tensor::Tensor;

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

/// Bytes per CIFAR record: one label byte and a 3×32×32 image.
pub const CIFAR_RECORD: usize = 1 + 3 * 32 * 32;

fn be_u32(bytes: &[u8], offset: usize) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::Format {
            offset: offset as u64,
            detail: format!("header truncated: need {} bytes, file has {}", offset + 4, bytes.len()),
        })
}

fn expect_magic(bytes: &[u8], want: u32) -> Result<()> {
    let magic = be_u32(bytes, 0)?;
    if magic != want {
        return Err(Error::Format {
            offset: 0,
            detail: format!("bad magic 0x{magic:08x}, expected 0x{want:08x}"),
        });
    }
    Ok(())
}

fn expect_payload(bytes: &[u8], header: usize, payload: usize) -> Result<&[u8]> {
    let want = header + payload;
    if bytes.len() != want {
        return Err(Error::Format {
            offset: bytes.len().min(want) as u64,
            detail: format!("expected {want} bytes, found {}", bytes.len()),
        });
    }
    Ok(&bytes[header..])
}

/// IDX image file to a `K × 1 × H × W` tensor with pixels scaled to `[0, 1]`.
pub fn parse_idx_images(bytes: &[u8]) -> Result<Tensor> {
    expect_magic(bytes, IDX_IMAGES_MAGIC)?;
    let count = be_u32(bytes, 4)? as usize;
    let rows = be_u32(bytes, 8)? as usize;
    let cols = be_u32(bytes, 12)? as usize;
    let payload = expect_payload(bytes, 16, count * rows * cols)?;
    Tensor::new(
        &[count, 1, rows, cols],
        payload.iter().map(|&b| f64::from(b) / 255.0).collect(),
    )
}

/// IDX label file to class indices.
pub fn parse_idx_labels(bytes: &[u8]) -> Result<Vec<usize>> {
    expect_magic(bytes, IDX_LABELS_MAGIC)?;
    let count = be_u32(bytes, 4)? as usize;
    let payload = expect_payload(bytes, 8, count)?;
    Ok(payload.iter().map(|&b| usize::from(b)).collect())
}

/// Pair an IDX image file with its label file (10 classes).
pub fn load_idx(images: &Path, labels: &Path, split: Split) -> Result<Dataset> {
    let x = parse_idx_images(&fs::read(images)?)?;
    let y = parse_idx_labels(&fs::read(labels)?)?;
    Dataset::classification(x, y, 10, split, format!("idx:{}", images.display()))
}

/// The four standard MNIST files in `dir`, optionally truncated to the
/// first `train`/`test` samples.
pub fn load_mnist_dir(dir: &Path, train: Option<usize>, test: Option<usize>) -> Result<(Dataset, Dataset)> {
    let tr = load_idx(
        &dir.join("train-images-idx3-ubyte"),
        &dir.join("train-labels-idx1-ubyte"),
        Split::Train,
    )?;
    let te = load_idx(
        &dir.join("t10k-images-idx3-ubyte"),
        &dir.join("t10k-labels-idx1-ubyte"),
        Split::Test,
    )?;
    Ok((
        match train {
            Some(n) => tr.take(n)?,
            None => tr,
        },
        match test {
            Some(n) => te.take(n)?,
            None => te,
        },
    ))
}

/// Whether `dir` holds the four MNIST files.
pub fn has_mnist(dir: &Path) -> bool {
    [
        "train-images-idx3-ubyte",
        "train-labels-idx1-ubyte",
        "t10k-images-idx3-ubyte",
        "t10k-labels-idx1-ubyte",
    ]
    .iter()
    .all(|f| dir.join(f).is_file())
}

/// CIFAR binary records to a `K × 3 × 32 × 32` tensor in `[0, 1]` and labels.
pub fn parse_cifar(bytes: &[u8]) -> Result<(Tensor, Vec<usize>)> {
    if bytes.is_empty() || !bytes.len().is_multiple_of(CIFAR_RECORD) {
        return Err(Error::Format {
            offset: (bytes.len() - bytes.len() % CIFAR_RECORD) as u64,
            detail: format!(
                "record-size mismatch: {} bytes is not a positive multiple of {CIFAR_RECORD}",
                bytes.len()
            ),
        });
    }
    let k = bytes.len() / CIFAR_RECORD;
    let mut data = Vec::with_capacity(k * (CIFAR_RECORD - 1));
    let mut labels = Vec::with_capacity(k);
    for record in bytes.chunks_exact(CIFAR_RECORD) {
        labels.push(usize::from(record[0]));
        data.extend(record[1..].iter().map(|&b| f64::from(b) / 255.0));
    }
    Ok((Tensor::new(&[k, 3, 32, 32], data)?, labels))
}

/// One CIFAR binary file with `classes` labels.
pub fn load_cifar_binary(path: &Path, classes: usize, split: Split) -> Result<Dataset> {
    let (x, y) = parse_cifar(&fs::read(path)?)?;
    Dataset::classification(x, y, classes, split, format!("cifar:{}", path.display()))
}

fn concat(parts: Vec<Dataset>, split: Split, provenance: String) -> Result<Dataset> {
    let classes = parts[0].classes().unwrap_or(0);
    let mut data = Vec::new();
    let mut labels = Vec::new();
    let mut k = 0;
    for p in &parts {
        k += p.len();
        data.extend_from_slice(p.inputs.data());
        labels.extend_from_slice(p.labels().unwrap_or(&[]));
    }
    let mut shape = parts[0].inputs.shape().to_vec();
    shape[0] = k;
    Dataset::classification(Tensor::new(&shape, data)?, labels, classes, split, provenance)
}

/// CIFAR-10 binary distribution: `data_batch_1..5.bin` and `test_batch.bin`.
/// Training data has augmentation enabled.
pub fn load_cifar_dir(dir: &Path, train: Option<usize>, test: Option<usize>) -> Result<(Dataset, Dataset)> {
    let parts = (1..=5)
        .map(|i| load_cifar_binary(&dir.join(format!("data_batch_{i}.bin")), 10, Split::Train))
        .collect::<Result<Vec<_>>>()?;
    let mut tr = concat(parts, Split::Train, format!("cifar:{}", dir.display()))?;
    let mut te = load_cifar_binary(&dir.join("test_batch.bin"), 10, Split::Test)?;
    if let Some(n) = train {
        tr = tr.take(n)?;
    }
    if let Some(n) = test {
        te = te.take(n)?;
    }
    tr.augment = true;
    Ok((tr, te))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn idx_images(count: u32, rows: u32, cols: u32, pixels: &[u8]) -> Vec<u8> {
        let mut b = IDX_IMAGES_MAGIC.to_be_bytes().to_vec();
        for v in [count, rows, cols] {
            b.extend_from_slice(&v.to_be_bytes());
        }
        b.extend_from_slice(pixels);
        b
    }

    #[test]
    fn two_images_of_2x2() {
        let bytes = idx_images(2, 2, 2, &[0, 255, 51, 102, 1, 2, 3, 4]);
        let t = parse_idx_images(&bytes).unwrap();
        assert_eq!(t.shape(), &[2, 1, 2, 2]);
        assert_eq!(&t.data()[..4], &[0.0, 1.0, 0.2, 0.4]);
    }

    #[test]
    fn three_labels() {
        let mut b = IDX_LABELS_MAGIC.to_be_bytes().to_vec();
        b.extend_from_slice(&3u32.to_be_bytes());
        b.extend_from_slice(&[7, 0, 9]);
        assert_eq!(parse_idx_labels(&b).unwrap(), vec![7, 0, 9]);
    }

    #[test]
    fn truncated_payload_reports_lengths() {
        let bytes = idx_images(2, 2, 2, &[0; 5]);
        let err = parse_idx_images(&bytes).unwrap_err();
        match err {
            Error::Format { offset, detail } => {
                assert_eq!(offset, 21);
                assert!(
                    detail.contains("expected 24") && detail.contains("found 21"),
                    "{detail}"
                );
            }
            other => panic!("{other}"),
        }
    }

    #[test]
    fn bad_magic_at_offset_zero() {
        let mut bytes = idx_images(1, 1, 1, &[0]);
        bytes[3] = 0x01;
        assert!(matches!(parse_idx_images(&bytes), Err(Error::Format { offset: 0, .. })));
        assert!(matches!(parse_idx_labels(&[0, 0]), Err(Error::Format { .. })));
    }

    #[test]
    fn one_cifar_record() {
        let mut rec = vec![7u8];
        rec.extend((0..3072).map(|i| (i % 256) as u8));
        let (x, y) = parse_cifar(&rec).unwrap();
        assert_eq!(y, vec![7]);
        assert_eq!(x.shape(), &[1, 3, 32, 32]);
        assert_eq!(x.data()[255], 1.0);
    }

    #[test]
    fn cifar_record_size_mismatch() {
        assert!(matches!(parse_cifar(&vec![0u8; 3072 * 2]), Err(Error::Format { .. })));
        assert!(parse_cifar(&[]).is_err());
    }

    #[test]
    fn mnist_dir_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let labels = |n: u8| {
            let mut b = IDX_LABELS_MAGIC.to_be_bytes().to_vec();
            b.extend_from_slice(&u32::from(n).to_be_bytes());
            b.extend((0..n).map(|i| i % 10));
            b
        };
        fs::write(
            dir.path().join("train-images-idx3-ubyte"),
            idx_images(4, 2, 2, &[9; 16]),
        )
        .unwrap();
        fs::write(dir.path().join("train-labels-idx1-ubyte"), labels(4)).unwrap();
        fs::write(dir.path().join("t10k-images-idx3-ubyte"), idx_images(2, 2, 2, &[3; 8])).unwrap();
        fs::write(dir.path().join("t10k-labels-idx1-ubyte"), labels(2)).unwrap();
        assert!(has_mnist(dir.path()));
        let (tr, te) = load_mnist_dir(dir.path(), Some(3), None).unwrap();
        assert_eq!(tr.len(), 3);
        assert_eq!(te.labels().unwrap(), &[0, 1]);
    }
}
