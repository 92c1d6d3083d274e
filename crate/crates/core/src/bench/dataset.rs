//! Labelled 8-bit image sets: CIFAR-10 binary batches and IDX files.

use std::fs;
use std::path::{Path, PathBuf};

use crate::netir::TensorShape;
use crate::qengine::Samples;

use super::BenchError;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

/// Images stored NHWC as bytes; they are scaled to `[0, 1]` when batched.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub images: Vec<u8>,
    pub shape: TensorShape,
    pub labels: Vec<u8>,
    pub num_classes: usize,
    pub split: Split,
}

impl Dataset {
    pub fn new(images: Vec<u8>, shape: TensorShape, labels: Vec<u8>, num_classes: usize, split: Split) -> Result<Self, BenchError> {
        if images.len() != labels.len() * shape.numel() {
            return Err(BenchError::Format {
                path: PathBuf::new(),
                offset: images.len(),
                reason: format!("{} image bytes do not hold {} images of {shape}", images.len(), labels.len()),
            });
        }
        if let Some((i, &l)) = labels.iter().enumerate().find(|(_, &l)| l as usize >= num_classes) {
            return Err(BenchError::Format { path: PathBuf::new(), offset: i, reason: format!("label {l} >= {num_classes}") });
        }
        Ok(Self { images, shape, labels, num_classes, split })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn image(&self, i: usize) -> &[u8] {
        let n = self.shape.numel();
        &self.images[i * n..(i + 1) * n]
    }

    pub fn samples(&self) -> Samples<'_> {
        Samples { images: &self.images, shape: self.shape, labels: &self.labels, num_classes: self.num_classes }
    }
}

pub const CIFAR_SIDE: usize = 32;
pub const CIFAR_RECORD: usize = 1 + 3 * CIFAR_SIDE * CIFAR_SIDE;
pub const CIFAR_TRAIN_FILES: [&str; 5] =
    ["data_batch_1.bin", "data_batch_2.bin", "data_batch_3.bin", "data_batch_4.bin", "data_batch_5.bin"];
pub const CIFAR_TEST_FILE: &str = "test_batch.bin";

/// Records of one CIFAR-10 binary batch: a label byte followed by the
/// red, green and blue planes, each 32×32 row-major.
pub fn parse_cifar_batch(bytes: &[u8], path: &Path) -> Result<(Vec<u8>, Vec<u8>), BenchError> {
    if !bytes.len().is_multiple_of(CIFAR_RECORD) {
        let whole = bytes.len() / CIFAR_RECORD;
        return Err(BenchError::Format {
            path: path.into(),
            offset: whole * CIFAR_RECORD,
            reason: format!("record {whole} is truncated ({} of {CIFAR_RECORD} bytes)", bytes.len() % CIFAR_RECORD),
        });
    }
    let n = bytes.len() / CIFAR_RECORD;
    let plane = CIFAR_SIDE * CIFAR_SIDE;
    let mut images = vec![0u8; n * 3 * plane];
    let mut labels = Vec::with_capacity(n);
    for (r, rec) in bytes.chunks_exact(CIFAR_RECORD).enumerate() {
        if rec[0] > 9 {
            return Err(BenchError::Format {
                path: path.into(),
                offset: r * CIFAR_RECORD,
                reason: format!("record {r} has label {}", rec[0]),
            });
        }
        labels.push(rec[0]);
        let out = &mut images[r * 3 * plane..(r + 1) * 3 * plane];
        for c in 0..3 {
            for p in 0..plane {
                out[p * 3 + c] = rec[1 + c * plane + p];
            }
        }
    }
    Ok((images, labels))
}

/// Inverse of [`parse_cifar_batch`] for `(32, 32, 3)` datasets.
pub fn encode_cifar_batch(d: &Dataset) -> Vec<u8> {
    let plane = CIFAR_SIDE * CIFAR_SIDE;
    let mut out = Vec::with_capacity(d.len() * CIFAR_RECORD);
    for i in 0..d.len() {
        out.push(d.labels[i]);
        let img = d.image(i);
        for c in 0..3 {
            out.extend((0..plane).map(|p| img[p * 3 + c]));
        }
    }
    out
}

fn read(path: &Path) -> Result<Vec<u8>, BenchError> {
    fs::read(path).map_err(|e| BenchError::Io { path: path.into(), source: e })
}

/// `(train, test)` from a directory holding the five training batches and
/// the test batch.
pub fn load_cifar10_binary(dir: &Path) -> Result<(Dataset, Dataset), BenchError> {
    let shape = TensorShape::new(CIFAR_SIDE, CIFAR_SIDE, 3);
    let mut images = Vec::new();
    let mut labels = Vec::new();
    for f in CIFAR_TRAIN_FILES {
        let p = dir.join(f);
        let (i, l) = parse_cifar_batch(&read(&p)?, &p)?;
        images.extend(i);
        labels.extend(l);
    }
    let train = Dataset::new(images, shape, labels, 10, Split::Train)?;
    let p = dir.join(CIFAR_TEST_FILE);
    let (i, l) = parse_cifar_batch(&read(&p)?, &p)?;
    let test = Dataset::new(i, shape, l, 10, Split::Test)?;
    Ok((train, test))
}

const IDX_IMAGES: u32 = 0x0000_0803;
const IDX_IMAGES_RGB: u32 = 0x0000_0804;
const IDX_LABELS: u32 = 0x0000_0801;

fn be_u32(bytes: &[u8], at: usize, path: &Path) -> Result<u32, BenchError> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| BenchError::Format { path: path.into(), offset: bytes.len(), reason: "header is truncated".into() })
}

/// Parses an IDX image file: magic `0x00000803` with dims `(n, h, w)`, or
/// `0x00000804` with `(n, h, w, c)`.
pub fn parse_idx_images(bytes: &[u8], path: &Path) -> Result<(Vec<u8>, TensorShape), BenchError> {
    let magic = be_u32(bytes, 0, path)?;
    let rank = match magic {
        IDX_IMAGES => 3,
        IDX_IMAGES_RGB => 4,
        _ => return Err(BenchError::Format { path: path.into(), offset: 0, reason: format!("bad image magic {magic:#010x}") }),
    };
    let dims: Vec<usize> = (0..rank).map(|k| be_u32(bytes, 4 + 4 * k, path).map(|v| v as usize)).collect::<Result<_, _>>()?;
    let header = 4 + 4 * rank;
    let shape = TensorShape::new(dims[1], dims[2], if rank == 4 { dims[3] } else { 1 });
    let need = dims[0] * shape.numel();
    let body = &bytes[header..];
    if body.len() != need {
        return Err(BenchError::Format {
            path: path.into(),
            offset: header + body.len().min(need),
            reason: format!("expected {need} pixel bytes, found {}", body.len()),
        });
    }
    Ok((body.to_vec(), shape))
}

pub fn parse_idx_labels(bytes: &[u8], path: &Path) -> Result<Vec<u8>, BenchError> {
    let magic = be_u32(bytes, 0, path)?;
    if magic != IDX_LABELS {
        return Err(BenchError::Format { path: path.into(), offset: 0, reason: format!("bad label magic {magic:#010x}") });
    }
    let n = be_u32(bytes, 4, path)? as usize;
    let body = &bytes[8..];
    if body.len() != n {
        return Err(BenchError::Format {
            path: path.into(),
            offset: 8 + body.len().min(n),
            reason: format!("expected {n} labels, found {}", body.len()),
        });
    }
    Ok(body.to_vec())
}

/// Images and labels from two IDX files. The class count is one more than
/// the largest label unless given.
pub fn load_idx(images: &Path, labels: &Path, num_classes: Option<usize>, split: Split) -> Result<Dataset, BenchError> {
    let (img, shape) = parse_idx_images(&read(images)?, images)?;
    let lab = parse_idx_labels(&read(labels)?, labels)?;
    idx_dataset(img, shape, lab, num_classes, split, images)
}

pub(crate) fn idx_dataset(
    img: Vec<u8>,
    shape: TensorShape,
    lab: Vec<u8>,
    num_classes: Option<usize>,
    split: Split,
    path: &Path,
) -> Result<Dataset, BenchError> {
    if img.len() != lab.len() * shape.numel() {
        return Err(BenchError::Format {
            path: path.into(),
            offset: 0,
            reason: format!("{} images but {} labels", img.len() / shape.numel().max(1), lab.len()),
        });
    }
    let nc = num_classes.unwrap_or_else(|| lab.iter().max().map_or(1, |&m| m as usize + 1));
    Dataset::new(img, shape, lab, nc, split)
}

pub fn encode_idx_images(d: &Dataset) -> Vec<u8> {
    let mut out = Vec::with_capacity(20 + d.images.len());
    let s = d.shape;
    if s.channels == 1 {
        out.extend(IDX_IMAGES.to_be_bytes());
        for v in [d.len(), s.height, s.width] {
            out.extend((v as u32).to_be_bytes());
        }
    } else {
        out.extend(IDX_IMAGES_RGB.to_be_bytes());
        for v in [d.len(), s.height, s.width, s.channels] {
            out.extend((v as u32).to_be_bytes());
        }
    }
    out.extend_from_slice(&d.images);
    out
}

pub fn encode_idx_labels(d: &Dataset) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + d.len());
    out.extend(IDX_LABELS.to_be_bytes());
    out.extend((d.len() as u32).to_be_bytes());
    out.extend_from_slice(&d.labels);
    out
}

/// Writes `<stem>-images.idx` and `<stem>-labels.idx` into `dir`.
pub fn write_idx(d: &Dataset, dir: &Path, stem: &str) -> Result<(PathBuf, PathBuf), BenchError> {
    let pi = dir.join(format!("{stem}-images.idx"));
    let pl = dir.join(format!("{stem}-labels.idx"));
    fs::write(&pi, encode_idx_images(d)).map_err(|e| BenchError::Io { path: pi.clone(), source: e })?;
    fs::write(&pl, encode_idx_labels(d)).map_err(|e| BenchError::Io { path: pl.clone(), source: e })?;
    Ok((pi, pl))
}

/// `train-*` and `test-*` IDX pairs in one directory.
pub fn load_idx_dir(dir: &Path, num_classes: Option<usize>) -> Result<(Dataset, Dataset), BenchError> {
    let train = load_idx(&dir.join("train-images.idx"), &dir.join("train-labels.idx"), num_classes, Split::Train)?;
    let nc = Some(num_classes.unwrap_or(train.num_classes));
    let mut test = load_idx(&dir.join("test-images.idx"), &dir.join("test-labels.idx"), nc, Split::Test)?;
    if test.shape != train.shape {
        return Err(BenchError::Format {
            path: dir.into(),
            offset: 0,
            reason: format!("train images are {} but test images are {}", train.shape, test.shape),
        });
    }
    let nc = train.num_classes.max(test.num_classes);
    test.num_classes = nc;
    let train = Dataset { num_classes: nc, ..train };
    Ok((train, test))
}
