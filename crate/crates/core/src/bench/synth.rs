//! The bundled desk-scale dataset: ten mirror-symmetric line-art classes on
//! 12×12 grayscale images, jittered and noised. Every class is invariant
//! under horizontal flips, so flip augmentation does not mix labels.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::netir::TensorShape;

use super::dataset::{idx_dataset, parse_idx_images, parse_idx_labels, Dataset, Split};
use super::BenchError;

pub const DESK_SIDE: usize = 12;
pub const DESK_CLASSES: usize = 10;
pub const DESK_TRAIN: usize = 3000;
pub const DESK_TEST: usize = 1000;
pub const DESK_TRAIN_SEED: u64 = 0x5eed_0001;
pub const DESK_TEST_SEED: u64 = 0x5eed_0002;

static TRAIN_IMAGES: &[u8] = include_bytes!("../../data/desk-train-images.idx");
static TRAIN_LABELS: &[u8] = include_bytes!("../../data/desk-train-labels.idx");
static TEST_IMAGES: &[u8] = include_bytes!("../../data/desk-test-images.idx");
static TEST_LABELS: &[u8] = include_bytes!("../../data/desk-test-labels.idx");

pub const CLASS_NAMES: [&str; DESK_CLASSES] =
    ["hbar", "vbar", "plus", "cross", "frame", "block", "hpair", "vpair", "tee", "diamond"];

/// Points of class `k`'s shape inside a 12×12 canvas, before jitter.
fn shape_points(k: usize, t: usize) -> Vec<(i32, i32)> {
    let mut pts = Vec::new();
    let span = 2..10;
    match k {
        0 => {
            for x in span.clone() {
                for d in 0..t as i32 {
                    pts.push((5 + d, x));
                }
            }
        }
        1 => {
            for y in span.clone() {
                for d in 0..t as i32 {
                    pts.push((y, 5 + d));
                }
            }
        }
        2 => {
            for i in span.clone() {
                pts.push((5, i));
                pts.push((i, 5));
                if t > 1 {
                    pts.push((6, i));
                    pts.push((i, 6));
                }
            }
        }
        3 => {
            for i in span.clone() {
                pts.push((i, i));
                pts.push((i, 11 - i));
            }
        }
        4 => {
            for i in span.clone() {
                pts.push((2, i));
                pts.push((9, i));
                pts.push((i, 2));
                pts.push((i, 9));
            }
        }
        5 => {
            for y in 4..8 {
                for x in 4..8 {
                    pts.push((y, x));
                }
            }
        }
        6 => {
            for x in span.clone() {
                pts.push((3, x));
                pts.push((8, x));
            }
        }
        7 => {
            for y in span.clone() {
                pts.push((y, 3));
                pts.push((y, 8));
            }
        }
        8 => {
            for x in span.clone() {
                pts.push((2, x));
            }
            for y in 2..10 {
                pts.push((y, 5));
                pts.push((y, 6));
            }
        }
        _ => {
            for i in 0..5 {
                pts.push((1 + i, 5 - i));
                pts.push((1 + i, 6 + i));
                pts.push((10 - i, 5 - i));
                pts.push((10 - i, 6 + i));
            }
        }
    }
    pts
}

/// `n` images with labels cycling through the classes, from `seed`.
pub fn generate(n: usize, seed: u64, split: Split) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let side = DESK_SIDE as i32;
    let mut images = Vec::with_capacity(n * DESK_SIDE * DESK_SIDE);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let k = i % DESK_CLASSES;
        let thickness = rng.gen_range(1..=2);
        let (dy, dx) = (rng.gen_range(-1..=1), rng.gen_range(-1..=1));
        let ink = rng.gen_range(150..=255u32);
        let mut img: Vec<u8> = (0..DESK_SIDE * DESK_SIDE).map(|_| rng.gen_range(0..48)).collect();
        for (y, x) in shape_points(k, thickness) {
            let (y, x) = (y + dy, x + dx);
            if (0..side).contains(&y) && (0..side).contains(&x) {
                let v = (ink as i32 + rng.gen_range(-30..=0)).clamp(0, 255);
                img[(y * side + x) as usize] = v as u8;
            }
        }
        images.extend(img);
        labels.push(k as u8);
    }
    let shape = TensorShape::new(DESK_SIDE, DESK_SIDE, 1);
    Dataset::new(images, shape, labels, DESK_CLASSES, split).expect("generator output is consistent")
}

/// What the bundled files were generated from.
pub fn generate_bundled() -> (Dataset, Dataset) {
    (generate(DESK_TRAIN, DESK_TRAIN_SEED, Split::Train), generate(DESK_TEST, DESK_TEST_SEED, Split::Test))
}

/// The bundled `(train, test)` pair.
pub fn desk() -> Result<(Dataset, Dataset), BenchError> {
    let load = |img: &[u8], lab: &[u8], name: &str, split| {
        let p = Path::new(name);
        let (i, shape) = parse_idx_images(img, p)?;
        let l = parse_idx_labels(lab, p)?;
        idx_dataset(i, shape, l, Some(DESK_CLASSES), split, p)
    };
    Ok((
        load(TRAIN_IMAGES, TRAIN_LABELS, "desk-train", Split::Train)?,
        load(TEST_IMAGES, TEST_LABELS, "desk-test", Split::Test)?,
    ))
}
