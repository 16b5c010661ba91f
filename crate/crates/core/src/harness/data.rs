//! Labelled image splits: CIFAR-10 binary ingestion, stratified subsampling
//! and a synthetic class-structured generator for tests and smoke runs.

use std::path::{Path, PathBuf};

use ndarray::Array3;
use rand::seq::SliceRandom;
use rand::Rng as _;
use sha2::{Digest, Sha256};

use crate::augment::Image;
use crate::error::{Error, Result};
use crate::rng::{sub_rng, TAG_SUBSAMPLE};

pub const CLASSES: usize = 10;
pub const SIDE: usize = 32;
pub const PIXEL_BYTES: usize = 3 * SIDE * SIDE;
pub const RECORD_BYTES: usize = 1 + PIXEL_BYTES;
pub const RECORDS_PER_FILE: usize = 10_000;
pub const FILE_BYTES: usize = RECORD_BYTES * RECORDS_PER_FILE;
pub const TRAIN_FILES: [&str; 5] = [
    "data_batch_1.bin",
    "data_batch_2.bin",
    "data_batch_3.bin",
    "data_batch_4.bin",
    "data_batch_5.bin",
];
pub const TEST_FILE: &str = "test_batch.bin";

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetSplit {
    pub name: String,
    pub images: Vec<Image>,
    pub labels: Vec<u8>,
}

impl DatasetSplit {
    pub fn new(name: impl Into<String>, images: Vec<Image>, labels: Vec<u8>) -> Result<Self> {
        if images.len() != labels.len() {
            return Err(Error::input(format!(
                "{} images but {} labels",
                images.len(),
                labels.len()
            )));
        }
        if let Some(l) = labels.iter().find(|&&l| l as usize >= CLASSES) {
            return Err(Error::input(format!("label {l} outside 0..{CLASSES}")));
        }
        Ok(Self {
            name: name.into(),
            images,
            labels,
        })
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn subset(&self, indices: &[usize]) -> Self {
        Self {
            name: self.name.clone(),
            images: indices.iter().map(|&i| self.images[i].clone()).collect(),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
        }
    }

    /// SHA-256 over labels and the little-endian bits of every pixel.
    pub fn content_hash(&self) -> String {
        let mut h = Sha256::new();
        h.update(&self.labels);
        for img in &self.images {
            h.update((img.height() as u64).to_le_bytes());
            h.update((img.width() as u64).to_le_bytes());
            for v in img.view().iter() {
                h.update(v.to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }
}

/// One 3,073-byte record: label byte, then R, G and B planes in row-major
/// order, each byte scaled by 1/255.
pub fn decode_record(rec: &[u8]) -> (Image, u8) {
    debug_assert_eq!(rec.len(), RECORD_BYTES);
    let px = &rec[1..];
    let data = Array3::from_shape_fn((3, SIDE, SIDE), |(c, y, x)| px[c * SIDE * SIDE + y * SIDE + x] as f64 / 255.0);
    (Image::new(data).expect("bytes are in range"), rec[0])
}

/// Inverse of [`decode_record`] for 32x32 images (pixels rounded to bytes).
pub fn encode_record(img: &Image, label: u8) -> Result<Vec<u8>> {
    if img.height() != SIDE || img.width() != SIDE {
        return Err(Error::input("records hold 32x32 images"));
    }
    let mut out = Vec::with_capacity(RECORD_BYTES);
    out.push(label);
    out.extend(img.view().iter().map(|&v| (v * 255.0).round() as u8));
    Ok(out)
}

/// Parse a batch file. With `expected_records` set, the file must hold
/// exactly that many records.
pub fn parse_batch(bytes: &[u8], path: &Path, expected_records: Option<usize>) -> Result<(Vec<Image>, Vec<u8>)> {
    let fail = |offset: usize, message: String| Error::Format {
        path: path.to_path_buf(),
        offset: offset as u64,
        message,
    };
    if !bytes.len().is_multiple_of(RECORD_BYTES) {
        return Err(fail(
            bytes.len() - bytes.len() % RECORD_BYTES,
            format!("size {} is not a multiple of {RECORD_BYTES}", bytes.len()),
        ));
    }
    if let Some(n) = expected_records {
        if bytes.len() != n * RECORD_BYTES {
            return Err(fail(
                bytes.len().min(n * RECORD_BYTES),
                format!("expected {} bytes, found {}", n * RECORD_BYTES, bytes.len()),
            ));
        }
    }
    let mut images = Vec::with_capacity(bytes.len() / RECORD_BYTES);
    let mut labels = Vec::with_capacity(bytes.len() / RECORD_BYTES);
    for (i, rec) in bytes.chunks_exact(RECORD_BYTES).enumerate() {
        if rec[0] as usize >= CLASSES {
            return Err(fail(i * RECORD_BYTES, format!("label byte {} > 9", rec[0])));
        }
        let (img, l) = decode_record(rec);
        images.push(img);
        labels.push(l);
    }
    Ok((images, labels))
}

/// Directory holding the batch files: `dir` itself or its
/// `cifar-10-batches-bin` child.
pub fn find_cifar10(dir: &Path) -> Option<PathBuf> {
    [dir.to_path_buf(), dir.join("cifar-10-batches-bin")]
        .into_iter()
        .find(|d| d.join(TEST_FILE).is_file() && TRAIN_FILES.iter().all(|f| d.join(f).is_file()))
}

/// Load the five training batches and the test batch. `records_per_file`
/// is the published 10,000 unless a reduced fixture is being read.
pub fn load_cifar10_with(dir: &Path, records_per_file: usize) -> Result<(DatasetSplit, DatasetSplit)> {
    let root = find_cifar10(dir).ok_or_else(|| {
        Error::input(format!(
            "no CIFAR-10 binary batches under {} (expected {} and {TEST_FILE})",
            dir.display(),
            TRAIN_FILES.join(", ")
        ))
    })?;
    let read = |name: &str| -> Result<(Vec<Image>, Vec<u8>)> {
        let p = root.join(name);
        let bytes = std::fs::read(&p).map_err(|e| Error::io(&p, e))?;
        parse_batch(&bytes, &p, Some(records_per_file))
    };
    let mut images = Vec::new();
    let mut labels = Vec::new();
    for f in TRAIN_FILES {
        let (i, l) = read(f)?;
        images.extend(i);
        labels.extend(l);
    }
    let train = DatasetSplit::new("train", images, labels)?;
    let (i, l) = read(TEST_FILE)?;
    Ok((train, DatasetSplit::new("test", i, l)?))
}

pub fn load_cifar10(dir: &Path) -> Result<(DatasetSplit, DatasetSplit)> {
    load_cifar10_with(dir, RECORDS_PER_FILE)
}

/// Seeded stratified sample of `n` items with equal per-class counts
/// (`n` must be a multiple of the number of classes present). Items keep
/// their original relative order.
pub fn stratified_subsample(split: &DatasetSplit, n: usize, seed: u64) -> Result<DatasetSplit> {
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); CLASSES];
    for (i, &l) in split.labels.iter().enumerate() {
        by_class[l as usize].push(i);
    }
    let present: Vec<usize> = (0..CLASSES).filter(|&c| !by_class[c].is_empty()).collect();
    if present.is_empty() || !n.is_multiple_of(present.len()) {
        return Err(Error::config(
            "train_size",
            format!("{n} is not a multiple of the {} classes present", present.len()),
        ));
    }
    let per = n / present.len();
    let mut chosen = Vec::with_capacity(n);
    for &c in &present {
        let mut idx = by_class[c].clone();
        if idx.len() < per {
            return Err(Error::config(
                "train_size",
                format!("class {c} has {} items, {per} requested", idx.len()),
            ));
        }
        idx.shuffle(&mut sub_rng(seed, &[TAG_SUBSAMPLE, c as u64]));
        chosen.extend_from_slice(&idx[..per]);
    }
    chosen.sort_unstable();
    Ok(split.subset(&chosen))
}

/// Parameters of the synthetic generator.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SyntheticSpec {
    pub classes: usize,
    pub size: usize,
    pub train_per_class: usize,
    pub val_per_class: usize,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            classes: CLASSES,
            size: 16,
            train_per_class: 8,
            val_per_class: 4,
            seed: 0,
        }
    }
}

struct Prototype {
    colour: [f64; 3],
    angle: f64,
    freq: f64,
}

/// Class-structured images: each class has a base colour and an oriented
/// stripe pattern; each image adds a random phase, a random coloured patch
/// and pixel noise. A top-to-bottom brightness ramp makes orientation
/// visible.
pub fn synthetic_dataset(spec: &SyntheticSpec) -> Result<(DatasetSplit, DatasetSplit)> {
    if spec.classes == 0 || spec.classes > CLASSES || spec.size < 4 {
        return Err(Error::input("synthetic data needs 1..=10 classes and size >= 4"));
    }
    let mut proto_rng = sub_rng(spec.seed, &[0]);
    let protos: Vec<Prototype> = (0..spec.classes)
        .map(|c| Prototype {
            colour: [
                proto_rng.random_range(0.15..0.85),
                proto_rng.random_range(0.15..0.85),
                proto_rng.random_range(0.15..0.85),
            ],
            angle: std::f64::consts::PI * c as f64 / spec.classes as f64,
            freq: proto_rng.random_range(0.6..1.6),
        })
        .collect();
    let make = |split: u64, per_class: usize, name: &str| -> Result<DatasetSplit> {
        let mut images = Vec::with_capacity(per_class * spec.classes);
        let mut labels = Vec::with_capacity(per_class * spec.classes);
        for i in 0..per_class {
            for (c, p) in protos.iter().enumerate() {
                let mut rng = sub_rng(spec.seed, &[1, split, i as u64, c as u64]);
                images.push(synthetic_image(p, spec.size, &mut rng));
                labels.push(c as u8);
            }
        }
        DatasetSplit::new(name, images, labels)
    };
    Ok((
        make(0, spec.train_per_class, "train")?,
        make(1, spec.val_per_class, "val")?,
    ))
}

fn synthetic_image(p: &Prototype, size: usize, rng: &mut crate::rng::Rng) -> Image {
    let phase = rng.random_range(0.0..std::f64::consts::TAU);
    let patch_colour = [rng.random::<f64>(), rng.random::<f64>(), rng.random::<f64>()];
    let half = (size / 4).max(1);
    let py = rng.random_range(0..size - half);
    let px = rng.random_range(0..size - half);
    let (s, c) = p.angle.sin_cos();
    let n = size as f64;
    let data = Array3::from_shape_fn((3, size, size), |(ch, y, x)| {
        let (yf, xf) = (y as f64, x as f64);
        let stripe = (p.freq * (c * xf + s * yf) + phase).sin();
        let ramp = 0.25 * (1.0 - yf / n);
        let mut v = 0.55 * p.colour[ch] + 0.15 * stripe + ramp + 0.05;
        if (py..py + half).contains(&y) && (px..px + half).contains(&x) {
            v = 0.5 * v + 0.5 * patch_colour[ch];
        }
        v + rng.random_range(-0.03..0.03)
    });
    Image::new(data).expect("finite pixels")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(label: u8, fill: u8) -> Vec<u8> {
        let mut r = vec![fill; RECORD_BYTES];
        r[0] = label;
        r
    }

    #[test]
    fn layout_constants() {
        assert_eq!(RECORD_BYTES, 3073);
        assert_eq!(FILE_BYTES, 30_730_000);
    }

    #[test]
    fn record_round_trip() {
        let mut rec = vec![7u8];
        rec.extend((0..PIXEL_BYTES).map(|i| (i * 31 % 256) as u8));
        let (img, l) = decode_record(&rec);
        assert_eq!(l, 7);
        // R plane first, row-major
        assert_eq!(img.view()[[0, 0, 1]], rec[2] as f64 / 255.0);
        assert_eq!(img.view()[[1, 0, 0]], rec[1 + 1024] as f64 / 255.0);
        assert_eq!(img.view()[[2, 31, 31]], rec[3072] as f64 / 255.0);
        assert_eq!(encode_record(&img, l).unwrap(), rec);
    }

    #[test]
    fn format_errors_carry_offsets() {
        let p = Path::new("batch.bin");
        let mut bytes = record(3, 10);
        bytes.extend(record(10, 0));
        match parse_batch(&bytes, p, None) {
            Err(Error::Format { offset, .. }) => assert_eq!(offset, RECORD_BYTES as u64),
            other => panic!("{other:?}"),
        }
        let short = record(1, 1);
        assert!(matches!(parse_batch(&short, p, Some(2)), Err(Error::Format { .. })));
        assert!(matches!(parse_batch(&short[..100], p, None), Err(Error::Format { .. })));
        let (imgs, labels) = parse_batch(&short, p, Some(1)).unwrap();
        assert_eq!((imgs.len(), labels[0]), (1, 1));
    }

    #[test]
    fn stratified_sampling_is_balanced_and_seeded() {
        let (train, _) = synthetic_dataset(&SyntheticSpec {
            train_per_class: 6,
            ..Default::default()
        })
        .unwrap();
        let a = stratified_subsample(&train, 30, 4).unwrap();
        let b = stratified_subsample(&train, 30, 4).unwrap();
        assert_eq!(a, b);
        for c in 0..10u8 {
            assert_eq!(a.labels.iter().filter(|&&l| l == c).count(), 3);
        }
        assert!(stratified_subsample(&train, 33, 4).is_err());
        assert!(stratified_subsample(&train, 70, 4).is_err());
    }

    #[test]
    fn synthetic_is_deterministic_and_valid() {
        let spec = SyntheticSpec::default();
        let (a, va) = synthetic_dataset(&spec).unwrap();
        let (b, _) = synthetic_dataset(&spec).unwrap();
        assert_eq!(a.content_hash(), b.content_hash());
        assert_eq!(a.len(), 80);
        assert_eq!(va.len(), 40);
        assert_ne!(a.images[0], a.images[10]);
        assert!(DatasetSplit::new("x", vec![Image::filled(2, 2, 0.0)], vec![10]).is_err());
    }
}
