//! CIFAR-10 binary version: fixed 3073-byte records, one label byte then
//! 1024 red, 1024 green and 1024 blue bytes (row-major 32×32 planes).

use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const RECORD_BYTES: usize = 3073;
pub const IMAGE_SIDE: usize = 32;
pub const CLASSES: usize = 10;
const MAX_RECORDS: usize = 60_000;

pub const TRAIN_FILES: [&str; 5] = [
    "data_batch_1.bin",
    "data_batch_2.bin",
    "data_batch_3.bin",
    "data_batch_4.bin",
    "data_batch_5.bin",
];
pub const TEST_FILE: &str = "test_batch.bin";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Cifar10Set {
    /// `[N, 3, 32, 32]`, values in `[0, 1]`.
    pub images: Tensor,
    pub labels: Vec<usize>,
}

impl Cifar10Set {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Keeps the first `k` records of each class in file order.
    pub fn first_per_class(&self, k: usize) -> Cifar10Set {
        let mut taken = [0usize; CLASSES];
        let picks: Vec<usize> = self
            .labels
            .iter()
            .enumerate()
            .filter_map(|(i, &y)| {
                if taken[y] < k {
                    taken[y] += 1;
                    Some(i)
                } else {
                    None
                }
            })
            .collect();
        self.select(&picks)
    }

    /// Records at `indices`, in that order. `indices` must be non-empty.
    pub fn select(&self, indices: &[usize]) -> Cifar10Set {
        assert!(!indices.is_empty(), "empty CIFAR-10 selection");
        let per = 3 * IMAGE_SIDE * IMAGE_SIDE;
        let mut data = Vec::with_capacity(indices.len() * per);
        for &i in indices {
            data.extend_from_slice(&self.images.data()[i * per..(i + 1) * per]);
        }
        Cifar10Set {
            images: Tensor::from_vec([indices.len(), 3, IMAGE_SIDE, IMAGE_SIDE], data).expect("consistent buffer"),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
        }
    }

    pub fn batch(&self, indices: &[usize]) -> (Tensor, Vec<usize>) {
        let s = self.select(indices);
        (s.images, s.labels)
    }
}

/// Parses the bytes of one CIFAR-10 binary file.
pub fn parse_cifar10(bytes: &[u8], origin: &Path) -> Result<Cifar10Set> {
    if bytes.is_empty() || bytes.len() % RECORD_BYTES != 0 {
        return Err(Error::format(
            origin,
            format!("length {} is not a positive multiple of {RECORD_BYTES}", bytes.len()),
        ));
    }
    let n = bytes.len() / RECORD_BYTES;
    if n > MAX_RECORDS {
        return Err(Error::format(origin, format!("{n} records exceeds {MAX_RECORDS}")));
    }
    let mut labels = Vec::with_capacity(n);
    let mut pixels = Vec::with_capacity(n * (RECORD_BYTES - 1));
    for (r, rec) in bytes.chunks_exact(RECORD_BYTES).enumerate() {
        let label = rec[0] as usize;
        if label >= CLASSES {
            return Err(Error::format(origin, format!("record {r}: label {label} > 9")));
        }
        labels.push(label);
        pixels.extend(rec[1..].iter().map(|&b| f64::from(b) / 255.0));
    }
    Ok(Cifar10Set {
        images: Tensor::from_vec([n, 3, IMAGE_SIDE, IMAGE_SIDE], pixels)?,
        labels,
    })
}

pub fn load_cifar10_file(path: &Path) -> Result<Cifar10Set> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_cifar10(&bytes, path)
}

/// Loads a split from a directory holding the standard binary batch files.
pub fn load_cifar10(dir: &Path, split: Split) -> Result<Cifar10Set> {
    let files: Vec<PathBuf> = match split {
        Split::Train => TRAIN_FILES.iter().map(|f| dir.join(f)).collect(),
        Split::Test => vec![dir.join(TEST_FILE)],
    };
    let mut images = Vec::new();
    let mut labels = Vec::new();
    for f in &files {
        let set = load_cifar10_file(f)?;
        labels.extend(set.labels);
        images.extend(set.images.into_vec());
    }
    if labels.len() > MAX_RECORDS {
        return Err(Error::format(dir, format!("{} records exceeds {MAX_RECORDS}", labels.len())));
    }
    Ok(Cifar10Set {
        images: Tensor::from_vec([labels.len(), 3, IMAGE_SIDE, IMAGE_SIDE], images)?,
        labels,
    })
}

/// Serializes a set back into the binary record format (pixels rounded to
/// the nearest byte).
pub fn encode_cifar10(set: &Cifar10Set) -> Vec<u8> {
    let per = RECORD_BYTES - 1;
    let mut out = Vec::with_capacity(set.len() * RECORD_BYTES);
    for (i, &y) in set.labels.iter().enumerate() {
        out.push(y as u8);
        out.extend(
            set.images.data()[i * per..(i + 1) * per]
                .iter()
                .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8),
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(label: u8, fill: u8) -> Vec<u8> {
        let mut r = vec![label];
        r.extend(std::iter::repeat_n(fill, RECORD_BYTES - 1));
        r
    }

    #[test]
    fn two_record_fixture() {
        let mut bytes = record(0, 255);
        bytes.extend(record(9, 0));
        bytes[1 + 1024] = 51; // first green pixel of record 0
        let set = parse_cifar10(&bytes, Path::new("mem")).unwrap();
        assert_eq!(set.labels, vec![0, 9]);
        assert_eq!(set.images.dims(), &[2, 3, 32, 32]);
        assert_eq!(set.images.at(&[0, 0, 0, 0]), 1.0);
        assert_eq!(set.images.at(&[0, 1, 0, 0]), 0.2);
        assert_eq!(set.images.at(&[1, 2, 31, 31]), 0.0);
        assert_eq!(encode_cifar10(&set), bytes);
    }

    #[test]
    fn bad_length_and_label() {
        let bytes = vec![0u8; RECORD_BYTES + 5];
        assert!(parse_cifar10(&bytes, Path::new("mem")).is_err());
        assert!(parse_cifar10(&[], Path::new("mem")).is_err());
        let bytes = record(10, 0);
        let err = parse_cifar10(&bytes, Path::new("mem")).unwrap_err().to_string();
        assert!(err.contains("label 10"), "{err}");
    }

    #[test]
    fn first_per_class_keeps_file_order() {
        let mut bytes = Vec::new();
        for (i, y) in [3u8, 1, 3, 3, 1, 0].iter().enumerate() {
            bytes.extend(record(*y, i as u8));
        }
        let set = parse_cifar10(&bytes, Path::new("mem")).unwrap();
        let sub = set.first_per_class(2);
        assert_eq!(sub.labels, vec![3, 1, 3, 1, 0]);
        assert_eq!(sub.images.at(&[2, 0, 0, 0]), 2.0 / 255.0);
    }
}
