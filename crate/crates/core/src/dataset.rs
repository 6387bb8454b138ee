//! MNIST in the IDX container, normalized to `[0, 1]`.
//!
//! IDX files start with a big-endian magic (2051 for images, 2049 for
//! labels) followed by big-endian `u32` dimensions and raw bytes. Gzipped
//! files are detected by their magic and decompressed transparently.

use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};

use flate2::read::GzDecoder;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

pub const IMAGE_SIDE: usize = 28;
pub const IMAGE_LEN: usize = IMAGE_SIDE * IMAGE_SIDE;
pub const N_CLASSES: usize = 10;

pub const IMAGE_MAGIC: u32 = 2051;
pub const LABEL_MAGIC: u32 = 2049;

pub type Image = [f64; IMAGE_LEN];

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    images: Vec<Image>,
    labels: Vec<u8>,
    name: String,
}

impl LabeledDataset {
    pub fn new(images: Vec<Image>, labels: Vec<u8>, name: impl Into<String>) -> Result<Self> {
        let name = name.into();
        if images.len() != labels.len() {
            return Err(Error::Dimension(format!(
                "dataset `{name}`: {} images but {} labels",
                images.len(),
                labels.len()
            )));
        }
        if let Some(bad) = labels.iter().find(|&&l| l as usize >= N_CLASSES) {
            return Err(Error::Value(format!(
                "dataset `{name}`: label {bad} is not a digit"
            )));
        }
        if images.iter().flatten().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::Value(format!("dataset `{name}`: pixel outside [0, 1]")));
        }
        Ok(Self { images, labels, name })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn images(&self) -> &[Image] {
        &self.images
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn get(&self, index: usize) -> (&Image, u8) {
        (&self.images[index], self.labels[index])
    }

    pub fn iter(&self) -> impl ExactSizeIterator<Item = (&Image, u8)> + '_ {
        self.images.iter().zip(self.labels.iter().copied())
    }

    /// Count of examples per digit.
    pub fn class_counts(&self) -> [usize; N_CLASSES] {
        let mut counts = [0; N_CLASSES];
        for &l in &self.labels {
            counts[l as usize] += 1;
        }
        counts
    }

    /// The examples at `indices`, in that order.
    pub fn select(&self, indices: &[usize], name: impl Into<String>) -> Self {
        Self {
            images: indices.iter().map(|&i| self.images[i]).collect(),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            name: name.into(),
        }
    }

    pub fn to_idx_images(&self) -> Vec<u8> {
        encode_idx_images(&self.images)
    }

    pub fn to_idx_labels(&self) -> Vec<u8> {
        encode_idx_labels(&self.labels)
    }
}

fn maybe_gunzip(bytes: &[u8]) -> Result<std::borrow::Cow<'_, [u8]>> {
    if bytes.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        GzDecoder::new(bytes)
            .read_to_end(&mut out)
            .map_err(|e| Error::format("gzip stream", e.to_string()))?;
        Ok(out.into())
    } else {
        Ok(bytes.into())
    }
}

fn read_be_u32(bytes: &[u8], offset: usize, what: &'static str) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes(b.try_into().unwrap()))
        .ok_or_else(|| Error::format(what, "truncated header"))
}

/// Parses an IDX image file; each byte `b` becomes `b / 255`.
pub fn parse_idx_images(bytes: &[u8]) -> Result<Vec<Image>> {
    const WHAT: &str = "IDX image file";
    let bytes = maybe_gunzip(bytes)?;
    let magic = read_be_u32(&bytes, 0, WHAT)?;
    if magic != IMAGE_MAGIC {
        return Err(Error::format(
            WHAT,
            format!("expected magic {IMAGE_MAGIC}, found {magic}"),
        ));
    }
    let count = read_be_u32(&bytes, 4, WHAT)? as usize;
    let rows = read_be_u32(&bytes, 8, WHAT)? as usize;
    let cols = read_be_u32(&bytes, 12, WHAT)? as usize;
    if rows != IMAGE_SIDE || cols != IMAGE_SIDE {
        return Err(Error::format(
            WHAT,
            format!("images are {rows}x{cols}, expected {IMAGE_SIDE}x{IMAGE_SIDE}"),
        ));
    }
    let body = &bytes[16..];
    let needed = count * IMAGE_LEN;
    if body.len() < needed {
        return Err(Error::format(
            WHAT,
            format!(
                "truncated: header declares {count} images, {} pixel bytes present",
                body.len()
            ),
        ));
    }
    Ok(body[..needed]
        .chunks_exact(IMAGE_LEN)
        .map(|raw| {
            let mut image = [0.0; IMAGE_LEN];
            for (p, &b) in image.iter_mut().zip(raw) {
                *p = b as f64 / 255.0;
            }
            image
        })
        .collect())
}

/// Parses an IDX label file, one digit per byte.
pub fn parse_idx_labels(bytes: &[u8]) -> Result<Vec<u8>> {
    const WHAT: &str = "IDX label file";
    let bytes = maybe_gunzip(bytes)?;
    let magic = read_be_u32(&bytes, 0, WHAT)?;
    if magic != LABEL_MAGIC {
        return Err(Error::format(
            WHAT,
            format!("expected magic {LABEL_MAGIC}, found {magic}"),
        ));
    }
    let count = read_be_u32(&bytes, 4, WHAT)? as usize;
    let body = &bytes[8..];
    if body.len() < count {
        return Err(Error::format(
            WHAT,
            format!(
                "truncated: header declares {count} labels, {} present",
                body.len()
            ),
        ));
    }
    let labels = body[..count].to_vec();
    if let Some((i, &b)) = labels.iter().enumerate().find(|(_, &b)| b as usize >= N_CLASSES) {
        return Err(Error::Value(format!("label {i} is {b}, not a digit 0-9")));
    }
    Ok(labels)
}

/// Inverse of [`parse_idx_images`]: pixels are scaled back by 255 and rounded.
pub fn encode_idx_images(images: &[Image]) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + images.len() * IMAGE_LEN);
    for v in [
        IMAGE_MAGIC,
        images.len() as u32,
        IMAGE_SIDE as u32,
        IMAGE_SIDE as u32,
    ] {
        out.extend_from_slice(&v.to_be_bytes());
    }
    for image in images {
        out.extend(image.iter().map(|&p| (p * 255.0).round() as u8));
    }
    out
}

pub fn encode_idx_labels(labels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&LABEL_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    out
}

/// Exactly `per_class` examples of every digit. Each class is shuffled with a
/// ChaCha stream seeded by `seed` and truncated; the classes are concatenated
/// in digit order and the result shuffled once more from the same stream.
pub fn balanced_subset(ds: &LabeledDataset, per_class: usize, seed: u64) -> Result<LabeledDataset> {
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); N_CLASSES];
    for (i, &l) in ds.labels.iter().enumerate() {
        by_class[l as usize].push(i);
    }
    for (digit, members) in by_class.iter().enumerate() {
        if members.len() < per_class {
            return Err(Error::InsufficientClass {
                dataset: ds.name.clone(),
                digit: digit as u8,
                available: members.len(),
                requested: per_class,
            });
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut chosen = Vec::with_capacity(per_class * N_CLASSES);
    for members in &mut by_class {
        members.shuffle(&mut rng);
        chosen.extend_from_slice(&members[..per_class]);
    }
    chosen.shuffle(&mut rng);
    Ok(ds.select(
        &chosen,
        format!("{}[balanced {per_class}/class, seed {seed}]", ds.name),
    ))
}

/// The four conventional MNIST file stems.
pub const TRAIN_IMAGES: &str = "train-images-idx3-ubyte";
pub const TRAIN_LABELS: &str = "train-labels-idx1-ubyte";
pub const TEST_IMAGES: &str = "t10k-images-idx3-ubyte";
pub const TEST_LABELS: &str = "t10k-labels-idx1-ubyte";

/// Finds `stem`, `stem.gz`, or the dotted variant (`train-images.idx3-ubyte`).
pub fn locate(dir: &Path, stem: &str) -> Result<PathBuf> {
    let dotted = stem.replacen("-idx", ".idx", 1);
    for name in [
        stem.to_string(),
        format!("{stem}.gz"),
        dotted.clone(),
        format!("{dotted}.gz"),
    ] {
        let path = dir.join(&name);
        if path.is_file() {
            return Ok(path);
        }
    }
    Err(Error::MissingData(format!(
        "`{stem}` not found in {} (point --data-dir at the MNIST files)",
        dir.display()
    )))
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

pub fn load_split(dir: &Path, images: &str, labels: &str, name: &str) -> Result<LabeledDataset> {
    let imgs = parse_idx_images(&read(&locate(dir, images)?)?)?;
    let lbls = parse_idx_labels(&read(&locate(dir, labels)?)?)?;
    LabeledDataset::new(imgs, lbls, name)
}

#[derive(Debug, Clone)]
pub struct Mnist {
    pub train: LabeledDataset,
    pub test: LabeledDataset,
}

/// Loads both splits from `dir` using the conventional file names.
pub fn load_mnist(dir: &Path) -> Result<Mnist> {
    if !dir.is_dir() {
        return Err(Error::MissingData(format!(
            "data directory {} does not exist (set --data-dir)",
            dir.display()
        )));
    }
    Ok(Mnist {
        train: load_split(dir, TRAIN_IMAGES, TRAIN_LABELS, "mnist-train")?,
        test: load_split(dir, TEST_IMAGES, TEST_LABELS, "mnist-test")?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn header(magic: u32, dims: &[u32]) -> Vec<u8> {
        let mut out = magic.to_be_bytes().to_vec();
        for d in dims {
            out.extend_from_slice(&d.to_be_bytes());
        }
        out
    }

    #[test]
    fn blank_image() {
        let mut bytes = header(2051, &[1, 28, 28]);
        bytes.extend(std::iter::repeat_n(0u8, 784));
        let images = parse_idx_images(&bytes).unwrap();
        assert_eq!(images.len(), 1);
        assert!(images[0].iter().all(|&p| p == 0.0));
    }

    #[test]
    fn full_intensity_is_one() {
        let mut bytes = header(2051, &[1, 28, 28]);
        bytes.extend(std::iter::repeat_n(255u8, 784));
        assert!(parse_idx_images(&bytes).unwrap()[0].iter().all(|&p| p == 1.0));
    }

    #[test]
    fn image_format_errors() {
        let mut bytes = header(2049, &[1, 28, 28]);
        bytes.extend(std::iter::repeat_n(0u8, 784));
        assert!(matches!(parse_idx_images(&bytes), Err(Error::Format { .. })));

        let mut bytes = header(2051, &[1, 27, 28]);
        bytes.extend(std::iter::repeat_n(0u8, 756));
        assert!(matches!(parse_idx_images(&bytes), Err(Error::Format { .. })));

        let mut bytes = header(2051, &[2, 28, 28]);
        bytes.extend(std::iter::repeat_n(0u8, 784));
        assert!(matches!(parse_idx_images(&bytes), Err(Error::Format { .. })));

        assert!(matches!(parse_idx_images(&[0, 0, 8]), Err(Error::Format { .. })));
    }

    #[test]
    fn labels() {
        let mut bytes = header(2049, &[3]);
        bytes.extend([0, 5, 9]);
        assert_eq!(parse_idx_labels(&bytes).unwrap(), vec![0, 5, 9]);

        let mut bad = header(2049, &[1]);
        bad.push(12);
        assert!(matches!(parse_idx_labels(&bad), Err(Error::Value(_))));

        let mut short = header(2049, &[4]);
        short.extend([1, 2]);
        assert!(matches!(parse_idx_labels(&short), Err(Error::Format { .. })));
    }

    #[test]
    fn gzip_is_sniffed() {
        let mut raw = header(2049, &[2]);
        raw.extend([7, 1]);
        let mut enc = flate2::write::GzEncoder::new(Vec::new(), flate2::Compression::default());
        enc.write_all(&raw).unwrap();
        let gz = enc.finish().unwrap();
        assert_eq!(parse_idx_labels(&gz).unwrap(), vec![7, 1]);
    }

    fn toy(per_digit: usize) -> LabeledDataset {
        let mut images = Vec::new();
        let mut labels = Vec::new();
        for k in 0..per_digit * N_CLASSES {
            let mut img = [0.0; IMAGE_LEN];
            img[k % IMAGE_LEN] = 1.0;
            images.push(img);
            labels.push((k % N_CLASSES) as u8);
        }
        LabeledDataset::new(images, labels, "toy").unwrap()
    }

    #[test]
    fn balanced_subset_counts() {
        let ds = toy(5);
        let sub = balanced_subset(&ds, 3, 11).unwrap();
        assert_eq!(sub.len(), 30);
        assert_eq!(sub.class_counts(), [3; 10]);
        assert_eq!(balanced_subset(&ds, 3, 11).unwrap(), sub);
        assert!(balanced_subset(&ds, 0, 1).unwrap().is_empty());
    }

    #[test]
    fn balanced_subset_names_deficient_digit() {
        let mut ds = toy(2);
        // Drop one example of digit 4.
        let keep: Vec<usize> = (0..ds.len()).filter(|&i| i != 4).collect();
        ds = ds.select(&keep, "short");
        match balanced_subset(&ds, 2, 0) {
            Err(Error::InsufficientClass { digit, .. }) => assert_eq!(digit, 4),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn dataset_validation() {
        assert!(LabeledDataset::new(vec![[0.0; IMAGE_LEN]], vec![], "x").is_err());
        assert!(LabeledDataset::new(vec![[0.0; IMAGE_LEN]], vec![10], "x").is_err());
        let mut img = [0.0; IMAGE_LEN];
        img[3] = 1.5;
        assert!(LabeledDataset::new(vec![img], vec![1], "x").is_err());
    }

    #[test]
    fn missing_data_dir() {
        let err = load_mnist(Path::new("/nonexistent/mnist")).unwrap_err();
        assert!(err.to_string().contains("--data-dir"), "{err}");
    }
}
