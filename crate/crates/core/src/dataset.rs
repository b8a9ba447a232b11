//! IDX image/label containers (the MNIST family format) and deterministic subsets.
//!
//! Image files start with the big-endian magic `0x00000803` followed by three
//! big-endian `u32` dimensions (count, rows, cols) and `count * rows * cols`
//! unsigned bytes. Label files start with `0x00000801`, one `u32` count and one
//! byte per label.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const IMAGE_MAGIC: u32 = 0x0000_0803;
pub const LABEL_MAGIC: u32 = 0x0000_0801;

/// Environment variable naming the directory that holds one sub-directory per dataset.
pub const DATA_DIR_ENV: &str = "MUSHROOM_DATA_DIR";

/// Name of the optional per-dataset checksum manifest (`sha256sum` output format).
pub const MANIFEST_NAME: &str = "SHA256SUMS";

/// A stack of greyscale images. Intensities are stored as the original bytes and
/// exposed as `byte / 255`.
#[derive(Clone, PartialEq, Eq)]
pub struct ImageSet {
    count: usize,
    rows: usize,
    cols: usize,
    bytes: Vec<u8>,
}

impl fmt::Debug for ImageSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ImageSet")
            .field("count", &self.count)
            .field("rows", &self.rows)
            .field("cols", &self.cols)
            .finish()
    }
}

impl ImageSet {
    pub fn from_bytes(count: usize, rows: usize, cols: usize, bytes: Vec<u8>) -> Result<Self> {
        let expected = count
            .checked_mul(rows)
            .and_then(|v| v.checked_mul(cols))
            .ok_or_else(|| Error::Length("image dimensions overflow".into()))?;
        if bytes.len() != expected {
            return Err(Error::Length(format!(
                "expected {expected} pixel bytes for {count}x{rows}x{cols}, got {}",
                bytes.len()
            )));
        }
        Ok(Self {
            count,
            rows,
            cols,
            bytes,
        })
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    /// Pixels per image.
    pub fn image_len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.count == 0
    }

    /// Raw bytes of image `index`.
    pub fn image_bytes(&self, index: usize) -> &[u8] {
        let len = self.image_len();
        &self.bytes[index * len..(index + 1) * len]
    }

    /// Normalized intensities of image `index`, row-major.
    pub fn image(&self, index: usize) -> Vec<f64> {
        self.image_bytes(index)
            .iter()
            .map(|&b| normalize(b))
            .collect()
    }

    /// All intensities, image after image.
    pub fn pixels(&self) -> Vec<f64> {
        self.bytes.iter().map(|&b| normalize(b)).collect()
    }

    pub fn raw(&self) -> &[u8] {
        &self.bytes
    }

    /// Copy of the images at `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> ImageSet {
        let mut bytes = Vec::with_capacity(indices.len() * self.image_len());
        for &i in indices {
            bytes.extend_from_slice(self.image_bytes(i));
        }
        ImageSet {
            count: indices.len(),
            rows: self.rows,
            cols: self.cols,
            bytes,
        }
    }
}

#[inline]
pub fn normalize(byte: u8) -> f64 {
    f64::from(byte) / 255.0
}

/// Class indices, one per image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelSet {
    labels: Vec<u8>,
}

impl LabelSet {
    pub fn new(labels: Vec<u8>) -> Self {
        Self { labels }
    }

    pub fn count(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn get(&self, index: usize) -> usize {
        usize::from(self.labels[index])
    }

    pub fn select(&self, indices: &[usize]) -> LabelSet {
        LabelSet {
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
        }
    }

    /// Number of occurrences of each class in `0..n_classes`.
    pub fn histogram(&self, n_classes: usize) -> Vec<usize> {
        let mut counts = vec![0; n_classes];
        for &l in &self.labels {
            if let Some(c) = counts.get_mut(usize::from(l)) {
                *c += 1;
            }
        }
        counts
    }
}

fn read_u32(raw: &[u8], offset: usize) -> Option<u32> {
    raw.get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
}

pub fn parse_idx_images(raw: &[u8]) -> Result<ImageSet> {
    let magic = read_u32(raw, 0).ok_or_else(|| Error::Length("missing IDX magic".into()))?;
    if magic != IMAGE_MAGIC {
        return Err(Error::Format(format!(
            "expected image magic 0x{IMAGE_MAGIC:08x}, found 0x{magic:08x}"
        )));
    }
    let dims: Vec<usize> = (0..3)
        .map(|k| read_u32(raw, 4 + 4 * k).map(|v| v as usize))
        .collect::<Option<_>>()
        .ok_or_else(|| Error::Length("truncated IDX image header".into()))?;
    let (count, rows, cols) = (dims[0], dims[1], dims[2]);
    let payload = &raw[16..];
    let expected = count
        .checked_mul(rows)
        .and_then(|v| v.checked_mul(cols))
        .ok_or_else(|| Error::Length("image dimensions overflow".into()))?;
    if payload.len() != expected {
        return Err(Error::Length(format!(
            "header declares {count} images of {rows}x{cols} ({expected} bytes), payload holds {}",
            payload.len()
        )));
    }
    ImageSet::from_bytes(count, rows, cols, payload.to_vec())
}

pub fn parse_idx_labels(raw: &[u8]) -> Result<LabelSet> {
    let magic = read_u32(raw, 0).ok_or_else(|| Error::Length("missing IDX magic".into()))?;
    if magic != LABEL_MAGIC {
        return Err(Error::Format(format!(
            "expected label magic 0x{LABEL_MAGIC:08x}, found 0x{magic:08x}"
        )));
    }
    let count = read_u32(raw, 4)
        .ok_or_else(|| Error::Length("truncated IDX label header".into()))?
        as usize;
    let payload = &raw[8..];
    if payload.len() != count {
        return Err(Error::Length(format!(
            "header declares {count} labels, payload holds {}",
            payload.len()
        )));
    }
    Ok(LabelSet::new(payload.to_vec()))
}

pub fn write_idx_images(images: &ImageSet) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + images.bytes.len());
    out.extend_from_slice(&IMAGE_MAGIC.to_be_bytes());
    for dim in [images.count, images.rows, images.cols] {
        out.extend_from_slice(&(dim as u32).to_be_bytes());
    }
    out.extend_from_slice(&images.bytes);
    out
}

pub fn write_idx_labels(labels: &LabelSet) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + labels.labels.len());
    out.extend_from_slice(&LABEL_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.labels.len() as u32).to_be_bytes());
    out.extend_from_slice(&labels.labels);
    out
}

/// Images paired with their labels, all labels checked against `n_classes`.
#[derive(Debug, Clone)]
pub struct LabeledSet {
    pub images: ImageSet,
    pub labels: LabelSet,
    n_classes: usize,
}

impl LabeledSet {
    pub fn new(images: ImageSet, labels: LabelSet, n_classes: usize) -> Result<Self> {
        if images.count() != labels.count() {
            return Err(Error::Length(format!(
                "{} images paired with {} labels",
                images.count(),
                labels.count()
            )));
        }
        if let Some((i, &l)) = labels
            .labels()
            .iter()
            .enumerate()
            .find(|(_, &l)| usize::from(l) >= n_classes)
        {
            return Err(Error::Argument(format!(
                "label {l} at index {i} is outside 0..{n_classes}"
            )));
        }
        Ok(Self {
            images,
            labels,
            n_classes,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.count()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }
}

/// `n` distinct indices of `0..count`, in seeded random order.
pub fn subsample_indices(count: usize, n: usize, seed: u64) -> Result<Vec<usize>> {
    if n > count {
        return Err(Error::Argument(format!(
            "cannot draw {n} samples from a set of {count}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(rand::seq::index::sample(&mut rng, count, n).into_vec())
}

pub fn subsample(
    images: &ImageSet,
    labels: &LabelSet,
    n: usize,
    seed: u64,
) -> Result<(ImageSet, LabelSet)> {
    if images.count() != labels.count() {
        return Err(Error::Length(format!(
            "{} images paired with {} labels",
            images.count(),
            labels.count()
        )));
    }
    let idx = subsample_indices(images.count(), n, seed)?;
    Ok((images.select(&idx), labels.select(&idx)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum DatasetId {
    #[serde(rename = "mnist")]
    Mnist,
    #[serde(rename = "fashion-mnist")]
    FashionMnist,
}

impl DatasetId {
    pub const ALL: [DatasetId; 2] = [DatasetId::Mnist, DatasetId::FashionMnist];

    pub fn name(self) -> &'static str {
        match self {
            DatasetId::Mnist => "mnist",
            DatasetId::FashionMnist => "fashion-mnist",
        }
    }
}

impl fmt::Display for DatasetId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for DatasetId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "mnist" => Ok(DatasetId::Mnist),
            "fashion-mnist" | "fashion_mnist" | "fashionmnist" => Ok(DatasetId::FashionMnist),
            other => Err(Error::config(
                "dataset",
                format!("unknown dataset {other:?}; expected \"mnist\" or \"fashion-mnist\""),
            )),
        }
    }
}

/// The four files of a dataset directory.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DataFile {
    TrainImages,
    TrainLabels,
    TestImages,
    TestLabels,
}

impl DataFile {
    pub const ALL: [DataFile; 4] = [
        DataFile::TrainImages,
        DataFile::TrainLabels,
        DataFile::TestImages,
        DataFile::TestLabels,
    ];

    pub fn file_name(self) -> &'static str {
        match self {
            DataFile::TrainImages => "train-images-idx3-ubyte",
            DataFile::TrainLabels => "train-labels-idx1-ubyte",
            DataFile::TestImages => "t10k-images-idx3-ubyte",
            DataFile::TestLabels => "t10k-labels-idx1-ubyte",
        }
    }
}

/// SHA-256 of the uncompressed MNIST files as published.
const MNIST_SHA256: [(DataFile, &str); 4] = [
    (
        DataFile::TrainImages,
        "ba891046e6505d7aadcbbe25680a0738ad16aec93bde7f9b65e87a2fc25776db",
    ),
    (
        DataFile::TrainLabels,
        "65a50cbbf4e906d70832878ad85ccda5333a97f0f4c3dd2ef09a8a9eef7101c5",
    ),
    (
        DataFile::TestImages,
        "0fa7898d509279e482958e8ce81c8e77db3f2f8254e26661ceb7762c4d494ce7",
    ),
    (
        DataFile::TestLabels,
        "ff7bcfd416de33731a308c3f266cc351222c34898ecbeaf847f06e48f7ec33f2",
    ),
];

/// Built-in digest for a dataset file, when one is known.
pub fn builtin_sha256(dataset: DatasetId, file: DataFile) -> Option<&'static str> {
    match dataset {
        DatasetId::Mnist => MNIST_SHA256
            .iter()
            .find(|(f, _)| *f == file)
            .map(|(_, h)| *h),
        DatasetId::FashionMnist => None,
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

/// Parse a `sha256sum`-style manifest into (file name, digest) pairs.
pub fn parse_manifest(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut parts = line.split_whitespace();
        let (Some(hash), Some(name)) = (parts.next(), parts.next()) else {
            return Err(Error::Log {
                line: lineno + 1,
                message: format!("malformed manifest entry {line:?}"),
            });
        };
        if hash.len() != 64 || !hash.bytes().all(|b| b.is_ascii_hexdigit()) {
            return Err(Error::Log {
                line: lineno + 1,
                message: format!("malformed digest {hash:?}"),
            });
        }
        out.push((
            name.trim_start_matches('*').to_string(),
            hash.to_ascii_lowercase(),
        ));
    }
    Ok(out)
}

/// Directory holding `dataset`, resolved from an explicit root or `MUSHROOM_DATA_DIR`.
pub fn dataset_dir(root: Option<&Path>, dataset: DatasetId) -> Result<PathBuf> {
    let root = match root {
        Some(r) => r.to_path_buf(),
        None => std::env::var_os(DATA_DIR_ENV)
            .map(PathBuf::from)
            .ok_or_else(|| {
                Error::config(
                    "data_dir",
                    format!("no data directory given and {DATA_DIR_ENV} is not set"),
                )
            })?,
    };
    Ok(root.join(dataset.name()))
}

/// Outcome of checking one dataset file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FileCheck {
    pub file: DataFile,
    pub path: PathBuf,
    pub sha256: String,
    /// Where the expected digest came from, `None` if no digest was available.
    pub verified_by: Option<DigestSource>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DigestSource {
    Manifest,
    Builtin,
}

/// Check presence and SHA-256 of the four files. Expected digests come from a
/// `SHA256SUMS` manifest in the directory if present, else from the built-in table.
pub fn verify_dir(dir: &Path, dataset: DatasetId) -> Result<Vec<FileCheck>> {
    let manifest_path = dir.join(MANIFEST_NAME);
    let manifest = if manifest_path.is_file() {
        let text = fs::read_to_string(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
        Some(parse_manifest(&text)?)
    } else {
        None
    };
    let mut checks = Vec::with_capacity(4);
    for file in DataFile::ALL {
        let path = dir.join(file.file_name());
        if !path.is_file() {
            return Err(Error::MissingFile {
                path,
                hint: format!(
                    "place the uncompressed {} IDX files there, set {DATA_DIR_ENV}, or rerun `data` with --fetch",
                    dataset
                ),
            });
        }
        let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
        let found = sha256_hex(&bytes);
        let expected = manifest
            .as_ref()
            .and_then(|m| m.iter().find(|(n, _)| n == file.file_name()))
            .map(|(_, h)| (h.clone(), DigestSource::Manifest))
            .or_else(|| {
                builtin_sha256(dataset, file).map(|h| (h.to_string(), DigestSource::Builtin))
            });
        let verified_by = match expected {
            Some((hash, source)) => {
                if hash != found {
                    return Err(Error::Checksum {
                        path,
                        expected: hash,
                        found,
                    });
                }
                Some(source)
            }
            None => None,
        };
        checks.push(FileCheck {
            file,
            path,
            sha256: found,
            verified_by,
        });
    }
    Ok(checks)
}

/// Train and test splits of one dataset.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub id: DatasetId,
    pub train: LabeledSet,
    pub test: LabeledSet,
}

pub const N_CLASSES: usize = 10;

fn read_file(path: &Path) -> Result<Vec<u8>> {
    if !path.is_file() {
        return Err(Error::MissingFile {
            path: path.to_path_buf(),
            hint: format!("expected an uncompressed IDX file (see {DATA_DIR_ENV})"),
        });
    }
    fs::read(path).map_err(|e| Error::io(path, e))
}

impl Dataset {
    /// Load the four IDX files from `dir` (the dataset's own directory).
    pub fn load(dir: &Path, id: DatasetId) -> Result<Self> {
        let load_split = |images: DataFile, labels: DataFile| -> Result<LabeledSet> {
            let img = parse_idx_images(&read_file(&dir.join(images.file_name()))?)?;
            let lbl = parse_idx_labels(&read_file(&dir.join(labels.file_name()))?)?;
            LabeledSet::new(img, lbl, N_CLASSES)
        };
        Ok(Self {
            id,
            train: load_split(DataFile::TrainImages, DataFile::TrainLabels)?,
            test: load_split(DataFile::TestImages, DataFile::TestLabels)?,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn image_file(count: u32, rows: u32, cols: u32, payload: &[u8]) -> Vec<u8> {
        let mut raw = vec![0, 0, 8, 3];
        for d in [count, rows, cols] {
            raw.extend_from_slice(&d.to_be_bytes());
        }
        raw.extend_from_slice(payload);
        raw
    }

    fn label_file(payload: &[u8]) -> Vec<u8> {
        let mut raw = vec![0, 0, 8, 1];
        raw.extend_from_slice(&(payload.len() as u32).to_be_bytes());
        raw.extend_from_slice(payload);
        raw
    }

    #[test]
    fn parses_hand_encoded_image() {
        let raw = image_file(1, 2, 2, &[0, 255, 128, 64]);
        let set = parse_idx_images(&raw).unwrap();
        assert_eq!((set.count(), set.rows(), set.cols()), (1, 2, 2));
        assert_eq!(set.pixels(), vec![0.0, 1.0, 128.0 / 255.0, 64.0 / 255.0]);
        assert_eq!(write_idx_images(&set), raw);
    }

    #[test]
    fn endpoint_scaling() {
        assert_eq!(normalize(255), 1.0);
        assert_eq!(normalize(0), 0.0);
    }

    #[test]
    fn truncated_image_payload() {
        let raw = image_file(2, 2, 2, &[1, 2, 3, 4]);
        assert!(matches!(parse_idx_images(&raw), Err(Error::Length(_))));
        assert!(matches!(
            parse_idx_images(&raw[..10]),
            Err(Error::Length(_))
        ));
    }

    #[test]
    fn image_magic_checked() {
        let mut raw = image_file(1, 1, 1, &[0]);
        raw[3] = 1;
        assert!(matches!(parse_idx_images(&raw), Err(Error::Format(_))));
    }

    #[test]
    fn parses_labels() {
        let set = parse_idx_labels(&label_file(&[7, 0, 9])).unwrap();
        assert_eq!(set.labels(), &[7, 0, 9]);
        let empty = parse_idx_labels(&label_file(&[])).unwrap();
        assert!(empty.is_empty());
    }

    #[test]
    fn label_file_with_image_magic() {
        let mut raw = label_file(&[1]);
        raw[3] = 3;
        assert!(matches!(parse_idx_labels(&raw), Err(Error::Format(_))));
        let short = &label_file(&[1, 2])[..9];
        assert!(matches!(parse_idx_labels(short), Err(Error::Length(_))));
    }

    #[test]
    fn pairing_rejects_out_of_range_labels() {
        let images = ImageSet::from_bytes(2, 1, 1, vec![0, 1]).unwrap();
        let err = LabeledSet::new(images.clone(), LabelSet::new(vec![0, 10]), 10).unwrap_err();
        assert!(matches!(err, Error::Argument(_)));
        assert!(LabeledSet::new(images.clone(), LabelSet::new(vec![0]), 10).is_err());
        assert!(LabeledSet::new(images, LabelSet::new(vec![0, 9]), 10).is_ok());
    }

    #[test]
    fn subsample_full_set_is_permutation() {
        let images = ImageSet::from_bytes(5, 1, 1, vec![10, 11, 12, 13, 14]).unwrap();
        let labels = LabelSet::new(vec![0, 1, 2, 3, 4]);
        let (si, sl) = subsample(&images, &labels, 5, 3).unwrap();
        let mut got: Vec<u8> = sl.labels().to_vec();
        got.sort();
        assert_eq!(got, vec![0, 1, 2, 3, 4]);
        for k in 0..5 {
            assert_eq!(si.image_bytes(k)[0], 10 + sl.labels()[k]);
        }
    }

    #[test]
    fn subsample_is_seeded() {
        assert_eq!(
            subsample_indices(100, 10, 42).unwrap(),
            subsample_indices(100, 10, 42).unwrap()
        );
        assert_ne!(
            subsample_indices(100, 10, 42).unwrap(),
            subsample_indices(100, 10, 43).unwrap()
        );
        assert!(matches!(
            subsample_indices(3, 4, 0),
            Err(Error::Argument(_))
        ));
    }

    #[test]
    fn manifest_parsing() {
        let text = format!("{}  train-images-idx3-ubyte\n\n# note\n", "a".repeat(64));
        let m = parse_manifest(&text).unwrap();
        assert_eq!(
            m,
            vec![("train-images-idx3-ubyte".to_string(), "a".repeat(64))]
        );
        assert!(parse_manifest("xyz file").is_err());
    }

    #[test]
    fn dataset_names() {
        assert_eq!("mnist".parse::<DatasetId>().unwrap(), DatasetId::Mnist);
        assert_eq!(
            "fashion-mnist".parse::<DatasetId>().unwrap(),
            DatasetId::FashionMnist
        );
        assert!("cifar".parse::<DatasetId>().is_err());
    }
}
