//! MNIST ingestion (IDX binary format), stratified subsetting, and split tags.
//!
//! Files may be raw IDX or gzip-compressed; compression is detected from the
//! gzip magic bytes, not the file name. Pixels are scaled to `[0, 1]` at load
//! time (`byte / 255`).

use std::fmt;
use std::io::Read;
use std::path::{Path, PathBuf};

use flate2::read::GzDecoder;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

/// Magic number of an IDX file holding unsigned-byte images (rank 3).
const IMAGES_MAGIC: u32 = 2051;
/// Magic number of an IDX file holding unsigned-byte labels (rank 1).
const LABELS_MAGIC: u32 = 2049;
/// Image side length; every dataset consumed here is 28×28 grayscale.
pub const IMAGE_SIDE: usize = 28;
/// Pixels per image.
pub const IMAGE_PIXELS: usize = IMAGE_SIDE * IMAGE_SIDE;
/// Number of label classes.
pub const NUM_CLASSES: usize = 10;

/// Which split a dataset represents.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Test => "test",
        })
    }
}

/// The file being parsed when a format error occurred.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IdxRole {
    Images,
    Labels,
}

impl fmt::Display for IdxRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            IdxRole::Images => "images",
            IdxRole::Labels => "labels",
        })
    }
}

#[derive(Debug, Error)]
pub enum DataError {
    #[error("failed to read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{role} file {path}: bad magic {found} (expected {expected})")]
    BadMagic {
        role: IdxRole,
        path: PathBuf,
        found: u32,
        expected: u32,
    },
    #[error("{role} file {path}: truncated payload ({found} bytes, expected {expected})")]
    Truncated {
        role: IdxRole,
        path: PathBuf,
        expected: usize,
        found: usize,
    },
    #[error("image/label count mismatch: {images} images vs {labels} labels")]
    CountMismatch { images: usize, labels: usize },
    #[error("images file {path}: {rows}x{cols} images (expected {side}x{side})", side = IMAGE_SIDE)]
    BadDimensions { path: PathBuf, rows: usize, cols: usize },
    #[error("labels file {path}: label {value} at index {index} out of range 0..={max}", max = NUM_CLASSES - 1)]
    BadLabel { path: PathBuf, index: usize, value: u8 },
    #[error("subset fraction {0} out of range (0, 1]")]
    BadFraction(f64),
}

/// An in-memory image/label collection with pixels already scaled to `[0, 1]`.
///
/// Images are stored flat, row-major, `IMAGE_PIXELS` values per item.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub images: Vec<f64>,
    pub labels: Vec<u8>,
    pub split: Split,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Pixel slice of one image.
    pub fn image(&self, i: usize) -> &[f64] {
        &self.images[i * IMAGE_PIXELS..(i + 1) * IMAGE_PIXELS]
    }

    /// Number of items per class.
    pub fn class_counts(&self) -> [usize; NUM_CLASSES] {
        let mut counts = [0usize; NUM_CLASSES];
        for &l in &self.labels {
            counts[l as usize] += 1;
        }
        counts
    }
}

/// Reads a file, transparently inflating it when it starts with the gzip magic.
fn read_maybe_gz(path: &Path) -> Result<Vec<u8>, DataError> {
    let raw = std::fs::read(path).map_err(|source| DataError::Io {
        path: path.to_owned(),
        source,
    })?;
    if raw.len() >= 2 && raw[0] == 0x1f && raw[1] == 0x8b {
        let mut out = Vec::new();
        GzDecoder::new(&raw[..])
            .read_to_end(&mut out)
            .map_err(|source| DataError::Io {
                path: path.to_owned(),
                source,
            })?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

fn be_u32(bytes: &[u8], offset: usize) -> u32 {
    u32::from_be_bytes(bytes[offset..offset + 4].try_into().unwrap())
}

fn check_header(
    data: &[u8],
    role: IdxRole,
    path: &Path,
    expected_magic: u32,
    header_len: usize,
) -> Result<(), DataError> {
    if data.len() < header_len {
        return Err(DataError::Truncated {
            role,
            path: path.to_owned(),
            expected: header_len,
            found: data.len(),
        });
    }
    let magic = be_u32(data, 0);
    if magic != expected_magic {
        return Err(DataError::BadMagic {
            role,
            path: path.to_owned(),
            found: magic,
            expected: expected_magic,
        });
    }
    Ok(())
}

/// Loads an image/label file pair into a [`Dataset`].
///
/// Headers are validated (big-endian magic 2051/2049, dimension fields,
/// matching counts) and every label is range-checked.
pub fn load_idx(
    images_path: &Path,
    labels_path: &Path,
    split: Split,
) -> Result<Dataset, DataError> {
    let img_data = read_maybe_gz(images_path)?;
    check_header(&img_data, IdxRole::Images, images_path, IMAGES_MAGIC, 16)?;
    let n_images = be_u32(&img_data, 4) as usize;
    let rows = be_u32(&img_data, 8) as usize;
    let cols = be_u32(&img_data, 12) as usize;
    if rows != IMAGE_SIDE || cols != IMAGE_SIDE {
        return Err(DataError::BadDimensions {
            path: images_path.to_owned(),
            rows,
            cols,
        });
    }
    let expected = 16 + n_images * rows * cols;
    if img_data.len() < expected {
        return Err(DataError::Truncated {
            role: IdxRole::Images,
            path: images_path.to_owned(),
            expected,
            found: img_data.len(),
        });
    }

    let lbl_data = read_maybe_gz(labels_path)?;
    check_header(&lbl_data, IdxRole::Labels, labels_path, LABELS_MAGIC, 8)?;
    let n_labels = be_u32(&lbl_data, 4) as usize;
    let expected = 8 + n_labels;
    if lbl_data.len() < expected {
        return Err(DataError::Truncated {
            role: IdxRole::Labels,
            path: labels_path.to_owned(),
            expected,
            found: lbl_data.len(),
        });
    }
    if n_images != n_labels {
        return Err(DataError::CountMismatch {
            images: n_images,
            labels: n_labels,
        });
    }

    let labels = lbl_data[8..8 + n_labels].to_vec();
    for (index, &value) in labels.iter().enumerate() {
        if value as usize >= NUM_CLASSES {
            return Err(DataError::BadLabel {
                path: labels_path.to_owned(),
                index,
                value,
            });
        }
    }
    let images = img_data[16..expected_pixels_end(n_images)]
        .iter()
        .map(|&b| f64::from(b) / 255.0)
        .collect();
    Ok(Dataset {
        images,
        labels,
        split,
    })
}

fn expected_pixels_end(n_images: usize) -> usize {
    16 + n_images * IMAGE_PIXELS
}

/// Draws a per-class stratified sample.
///
/// Each class contributes `round(fraction × class_count)` items, sampled
/// without replacement. Selected indices are sorted ascending, so
/// `fraction = 1.0` returns the dataset in its original order.
pub fn stratified_subset(
    dataset: &Dataset,
    fraction: f64,
    seed: u64,
) -> Result<Dataset, DataError> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(DataError::BadFraction(fraction));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); NUM_CLASSES];
    for (i, &l) in dataset.labels.iter().enumerate() {
        by_class[l as usize].push(i);
    }
    let mut selected = Vec::new();
    for class_indices in &by_class {
        let take = (fraction * class_indices.len() as f64).round() as usize;
        for pick in rand::seq::index::sample(&mut rng, class_indices.len(), take) {
            selected.push(class_indices[pick]);
        }
    }
    selected.sort_unstable();

    let mut images = Vec::with_capacity(selected.len() * IMAGE_PIXELS);
    let mut labels = Vec::with_capacity(selected.len());
    for &i in &selected {
        images.extend_from_slice(dataset.image(i));
        labels.push(dataset.labels[i]);
    }
    Ok(Dataset {
        images,
        labels,
        split: dataset.split,
    })
}

/// Serializes images into IDX bytes (optionally gzipped by `gz`).
///
/// Fixture helper for tests and tooling; `pixels` holds `n × IMAGE_PIXELS`
/// raw bytes.
pub fn idx_image_bytes(pixels: &[u8], gz: bool) -> Vec<u8> {
    assert_eq!(pixels.len() % IMAGE_PIXELS, 0, "pixel payload not whole images");
    let n = (pixels.len() / IMAGE_PIXELS) as u32;
    let mut out = Vec::with_capacity(16 + pixels.len());
    out.extend_from_slice(&IMAGES_MAGIC.to_be_bytes());
    out.extend_from_slice(&n.to_be_bytes());
    out.extend_from_slice(&(IMAGE_SIDE as u32).to_be_bytes());
    out.extend_from_slice(&(IMAGE_SIDE as u32).to_be_bytes());
    out.extend_from_slice(pixels);
    maybe_gzip(out, gz)
}

/// Serializes labels into IDX bytes (optionally gzipped by `gz`).
pub fn idx_label_bytes(labels: &[u8], gz: bool) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&LABELS_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    maybe_gzip(out, gz)
}

fn maybe_gzip(bytes: Vec<u8>, gz: bool) -> Vec<u8> {
    if !gz {
        return bytes;
    }
    use flate2::{write::GzEncoder, Compression};
    use std::io::Write;
    let mut enc = GzEncoder::new(Vec::new(), Compression::default());
    enc.write_all(&bytes).expect("in-memory gzip");
    enc.finish().expect("in-memory gzip")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_fixture(dir: &Path, pixels: &[u8], labels: &[u8], gz: bool) -> (PathBuf, PathBuf) {
        let img = dir.join(if gz { "imgs.gz" } else { "imgs" });
        let lbl = dir.join(if gz { "lbls.gz" } else { "lbls" });
        std::fs::write(&img, idx_image_bytes(pixels, gz)).unwrap();
        std::fs::write(&lbl, idx_label_bytes(labels, gz)).unwrap();
        (img, lbl)
    }

    #[test]
    fn two_image_fixture_round_trips_exact_pixels() {
        let dir = tempfile::tempdir().unwrap();
        let mut pixels = vec![0u8; 2 * IMAGE_PIXELS];
        pixels[0] = 255; // image 0, corner on
        pixels[IMAGE_PIXELS + 5] = 255; // image 1, pixel 5 on
        let (img, lbl) = write_fixture(dir.path(), &pixels, &[3, 7], false);
        let ds = load_idx(&img, &lbl, Split::Train).unwrap();
        assert_eq!(ds.len(), 2);
        assert_eq!(ds.images[0], 1.0);
        assert_eq!(ds.images[1], 0.0);
        assert_eq!(ds.image(1)[5], 1.0);
        assert_eq!(ds.labels, vec![3, 7]);
    }

    #[test]
    fn gzipped_fixture_loads_identically() {
        let dir = tempfile::tempdir().unwrap();
        let pixels: Vec<u8> = (0..IMAGE_PIXELS).map(|i| (i % 251) as u8).collect();
        let (img, lbl) = write_fixture(dir.path(), &pixels, &[9], true);
        let ds = load_idx(&img, &lbl, Split::Test).unwrap();
        assert_eq!(ds.len(), 1);
        for (i, &b) in pixels.iter().enumerate() {
            assert_eq!(ds.images[i], f64::from(b) / 255.0);
        }
    }

    #[test]
    fn wrong_images_magic_names_the_images_file() {
        let dir = tempfile::tempdir().unwrap();
        let pixels = vec![0u8; IMAGE_PIXELS];
        let (img, lbl) = write_fixture(dir.path(), &pixels, &[0], false);
        // Corrupt the images magic.
        let mut bytes = std::fs::read(&img).unwrap();
        bytes[3] = 0xff;
        std::fs::write(&img, bytes).unwrap();
        match load_idx(&img, &lbl, Split::Train) {
            Err(DataError::BadMagic { role, expected, .. }) => {
                assert_eq!(role, IdxRole::Images);
                assert_eq!(expected, 2051);
            }
            other => panic!("expected BadMagic, got {other:?}"),
        }
    }

    #[test]
    fn wrong_labels_magic_names_the_labels_file() {
        let dir = tempfile::tempdir().unwrap();
        let pixels = vec![0u8; IMAGE_PIXELS];
        let (img, lbl) = write_fixture(dir.path(), &pixels, &[0], false);
        let mut bytes = std::fs::read(&lbl).unwrap();
        bytes[3] = 0x42;
        std::fs::write(&lbl, bytes).unwrap();
        match load_idx(&img, &lbl, Split::Train) {
            Err(DataError::BadMagic { role, .. }) => assert_eq!(role, IdxRole::Labels),
            other => panic!("expected BadMagic, got {other:?}"),
        }
    }

    #[test]
    fn truncated_images_payload_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let pixels = vec![7u8; 2 * IMAGE_PIXELS];
        let (img, lbl) = write_fixture(dir.path(), &pixels, &[0, 1], false);
        let bytes = std::fs::read(&img).unwrap();
        std::fs::write(&img, &bytes[..bytes.len() - 10]).unwrap();
        match load_idx(&img, &lbl, Split::Train) {
            Err(DataError::Truncated { role, .. }) => assert_eq!(role, IdxRole::Images),
            other => panic!("expected Truncated, got {other:?}"),
        }
    }

    #[test]
    fn count_mismatch_between_files_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let pixels = vec![0u8; 2 * IMAGE_PIXELS];
        let (img, lbl) = write_fixture(dir.path(), &pixels, &[0, 1, 2], false);
        match load_idx(&img, &lbl, Split::Train) {
            Err(DataError::CountMismatch { images, labels }) => {
                assert_eq!((images, labels), (2, 3));
            }
            other => panic!("expected CountMismatch, got {other:?}"),
        }
    }

    #[test]
    fn out_of_range_label_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let pixels = vec![0u8; IMAGE_PIXELS];
        let (img, lbl) = write_fixture(dir.path(), &pixels, &[10], false);
        match load_idx(&img, &lbl, Split::Train) {
            Err(DataError::BadLabel { index, value, .. }) => assert_eq!((index, value), (0, 10)),
            other => panic!("expected BadLabel, got {other:?}"),
        }
    }

    fn synthetic_dataset(per_class: &[usize; NUM_CLASSES]) -> Dataset {
        let total: usize = per_class.iter().sum();
        let mut labels = Vec::with_capacity(total);
        for (class, &count) in per_class.iter().enumerate() {
            labels.extend(std::iter::repeat(class as u8).take(count));
        }
        let images = (0..total * IMAGE_PIXELS)
            .map(|i| (i % 97) as f64 / 96.0)
            .collect();
        Dataset {
            images,
            labels,
            split: Split::Train,
        }
    }

    #[test]
    fn subset_counts_are_rounded_per_class() {
        let ds = synthetic_dataset(&[40, 35, 30, 25, 20, 15, 10, 8, 6, 4]);
        let sub = stratified_subset(&ds, 0.1, 1).unwrap();
        let counts = sub.class_counts();
        assert_eq!(counts, [4, 4, 3, 3, 2, 2, 1, 1, 1, 0]);
    }

    #[test]
    fn subset_full_fraction_is_identity() {
        let ds = synthetic_dataset(&[5, 5, 5, 5, 5, 5, 5, 5, 5, 5]);
        let sub = stratified_subset(&ds, 1.0, 99).unwrap();
        assert_eq!(sub.labels, ds.labels);
        assert_eq!(sub.images, ds.images);
    }

    #[test]
    fn subset_is_deterministic_and_a_true_subset() {
        let ds = synthetic_dataset(&[12, 9, 14, 11, 13, 10, 8, 15, 7, 9]);
        let a = stratified_subset(&ds, 0.5, 42).unwrap();
        let b = stratified_subset(&ds, 0.5, 42).unwrap();
        assert_eq!(a.labels, b.labels);
        assert_eq!(a.images, b.images);
        let c = stratified_subset(&ds, 0.5, 43).unwrap();
        assert_ne!(a.images, c.images, "different seed should pick differently");
        // Every selected (image, label) pair occurs in the parent.
        for i in 0..a.len() {
            let found = (0..ds.len())
                .any(|j| ds.labels[j] == a.labels[i] && ds.image(j) == a.image(i));
            assert!(found, "subset item {i} missing from parent");
        }
    }

    #[test]
    fn bad_fractions_rejected() {
        let ds = synthetic_dataset(&[2, 2, 2, 2, 2, 2, 2, 2, 2, 2]);
        assert!(matches!(
            stratified_subset(&ds, 0.0, 1),
            Err(DataError::BadFraction(_))
        ));
        assert!(matches!(
            stratified_subset(&ds, 1.2, 1),
            Err(DataError::BadFraction(_))
        ));
    }
}
