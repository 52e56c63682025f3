//! Checks against the real MNIST files vendored under data/mnist: sizes,
//! class distributions, pixel scaling, and the stratified subset used by
//! every experiment.

use std::path::PathBuf;

use evonet::dataio::{load_idx, stratified_subset, Split, IMAGE_PIXELS};

fn mnist_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/mnist")
}

fn load_split(split: Split) -> evonet::dataio::Dataset {
    let dir = mnist_dir();
    let (images, labels) = match split {
        Split::Train => ("train-images-idx3-ubyte.gz", "train-labels-idx1-ubyte.gz"),
        Split::Test => ("t10k-images-idx3-ubyte.gz", "t10k-labels-idx1-ubyte.gz"),
    };
    load_idx(&dir.join(images), &dir.join(labels), split).expect("vendored MNIST loads")
}

/// Canonical per-class counts of the two MNIST splits: any deviation means
/// the files or the parser are wrong.
const TRAIN_COUNTS: [usize; 10] = [5923, 6742, 5958, 6131, 5842, 5421, 5918, 6265, 5851, 5949];
const TEST_COUNTS: [usize; 10] = [980, 1135, 1032, 1010, 982, 892, 958, 1028, 974, 1009];

#[test]
fn train_split_has_canonical_shape_and_distribution() {
    let train = load_split(Split::Train);
    assert_eq!(train.len(), 60_000);
    assert_eq!(train.images.len(), 60_000 * IMAGE_PIXELS);
    assert_eq!(train.class_counts(), TRAIN_COUNTS);
}

#[test]
fn test_split_has_canonical_shape_and_distribution() {
    let test = load_split(Split::Test);
    assert_eq!(test.len(), 10_000);
    assert_eq!(test.images.len(), 10_000 * IMAGE_PIXELS);
    assert_eq!(test.class_counts(), TEST_COUNTS);
}

#[test]
fn pixels_are_scaled_to_unit_range() {
    let test = load_split(Split::Test);
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for &v in &test.images {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    assert_eq!(lo, 0.0, "background pixels map to 0");
    assert_eq!(hi, 1.0, "full-intensity pixels map to 1");
}

#[test]
fn tenth_subset_is_stratified_and_deterministic() {
    let train = load_split(Split::Train);
    let subset = stratified_subset(&train, 0.1, 99).unwrap();

    let expected: [usize; 10] = TRAIN_COUNTS.map(|n| (n as f64 * 0.1).round() as usize);
    assert_eq!(subset.class_counts(), expected);
    assert_eq!(subset.len(), expected.iter().sum::<usize>());

    // Same seed, same subset; different seed, different picks.
    let again = stratified_subset(&train, 0.1, 99).unwrap();
    assert_eq!(subset.images, again.images);
    assert_eq!(subset.labels, again.labels);
    let other = stratified_subset(&train, 0.1, 100).unwrap();
    assert_ne!(subset.images, other.images);
}
