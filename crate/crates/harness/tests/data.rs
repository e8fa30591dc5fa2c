use std::path::{Path, PathBuf};

use unigen_core::RngStream;
use unigen_harness::config::MixtureSpec;
use unigen_harness::data::{
    load_mnist_idx, read_idx_images, sample_mixture_2d, IDX_IMAGES_MAGIC, IDX_LABELS_MAGIC,
};
use unigen_harness::DataError;

fn mnist_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/mnist")
}

fn idx_bytes(magic: u32, dims: &[usize], payload: &[u8]) -> Vec<u8> {
    let mut b = magic.to_be_bytes().to_vec();
    for &d in dims {
        b.extend((d as u32).to_be_bytes());
    }
    b.extend_from_slice(payload);
    b
}

fn write(dir: &Path, name: &str, bytes: &[u8]) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, bytes).unwrap();
    p
}

#[test]
fn rejects_wrong_magic() {
    let dir = tempfile::tempdir().unwrap();
    let img = write(
        dir.path(),
        "img",
        &idx_bytes(IDX_LABELS_MAGIC, &[1, 2, 2], &[0; 4]),
    );
    let lab = write(dir.path(), "lab", &idx_bytes(IDX_LABELS_MAGIC, &[1], &[0]));
    let mut rng = RngStream::new(0, "data");
    match load_mnist_idx(&img, &lab, 1.0, None, &mut rng) {
        Err(DataError::BadMagic {
            expected, found, ..
        }) => {
            assert_eq!(expected, IDX_IMAGES_MAGIC);
            assert_eq!(found, IDX_LABELS_MAGIC);
        }
        other => panic!("expected bad magic, got {other:?}"),
    }
}

#[test]
fn rejects_truncated_payload_and_header() {
    let dir = tempfile::tempdir().unwrap();
    let img = write(
        dir.path(),
        "img",
        &idx_bytes(IDX_IMAGES_MAGIC, &[3, 2, 2], &[0; 11]),
    );
    match read_idx_images(&img) {
        Err(DataError::Truncated {
            expected, found, ..
        }) => {
            assert_eq!(expected, 16 + 12);
            assert_eq!(found, 16 + 11);
        }
        other => panic!("expected truncation, got {other:?}"),
    }
    let short = write(dir.path(), "short", &IDX_IMAGES_MAGIC.to_be_bytes()[..3]);
    assert!(matches!(
        read_idx_images(&short),
        Err(DataError::Truncated { .. })
    ));
}

#[test]
fn rejects_count_mismatch() {
    let dir = tempfile::tempdir().unwrap();
    let img = write(
        dir.path(),
        "img",
        &idx_bytes(IDX_IMAGES_MAGIC, &[3, 2, 2], &[7; 12]),
    );
    let lab = write(
        dir.path(),
        "lab",
        &idx_bytes(IDX_LABELS_MAGIC, &[2], &[0, 1]),
    );
    let mut rng = RngStream::new(0, "data");
    assert!(matches!(
        load_mnist_idx(&img, &lab, 1.0, None, &mut rng),
        Err(DataError::CountMismatch {
            images: 3,
            labels: 2
        })
    ));
}

#[test]
fn missing_file_is_io_error() {
    let mut rng = RngStream::new(0, "data");
    let r = load_mnist_idx(
        Path::new("/nonexistent/img"),
        Path::new("/nonexistent/lab"),
        1.0,
        None,
        &mut rng,
    );
    assert!(matches!(r, Err(DataError::Io { .. })));
}

#[test]
fn bundled_digits_load_binarized() {
    let d = mnist_dir();
    let mut rng = RngStream::new(0, "data");
    let train = load_mnist_idx(
        &d.join("train-images-idx3-ubyte"),
        &d.join("train-labels-idx1-ubyte"),
        1.0,
        Some(0.5),
        &mut rng,
    )
    .unwrap();
    assert_eq!(train.x.shape(), &[8000, 784]);
    assert!(train.x.data().iter().all(|&v| v == 0.0 || v == 1.0));
    let labels = train.labels.as_ref().unwrap();
    assert!(labels.iter().all(|&l| l < 10));
    let on = train.x.data().iter().sum::<f64>() / train.x.numel() as f64;
    assert!(on > 0.05 && on < 0.3, "fraction of lit pixels {on}");
}

#[test]
fn subset_is_seeded_and_sized() {
    let d = mnist_dir();
    let load = |seed: u64| {
        let mut rng = RngStream::new(seed, "data");
        load_mnist_idx(
            &d.join("train-images-idx3-ubyte"),
            &d.join("train-labels-idx1-ubyte"),
            0.075,
            Some(0.5),
            &mut rng,
        )
        .unwrap()
    };
    let a = load(3);
    assert_eq!(a.len(), 600);
    assert_eq!(a, load(3));
    assert_ne!(a.labels, load(4).labels);
}

#[test]
fn mixture_collapses_onto_means_as_std_vanishes() {
    let spec = MixtureSpec {
        means: vec![[-2.0, 0.0], [2.0, 1.0]],
        weights: vec![0.5, 0.5],
        stds: vec![1e-12, 1e-12],
    };
    let mut rng = RngStream::new(1, "data");
    let d = sample_mixture_2d(&spec, 500, &mut rng);
    for (i, &c) in d.labels.as_ref().unwrap().iter().enumerate() {
        let m = spec.means[c as usize];
        let row = d.x.row(i);
        assert!((row[0] - m[0]).abs() < 1e-9 && (row[1] - m[1]).abs() < 1e-9);
    }
}

#[test]
fn mixture_component_frequencies_match_weights() {
    let spec = MixtureSpec {
        means: vec![[-2.0, 0.0], [2.0, 0.0]],
        weights: vec![0.9, 0.1],
        stds: vec![0.3, 0.3],
    };
    let n = 20_000;
    let mut rng = RngStream::new(2, "data");
    let d = sample_mixture_2d(&spec, n, &mut rng);
    let small = d.labels.unwrap().iter().filter(|&&c| c == 1).count() as f64;
    let sd = (n as f64 * 0.1 * 0.9).sqrt();
    assert!(
        (small - 0.1 * n as f64).abs() < 3.0 * sd,
        "{small} of {n} draws from the 0.1 component"
    );
}

#[test]
fn mixture_sampling_is_deterministic_per_seed() {
    let spec = MixtureSpec::asymmetric_two_mode();
    let draw = |s| sample_mixture_2d(&spec, 100, &mut RngStream::new(s, "data"));
    assert_eq!(draw(5), draw(5));
    assert_ne!(draw(5).x, draw(6).x);
}
