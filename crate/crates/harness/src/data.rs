//! Datasets: MNIST-format IDX files, the 2-D Gaussian mixture and one-hot
//! tabular draws.

use std::path::Path;

use unigen_core::{RngStream, Tensor};

use crate::config::{MixtureSpec, MnistSpec};
use crate::error::DataError;

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

/// Row-major examples plus optional class labels.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub x: Tensor,
    pub labels: Option<Vec<u8>>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.x.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.x.row_len()
    }

    pub fn subset(&self, indices: &[usize]) -> Result<Self, DataError> {
        let x = self
            .x
            .gather_rows(indices)
            .map_err(|e| DataError::Invalid(e.to_string()))?;
        let labels = self
            .labels
            .as_ref()
            .map(|l| indices.iter().map(|&i| l[i]).collect());
        Ok(Self { x, labels })
    }
}

fn read(path: &Path) -> Result<Vec<u8>, DataError> {
    std::fs::read(path).map_err(|source| DataError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn be_u32(bytes: &[u8], at: usize) -> u32 {
    u32::from_be_bytes([bytes[at], bytes[at + 1], bytes[at + 2], bytes[at + 3]])
}

fn header(path: &Path, bytes: &[u8], magic: u32, dims: usize) -> Result<Vec<usize>, DataError> {
    let head = 4 + 4 * dims;
    if bytes.len() < head {
        return Err(DataError::Truncated {
            path: path.to_path_buf(),
            expected: head,
            found: bytes.len(),
        });
    }
    let found = be_u32(bytes, 0);
    if found != magic {
        return Err(DataError::BadMagic {
            path: path.to_path_buf(),
            expected: magic,
            found,
        });
    }
    let sizes: Vec<usize> = (0..dims)
        .map(|d| be_u32(bytes, 4 + 4 * d) as usize)
        .collect();
    let expected = head + sizes.iter().product::<usize>();
    if bytes.len() < expected {
        return Err(DataError::Truncated {
            path: path.to_path_buf(),
            expected,
            found: bytes.len(),
        });
    }
    Ok(sizes)
}

/// Images as `(count, rows, cols, pixels)`.
pub fn read_idx_images(path: &Path) -> Result<(usize, usize, usize, Vec<u8>), DataError> {
    let bytes = read(path)?;
    let s = header(path, &bytes, IDX_IMAGES_MAGIC, 3)?;
    let n = s[0] * s[1] * s[2];
    Ok((s[0], s[1], s[2], bytes[16..16 + n].to_vec()))
}

pub fn read_idx_labels(path: &Path) -> Result<Vec<u8>, DataError> {
    let bytes = read(path)?;
    let s = header(path, &bytes, IDX_LABELS_MAGIC, 1)?;
    Ok(bytes[8..8 + s[0]].to_vec())
}

/// Number of examples kept by `fraction` of `n`: rounded, at least one.
pub fn subset_size(n: usize, fraction: f64) -> usize {
    ((n as f64 * fraction).round() as usize).clamp(1, n.max(1))
}

/// Loads an image/label pair, scales pixels to [0, 1], optionally
/// binarizes (`pixel > threshold`), and keeps a seeded subset drawn
/// without replacement. Nothing is returned unless both files parse.
pub fn load_mnist_idx(
    images: &Path,
    labels: &Path,
    subset_fraction: f64,
    threshold: Option<f64>,
    rng: &mut RngStream,
) -> Result<Dataset, DataError> {
    if !(subset_fraction > 0.0 && subset_fraction <= 1.0) {
        return Err(DataError::Invalid(format!(
            "subset fraction {subset_fraction} outside (0, 1]"
        )));
    }
    let (n, rows, cols, pixels) = read_idx_images(images)?;
    let lab = read_idx_labels(labels)?;
    if lab.len() != n {
        return Err(DataError::CountMismatch {
            images: n,
            labels: lab.len(),
        });
    }
    let scale = |p: u8| {
        let v = f64::from(p) / 255.0;
        match threshold {
            Some(t) => f64::from(u8::from(v > t)),
            None => v,
        }
    };
    let data: Vec<f64> = pixels.iter().map(|&p| scale(p)).collect();
    let full = Dataset {
        x: Tensor::new(vec![n, rows * cols], data)
            .map_err(|e| DataError::Invalid(e.to_string()))?,
        labels: Some(lab),
    };
    if subset_fraction == 1.0 {
        return Ok(full);
    }
    let keep = rng.sample_without_replacement(n, subset_size(n, subset_fraction));
    full.subset(&keep)
}

/// Train split (subset per spec) and, when configured, the full test split.
pub fn load_mnist(
    spec: &MnistSpec,
    rng: &mut RngStream,
) -> Result<(Dataset, Option<Dataset>), DataError> {
    let train = load_mnist_idx(
        &spec.images,
        &spec.labels,
        spec.subset_fraction,
        spec.binarize_threshold,
        rng,
    )?;
    let test = match (&spec.test_images, &spec.test_labels) {
        (Some(i), Some(l)) => Some(load_mnist_idx(i, l, 1.0, spec.binarize_threshold, rng)?),
        _ => None,
    };
    Ok((train, test))
}

/// `n` draws: component by weight, then an isotropic Gaussian around its
/// mean. Rows come back with the component index as label.
pub fn sample_mixture_2d(spec: &MixtureSpec, n: usize, rng: &mut RngStream) -> Dataset {
    let mut data = Vec::with_capacity(2 * n);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let c = rng.categorical(&spec.weights);
        let [mx, my] = spec.means[c];
        let s = spec.stds[c];
        data.push(mx + s * rng.normal());
        data.push(my + s * rng.normal());
        labels.push(c as u8);
    }
    Dataset {
        x: Tensor::new(vec![n, 2], data).expect("n x 2"),
        labels: Some(labels),
    }
}

/// One-hot rows drawn from `probs`.
pub fn sample_one_hot(probs: &[f64], n: usize, rng: &mut RngStream) -> Dataset {
    let k = probs.len();
    let mut data = vec![0.0; n * k];
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let c = rng.categorical(probs);
        data[i * k + c] = 1.0;
        labels.push(c.min(255) as u8);
    }
    Dataset {
        x: Tensor::new(vec![n, k], data).expect("n x k"),
        labels: Some(labels),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn write_idx(
        dir: &Path,
        n: usize,
        rows: usize,
        cols: usize,
    ) -> (std::path::PathBuf, std::path::PathBuf) {
        let mut img = Vec::new();
        img.extend(IDX_IMAGES_MAGIC.to_be_bytes());
        for d in [n, rows, cols] {
            img.extend((d as u32).to_be_bytes());
        }
        img.extend((0..n * rows * cols).map(|i| (i * 37 % 256) as u8));
        let mut lab = Vec::new();
        lab.extend(IDX_LABELS_MAGIC.to_be_bytes());
        lab.extend((n as u32).to_be_bytes());
        lab.extend((0..n).map(|i| (i % 10) as u8));
        let (ip, lp) = (dir.join("img"), dir.join("lab"));
        std::fs::write(&ip, img).unwrap();
        std::fs::write(&lp, lab).unwrap();
        (ip, lp)
    }

    #[test]
    fn reads_synthetic_idx() {
        let dir = tempfile::tempdir().unwrap();
        let (ip, lp) = write_idx(dir.path(), 10, 3, 4);
        let mut rng = RngStream::new(0, "data");
        let d = load_mnist_idx(&ip, &lp, 1.0, None, &mut rng).unwrap();
        assert_eq!(d.x.shape(), &[10, 12]);
        assert_eq!(d.x.data()[1], 37.0 / 255.0);
        assert_eq!(d.labels.as_ref().unwrap()[3], 3);
        let b = load_mnist_idx(&ip, &lp, 1.0, Some(0.5), &mut rng).unwrap();
        assert!(b.x.data().iter().all(|&v| v == 0.0 || v == 1.0));
        assert_eq!(b.x.data()[4], 1.0); // 148 / 255 > 0.5
    }

    #[test]
    fn subset_sizes() {
        assert_eq!(subset_size(60_000, 0.01), 600);
        assert_eq!(subset_size(8000, 0.075), 600);
        assert_eq!(subset_size(10, 0.01), 1);
    }
}
