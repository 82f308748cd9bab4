//! Labelled datasets: synthetic generators, file ingestion, noise injection
//! and stratified splitting.

pub mod csv;
pub mod idx;
mod noise;

pub use noise::{cifar10_asymmetric_map, inject_noise, NoiseKind, NoiseSpec};

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::numerics::{Matrix, SeededRng};

/// Upper bound on the class count of any dataset.
pub const MAX_CLASSES: usize = 1 << 16;

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    pub features: Matrix,
    pub clean_labels: Vec<usize>,
    pub noisy_labels: Option<Vec<usize>>,
    pub num_classes: usize,
}

impl LabeledDataset {
    pub fn new(
        features: Matrix,
        clean_labels: Vec<usize>,
        noisy_labels: Option<Vec<usize>>,
        num_classes: usize,
    ) -> Result<Self> {
        let ds = Self {
            features,
            clean_labels,
            noisy_labels,
            num_classes,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_classes == 0 {
            return Err(Error::invalid("dataset needs at least one class"));
        }
        if self.num_classes > MAX_CLASSES {
            return Err(Error::invalid(format!(
                "{} classes exceeds the limit of {MAX_CLASSES}",
                self.num_classes
            )));
        }
        if self.features.rows() != self.clean_labels.len() {
            return Err(Error::shape(
                "LabeledDataset",
                format!("{} labels", self.features.rows()),
                self.clean_labels.len(),
            ));
        }
        let check = |labels: &[usize], what: &str| -> Result<()> {
            if let Some(bad) = labels.iter().find(|&&l| l >= self.num_classes) {
                return Err(Error::invalid(format!(
                    "{what} label {bad} out of range for {} classes",
                    self.num_classes
                )));
            }
            Ok(())
        };
        check(&self.clean_labels, "clean")?;
        if let Some(noisy) = &self.noisy_labels {
            if noisy.len() != self.clean_labels.len() {
                return Err(Error::shape(
                    "LabeledDataset noisy labels",
                    self.clean_labels.len(),
                    noisy.len(),
                ));
            }
            check(noisy, "noisy")?;
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.clean_labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clean_labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    /// The labels a learner sees: noisy when injected, clean otherwise.
    pub fn observed_labels(&self) -> &[usize] {
        self.noisy_labels.as_deref().unwrap_or(&self.clean_labels)
    }

    /// `true` where the observed label equals the clean one.
    pub fn clean_mask(&self) -> Vec<bool> {
        self.observed_labels()
            .iter()
            .zip(&self.clean_labels)
            .map(|(a, b)| a == b)
            .collect()
    }

    pub fn subset(&self, indices: &[usize]) -> LabeledDataset {
        LabeledDataset {
            features: self.features.select_rows(indices),
            clean_labels: indices.iter().map(|&i| self.clean_labels[i]).collect(),
            noisy_labels: self
                .noisy_labels
                .as_ref()
                .map(|n| indices.iter().map(|&i| n[i]).collect()),
            num_classes: self.num_classes,
        }
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes];
        for &l in &self.clean_labels {
            counts[l] += 1;
        }
        counts
    }
}

/// Cluster centers on a circle in the first two coordinates, with adjacent
/// centers exactly `separation` apart.
pub fn blob_centers(k: usize, d: usize, separation: f64) -> Vec<Vec<f64>> {
    let radius = separation / (2.0 * (PI / k as f64).sin());
    (0..k)
        .map(|c| {
            let angle = 2.0 * PI * c as f64 / k as f64;
            let mut center = vec![0.0; d];
            center[0] = radius * angle.cos();
            center[1] = radius * angle.sin();
            center
        })
        .collect()
}

/// `k` isotropic Gaussian clusters of `n_per_class` points each, class-major order.
pub fn gen_blobs(
    k: usize,
    n_per_class: usize,
    d: usize,
    separation: f64,
    spread: f64,
    seed: u64,
) -> Result<LabeledDataset> {
    if k < 2 {
        return Err(Error::invalid(format!("blobs need at least 2 classes, got {k}")));
    }
    if d < 2 {
        return Err(Error::invalid(format!("blobs need dimension >= 2, got {d}")));
    }
    if n_per_class == 0 {
        return Err(Error::invalid("n_per_class must be >= 1"));
    }
    if !(spread > 0.0 && spread.is_finite()) || !(separation >= 0.0 && separation.is_finite()) {
        return Err(Error::invalid(format!(
            "need spread > 0 and separation >= 0, got spread {spread}, separation {separation}"
        )));
    }
    let centers = blob_centers(k, d, separation);
    let mut rng = SeededRng::new(seed);
    let n = k * n_per_class;
    let mut data = Vec::with_capacity(n * d);
    let mut labels = Vec::with_capacity(n);
    for (c, center) in centers.iter().enumerate() {
        for _ in 0..n_per_class {
            data.extend(center.iter().map(|&m| m + spread * rng.gaussian()));
            labels.push(c);
        }
    }
    LabeledDataset::new(Matrix::from_vec(n, d, data)?, labels, None, k)
}

/// Concentric 2-D rings; class `c` has radius `c + 1`.
pub fn gen_rings(k: usize, n_per_class: usize, noise_std: f64, seed: u64) -> Result<LabeledDataset> {
    if k == 0 || n_per_class == 0 {
        return Err(Error::invalid("rings need k >= 1 and n_per_class >= 1"));
    }
    if !(noise_std >= 0.0 && noise_std.is_finite()) {
        return Err(Error::invalid(format!("noise_std must be >= 0, got {noise_std}")));
    }
    let mut rng = SeededRng::new(seed);
    let n = k * n_per_class;
    let mut data = Vec::with_capacity(2 * n);
    let mut labels = Vec::with_capacity(n);
    for c in 0..k {
        let radius = ring_radius(c);
        for _ in 0..n_per_class {
            let angle = rng.uniform_range(0.0, 2.0 * PI);
            let x = radius * angle.cos() + noise_std * rng.gaussian();
            let y = radius * angle.sin() + noise_std * rng.gaussian();
            data.push(x);
            data.push(y);
            labels.push(c);
        }
    }
    LabeledDataset::new(Matrix::from_vec(n, 2, data)?, labels, None, k)
}

pub fn ring_radius(class: usize) -> f64 {
    (class + 1) as f64
}

/// Stratified split by clean label. Each class contributes
/// `round(test_fraction * n_c)` test samples, at least one. Both halves keep
/// the original sample order.
pub fn split(ds: &LabeledDataset, test_fraction: f64, seed: u64) -> Result<(LabeledDataset, LabeledDataset)> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::invalid(format!(
            "test_fraction must lie in (0, 1), got {test_fraction}"
        )));
    }
    let mut rng = SeededRng::new(seed);
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); ds.num_classes];
    for (i, &l) in ds.clean_labels.iter().enumerate() {
        by_class[l].push(i);
    }
    let mut is_test = vec![false; ds.len()];
    for members in &mut by_class {
        if members.is_empty() {
            continue;
        }
        rng.shuffle_slice(members);
        let want = (test_fraction * members.len() as f64).round() as usize;
        let take = want.max(1).min(members.len());
        for &i in &members[..take] {
            is_test[i] = true;
        }
    }
    let (test, train): (Vec<usize>, Vec<usize>) = (0..ds.len()).partition(|&i| is_test[i]);
    Ok((ds.subset(&train), ds.subset(&test)))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn nearest_centroid_accuracy(ds: &LabeledDataset) -> f64 {
        let d = ds.dim();
        let mut sums = vec![vec![0.0; d]; ds.num_classes];
        for (row, &l) in ds.features.row_iter().zip(&ds.clean_labels) {
            for (s, v) in sums[l].iter_mut().zip(row) {
                *s += v;
            }
        }
        let counts = ds.class_counts();
        for (s, &c) in sums.iter_mut().zip(&counts) {
            s.iter_mut().for_each(|v| *v /= c as f64);
        }
        let correct = ds
            .features
            .row_iter()
            .zip(&ds.clean_labels)
            .filter(|(row, &l)| {
                let dist = |c: &Vec<f64>| c.iter().zip(*row).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
                (0..ds.num_classes).all(|c| c == l || dist(&sums[l]) < dist(&sums[c]))
            })
            .count();
        correct as f64 / ds.len() as f64
    }

    #[test]
    fn blobs_small_and_deterministic() {
        let ds = gen_blobs(2, 1, 2, 10.0, 0.1, 3).unwrap();
        assert_eq!(ds.len(), 2);
        assert_eq!(ds.clean_labels, vec![0, 1]);
        assert!(ds.noisy_labels.is_none());
        assert_eq!(ds, gen_blobs(2, 1, 2, 10.0, 0.1, 3).unwrap());
    }

    #[test]
    fn blob_centers_respect_separation() {
        for k in 2..8 {
            let c = blob_centers(k, 3, 5.0);
            for i in 0..k {
                for j in i + 1..k {
                    let dist: f64 = c[i].iter().zip(&c[j]).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
                    assert!(dist >= 5.0 - 1e-9);
                }
            }
        }
    }

    #[test]
    fn well_separated_blobs_are_centroid_separable() {
        let ds = gen_blobs(4, 250, 3, 100.0, 1.0, 17).unwrap();
        assert_eq!(ds.len(), 1000);
        assert_eq!(nearest_centroid_accuracy(&ds), 1.0);
    }

    #[test]
    fn blobs_reject_bad_dims() {
        assert!(gen_blobs(1, 5, 2, 1.0, 1.0, 0).is_err());
        assert!(gen_blobs(2, 5, 1, 1.0, 1.0, 0).is_err());
        assert!(gen_blobs(2, 0, 2, 1.0, 1.0, 0).is_err());
        assert!(gen_blobs(2, 5, 2, 1.0, 0.0, 0).is_err());
    }

    #[test]
    fn rings_cases() {
        let one = gen_rings(1, 10, 0.3, 1).unwrap();
        assert!(one.clean_labels.iter().all(|&l| l == 0));
        let ds = gen_rings(4, 25, 0.0, 2).unwrap();
        for (row, &l) in ds.features.row_iter().zip(&ds.clean_labels) {
            let r = (row[0] * row[0] + row[1] * row[1]).sqrt();
            assert!((r - ring_radius(l)).abs() < 1e-12);
        }
        assert!((0..3).all(|c| ring_radius(c) < ring_radius(c + 1)));
    }

    #[test]
    fn split_counts() {
        let ds = gen_blobs(3, 40, 2, 4.0, 1.0, 5).unwrap();
        let (train, test) = split(&ds, 0.25, 9).unwrap();
        assert_eq!(train.len() + test.len(), ds.len());
        for (c, &n) in ds.class_counts().iter().enumerate() {
            let got = test.class_counts()[c] as f64;
            assert!((got - 0.25 * n as f64).abs() <= 1.0);
        }
        // every sample ends up exactly once
        let mut rows: Vec<Vec<u64>> = train
            .features
            .row_iter()
            .chain(test.features.row_iter())
            .map(|r| r.iter().map(|v| v.to_bits()).collect())
            .collect();
        rows.sort();
        let mut orig: Vec<Vec<u64>> = ds
            .features
            .row_iter()
            .map(|r| r.iter().map(|v| v.to_bits()).collect())
            .collect();
        orig.sort();
        assert_eq!(rows, orig);
    }

    #[test]
    fn split_min_one_per_class() {
        let ds = gen_blobs(3, 4, 2, 4.0, 1.0, 5).unwrap();
        let (_, test) = split(&ds, 0.01, 1).unwrap();
        assert_eq!(test.class_counts(), vec![1, 1, 1]);
        assert!(split(&ds, 0.0, 1).is_err());
        assert!(split(&ds, 1.0, 1).is_err());
    }

    #[test]
    fn dataset_validation() {
        let f = Matrix::zeros(2, 2);
        assert!(LabeledDataset::new(f.clone(), vec![0, 2], None, 2).is_err());
        assert!(LabeledDataset::new(f.clone(), vec![0], None, 2).is_err());
        assert!(LabeledDataset::new(f.clone(), vec![0, 1], Some(vec![1]), 2).is_err());
        assert!(LabeledDataset::new(f, vec![0, 1], Some(vec![1, 0]), 2).is_ok());
    }
}
