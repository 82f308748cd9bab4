use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::LabeledDataset;
use crate::error::{Error, Result};
use crate::numerics::SeededRng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NoiseKind {
    /// Flip to a uniformly random different class.
    Symmetric,
    /// Flip mapped classes according to an explicit class map.
    AsymmetricMap,
    /// Flip every class `c` to `(c + 1) mod K`.
    AsymmetricCircular,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSpec {
    pub kind: NoiseKind,
    pub rate: f64,
    /// `[from, to]` pairs, only for [`NoiseKind::AsymmetricMap`].
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mapping: Option<Vec<(usize, usize)>>,
    #[serde(default)]
    pub seed: u64,
}

impl NoiseSpec {
    pub fn symmetric(rate: f64, seed: u64) -> Self {
        Self {
            kind: NoiseKind::Symmetric,
            rate,
            mapping: None,
            seed,
        }
    }

    pub fn circular(rate: f64, seed: u64) -> Self {
        Self {
            kind: NoiseKind::AsymmetricCircular,
            rate,
            mapping: None,
            seed,
        }
    }

    pub fn with_map(rate: f64, mapping: Vec<(usize, usize)>, seed: u64) -> Self {
        Self {
            kind: NoiseKind::AsymmetricMap,
            rate,
            mapping: Some(mapping),
            seed,
        }
    }

    /// Checks the spec against a class count and returns the effective
    /// class map for the asymmetric kinds.
    fn class_map(&self, k: usize) -> Result<BTreeMap<usize, usize>> {
        if !(self.rate >= 0.0 && self.rate < 1.0) {
            return Err(Error::invalid(format!(
                "noise rate must lie in [0, 1), got {}",
                self.rate
            )));
        }
        if k < 2 {
            return Err(Error::invalid("noise injection needs at least 2 classes"));
        }
        match self.kind {
            NoiseKind::Symmetric => {
                if self.mapping.is_some() {
                    return Err(Error::invalid("symmetric noise takes no mapping"));
                }
                Ok(BTreeMap::new())
            }
            NoiseKind::AsymmetricCircular => {
                if self.mapping.is_some() {
                    return Err(Error::invalid("circular noise takes no mapping"));
                }
                Ok((0..k).map(|c| (c, (c + 1) % k)).collect())
            }
            NoiseKind::AsymmetricMap => {
                let pairs = self
                    .mapping
                    .as_ref()
                    .ok_or_else(|| Error::invalid("asymmetric-map noise requires a mapping"))?;
                let mut map = BTreeMap::new();
                for &(from, to) in pairs {
                    if from >= k || to >= k {
                        return Err(Error::invalid(format!(
                            "mapping {from} -> {to} out of range for {k} classes"
                        )));
                    }
                    if from == to {
                        return Err(Error::invalid(format!("mapping has fixed point {from}")));
                    }
                    if map.insert(from, to).is_some() {
                        return Err(Error::invalid(format!("class {from} mapped twice")));
                    }
                }
                Ok(map)
            }
        }
    }
}

/// The CIFAR-10 class-conditional map: truck → automobile, bird → airplane,
/// deer → horse, cat ↔ dog.
pub fn cifar10_asymmetric_map() -> Vec<(usize, usize)> {
    vec![(9, 1), (2, 0), (4, 7), (3, 5), (5, 3)]
}

fn flip_count(rate: f64, n: usize) -> usize {
    // guard against products like 0.57 * 100 = 56.999...
    ((rate * n as f64) + 1e-9).floor() as usize
}

/// Returns a copy of `ds` with `noisy_labels` populated.
///
/// Symmetric: exactly `⌊rate·N⌋` samples, drawn without replacement, move to
/// a uniformly chosen different class. Asymmetric: exactly `⌊rate·N_c⌋`
/// samples of every mapped class `c` move to `map[c]`.
pub fn inject_noise(ds: &LabeledDataset, spec: &NoiseSpec) -> Result<LabeledDataset> {
    if ds.noisy_labels.is_some() {
        return Err(Error::invalid("dataset already carries noisy labels"));
    }
    let k = ds.num_classes;
    let map = spec.class_map(k)?;
    let mut rng = SeededRng::new(spec.seed);
    let mut noisy = ds.clean_labels.clone();
    match spec.kind {
        NoiseKind::Symmetric => {
            let m = flip_count(spec.rate, ds.len());
            for i in rng.sample_distinct(ds.len(), m) {
                let offset = 1 + rng.below(k - 1);
                noisy[i] = (ds.clean_labels[i] + offset) % k;
            }
        }
        NoiseKind::AsymmetricMap | NoiseKind::AsymmetricCircular => {
            for (&from, &to) in &map {
                let members: Vec<usize> = (0..ds.len()).filter(|&i| ds.clean_labels[i] == from).collect();
                let m = flip_count(spec.rate, members.len());
                for pick in rng.sample_distinct(members.len(), m) {
                    noisy[members[pick]] = to;
                }
            }
        }
    }
    let mut out = ds.clone();
    out.noisy_labels = Some(noisy);
    Ok(out)
}
