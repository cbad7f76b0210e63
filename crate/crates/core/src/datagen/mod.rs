//! Synthetic Gaussian-mixture datasets, OOD pools, CSV ingestion and
//! stratified splitting.

mod mixture;
mod table;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numkit::{Matrix, RngStream};

pub use mixture::{make_mixture, make_ood_pool, Cluster, MixtureSpec, OodKind, SYNTH10_HALF_WIDTH};
pub use table::{format_g17, load_table, render_table, save_table};

/// Which part of the experiment a dataset plays.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    IdTrain,
    IdTest,
    OodPool,
}

/// Labeled samples. For `OodPool` datasets the labels are bookkeeping only
/// (source cluster or 0) and carry no class semantics.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub inputs: Matrix,
    pub labels: Vec<usize>,
    pub num_classes: usize,
    pub role: Role,
}

impl Dataset {
    pub fn new(inputs: Matrix, labels: Vec<usize>, num_classes: usize, role: Role) -> Result<Self> {
        if inputs.rows() != labels.len() {
            return Err(Error::DimensionMismatch {
                expected: inputs.rows(),
                got: labels.len(),
            });
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(Error::InvalidSpec(format!(
                "label {bad} outside 0..{num_classes}"
            )));
        }
        Ok(Self {
            inputs,
            labels,
            num_classes,
            role,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.inputs.cols()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }

    pub fn subset(&self, idx: &[usize]) -> Self {
        Self {
            inputs: self.inputs.select_rows(idx),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            num_classes: self.num_classes,
            role: self.role,
        }
    }

    pub fn with_role(mut self, role: Role) -> Self {
        self.role = role;
        self
    }

    /// Concatenates two datasets; the class count becomes the larger one.
    pub fn concat(&self, other: &Dataset) -> Result<Self> {
        let inputs = self.inputs.vstack(&other.inputs)?;
        let mut labels = self.labels.clone();
        labels.extend_from_slice(&other.labels);
        Self::new(
            inputs,
            labels,
            self.num_classes.max(other.num_classes),
            self.role,
        )
    }
}

/// Stratified split into `(train, test)`.
///
/// Each class contributes `round(n_c · test_fraction)` test samples, clamped
/// so both sides keep at least one sample. Sample order is preserved inside
/// each side.
pub fn split(ds: &Dataset, test_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::OutOfRange {
            name: "test_fraction",
            value: test_fraction,
        });
    }
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); ds.num_classes];
    for (i, &l) in ds.labels.iter().enumerate() {
        by_class[l].push(i);
    }
    let mut train = Vec::with_capacity(ds.len());
    let mut test = Vec::new();
    for (c, mut idx) in by_class.into_iter().enumerate() {
        if idx.is_empty() {
            continue;
        }
        if idx.len() < 2 {
            return Err(Error::TooFewSamples {
                class: c,
                count: idx.len(),
            });
        }
        let mut rng = RngStream::new(seed, c as u64);
        rng.shuffle(&mut idx);
        let n_test = ((idx.len() as f64 * test_fraction).round() as usize).clamp(1, idx.len() - 1);
        test.extend_from_slice(&idx[..n_test]);
        train.extend_from_slice(&idx[n_test..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok((
        ds.subset(&train).with_role(Role::IdTrain),
        ds.subset(&test).with_role(Role::IdTest),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy(per_class: usize, classes: usize) -> Dataset {
        let n = per_class * classes;
        let inputs = Matrix::new(n, 1, (0..n).map(|i| i as f64).collect()).unwrap();
        let labels = (0..n).map(|i| i % classes).collect();
        Dataset::new(inputs, labels, classes, Role::IdTrain).unwrap()
    }

    #[test]
    fn split_counts_per_class() {
        let ds = toy(100, 3);
        let (tr, te) = split(&ds, 0.2, 1).unwrap();
        assert_eq!(tr.class_counts(), vec![80; 3]);
        assert_eq!(te.class_counts(), vec![20; 3]);
        assert_eq!(te.role, Role::IdTest);
    }

    #[test]
    fn split_is_a_partition() {
        let ds = toy(37, 4);
        let (tr, te) = split(&ds, 0.3, 9).unwrap();
        let mut all: Vec<f64> = tr
            .inputs
            .as_slice()
            .iter()
            .chain(te.inputs.as_slice())
            .copied()
            .collect();
        all.sort_by(f64::total_cmp);
        assert_eq!(all, ds.inputs.as_slice().to_vec());
    }

    #[test]
    fn seeds_change_partition_not_counts() {
        let ds = toy(50, 2);
        let (_, a) = split(&ds, 0.2, 1).unwrap();
        let (_, b) = split(&ds, 0.2, 2).unwrap();
        assert_eq!(a.class_counts(), b.class_counts());
        assert_ne!(a.inputs, b.inputs);
        let (_, a2) = split(&ds, 0.2, 1).unwrap();
        assert_eq!(a, a2);
    }

    #[test]
    fn split_rejects_tiny_classes_and_bad_fractions() {
        let inputs = Matrix::new(3, 1, vec![0.0, 1.0, 2.0]).unwrap();
        let ds = Dataset::new(inputs, vec![0, 0, 1], 2, Role::IdTrain).unwrap();
        assert!(matches!(
            split(&ds, 0.5, 0),
            Err(Error::TooFewSamples { class: 1, count: 1 })
        ));
        assert!(split(&toy(4, 2), 1.0, 0).is_err());
        assert!(split(&toy(4, 2), 0.0, 0).is_err());
    }

    #[test]
    fn labels_must_be_in_range() {
        let inputs = Matrix::new(2, 1, vec![0.0, 1.0]).unwrap();
        assert!(Dataset::new(inputs, vec![0, 2], 2, Role::IdTrain).is_err());
    }
}
