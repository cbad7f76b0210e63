use crate::datagen::Dataset;
use crate::error::{Error, Result};
use crate::gate::GateState;
use crate::nets::MlpModel;

/// Fraction of `test` where the clone's argmax equals the true label.
pub fn clone_accuracy(clone: &MlpModel, test: &Dataset) -> Result<f64> {
    if test.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if clone.input_dim() != test.dim() {
        return Err(Error::DimensionMismatch {
            expected: clone.input_dim(),
            got: test.dim(),
        });
    }
    crate::nets::accuracy(clone, test)
}

/// Accuracy of the gate's answers (as labels) on in-distribution data,
/// false-positive randomizations included.
pub fn benign_accuracy(gate: &GateState, test: &Dataset) -> Result<f64> {
    if test.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let answers = gate.respond_batch(&test.inputs)?;
    let hits = answers
        .iter()
        .zip(&test.labels)
        .filter(|(a, y)| a.prediction.label() == **y)
        .count();
    Ok(hits as f64 / test.len() as f64)
}

/// Defended accuracy predicted from the victim accuracy and the ID
/// false-positive rate.
pub fn expected_benign_accuracy(victim_accuracy: f64, p: f64, fpr: f64, num_classes: usize) -> f64 {
    (1.0 - p * fpr) * victim_accuracy + p * fpr / num_classes as f64
}

/// Mean and sample standard deviation (zero for a single value).
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() == 1 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Average ranks starting at 1; ties share their mean rank.
pub fn ranks(xs: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..xs.len()).collect();
    idx.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut out = vec![0.0; xs.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && xs[idx[j + 1]] == xs[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            out[k] = r;
        }
        i = j + 1;
    }
    out
}

/// Spearman rank correlation; `None` when either side is constant.
pub fn spearman(xs: &[f64], ys: &[f64]) -> Option<f64> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return None;
    }
    let (rx, ry) = (ranks(xs), ranks(ys));
    let (mx, _) = mean_std(&rx);
    let (my, _) = mean_std(&ry);
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx).powi(2);
        syy += (b - my).powi(2);
    }
    (sxx > 0.0 && syy > 0.0).then(|| sxy / (sxx * syy).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::Role;
    use crate::nets::Dense;
    use crate::numkit::Matrix;

    fn four_samples() -> Dataset {
        let x = Matrix::from_rows(&[[1.0, 0.0], [2.0, 0.0], [0.0, 1.0], [0.0, 3.0]]).unwrap();
        Dataset::new(x, vec![0, 0, 1, 0], 2, Role::IdTest).unwrap()
    }

    #[test]
    fn hand_built_accuracy() {
        // logits = x, so argmax picks the larger coordinate
        let m = MlpModel::from_layers(vec![Dense {
            weights: Matrix::identity(2),
            bias: vec![0.0, 0.0],
        }])
        .unwrap();
        assert_eq!(clone_accuracy(&m, &four_samples()).unwrap(), 0.75);
        let empty = four_samples().subset(&[]);
        assert!(matches!(clone_accuracy(&m, &empty), Err(Error::EmptyDataset)));
    }

    #[test]
    fn constant_clone_scores_the_prior() {
        let m = MlpModel::from_layers(vec![Dense {
            weights: Matrix::zeros(2, 10),
            bias: (0..10).map(|k| if k == 3 { 1.0 } else { 0.0 }).collect(),
        }])
        .unwrap();
        let x = Matrix::zeros(100, 2);
        let ds = Dataset::new(x, (0..100).map(|i| i % 10).collect(), 10, Role::IdTest).unwrap();
        assert_eq!(clone_accuracy(&m, &ds).unwrap(), 0.1);
    }

    #[test]
    fn spearman_cases() {
        assert_eq!(spearman(&[1.0, 2.0, 3.0], &[10.0, 20.0, 30.0]), Some(1.0));
        assert_eq!(spearman(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]), Some(-1.0));
        assert_eq!(spearman(&[1.0, 2.0, 3.0], &[5.0, 5.0, 5.0]), None);
        assert_eq!(ranks(&[3.0, 1.0, 3.0, 2.0]), vec![3.5, 1.0, 3.5, 2.0]);
        // rank differences (0,1,1,1,1): 1 - 6·4/(5·24) = 0.8
        let r = spearman(&[1.0, 2.0, 3.0, 4.0, 5.0], &[1.0, 3.0, 2.0, 5.0, 4.0]).unwrap();
        assert!((r - 0.8).abs() < 1e-12, "{r}");
    }

    #[test]
    fn mean_std_cases() {
        assert_eq!(mean_std(&[2.0]), (2.0, 0.0));
        let (m, s) = mean_std(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(m, 2.5);
        assert!((s - (5.0f64 / 3.0).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn expected_accuracy_formula() {
        let a = expected_benign_accuracy(0.9, 1.0, 0.05, 10);
        assert!((a - (0.95 * 0.9 + 0.005)).abs() < 1e-15);
        assert_eq!(expected_benign_accuracy(0.9, 0.0, 0.05, 10), 0.9);
    }
}
