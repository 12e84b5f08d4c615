//! One-vs-one linear SVM classification, cross-validation and evaluation
//! metrics.

pub mod metrics;
pub mod ovo;
pub mod svm;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use metrics::{evaluate_features, evaluate_features_with, BlandAltman, Confusion, EvalOptions, FeatureEval};
pub use ovo::{train_ovo, SvmModel};
pub use svm::{train_binary_svm, BinarySvm, Kernel, SvmParams};

use crate::error::{Error, Result};
use crate::model::{FeatureVector, PatternLabel};
use crate::seed;

/// Cross-validated classification result.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvReport {
    pub folds: usize,
    pub confusion: Confusion,
    pub fold_accuracy: Vec<f64>,
}

impl CvReport {
    pub fn accuracy(&self) -> f64 {
        self.confusion.accuracy
    }
}

/// Fold index of every sample; each class is shuffled and dealt round-robin.
pub fn stratified_folds(labels: &[PatternLabel], k: usize, seed: u64) -> Result<Vec<usize>> {
    if k < 2 {
        return Err(Error::InvalidArgument(format!("need at least 2 folds, got {k}")));
    }
    let mut fold = vec![0usize; labels.len()];
    for c in PatternLabel::ALL {
        let mut idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == c).collect();
        if idx.len() < k {
            return Err(Error::TooFewSamples(format!("{c}: {} samples for {k} folds", idx.len())));
        }
        idx.shuffle(&mut seed::rng(seed::derive(seed, &[seed::stage::CLASSIFY, c.code() as u64])));
        for (pos, i) in idx.into_iter().enumerate() {
            fold[i] = pos % k;
        }
    }
    Ok(fold)
}

/// Stratified k-fold cross-validation with the confusion matrix pooled over
/// held-out folds.
pub fn cross_validate(data: &[(FeatureVector, PatternLabel)], k: usize, params: &SvmParams, seed: u64) -> Result<CvReport> {
    let labels: Vec<PatternLabel> = data.iter().map(|d| d.1).collect();
    let fold = stratified_folds(&labels, k, seed)?;
    let per_fold = (0..k)
        .into_par_iter()
        .map(|f| {
            let train: Vec<_> = data.iter().zip(&fold).filter(|(_, &g)| g != f).map(|(d, _)| *d).collect();
            let model = train_ovo(&train, params)?;
            Ok(data
                .iter()
                .zip(&fold)
                .filter(|(_, &g)| g == f)
                .map(|((x, l), _)| (*l, model.predict(x)))
                .collect::<Vec<_>>())
        })
        .collect::<Result<Vec<_>>>()?;
    let fold_accuracy = per_fold.iter().map(|p| Confusion::from_pairs(p).accuracy).collect();
    let all: Vec<_> = per_fold.into_iter().flatten().collect();
    Ok(CvReport {
        folds: k,
        confusion: Confusion::from_pairs(&all),
        fold_accuracy,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn blobs(per_class: usize, seed: u64) -> Vec<(FeatureVector, PatternLabel)> {
        let mut rng = crate::seed::rng(seed);
        let mut out = Vec::new();
        for (i, &l) in PatternLabel::ALL.iter().enumerate() {
            for _ in 0..per_class {
                let v = [
                    (i % 3) as f64 * 10.0 + rng.random_range(-1.0..1.0),
                    (i / 3) as f64 * 10.0 + rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                ];
                out.push((FeatureVector::from_array(v), l));
            }
        }
        out
    }

    #[test]
    fn folds_are_stratified() {
        let labels: Vec<_> = blobs(23, 0).into_iter().map(|d| d.1).collect();
        let f = stratified_folds(&labels, 10, 4).unwrap();
        for c in PatternLabel::ALL {
            let mut counts = [0usize; 10];
            for (l, g) in labels.iter().zip(&f) {
                if *l == c {
                    counts[*g] += 1;
                }
            }
            assert!(counts.iter().all(|&n| n == 2 || n == 3));
        }
    }

    #[test]
    fn too_few_samples() {
        assert!(matches!(
            cross_validate(&blobs(9, 0), 10, &SvmParams::default(), 0),
            Err(Error::TooFewSamples(_))
        ));
    }

    #[test]
    fn separable_data_is_perfect_and_reproducible() {
        let data = blobs(20, 1);
        let a = cross_validate(&data, 10, &SvmParams::default(), 5).unwrap();
        assert_eq!(a.accuracy(), 1.0, "{:?}", a.confusion.counts);
        assert_eq!(a.confusion.total(), data.len());
        for c in PatternLabel::ALL {
            assert_eq!(a.confusion.row_total(c), 20);
        }
        let b = cross_validate(&data, 10, &SvmParams::default(), 5).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn shuffled_labels_are_at_chance() {
        let mut data = blobs(120, 2);
        let mut labels: Vec<_> = data.iter().map(|d| d.1).collect();
        labels.shuffle(&mut crate::seed::rng(8));
        for (d, l) in data.iter_mut().zip(labels) {
            d.1 = l;
        }
        let acc = cross_validate(&data, 10, &SvmParams::default(), 3).unwrap().accuracy();
        assert!((acc - 1.0 / 9.0).abs() < 0.03, "{acc}");
    }
}
