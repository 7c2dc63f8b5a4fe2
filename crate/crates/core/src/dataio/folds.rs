use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::nn::stream;

/// Stratified `k_folds` assignment, one fold index per label.
///
/// Each class is shuffled and dealt round-robin; the dealing position carries
/// over between classes so fold sizes stay within one of each other.
pub fn stratified_folds(labels: &[usize], k_folds: usize, seed: u64) -> Result<Vec<usize>> {
    if k_folds < 2 {
        return Err(Error::config("k_folds", "need at least 2 folds"));
    }
    let n_classes = labels.iter().copied().max().map_or(0, |m| m + 1);
    let mut rng = stream(seed, "stratified_folds");
    let mut folds = vec![0usize; labels.len()];
    let mut cursor = 0usize;
    for class in 0..n_classes {
        let mut members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        if members.is_empty() {
            continue;
        }
        if members.len() < k_folds {
            return Err(Error::Stratification {
                class,
                count: members.len(),
                k_folds,
            });
        }
        members.shuffle(&mut rng);
        for idx in members {
            folds[idx] = cursor % k_folds;
            cursor += 1;
        }
    }
    Ok(folds)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ten_balanced_samples_one_per_class_per_fold() {
        let labels = [0, 1, 0, 1, 0, 1, 0, 1, 0, 1];
        let folds = stratified_folds(&labels, 5, 3).unwrap();
        for f in 0..5 {
            for c in 0..2 {
                let n = (0..10).filter(|&i| folds[i] == f && labels[i] == c).count();
                assert_eq!(n, 1, "fold {f} class {c}");
            }
        }
    }

    #[test]
    fn deterministic_given_seed() {
        let labels: Vec<usize> = (0..40).map(|i| i % 3).collect();
        assert_eq!(
            stratified_folds(&labels, 5, 11).unwrap(),
            stratified_folds(&labels, 5, 11).unwrap()
        );
    }

    #[test]
    fn too_few_samples_in_a_class() {
        let labels = [0, 0, 0, 0, 1, 1, 1, 1, 1];
        let err = stratified_folds(&labels, 5, 0).unwrap_err();
        assert!(matches!(err, Error::Stratification { class: 0, count: 4, .. }));
    }

    #[test]
    fn per_class_counts_differ_by_at_most_one() {
        let labels: Vec<usize> = (0..103).map(|i| if i % 7 == 0 { 2 } else { i % 2 }).collect();
        let folds = stratified_folds(&labels, 5, 9).unwrap();
        for c in 0..3 {
            let counts: Vec<usize> = (0..5)
                .map(|f| (0..labels.len()).filter(|&i| folds[i] == f && labels[i] == c).count())
                .collect();
            let (lo, hi) = (counts.iter().min().unwrap(), counts.iter().max().unwrap());
            assert!(hi - lo <= 1, "class {c}: {counts:?}");
        }
    }
}
