//! Stratified splits and k-fold cross-validation folds.

use diffcore::Rng;

use super::Dataset;
use crate::error::{PasError, Result};

/// Per-class index lists in ascending class order.
fn indices_by_class(dataset: &Dataset) -> Vec<Vec<usize>> {
    let mut by_class = vec![Vec::new(); dataset.num_classes];
    for (i, g) in dataset.graphs.iter().enumerate() {
        by_class[g.label].push(i);
    }
    by_class
}

/// Stratified k folds: every fold's class counts deviate from the
/// proportional share by at most one. Returns (train, test) index pairs;
/// test folds partition the dataset.
pub fn stratified_kfold(
    dataset: &Dataset,
    k: usize,
    seed: u64,
) -> Result<Vec<(Vec<usize>, Vec<usize>)>> {
    let min_class = dataset
        .class_counts()
        .into_iter()
        .min()
        .expect("dataset has classes");
    if k < 2 || k > min_class {
        return Err(PasError::InvalidArgument(format!(
            "k = {k} must be in [2, min class count = {min_class}]"
        )));
    }
    let mut rng = Rng::from_seed(seed);
    let mut fold_members: Vec<Vec<usize>> = vec![Vec::new(); k];
    for mut class_indices in indices_by_class(dataset) {
        rng.shuffle(&mut class_indices);
        for (pos, idx) in class_indices.into_iter().enumerate() {
            fold_members[pos % k].push(idx);
        }
    }
    let mut folds = Vec::with_capacity(k);
    for f in 0..k {
        let mut test = fold_members[f].clone();
        test.sort_unstable();
        let mut train: Vec<usize> = (0..dataset.len()).filter(|i| !test.contains(i)).collect();
        train.sort_unstable();
        folds.push((train, test));
    }
    Ok(folds)
}

/// Stratified (train, val, test) split by fractions that sum to 1.
pub fn stratified_split(
    dataset: &Dataset,
    fractions: (f64, f64, f64),
    seed: u64,
) -> Result<(Vec<usize>, Vec<usize>, Vec<usize>)> {
    let (ft, fv, fe) = fractions;
    if !(ft > 0.0 && fv >= 0.0 && fe >= 0.0) || (ft + fv + fe - 1.0).abs() > 1e-9 {
        return Err(PasError::InvalidArgument(format!(
            "split fractions {fractions:?} must be non-negative and sum to 1"
        )));
    }
    let mut rng = Rng::from_seed(seed);
    let (mut train, mut val, mut test) = (Vec::new(), Vec::new(), Vec::new());
    for mut class_indices in indices_by_class(dataset) {
        rng.shuffle(&mut class_indices);
        let n = class_indices.len();
        let mut n_val = (n as f64 * fv).floor() as usize;
        let mut n_test = (n as f64 * fe).floor() as usize;
        if fv > 0.0 && n_val == 0 && n >= 3 {
            n_val = 1;
        }
        if fe > 0.0 && n_test == 0 && n >= 3 {
            n_test = 1;
        }
        let n_train = n - n_val - n_test;
        for (pos, idx) in class_indices.into_iter().enumerate() {
            if pos < n_train {
                train.push(idx);
            } else if pos < n_train + n_val {
                val.push(idx);
            } else {
                test.push(idx);
            }
        }
    }
    train.sort_unstable();
    val.sort_unstable();
    test.sort_unstable();
    Ok((train, val, test))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::gen_feature_sum;
    use crate::data::{Dataset, Graph};
    use diffcore::Tensor;

    fn toy_dataset(per_class: &[usize]) -> Dataset {
        let mut graphs = Vec::new();
        for (class, &count) in per_class.iter().enumerate() {
            for _ in 0..count {
                graphs.push(Graph::new(
                    Tensor::zeros(1, 1),
                    Tensor::full(1, 1, 1.0),
                    class,
                ));
            }
        }
        Dataset::new("toy", graphs).unwrap()
    }

    #[test]
    fn exact_proportional_example() {
        // 6 of class 0, 4 of class 1, k = 2 -> each test fold is 3 + 2.
        let ds = toy_dataset(&[6, 4]);
        let folds = stratified_kfold(&ds, 2, 1).unwrap();
        for (_, test) in &folds {
            let c0 = test.iter().filter(|&&i| ds.graphs[i].label == 0).count();
            let c1 = test.len() - c0;
            assert_eq!((c0, c1), (3, 2));
        }
    }

    #[test]
    fn folds_partition_the_index_set() {
        let ds = gen_feature_sum(57, 3).unwrap();
        let folds = stratified_kfold(&ds, 5, 9).unwrap();
        let mut seen = vec![false; ds.len()];
        for (train, test) in &folds {
            for &i in test {
                assert!(!seen[i], "index {i} in two test folds");
                seen[i] = true;
                assert!(!train.contains(&i));
            }
            assert_eq!(train.len() + test.len(), ds.len());
        }
        assert!(seen.iter().all(|&s| s));
    }

    #[test]
    fn deviation_at_most_one_per_class() {
        for (counts, k, seed) in [
            (vec![17usize, 29], 4usize, 0u64),
            (vec![10, 10, 13], 3, 5),
            (vec![23, 8], 8, 2),
        ] {
            let ds = toy_dataset(&counts);
            for (_, test) in stratified_kfold(&ds, k, seed).unwrap() {
                for (class, &count) in counts.iter().enumerate() {
                    let share = count as f64 / k as f64;
                    let got = test.iter().filter(|&&i| ds.graphs[i].label == class).count();
                    assert!(
                        (got as f64 - share).abs() <= 1.0,
                        "class {class}: {got} vs share {share}"
                    );
                }
            }
        }
    }

    #[test]
    fn same_seed_identical_folds() {
        let ds = gen_feature_sum(40, 11).unwrap();
        let a = stratified_kfold(&ds, 4, 77).unwrap();
        let b = stratified_kfold(&ds, 4, 77).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn k_exceeding_smallest_class_rejected() {
        let ds = toy_dataset(&[3, 12]);
        assert!(stratified_kfold(&ds, 4, 0).is_err());
        assert!(stratified_kfold(&ds, 1, 0).is_err());
    }

    #[test]
    fn three_way_split_covers_everything() {
        let ds = gen_feature_sum(60, 2).unwrap();
        let (train, val, test) = stratified_split(&ds, (0.8, 0.1, 0.1), 4).unwrap();
        assert_eq!(train.len() + val.len() + test.len(), ds.len());
        let mut all: Vec<usize> = train.iter().chain(&val).chain(&test).copied().collect();
        all.sort_unstable();
        all.dedup();
        assert_eq!(all.len(), ds.len());
        // 80/10/10 on 30 per class.
        assert_eq!(val.len(), 6);
        assert_eq!(test.len(), 6);
    }

    #[test]
    fn bad_fractions_rejected() {
        let ds = toy_dataset(&[4, 4]);
        assert!(stratified_split(&ds, (0.5, 0.2, 0.2), 0).is_err());
    }
}
