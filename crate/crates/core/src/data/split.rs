use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Share of the training portion held out for validation.
pub const DEFAULT_VALIDATION_FRACTION: f64 = 0.1;

/// Disjoint, sorted index sets covering a dataset.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitIndices {
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
    pub test: Vec<usize>,
}

impl SplitIndices {
    /// Training plus validation rows, sorted.
    pub fn fit_rows(&self) -> Vec<usize> {
        let mut v = [self.train.as_slice(), self.validation.as_slice()].concat();
        v.sort_unstable();
        v
    }
}

/// Per-class split: `train_fraction` of each class (rounded) goes to the
/// training portion, the rest to test; `validation_fraction` of the training
/// portion (rounded) is then held out for validation.
pub fn stratified_split(
    labels: &[usize],
    class_names: &[String],
    train_fraction: f64,
    validation_fraction: f64,
    seed: u64,
) -> Result<SplitIndices> {
    if !(train_fraction > 0.0 && train_fraction <= 1.0) {
        return Err(Error::config(format!("train fraction {train_fraction} outside (0, 1]")));
    }
    if !(0.0..1.0).contains(&validation_fraction) {
        return Err(Error::config(format!(
            "validation fraction {validation_fraction} outside [0, 1)"
        )));
    }
    let classes = labels.iter().max().map_or(0, |m| m + 1).max(class_names.len());
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); classes];
    for (i, &l) in labels.iter().enumerate() {
        by_class[l].push(i);
    }
    let name = |c: usize| class_names.get(c).cloned().unwrap_or_else(|| format!("class {c}"));
    for (c, idx) in by_class.iter().enumerate() {
        if idx.len() < 3 {
            return Err(Error::data(format!(
                "class '{}' has {} samples; at least 3 are required",
                name(c),
                idx.len()
            )));
        }
    }
    if train_fraction == 1.0 {
        log::warn!("train fraction 1.0 leaves the test set empty");
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = SplitIndices {
        train: Vec::new(),
        validation: Vec::new(),
        test: Vec::new(),
    };
    for mut idx in by_class {
        idx.shuffle(&mut rng);
        let portion = ((idx.len() as f64) * train_fraction).round() as usize;
        let n_val = ((portion as f64) * validation_fraction).round() as usize;
        out.validation.extend_from_slice(&idx[..n_val]);
        out.train.extend_from_slice(&idx[n_val..portion]);
        out.test.extend_from_slice(&idx[portion..]);
    }
    out.train.sort_unstable();
    out.validation.sort_unstable();
    out.test.sort_unstable();
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn labels(per_class: usize, classes: usize) -> Vec<usize> {
        (0..classes).flat_map(|c| std::iter::repeat_n(c, per_class)).collect()
    }

    #[test]
    fn sixty_forty_then_ninety_ten() {
        let y = labels(100, 2);
        let s = stratified_split(&y, &[], 0.6, 0.1, 1).unwrap();
        for c in 0..2 {
            let count = |v: &[usize]| v.iter().filter(|&&i| y[i] == c).count();
            assert_eq!((count(&s.train), count(&s.validation), count(&s.test)), (54, 6, 40));
        }
    }

    #[test]
    fn full_training_fraction_empties_test() {
        let s = stratified_split(&labels(10, 3), &[], 1.0, 0.1, 4).unwrap();
        assert!(s.test.is_empty());
        assert_eq!(s.train.len() + s.validation.len(), 30);
    }

    #[test]
    fn deterministic_per_seed() {
        let y = labels(20, 3);
        assert_eq!(
            stratified_split(&y, &[], 0.8, 0.1, 9).unwrap(),
            stratified_split(&y, &[], 0.8, 0.1, 9).unwrap()
        );
        assert_ne!(
            stratified_split(&y, &[], 0.8, 0.1, 9).unwrap(),
            stratified_split(&y, &[], 0.8, 0.1, 10).unwrap()
        );
    }

    #[test]
    fn small_class_is_named() {
        let y = vec![0, 0, 0, 1, 1];
        let names = vec!["normal".to_string(), "tumor".to_string()];
        let err = stratified_split(&y, &names, 0.6, 0.1, 0).unwrap_err();
        assert!(err.to_string().contains("tumor"), "{err}");
    }
}
