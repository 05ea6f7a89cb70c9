//! Stratified k-fold assignment with a stratified validation carve.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use rand::seq::SliceRandom;

#[cfg(feature = "serde")]
use serde::{Deserialize, Serialize};

use crate::label::{ClassLabel, Scheme};
use crate::seed;

/// A record id paired with its class, the only view of a manifest that
/// splitting needs.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Sample {
    pub id: String,
    pub label: ClassLabel,
}

impl Sample {
    pub fn new(id: impl Into<String>, label: ClassLabel) -> Self {
        Sample {
            id: id.into(),
            label,
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SplitError {
    #[error("fold count must be at least 2, got {0}")]
    InvalidK(usize),
    #[error("class {class} has {population} records, fewer than k = {k}")]
    ClassTooSmall {
        class: ClassLabel,
        population: usize,
        k: usize,
    },
    #[error("record {id} has label {label}, which is not part of the {scheme} scheme")]
    UnexpectedLabel {
        id: String,
        label: ClassLabel,
        scheme: Scheme,
    },
    #[error("record id {0} appears more than once")]
    DuplicateId(String),
    #[error("validation fraction must lie strictly between 0 and 1, got {0}")]
    InvalidFraction(f64),
    #[error("validation sets are already populated")]
    ValidationAlreadyCarved,
    #[error("validation carve leaves fold {fold} without training records of class {class}")]
    EmptyTrain { fold: usize, class: ClassLabel },
    #[error("split plan is inconsistent: {0}")]
    Inconsistent(String),
}

/// Record ids per role for one fold. Each list is kept sorted.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct FoldAssignment {
    pub train: Vec<String>,
    pub validation: Vec<String>,
    pub test: Vec<String>,
}

/// Per-fold train/validation/test assignment of every record.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct SplitPlan {
    pub k: usize,
    pub seed: u64,
    pub scheme: Scheme,
    /// Fraction carved from each fold's training pool, once carved.
    #[cfg_attr(feature = "serde", serde(default))]
    pub validation_fraction: Option<f64>,
    pub labels: BTreeMap<String, ClassLabel>,
    pub folds: Vec<FoldAssignment>,
}

/// Borrowed view of one fold of a plan.
#[derive(Debug, Clone, Copy)]
pub struct FoldView<'a> {
    pub index: usize,
    plan: &'a SplitPlan,
}

impl<'a> FoldView<'a> {
    pub fn assignment(&self) -> &'a FoldAssignment {
        &self.plan.folds[self.index]
    }

    pub fn train(&self) -> &'a [String] {
        &self.assignment().train
    }

    pub fn validation(&self) -> &'a [String] {
        &self.assignment().validation
    }

    pub fn test(&self) -> &'a [String] {
        &self.assignment().test
    }

    pub fn label(&self, id: &str) -> Option<ClassLabel> {
        self.plan.labels.get(id).copied()
    }

    pub fn scheme(&self) -> Scheme {
        self.plan.scheme
    }

    /// Training ids of one class, in sorted order.
    pub fn train_of(&self, class: ClassLabel) -> impl Iterator<Item = &'a str> + 'a {
        let labels = &self.plan.labels;
        self.train()
            .iter()
            .filter(move |id| labels.get(id.as_str()) == Some(&class))
            .map(String::as_str)
    }
}

impl SplitPlan {
    pub fn fold(&self, index: usize) -> FoldView<'_> {
        assert!(index < self.folds.len(), "fold {index} out of range");
        FoldView { index, plan: self }
    }

    pub fn fold_views(&self) -> impl Iterator<Item = FoldView<'_>> {
        (0..self.folds.len()).map(move |index| FoldView { index, plan: self })
    }

    pub fn label_of(&self, id: &str) -> Option<ClassLabel> {
        self.labels.get(id).copied()
    }

    pub fn population(&self, class: ClassLabel) -> usize {
        self.labels.values().filter(|&&l| l == class).count()
    }

    /// Checks the partition, disjointness and stratification invariants.
    pub fn validate(&self) -> Result<(), SplitError> {
        let bad = |msg: String| Err(SplitError::Inconsistent(msg));
        if self.folds.len() != self.k {
            return bad(alloc::format!(
                "{} folds for k = {}",
                self.folds.len(),
                self.k
            ));
        }
        for (id, label) in &self.labels {
            if self.scheme.class_index(*label).is_none() {
                return bad(alloc::format!(
                    "{id} labelled {label} outside {}",
                    self.scheme
                ));
            }
        }
        let mut tested: BTreeSet<&str> = BTreeSet::new();
        for (f, fold) in self.folds.iter().enumerate() {
            let mut seen: BTreeSet<&str> = BTreeSet::new();
            for id in fold.train.iter().chain(&fold.validation).chain(&fold.test) {
                if !self.labels.contains_key(id) {
                    return bad(alloc::format!("fold {f} references unknown record {id}"));
                }
                if !seen.insert(id) {
                    return bad(alloc::format!("record {id} has two roles in fold {f}"));
                }
            }
            if seen.len() != self.labels.len() {
                return bad(alloc::format!(
                    "fold {f} covers {} of {} records",
                    seen.len(),
                    self.labels.len()
                ));
            }
            for id in &fold.test {
                if !tested.insert(id) {
                    return bad(alloc::format!(
                        "record {id} is tested in more than one fold"
                    ));
                }
            }
            for &class in self.scheme.classes() {
                let population = self.population(class);
                let count = fold
                    .test
                    .iter()
                    .filter(|id| self.labels[id.as_str()] == class)
                    .count();
                let floor = population / self.k;
                let ceil = floor + usize::from(!population.is_multiple_of(self.k));
                if count < floor || count > ceil {
                    return bad(alloc::format!(
                        "fold {f} tests {count} {class} records, expected {floor}..={ceil}"
                    ));
                }
            }
        }
        if tested.len() != self.labels.len() {
            return bad(alloc::format!(
                "test sets cover {} of {} records",
                tested.len(),
                self.labels.len()
            ));
        }
        Ok(())
    }
}

/// Deals each class's shuffled records round-robin into `k` test buckets.
///
/// Records of a class are sorted by id before shuffling, so the plan does
/// not depend on input order. A class with no records yields empty rows; a
/// class with fewer than `k` (but more than zero) records is an error.
pub fn stratified_kfold(
    samples: &[Sample],
    scheme: Scheme,
    k: usize,
    seed: u64,
) -> Result<SplitPlan, SplitError> {
    if k < 2 {
        return Err(SplitError::InvalidK(k));
    }
    let mut labels = BTreeMap::new();
    for s in samples {
        if scheme.class_index(s.label).is_none() {
            return Err(SplitError::UnexpectedLabel {
                id: s.id.clone(),
                label: s.label,
                scheme,
            });
        }
        if labels.insert(s.id.clone(), s.label).is_some() {
            return Err(SplitError::DuplicateId(s.id.clone()));
        }
    }

    let mut test_sets: Vec<Vec<String>> = alloc::vec![Vec::new(); k];
    for &class in scheme.classes() {
        let mut ids: Vec<&String> = labels
            .iter()
            .filter(|(_, &l)| l == class)
            .map(|(id, _)| id)
            .collect();
        if !ids.is_empty() && ids.len() < k {
            return Err(SplitError::ClassTooSmall {
                class,
                population: ids.len(),
                k,
            });
        }
        let mut rng = seed::rng(seed, &[seed::tag("test-fold"), class.ordinal() as u64]);
        ids.shuffle(&mut rng);
        for (i, id) in ids.into_iter().enumerate() {
            test_sets[i % k].push(id.clone());
        }
    }

    let folds = test_sets
        .into_iter()
        .map(|mut test| {
            test.sort();
            let held: BTreeSet<&String> = test.iter().collect();
            let train = labels
                .keys()
                .filter(|id| !held.contains(id))
                .cloned()
                .collect();
            FoldAssignment {
                train,
                validation: Vec::new(),
                test,
            }
        })
        .collect();

    Ok(SplitPlan {
        k,
        seed,
        scheme,
        validation_fraction: None,
        labels,
        folds,
    })
}

/// Number of validation records carved from a class pool of `pool` records.
///
/// Rounds half away from zero: 33.8 → 34, 126.3 → 126, 118.8 → 119.
pub fn validation_count(pool: usize, fraction: f64) -> usize {
    libm::round(fraction * pool as f64) as usize
}

/// Moves `round(fraction × pool)` records of every class from train to
/// validation in every fold, choosing them with the plan's seed.
pub fn carve_validation(plan: &SplitPlan, fraction: f64) -> Result<SplitPlan, SplitError> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(SplitError::InvalidFraction(fraction));
    }
    if plan.folds.iter().any(|f| !f.validation.is_empty()) {
        return Err(SplitError::ValidationAlreadyCarved);
    }
    let mut out = plan.clone();
    out.validation_fraction = Some(fraction);
    for (f, fold) in out.folds.iter_mut().enumerate() {
        let mut moved: BTreeSet<String> = BTreeSet::new();
        for &class in plan.scheme.classes() {
            let mut pool: Vec<&String> = fold
                .train
                .iter()
                .filter(|id| plan.labels[id.as_str()] == class)
                .collect();
            if pool.is_empty() {
                continue;
            }
            let n_val = validation_count(pool.len(), fraction);
            if n_val >= pool.len() {
                return Err(SplitError::EmptyTrain { fold: f, class });
            }
            let mut rng = seed::rng(
                plan.seed,
                &[seed::tag("validation"), class.ordinal() as u64, f as u64],
            );
            pool.shuffle(&mut rng);
            moved.extend(pool.into_iter().take(n_val).cloned());
        }
        fold.train.retain(|id| !moved.contains(id));
        fold.validation = moved.into_iter().collect();
    }
    Ok(out)
}

/// Role counts for one class in one fold.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct FoldCounts {
    pub train: usize,
    pub validation: usize,
    pub test: usize,
    /// Originals plus synthetic copies; zero until augmentation is planned.
    pub augmented_train: usize,
}

/// Per-class, per-fold counts: train, validation, test and augmented train.
#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct SplitCountTable {
    pub classes: Vec<ClassLabel>,
    pub populations: Vec<usize>,
    /// `cells[class][fold]`
    pub cells: Vec<Vec<FoldCounts>>,
}

impl SplitCountTable {
    pub fn get(&self, class: ClassLabel, fold: usize) -> Option<&FoldCounts> {
        let c = self.classes.iter().position(|&l| l == class)?;
        self.cells[c].get(fold)
    }

    pub fn set_augmented(&mut self, class: ClassLabel, fold: usize, total: usize) {
        if let Some(c) = self.classes.iter().position(|&l| l == class) {
            self.cells[c][fold].augmented_train = total;
        }
    }

    pub fn folds(&self) -> usize {
        self.cells.first().map_or(0, Vec::len)
    }
}

impl fmt::Display for SplitCountTable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "{:<16} {:>6} {:>5} {:>9} {:>11} {:>9} {:>10}",
            "Class", "Total", "Fold", "Train", "Validation", "Test", "Augmented"
        )?;
        for (c, class) in self.classes.iter().enumerate() {
            for (fold, cell) in self.cells[c].iter().enumerate() {
                let total = if fold == 0 {
                    alloc::format!("{}", self.populations[c])
                } else {
                    String::new()
                };
                let name = if fold == 0 { class.display_name() } else { "" };
                writeln!(
                    f,
                    "{:<16} {:>6} {:>5} {:>9} {:>11} {:>9} {:>10}",
                    name,
                    total,
                    fold + 1,
                    cell.train,
                    cell.validation,
                    cell.test,
                    cell.augmented_train
                )?;
            }
        }
        Ok(())
    }
}

/// Counts every role per class and fold. The augmented column starts at 0.
pub fn split_counts(plan: &SplitPlan) -> SplitCountTable {
    let classes: Vec<ClassLabel> = plan.scheme.classes().to_vec();
    let count = |ids: &[String], class: ClassLabel| {
        ids.iter()
            .filter(|id| plan.labels.get(id.as_str()) == Some(&class))
            .count()
    };
    let cells = classes
        .iter()
        .map(|&class| {
            plan.folds
                .iter()
                .map(|fold| FoldCounts {
                    train: count(&fold.train, class),
                    validation: count(&fold.validation, class),
                    test: count(&fold.test, class),
                    augmented_train: 0,
                })
                .collect()
        })
        .collect();
    SplitCountTable {
        populations: classes.iter().map(|&c| plan.population(c)).collect(),
        classes,
        cells,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::format;

    fn corpus(counts: &[(ClassLabel, usize)]) -> Vec<Sample> {
        counts
            .iter()
            .flat_map(|&(label, n)| {
                (0..n).map(move |i| Sample::new(format!("{}-{i:05}", label.as_str()), label))
            })
            .collect()
    }

    #[test]
    fn exact_division_tests_two_per_fold() {
        let plan = stratified_kfold(
            &corpus(&[(ClassLabel::Covid19, 10)]),
            Scheme::TwoClass,
            5,
            3,
        )
        .unwrap();
        assert!(plan
            .folds
            .iter()
            .all(|f| f.test.len() == 2 && f.train.len() == 8));
        plan.validate().unwrap();
    }

    #[test]
    fn balanced_folds_test_84_or_85() {
        let samples = corpus(&[
            (ClassLabel::Covid19, 423),
            (ClassLabel::Normal, 423),
            (ClassLabel::ViralPneumonia, 423),
        ]);
        let plan = stratified_kfold(&samples, Scheme::ThreeClass, 5, 11).unwrap();
        let table = split_counts(&plan);
        for c in 0..3 {
            let tests: Vec<usize> = table.cells[c].iter().map(|x| x.test).collect();
            assert!(tests.iter().all(|&t| t == 84 || t == 85), "{tests:?}");
            assert_eq!(tests.iter().sum::<usize>(), 423);
        }
    }

    #[test]
    fn class_smaller_than_k_is_named() {
        let err = stratified_kfold(
            &corpus(&[(ClassLabel::Covid19, 10), (ClassLabel::Normal, 3)]),
            Scheme::TwoClass,
            5,
            0,
        )
        .unwrap_err();
        assert_eq!(
            err,
            SplitError::ClassTooSmall {
                class: ClassLabel::Normal,
                population: 3,
                k: 5
            }
        );
    }

    #[test]
    fn viral_records_rejected_in_two_class_scheme() {
        let err = stratified_kfold(
            &corpus(&[(ClassLabel::ViralPneumonia, 5)]),
            Scheme::TwoClass,
            5,
            0,
        )
        .unwrap_err();
        assert!(matches!(err, SplitError::UnexpectedLabel { .. }));
    }

    #[test]
    fn k_below_two_rejected() {
        assert_eq!(
            stratified_kfold(&[], Scheme::TwoClass, 1, 0).unwrap_err(),
            SplitError::InvalidK(1)
        );
    }

    #[test]
    fn validation_rounding_matches_fold_table() {
        assert_eq!(validation_count(338, 0.10), 34);
        assert_eq!(validation_count(1263, 0.10), 126);
        assert_eq!(validation_count(1188, 0.10), 119);
        assert_eq!(validation_count(10, 0.10), 1);
    }

    #[test]
    fn carve_on_ten_record_pool() {
        // 12 records, k = 6: each fold holds out 2, leaving a pool of 10 -> 1 validation.
        let plan =
            stratified_kfold(&corpus(&[(ClassLabel::Normal, 12)]), Scheme::TwoClass, 6, 1).unwrap();
        let carved = carve_validation(&plan, 0.10).unwrap();
        for fold in &carved.folds {
            assert_eq!(fold.test.len(), 2);
            assert_eq!(fold.validation.len(), 1);
            assert_eq!(fold.train.len(), 9);
        }
        carved.validate().unwrap();
    }

    #[test]
    fn carve_rejects_bad_fractions_and_double_carve() {
        let plan =
            stratified_kfold(&corpus(&[(ClassLabel::Normal, 10)]), Scheme::TwoClass, 5, 1).unwrap();
        assert!(matches!(
            carve_validation(&plan, 0.0),
            Err(SplitError::InvalidFraction(_))
        ));
        assert!(matches!(
            carve_validation(&plan, 1.0),
            Err(SplitError::InvalidFraction(_))
        ));
        let carved = carve_validation(&plan, 0.1).unwrap();
        assert_eq!(
            carve_validation(&carved, 0.1).unwrap_err(),
            SplitError::ValidationAlreadyCarved
        );
    }

    #[test]
    fn carve_that_empties_training_errors() {
        // pool of 1 per fold with fraction 0.6 -> round(0.6) = 1 -> nothing left.
        let plan =
            stratified_kfold(&corpus(&[(ClassLabel::Normal, 2)]), Scheme::TwoClass, 2, 1).unwrap();
        assert!(matches!(
            carve_validation(&plan, 0.6),
            Err(SplitError::EmptyTrain { .. })
        ));
    }

    #[test]
    fn empty_class_gives_zero_row() {
        let plan = stratified_kfold(
            &corpus(&[(ClassLabel::Covid19, 10)]),
            Scheme::TwoClass,
            5,
            9,
        )
        .unwrap();
        let table = split_counts(&plan);
        assert_eq!(table.populations, [10, 0]);
        assert!(table.cells[1].iter().all(|c| *c == FoldCounts::default()));
    }

    #[test]
    fn rendered_table_lists_every_fold() {
        let plan = stratified_kfold(
            &corpus(&[(ClassLabel::Covid19, 10)]),
            Scheme::TwoClass,
            5,
            9,
        )
        .unwrap();
        let text = alloc::string::ToString::to_string(&split_counts(&plan));
        assert_eq!(text.lines().count(), 1 + 2 * 5);
        assert!(text.starts_with("Class"));
    }
}
