use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Per-sample class labels (cell ids). Class ids are 1-based and every
/// declared class owns at least one sample.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassLabels {
    ids: Vec<u32>,
    classes: Vec<u32>,
}

impl ClassLabels {
    /// Builds labels whose class set is exactly the distinct ids present.
    pub fn new(ids: Vec<u32>) -> Result<Self> {
        if ids.is_empty() {
            return Err(Error::InvalidLabels("empty label vector".into()));
        }
        if let Some(bad) = ids.iter().find(|&&c| c == 0) {
            return Err(Error::InvalidLabels(format!(
                "label {bad} outside 1..C (class ids are 1-based)"
            )));
        }
        let mut classes = ids.clone();
        classes.sort_unstable();
        classes.dedup();
        Ok(Self { ids, classes })
    }

    /// Builds labels against a declared class set; every label must belong
    /// to it and every declared class must be present.
    pub fn with_classes(ids: Vec<u32>, classes: &[u32]) -> Result<Self> {
        let mut declared = classes.to_vec();
        declared.sort_unstable();
        declared.dedup();
        let labels = Self::new(ids)?;
        if let Some(bad) = labels.ids.iter().find(|c| declared.binary_search(c).is_err()) {
            return Err(Error::InvalidLabels(format!(
                "label {bad} is not one of the {} declared classes",
                declared.len()
            )));
        }
        if labels.classes != declared {
            let missing: Vec<u32> = declared
                .iter()
                .filter(|c| labels.classes.binary_search(c).is_err())
                .copied()
                .collect();
            return Err(Error::InvalidLabels(format!(
                "classes without samples: {missing:?}"
            )));
        }
        Ok(labels)
    }

    pub fn ids(&self) -> &[u32] {
        &self.ids
    }

    /// Sorted distinct class ids.
    pub fn classes(&self) -> &[u32] {
        &self.classes
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn n_classes(&self) -> usize {
        self.classes.len()
    }

    /// Position of each sample's class within [`Self::classes`].
    pub fn class_indices(&self) -> Vec<usize> {
        self.ids
            .iter()
            .map(|c| self.classes.binary_search(c).expect("label in class set"))
            .collect()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.classes.len()];
        for k in self.class_indices() {
            counts[k] += 1;
        }
        counts
    }

    /// Labels restricted to the given sample positions, in that order.
    pub fn select(&self, positions: &[usize]) -> Result<Self> {
        Self::new(positions.iter().map(|&p| self.ids[p]).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_zero_label() {
        assert!(matches!(
            ClassLabels::new(vec![1, 0, 2]),
            Err(Error::InvalidLabels(_))
        ));
    }

    #[test]
    fn declared_class_without_samples_is_rejected() {
        let err = ClassLabels::with_classes(vec![1, 1, 3], &[1, 2, 3]).unwrap_err();
        assert!(err.to_string().contains("[2]"), "{err}");
    }

    #[test]
    fn label_outside_declared_set_is_rejected() {
        assert!(ClassLabels::with_classes(vec![1, 4], &[1, 2]).is_err());
    }

    #[test]
    fn counts_follow_sorted_class_order() {
        let labels = ClassLabels::new(vec![3, 1, 3, 3]).unwrap();
        assert_eq!(labels.classes(), &[1, 3]);
        assert_eq!(labels.class_counts(), vec![1, 3]);
        assert_eq!(labels.class_indices(), vec![1, 0, 1, 1]);
    }
}
