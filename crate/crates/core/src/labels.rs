use nalgebra::DMatrix;

use crate::error::{CkscError, Result};

/// One-hot class indicator over the training samples.
///
/// Stored as a class index per sample; the dense `p x N` form is built on demand.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMatrix {
    classes: Vec<String>,
    assignment: Vec<usize>,
}

impl LabelMatrix {
    pub fn new(classes: Vec<String>, assignment: Vec<usize>) -> Result<Self> {
        if classes.is_empty() {
            return Err(CkscError::Domain("at least one class is required".into()));
        }
        if let Some((i, &c)) = assignment.iter().enumerate().find(|(_, &c)| c >= classes.len()) {
            return Err(CkscError::Domain(format!("sample {i} has class index {c} but only {} classes", classes.len())));
        }
        Ok(Self { classes, assignment })
    }

    /// Builds the class list from raw label names.
    ///
    /// Classes are ordered numerically when every name parses as an integer,
    /// lexicographically otherwise.
    pub fn from_names<S: AsRef<str>>(names: &[S]) -> Result<Self> {
        let mut classes: Vec<String> = names.iter().map(|s| s.as_ref().to_string()).collect();
        classes.sort();
        classes.dedup();
        if classes.iter().all(|c| c.parse::<i64>().is_ok()) {
            classes.sort_by_key(|c| c.parse::<i64>().unwrap());
        }
        let assignment = names
            .iter()
            .map(|s| classes.iter().position(|c| c == s.as_ref()).unwrap())
            .collect();
        Self::new(classes, assignment)
    }

    /// Labels with classes named `0..p`.
    pub fn from_indices(assignment: Vec<usize>, p: usize) -> Result<Self> {
        Self::new((0..p).map(|c| c.to_string()).collect(), assignment)
    }

    pub fn n_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn n_samples(&self) -> usize {
        self.assignment.len()
    }

    pub fn classes(&self) -> &[String] {
        &self.classes
    }

    pub fn assignment(&self) -> &[usize] {
        &self.assignment
    }

    pub fn class_of(&self, sample: usize) -> usize {
        self.assignment[sample]
    }

    pub fn members(&self, class: usize) -> Vec<usize> {
        (0..self.n_samples()).filter(|&i| self.assignment[i] == class).collect()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.n_classes()];
        for &c in &self.assignment {
            counts[c] += 1;
        }
        counts
    }

    /// Dense `p x N` matrix H.
    pub fn dense(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.n_classes(), self.n_samples(), |s, i| if self.assignment[i] == s { 1.0 } else { 0.0 })
    }

    /// `H^T (1 - I) H`, equivalently `(1 - H^T) H`: entry `(i, j)` is 1 when
    /// samples `i` and `j` belong to different classes.
    pub fn discord(&self) -> DMatrix<f64> {
        let n = self.n_samples();
        DMatrix::from_fn(n, n, |i, j| if self.assignment[i] != self.assignment[j] { 1.0 } else { 0.0 })
    }

    /// Restriction to a subset of samples, keeping the full class list.
    pub fn subset(&self, idx: &[usize]) -> LabelMatrix {
        LabelMatrix { classes: self.classes.clone(), assignment: idx.iter().map(|&i| self.assignment[i]).collect() }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dense_is_one_hot() {
        let h = LabelMatrix::from_indices(vec![0, 1, 1, 2], 3).unwrap();
        let d = h.dense();
        for i in 0..4 {
            assert_eq!(d.column(i).sum(), 1.0);
        }
        assert_eq!(d[(1, 2)], 1.0);
    }

    #[test]
    fn discord_matches_both_forms() {
        let h = LabelMatrix::from_indices(vec![0, 0, 1, 2, 1], 3).unwrap();
        let d = h.dense();
        let p = h.n_classes();
        let n = h.n_samples();
        let via_classes = d.transpose() * (DMatrix::from_element(p, p, 1.0) - DMatrix::identity(p, p)) * &d;
        let via_samples = (DMatrix::from_element(n, p, 1.0) - d.transpose()) * &d;
        assert_eq!(h.discord(), via_classes);
        assert_eq!(h.discord(), via_samples);
    }

    #[test]
    fn numeric_names_sort_numerically() {
        let h = LabelMatrix::from_names(&["10", "2", "2", "1"]).unwrap();
        assert_eq!(h.classes(), &["1", "2", "10"]);
        assert_eq!(h.assignment(), &[2, 1, 1, 0]);
        let h = LabelMatrix::from_names(&["b", "a"]).unwrap();
        assert_eq!(h.assignment(), &[1, 0]);
    }

    #[test]
    fn rejects_out_of_range_class() {
        assert!(LabelMatrix::from_indices(vec![0, 3], 2).is_err());
    }
}
