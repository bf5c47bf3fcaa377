//! Evaluation: accuracy, atom interpretability, stratified cross-validation and
//! one-at-a-time hyperparameter sweeps.

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{CkscError, Result};
use crate::kernelcore::KernelMatrix;
use crate::labels::LabelMatrix;
use crate::recall::Recall;
use crate::train::{self, Hyperparams};

/// Percentage of positions where `predicted` equals `actual`.
pub fn accuracy(predicted: &[usize], actual: &[usize]) -> Result<f64> {
    if predicted.is_empty() {
        return Err(CkscError::Domain("accuracy of an empty prediction list".into()));
    }
    if predicted.len() != actual.len() {
        return Err(CkscError::Dimension(format!("{} predictions for {} labels", predicted.len(), actual.len())));
    }
    let hits = predicted.iter().zip(actual).filter(|(p, a)| p == a).count();
    Ok(100.0 * hits as f64 / predicted.len() as f64)
}

/// Largest single-class share of each atom's mass: `max_j rho_j^T a_i / 1^T H a_i`.
///
/// Atoms with zero total mass yield `None`.
pub fn interpretability(dictionary: &DMatrix<f64>, labels: &LabelMatrix) -> Result<Vec<Option<f64>>> {
    if dictionary.nrows() != labels.n_samples() {
        return Err(CkscError::Dimension(format!(
            "dictionary has {} rows, labels cover {} samples",
            dictionary.nrows(),
            labels.n_samples()
        )));
    }
    Ok(dictionary
        .column_iter()
        .map(|a| {
            let mut per_class = vec![0.0; labels.n_classes()];
            for (j, v) in a.iter().enumerate() {
                per_class[labels.class_of(j)] += v;
            }
            let total: f64 = per_class.iter().sum();
            (total > 0.0).then(|| per_class.iter().copied().fold(0.0, f64::max) / total)
        })
        .collect())
}

/// Mean over defined IP values and the number of undefined atoms.
pub fn mean_ip(ip: &[Option<f64>]) -> (Option<f64>, usize) {
    let defined: Vec<f64> = ip.iter().flatten().copied().collect();
    let undefined = ip.len() - defined.len();
    if defined.is_empty() {
        (None, undefined)
    } else {
        (Some(defined.iter().sum::<f64>() / defined.len() as f64), undefined)
    }
}

/// Population mean and standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Kernel plus labels of a labelled sample set.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub kernel: KernelMatrix,
    pub labels: LabelMatrix,
}

impl Dataset {
    pub fn new(kernel: KernelMatrix, labels: LabelMatrix) -> Result<Self> {
        if kernel.n() != labels.n_samples() {
            return Err(CkscError::Dimension(format!("{} labels for a kernel of size {}", labels.n_samples(), kernel.n())));
        }
        Ok(Self { kernel, labels })
    }

    pub fn len(&self) -> usize {
        self.kernel.n()
    }

    pub fn is_empty(&self) -> bool {
        self.kernel.n() == 0
    }
}

/// Evaluation of one train/test split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub accuracy_percent: f64,
    /// `None` for classes absent from the test split.
    pub per_class_accuracy: Vec<Option<f64>>,
    pub mean_ip: Option<f64>,
    pub per_atom_ip: Vec<Option<f64>>,
    pub undefined_ip_count: usize,
    pub unclassifiable_count: usize,
    pub objective_trace: Vec<f64>,
}

/// Trains on `train_idx` and evaluates on `test_idx`. Unclassifiable test
/// points count as errors.
pub fn evaluate_split(data: &Dataset, train_idx: &[usize], test_idx: &[usize], hyper: &Hyperparams) -> Result<EvalReport> {
    let kernel = data.kernel.submatrix(train_idx);
    let labels = data.labels.subset(train_idx);
    let model = train::train(&kernel, &labels, hyper)?;
    let recall = Recall::new(&model)?;
    let rows: Vec<_> = test_idx.iter().map(|&i| data.kernel.cross_row(i, train_idx)).collect();
    let predictions = recall.predict_batch(&rows)?;

    let actual: Vec<usize> = test_idx.iter().map(|&i| data.labels.class_of(i)).collect();
    let predicted: Vec<usize> = predictions.iter().map(|p| p.class_id.unwrap_or(usize::MAX)).collect();
    let p = data.labels.n_classes();
    let mut hits = vec![0usize; p];
    let mut totals = vec![0usize; p];
    for (pr, &ac) in predicted.iter().zip(&actual) {
        totals[ac] += 1;
        if *pr == ac {
            hits[ac] += 1;
        }
    }
    let per_atom_ip = interpretability(&model.dictionary, &model.labels)?;
    let (mean, undefined) = mean_ip(&per_atom_ip);
    Ok(EvalReport {
        accuracy_percent: if test_idx.is_empty() { f64::NAN } else { accuracy(&predicted, &actual)? },
        per_class_accuracy: (0..p).map(|c| (totals[c] > 0).then(|| 100.0 * hits[c] as f64 / totals[c] as f64)).collect(),
        mean_ip: mean,
        per_atom_ip,
        undefined_ip_count: undefined,
        unclassifiable_count: predictions.iter().filter(|p| p.is_unclassifiable()).count(),
        objective_trace: model.objective_trace,
    })
}

/// Stratified fold index per sample: each class is shuffled and dealt round-robin.
pub fn stratified_folds(labels: &LabelMatrix, folds: usize, seed: u64) -> Result<Vec<usize>> {
    if folds < 2 {
        return Err(CkscError::Domain("at least two folds are required".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut assignment = vec![0; labels.n_samples()];
    let mut next = 0;
    for class in 0..labels.n_classes() {
        let mut members = labels.members(class);
        if members.is_empty() {
            continue;
        }
        if members.len() < folds {
            return Err(CkscError::Stratification(format!(
                "class `{}` has {} samples, fewer than {folds} folds",
                labels.classes()[class],
                members.len()
            )));
        }
        members.shuffle(&mut rng);
        for m in members {
            assignment[m] = next % folds;
            next += 1;
        }
    }
    Ok(assignment)
}

/// Deterministic per-job seed (splitmix64 finalizer over the job coordinates).
pub fn derive_seed(master: u64, repeat: usize, fold: usize) -> u64 {
    let mut z = master
        .wrapping_add((repeat as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add((fold as u64).wrapping_add(1).wrapping_mul(0xBF58_476D_1CE4_E5B9));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CvConfig {
    pub folds: usize,
    /// Independent re-shuffles of the stratified split.
    pub repeats: usize,
    pub seed: u64,
}

impl Default for CvConfig {
    fn default() -> Self {
        Self { folds: 5, repeats: 1, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvReport {
    pub folds: usize,
    pub repeats: usize,
    pub seed: u64,
    pub mean_accuracy: f64,
    pub std_accuracy: f64,
    /// What the standard deviation was computed over.
    pub std_estimator: String,
    pub mean_ip: Option<f64>,
    pub unclassifiable_total: usize,
    pub fold_reports: Vec<EvalReport>,
}

pub fn crossvalidate(data: &Dataset, hyper: &Hyperparams, cv: &CvConfig) -> Result<CvReport> {
    if cv.repeats == 0 {
        return Err(CkscError::Domain("repeats must be at least 1".into()));
    }
    let mut jobs = Vec::new();
    for repeat in 0..cv.repeats {
        let assignment = stratified_folds(&data.labels, cv.folds, derive_seed(cv.seed, repeat, usize::MAX))?;
        for fold in 0..cv.folds {
            let (test, train): (Vec<usize>, Vec<usize>) = (0..data.len()).partition(|&i| assignment[i] == fold);
            let hyper = Hyperparams { seed: derive_seed(cv.seed, repeat, fold), ..hyper.clone() };
            jobs.push((train, test, hyper));
        }
    }
    let fold_reports = jobs
        .par_iter()
        .map(|(train, test, hyper)| evaluate_split(data, train, test, hyper))
        .collect::<Result<Vec<_>>>()?;

    let accs: Vec<f64> = fold_reports.iter().map(|r| r.accuracy_percent).collect();
    let (mean_accuracy, std_accuracy) = mean_std(&accs);
    let ips: Vec<f64> = fold_reports.iter().filter_map(|r| r.mean_ip).collect();
    Ok(CvReport {
        folds: cv.folds,
        repeats: cv.repeats,
        seed: cv.seed,
        mean_accuracy,
        std_accuracy,
        std_estimator: format!("population std over {} fold evaluations ({} repeats x {} folds)", accs.len(), cv.repeats, cv.folds),
        mean_ip: (!ips.is_empty()).then(|| mean_std(&ips).0),
        unclassifiable_total: fold_reports.iter().map(|r| r.unclassifiable_count).sum(),
        fold_reports,
    })
}

/// Parameter varied by a sweep; the other stays at its base value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "param", content = "values")]
pub enum SweepGrid {
    Alpha(Vec<f64>),
    Sparsity(Vec<usize>),
}

impl SweepGrid {
    pub fn name(&self) -> &'static str {
        match self {
            SweepGrid::Alpha(_) => "alpha",
            SweepGrid::Sparsity(_) => "sparsity",
        }
    }

    fn points(&self, base: &Hyperparams) -> Vec<(f64, Hyperparams)> {
        match self {
            SweepGrid::Alpha(v) => v.iter().map(|&a| (a, Hyperparams { alpha: a, ..base.clone() })).collect(),
            SweepGrid::Sparsity(v) => v.iter().map(|&t| (t as f64, Hyperparams { sparsity: t, ..base.clone() })).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub param_name: String,
    pub param_value: f64,
    pub mean_accuracy: f64,
    pub std_accuracy: f64,
}

pub fn sensitivity_sweep(data: &Dataset, base: &Hyperparams, grid: &SweepGrid, cv: &CvConfig) -> Result<Vec<SweepRow>> {
    let points = grid.points(base);
    if points.is_empty() {
        return Err(CkscError::Domain("sweep grid is empty".into()));
    }
    points
        .into_iter()
        .map(|(value, hyper)| {
            let report = crossvalidate(data, &hyper, cv)?;
            Ok(SweepRow {
                param_name: grid.name().to_string(),
                param_value: value,
                mean_accuracy: report.mean_accuracy,
                std_accuracy: report.std_accuracy,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn accuracy_examples() {
        assert_eq!(accuracy(&[0, 1, 2], &[0, 1, 2]).unwrap(), 100.0);
        assert_eq!(accuracy(&[1, 0], &[0, 1]).unwrap(), 0.0);
        assert_eq!(accuracy(&[0, 1, 1, 2], &[0, 1, 1, 1]).unwrap(), 75.0);
        assert!(matches!(accuracy(&[], &[]), Err(CkscError::Domain(_))));
        assert!(accuracy(&[0], &[0, 1]).is_err());
    }

    #[test]
    fn ip_examples() {
        let labels = LabelMatrix::from_indices(vec![0, 0, 1, 1], 2).unwrap();
        let a = DMatrix::from_row_slice(4, 3, &[0.2, 0.5, 0.0, 0.7, 0.0, 0.0, 0.0, 0.25, 0.0, 0.0, 0.25, 0.0]);
        let ip = interpretability(&a, &labels).unwrap();
        assert_eq!(ip, vec![Some(1.0), Some(0.5), None]);
        assert_eq!(mean_ip(&ip), (Some(0.75), 1));
    }

    #[test]
    fn ip_matches_direct_summation_and_is_scale_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let labels = LabelMatrix::from_indices((0..12).map(|i| i % 3).collect(), 3).unwrap();
        for _ in 0..50 {
            let a = DMatrix::from_fn(12, 1, |_, _| rng.random_range(0.0..1.0));
            let mut mass = [0.0; 3];
            for j in 0..12 {
                mass[j % 3] += a[(j, 0)];
            }
            let expect = mass.iter().copied().fold(0.0, f64::max) / mass.iter().sum::<f64>();
            let ip = interpretability(&a, &labels).unwrap()[0].unwrap();
            assert!((ip - expect).abs() < 1e-12);
            assert!(ip > 0.0 && ip <= 1.0);
            let scaled = interpretability(&(&a * 7.0), &labels).unwrap()[0].unwrap();
            assert!((scaled - ip).abs() < 1e-12);
        }
    }

    #[test]
    fn folds_are_stratified_and_seeded() {
        let labels = LabelMatrix::from_indices((0..30).map(|i| i % 3).collect(), 3).unwrap();
        let a = stratified_folds(&labels, 5, 9).unwrap();
        assert_eq!(a, stratified_folds(&labels, 5, 9).unwrap());
        for fold in 0..5 {
            for class in 0..3 {
                let n = (0..30).filter(|&i| a[i] == fold && i % 3 == class).count();
                assert_eq!(n, 2);
            }
        }
        let small = LabelMatrix::from_indices(vec![0, 0, 0, 1], 2).unwrap();
        assert!(matches!(stratified_folds(&small, 2, 0), Err(CkscError::Stratification(_))));
    }

    #[test]
    fn population_std() {
        assert_eq!(mean_std(&[1.0, 3.0]), (2.0, 1.0));
        assert_eq!(mean_std(&[5.0]), (5.0, 0.0));
    }
}
