//! Kernel construction: multivariate DTW distances, the Gaussian kernel with a
//! data-driven bandwidth, cross-kernels for unseen series, and spectral
//! diagnostics of the resulting Gram matrix.

use nalgebra::{DMatrix, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CkscError, Result};

/// Largest asymmetry tolerated in a kernel matrix.
pub const SYMMETRY_TOL: f64 = 1e-10;

/// A multivariate sequence stored as a `channels x steps` matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeries {
    values: DMatrix<f64>,
}

impl TimeSeries {
    pub fn new(values: DMatrix<f64>) -> Result<Self> {
        if values.nrows() == 0 || values.ncols() == 0 {
            return Err(CkscError::Domain("time series must have at least one channel and one step".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(CkscError::Domain("time series contains non-finite values".into()));
        }
        Ok(Self { values })
    }

    /// Builds a series from time-major rows (one row per step, one column per channel).
    pub fn from_steps(steps: &[Vec<f64>]) -> Result<Self> {
        let len = steps.len();
        let d = steps.first().map(|r| r.len()).unwrap_or(0);
        if steps.iter().any(|r| r.len() != d) {
            return Err(CkscError::Dimension("ragged time steps".into()));
        }
        Self::new(DMatrix::from_fn(d, len, |c, t| steps[t][c]))
    }

    pub fn univariate(values: &[f64]) -> Result<Self> {
        Self::new(DMatrix::from_row_slice(1, values.len(), values))
    }

    pub fn channels(&self) -> usize {
        self.values.nrows()
    }

    pub fn len(&self) -> usize {
        self.values.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.values.ncols() == 0
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    fn frame_distance(&self, i: usize, other: &TimeSeries, j: usize) -> f64 {
        let mut acc = 0.0;
        for c in 0..self.channels() {
            let d = self.values[(c, i)] - other.values[(c, j)];
            acc += d * d;
        }
        acc.sqrt()
    }
}

/// Classic three-neighbour DTW with Euclidean frame cost.
///
/// `band` is an optional Sakoe-Chiba half-width. It is widened to the length
/// difference of the two series so that a complete alignment always exists.
pub fn dtw_distance(a: &TimeSeries, b: &TimeSeries, band: Option<usize>) -> Result<f64> {
    if a.channels() != b.channels() {
        return Err(CkscError::Dimension(format!(
            "channel count mismatch: {} vs {}",
            a.channels(),
            b.channels()
        )));
    }
    if a.is_empty() || b.is_empty() {
        return Err(CkscError::Domain("empty series".into()));
    }
    if band == Some(0) {
        return Err(CkscError::Domain("band must be at least 1".into()));
    }
    let (n, m) = (a.len(), b.len());
    let window = band.map(|w| w.max(n.abs_diff(m)));

    let mut prev = vec![f64::INFINITY; m + 1];
    let mut curr = vec![f64::INFINITY; m + 1];
    prev[0] = 0.0;
    for i in 1..=n {
        curr.fill(f64::INFINITY);
        let (lo, hi) = match window {
            Some(w) => (i.saturating_sub(w).max(1), (i + w).min(m)),
            None => (1, m),
        };
        for j in lo..=hi {
            let best = prev[j].min(curr[j - 1]).min(prev[j - 1]);
            curr[j] = a.frame_distance(i - 1, b, j - 1) + best;
        }
        std::mem::swap(&mut prev, &mut curr);
    }
    Ok(prev[m])
}

/// Pairwise DTW distances over a sample set. Pairs are evaluated in parallel.
pub fn distance_matrix(series: &[TimeSeries], band: Option<usize>) -> Result<DMatrix<f64>> {
    let n = series.len();
    let pairs: Vec<(usize, usize)> = (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).collect();
    let dists = pairs
        .par_iter()
        .map(|&(i, j)| dtw_distance(&series[i], &series[j], band))
        .collect::<Result<Vec<f64>>>()?;
    let mut out = DMatrix::zeros(n, n);
    for (&(i, j), d) in pairs.iter().zip(dists) {
        out[(i, j)] = d;
        out[(j, i)] = d;
    }
    Ok(out)
}

/// DTW distances from each query series to each reference series (`queries x references`).
pub fn cross_distances(queries: &[TimeSeries], references: &[TimeSeries], band: Option<usize>) -> Result<DMatrix<f64>> {
    let rows = queries
        .par_iter()
        .map(|q| references.iter().map(|r| dtw_distance(q, r, band)).collect::<Result<Vec<f64>>>())
        .collect::<Result<Vec<Vec<f64>>>>()?;
    Ok(DMatrix::from_fn(queries.len(), references.len(), |i, j| rows[i][j]))
}

/// Mean distance over all ordered pairs `i != j`.
pub fn bandwidth(distances: &DMatrix<f64>) -> Result<f64> {
    let n = distances.nrows();
    if distances.ncols() != n {
        return Err(CkscError::Dimension("distance matrix must be square".into()));
    }
    if n < 2 {
        return Err(CkscError::Domain("bandwidth needs at least two samples".into()));
    }
    let mut sum = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                let d = distances[(i, j)];
                if !d.is_finite() || d < 0.0 {
                    return Err(CkscError::Domain(format!("invalid distance {d} at ({i}, {j})")));
                }
                sum += d;
            }
        }
    }
    let delta = sum / (n * (n - 1)) as f64;
    if delta <= 0.0 {
        return Err(CkscError::DegenerateBandwidth);
    }
    Ok(delta)
}

fn gaussian(d: f64, delta: f64) -> f64 {
    (-(d * d) / delta).exp()
}

/// `exp(-D^2 / delta)` applied entrywise to a pairwise distance matrix.
pub fn gaussian_kernel(distances: &DMatrix<f64>, delta: f64) -> Result<KernelMatrix> {
    if !(delta.is_finite() && delta > 0.0) {
        return Err(CkscError::Domain(format!("bandwidth must be positive, got {delta}")));
    }
    let n = distances.nrows();
    if distances.ncols() != n {
        return Err(CkscError::Dimension("distance matrix must be square".into()));
    }
    let mut k = DMatrix::zeros(n, n);
    for i in 0..n {
        k[(i, i)] = 1.0;
        for j in i + 1..n {
            let v = gaussian(0.5 * (distances[(i, j)] + distances[(j, i)]), delta);
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
    }
    KernelMatrix::new(k)
}

/// Gaussian cross-kernel rows for a `queries x references` distance matrix.
pub fn gaussian_cross_kernel(distances: &DMatrix<f64>, delta: f64) -> Result<Vec<CrossKernel>> {
    if !(delta.is_finite() && delta > 0.0) {
        return Err(CkscError::Domain(format!("bandwidth must be positive, got {delta}")));
    }
    distances
        .row_iter()
        .map(|row| CrossKernel::new(row.iter().map(|&d| gaussian(d, delta)).collect()))
        .collect()
}

/// Symmetric `N x N` Gram matrix of the training samples.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelMatrix {
    values: DMatrix<f64>,
}

impl KernelMatrix {
    pub fn new(values: DMatrix<f64>) -> Result<Self> {
        let n = values.nrows();
        if values.ncols() != n {
            return Err(CkscError::Dimension(format!("kernel must be square, got {}x{}", n, values.ncols())));
        }
        if n == 0 {
            return Err(CkscError::Domain("kernel must not be empty".into()));
        }
        if let Some((idx, v)) = values.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(CkscError::Domain(format!("non-finite kernel entry {v} at flat index {idx}")));
        }
        for i in 0..n {
            for j in i + 1..n {
                if (values[(i, j)] - values[(j, i)]).abs() > SYMMETRY_TOL {
                    return Err(CkscError::Contract(format!("kernel not symmetric at ({i}, {j})")));
                }
            }
        }
        Ok(Self { values })
    }

    pub fn identity(n: usize) -> Self {
        Self { values: DMatrix::identity(n, n) }
    }

    pub fn n(&self) -> usize {
        self.values.nrows()
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn into_inner(self) -> DMatrix<f64> {
        self.values
    }

    /// Principal submatrix on `idx` (used for fold splits).
    pub fn submatrix(&self, idx: &[usize]) -> KernelMatrix {
        KernelMatrix { values: self.values.select_rows(idx).select_columns(idx) }
    }

    /// Cross-kernel row of sample `row` against the samples in `cols`.
    pub fn cross_row(&self, row: usize, cols: &[usize]) -> CrossKernel {
        CrossKernel { values: cols.iter().map(|&c| self.values[(row, c)]).collect() }
    }

    /// SHA-256 over the size and the row-major little-endian entries.
    pub fn content_hash(&self) -> String {
        let mut h = Sha256::new();
        h.update((self.n() as u64).to_le_bytes());
        for i in 0..self.n() {
            for j in 0..self.n() {
                h.update(self.values[(i, j)].to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }

    /// Zero out negative eigenvalues: `V diag(max(lambda, 0)) V^T`.
    pub fn clip_psd(&self) -> Result<KernelMatrix> {
        let eig = SymmetricEigen::try_new(self.values.clone(), f64::EPSILON, 0)
            .ok_or_else(|| CkscError::numeric("clip_psd", "eigensolver did not converge"))?;
        let clipped = eig.eigenvalues.map(|l| l.max(0.0));
        let v = &eig.eigenvectors;
        let m = v * DMatrix::from_diagonal(&clipped) * v.transpose();
        KernelMatrix::new((&m + m.transpose()) * 0.5)
    }
}

/// Kernel values of one query sample against all `N` training samples.
#[derive(Debug, Clone, PartialEq)]
pub struct CrossKernel {
    values: Vec<f64>,
}

impl CrossKernel {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(CkscError::Domain("cross-kernel contains non-finite values".into()));
        }
        Ok(Self { values })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

fn symmetric_eigen(values: &DMatrix<f64>) -> Result<SymmetricEigen<f64, nalgebra::Dyn>> {
    if values.nrows() != values.ncols() {
        return Err(CkscError::Dimension("eigen-decomposition needs a square matrix".into()));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(CkscError::Domain("matrix contains non-finite entries".into()));
    }
    SymmetricEigen::try_new(values.clone(), f64::EPSILON, 0)
        .ok_or_else(|| CkscError::numeric("symmetric eigensolver", "did not converge"))
}

/// Eigenvalues of a symmetric matrix, ascending.
pub fn symmetric_spectrum(values: &DMatrix<f64>) -> Result<Vec<f64>> {
    let mut ev: Vec<f64> = symmetric_eigen(values)?.eigenvalues.iter().copied().collect();
    ev.sort_by(f64::total_cmp);
    Ok(ev)
}

/// Eigenpairs of a symmetric matrix, ascending by eigenvalue.
pub fn symmetric_eigenpairs(values: &DMatrix<f64>) -> Result<Vec<(f64, Vec<f64>)>> {
    let eig = symmetric_eigen(values)?;
    let mut pairs: Vec<(f64, Vec<f64>)> = eig
        .eigenvalues
        .iter()
        .zip(eig.eigenvectors.column_iter())
        .map(|(&l, v)| (l, v.iter().copied().collect()))
        .collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    Ok(pairs)
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn min_eigenvalue(values: &DMatrix<f64>) -> Result<f64> {
    Ok(symmetric_spectrum(values)?.first().copied().unwrap_or(0.0))
}

pub fn gram_spectrum(k: &KernelMatrix) -> Result<Vec<f64>> {
    symmetric_spectrum(k.values())
}

/// Summary written next to a kernel by the `kernel` command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrumReport {
    pub eigenvalues: Vec<f64>,
    pub lambda_min: f64,
    pub lambda_max: f64,
    pub negative_count: usize,
}

impl SpectrumReport {
    pub fn from_kernel(k: &KernelMatrix) -> Result<Self> {
        let eigenvalues = gram_spectrum(k)?;
        Ok(Self {
            lambda_min: eigenvalues[0],
            lambda_max: *eigenvalues.last().unwrap(),
            negative_count: eigenvalues.iter().filter(|&&l| l < 0.0).count(),
            eigenvalues,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn uni(v: &[f64]) -> TimeSeries {
        TimeSeries::univariate(v).unwrap()
    }

    fn random_series(rng: &mut ChaCha8Rng, d: usize, len: usize) -> TimeSeries {
        TimeSeries::new(DMatrix::from_fn(d, len, |_, _| rng.random_range(-1.0..1.0))).unwrap()
    }

    /// Minimum over every monotone warping path, enumerated recursively.
    fn brute_force_dtw(a: &[f64], b: &[f64]) -> f64 {
        fn walk(a: &[f64], b: &[f64], i: usize, j: usize, acc: f64, best: &mut f64) {
            let acc = acc + (a[i] - b[j]).abs();
            if i + 1 == a.len() && j + 1 == b.len() {
                *best = best.min(acc);
                return;
            }
            if i + 1 < a.len() {
                walk(a, b, i + 1, j, acc, best);
            }
            if j + 1 < b.len() {
                walk(a, b, i, j + 1, acc, best);
            }
            if i + 1 < a.len() && j + 1 < b.len() {
                walk(a, b, i + 1, j + 1, acc, best);
            }
        }
        let mut best = f64::INFINITY;
        walk(a, b, 0, 0, 0.0, &mut best);
        best
    }

    #[test]
    fn dtw_self_distance_is_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let s = random_series(&mut rng, 3, 9);
        assert_eq!(dtw_distance(&s, &s, None).unwrap(), 0.0);
    }

    #[test]
    fn dtw_repeated_frame_is_zero() {
        assert_eq!(dtw_distance(&uni(&[0.0]), &uni(&[0.0, 0.0, 0.0]), None).unwrap(), 0.0);
    }

    #[test]
    fn dtw_matches_path_enumeration() {
        // all monotone paths on the 3x2 grid: the best pairs 2 with either 1 or 3
        let oracle = brute_force_dtw(&[1.0, 2.0, 3.0], &[1.0, 3.0]);
        assert_eq!(oracle, 1.0);
        let got = dtw_distance(&uni(&[1.0, 2.0, 3.0]), &uni(&[1.0, 3.0]), None).unwrap();
        assert!((got - oracle).abs() < 1e-12);

        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..30 {
            let la = rng.random_range(1..6);
            let lb = rng.random_range(1..6);
            let a: Vec<f64> = (0..la).map(|_| rng.random_range(-2.0..2.0)).collect();
            let b: Vec<f64> = (0..lb).map(|_| rng.random_range(-2.0..2.0)).collect();
            let got = dtw_distance(&uni(&a), &uni(&b), None).unwrap();
            assert!((got - brute_force_dtw(&a, &b)).abs() < 1e-12);
        }
    }

    #[test]
    fn dtw_is_symmetric() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let (la, lb) = (rng.random_range(1..12), rng.random_range(1..12));
            let a = random_series(&mut rng, 2, la);
            let b = random_series(&mut rng, 2, lb);
            let ab = dtw_distance(&a, &b, None).unwrap();
            let ba = dtw_distance(&b, &a, None).unwrap();
            assert!((ab - ba).abs() <= 1e-12);
            let ab = dtw_distance(&a, &b, Some(2)).unwrap();
            let ba = dtw_distance(&b, &a, Some(2)).unwrap();
            assert!((ab - ba).abs() <= 1e-12);
        }
    }

    #[test]
    fn dtw_band_never_beats_unconstrained() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let a = random_series(&mut rng, 2, 10);
            let b = random_series(&mut rng, 2, 7);
            let free = dtw_distance(&a, &b, None).unwrap();
            let banded = dtw_distance(&a, &b, Some(1)).unwrap();
            assert!(banded.is_finite());
            assert!(banded >= free - 1e-12);
            assert_eq!(dtw_distance(&a, &b, Some(100)).unwrap(), free);
        }
    }

    #[test]
    fn dtw_errors() {
        let a = TimeSeries::new(DMatrix::zeros(2, 3)).unwrap();
        let b = TimeSeries::new(DMatrix::zeros(3, 3)).unwrap();
        assert!(matches!(dtw_distance(&a, &b, None), Err(CkscError::Dimension(_))));
        assert!(matches!(dtw_distance(&a, &a, Some(0)), Err(CkscError::Domain(_))));
        assert!(matches!(TimeSeries::new(DMatrix::zeros(1, 0)), Err(CkscError::Domain(_))));
    }

    #[test]
    fn bandwidth_examples() {
        let d = DMatrix::from_row_slice(2, 2, &[0.0, 4.0, 4.0, 0.0]);
        assert_eq!(bandwidth(&d).unwrap(), 4.0);
        let d = DMatrix::from_row_slice(3, 3, &[0.0, 1.0, 2.0, 1.0, 0.0, 3.0, 2.0, 3.0, 0.0]);
        assert_eq!(bandwidth(&d).unwrap(), 2.0);
    }

    #[test]
    fn bandwidth_matches_direct_summation() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut d = DMatrix::zeros(5, 5);
        for i in 0..5 {
            for j in i + 1..5 {
                let v = rng.random_range(0.1..3.0);
                d[(i, j)] = v;
                d[(j, i)] = v;
            }
        }
        let mut total = 0.0;
        let mut count = 0;
        for i in 0..5 {
            for j in 0..5 {
                if i != j {
                    total += d[(i, j)];
                    count += 1;
                }
            }
        }
        assert_eq!(count, 20);
        assert!((bandwidth(&d).unwrap() - total / 20.0).abs() < 1e-12);

        // relabeling the samples leaves the mean unchanged
        let perm = [3, 0, 4, 1, 2];
        let p = DMatrix::from_fn(5, 5, |i, j| d[(perm[i], perm[j])]);
        assert!((bandwidth(&p).unwrap() - bandwidth(&d).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn bandwidth_errors() {
        assert!(matches!(bandwidth(&DMatrix::zeros(1, 1)), Err(CkscError::Domain(_))));
        assert!(matches!(bandwidth(&DMatrix::zeros(3, 3)), Err(CkscError::DegenerateBandwidth)));
    }

    #[test]
    fn gaussian_kernel_values() {
        let d = DMatrix::from_row_slice(2, 2, &[0.0, 2.0, 2.0, 0.0]);
        let k = gaussian_kernel(&d, 4.0).unwrap();
        assert_eq!(k.values()[(0, 0)], 1.0);
        assert!((k.values()[(0, 1)] - (-1.0f64).exp()).abs() < 1e-15);
        assert!((k.values()[(0, 1)] - 0.367879).abs() < 1e-6);
        assert!(matches!(gaussian_kernel(&d, 0.0), Err(CkscError::Domain(_))));
        assert!(matches!(gaussian_kernel(&d, -1.0), Err(CkscError::Domain(_))));
    }

    #[test]
    fn gaussian_pipeline_matches_scalar_recomputation() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let series: Vec<TimeSeries> = (0..4).map(|i| random_series(&mut rng, 2, 5 + i)).collect();
        let dist = distance_matrix(&series, None).unwrap();
        let delta = bandwidth(&dist).unwrap();
        let k = gaussian_kernel(&dist, delta).unwrap();
        for i in 0..4 {
            for j in 0..4 {
                let dij = dtw_distance(&series[i], &series[j], None).unwrap();
                let expect = (-dij * dij / delta).exp();
                assert!((k.values()[(i, j)] - expect).abs() < 1e-14);
                assert!(k.values()[(i, j)] > 0.0 && k.values()[(i, j)] <= 1.0);
            }
        }
    }

    #[test]
    fn spectrum_examples() {
        assert_eq!(gram_spectrum(&KernelMatrix::identity(3)).unwrap(), vec![1.0, 1.0, 1.0]);
        let ones = KernelMatrix::new(DMatrix::from_element(2, 2, 1.0)).unwrap();
        let ev = gram_spectrum(&ones).unwrap();
        assert!(ev[0].abs() < 1e-12 && (ev[1] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn spectrum_residuals() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let m = DMatrix::from_fn(6, 6, |_, _| rng.random_range(-1.0..1.0));
        let sym = (&m + m.transpose()) * 0.5;
        let pairs = symmetric_eigenpairs(&sym).unwrap();
        for w in pairs.windows(2) {
            assert!(w[0].0 <= w[1].0);
        }
        for (l, v) in pairs {
            let v = nalgebra::DVector::from_vec(v);
            assert!((&sym * &v - &v * l).norm() <= 1e-8);
        }
    }

    #[test]
    fn kernel_rejects_bad_input() {
        let asym = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.4, 1.0]);
        assert!(matches!(KernelMatrix::new(asym), Err(CkscError::Contract(_))));
        let nan = DMatrix::from_row_slice(2, 2, &[1.0, f64::NAN, f64::NAN, 1.0]);
        assert!(matches!(KernelMatrix::new(nan), Err(CkscError::Domain(_))));
    }

    #[test]
    fn clip_psd_removes_negative_eigenvalues() {
        let k = KernelMatrix::new(DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0])).unwrap();
        let ev = gram_spectrum(&k.clip_psd().unwrap()).unwrap();
        assert!(ev[0] >= -1e-12);
        assert!((ev[1] - 3.0).abs() < 1e-12);
    }

    #[test]
    fn content_hash_tracks_values() {
        let a = KernelMatrix::identity(3);
        let mut m = DMatrix::identity(3, 3);
        assert_eq!(a.content_hash(), KernelMatrix::new(m.clone()).unwrap().content_hash());
        m[(0, 1)] = 1e-12;
        m[(1, 0)] = 1e-12;
        assert_ne!(a.content_hash(), KernelMatrix::new(m).unwrap().content_hash());
    }
}
