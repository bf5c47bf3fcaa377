#![allow(dead_code)]

use cksc::kernelcore::{bandwidth, distance_matrix, gaussian_kernel, TimeSeries};
use cksc::metrics::Dataset;
use cksc::synthetic::{generate, SyntheticSpec};
use cksc::{KernelMatrix, LabelMatrix};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Three well-separated classes, 20 samples each (N = 60).
pub fn block_spec(seed: u64) -> SyntheticSpec {
    SyntheticSpec { classes: 3, samples_per_class: 20, channels: 2, length: 30, separation: 1.0, noise: 0.05, seed }
}

pub fn dataset(spec: &SyntheticSpec) -> Dataset {
    let data = generate(spec).unwrap();
    let series: Vec<_> = data.iter().map(|d| d.series.clone()).collect();
    let dist = distance_matrix(&series, None).unwrap();
    let kernel = gaussian_kernel(&dist, bandwidth(&dist).unwrap()).unwrap();
    let labels = LabelMatrix::from_indices(data.iter().map(|d| d.class).collect(), spec.classes).unwrap();
    Dataset::new(kernel, labels).unwrap()
}

pub fn block_dataset() -> Dataset {
    dataset(&block_spec(7))
}

/// Gaussian-of-DTW kernel over short, low-amplitude random series of unequal
/// length. With the mean-distance bandwidth these are almost always indefinite.
pub fn short_series_kernel(rng: &mut ChaCha8Rng, n: usize) -> KernelMatrix {
    let scale = rng.random_range(0.05..0.4);
    let series: Vec<TimeSeries> = (0..n)
        .map(|_| {
            let len = rng.random_range(2..9);
            let v: Vec<f64> = (0..len).map(|_| scale * rng.random_range(-1.0..1.0)).collect();
            TimeSeries::univariate(&v).unwrap()
        })
        .collect();
    let d = distance_matrix(&series, None).unwrap();
    gaussian_kernel(&d, bandwidth(&d).unwrap()).unwrap()
}

/// Random labels over `p` classes with every class present (requires n >= p).
pub fn random_labels(rng: &mut ChaCha8Rng, n: usize, p: usize) -> LabelMatrix {
    let mut assignment: Vec<usize> = (0..n).map(|i| if i < p { i } else { rng.random_range(0..p) }).collect();
    for i in (1..n).rev() {
        assignment.swap(i, rng.random_range(0..=i));
    }
    LabelMatrix::from_indices(assignment, p).unwrap()
}

/// Non-negative vector with at most `t` non-zeros.
pub fn sparse_nonneg(rng: &mut ChaCha8Rng, n: usize, t: usize) -> DVector<f64> {
    let mut v = DVector::zeros(n);
    for _ in 0..t.min(n) {
        v[rng.random_range(0..n)] = rng.random_range(0.0..1.0);
    }
    v
}

pub fn sparse_nonneg_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, t: usize) -> DMatrix<f64> {
    let columns: Vec<DVector<f64>> = (0..cols).map(|_| sparse_nonneg(rng, rows, t)).collect();
    DMatrix::from_columns(&columns)
}

pub fn gaussian_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| rng.random_range(-1.0..1.0))
}

/// Smallest eigenvalue by cyclic Jacobi rotations, independent of the library solver.
pub fn jacobi_eigenvalues(m: &DMatrix<f64>) -> Vec<f64> {
    let n = m.nrows();
    let mut a = m.clone();
    for _ in 0..100 {
        let off: f64 = (0..n).flat_map(|i| (0..n).map(move |j| (i, j))).filter(|(i, j)| i != j).map(|(i, j)| a[(i, j)].powi(2)).sum();
        if off < 1e-26 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if a[(p, q)].abs() < 1e-300 {
                    continue;
                }
                let theta = (a[(q, q)] - a[(p, p)]) / (2.0 * a[(p, q)]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[(k, p)];
                    let akq = a[(k, q)];
                    a[(k, p)] = c * akp - s * akq;
                    a[(k, q)] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[(p, k)];
                    let aqk = a[(q, k)];
                    a[(p, k)] = c * apk - s * aqk;
                    a[(q, k)] = s * apk + c * aqk;
                }
            }
        }
    }
    let mut ev: Vec<f64> = (0..n).map(|i| a[(i, i)]).collect();
    ev.sort_by(f64::total_cmp);
    ev
}

/// Training objective evaluated by explicit loops over samples and class pairs.
pub fn naive_objective(k: &DMatrix<f64>, classes: &[usize], a: &DMatrix<f64>, x: &DMatrix<f64>, alpha: f64, beta: f64) -> f64 {
    let n = k.nrows();
    let r = a * x;
    let mut total = 0.0;
    for s in 0..n {
        // ||phi(y_s) - Phi r_s||^2
        let mut err = k[(s, s)];
        for j in 0..n {
            err -= 2.0 * k[(s, j)] * r[(j, s)];
            for l in 0..n {
                err += r[(j, s)] * k[(j, l)] * r[(l, s)];
            }
        }
        total += err;
        for j in 0..n {
            total += beta * r[(j, s)] * r[(j, s)];
            if classes[j] != classes[s] {
                total += alpha * r[(j, s)];
            }
        }
    }
    total
}
