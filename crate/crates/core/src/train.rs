//! Dictionary learning: alternating non-negative sparse-code and dictionary
//! updates, each column solved as a quadratic program by [`crate::nqp`].
//!
//! The training objective over dictionary `A` (`N x k`) and codes `X` (`k x N`) is
//!
//! ```text
//! J = Tr(K) + Tr(X^T A^T K A X) - 2 Tr(K A X) + beta ||A X||_F^2 + alpha Tr((1 - H^T) H A X)
//! ```
//!
//! subject to non-negativity, at most `T` non-zeros per column of `A` and `X`,
//! and unit feature-space norm `a_i^T K a_i = 1` for every atom.

use log::{debug, info};
use nalgebra::{DMatrix, DVector};
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{CkscError, Result};
use crate::kernelcore::{min_eigenvalue, KernelMatrix};
use crate::labels::LabelMatrix;
use crate::nqp::{self, NqpConfig, QuadProgram};

/// Offset added on top of the eigenvalue shift.
pub const BETA_EPS: f64 = 1e-10;
/// Kernel norms at or below this mark an atom as dead.
pub const DEAD_NORM: f64 = 1e-12;
/// Tolerance on `|a^T K a - 1|` for live atoms.
pub const UNIT_NORM_TOL: f64 = 1e-8;

/// Training hyperparameters.
///
/// `alpha` weights the discriminative term (it is also the parameter usually
/// called lambda when tuning). `sparsity` is the cap `T` on non-zeros per column
/// of both `A` and `X`. The dictionary holds `atoms` columns, defaulting to
/// `classes * sparsity`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Hyperparams {
    pub alpha: f64,
    pub sparsity: usize,
    #[serde(default)]
    pub atoms: Option<usize>,
    pub max_outer: usize,
    pub rel_tol: f64,
    pub seed: u64,
    #[serde(default)]
    pub nqp: NqpConfig,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Self { alpha: 0.1, sparsity: 4, atoms: None, max_outer: 50, rel_tol: 1e-4, seed: 0, nqp: NqpConfig::default() }
    }
}

impl Hyperparams {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha.is_finite() && self.alpha >= 0.0) {
            return Err(CkscError::schema("alpha", format!("must be a finite non-negative number, got {}", self.alpha)));
        }
        if self.sparsity == 0 {
            return Err(CkscError::schema("sparsity", "must be at least 1"));
        }
        if self.atoms == Some(0) {
            return Err(CkscError::schema("atoms", "must be at least 1"));
        }
        if self.max_outer == 0 {
            return Err(CkscError::schema("max_outer", "must be at least 1"));
        }
        if self.rel_tol.is_nan() || self.rel_tol <= 0.0 {
            return Err(CkscError::schema("rel_tol", "must be positive"));
        }
        if self.nqp.tol.is_nan() || self.nqp.tol <= 0.0 || self.nqp.max_inner == 0 {
            return Err(CkscError::schema("nqp", "tol must be positive and max_inner at least 1"));
        }
        Ok(())
    }

    pub fn dictionary_size(&self, classes: usize) -> usize {
        self.atoms.unwrap_or(classes * self.sparsity)
    }
}

/// Ridge making `K + beta I` and `K + alpha H^T (1 - I) H + beta I` positive semi-definite.
///
/// `beta = max(0, -lambda_min(V), -lambda_min(K)) + BETA_EPS` where
/// `V = K + alpha H^T (1 - I) H`.
pub fn compute_beta(k: &KernelMatrix, h: &LabelMatrix, alpha: f64) -> Result<f64> {
    if h.n_samples() != k.n() {
        return Err(CkscError::Dimension(format!("{} labels for a kernel of size {}", h.n_samples(), k.n())));
    }
    let v = k.values() + h.discord() * alpha;
    let lv = min_eigenvalue(&v)?;
    let lk = min_eigenvalue(k.values())?;
    if !lv.is_finite() || !lk.is_finite() {
        return Err(CkscError::numeric("compute_beta", "non-finite eigenvalue"));
    }
    Ok(0.0f64.max(-lv).max(-lk) + BETA_EPS)
}

fn symmetrize(m: DMatrix<f64>) -> DMatrix<f64> {
    (&m + m.transpose()) * 0.5
}

fn ridge(k: &KernelMatrix, beta: f64) -> DMatrix<f64> {
    let mut kb = k.values().clone();
    for i in 0..kb.nrows() {
        kb[(i, i)] += beta;
    }
    kb
}

fn check_dictionary_shape(k: &KernelMatrix, a: &DMatrix<f64>) -> Result<()> {
    if a.nrows() != k.n() {
        return Err(CkscError::Dimension(format!("dictionary has {} rows, kernel size is {}", a.nrows(), k.n())));
    }
    Ok(())
}

/// Sparse-code sub-problem for training sample `i`:
/// `Q = A^T (K + beta I) A`, `b = A^T (alpha H^T (1 - h_i) - 2 K e_i)`.
pub fn build_x_subproblem(
    k: &KernelMatrix,
    a: &DMatrix<f64>,
    h: &LabelMatrix,
    i: usize,
    alpha: f64,
    beta: f64,
    sparsity: usize,
) -> Result<QuadProgram> {
    check_dictionary_shape(k, a)?;
    if h.n_samples() != k.n() || i >= k.n() {
        return Err(CkscError::Dimension("label matrix or sample index inconsistent with kernel".into()));
    }
    let q = symmetrize(a.transpose() * ridge(k, beta) * a);
    let other_class = DVector::from_fn(k.n(), |j, _| if h.class_of(j) != h.class_of(i) { 1.0 } else { 0.0 });
    let b = a.transpose() * (other_class * alpha - k.values().column(i) * 2.0);
    QuadProgram::new(q, b, sparsity.min(a.ncols()))
}

/// `E_i = I - sum_{j != i} a_j x^j`.
pub fn residual_operator(a: &DMatrix<f64>, x: &DMatrix<f64>, i: usize) -> Result<DMatrix<f64>> {
    if a.ncols() != x.nrows() || a.nrows() != x.ncols() || i >= a.ncols() {
        return Err(CkscError::Dimension("dictionary and codes shapes are inconsistent".into()));
    }
    let n = a.nrows();
    let mut e = DMatrix::identity(n, n) - a * x;
    e += a.column(i) * x.row(i);
    Ok(e)
}

/// Dictionary sub-problem for atom `atom` with the other atoms fixed:
/// `Q = ||x^i||^2 (K + beta I)`,
/// `b = [x^i (alpha (1 - H^T) H + 2 beta (I - E_i^T) - 2 E_i^T K)]^T`.
///
/// Fails with [`CkscError::DeadAtom`] when the code row `x^i` is zero.
#[allow(clippy::too_many_arguments)]
pub fn build_a_subproblem(
    k: &KernelMatrix,
    h: &LabelMatrix,
    e_i: &DMatrix<f64>,
    x_row: &DVector<f64>,
    atom: usize,
    alpha: f64,
    beta: f64,
    sparsity: usize,
) -> Result<QuadProgram> {
    let n = k.n();
    if e_i.nrows() != n || e_i.ncols() != n || x_row.len() != n || h.n_samples() != n {
        return Err(CkscError::Dimension("residual operator, code row or labels inconsistent with kernel".into()));
    }
    let e_r = e_i * x_row;
    assemble_a_subproblem(k, &ridge(k, beta), &h.discord(), x_row, &e_r, atom, alpha, beta, sparsity)
}

#[allow(clippy::too_many_arguments)]
fn assemble_a_subproblem(
    k: &KernelMatrix,
    k_ridge: &DMatrix<f64>,
    discord: &DMatrix<f64>,
    x_row: &DVector<f64>,
    e_r: &DVector<f64>,
    atom: usize,
    alpha: f64,
    beta: f64,
    sparsity: usize,
) -> Result<QuadProgram> {
    let rr = x_row.norm_squared();
    if rr == 0.0 {
        return Err(CkscError::DeadAtom(atom));
    }
    let q = k_ridge * rr;
    let b = discord * x_row * alpha + (x_row - e_r) * (2.0 * beta) - k.values() * e_r * 2.0;
    QuadProgram::new(q, b, sparsity.min(k.n()))
}

/// Breakdown of the training objective.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveTerms {
    /// `||Phi(Y) - Phi(Y) A X||_F^2` through the kernel.
    pub reconstruction: f64,
    /// `beta ||A X||_F^2`.
    pub ridge: f64,
    /// `alpha Tr((1 - H^T) H A X)`.
    pub discriminant: f64,
}

impl ObjectiveTerms {
    pub fn total(&self) -> f64 {
        self.reconstruction + self.ridge + self.discriminant
    }
}

pub fn objective_terms(
    k: &KernelMatrix,
    h: &LabelMatrix,
    a: &DMatrix<f64>,
    x: &DMatrix<f64>,
    alpha: f64,
    beta: f64,
) -> Result<ObjectiveTerms> {
    check_dictionary_shape(k, a)?;
    if a.ncols() != x.nrows() || x.ncols() != k.n() || h.n_samples() != k.n() {
        return Err(CkscError::Dimension("dictionary, codes and labels are inconsistent".into()));
    }
    let r = a * x;
    let kr = k.values() * &r;
    let reconstruction = k.values().trace() + kr.dot(&r) - 2.0 * kr.trace();
    let ridge = beta * r.norm_squared();
    let discriminant = if h.n_classes() == 1 {
        0.0
    } else {
        // Tr((1 - H^T) H R) = sum of R_ji over sample pairs from different classes
        let mut acc = 0.0;
        for i in 0..k.n() {
            for j in 0..k.n() {
                if h.class_of(i) != h.class_of(j) {
                    acc += r[(j, i)];
                }
            }
        }
        alpha * acc
    };
    Ok(ObjectiveTerms { reconstruction, ridge, discriminant })
}

pub fn objective(
    k: &KernelMatrix,
    h: &LabelMatrix,
    a: &DMatrix<f64>,
    x: &DMatrix<f64>,
    alpha: f64,
    beta: f64,
) -> Result<f64> {
    Ok(objective_terms(k, h, a, x, alpha, beta)?.total())
}

/// Which half of an outer iteration just finished.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HalfStep {
    Codes,
    Dictionary,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub iteration: usize,
    pub half_step: HalfStep,
    pub terms: ObjectiveTerms,
    pub objective: f64,
}

/// Checks non-negativity, column cardinality and unit kernel norm of live atoms.
pub fn check_feasibility(k: &KernelMatrix, a: &DMatrix<f64>, x: &DMatrix<f64>, sparsity: usize) -> Result<()> {
    if a.iter().chain(x.iter()).any(|&v| v < 0.0 || !v.is_finite()) {
        return Err(CkscError::Contract("negative or non-finite entry in dictionary or codes".into()));
    }
    let nnz = |c: nalgebra::DVectorView<f64>| c.iter().filter(|&&v| v != 0.0).count();
    for (i, col) in a.column_iter().enumerate() {
        let count = nnz(col);
        if count > sparsity {
            return Err(CkscError::Contract(format!("atom {i} has {count} non-zeros, cap is {sparsity}")));
        }
        if count > 0 {
            let norm = (k.values() * col).dot(&col);
            if (norm - 1.0).abs() > UNIT_NORM_TOL {
                return Err(CkscError::Contract(format!("atom {i} has kernel norm {norm}")));
            }
        }
    }
    for (i, col) in x.column_iter().enumerate() {
        let count = nnz(col);
        if count > sparsity {
            return Err(CkscError::Contract(format!("code {i} has {count} non-zeros, cap is {sparsity}")));
        }
    }
    Ok(())
}

/// Shared read-only quantities for one training run.
struct Context<'a> {
    kernel: &'a KernelMatrix,
    labels: &'a LabelMatrix,
    discord: DMatrix<f64>,
    k_ridge: DMatrix<f64>,
    alpha: f64,
    beta: f64,
    sparsity: usize,
    nqp: NqpConfig,
    /// Per class, member samples in a kernel-derived canonical order.
    members: Vec<Vec<usize>>,
}

impl<'a> Context<'a> {
    fn new(kernel: &'a KernelMatrix, labels: &'a LabelMatrix, hyper: &Hyperparams, beta: f64) -> Self {
        // order by descending kernel row sum so seeding does not depend on sample order
        let row_sum: Vec<f64> = kernel.values().row_iter().map(|r| r.sum()).collect();
        let members = (0..labels.n_classes())
            .map(|c| {
                let mut m = labels.members(c);
                m.sort_by(|&i, &j| row_sum[j].total_cmp(&row_sum[i]).then(i.cmp(&j)));
                m
            })
            .collect();
        Self {
            kernel,
            labels,
            discord: labels.discord(),
            k_ridge: ridge(kernel, beta),
            alpha: hyper.alpha,
            beta,
            sparsity: hyper.sparsity,
            nqp: hyper.nqp,
            members,
        }
    }

    fn normalize(&self, a: DVector<f64>) -> Option<DVector<f64>> {
        let n2 = (self.kernel.values() * &a).dot(&a);
        (n2 > DEAD_NORM && n2.is_finite()).then(|| a / n2.sqrt())
    }

    /// Random convex combination of up to `T` samples of `class`, kernel-normalized.
    fn seed_atom(&self, class: usize, rng: &mut ChaCha8Rng) -> Result<DVector<f64>> {
        let n = self.kernel.n();
        let all: Vec<usize>;
        let pool = if self.members[class].is_empty() {
            all = (0..n).collect();
            &all
        } else {
            &self.members[class]
        };
        let take = self.sparsity.min(pool.len());
        let picks = index::sample(rng, pool.len(), take);
        let weights: Vec<f64> = (0..take).map(|_| 1.0 - rng.random::<f64>()).collect();
        let total: f64 = weights.iter().sum();
        let mut a = DVector::zeros(n);
        for (pos, w) in picks.iter().zip(&weights) {
            a[pool[pos]] = w / total;
        }
        if let Some(a) = self.normalize(a) {
            return Ok(a);
        }
        for &j in pool {
            if let Some(a) = self.normalize(DVector::from_fn(n, |i, _| if i == j { 1.0 } else { 0.0 })) {
                return Ok(a);
            }
        }
        Err(CkscError::numeric("atom seeding", format!("no sample of class {class} has positive kernel norm")))
    }

    fn init_dictionary(&self, atoms: usize, rng: &mut ChaCha8Rng) -> Result<DMatrix<f64>> {
        let p = self.labels.n_classes();
        let mut a = DMatrix::zeros(self.kernel.n(), atoms);
        let mut col = 0;
        for class in 0..p {
            let count = atoms / p + usize::from(class < atoms % p);
            for _ in 0..count {
                a.set_column(col, &self.seed_atom(class, rng)?);
                col += 1;
            }
        }
        Ok(a)
    }

    fn update_codes(&self, a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let q = symmetrize(a.transpose() * &self.k_ridge * a);
        let lin = (a.transpose() * &self.discord) * self.alpha - (a.transpose() * self.kernel.values()) * 2.0;
        let cap = self.sparsity.min(a.ncols());
        let cols = (0..self.kernel.n())
            .into_par_iter()
            .map(|i| {
                let prog = QuadProgram::new(q.clone(), lin.column(i).into_owned(), cap)?;
                nqp::solve(&prog, &self.nqp).map(|s| s.x)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(DMatrix::from_columns(&cols))
    }

    /// Class of the sample with the largest reconstruction residual.
    fn worst_class(&self, reconstruction: &DMatrix<f64>) -> usize {
        let k = self.kernel.values();
        let kr = k * reconstruction;
        let mut worst = (0, f64::NEG_INFINITY);
        for j in 0..k.nrows() {
            let r = reconstruction.column(j);
            let res = k[(j, j)] - 2.0 * kr[(j, j)] + kr.column(j).dot(&r);
            if res > worst.1 {
                worst = (j, res);
            }
        }
        self.labels.class_of(worst.0)
    }

    /// Sequential sweep over atoms; later atoms see earlier atoms' new values.
    fn update_dictionary(&self, a: &mut DMatrix<f64>, x: &DMatrix<f64>, rng: &mut ChaCha8Rng) -> Result<Vec<usize>> {
        let mut reconstruction = &*a * x;
        let mut reseeded = Vec::new();
        for i in 0..a.ncols() {
            let x_row: DVector<f64> = x.row(i).transpose();
            let a_old: DVector<f64> = a.column(i).into_owned();
            let solved = if x_row.iter().all(|&v| v == 0.0) {
                None
            } else {
                // E_i x^i without forming E_i
                let e_r = &x_row - &reconstruction * &x_row + &a_old * x_row.norm_squared();
                let prog = assemble_a_subproblem(
                    self.kernel,
                    &self.k_ridge,
                    &self.discord,
                    &x_row,
                    &e_r,
                    i,
                    self.alpha,
                    self.beta,
                    self.sparsity,
                )?;
                self.normalize(nqp::solve(&prog, &self.nqp)?.x)
            };
            let a_new = match solved {
                Some(v) => v,
                None => {
                    let class = self.worst_class(&reconstruction);
                    debug!("atom {i} is dead, re-seeding from class {class}");
                    reseeded.push(i);
                    self.seed_atom(class, rng)?
                }
            };
            reconstruction += (&a_new - &a_old) * x_row.transpose();
            a.set_column(i, &a_new);
        }
        Ok(reseeded)
    }
}

/// Result of [`train`].
#[derive(Debug, Clone)]
pub struct TrainedModel {
    pub dictionary: DMatrix<f64>,
    pub labels: LabelMatrix,
    pub kernel: KernelMatrix,
    pub beta: f64,
    pub hyper: Hyperparams,
    /// Objective after every half-step.
    pub objective_trace: Vec<f64>,
    pub trace: Vec<TraceEntry>,
    /// Sparse codes of the training samples at the end of training.
    pub codes: DMatrix<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub kernel_hash: String,
    /// Gaussian bandwidth of the training kernel, when it was built from series.
    pub bandwidth: Option<f64>,
}

impl TrainedModel {
    pub fn n_atoms(&self) -> usize {
        self.dictionary.ncols()
    }
}

pub fn train(k: &KernelMatrix, h: &LabelMatrix, hyper: &Hyperparams) -> Result<TrainedModel> {
    train_with_observer(k, h, hyper, |_, _, _| {})
}

/// [`train`], calling `observe` with the state after every half-step.
pub fn train_with_observer<F>(k: &KernelMatrix, h: &LabelMatrix, hyper: &Hyperparams, mut observe: F) -> Result<TrainedModel>
where
    F: FnMut(&TraceEntry, &DMatrix<f64>, &DMatrix<f64>),
{
    hyper.validate()?;
    if h.n_samples() != k.n() {
        return Err(CkscError::Dimension(format!("{} labels for a kernel of size {}", h.n_samples(), k.n())));
    }
    let atoms = hyper.dictionary_size(h.n_classes());
    let beta = compute_beta(k, h, hyper.alpha)?;
    info!("training: N = {}, p = {}, k = {atoms}, T = {}, beta = {beta:.6e}", k.n(), h.n_classes(), hyper.sparsity);

    let ctx = Context::new(k, h, hyper, beta);
    let mut rng = ChaCha8Rng::seed_from_u64(hyper.seed);
    let mut a = ctx.init_dictionary(atoms, &mut rng)?;
    let mut x = DMatrix::zeros(atoms, k.n());
    let mut previous = objective(k, h, &a, &x, hyper.alpha, beta)?;
    let mut trace: Vec<TraceEntry> = Vec::new();
    let mut converged = false;
    let mut iterations = 0;

    let mut record = |trace: &mut Vec<TraceEntry>, iteration, half_step, a: &DMatrix<f64>, x: &DMatrix<f64>| -> Result<f64> {
        let terms = objective_terms(k, h, a, x, hyper.alpha, beta)?;
        let entry = TraceEntry { iteration, half_step, terms, objective: terms.total() };
        trace.push(entry);
        if !entry.objective.is_finite() {
            let values: Vec<f64> = trace.iter().map(|e| e.objective).collect();
            return Err(CkscError::numeric(format!("iteration {iteration} ({half_step:?})"), format!("non-finite objective; trace {values:?}")));
        }
        if cfg!(debug_assertions) {
            check_feasibility(k, a, x, hyper.sparsity)?;
        }
        observe(&entry, a, x);
        Ok(entry.objective)
    };

    for iteration in 1..=hyper.max_outer {
        iterations = iteration;
        x = ctx.update_codes(&a)?;
        record(&mut trace, iteration, HalfStep::Codes, &a, &x)?;
        let reseeded = ctx.update_dictionary(&mut a, &x, &mut rng)?;
        if !reseeded.is_empty() {
            debug!("iteration {iteration}: re-seeded atoms {reseeded:?}");
        }
        let current = record(&mut trace, iteration, HalfStep::Dictionary, &a, &x)?;
        let rel = (current - previous).abs() / previous.abs().max(1e-12);
        debug!("iteration {iteration}: J = {current:.10e}, relative change {rel:.3e}");
        previous = current;
        if rel < hyper.rel_tol {
            converged = true;
            break;
        }
    }
    info!("training finished after {iterations} iterations (converged: {converged})");

    Ok(TrainedModel {
        dictionary: a,
        labels: h.clone(),
        kernel: k.clone(),
        beta,
        hyper: hyper.clone(),
        objective_trace: trace.iter().map(|e| e.objective).collect(),
        trace,
        codes: x,
        iterations,
        converged,
        kernel_hash: k.content_hash(),
        bandwidth: None,
    })
}
