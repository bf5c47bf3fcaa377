//! Non-negative quadratic pursuit.
//!
//! Minimizes `x^T Q x + b^T x` subject to `x >= 0` and `|supp(x)| <= T`.
//! Atoms are added greedily; after each addition the coefficients on the
//! current support are refined by cyclic non-negative coordinate descent.
//! Coordinates driven to zero leave the support and free their slot.

use log::warn;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{CkscError, Result};

pub const DEFAULT_TOL: f64 = 1e-8;
pub const DEFAULT_MAX_INNER: usize = 100;

/// Solver settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NqpConfig {
    pub tol: f64,
    pub max_inner: usize,
}

impl Default for NqpConfig {
    fn default() -> Self {
        Self { tol: DEFAULT_TOL, max_inner: DEFAULT_MAX_INNER }
    }
}

/// A non-negative, cardinality-constrained quadratic program `(Q, b, T)`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadProgram {
    pub q: DMatrix<f64>,
    pub b: DVector<f64>,
    pub max_support: usize,
}

impl QuadProgram {
    pub fn new(q: DMatrix<f64>, b: DVector<f64>, max_support: usize) -> Result<Self> {
        let p = Self { q, b, max_support };
        p.validate()?;
        Ok(p)
    }

    pub fn dim(&self) -> usize {
        self.b.len()
    }

    pub fn validate(&self) -> Result<()> {
        let m = self.b.len();
        if self.q.nrows() != m || self.q.ncols() != m {
            return Err(CkscError::Dimension(format!(
                "Q is {}x{} but b has length {m}",
                self.q.nrows(),
                self.q.ncols()
            )));
        }
        if self.max_support == 0 || self.max_support > m {
            return Err(CkscError::Contract(format!("sparsity cap {} outside [1, {m}]", self.max_support)));
        }
        if self.q.iter().chain(self.b.iter()).any(|v| v.is_nan()) {
            return Err(CkscError::numeric("nqp input", "NaN in Q or b"));
        }
        for i in 0..m {
            for j in i + 1..m {
                let (a, c) = (self.q[(i, j)], self.q[(j, i)]);
                if (a - c).abs() > 1e-10 * (1.0 + a.abs().max(c.abs())) {
                    return Err(CkscError::Contract(format!("Q not symmetric at ({i}, {j})")));
                }
            }
        }
        Ok(())
    }

    /// `x^T Q x + b^T x`.
    pub fn objective(&self, x: &DVector<f64>) -> f64 {
        (&self.q * x).dot(x) + self.b.dot(x)
    }

    fn objective_on(&self, x: &DVector<f64>, support: &[usize]) -> f64 {
        let mut quad = 0.0;
        for &i in support {
            let mut row = 0.0;
            for &j in support {
                row += self.q[(i, j)] * x[j];
            }
            quad += x[i] * row;
        }
        quad + support.iter().map(|&i| self.b[i] * x[i]).sum::<f64>()
    }
}

/// One greedy iteration: the atom that entered and the objective after refinement.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NqpStep {
    pub selected: usize,
    pub objective: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NqpSolution {
    pub x: DVector<f64>,
    /// Active indices in ascending order.
    pub support: Vec<usize>,
    pub objective: f64,
    pub steps: Vec<NqpStep>,
    /// Indices skipped because their diagonal entry was not positive.
    pub skipped: Vec<usize>,
}

/// Exact minimizer of the objective along coordinate `j`, clamped at zero.
///
/// `grad_j` is the j-th entry of `2 Q x + b` at the current point.
/// Returns `None` when `Q_jj <= 0`.
pub fn coordinate_min(q: &DMatrix<f64>, x_j: f64, grad_j: f64, j: usize) -> Option<f64> {
    let qjj = q[(j, j)];
    if qjj <= 0.0 {
        return None;
    }
    Some((x_j - grad_j / (2.0 * qjj)).max(0.0))
}

/// Runs the pursuit. See the module docs for the algorithm.
pub fn solve(p: &QuadProgram, cfg: &NqpConfig) -> Result<NqpSolution> {
    p.validate()?;
    if cfg.tol.is_nan() || cfg.tol <= 0.0 || cfg.max_inner == 0 {
        return Err(CkscError::Contract("tol must be positive and max_inner at least 1".into()));
    }
    let m = p.dim();
    let mut x = DVector::zeros(m);
    let mut grad = p.b.clone();
    let mut support: Vec<usize> = Vec::with_capacity(p.max_support);
    let mut in_support = vec![false; m];
    let mut skipped = vec![false; m];
    let mut steps = Vec::new();
    let mut objective = 0.0;
    // pruning can free slots, so the number of selections is bounded separately
    let max_selections = 2 * m + p.max_support;

    while support.len() < p.max_support && steps.len() < max_selections {
        // best single-coordinate decrease: g_j^2 / (4 Q_jj) over descent directions
        let mut best: Option<(usize, f64)> = None;
        for j in 0..m {
            if in_support[j] || skipped[j] || grad[j] >= -cfg.tol {
                continue;
            }
            let qjj = p.q[(j, j)];
            if qjj <= 0.0 {
                warn!("nqp: skipping coordinate {j} with non-positive diagonal {qjj}");
                skipped[j] = true;
                continue;
            }
            let score = grad[j] * grad[j] / qjj;
            if best.is_none_or(|(_, s)| score > s) {
                best = Some((j, score));
            }
        }
        let Some((j_new, _)) = best else { break };
        support.push(j_new);
        in_support[j_new] = true;

        for pass in 0..cfg.max_inner {
            let before = objective;
            for &j in &support {
                let new = coordinate_min(&p.q, x[j], grad[j], j).expect("support has positive diagonal");
                let delta = new - x[j];
                if delta != 0.0 {
                    objective += delta * grad[j] + p.q[(j, j)] * delta * delta;
                    x[j] = new;
                    grad.axpy(2.0 * delta, &p.q.column(j), 1.0);
                }
            }
            if objective.is_nan() || grad.iter().any(|g| g.is_nan()) {
                return Err(CkscError::numeric(
                    format!("nqp selection {} pass {pass}", steps.len()),
                    "NaN in iterate",
                ));
            }
            if before - objective < cfg.tol {
                break;
            }
        }

        support.retain(|&j| {
            let keep = x[j] > 0.0;
            if !keep {
                in_support[j] = false;
            }
            keep
        });
        objective = p.objective_on(&x, &support);
        steps.push(NqpStep { selected: j_new, objective });
    }

    support.sort_unstable();
    let skipped = (0..m).filter(|&j| skipped[j]).collect();
    Ok(NqpSolution { objective: p.objective(&x), x, support, steps, skipped })
}
