//! Test-time sparse coding and class decisions.
//!
//! A query `z` with kernel row `k_z = K(z, Y)` is encoded by solving
//! `min x^T A^T (K + alpha H^T (1 - I) H + beta I) A x - 2 k_z^T A x` over
//! non-negative `T`-sparse `x`, using the training-time `beta`. Its class is the
//! one contributing the most mass to `H A x`.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{CkscError, Result};
use crate::kernelcore::CrossKernel;
use crate::nqp::{self, QuadProgram};
use crate::train::TrainedModel;

/// Outcome of classifying one code vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    /// `None` when every class contribution is zero.
    pub class_id: Option<usize>,
    /// `H A x`, one entry per class.
    pub contributions: Vec<f64>,
    pub code: DVector<f64>,
}

impl Prediction {
    pub fn is_unclassifiable(&self) -> bool {
        self.class_id.is_none()
    }
}

/// One line of prediction output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub index: usize,
    pub class_id: Option<usize>,
    pub class_label: Option<String>,
    pub contributions: Vec<f64>,
    pub g_value: f64,
    pub support_size: usize,
    /// Feature-space reconstruction error `||phi(z) - Phi(Y) A x||^2`.
    pub residual: f64,
}

fn check_model_hash(model: &TrainedModel) -> Result<()> {
    let actual = model.kernel.content_hash();
    if actual != model.kernel_hash {
        return Err(CkscError::Integrity(format!(
            "model was trained on kernel {} but is paired with kernel {}",
            model.kernel_hash, actual
        )));
    }
    Ok(())
}

fn recall_quadratic(model: &TrainedModel) -> DMatrix<f64> {
    let a = &model.dictionary;
    let mut v = model.kernel.values() + model.labels.discord() * model.hyper.alpha;
    for i in 0..v.nrows() {
        v[(i, i)] += model.beta;
    }
    let q = a.transpose() * v * a;
    (&q + q.transpose()) * 0.5
}

fn check_row(model: &TrainedModel, kz: &CrossKernel) -> Result<()> {
    if kz.len() != model.kernel.n() {
        return Err(CkscError::Dimension(format!(
            "cross-kernel row has {} entries, model was trained on {} samples",
            kz.len(),
            model.kernel.n()
        )));
    }
    Ok(())
}

pub fn build_test_subproblem(model: &TrainedModel, kz: &CrossKernel) -> Result<QuadProgram> {
    check_model_hash(model)?;
    check_row(model, kz)?;
    let b = model.dictionary.transpose() * DVector::from_column_slice(kz.values()) * -2.0;
    QuadProgram::new(recall_quadratic(model), b, model.hyper.sparsity.min(model.n_atoms()))
}

pub fn encode(model: &TrainedModel, kz: &CrossKernel) -> Result<DVector<f64>> {
    Ok(nqp::solve(&build_test_subproblem(model, kz)?, &model.hyper.nqp)?.x)
}

/// Argmax of the class contributions `H A x`; lowest class index wins ties.
pub fn classify(model: &TrainedModel, x: &DVector<f64>) -> Result<Prediction> {
    if x.len() != model.n_atoms() {
        return Err(CkscError::Dimension(format!("code has {} entries, dictionary has {} atoms", x.len(), model.n_atoms())));
    }
    if x.iter().any(|&v| v < 0.0) {
        return Err(CkscError::Domain("codes must be non-negative".into()));
    }
    let contributions = class_contributions(model, x);
    let mut best: Option<(usize, f64)> = None;
    for (c, &v) in contributions.iter().enumerate() {
        if v > 0.0 && best.is_none_or(|(_, b)| v > b) {
            best = Some((c, v));
        }
    }
    Ok(Prediction { class_id: best.map(|(c, _)| c), contributions, code: x.clone() })
}

fn class_contributions(model: &TrainedModel, x: &DVector<f64>) -> Vec<f64> {
    let s = &model.dictionary * x;
    let mut h = vec![0.0; model.labels.n_classes()];
    for (j, v) in s.iter().enumerate() {
        h[model.labels.class_of(j)] += v;
    }
    h
}

/// `sum_i (sum_{s != i} h_s) h_i` with `h = H A x`.
pub fn g_value(model: &TrainedModel, x: &DVector<f64>) -> f64 {
    let h = class_contributions(model, x);
    let mut g = 0.0;
    for (i, hi) in h.iter().enumerate() {
        let others: f64 = h.iter().enumerate().filter(|&(s, _)| s != i).map(|(_, v)| v).sum();
        g += others * hi;
    }
    g
}

/// `x^T A^T H^T (1 - I) H A x`, the quadratic form of [`g_value`].
pub fn g_value_quadratic(model: &TrainedModel, x: &DVector<f64>) -> f64 {
    let s = &model.dictionary * x;
    (model.labels.discord() * &s).dot(&s)
}

/// Batch encoder holding the recall quadratic term of one model.
pub struct Recall<'m> {
    model: &'m TrainedModel,
    q: DMatrix<f64>,
    self_similarity: f64,
}

impl<'m> Recall<'m> {
    pub fn new(model: &'m TrainedModel) -> Result<Self> {
        check_model_hash(model)?;
        Ok(Self { model, q: recall_quadratic(model), self_similarity: 1.0 })
    }

    /// `K(z, z)` used for residual reporting; 1 for Gaussian kernels.
    pub fn with_self_similarity(mut self, value: f64) -> Self {
        self.self_similarity = value;
        self
    }

    pub fn encode(&self, kz: &CrossKernel) -> Result<DVector<f64>> {
        check_row(self.model, kz)?;
        let b = self.model.dictionary.transpose() * DVector::from_column_slice(kz.values()) * -2.0;
        let prog = QuadProgram::new(self.q.clone(), b, self.model.hyper.sparsity.min(self.model.n_atoms()))?;
        Ok(nqp::solve(&prog, &self.model.hyper.nqp)?.x)
    }

    pub fn predict(&self, kz: &CrossKernel) -> Result<Prediction> {
        classify(self.model, &self.encode(kz)?)
    }

    pub fn record(&self, index: usize, kz: &CrossKernel) -> Result<PredictionRecord> {
        let p = self.predict(kz)?;
        let s = &self.model.dictionary * &p.code;
        let kzv = DVector::from_column_slice(kz.values());
        let residual = self.self_similarity - 2.0 * kzv.dot(&s) + (self.model.kernel.values() * &s).dot(&s);
        Ok(PredictionRecord {
            index,
            class_id: p.class_id,
            class_label: p.class_id.map(|c| self.model.labels.classes()[c].clone()),
            g_value: g_value(self.model, &p.code),
            support_size: p.code.iter().filter(|&&v| v != 0.0).count(),
            contributions: p.contributions,
            residual,
        })
    }

    pub fn predict_batch(&self, rows: &[CrossKernel]) -> Result<Vec<Prediction>> {
        rows.par_iter().map(|r| self.predict(r)).collect()
    }

    pub fn records(&self, rows: &[CrossKernel]) -> Result<Vec<PredictionRecord>> {
        rows.par_iter().enumerate().map(|(i, r)| self.record(i, r)).collect()
    }
}
