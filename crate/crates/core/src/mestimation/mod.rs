//! M-estimators exposing per-unit scores and the Hessian average.
//!
//! Scores follow the convention `m_i = ∇_θ q_i` for the unit objective `q_i`
//! being minimized, so the sample mean of `m_i` is zero at the optimum and
//! the Hessian average `L̂ = (1/N) Σ ∇_θ m_i` is positive definite for OLS
//! and probit. Sandwich variances are invariant to the sign choice.

use nalgebra::{DMatrix, DVector};

mod fe;
mod ols;
mod probit;

pub use fe::{
    demean_map, fit_one_way_fe, fit_triple_diff, fit_twfe, owfe_weights, twfe_residualize,
    Residualized,
};
pub use ols::{fit_diff_in_means, fit_ols, fit_ols_matrix, ols_scores};
pub use probit::{
    fit_probit, fit_probit_matrix, inverse_mills, log_norm_cdf, norm_cdf, norm_pdf, probit_scores, probit_unit,
    ProbitOptions,
};

/// Which estimator produced a fit.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    Ols,
    Probit,
    DiffInMeans,
    OneWayFe,
    TwoWayFe,
    TripleDiff,
}

/// Fitted parameter plus the data needed to evaluate scores.
///
/// For the fixed-effects models the stored regressor and response are the
/// fixed-effect residualized treatment and outcome, so the scores are those
/// of the treatment coefficient after partialling out the dummies.
#[derive(Debug, Clone)]
pub struct FittedModel {
    pub theta_hat: DVector<f64>,
    pub names: Vec<String>,
    pub kind: ModelKind,
    pub converged: bool,
    pub iterations: usize,
    /// Diagnostics that did not stop the fit.
    pub notes: Vec<String>,
    pub(crate) design: DMatrix<f64>,
    pub(crate) response: DVector<f64>,
}

impl FittedModel {
    pub fn n(&self) -> usize {
        self.response.len()
    }

    pub fn k(&self) -> usize {
        self.theta_hat.len()
    }

    /// Regressor matrix used for the score evaluation.
    pub fn design(&self) -> &DMatrix<f64> {
        &self.design
    }

    pub fn response(&self) -> &DVector<f64> {
        &self.response
    }

    pub fn coef(&self, name: &str) -> Option<f64> {
        self.names.iter().position(|n| n == name).map(|j| self.theta_hat[j])
    }
}

/// Per-unit scores (n × k) and the Hessian average (k × k) at θ̂.
#[derive(Debug, Clone)]
pub struct ScoreBundle {
    pub scores: DMatrix<f64>,
    pub hessian_avg: DMatrix<f64>,
}

impl ScoreBundle {
    pub fn n(&self) -> usize {
        self.scores.nrows()
    }

    pub fn k(&self) -> usize {
        self.scores.ncols()
    }

    /// Column means of the scores.
    pub fn mean_score(&self) -> DVector<f64> {
        let n = self.n() as f64;
        DVector::from_iterator(self.k(), self.scores.column_iter().map(|c| c.sum() / n))
    }
}

/// Scores of any fitted model.
pub fn generic_scores(model: &FittedModel) -> ScoreBundle {
    match model.kind {
        ModelKind::Probit => probit_scores(model),
        _ => ols_scores(model),
    }
}
