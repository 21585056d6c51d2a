use std::f64::consts::{FRAC_1_SQRT_2, PI};

use nalgebra::{DMatrix, DVector};
use statrs::function::erf::erfc;

use super::{FittedModel, ModelKind, ScoreBundle};
use crate::data::ObservedDataset;
use crate::linalg::Basis;
use crate::{Error, Result};

/// Below this index the normal tail is evaluated with its asymptotic series.
const TAIL: f64 = -35.0;

/// Linear index magnitude treated as a diverging fit.
const SEPARATION_INDEX: f64 = 40.0;

pub fn norm_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * PI).sqrt()
}

pub fn norm_cdf(x: f64) -> f64 {
    0.5 * erfc(-x * FRAC_1_SQRT_2)
}

fn tail_series(x: f64) -> f64 {
    let x2 = x * x;
    1.0 - 1.0 / x2 + 3.0 / (x2 * x2) - 15.0 / (x2 * x2 * x2)
}

pub fn log_norm_cdf(x: f64) -> f64 {
    if x < TAIL {
        -0.5 * x * x - 0.5 * (2.0 * PI).ln() - (-x).ln() + tail_series(x).ln()
    } else {
        norm_cdf(x).ln()
    }
}

/// φ(x)/Φ(x), accurate far into the lower tail.
pub fn inverse_mills(x: f64) -> f64 {
    if x < TAIL {
        -x / tail_series(x)
    } else {
        norm_pdf(x) / norm_cdf(x)
    }
}

/// Newton–Raphson settings for the probit fit.
#[derive(Debug, Clone, Copy)]
pub struct ProbitOptions {
    pub max_iter: usize,
    /// Tolerance on the sup-norm of the mean score.
    pub tol: f64,
}

impl Default for ProbitOptions {
    fn default() -> Self {
        ProbitOptions {
            max_iter: 100,
            tol: 1e-8,
        }
    }
}

/// Generalized residual λ_i: φ/Φ for y = 1 and −φ/(1−Φ) for y = 0.
fn generalized_residual(y: f64, eta: f64) -> f64 {
    if y > 0.5 {
        inverse_mills(eta)
    } else {
        -inverse_mills(-eta)
    }
}

/// Score and observed-Hessian contribution of one observation with design
/// row `d` and outcome `y`.
pub fn probit_unit(d: &DVector<f64>, y: f64, theta: &DVector<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let eta = d.dot(theta);
    let lam = generalized_residual(y, eta);
    (d * -lam, d * d.transpose() * (lam * (lam + eta)))
}

fn neg_loglik(d: &DMatrix<f64>, y: &DVector<f64>, theta: &DVector<f64>) -> f64 {
    let eta = d * theta;
    let mut total = 0.0;
    for (yi, e) in y.iter().zip(eta.iter()) {
        total -= if *yi > 0.5 { log_norm_cdf(*e) } else { log_norm_cdf(-*e) };
    }
    total / y.len() as f64
}

/// Mean score and observed Hessian average at θ.
fn score_and_hessian(d: &DMatrix<f64>, y: &DVector<f64>, theta: &DVector<f64>) -> ScoreBundle {
    let n = d.nrows();
    let eta = d * theta;
    let mut scores = d.clone();
    let mut weighted = d.clone();
    for i in 0..n {
        let lam = generalized_residual(y[i], eta[i]);
        let w = lam * (lam + eta[i]);
        scores.row_mut(i).scale_mut(-lam);
        weighted.row_mut(i).scale_mut(w);
    }
    let hessian_avg = (d.transpose() * weighted) / n as f64;
    ScoreBundle {
        scores,
        hessian_avg: crate::linalg::symmetrize(&hessian_avg),
    }
}

/// Probit MLE of `y` on `[1, X, Z]` (intercept optional).
pub fn fit_probit(data: &ObservedDataset, intercept: bool, opts: ProbitOptions) -> Result<FittedModel> {
    let (d, names) = data.design_matrix(intercept);
    fit_probit_matrix(&d, &data.y, names, opts)
}

/// Probit MLE by Newton's method with step halving, started at zero.
pub fn fit_probit_matrix(
    d: &DMatrix<f64>,
    y: &DVector<f64>,
    names: Vec<String>,
    opts: ProbitOptions,
) -> Result<FittedModel> {
    let n = d.nrows();
    if n != y.len() {
        return Err(Error::Input(format!("design has {n} rows but the outcome has {}", y.len())));
    }
    if y.iter().any(|&v| v != 0.0 && v != 1.0) {
        return Err(Error::Input("probit outcome must be 0/1".into()));
    }
    let basis = Basis::new(d);
    if !basis.dropped.is_empty() {
        return Err(Error::SingularDesign {
            columns: basis.dropped.iter().map(|&j| names[j].clone()).collect(),
        });
    }
    let ones = y.iter().filter(|&&v| v == 1.0).count();
    if ones == 0 || ones == n {
        return Err(Error::Separation(format!(
            "outcome is constant ({} of {n} equal to one)",
            ones
        )));
    }

    let k = d.ncols();
    let mut theta = DVector::<f64>::zeros(k);
    let mut obj = neg_loglik(d, y, &theta);
    let mut grad_norm = f64::INFINITY;
    for iter in 0..=opts.max_iter {
        let bundle = score_and_hessian(d, y, &theta);
        let grad = bundle.mean_score();
        grad_norm = grad.amax();
        if grad_norm <= opts.tol {
            let mut notes = Vec::new();
            let eta = d * &theta;
            let worst_fit = (0..n).map(|i| (y[i] - norm_cdf(eta[i])).abs()).fold(0.0, f64::max);
            if worst_fit < 1e-6 {
                return Err(Error::Separation("every outcome is predicted with certainty".into()));
            }
            let saturated = eta.iter().filter(|e| e.abs() > 8.0).count();
            if saturated > 0 {
                notes.push(format!(
                    "{saturated} fitted probabilities within 1e-15 of 0 or 1"
                ));
            }
            return Ok(FittedModel {
                theta_hat: theta,
                names,
                kind: ModelKind::Probit,
                converged: true,
                iterations: iter,
                notes,
                design: d.clone(),
                response: y.clone(),
            });
        }
        if iter == opts.max_iter {
            break;
        }
        let step = bundle
            .hessian_avg
            .clone()
            .cholesky()
            .map(|c| c.solve(&grad))
            .ok_or(Error::SingularHessian {
                condition: crate::linalg::condition_number(&bundle.hessian_avg),
            })?;
        let mut scale = 1.0;
        let mut accepted = false;
        for _ in 0..40 {
            let cand = &theta - &step * scale;
            let cand_obj = neg_loglik(d, y, &cand);
            if cand_obj.is_finite() && cand_obj <= obj + 1e-14 * obj.abs().max(1.0) {
                theta = cand;
                obj = cand_obj;
                accepted = true;
                break;
            }
            scale *= 0.5;
        }
        if !accepted {
            break;
        }
        let max_index = (d * &theta).amax();
        if max_index > SEPARATION_INDEX {
            return Err(Error::Separation(format!(
                "linear index reached {max_index:.1}; the likelihood has no finite maximizer"
            )));
        }
    }
    Err(Error::NonConvergence {
        iterations: opts.max_iter,
        gradient_norm: grad_norm,
    })
}

/// Probit scores `m_i = −λ_i d_i` and the observed Hessian average
/// `(1/N) Σ λ_i(λ_i + η_i) d_i d_i'`.
pub fn probit_scores(model: &FittedModel) -> ScoreBundle {
    score_and_hessian(&model.design, &model.response, &model.theta_hat)
}
