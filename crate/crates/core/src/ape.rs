//! Average partial effects and their delta-method residuals.
//!
//! For a smooth function `f_i(θ)` the estimator `γ̂ = (1/N) Σ f_i(θ̂)` is
//! linearized through `ψ_i = f_i(θ̂) − γ̂ − F̂ L̂⁻¹ m_i(θ̂)` with
//! `F̂ = (1/N) Σ ∇_θ f_i(θ̂)`. Every variance family is then applied to ψ̂
//! with an identity Hessian.

use nalgebra::{DMatrix, DVector};

use crate::data::ClusterIndex;
use crate::linalg::condition_number;
use crate::mestimation::{norm_cdf, norm_pdf, FittedModel, ModelKind, ScoreBundle};
use crate::shrinkage::{estimate_family, AdjustmentInputs};
use crate::variance::{Family, VarianceReport};
use crate::{Error, Result};

/// Point estimate and linearization of an average partial effect.
#[derive(Debug, Clone)]
pub struct ApeResult {
    pub gamma_hat: DVector<f64>,
    /// n × q residuals ψ̂.
    pub psi: DMatrix<f64>,
    /// q × k Jacobian average F̂.
    pub f_hat: DMatrix<f64>,
}

/// `L̂⁻¹ m_i` for every unit, as a k × n matrix.
fn influence(bundle: &ScoreBundle) -> Result<DMatrix<f64>> {
    let cond = condition_number(&bundle.hessian_avg);
    if !cond.is_finite() || cond > crate::linalg::MAX_CONDITION {
        return Err(Error::SingularHessian { condition: cond });
    }
    bundle
        .hessian_avg
        .clone()
        .lu()
        .solve(&bundle.scores.transpose())
        .ok_or(Error::SingularHessian { condition: cond })
}

/// APE of a generic function with caller-supplied values and gradients.
///
/// `f(i, θ)` returns the q-vector `f_i(θ)`; `grad(i, θ)` its q × k
/// Jacobian. `subset`, when given, restricts the average to units with
/// nonzero weight (e.g. the treated units for an effect on the treated).
pub fn ape_generic<F, G>(
    theta: &DVector<f64>,
    bundle: &ScoreBundle,
    f: F,
    grad: G,
    subset: Option<&[bool]>,
) -> Result<ApeResult>
where
    F: Fn(usize, &DVector<f64>) -> DVector<f64>,
    G: Fn(usize, &DVector<f64>) -> DMatrix<f64>,
{
    let n = bundle.n();
    let k = bundle.k();
    let included: Vec<bool> = match subset {
        Some(s) if s.len() == n => s.to_vec(),
        Some(s) => {
            return Err(Error::Input(format!("averaging subset has {} entries for {n} units", s.len())))
        }
        None => vec![true; n],
    };
    let n_avg = included.iter().filter(|&&b| b).count();
    if n_avg == 0 {
        return Err(Error::Input("averaging subset is empty".into()));
    }
    let values: Vec<DVector<f64>> = (0..n).map(|i| f(i, theta)).collect();
    let q = values[0].len();
    let mut gamma = DVector::<f64>::zeros(q);
    let mut f_hat = DMatrix::<f64>::zeros(q, k);
    for i in (0..n).filter(|&i| included[i]) {
        gamma += &values[i];
        f_hat += grad(i, theta);
    }
    gamma /= n_avg as f64;
    f_hat /= n_avg as f64;

    let correction = &f_hat * influence(bundle)?;
    let share = n as f64 / n_avg as f64;
    let mut psi = DMatrix::<f64>::zeros(n, q);
    for i in 0..n {
        for r in 0..q {
            let own = if included[i] { share * (values[i][r] - gamma[r]) } else { 0.0 };
            psi[(i, r)] = own - correction[(r, i)];
        }
    }
    Ok(ApeResult {
        gamma_hat: gamma,
        psi,
        f_hat,
    })
}

/// Probit APE of a binary regressor: `f_i = Φ(d_i(1)'θ) − Φ(d_i(0)'θ)`,
/// with `d_i(x)` the design row with the treatment column set to x.
///
/// With `treated_only` the average runs over units whose treatment is one.
pub fn probit_ape_binary(
    model: &FittedModel,
    bundle: &ScoreBundle,
    treatment: usize,
    treated_only: bool,
) -> Result<ApeResult> {
    if model.kind != ModelKind::Probit {
        return Err(Error::Input("binary APE needs a probit fit".into()));
    }
    let d = model.design();
    if treatment >= d.ncols() {
        return Err(Error::Input(format!("treatment column {treatment} out of range")));
    }
    let counterfactual = |i: usize, x: f64| {
        let mut row = d.row(i).transpose();
        row[treatment] = x;
        row
    };
    let f = |i: usize, theta: &DVector<f64>| {
        let d1 = counterfactual(i, 1.0);
        let d0 = counterfactual(i, 0.0);
        DVector::from_element(1, norm_cdf(d1.dot(theta)) - norm_cdf(d0.dot(theta)))
    };
    let grad = |i: usize, theta: &DVector<f64>| {
        let d1 = counterfactual(i, 1.0);
        let d0 = counterfactual(i, 0.0);
        let g = &d1 * norm_pdf(d1.dot(theta)) - &d0 * norm_pdf(d0.dot(theta));
        DMatrix::from_row_slice(1, g.len(), g.as_slice())
    };
    let subset: Option<Vec<bool>> = treated_only.then(|| d.column(treatment).iter().map(|&x| x == 1.0).collect());
    ape_generic(&model.theta_hat, bundle, f, grad, subset.as_deref())
}

/// Variance of an APE under any family; `adjust` must be built on ψ̂
/// (see [`crate::shrinkage::ape_adjusted_inputs`]) for adjusted families.
pub fn ape_variance(
    ape: &ApeResult,
    clusters: &ClusterIndex,
    family: Family,
    adjust: Option<&AdjustmentInputs>,
) -> Result<VarianceReport> {
    let q = ape.psi.ncols();
    estimate_family(family, &ape.psi, &DMatrix::identity(q, q), clusters, adjust)
}
