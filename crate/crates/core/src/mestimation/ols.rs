use nalgebra::{DMatrix, DVector};

use super::{FittedModel, ModelKind, ScoreBundle};
use crate::data::ObservedDataset;
use crate::linalg::Basis;
use crate::{Error, Result};

/// OLS of `y` on `[1, X, Z]` (intercept optional).
pub fn fit_ols(data: &ObservedDataset, intercept: bool) -> Result<FittedModel> {
    let (d, names) = data.design_matrix(intercept);
    fit_ols_matrix(&d, &data.y, names)
}

/// OLS on an explicit design matrix.
pub fn fit_ols_matrix(d: &DMatrix<f64>, y: &DVector<f64>, names: Vec<String>) -> Result<FittedModel> {
    if d.nrows() != y.len() {
        return Err(Error::Input(format!(
            "design has {} rows but the outcome has {}",
            d.nrows(),
            y.len()
        )));
    }
    if d.nrows() < d.ncols() {
        return Err(Error::Input(format!(
            "{} observations cannot identify {} coefficients",
            d.nrows(),
            d.ncols()
        )));
    }
    let basis = Basis::new(d);
    if !basis.dropped.is_empty() {
        return Err(Error::SingularDesign {
            columns: basis.dropped.iter().map(|&j| names[j].clone()).collect(),
        });
    }
    let theta_hat = basis.solve(y);
    Ok(FittedModel {
        theta_hat,
        names,
        kind: ModelKind::Ols,
        converged: true,
        iterations: 1,
        notes: Vec::new(),
        design: d.clone(),
        response: y.clone(),
    })
}

/// Difference in means: OLS of `y` on an intercept and a binary treatment.
pub fn fit_diff_in_means(y: &DVector<f64>, treatment: &DVector<f64>) -> Result<FittedModel> {
    if treatment.iter().any(|&t| t != 0.0 && t != 1.0) {
        return Err(Error::Input("difference in means needs a 0/1 treatment".into()));
    }
    let n = y.len();
    let mut d = DMatrix::<f64>::from_element(n, 2, 1.0);
    d.set_column(1, treatment);
    let mut model = fit_ols_matrix(&d, y, vec!["(intercept)".into(), "treatment".into()])?;
    model.kind = ModelKind::DiffInMeans;
    Ok(model)
}

/// Least-squares scores `m_i = −d_i û_i` and `L̂ = D'D / N`.
pub fn ols_scores(model: &FittedModel) -> ScoreBundle {
    let d = &model.design;
    let n = d.nrows();
    let resid = &model.response - d * &model.theta_hat;
    let mut scores = d.clone();
    for mut col in scores.column_iter_mut() {
        col.component_mul_assign(&resid);
        col.neg_mut();
    }
    let hessian_avg = (d.transpose() * d) / n as f64;
    ScoreBundle { scores, hessian_avg }
}
