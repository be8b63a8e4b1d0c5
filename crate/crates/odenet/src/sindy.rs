//! Derivative-based sparse regression baseline: sequentially thresholded
//! least squares on finite-difference derivative estimates.
//!
//! Interior derivatives use the three-point central formula for nonuniform
//! grids (exact on quadratics whatever the spacing); endpoints fall back to
//! one-sided two-point differences. Per-dimension regressions alternate an
//! ordinary least-squares solve with hard thresholding until the active set
//! stabilizes.

use crate::basis::PolynomialBasis;
use crate::data::{Dataset, Trajectory};
use crate::error::{Error, Result};
use crate::model::CoefficientMatrix;
use nalgebra::{DMatrix, DVector};

/// Feature rows Lambda(x(t_k)) against derivative targets.
#[derive(Debug, Clone)]
pub struct RegressionProblem {
    pub features: DMatrix<f64>,
    pub targets: DMatrix<f64>,
}

/// Per-sample derivative estimates for one trajectory.
pub fn estimate_derivatives(trajectory: &Trajectory) -> Result<DMatrix<f64>> {
    let times = trajectory.grid.times();
    let n = times.len();
    if n < 3 {
        return Err(Error::InsufficientData(
            "derivative estimation needs at least 3 samples".into(),
        ));
    }
    if times.windows(2).any(|w| w[1] == w[0]) {
        return Err(Error::InvalidGrid);
    }
    let d = trajectory.dim();
    let y = &trajectory.values;
    let mut out = DMatrix::zeros(n, d);
    for c in 0..d {
        // one-sided endpoints
        out[(0, c)] = (y[(1, c)] - y[(0, c)]) / (times[1] - times[0]);
        out[(n - 1, c)] = (y[(n - 1, c)] - y[(n - 2, c)]) / (times[n - 1] - times[n - 2]);
        for k in 1..n - 1 {
            let h1 = times[k] - times[k - 1];
            let h2 = times[k + 1] - times[k];
            // nonuniform three-point central difference
            out[(k, c)] = -h2 / (h1 * (h1 + h2)) * y[(k - 1, c)]
                + (h2 - h1) / (h1 * h2) * y[(k, c)]
                + h1 / (h2 * (h1 + h2)) * y[(k + 1, c)];
        }
    }
    Ok(out)
}

/// Assemble the regression problem over every trajectory of a dataset.
/// Hidden dimensions are rejected: their derivatives are unobservable.
pub fn build_problem(dataset: &Dataset, basis: &PolynomialBasis) -> Result<RegressionProblem> {
    if dataset.has_hidden() {
        return Err(Error::Config(
            "derivative regression requires fully observed states".into(),
        ));
    }
    if basis.dim() != dataset.dim() {
        return Err(Error::ShapeMismatch(
            "basis dimension must match data dimension".into(),
        ));
    }
    let total: usize = dataset.trajectories.iter().map(Trajectory::len).sum();
    let mut features = DMatrix::zeros(total, basis.len());
    let mut targets = DMatrix::zeros(total, dataset.dim());
    let mut row = 0usize;
    let mut lambda = vec![0.0; basis.len()];
    for traj in &dataset.trajectories {
        let derivs = estimate_derivatives(traj)?;
        for k in 0..traj.len() {
            let state: Vec<f64> = (0..traj.dim()).map(|c| traj.values[(k, c)]).collect();
            basis.evaluate_into(&state, &mut lambda)?;
            for (j, &l) in lambda.iter().enumerate() {
                features[(row, j)] = l;
            }
            for c in 0..traj.dim() {
                targets[(row, c)] = derivs[(k, c)];
            }
            row += 1;
        }
    }
    Ok(RegressionProblem { features, targets })
}

/// Least squares (least-norm on rank deficiency) via SVD.
fn lstsq(a: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    let svd = a.clone().svd(true, true);
    svd.solve(b, 1e-12).expect("svd solve")
}

/// Sequentially thresholded least squares: alternate an ordinary
/// least-squares fit with hard thresholding (|coef| < `cut` is frozen at
/// zero) until the active set is stable or `max_rounds` is reached.
/// Regressions are independent per output dimension.
pub fn stlsq(problem: &RegressionProblem, cut: f64, max_rounds: usize) -> CoefficientMatrix {
    let n_terms = problem.features.ncols();
    let d = problem.targets.ncols();
    let mut theta = CoefficientMatrix::zeros(d, n_terms);
    for dim in 0..d {
        let target = DVector::from_column_slice(problem.targets.column(dim).as_slice());
        let mut active: Vec<usize> = (0..n_terms).collect();
        let mut coefs = DVector::zeros(n_terms);
        for _round in 0..max_rounds.max(1) {
            if active.is_empty() {
                break;
            }
            let sub = problem.features.select_columns(active.iter());
            let solution = lstsq(&sub, &target);
            coefs.fill(0.0);
            for (i, &col) in active.iter().enumerate() {
                coefs[col] = solution[i];
            }
            let survivors: Vec<usize> = active
                .iter()
                .copied()
                .filter(|&col| coefs[col].abs() >= cut)
                .collect();
            if survivors.len() == active.len() {
                break;
            }
            active = survivors;
        }
        for col in 0..n_terms {
            if active.contains(&col) {
                theta.set(dim, col, coefs[col]);
            } else {
                theta.deactivate(dim, col);
            }
        }
    }
    theta
}

/// Residual of a coefficient matrix on held-out rows.
fn residual(problem: &RegressionProblem, rows: &[usize], theta: &CoefficientMatrix) -> f64 {
    let mut sum = 0.0;
    for &r in rows {
        for dim in 0..problem.targets.ncols() {
            let mut pred = 0.0;
            for col in 0..problem.features.ncols() {
                pred += theta.value(dim, col) * problem.features[(r, col)];
            }
            sum += (pred - problem.targets[(r, dim)]).powi(2);
        }
    }
    sum
}

/// Outcome of a threshold sweep: the winning fit, the cut that produced it,
/// and whether the fit should be reported as failed against a reference.
#[derive(Debug, Clone)]
pub struct SweepOutcome {
    pub theta: CoefficientMatrix,
    pub cut: f64,
    pub validation_residual: f64,
}

/// Fit once per candidate cut and keep the best by validation residual
/// (every 5th sample held out). This stands in for repeated independent
/// runs with hand-tuned hyperparameters.
pub fn stlsq_sweep(
    problem: &RegressionProblem,
    cuts: &[f64],
    max_rounds: usize,
) -> Result<SweepOutcome> {
    if cuts.is_empty() {
        return Err(Error::Config("threshold sweep needs at least one cut".into()));
    }
    let rows = problem.features.nrows();
    let train_rows: Vec<usize> = (0..rows).filter(|r| r % 5 != 0).collect();
    let valid_rows: Vec<usize> = (0..rows).filter(|r| r % 5 == 0).collect();
    let train = RegressionProblem {
        features: problem.features.select_rows(train_rows.iter()),
        targets: problem.targets.select_rows(train_rows.iter()),
    };
    let mut best: Option<SweepOutcome> = None;
    for &cut in cuts {
        let theta = stlsq(&train, cut, max_rounds);
        let score = residual(problem, &valid_rows, &theta);
        if best.as_ref().map_or(true, |b| score < b.validation_residual) {
            best = Some(SweepOutcome {
                theta,
                cut,
                validation_residual: score,
            });
        }
    }
    Ok(best.expect("at least one cut"))
}

/// Active-set agreement and worst relative coefficient error of a fit
/// against ground truth. The reference support is the set of nonzero truth
/// entries; a missed term counts as relative error 1.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct ModelComparison {
    pub precision: f64,
    pub recall: f64,
    pub max_relative_error: f64,
    pub exact_support: bool,
    /// Reported failure per the baseline convention: support not fully
    /// recovered or worst coefficient off by more than 50%.
    pub failed: bool,
}

pub fn compare_models(truth: &CoefficientMatrix, fitted: &CoefficientMatrix) -> Result<ModelComparison> {
    if truth.dim() != fitted.dim() || truth.n_terms() != fitted.n_terms() {
        return Err(Error::ShapeMismatch("model shapes differ".into()));
    }
    let true_set: std::collections::BTreeSet<_> = truth.nonzero_set().into_iter().collect();
    let fit_set: std::collections::BTreeSet<_> = fitted.nonzero_set().into_iter().collect();
    let hits = true_set.intersection(&fit_set).count() as f64;
    let precision = if fit_set.is_empty() {
        if true_set.is_empty() { 1.0 } else { 0.0 }
    } else {
        hits / fit_set.len() as f64
    };
    let recall = if true_set.is_empty() {
        1.0
    } else {
        hits / true_set.len() as f64
    };
    let mut max_rel = 0.0f64;
    for &(r, c) in &true_set {
        let rel = (fitted.value(r, c) - truth.value(r, c)).abs() / truth.value(r, c).abs();
        max_rel = max_rel.max(rel);
    }
    let exact_support = true_set == fit_set;
    Ok(ModelComparison {
        precision,
        recall,
        max_relative_error: max_rel,
        exact_support,
        failed: recall < 1.0 || max_rel > 0.5,
    })
}
