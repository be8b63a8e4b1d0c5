//! Exact trajectory and loss gradients via forward sensitivity analysis.
//!
//! For the augmented state (x, S) with S = dx/dp (one column per parameter),
//! the sensitivities obey the linear matrix ODE
//!
//! ```text
//! dS/dt = (df/dx) S + df/dp
//! ```
//!
//! where `df/dx` is the state Jacobian of the model and `df/dp` is the direct
//! dependence of the right-hand side on the parameter. Columns exist for the
//! free (active, untied) coefficients and for selected initial-state
//! components; pruned parameters have no column. The augmented system is
//! integrated with the same solver and tolerances as the plain state, so
//! discarding the sensitivities reproduces the plain prediction exactly when
//! no columns are present.
//!
//! Parameter counts here are tiny (tens) while trajectories are many, which
//! makes forward mode cheaper than reverse-mode through solver internals.

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::integrate::{integrate_field, IntegratorConfig, TimeGrid, VectorField};
use crate::model::{CoefficientMatrix, OdeModel};
use crate::noise::NoiseField;
use nalgebra::{DMatrix, DVector};
use std::cell::RefCell;
use std::collections::BTreeSet;

/// One free coefficient: its position and every tie target it feeds.
#[derive(Debug, Clone)]
pub struct FreeParam {
    pub row: usize,
    pub col: usize,
    pub targets: Vec<(usize, usize, f64)>,
}

/// Stable enumeration (row-major) of the independent optimization variables
/// of a coefficient matrix. Rebuilt after every pruning pass.
#[derive(Debug, Clone, Default)]
pub struct FreeParamLayout {
    pub params: Vec<FreeParam>,
}

impl FreeParamLayout {
    pub fn of(theta: &CoefficientMatrix) -> Self {
        let params = theta
            .free_entries()
            .into_iter()
            .map(|(row, col)| {
                let targets = theta
                    .ties()
                    .iter()
                    .filter(|t| t.source == (row, col) && theta.is_active(t.target.0, t.target.1))
                    .map(|t| (t.target.0, t.target.1, t.scale))
                    .collect();
                FreeParam { row, col, targets }
            })
            .collect();
        Self { params }
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn values(&self, theta: &CoefficientMatrix) -> Vec<f64> {
        self.params.iter().map(|p| theta.value(p.row, p.col)).collect()
    }

    pub fn store(&self, theta: &mut CoefficientMatrix, values: &[f64]) {
        for (p, &v) in self.params.iter().zip(values) {
            theta.set(p.row, p.col, v);
        }
    }
}

struct Workspace {
    lambda: DVector<f64>,
    basis_jac: DMatrix<f64>,
    state_jac: DMatrix<f64>,
}

/// The model plus its sensitivity columns as one autonomous vector field.
/// Layout: `[x (d) | S_theta columns (K of d) | S_init columns (H of d)]`.
struct AugmentedField<'a> {
    model: &'a OdeModel,
    theta_dense: DMatrix<f64>,
    layout: &'a FreeParamLayout,
    n_init_cols: usize,
    work: RefCell<Workspace>,
}

impl<'a> AugmentedField<'a> {
    fn new(model: &'a OdeModel, layout: &'a FreeParamLayout, n_init_cols: usize) -> Self {
        let d = model.dim();
        let m = model.basis().len();
        Self {
            model,
            theta_dense: model.theta().as_matrix(),
            layout,
            n_init_cols,
            work: RefCell::new(Workspace {
                lambda: DVector::zeros(m),
                basis_jac: DMatrix::zeros(m, d),
                state_jac: DMatrix::zeros(d, d),
            }),
        }
    }
}

impl VectorField for AugmentedField<'_> {
    fn dim(&self) -> usize {
        self.model.dim() * (1 + self.layout.len() + self.n_init_cols)
    }

    fn eval(&self, _t: f64, x: &[f64], out: &mut [f64]) -> Result<()> {
        let d = self.model.dim();
        let m = self.model.basis().len();
        let work = &mut *self.work.borrow_mut();
        let state = &x[0..d];
        self.model
            .basis()
            .evaluate_into(state, work.lambda.as_mut_slice())?;
        // dx/dt = theta * Lambda
        for i in 0..d {
            let mut acc = 0.0;
            for j in 0..m {
                acc += self.theta_dense[(i, j)] * work.lambda[j];
            }
            out[i] = acc;
        }
        if self.layout.is_empty() && self.n_init_cols == 0 {
            return Ok(());
        }
        self.model.basis().jacobian_into(state, &mut work.basis_jac)?;
        work.state_jac.gemm(1.0, &self.theta_dense, &work.basis_jac, 0.0);
        // dS/dt = J S (+ direct term for coefficient columns)
        let n_cols = self.layout.len() + self.n_init_cols;
        for c in 0..n_cols {
            let base = d + c * d;
            let s = &x[base..base + d];
            for i in 0..d {
                let mut acc = 0.0;
                for j in 0..d {
                    acc += work.state_jac[(i, j)] * s[j];
                }
                out[base + i] = acc;
            }
            if c < self.layout.len() {
                let p = &self.layout.params[c];
                out[base + p.row] += work.lambda[p.col];
                for &(tr, tc, scale) in &p.targets {
                    out[base + tr] += scale * work.lambda[tc];
                }
            }
        }
        Ok(())
    }
}

/// States plus sensitivity blocks at each grid time after the first.
pub struct SensitivityOutput {
    /// Row k: predicted state at grid point k+1.
    pub states: DMatrix<f64>,
    /// Per output time: d x K matrix dx/dtheta over the free parameters.
    pub s_theta: Vec<DMatrix<f64>>,
    /// Per output time: d x H matrix dx/dx0 over the selected components.
    pub s_init: Vec<DMatrix<f64>>,
    /// State-dimension indices the `s_init` columns correspond to.
    pub init_dims: Vec<usize>,
}

/// Integrate the model together with its sensitivity equations.
/// `init_mask` selects which components of `x0` get initial-state columns;
/// those columns start as the matching unit vectors, the coefficient columns
/// start at zero.
pub fn integrate_with_sensitivity(
    model: &OdeModel,
    x0: &DVector<f64>,
    init_mask: &[bool],
    grid: &TimeGrid,
    cfg: &IntegratorConfig,
) -> Result<SensitivityOutput> {
    let d = model.dim();
    if init_mask.len() != d {
        return Err(Error::ShapeMismatch("init mask length must equal dimension".into()));
    }
    let layout = FreeParamLayout::of(model.theta());
    integrate_with_sensitivity_layout(model, &layout, x0, init_mask, grid, cfg)
}

pub fn integrate_with_sensitivity_layout(
    model: &OdeModel,
    layout: &FreeParamLayout,
    x0: &DVector<f64>,
    init_mask: &[bool],
    grid: &TimeGrid,
    cfg: &IntegratorConfig,
) -> Result<SensitivityOutput> {
    let d = model.dim();
    let k = layout.len();
    let init_dims: Vec<usize> = (0..d).filter(|&i| init_mask[i]).collect();
    let h = init_dims.len();
    let field = AugmentedField::new(model, layout, h);

    let mut aug0 = DVector::zeros(d * (1 + k + h));
    aug0.rows_mut(0, d).copy_from(x0);
    for (c, &dim) in init_dims.iter().enumerate() {
        aug0[d + (k + c) * d + dim] = 1.0;
    }

    let n_out = grid.len() - 1;
    let mut states = DMatrix::zeros(n_out, d);
    let mut s_theta = vec![DMatrix::zeros(d, k); n_out];
    let mut s_init = vec![DMatrix::zeros(d, h); n_out];
    integrate_field(&field, &aug0, grid, cfg, |row, aug| {
        for i in 0..d {
            states[(row, i)] = aug[i];
        }
        for c in 0..k {
            for i in 0..d {
                s_theta[row][(i, c)] = aug[d + c * d + i];
            }
        }
        for c in 0..h {
            for i in 0..d {
                s_init[row][(i, c)] = aug[d + (k + c) * d + i];
            }
        }
    })?;
    Ok(SensitivityOutput {
        states,
        s_theta,
        s_init,
        init_dims,
    })
}

/// A batch: `m` windows into the dataset, each of `n` grid intervals.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub pieces: Vec<BatchPiece>,
}

/// A window of `len` consecutive samples inside one trajectory, preserving
/// the original (possibly unequal) spacing.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BatchPiece {
    pub trajectory: usize,
    pub start: usize,
    pub len: usize,
}

/// Everything a loss evaluation needs besides the batch itself.
pub struct LossContext<'a> {
    pub dataset: &'a Dataset,
    pub model: &'a OdeModel,
    pub layout: &'a FreeParamLayout,
    /// Present in noise mode: per-sample learnable offsets.
    pub noise: Option<&'a NoiseField>,
    /// Learned initial values for hidden dimensions, one vector per
    /// trajectory (empty when nothing is hidden).
    pub hidden_init: &'a [Vec<f64>],
    pub mu: f64,
    pub integrator: &'a IntegratorConfig,
}

/// Loss value and gradient blocks for one batch.
#[derive(Debug)]
pub struct LossGrad {
    pub loss: f64,
    pub data_loss: f64,
    /// Number of squared residual terms in `data_loss`.
    pub residual_terms: usize,
    pub grad_theta: Vec<f64>,
    /// Per trajectory, per hidden slot (ascending dimension order).
    pub grad_hidden: Vec<Vec<f64>>,
    /// Same shapes as the noise-field offsets; zero outside this batch.
    pub grad_noise: Vec<DMatrix<f64>>,
    /// (trajectory, sample) pairs whose noise offsets received gradient.
    pub touched_samples: BTreeSet<(usize, usize)>,
    /// (piece index, failure) for pieces that hit an integration error;
    /// each contributes the sentinel loss and no gradient.
    pub failures: Vec<(usize, Error)>,
}

/// Sentinel loss for a batch piece whose integration failed.
pub const FAILED_PIECE_LOSS: f64 = 1e6;

struct PieceResult {
    loss: f64,
    residual_terms: usize,
    grad_theta: Vec<f64>,
    grad_hidden: Vec<f64>,
    /// (sample index, dimension, gradient).
    grad_noise: Vec<(usize, usize, f64)>,
    failure: Option<Error>,
}

/// Hidden-state dimensions of a dataset, ascending.
pub fn hidden_dims(dataset: &Dataset) -> Vec<usize> {
    let observed = &dataset.trajectories[0].observed;
    (0..dataset.dim()).filter(|&i| !observed[i]).collect()
}

fn evaluate_piece(ctx: &LossContext<'_>, piece: &BatchPiece) -> Result<PieceResult> {
    let traj = &ctx.dataset.trajectories[piece.trajectory];
    let d = traj.dim();
    let grid = traj.grid.slice(piece.start, piece.len)?;
    let noise_mode = ctx.noise.is_some();
    let hidden: Vec<usize> = (0..d).filter(|&i| !traj.observed[i]).collect();

    // Initial state: observed components come from the (noise-corrected)
    // data, hidden components from the learned per-trajectory values.
    let mut x0 = DVector::zeros(d);
    let mut init_mask = vec![false; d];
    for i in 0..d {
        if traj.observed[i] {
            let mut v = traj.values[(piece.start, i)];
            if let Some(field) = ctx.noise {
                v -= field.get(piece.trajectory, piece.start, i);
                init_mask[i] = true;
            }
            x0[i] = v;
        } else {
            let slot = hidden.iter().position(|&hd| hd == i).unwrap();
            x0[i] = ctx.hidden_init[piece.trajectory][slot];
            init_mask[i] = true;
        }
    }

    let out = integrate_with_sensitivity_layout(
        ctx.model,
        ctx.layout,
        &x0,
        &init_mask,
        &grid,
        ctx.integrator,
    )?;

    let k = ctx.layout.len();
    let mut loss = 0.0;
    let mut residual_terms = 0usize;
    let mut grad_theta = vec![0.0; k];
    let mut grad_hidden = vec![0.0; hidden.len()];
    let mut grad_noise = Vec::new();
    let mut grad_init0 = vec![0.0; out.init_dims.len()];

    for step in 0..grid.len() - 1 {
        let sample = piece.start + step + 1;
        for i in 0..d {
            if !traj.observed[i] {
                continue;
            }
            let mut r = out.states[(step, i)] - traj.values[(sample, i)];
            if let Some(field) = ctx.noise {
                r += field.get(piece.trajectory, sample, i);
            }
            loss += r * r;
            residual_terms += 1;
            let w = 2.0 * r;
            for (g, s) in grad_theta.iter_mut().zip(out.s_theta[step].row(i).iter()) {
                *g += w * s;
            }
            for (c, g) in grad_init0.iter_mut().enumerate() {
                *g += w * out.s_init[step][(i, c)];
            }
            if noise_mode {
                grad_noise.push((sample, i, w));
            }
        }
    }

    // Initial-state gradients: hidden components feed the learned hidden
    // values directly; in noise mode the observed components feed the
    // offsets at the window start with a sign flip (x0 = y0 - e0).
    for (c, &dim) in out.init_dims.iter().enumerate() {
        if traj.observed[dim] {
            grad_noise.push((piece.start, dim, -grad_init0[c]));
        } else {
            let slot = hidden.iter().position(|&hd| hd == dim).unwrap();
            grad_hidden[slot] = grad_init0[c];
        }
    }

    Ok(PieceResult {
        loss,
        residual_terms,
        grad_theta,
        grad_hidden,
        grad_noise,
        failure: None,
    })
}

/// Sum of squared mismatch on observed dimensions over every batch piece,
/// plus `mu * sum |theta_free|`, together with exact gradients for the free
/// coefficients, the noise offsets touched by the batch, and the hidden
/// initial values. Pieces that fail to integrate contribute
/// [`FAILED_PIECE_LOSS`] and zero gradient. Gradients are reduced in piece
/// index order, so results are reproducible regardless of thread count.
pub fn loss_and_gradient(ctx: &LossContext<'_>, batch: &Batch) -> LossGrad {
    use rayon::prelude::*;

    let piece_results: Vec<PieceResult> = batch
        .pieces
        .par_iter()
        .map(|piece| {
            evaluate_piece(ctx, piece).unwrap_or_else(|err| PieceResult {
                loss: FAILED_PIECE_LOSS,
                residual_terms: 0,
                grad_theta: vec![0.0; ctx.layout.len()],
                grad_hidden: Vec::new(),
                grad_noise: Vec::new(),
                failure: Some(err),
            })
        })
        .collect();

    let k = ctx.layout.len();
    let mut total = LossGrad {
        loss: 0.0,
        data_loss: 0.0,
        residual_terms: 0,
        grad_theta: vec![0.0; k],
        grad_hidden: ctx
            .dataset
            .trajectories
            .iter()
            .map(|_| vec![0.0; hidden_dims(ctx.dataset).len()])
            .collect(),
        grad_noise: match ctx.noise {
            Some(field) => field
                .offsets()
                .iter()
                .map(|m| DMatrix::zeros(m.nrows(), m.ncols()))
                .collect(),
            None => Vec::new(),
        },
        touched_samples: BTreeSet::new(),
        failures: Vec::new(),
    };

    for (index, (result, piece)) in piece_results.into_iter().zip(&batch.pieces).enumerate() {
        total.loss += result.loss;
        total.residual_terms += result.residual_terms;
        if let Some(err) = result.failure {
            total.failures.push((index, err));
            continue;
        }
        total.data_loss += result.loss;
        for (g, pg) in total.grad_theta.iter_mut().zip(&result.grad_theta) {
            *g += pg;
        }
        for (slot, pg) in result.grad_hidden.iter().enumerate() {
            total.grad_hidden[piece.trajectory][slot] += pg;
        }
        for (sample, dim, g) in result.grad_noise {
            total.grad_noise[piece.trajectory][(sample, dim)] += g;
            total.touched_samples.insert((piece.trajectory, sample));
        }
    }

    // L1 regularizer over the free coefficients, subgradient sign(0) = 0.
    if ctx.mu > 0.0 {
        for (g, p) in total.grad_theta.iter_mut().zip(&ctx.layout.params) {
            let v = ctx.model.theta().value(p.row, p.col);
            total.loss += ctx.mu * v.abs();
            *g += ctx.mu * v.signum_or_zero();
        }
    }
    total
}

trait SignumOrZero {
    fn signum_or_zero(self) -> f64;
}

impl SignumOrZero for f64 {
    fn signum_or_zero(self) -> f64 {
        if self == 0.0 {
            0.0
        } else {
            self.signum()
        }
    }
}
