//! Initial-value integration on arbitrary output grids.
//!
//! Two solvers: classical fixed-step RK4 and an embedded Dormand-Prince 4(5)
//! pair with adaptive step control. The adaptive solver clips internal steps
//! to land exactly on each requested grid time; there is no dense output.
//! Systems are autonomous, so time is carried through the stage arithmetic
//! but never enters the right-hand side.

use crate::error::{Error, Result};
use crate::model::OdeModel;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

/// Strictly increasing output times (arbitrary spacing allowed).
#[derive(Debug, Clone, PartialEq)]
pub struct TimeGrid {
    times: Vec<f64>,
}

impl TimeGrid {
    pub fn new(times: Vec<f64>) -> Result<Self> {
        if times.len() < 2
            || times.iter().any(|t| !t.is_finite())
            || times.windows(2).any(|w| w[1] <= w[0])
        {
            return Err(Error::InvalidGrid);
        }
        Ok(Self { times })
    }

    /// Uniform grid t0, t0+dt, ..., t0+n*dt.
    pub fn uniform(t0: f64, dt: f64, steps: usize) -> Result<Self> {
        if !(dt > 0.0) || steps == 0 {
            return Err(Error::InvalidGrid);
        }
        Self::new((0..=steps).map(|k| t0 + dt * k as f64).collect())
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Sub-grid covering indices start..=start+len-1.
    pub fn slice(&self, start: usize, len: usize) -> Result<Self> {
        if len < 2 || start + len > self.times.len() {
            return Err(Error::InvalidGrid);
        }
        Ok(Self {
            times: self.times[start..start + len].to_vec(),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Rk4,
    Dopri5,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IntegratorConfig {
    pub method: Method,
    /// Fixed RK4 substeps per grid interval.
    pub rk4_substeps: usize,
    pub abs_tol: f64,
    pub rel_tol: f64,
    /// Adaptive-step budget per grid interval.
    pub max_steps_per_interval: usize,
    pub min_step: f64,
}

impl Default for IntegratorConfig {
    fn default() -> Self {
        Self {
            method: Method::Dopri5,
            rk4_substeps: 10,
            abs_tol: 1e-6,
            rel_tol: 1e-6,
            max_steps_per_interval: 500,
            min_step: 1e-12,
        }
    }
}

impl IntegratorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.rk4_substeps == 0
            || !(self.abs_tol > 0.0)
            || !(self.rel_tol > 0.0)
            || self.max_steps_per_interval == 0
            || !(self.min_step > 0.0)
        {
            return Err(Error::Config(
                "integrator tolerances, substeps, budget and min step must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Autonomous vector field on R^n. Implementations must report non-finite
/// evaluations through the error channel.
pub trait VectorField {
    fn dim(&self) -> usize;
    fn eval(&self, t: f64, x: &[f64], out: &mut [f64]) -> Result<()>;
}

impl VectorField for OdeModel {
    fn dim(&self) -> usize {
        OdeModel::dim(self)
    }

    fn eval(&self, _t: f64, x: &[f64], out: &mut [f64]) -> Result<()> {
        let mut lambda = vec![0.0; self.basis().len()];
        self.rhs_into(x, &mut lambda, out)
    }
}

// Dormand-Prince 4(5) tableau. `B` gives the 5th-order solution, `E` the
// difference between the 5th- and embedded 4th-order weights.
const DP_C: [f64; 7] = [0.0, 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];
const DP_A: [[f64; 6]; 7] = [
    [0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [
        19372.0 / 6561.0,
        -25360.0 / 2187.0,
        64448.0 / 6561.0,
        -212.0 / 729.0,
        0.0,
        0.0,
    ],
    [
        9017.0 / 3168.0,
        -355.0 / 33.0,
        46732.0 / 5247.0,
        49.0 / 176.0,
        -5103.0 / 18656.0,
        0.0,
    ],
    [
        35.0 / 384.0,
        0.0,
        500.0 / 1113.0,
        125.0 / 192.0,
        -2187.0 / 6784.0,
        11.0 / 84.0,
    ],
];
const DP_B: [f64; 7] = [
    35.0 / 384.0,
    0.0,
    500.0 / 1113.0,
    125.0 / 192.0,
    -2187.0 / 6784.0,
    11.0 / 84.0,
    0.0,
];
const DP_E: [f64; 7] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];

/// Step-size controller: `h * min(5, max(0.2, 0.9 * err^(-1/5)))`.
pub fn step_controller(h: f64, err: f64) -> f64 {
    let factor = if err > 0.0 {
        0.9 * err.powf(-0.2)
    } else {
        f64::INFINITY
    };
    h * factor.clamp(0.2, 5.0)
}

/// Workspace reused across the internal steps of one integration run.
struct Stepper {
    k: [DVector<f64>; 7],
    stage: DVector<f64>,
    candidate: DVector<f64>,
}

impl Stepper {
    fn new(dim: usize) -> Self {
        Self {
            k: core::array::from_fn(|_| DVector::zeros(dim)),
            stage: DVector::zeros(dim),
            candidate: DVector::zeros(dim),
        }
    }

    /// One classical RK4 step.
    fn rk4(&mut self, field: &impl VectorField, x: &mut DVector<f64>, t: f64, h: f64) -> Result<()> {
        let dim = field.dim();
        field.eval(t, x.as_slice(), self.k[0].as_mut_slice())?;
        for i in 0..dim {
            self.stage[i] = x[i] + 0.5 * h * self.k[0][i];
        }
        self.check_finite(t)?;
        field.eval(t + 0.5 * h, self.stage.as_slice(), self.k[1].as_mut_slice())?;
        for i in 0..dim {
            self.stage[i] = x[i] + 0.5 * h * self.k[1][i];
        }
        self.check_finite(t)?;
        field.eval(t + 0.5 * h, self.stage.as_slice(), self.k[2].as_mut_slice())?;
        for i in 0..dim {
            self.stage[i] = x[i] + h * self.k[2][i];
        }
        self.check_finite(t)?;
        field.eval(t + h, self.stage.as_slice(), self.k[3].as_mut_slice())?;
        for i in 0..dim {
            x[i] += h / 6.0
                * (self.k[0][i] + 2.0 * self.k[1][i] + 2.0 * self.k[2][i] + self.k[3][i]);
            if !x[i].is_finite() {
                return Err(Error::Divergence { t: t + h });
            }
        }
        Ok(())
    }

    /// One Dormand-Prince trial step. Returns (weighted error norm, accepted,
    /// suggested next h); the candidate state is left in `self.candidate`.
    fn dopri5_trial(
        &mut self,
        field: &impl VectorField,
        x: &DVector<f64>,
        t: f64,
        h: f64,
        abs_tol: f64,
        rel_tol: f64,
    ) -> Result<(f64, bool, f64)> {
        let dim = field.dim();
        field.eval(t, x.as_slice(), self.k[0].as_mut_slice())?;
        for s in 1..7 {
            for i in 0..dim {
                let mut acc = 0.0;
                for (j, k) in self.k.iter().enumerate().take(s) {
                    let a = DP_A[s][j];
                    if a != 0.0 {
                        acc += a * k[i];
                    }
                }
                self.stage[i] = x[i] + h * acc;
            }
            self.check_finite(t)?;
            field.eval(t + DP_C[s] * h, self.stage.as_slice(), self.k[s].as_mut_slice())?;
        }
        let mut err = 0.0f64;
        for i in 0..dim {
            let mut acc = 0.0;
            let mut eacc = 0.0;
            for (j, k) in self.k.iter().enumerate() {
                if DP_B[j] != 0.0 {
                    acc += DP_B[j] * k[i];
                }
                if DP_E[j] != 0.0 {
                    eacc += DP_E[j] * k[i];
                }
            }
            let xi = x[i] + h * acc;
            if !xi.is_finite() {
                return Err(Error::Divergence { t: t + h });
            }
            self.candidate[i] = xi;
            let scale = abs_tol + rel_tol * x[i].abs().max(xi.abs());
            err = err.max((h * eacc / scale).abs());
        }
        if !err.is_finite() {
            return Err(Error::Divergence { t });
        }
        let accepted = err <= 1.0;
        let mut next = step_controller(h, err);
        if !accepted {
            next = next.min(h); // a rejected step never grows
        }
        Ok((err, accepted, next))
    }

    fn check_finite(&self, t: f64) -> Result<()> {
        if self.stage.iter().any(|v| !v.is_finite()) {
            Err(Error::Divergence { t })
        } else {
            Ok(())
        }
    }
}

/// Single RK4 step of `model` from `(t, x)` with step `h`.
pub fn rk4_step(model: &OdeModel, x: &DVector<f64>, t: f64, h: f64) -> Result<DVector<f64>> {
    let mut stepper = Stepper::new(model.dim());
    let mut out = x.clone();
    stepper.rk4(model, &mut out, t, h)?;
    Ok(out)
}

/// Single Dormand-Prince trial step: `(candidate state, weighted error norm,
/// accepted, suggested next h)`. The candidate is only meaningful when the
/// step is accepted.
pub fn dopri5_step(
    model: &OdeModel,
    x: &DVector<f64>,
    t: f64,
    h: f64,
    abs_tol: f64,
    rel_tol: f64,
) -> Result<(DVector<f64>, f64, bool, f64)> {
    let mut stepper = Stepper::new(model.dim());
    let (err, accepted, next) = stepper.dopri5_trial(model, x, t, h, abs_tol, rel_tol)?;
    Ok((stepper.candidate.clone(), err, accepted, next))
}

/// Integrate `field` from `x0` at the first grid time, invoking `on_output`
/// with the state at every later grid time. The solver lands exactly on each
/// grid point.
pub fn integrate_field<F: VectorField>(
    field: &F,
    x0: &DVector<f64>,
    grid: &TimeGrid,
    cfg: &IntegratorConfig,
    mut on_output: impl FnMut(usize, &DVector<f64>),
) -> Result<()> {
    cfg.validate()?;
    if x0.len() != field.dim() {
        return Err(Error::ShapeMismatch(format!(
            "initial state has length {}, field dimension is {}",
            x0.len(),
            field.dim()
        )));
    }
    if x0.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteState);
    }
    let times = grid.times();
    let mut stepper = Stepper::new(field.dim());
    let mut x = x0.clone();
    match cfg.method {
        Method::Rk4 => {
            for k in 0..times.len() - 1 {
                let h = (times[k + 1] - times[k]) / cfg.rk4_substeps as f64;
                for s in 0..cfg.rk4_substeps {
                    let t = times[k] + h * s as f64;
                    stepper.rk4(field, &mut x, t, h)?;
                }
                on_output(k, &x);
            }
        }
        Method::Dopri5 => {
            let mut h_carry = times[1] - times[0];
            for k in 0..times.len() - 1 {
                let target = times[k + 1];
                let mut t = times[k];
                let mut steps = 0usize;
                while t < target {
                    let remaining = target - t;
                    let clipped = h_carry >= remaining;
                    let h = if clipped { remaining } else { h_carry };
                    if h < cfg.min_step {
                        return Err(Error::StepUnderflow { t });
                    }
                    steps += 1;
                    if steps > cfg.max_steps_per_interval {
                        return Err(Error::StepBudget { t });
                    }
                    let (_, accepted, next) =
                        stepper.dopri5_trial(field, &x, t, h, cfg.abs_tol, cfg.rel_tol)?;
                    if accepted {
                        x.copy_from(&stepper.candidate);
                        t = if clipped { target } else { t + h };
                    }
                    h_carry = next;
                }
                on_output(k, &x);
            }
        }
    }
    Ok(())
}

/// Predicted states at grid times t_1..t_n (the initial point is excluded);
/// row k approximates the solution at grid point k+1.
pub fn integrate(
    model: &OdeModel,
    x0: &DVector<f64>,
    grid: &TimeGrid,
    cfg: &IntegratorConfig,
) -> Result<DMatrix<f64>> {
    let mut out = DMatrix::zeros(grid.len() - 1, model.dim());
    integrate_field(model, x0, grid, cfg, |k, x| {
        out.row_mut(k).copy_from_slice(x.as_slice());
    })?;
    Ok(out)
}
