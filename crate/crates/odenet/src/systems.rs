//! Reference dynamical systems and synthetic data generation.
//!
//! Ground-truth coefficient matrices for the benchmark systems, closed-form
//! fixed points with stability classification for the two-species quadratic
//! system, and trajectory generation with white-noise injection. Generation
//! integrates with fixed-step RK4 at least ten times finer than the sampling
//! grid (capped at an absolute internal step of 0.01) so the discretization
//! error stays negligible against the injected noise.

use crate::basis::PolynomialBasis;
use crate::data::{Dataset, Trajectory};
use crate::error::{Error, Result};
use crate::integrate::{integrate_field, IntegratorConfig, Method, TimeGrid};
use crate::model::{CoefficientMatrix, OdeModel, Tie};
use crate::noise::inject_noise;
use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LvRegime {
    OverDamped,
    Spiral,
    LimitCycle,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActinKind {
    DataDriven,
    Physical,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Salt {
    Kcl,
    Mgcl2,
}

/// A named ground-truth system over a stated polynomial basis, with default
/// initial conditions, horizon and sampling step for data generation.
#[derive(Debug, Clone)]
pub struct ReferenceSystem {
    pub name: String,
    pub model: OdeModel,
    pub initial_conditions: Vec<Vec<f64>>,
    pub horizon: f64,
    pub dt: f64,
    /// Per-dimension observability of generated data.
    pub observed: Vec<bool>,
    /// Conserved totals, one per default initial condition, when the system
    /// carries a conservation law.
    pub conserved_totals: Option<Vec<f64>>,
}

/// Two-species quadratic population model:
/// `dx1/dt = C11 x1 + C12 x1 x2 + C13 x1^2`,
/// `dx2/dt = C21 x2 + C22 x1 x2 + C23 x2^2`.
pub fn lv_coefficients(regime: LvRegime) -> [f64; 6] {
    match regime {
        LvRegime::OverDamped => [1.5, -1.0, -1.0, -1.0, 1.0, 0.0],
        LvRegime::Spiral => [2.0, -1.1, -0.1, -1.0, -0.1, 0.9],
        LvRegime::LimitCycle => [1.0, -0.05, 0.0, -1.0, 0.03, 0.0],
    }
}

fn lv_theta(c: [f64; 6]) -> CoefficientMatrix {
    // basis(2,2) order: [1, x1, x2, x1^2, x1*x2, x2^2]
    let mut theta = CoefficientMatrix::zeros(2, 6);
    theta.set(0, 1, c[0]);
    theta.set(0, 4, c[1]);
    theta.set(0, 3, c[2]);
    theta.set(1, 2, c[3]);
    theta.set(1, 4, c[4]);
    theta.set(1, 5, c[5]);
    mask_to_support(&mut theta);
    theta
}

/// Deactivate exact-zero entries so the active set equals the support.
fn mask_to_support(theta: &mut CoefficientMatrix) {
    for row in 0..theta.dim() {
        for col in 0..theta.n_terms() {
            if theta.is_active(row, col) && theta.value(row, col) == 0.0 {
                theta.deactivate(row, col);
            }
        }
    }
}

pub fn make_lv(regime: LvRegime) -> ReferenceSystem {
    let name = match regime {
        LvRegime::OverDamped => "lv_over_damped",
        LvRegime::Spiral => "lv_spiral",
        LvRegime::LimitCycle => "lv_limit_cycle",
    };
    let basis = PolynomialBasis::new(2, 2).expect("basis");
    let model = OdeModel::new(basis, lv_theta(lv_coefficients(regime))).expect("model");
    let initial = match regime {
        LvRegime::LimitCycle => vec![vec![10.0, 10.0]],
        _ => vec![vec![1.0, 1.0]],
    };
    ReferenceSystem {
        name: name.to_string(),
        model,
        initial_conditions: initial,
        horizon: 30.0,
        dt: 0.01,
        observed: vec![true, true],
        conserved_totals: None,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Stability {
    StableNode,
    StableSpiral,
    UnstableNode,
    UnstableSpiral,
    Saddle,
    Marginal,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FixedPoint {
    pub location: [f64; 2],
    pub eigenvalues: [(f64, f64); 2],
    pub stability: Stability,
}

/// Closed-form fixed points of the two-species quadratic system, classified
/// by the eigenvalues of the state Jacobian. Degenerate coefficient
/// combinations return the subset of points that exist.
pub fn lv_fixed_points(system: &ReferenceSystem) -> Vec<FixedPoint> {
    let theta = system.model.theta();
    let c11 = theta.value(0, 1);
    let c12 = theta.value(0, 4);
    let c13 = theta.value(0, 3);
    let c21 = theta.value(1, 2);
    let c22 = theta.value(1, 4);
    let c23 = theta.value(1, 5);

    let mut points = vec![[0.0, 0.0]];
    if c13 != 0.0 {
        points.push([-c11 / c13, 0.0]);
    }
    if c23 != 0.0 {
        points.push([0.0, -c21 / c23]);
    }
    let denom = c12 * c22 - c13 * c23;
    if denom != 0.0 {
        points.push([
            -(c12 * c21 - c11 * c23) / denom,
            -(c11 * c22 - c13 * c21) / denom,
        ]);
    }

    points
        .into_iter()
        .map(|location| {
            let jac = system
                .model
                .rhs_jacobian_state(&location)
                .expect("finite fixed point");
            let eigenvalues = eig2(&jac);
            FixedPoint {
                location,
                eigenvalues,
                stability: classify(eigenvalues),
            }
        })
        .collect()
}

/// Eigenvalues of a 2x2 matrix as (re, im) pairs.
fn eig2(j: &DMatrix<f64>) -> [(f64, f64); 2] {
    let tr = j[(0, 0)] + j[(1, 1)];
    let det = j[(0, 0)] * j[(1, 1)] - j[(0, 1)] * j[(1, 0)];
    let disc = tr * tr - 4.0 * det;
    if disc >= 0.0 {
        let root = disc.sqrt();
        [((tr + root) / 2.0, 0.0), ((tr - root) / 2.0, 0.0)]
    } else {
        let imag = (-disc).sqrt() / 2.0;
        [(tr / 2.0, imag), (tr / 2.0, -imag)]
    }
}

fn classify(eigs: [(f64, f64); 2]) -> Stability {
    let complex = eigs[0].1 != 0.0;
    let re = [eigs[0].0, eigs[1].0];
    let tol = 1e-12;
    if re.iter().any(|r| r.abs() < tol) {
        return Stability::Marginal;
    }
    if complex {
        if re[0] < 0.0 {
            Stability::StableSpiral
        } else {
            Stability::UnstableSpiral
        }
    } else if re[0] < 0.0 && re[1] < 0.0 {
        Stability::StableNode
    } else if re[0] > 0.0 && re[1] > 0.0 {
        Stability::UnstableNode
    } else {
        Stability::Saddle
    }
}

/// The three-dimensional convection model with the classic chaotic
/// parameter set; exactly 7 of the 30 quadratic-basis coefficients are
/// nonzero.
pub fn make_lorenz() -> ReferenceSystem {
    // basis(3,2) order: [1, x1, x2, x3, x1^2, x1x2, x1x3, x2^2, x2x3, x3^2]
    let basis = PolynomialBasis::new(3, 2).expect("basis");
    let mut theta = CoefficientMatrix::zeros(3, 10);
    theta.set(0, 1, -10.0);
    theta.set(0, 2, 10.0);
    theta.set(1, 1, 28.0);
    theta.set(1, 2, -1.0);
    theta.set(1, 6, -1.0);
    theta.set(2, 3, -8.0 / 3.0);
    theta.set(2, 5, 1.0);
    mask_to_support(&mut theta);
    let model = OdeModel::new(basis, theta).expect("model");
    ReferenceSystem {
        name: "lorenz".to_string(),
        model,
        initial_conditions: vec![vec![-8.0, 7.0, 27.0]],
        horizon: 25.0,
        dt: 0.01,
        observed: vec![true, true, true],
        conserved_totals: None,
    }
}

/// Aggregation-rate coefficients fitted to the two buffer conditions.
/// Data-driven model (state (M, m), basis(2,2) over [1, M, m, M^2, Mm, m^2]):
/// `dM/dt = a0 + a1 M + a2 m + a3 M^2 + a4 mM + a5 m^2`, `dm/dt = -dM/dt`.
pub fn actin_data_driven_alphas(salt: Salt) -> [f64; 6] {
    match salt {
        Salt::Kcl => [4.62e-1, -2.16e-1, -5.49e-1, 5.70e-3, 1.10e-1, 7.87e1],
        Salt::Mgcl2 => [0.0, -1.41e-2, 9.20e-3, -3.75e-2, 2.28e-1, 3.10e1],
    }
}

/// Physical model coefficients (state (P, M, m)):
/// `dP/dt = a0 + a1 m + a2 m^2 + a3 mM + a4 P + a5 M + a6 P^2 + a7 PM`,
/// `dM/dt = a0 + a1 m + 2 a2 m^2 + a3 mM + a8 M + a9 mP + a10 P`,
/// `dm/dt = -(dM/dt)`.
pub fn actin_physical_alphas(salt: Salt) -> [f64; 11] {
    let mut a = [0.0; 11];
    match salt {
        Salt::Kcl => {
            a[1] = -5.12e-2;
            a[2] = 7.98e-3;
            a[3] = 1.16e-2;
            a[4] = -5.33e-1;
            a[9] = 7.39e-1;
            a[10] = -8.82e-1;
        }
        Salt::Mgcl2 => {
            a[1] = 2.15e-2;
            a[3] = 2.3e-2;
            a[9] = 1.19e1;
            a[10] = -2.97e1;
        }
    }
    a
}

/// Monomer totals (uM) for the seven incubation experiments per buffer.
pub fn actin_totals(salt: Salt) -> [f64; 7] {
    match salt {
        Salt::Kcl => [7.4, 9.6, 12.4, 14.2, 16.2, 18.4, 20.5],
        Salt::Mgcl2 => [6.7, 8.5, 11.5, 14.9, 17.3, 20.3, 22.9],
    }
}

/// Conservation ties for the two-state aggregation model: the monomer row
/// mirrors the filament-mass row with scale -1 on every column.
pub fn actin_data_driven_ties() -> Vec<Tie> {
    (0..6)
        .map(|j| Tie {
            target: (1, j),
            source: (0, j),
            scale: -1.0,
        })
        .collect()
}

/// Structural ties of the three-state physical model: shared rate constants
/// between the filament-count and mass equations, and exact mass
/// conservation between the mass and monomer rows.
/// Basis(3,2) order over (P, M, m): [1, P, M, m, P^2, PM, Pm, M^2, Mm, m^2].
pub fn actin_physical_ties() -> Vec<Tie> {
    let mut ties = vec![
        // dM/dt shares a0, a1, a3 with dP/dt and doubles a2
        Tie { target: (1, 0), source: (0, 0), scale: 1.0 },
        Tie { target: (1, 3), source: (0, 3), scale: 1.0 },
        Tie { target: (1, 9), source: (0, 9), scale: 2.0 },
        Tie { target: (1, 8), source: (0, 8), scale: 1.0 },
    ];
    // dm/dt = -(dM/dt): route each monomer-row entry to the free source
    ties.extend([
        Tie { target: (2, 0), source: (0, 0), scale: -1.0 },
        Tie { target: (2, 3), source: (0, 3), scale: -1.0 },
        Tie { target: (2, 9), source: (0, 9), scale: -2.0 },
        Tie { target: (2, 8), source: (0, 8), scale: -1.0 },
        Tie { target: (2, 2), source: (1, 2), scale: -1.0 },
        Tie { target: (2, 6), source: (1, 6), scale: -1.0 },
        Tie { target: (2, 1), source: (1, 1), scale: -1.0 },
    ]);
    ties
}

/// Fit template for the data-driven aggregation model: all six filament-row
/// coefficients free, monomer row tied by conservation.
pub fn actin_data_driven_template() -> CoefficientMatrix {
    let mut active = vec![true; 12];
    // the monomer row only carries the tied mirror entries
    for j in 0..6 {
        active[6 + j] = true;
    }
    CoefficientMatrix::new(2, 6, vec![0.0; 12], active, actin_data_driven_ties()).expect("template")
}

/// Fit template for the physical model: the eleven physically meaningful
/// rate constants are free or tied, every other entry starts inactive.
pub fn actin_physical_template() -> CoefficientMatrix {
    let mut active = vec![false; 30];
    let on = |active: &mut Vec<bool>, row: usize, col: usize| active[row * 10 + col] = true;
    // dP/dt: a0..a7 -> columns [1:a0? no]: see layout below
    for &col in &[0usize, 3, 9, 8, 1, 2, 4, 5] {
        on(&mut active, 0, col);
    }
    // dM/dt: tied a0, a1, 2a2, a3 plus free a8 (M), a9 (Pm), a10 (P)
    for &col in &[0usize, 3, 9, 8, 2, 6, 1] {
        on(&mut active, 1, col);
    }
    // dm/dt mirrors dM/dt
    for &col in &[0usize, 3, 9, 8, 2, 6, 1] {
        on(&mut active, 2, col);
    }
    CoefficientMatrix::new(3, 10, vec![0.0; 30], active, actin_physical_ties()).expect("template")
}

fn actin_physical_theta(alphas: [f64; 11]) -> CoefficientMatrix {
    let mut theta = actin_physical_template();
    theta.set(0, 0, alphas[0]);
    theta.set(0, 3, alphas[1]);
    theta.set(0, 9, alphas[2]);
    theta.set(0, 8, alphas[3]);
    theta.set(0, 1, alphas[4]);
    theta.set(0, 2, alphas[5]);
    theta.set(0, 4, alphas[6]);
    theta.set(0, 5, alphas[7]);
    theta.set(1, 2, alphas[8]);
    theta.set(1, 6, alphas[9]);
    theta.set(1, 1, alphas[10]);
    mask_to_support(&mut theta);
    theta
}

fn actin_data_driven_theta(alphas: [f64; 6]) -> CoefficientMatrix {
    let mut theta = actin_data_driven_template();
    for (j, &a) in alphas.iter().enumerate() {
        theta.set(0, j, a);
    }
    mask_to_support(&mut theta);
    theta
}

pub fn make_actin(kind: ActinKind, salt: Salt) -> ReferenceSystem {
    let salt_name = match salt {
        Salt::Kcl => "kcl",
        Salt::Mgcl2 => "mgcl2",
    };
    let totals = actin_totals(salt);
    match kind {
        ActinKind::DataDriven => {
            let basis = PolynomialBasis::new(2, 2).expect("basis");
            let model =
                OdeModel::new(basis, actin_data_driven_theta(actin_data_driven_alphas(salt)))
                    .expect("model");
            // state (M, m): a small seeded filament mass, the rest monomeric
            let initial = totals
                .iter()
                .map(|&t| vec![1e-3 * t, t - 1e-3 * t])
                .collect();
            ReferenceSystem {
                name: format!("actin_data_driven_{salt_name}"),
                model,
                initial_conditions: initial,
                horizon: 4.0,
                dt: 0.04,
                observed: vec![true, true],
                conserved_totals: Some(totals.to_vec()),
            }
        }
        ActinKind::Physical => {
            let basis = PolynomialBasis::new(3, 2).expect("basis");
            let model = OdeModel::new(basis, actin_physical_theta(actin_physical_alphas(salt)))
                .expect("model");
            // state (P, M, m): filament count starts at zero (all filaments
            // arise by nucleation), filament mass from a small seed
            let initial = totals
                .iter()
                .map(|&t| vec![0.0, 1e-3 * t, t - 1e-3 * t])
                .collect();
            ReferenceSystem {
                name: format!("actin_physical_{salt_name}"),
                model,
                initial_conditions: initial,
                horizon: 4.0,
                dt: 0.04,
                observed: vec![false, true, true],
                conserved_totals: Some(totals.to_vec()),
            }
        }
    }
}

pub fn system_by_name(name: &str) -> Result<ReferenceSystem> {
    match name {
        "lv_over_damped" => Ok(make_lv(LvRegime::OverDamped)),
        "lv_spiral" => Ok(make_lv(LvRegime::Spiral)),
        "lv_limit_cycle" => Ok(make_lv(LvRegime::LimitCycle)),
        "lorenz" => Ok(make_lorenz()),
        "actin_data_driven_kcl" => Ok(make_actin(ActinKind::DataDriven, Salt::Kcl)),
        "actin_data_driven_mgcl2" => Ok(make_actin(ActinKind::DataDriven, Salt::Mgcl2)),
        "actin_physical_kcl" => Ok(make_actin(ActinKind::Physical, Salt::Kcl)),
        "actin_physical_mgcl2" => Ok(make_actin(ActinKind::Physical, Salt::Mgcl2)),
        other => Err(Error::Config(format!("unknown reference system '{other}'"))),
    }
}

/// Exact (noise-free) solution of a reference model on a grid, fixed-step
/// RK4 with internal step <= min(dt/10, 0.01). Fast initial transients can
/// put that step outside the RK4 stability region, so on divergence the
/// substep count doubles (up to 2^12 times) before giving up.
pub fn exact_trajectory(model: &OdeModel, x0: &[f64], grid: &TimeGrid) -> Result<DMatrix<f64>> {
    let min_dt = grid
        .times()
        .windows(2)
        .map(|w| w[1] - w[0])
        .fold(f64::INFINITY, f64::min);
    let mut substeps = ((min_dt / 0.01).ceil() as usize).max(10);
    let x0 = DVector::from_column_slice(x0);
    for _attempt in 0..13 {
        let cfg = IntegratorConfig {
            method: Method::Rk4,
            rk4_substeps: substeps,
            ..Default::default()
        };
        let mut values = DMatrix::zeros(grid.len(), x0.len());
        values.row_mut(0).copy_from_slice(x0.as_slice());
        match integrate_field(model, &x0, grid, &cfg, |k, x| {
            values.row_mut(k + 1).copy_from_slice(x.as_slice());
        }) {
            Ok(()) => return Ok(values),
            Err(Error::Divergence { .. }) => substeps *= 2,
            Err(other) => return Err(other),
        }
    }
    Err(Error::Divergence { t: grid.times()[0] })
}

/// Generate one noisy trajectory per initial condition: integrate the true
/// model finely, sample on the grid, add white noise of strength `eps`.
/// The per-trajectory noise stream is split by index, so regenerating any
/// single trajectory is reproducible. When the system carries a conserved
/// total, the derived monomer column is recomputed from the noisy mass so
/// the conservation law holds exactly in the emitted data.
pub fn generate_dataset(
    system: &ReferenceSystem,
    initial_conditions: &[Vec<f64>],
    horizon: f64,
    dt: f64,
    eps: f64,
    seed: u64,
) -> Result<Dataset> {
    if !(eps >= 0.0) {
        return Err(Error::Config("noise strength must be >= 0".into()));
    }
    let steps = (horizon / dt).round() as usize;
    let grid = TimeGrid::uniform(0.0, dt, steps)?;
    let mut trajectories = Vec::with_capacity(initial_conditions.len());
    for (index, x0) in initial_conditions.iter().enumerate() {
        let values = exact_trajectory(&system.model, x0, &grid)?;
        let total = system
            .conserved_totals
            .as_ref()
            .map(|totals| totals.get(index).copied().unwrap_or(x0.iter().sum()));
        let clean = Trajectory::with_mask(
            grid.clone(),
            values,
            system.observed.clone(),
            total,
        )?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(index as u64);
        let mut noisy = inject_noise(&clean, eps, &mut rng);
        if let Some(total) = total {
            // monomer column (last) derived from the noisy mass column
            let d = noisy.dim();
            for r in 0..noisy.values.nrows() {
                noisy.values[(r, d - 1)] = total - noisy.values[(r, d - 2)];
            }
        }
        trajectories.push(noisy);
    }
    Dataset::new(trajectories)
}

/// Generate with the system defaults for everything but noise and seed.
pub fn generate_default(system: &ReferenceSystem, eps: f64, seed: u64) -> Result<Dataset> {
    generate_dataset(
        system,
        &system.initial_conditions,
        system.horizon,
        system.dt,
        eps,
        seed,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn lv_coefficient_table() {
        assert_eq!(lv_coefficients(LvRegime::LimitCycle)[1], -0.05);
        assert_eq!(lv_coefficients(LvRegime::OverDamped)[5], 0.0);
        assert_eq!(lv_coefficients(LvRegime::Spiral)[5], 0.9);
    }

    #[test]
    fn origin_is_always_a_fixed_point() {
        for regime in [LvRegime::OverDamped, LvRegime::Spiral, LvRegime::LimitCycle] {
            let system = make_lv(regime);
            let points = lv_fixed_points(&system);
            assert!(points.iter().any(|p| p.location == [0.0, 0.0]));
            for p in &points {
                let f = system.model.rhs(&p.location).unwrap();
                assert!(f.iter().all(|v| v.abs() < 1e-9), "rhs at {:?} = {f:?}", p.location);
            }
        }
    }

    #[test]
    fn over_damped_axis_point() {
        let system = make_lv(LvRegime::OverDamped);
        let points = lv_fixed_points(&system);
        assert!(points
            .iter()
            .any(|p| (p.location[0] - 1.5).abs() < 1e-12 && p.location[1] == 0.0));
    }

    #[test]
    fn limit_cycle_center_is_marginal() {
        let system = make_lv(LvRegime::LimitCycle);
        let points = lv_fixed_points(&system);
        let center = points
            .iter()
            .find(|p| (p.location[0] - 100.0 / 3.0).abs() < 1e-9)
            .expect("interior point");
        assert_relative_eq!(center.location[1], 20.0, epsilon = 1e-9);
        assert_eq!(center.stability, Stability::Marginal);
        // purely imaginary pair
        assert_relative_eq!(center.eigenvalues[0].0, 0.0, epsilon = 1e-12);
        assert!(center.eigenvalues[0].1.abs() > 0.9);
    }

    #[test]
    fn interior_points_classify_by_eigenvalues() {
        // Spiral-regime coefficients: the coexistence point (3.5, 1.5) has
        // tr J = 1, det J = -1.05, a saddle by hand computation.
        let system = make_lv(LvRegime::Spiral);
        let points = lv_fixed_points(&system);
        let interior = points
            .iter()
            .find(|p| p.location[0] > 0.0 && p.location[1] > 0.0)
            .expect("interior point");
        assert_relative_eq!(interior.location[0], 3.5, epsilon = 1e-9);
        assert_relative_eq!(interior.location[1], 1.5, epsilon = 1e-9);
        assert_eq!(interior.stability, Stability::Saddle);

        // Over-damped-regime coefficients: (1, 0.5) has eigenvalues
        // -0.5 +/- 0.5i, a stable spiral.
        let system = make_lv(LvRegime::OverDamped);
        let points = lv_fixed_points(&system);
        let interior = points
            .iter()
            .find(|p| p.location[0] > 0.9 && p.location[1] > 0.0)
            .expect("interior point");
        assert_relative_eq!(interior.location[0], 1.0, epsilon = 1e-9);
        assert_relative_eq!(interior.location[1], 0.5, epsilon = 1e-9);
        assert_eq!(interior.stability, Stability::StableSpiral);
        assert_relative_eq!(interior.eigenvalues[0].0, -0.5, epsilon = 1e-12);
        assert_relative_eq!(interior.eigenvalues[0].1, 0.5, epsilon = 1e-12);
    }

    #[test]
    fn chaotic_system_support_and_equilibria() {
        let system = make_lorenz();
        let theta = system.model.theta();
        assert_eq!(theta.value(2, 3), -8.0 / 3.0);
        assert_eq!(theta.nonzero_set().len(), 7);
        assert_eq!(30 - theta.nonzero_set().len(), 23);
        let eq = [6.0 * 2.0f64.sqrt(), 6.0 * 2.0f64.sqrt(), 27.0];
        let f = system.model.rhs(&eq).unwrap();
        for v in f.iter() {
            assert!(v.abs() < 1e-12, "rhs {v} at equilibrium");
        }
    }

    #[test]
    fn rendered_equations_match_the_stated_forms() {
        let lv = make_lv(LvRegime::LimitCycle);
        let lines = lv.model.render_equations(3);
        assert_eq!(lines[0], "dx1/dt = 1.000*x1 - 0.050*x1*x2");
        assert_eq!(lines[1], "dx2/dt = -1.000*x2 + 0.030*x1*x2");
    }

    #[test]
    fn actin_tables() {
        let dd = make_actin(ActinKind::DataDriven, Salt::Kcl);
        assert_eq!(dd.model.theta().value(0, 5), 78.7); // m^2 rate
        let phys = make_actin(ActinKind::Physical, Salt::Mgcl2);
        // a2 (m^2 in the count equation) and a4 (P) are zero
        assert_eq!(phys.model.theta().value(0, 9), 0.0);
        assert_eq!(phys.model.theta().value(0, 1), 0.0);
        assert_eq!(phys.model.theta().value(1, 6), 11.9);
        assert_eq!(phys.observed, vec![false, true, true]);
    }

    #[test]
    fn conservation_is_exact_for_any_state() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        use rand::Rng as _;
        for system in [
            make_actin(ActinKind::DataDriven, Salt::Kcl),
            make_actin(ActinKind::DataDriven, Salt::Mgcl2),
        ] {
            for _ in 0..50 {
                let x = [rng.gen_range(0.0..20.0), rng.gen_range(0.0..20.0)];
                let f = system.model.rhs(&x).unwrap();
                assert_eq!(f[0] + f[1], 0.0);
            }
        }
        for system in [
            make_actin(ActinKind::Physical, Salt::Kcl),
            make_actin(ActinKind::Physical, Salt::Mgcl2),
        ] {
            for _ in 0..50 {
                let x = [
                    rng.gen_range(0.0..5.0),
                    rng.gen_range(0.0..20.0),
                    rng.gen_range(0.0..20.0),
                ];
                let f = system.model.rhs(&x).unwrap();
                assert_eq!(f[1] + f[2], 0.0);
            }
        }
    }

    #[test]
    fn limit_cycle_orbit_closes() {
        // successive oscillation peaks of a closed orbit agree within 0.1%
        let system = make_lv(LvRegime::LimitCycle);
        let dataset = generate_default(&system, 0.0, 0).unwrap();
        let traj = &dataset.trajectories[0];
        let xs: Vec<f64> = (0..traj.len()).map(|r| traj.values[(r, 0)]).collect();
        let mut peaks = Vec::new();
        for k in 1..xs.len() - 1 {
            if xs[k] > xs[k - 1] && xs[k] > xs[k + 1] && xs[k] > 50.0 {
                peaks.push(xs[k]);
            }
        }
        assert!(peaks.len() >= 2, "expected at least two oscillation peaks");
        for w in peaks.windows(2) {
            assert!(
                (w[0] - w[1]).abs() / w[0] < 1e-3,
                "peaks {w:?} differ by more than 0.1%"
            );
        }
        // populations stay strictly positive
        assert!(traj.values.iter().all(|&v| v > 0.0));
    }

    #[test]
    fn injected_noise_has_the_requested_scale() {
        let system = make_lv(LvRegime::LimitCycle);
        let clean = generate_default(&system, 0.0, 3).unwrap();
        let noisy = generate_default(&system, 0.01, 3).unwrap();
        let norms = clean.trajectories[0].sup_norms();
        for c in 0..2 {
            let diffs: Vec<f64> = (0..clean.trajectories[0].len())
                .map(|r| noisy.trajectories[0].values[(r, c)] - clean.trajectories[0].values[(r, c)])
                .collect();
            let std =
                (diffs.iter().map(|d| d * d).sum::<f64>() / diffs.len() as f64).sqrt();
            let expected = 0.01 * norms[c];
            assert!(
                (std / expected - 1.0).abs() < 0.1,
                "noise std {std} vs expected {expected}"
            );
        }
    }

    #[test]
    fn generation_is_reproducible_per_seed() {
        let system = make_lorenz();
        let a = generate_dataset(&system, &system.initial_conditions, 1.0, 0.01, 0.005, 9).unwrap();
        let b = generate_dataset(&system, &system.initial_conditions, 1.0, 0.01, 0.005, 9).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn actin_dataset_hides_the_count_and_keeps_conservation() {
        let system = make_actin(ActinKind::Physical, Salt::Mgcl2);
        let dataset = generate_default(&system, 0.001, 5).unwrap();
        assert_eq!(dataset.trajectories.len(), 7);
        for (traj, &total) in dataset
            .trajectories
            .iter()
            .zip(actin_totals(Salt::Mgcl2).iter())
        {
            assert_eq!(traj.observed, vec![false, true, true]);
            assert_eq!(traj.conserved_total, Some(total));
            for r in 0..traj.len() {
                assert_relative_eq!(
                    traj.values[(r, 1)] + traj.values[(r, 2)],
                    total,
                    epsilon = 1e-12
                );
            }
        }
    }

    #[test]
    fn chaotic_trajectories_diverge_from_nearby_starts() {
        let system = make_lorenz();
        let a = generate_dataset(&system, &[vec![-8.0, 7.0, 27.0]], 25.0, 0.01, 0.0, 0).unwrap();
        let b =
            generate_dataset(&system, &[vec![-8.0 + 1e-8, 7.0, 27.0]], 25.0, 0.01, 0.0, 0).unwrap();
        let ta = &a.trajectories[0].values;
        let tb = &b.trajectories[0].values;
        let mut max_sep = 0.0f64;
        for r in 0..ta.nrows() {
            let sep = ((ta[(r, 0)] - tb[(r, 0)]).powi(2)
                + (ta[(r, 1)] - tb[(r, 1)]).powi(2)
                + (ta[(r, 2)] - tb[(r, 2)]).powi(2))
            .sqrt();
            max_sep = max_sep.max(sep);
        }
        assert!(
            max_sep > 1.0,
            "separation {max_sep} from a 1e-8 perturbation; expected O(1) growth"
        );
    }

    #[test]
    fn physical_template_has_eleven_free_parameters() {
        let template = actin_physical_template();
        assert_eq!(template.free_entries().len(), 11);
        // all 21 active entries: 8 + 7 + 7 minus... count directly
        assert_eq!(template.active_count(), 22);
    }
}
