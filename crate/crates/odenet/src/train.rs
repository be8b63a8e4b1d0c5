//! The fitting loop: sample short trajectory windows, evaluate the batch
//! loss and its exact gradients, take an Adam step, and periodically prune
//! coefficients below the running threshold.
//!
//! Both the regularization weight `mu` and the pruning threshold `gamma`
//! follow log-linear schedules between configured endpoints, as does the
//! learning rate; a fixed stochastic step cannot settle small coefficients
//! to the accuracy the recovery tolerances demand. Convergence is judged on
//! an exponentially smoothed batch loss (half-life 50 iterations) because
//! the raw batch loss is noisy.

use crate::basis::PolynomialBasis;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::integrate::IntegratorConfig;
use crate::model::{CoefficientMatrix, OdeModel};
use crate::noise::NoiseField;
use crate::sensitivity::{
    hidden_dims, loss_and_gradient, Batch, BatchPiece, FreeParamLayout, LossContext,
};
use crate::sindy;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamConfig {
    pub lr_start: f64,
    pub lr_end: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr_start: 1e-2,
            lr_end: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Log-linear interpolation between two positive endpoints.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Schedule {
    pub start: f64,
    pub end: f64,
}

impl Schedule {
    pub fn constant(value: f64) -> Self {
        Self { start: value, end: value }
    }

    /// Value at `iter` of `total` iterations; start at 0, end at total - 1.
    pub fn at(&self, iter: usize, total: usize) -> f64 {
        if total <= 1 || self.start == self.end {
            return self.start;
        }
        let frac = iter as f64 / (total - 1) as f64;
        self.start * (self.end / self.start).powf(frac)
    }

    pub fn validate(&self, what: &str) -> Result<()> {
        if !(self.start > 0.0) || !(self.end > 0.0) {
            return Err(Error::Config(format!("{what} schedule must be positive")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitStrategy {
    RandomSmall,
    WarmStart,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    /// Batch size: windows per iteration.
    pub m: usize,
    /// Window length in grid intervals (each piece holds n+1 samples).
    pub n: usize,
    pub iterations: usize,
    /// Stop once the smoothed batch loss falls below this value.
    pub loss_threshold: f64,
    pub adam: AdamConfig,
    pub mu: Schedule,
    pub gamma: Schedule,
    /// Iterations between pruning passes.
    pub threshold_period: usize,
    pub seed: u64,
    pub integrator: IntegratorConfig,
    pub learn_noise: bool,
    /// Expected noise magnitude relative to the data sup norm; scales the
    /// offset learning rate so offsets move on the data scale.
    pub noise_scale_guess: f64,
    pub init: InitStrategy,
    /// Elongation-rate guess used to seed hidden initial values.
    pub elongation_guess: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            m: 20,
            n: 5,
            iterations: 20_000,
            loss_threshold: 0.0,
            adam: AdamConfig::default(),
            mu: Schedule { start: 1e-3, end: 1e-5 },
            gamma: Schedule { start: 1e-4, end: 1e-3 },
            threshold_period: 100,
            seed: 0,
            integrator: IntegratorConfig::default(),
            learn_noise: false,
            noise_scale_guess: 0.01,
            init: InitStrategy::WarmStart,
            elongation_guess: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.m == 0 || self.n == 0 || self.iterations == 0 || self.threshold_period == 0 {
            return Err(Error::Config(
                "batch size, window length, iterations and threshold period must be positive"
                    .into(),
            ));
        }
        self.mu.validate("mu")?;
        self.gamma.validate("gamma")?;
        if !(self.adam.lr_start > 0.0) || !(self.adam.lr_end > 0.0) {
            return Err(Error::Config("learning rate endpoints must be positive".into()));
        }
        self.integrator.validate()
    }
}

/// Adam first/second moments with per-entry step counts, so sparsely
/// updated parameters (noise offsets) get correct bias correction.
#[derive(Debug, Clone, Default)]
pub struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    steps: Vec<u64>,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        Self {
            m: vec![0.0; len],
            v: vec![0.0; len],
            steps: vec![0; len],
        }
    }

    /// Update one entry in place, returning the new parameter value.
    pub fn update_entry(
        &mut self,
        index: usize,
        param: f64,
        grad: f64,
        lr: f64,
        cfg: &AdamConfig,
    ) -> f64 {
        self.steps[index] += 1;
        let t = self.steps[index] as i32;
        self.m[index] = cfg.beta1 * self.m[index] + (1.0 - cfg.beta1) * grad;
        self.v[index] = cfg.beta2 * self.v[index] + (1.0 - cfg.beta2) * grad * grad;
        let m_hat = self.m[index] / (1.0 - cfg.beta1.powi(t));
        let v_hat = self.v[index] / (1.0 - cfg.beta2.powi(t));
        param - lr * m_hat / (v_hat.sqrt() + cfg.epsilon)
    }
}

/// Dense Adam step over a parameter slice.
pub fn adam_update(
    params: &mut [f64],
    grads: &[f64],
    state: &mut AdamState,
    lr: f64,
    cfg: &AdamConfig,
) {
    debug_assert_eq!(params.len(), grads.len());
    for (i, (p, &g)) in params.iter_mut().zip(grads).enumerate() {
        *p = state.update_entry(i, *p, g, lr, cfg);
    }
}

/// Draw `m` windows of `n` intervals uniformly (with replacement) over all
/// valid (trajectory, start) pairs. Datasets with hidden dimensions only
/// admit windows anchored at the trajectory start, where the hidden state is
/// a learnable quantity; interior hidden states are unknown.
pub fn sample_batch<R: Rng>(
    dataset: &Dataset,
    m: usize,
    n: usize,
    rng: &mut R,
) -> Result<Batch> {
    let anchored = dataset.has_hidden();
    let mut pairs: Vec<(usize, usize)> = Vec::new();
    for (t, traj) in dataset.trajectories.iter().enumerate() {
        if traj.len() < n + 1 {
            continue;
        }
        if anchored {
            pairs.push((t, 0));
        } else {
            pairs.extend((0..traj.len() - n).map(|s| (t, s)));
        }
    }
    if pairs.is_empty() {
        return Err(Error::Config(format!(
            "no trajectory is long enough for windows of {} samples",
            n + 1
        )));
    }
    let pieces = (0..m)
        .map(|_| {
            let (trajectory, start) = pairs[rng.gen_range(0..pairs.len())];
            BatchPiece {
                trajectory,
                start,
                len: n + 1,
            }
        })
        .collect();
    Ok(Batch { pieces })
}

/// Initial coefficients: small uniform noise, or a least-squares warm start
/// from finite-difference derivatives. The warm start needs observable
/// derivatives and an unconstrained parameterization; otherwise it falls
/// back to the random draw.
pub fn initialize_theta<R: Rng>(
    dataset: &Dataset,
    basis: &PolynomialBasis,
    strategy: InitStrategy,
    rng: &mut R,
    template: Option<&CoefficientMatrix>,
) -> Result<CoefficientMatrix> {
    let random_small = |rng: &mut R| -> CoefficientMatrix {
        let mut theta = template.cloned().unwrap_or_else(|| {
            CoefficientMatrix::zeros(basis.dim(), basis.len())
        });
        for (row, col) in theta.free_entries() {
            theta.set(row, col, rng.gen_range(-0.1..0.1));
        }
        theta
    };
    match strategy {
        InitStrategy::RandomSmall => Ok(random_small(rng)),
        InitStrategy::WarmStart => {
            let tied = template.map_or(false, |t| !t.ties().is_empty());
            if dataset.has_hidden() || tied {
                log::warn!(
                    "warm start unavailable (hidden dimensions or tied coefficients); \
                     falling back to random initialization"
                );
                return Ok(random_small(rng));
            }
            let problem = sindy::build_problem(dataset, basis)?;
            let fit = sindy::stlsq(&problem, 0.0, 1);
            match template {
                None => Ok(fit),
                Some(t) => {
                    let mut theta = t.clone();
                    for (row, col) in theta.free_entries() {
                        theta.set(row, col, fit.value(row, col));
                    }
                    Ok(theta)
                }
            }
        }
    }
}

/// Seed value for a hidden filament-count dimension: the initial slope of
/// the first observed (mass) dimension divided by the elongation guess and
/// the free-monomer level from the conserved total, floored at 1e-6.
pub fn estimate_hidden_initial(
    trajectory: &crate::data::Trajectory,
    elongation_guess: f64,
) -> Result<f64> {
    if !(elongation_guess > 0.0) {
        return Err(Error::Config("elongation guess must be positive".into()));
    }
    let mass_dim = (0..trajectory.dim())
        .find(|&i| trajectory.observed[i])
        .ok_or_else(|| Error::DegenerateData("no observed dimension".into()))?;
    let total = trajectory
        .conserved_total
        .ok_or_else(|| Error::DegenerateData("conserved total required".into()))?;
    let monomer0 = total - trajectory.values[(0, mass_dim)];
    if monomer0 <= 0.0 {
        return Err(Error::DegenerateData(
            "free monomer level at the start must be positive".into(),
        ));
    }
    let times = trajectory.grid.times();
    let slope =
        (trajectory.values[(1, mass_dim)] - trajectory.values[(0, mass_dim)]) / (times[1] - times[0]);
    Ok((slope / (elongation_guess * monomer0)).max(1e-6))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PruneEvent {
    pub iteration: usize,
    pub row: usize,
    pub term: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TrainLogLine {
    pub iteration: usize,
    pub loss: f64,
    pub smoothed_loss: f64,
    pub active_terms: usize,
    pub mu: f64,
    pub gamma: f64,
    pub failed_pieces: usize,
}

#[derive(Debug, Clone)]
pub struct FittedModel {
    pub model: OdeModel,
    pub noise: Option<NoiseField>,
    /// Learned initial values for hidden dimensions, per trajectory.
    pub hidden_init: Vec<Vec<f64>>,
    /// Raw batch loss per iteration.
    pub loss_history: Vec<f64>,
    pub prune_events: Vec<PruneEvent>,
    pub log: Vec<TrainLogLine>,
}

const SMOOTHING_HALF_LIFE: f64 = 50.0;
const MAX_CONSECUTIVE_FAILED_BATCHES: usize = 50;

pub fn train(dataset: &Dataset, basis: &PolynomialBasis, config: &TrainConfig) -> Result<FittedModel> {
    train_with_template(dataset, basis, config, None)
}

/// Train with an optional structural template fixing the initial active set
/// and tie constraints of the coefficient matrix.
pub fn train_with_template(
    dataset: &Dataset,
    basis: &PolynomialBasis,
    config: &TrainConfig,
    template: Option<&CoefficientMatrix>,
) -> Result<FittedModel> {
    config.validate()?;
    if basis.dim() != dataset.dim() {
        return Err(Error::ShapeMismatch(
            "basis dimension must match dataset dimension".into(),
        ));
    }
    let observed0 = &dataset.trajectories[0].observed;
    if dataset.trajectories.iter().any(|t| &t.observed != observed0) {
        return Err(Error::Config(
            "all trajectories must share one observation mask".into(),
        ));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let theta = initialize_theta(dataset, basis, config.init, &mut rng, template)?;
    let mut model = OdeModel::new(basis.clone(), theta)?;
    let mut layout = FreeParamLayout::of(model.theta());

    let hidden = hidden_dims(dataset);
    let mut hidden_init: Vec<Vec<f64>> = Vec::with_capacity(dataset.trajectories.len());
    for traj in &dataset.trajectories {
        if hidden.is_empty() {
            hidden_init.push(Vec::new());
        } else {
            let guess = match config.elongation_guess {
                Some(g) => estimate_hidden_initial(traj, g)?,
                None => 1e-6,
            };
            hidden_init.push(vec![guess; hidden.len()]);
        }
    }

    let mut noise = if config.learn_noise {
        Some(NoiseField::init(dataset, config.noise_scale_guess)?)
    } else {
        None
    };

    let d = basis.dim();
    let n_terms = basis.len();
    let mut adam_theta = AdamState::new(d * n_terms);
    let mut adam_hidden = AdamState::new(dataset.trajectories.len() * hidden.len().max(1));
    let mut adam_noise: Vec<AdamState> = dataset
        .trajectories
        .iter()
        .map(|t| AdamState::new(t.len() * d))
        .collect();
    // Offsets live on the data scale; their steps are scaled accordingly.
    let noise_lr_scale: Vec<f64> = dataset
        .sup_norms()
        .iter()
        .map(|&s| (config.noise_scale_guess * s).max(1.0))
        .collect();
    let lr_schedule = Schedule {
        start: config.adam.lr_start,
        end: config.adam.lr_end,
    };

    let mut loss_history = Vec::with_capacity(config.iterations);
    let mut log = Vec::with_capacity(config.iterations);
    let mut prune_events = Vec::new();
    let mut smoothed = f64::NAN;
    let smoothing = 0.5f64.powf(1.0 / SMOOTHING_HALF_LIFE);
    let mut consecutive_failed = 0usize;

    for iteration in 0..config.iterations {
        let mu = config.mu.at(iteration, config.iterations);
        let gamma = config.gamma.at(iteration, config.iterations);
        let lr = lr_schedule.at(iteration, config.iterations);
        let batch = sample_batch(dataset, config.m, config.n, &mut rng)?;

        let out = {
            let ctx = LossContext {
                dataset,
                model: &model,
                layout: &layout,
                noise: noise.as_ref(),
                hidden_init: &hidden_init,
                mu,
                integrator: &config.integrator,
            };
            loss_and_gradient(&ctx, &batch)
        };

        if out.failures.len() == batch.pieces.len() {
            consecutive_failed += 1;
            if consecutive_failed >= MAX_CONSECUTIVE_FAILED_BATCHES {
                loss_history.push(out.loss);
                return Err(Error::TrainingDiverged {
                    batches: consecutive_failed,
                    loss_history,
                });
            }
        } else {
            consecutive_failed = 0;
        }

        for (param, &grad) in layout.params.iter().zip(&out.grad_theta) {
            let index = param.row * n_terms + param.col;
            let value = model.theta().value(param.row, param.col);
            let updated = adam_theta.update_entry(index, value, grad, lr, &config.adam);
            model.theta_mut().set(param.row, param.col, updated);
        }

        for (traj, grads) in out.grad_hidden.iter().enumerate() {
            for (slot, &grad) in grads.iter().enumerate() {
                if grad == 0.0 {
                    continue;
                }
                let index = traj * hidden.len() + slot;
                let value = hidden_init[traj][slot];
                hidden_init[traj][slot] =
                    adam_hidden.update_entry(index, value, grad, lr, &config.adam);
            }
        }

        if let Some(field) = noise.as_mut() {
            for &(traj, sample) in &out.touched_samples {
                for dim in 0..d {
                    if !field.observed()[dim] {
                        continue;
                    }
                    let grad = out.grad_noise[traj][(sample, dim)];
                    let index = sample * d + dim;
                    let value = field.get(traj, sample, dim);
                    let updated = adam_noise[traj].update_entry(
                        index,
                        value,
                        grad,
                        lr * noise_lr_scale[dim],
                        &config.adam,
                    );
                    field.set(traj, sample, dim, updated);
                }
            }
        }

        if (iteration + 1) % config.threshold_period == 0 {
            let before = model.theta().active_set();
            let pruned = model.theta_mut().apply_threshold(gamma);
            if pruned > 0 {
                for (row, col) in before {
                    if !model.theta().is_active(row, col) {
                        prune_events.push(PruneEvent {
                            iteration,
                            row,
                            term: basis.term_label(col).expect("index in range"),
                        });
                    }
                }
                layout = FreeParamLayout::of(model.theta());
            }
        }

        smoothed = if smoothed.is_nan() {
            out.loss
        } else {
            smoothing * smoothed + (1.0 - smoothing) * out.loss
        };
        loss_history.push(out.loss);
        log.push(TrainLogLine {
            iteration,
            loss: out.loss,
            smoothed_loss: smoothed,
            active_terms: model.theta().active_count(),
            mu,
            gamma,
            failed_pieces: out.failures.len(),
        });

        if smoothed < config.loss_threshold {
            break;
        }
    }

    Ok(FittedModel {
        model,
        noise,
        hidden_init,
        loss_history,
        prune_events,
        log,
    })
}

/// Data loss of a model over entire trajectories (each one integrated from
/// its first sample), with the number of squared residual terms. Used for
/// convergence reporting rather than training.
pub fn full_data_loss(
    dataset: &Dataset,
    model: &OdeModel,
    noise: Option<&NoiseField>,
    hidden_init: &[Vec<f64>],
    integrator: &IntegratorConfig,
) -> Result<(f64, usize)> {
    let layout = FreeParamLayout::of(model.theta());
    let pieces = dataset
        .trajectories
        .iter()
        .enumerate()
        .map(|(t, traj)| BatchPiece {
            trajectory: t,
            start: 0,
            len: traj.len(),
        })
        .collect();
    let ctx = LossContext {
        dataset,
        model,
        layout: &layout,
        noise,
        hidden_init,
        mu: 0.0,
        integrator,
    };
    let out = loss_and_gradient(&ctx, &Batch { pieces });
    if let Some((_, err)) = out.failures.into_iter().next() {
        return Err(err);
    }
    Ok((out.data_loss, out.residual_terms))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Trajectory;
    use crate::integrate::{integrate, Method, TimeGrid};
    use approx::assert_relative_eq;
    use nalgebra::{dvector, DMatrix};

    #[test]
    fn schedule_endpoints_and_log_midpoint() {
        let s = Schedule { start: 1e-3, end: 1e-5 };
        let total = 101;
        assert_eq!(s.at(0, total), 1e-3);
        assert_relative_eq!(s.at(total - 1, total), 1e-5, max_relative = 1e-12);
        assert_relative_eq!(s.at(50, total), 1e-4, max_relative = 1e-12);
        let c = Schedule::constant(0.5);
        assert_eq!(c.at(17, 100), 0.5);
    }

    #[test]
    fn adam_first_step_is_normalized_gradient() {
        let cfg = AdamConfig {
            lr_start: 0.1,
            lr_end: 0.1,
            ..Default::default()
        };
        for &g in &[3.0, -0.5, 1e4] {
            let mut state = AdamState::new(1);
            let mut params = [1.0];
            adam_update(&mut params, &[g], &mut state, 0.1, &cfg);
            let expected = 1.0 - 0.1 * g / (g.abs() + cfg.epsilon);
            assert_relative_eq!(params[0], expected, epsilon = 1e-15);
        }
    }

    #[test]
    fn adam_zero_gradient_keeps_parameters() {
        let cfg = AdamConfig::default();
        let mut state = AdamState::new(2);
        let mut params = [0.7, -0.3];
        for _ in 0..100 {
            adam_update(&mut params, &[0.0, 0.0], &mut state, 0.01, &cfg);
        }
        assert_eq!(params, [0.7, -0.3]);
    }

    #[test]
    fn adam_is_deterministic() {
        let cfg = AdamConfig::default();
        let run = || {
            let mut state = AdamState::new(3);
            let mut params = [0.0, 1.0, -1.0];
            for k in 0..50 {
                let g = [0.1 * k as f64, -0.2, 0.05];
                adam_update(&mut params, &g, &mut state, 0.01, &cfg);
            }
            params
        };
        let a = run();
        let b = run();
        assert_eq!(a, b);
    }

    fn line_dataset(samples: usize) -> Dataset {
        let grid = TimeGrid::uniform(0.0, 0.1, samples - 1).unwrap();
        let values = DMatrix::from_fn(samples, 1, |r, _| r as f64);
        Dataset::new(vec![Trajectory::new(grid, values).unwrap()]).unwrap()
    }

    #[test]
    fn batch_starts_stay_in_range_and_cover_uniformly() {
        let dataset = line_dataset(100);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut seen = std::collections::BTreeSet::new();
        for _ in 0..400 {
            let batch = sample_batch(&dataset, 10, 5, &mut rng).unwrap();
            for piece in &batch.pieces {
                assert!(piece.start <= 94);
                assert_eq!(piece.len, 6);
                seen.insert(piece.start);
            }
        }
        // with 4000 draws over 95 starts, every start should appear
        assert_eq!(seen.len(), 95);
        assert_eq!(*seen.iter().max().unwrap(), 94);
    }

    #[test]
    fn whole_trajectory_batch() {
        let dataset = line_dataset(30);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let batch = sample_batch(&dataset, 1, 29, &mut rng).unwrap();
        assert_eq!(batch.pieces[0].start, 0);
        assert_eq!(batch.pieces[0].len, 30);
        assert!(sample_batch(&dataset, 1, 30, &mut rng).is_err());
    }

    #[test]
    fn batches_are_reproducible_under_a_seed() {
        let dataset = line_dataset(50);
        let a: Vec<Batch> = {
            let mut rng = ChaCha8Rng::seed_from_u64(9);
            (0..10).map(|_| sample_batch(&dataset, 7, 3, &mut rng).unwrap()).collect()
        };
        let b: Vec<Batch> = {
            let mut rng = ChaCha8Rng::seed_from_u64(9);
            (0..10).map(|_| sample_batch(&dataset, 7, 3, &mut rng).unwrap()).collect()
        };
        assert_eq!(a, b);
    }

    #[test]
    fn hidden_datasets_anchor_windows_at_the_start() {
        let grid = TimeGrid::uniform(0.0, 0.1, 20).unwrap();
        let values = DMatrix::from_element(21, 2, 1.0);
        let traj =
            Trajectory::with_mask(grid, values, vec![false, true], Some(5.0)).unwrap();
        let dataset = Dataset::new(vec![traj]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let batch = sample_batch(&dataset, 12, 4, &mut rng).unwrap();
        assert!(batch.pieces.iter().all(|p| p.start == 0));
    }

    #[test]
    fn random_small_initialization_is_bounded_and_seeded() {
        let dataset = line_dataset(20);
        let basis = PolynomialBasis::new(1, 2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let theta =
            initialize_theta(&dataset, &basis, InitStrategy::RandomSmall, &mut rng, None).unwrap();
        for (row, col) in theta.free_entries() {
            assert!(theta.value(row, col).abs() <= 0.1);
        }
        let mut rng2 = ChaCha8Rng::seed_from_u64(42);
        let theta2 =
            initialize_theta(&dataset, &basis, InitStrategy::RandomSmall, &mut rng2, None).unwrap();
        assert_eq!(theta, theta2);
    }

    #[test]
    fn warm_start_recovers_linear_decay_from_dense_data() {
        // dx/dt = -x sampled densely without noise
        let basis = PolynomialBasis::new(1, 1).unwrap();
        let mut truth = CoefficientMatrix::zeros(1, 2);
        truth.set(0, 1, -1.0);
        let model = OdeModel::new(basis.clone(), truth).unwrap();
        let grid = TimeGrid::uniform(0.0, 0.01, 400).unwrap();
        let pred = integrate(&model, &dvector![2.0], &grid, &IntegratorConfig::default()).unwrap();
        let mut values = DMatrix::zeros(401, 1);
        values[(0, 0)] = 2.0;
        for k in 0..400 {
            values[(k + 1, 0)] = pred[(k, 0)];
        }
        let dataset =
            Dataset::new(vec![Trajectory::new(grid, values).unwrap()]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let theta =
            initialize_theta(&dataset, &basis, InitStrategy::WarmStart, &mut rng, None).unwrap();
        assert_relative_eq!(theta.value(0, 1), -1.0, max_relative = 0.01);
    }

    #[test]
    fn warm_start_falls_back_on_hidden_dimensions() {
        let grid = TimeGrid::uniform(0.0, 0.1, 20).unwrap();
        let values = DMatrix::from_element(21, 2, 1.0);
        let traj =
            Trajectory::with_mask(grid, values, vec![false, true], Some(5.0)).unwrap();
        let dataset = Dataset::new(vec![traj]).unwrap();
        let basis = PolynomialBasis::new(2, 1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let theta =
            initialize_theta(&dataset, &basis, InitStrategy::WarmStart, &mut rng, None).unwrap();
        for (row, col) in theta.free_entries() {
            assert!(theta.value(row, col).abs() <= 0.1);
        }
    }

    #[test]
    fn hidden_initial_estimate() {
        // slope 0.1, monomer level 10, guess 1 -> 0.01
        let grid = TimeGrid::uniform(0.0, 1.0, 3).unwrap();
        let values = DMatrix::from_fn(4, 2, |r, c| if c == 0 { 0.1 * r as f64 } else { 0.0 });
        let traj =
            Trajectory::with_mask(grid, values, vec![true, true], Some(10.0)).unwrap();
        assert_relative_eq!(estimate_hidden_initial(&traj, 1.0).unwrap(), 0.01, epsilon = 1e-12);

        // flat trajectory floors at 1e-6
        let grid = TimeGrid::uniform(0.0, 1.0, 3).unwrap();
        let flat = DMatrix::from_element(4, 1, 2.0);
        let traj = Trajectory::with_mask(grid, flat, vec![true], Some(10.0)).unwrap();
        assert_eq!(estimate_hidden_initial(&traj, 1.0).unwrap(), 1e-6);

        // exhausted monomer pool is degenerate
        let grid = TimeGrid::uniform(0.0, 1.0, 3).unwrap();
        let full = DMatrix::from_element(4, 1, 10.0);
        let traj = Trajectory::with_mask(grid, full, vec![true], Some(10.0)).unwrap();
        assert!(matches!(
            estimate_hidden_initial(&traj, 1.0),
            Err(Error::DegenerateData(_))
        ));
    }

    fn zero_model_dataset() -> Dataset {
        let grid = TimeGrid::uniform(0.0, 0.1, 60).unwrap();
        let values = DMatrix::from_element(61, 1, 1.0);
        Dataset::new(vec![Trajectory::new(grid, values).unwrap()]).unwrap()
    }

    #[test]
    fn constant_data_prunes_everything_but_nothing_contributes() {
        // Data generated by the zero model: with L1 pressure every
        // coefficient is pruned and the rendered equation is trivial.
        let dataset = zero_model_dataset();
        let basis = PolynomialBasis::new(1, 2).unwrap();
        let config = TrainConfig {
            iterations: 2000,
            init: InitStrategy::RandomSmall,
            mu: Schedule { start: 1e-2, end: 1e-3 },
            gamma: Schedule { start: 1e-3, end: 1e-2 },
            seed: 4,
            ..Default::default()
        };
        let fit = train(&dataset, &basis, &config).unwrap();
        assert_eq!(fit.model.theta().active_count(), 0);
        assert_eq!(fit.model.render_equations(3), vec!["dx1/dt = 0"]);
        assert!(!fit.prune_events.is_empty());
    }

    #[test]
    fn training_is_deterministic_under_a_seed() {
        let dataset = zero_model_dataset();
        let basis = PolynomialBasis::new(1, 1).unwrap();
        let config = TrainConfig {
            iterations: 300,
            init: InitStrategy::RandomSmall,
            seed: 11,
            ..Default::default()
        };
        let a = train(&dataset, &basis, &config).unwrap();
        let b = train(&dataset, &basis, &config).unwrap();
        assert_eq!(a.model, b.model);
        assert_eq!(a.loss_history, b.loss_history);
    }

    #[test]
    fn noiseless_in_dictionary_data_reaches_tiny_loss() {
        // dx/dt = -x data fit with a vanishing regularizer: the smoothed
        // per-sample batch loss must fall below 1e-6.
        let basis = PolynomialBasis::new(1, 1).unwrap();
        let mut truth = CoefficientMatrix::zeros(1, 2);
        truth.set(0, 1, -1.0);
        let model = OdeModel::new(basis.clone(), truth).unwrap();
        let grid = TimeGrid::uniform(0.0, 0.05, 100).unwrap();
        let pred = integrate(&model, &dvector![2.0], &grid, &IntegratorConfig::default()).unwrap();
        let mut values = DMatrix::zeros(101, 1);
        values[(0, 0)] = 2.0;
        for k in 0..100 {
            values[(k + 1, 0)] = pred[(k, 0)];
        }
        let dataset =
            Dataset::new(vec![Trajectory::new(grid, values).unwrap()]).unwrap();
        let config = TrainConfig {
            iterations: 4000,
            mu: Schedule { start: 1e-6, end: 1e-10 },
            gamma: Schedule { start: 1e-4, end: 1e-3 },
            adam: AdamConfig { lr_start: 1e-2, lr_end: 1e-6, ..Default::default() },
            seed: 2,
            ..Default::default()
        };
        let fit = train(&dataset, &basis, &config).unwrap();
        let last = fit.log.last().unwrap();
        let per_sample = last.smoothed_loss / (config.m * config.n) as f64;
        assert!(
            per_sample < 1e-6,
            "per-sample smoothed loss {per_sample:.3e} not below 1e-6"
        );
        assert_relative_eq!(fit.model.theta().value(0, 1), -1.0, max_relative = 0.01);
    }

    #[test]
    fn impossible_integration_raises_training_diverged() {
        // With a one-step budget at 1e-13 tolerance every window fails; the
        // near-zero learning rate keeps the coefficients (and the failures)
        // in place.
        let dataset = zero_model_dataset();
        let basis = PolynomialBasis::new(1, 1).unwrap();
        let config = TrainConfig {
            iterations: 200,
            init: InitStrategy::RandomSmall,
            integrator: IntegratorConfig {
                method: Method::Dopri5,
                abs_tol: 1e-13,
                rel_tol: 1e-13,
                max_steps_per_interval: 1,
                ..Default::default()
            },
            adam: AdamConfig {
                lr_start: 1e-9,
                lr_end: 1e-9,
                ..Default::default()
            },
            n: 10,
            seed: 1,
            ..Default::default()
        };
        match train(&dataset, &basis, &config) {
            Err(Error::TrainingDiverged { batches, loss_history }) => {
                assert_eq!(batches, 50);
                assert_eq!(loss_history.len(), 50);
            }
            other => panic!("expected training divergence, got {other:?}"),
        }
    }
}
