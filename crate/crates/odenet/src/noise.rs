//! Synthetic noise injection and the learnable noise field.
//!
//! Injected noise is white: `y_noisy(t) = y(t) + eps * ||y||_inf * eta(t)`
//! with `eta` i.i.d. standard normal per sample per dimension and the sup
//! norm taken per dimension over the trajectory. In noise-mode training the
//! same decomposition runs in reverse: one learnable offset per observed
//! sample per observed dimension absorbs the measurement noise, and the
//! denoised signal is what the candidate ODE has to explain.

use crate::data::{Dataset, Trajectory};
use crate::error::{Error, Result};
use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

/// Per-trajectory, per-sample, per-observed-dimension learnable offsets.
/// Hidden dimensions hold zeros that are never read or updated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseField {
    offsets: Vec<DMatrix<f64>>,
    observed: Vec<bool>,
    scale_reference: Vec<f64>,
    strength_guess: f64,
}

impl NoiseField {
    /// All offsets start at zero (unbiased); `strength_guess` records the
    /// expected noise magnitude relative to the data sup norm and is used to
    /// scale offset learning rates.
    pub fn init(dataset: &Dataset, strength_guess: f64) -> Result<Self> {
        if !(strength_guess >= 0.0) {
            return Err(Error::Config("noise strength guess must be >= 0".into()));
        }
        let offsets = dataset
            .trajectories
            .iter()
            .map(|t| DMatrix::zeros(t.len(), t.dim()))
            .collect();
        Ok(Self {
            offsets,
            observed: dataset.trajectories[0].observed.clone(),
            scale_reference: dataset.sup_norms(),
            strength_guess,
        })
    }

    pub fn offsets(&self) -> &[DMatrix<f64>] {
        &self.offsets
    }

    pub fn get(&self, traj: usize, sample: usize, dim: usize) -> f64 {
        self.offsets[traj][(sample, dim)]
    }

    pub fn set(&mut self, traj: usize, sample: usize, dim: usize, value: f64) {
        debug_assert!(self.observed[dim]);
        self.offsets[traj][(sample, dim)] = value;
    }

    pub fn observed(&self) -> &[bool] {
        &self.observed
    }

    pub fn scale_reference(&self) -> &[f64] {
        &self.scale_reference
    }

    pub fn strength_guess(&self) -> f64 {
        self.strength_guess
    }

    /// All offsets of one observed dimension, flattened across trajectories.
    pub fn dimension_offsets(&self, dim: usize) -> Vec<f64> {
        let mut all = Vec::new();
        for m in &self.offsets {
            for r in 0..m.nrows() {
                all.push(m[(r, dim)]);
            }
        }
        all
    }

    pub fn mean_abs(&self, dim: usize) -> f64 {
        let v = self.dimension_offsets(dim);
        v.iter().map(|x| x.abs()).sum::<f64>() / v.len() as f64
    }
}

/// Add white noise of strength `eps` relative to the per-dimension sup norm.
/// Hidden dimensions are left untouched.
pub fn inject_noise<R: Rng>(trajectory: &Trajectory, eps: f64, rng: &mut R) -> Trajectory {
    let norms = trajectory.sup_norms();
    let mut values = trajectory.values.clone();
    for r in 0..values.nrows() {
        for c in 0..values.ncols() {
            if trajectory.observed[c] {
                let eta: f64 = rng.sample(StandardNormal);
                values[(r, c)] += eps * norms[c] * eta;
            }
        }
    }
    Trajectory {
        grid: trajectory.grid.clone(),
        values,
        observed: trajectory.observed.clone(),
        conserved_total: trajectory.conserved_total,
    }
}

/// Histogram plus moments of one dimension of a noise field.
#[derive(Debug, Clone, Serialize)]
pub struct GaussianityReport {
    pub dim: usize,
    pub count: usize,
    pub mean: f64,
    pub std: f64,
    pub excess_kurtosis: f64,
    /// True when the sample std is zero and the histogram is degenerate.
    pub degenerate: bool,
    /// (bin center, count, reference normal density at the center).
    pub bins: Vec<(f64, usize, f64)>,
}

const HISTOGRAM_BINS: usize = 40;

/// Summarize one observed dimension of the field: 40 uniform bins spanning
/// +/- 4 sample standard deviations, with mean, std and excess kurtosis.
pub fn gaussianity_report(field: &NoiseField, dim: usize) -> Result<GaussianityReport> {
    let samples = field.dimension_offsets(dim);
    if samples.len() < 10 {
        return Err(Error::InsufficientData(format!(
            "{} noise samples in dimension {dim}, need at least 10",
            samples.len()
        )));
    }
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let var = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt();
    let degenerate = std == 0.0;
    let excess_kurtosis = if degenerate {
        0.0
    } else {
        samples.iter().map(|x| ((x - mean) / std).powi(4)).sum::<f64>() / n - 3.0
    };
    let span = if degenerate { 1.0 } else { 4.0 * std };
    let width = 2.0 * span / HISTOGRAM_BINS as f64;
    let mut bins = vec![0usize; HISTOGRAM_BINS];
    for &x in &samples {
        let pos = ((x - (mean - span)) / width).floor();
        if pos >= 0.0 && (pos as usize) < HISTOGRAM_BINS {
            bins[pos as usize] += 1;
        }
    }
    let density = |x: f64| {
        if degenerate {
            0.0
        } else {
            (-0.5 * ((x - mean) / std).powi(2)).exp() / (std * (2.0 * std::f64::consts::PI).sqrt())
        }
    };
    let bins = bins
        .into_iter()
        .enumerate()
        .map(|(i, c)| {
            let center = mean - span + (i as f64 + 0.5) * width;
            (center, c, density(center))
        })
        .collect();
    Ok(GaussianityReport {
        dim,
        count: samples.len(),
        mean,
        std,
        excess_kurtosis,
        degenerate,
        bins,
    })
}

/// Pearson correlation between two equal-length samples.
pub fn pearson(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut va = 0.0;
    let mut vb = 0.0;
    for (&x, &y) in a.iter().zip(b) {
        cov += (x - ma) * (y - mb);
        va += (x - ma).powi(2);
        vb += (y - mb).powi(2);
    }
    cov / (va.sqrt() * vb.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::integrate::TimeGrid;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn constant_trajectory(value: f64, samples: usize) -> Trajectory {
        let grid = TimeGrid::uniform(0.0, 0.1, samples - 1).unwrap();
        let values = DMatrix::from_element(samples, 2, value);
        Trajectory::new(grid, values).unwrap()
    }

    #[test]
    fn zero_strength_changes_nothing() {
        let traj = constant_trajectory(5.0, 50);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let noisy = inject_noise(&traj, 0.0, &mut rng);
        assert_eq!(noisy.values, traj.values);
    }

    #[test]
    fn empirical_std_tracks_strength() {
        let traj = constant_trajectory(100.0, 2000);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let noisy = inject_noise(&traj, 0.01, &mut rng);
        // eps * ||y||_inf = 1.0
        for c in 0..2 {
            let diffs: Vec<f64> = (0..2000)
                .map(|r| noisy.values[(r, c)] - traj.values[(r, c)])
                .collect();
            let var = diffs.iter().map(|d| d * d).sum::<f64>() / diffs.len() as f64;
            let std = var.sqrt();
            assert!((0.9..=1.1).contains(&std), "std {std} outside 10% band");
        }
    }

    #[test]
    fn seeded_injection_is_reproducible() {
        let traj = constant_trajectory(1.0, 30);
        let a = inject_noise(&traj, 0.05, &mut ChaCha8Rng::seed_from_u64(7));
        let b = inject_noise(&traj, 0.05, &mut ChaCha8Rng::seed_from_u64(7));
        assert_eq!(a.values, b.values);
    }

    #[test]
    fn inject_then_subtract_restores_exactly() {
        let traj = constant_trajectory(3.0, 100);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let noisy = inject_noise(&traj, 0.2, &mut rng);
        let restored = &noisy.values - (&noisy.values - &traj.values);
        assert_eq!(restored, traj.values);
    }

    #[test]
    fn field_initialization() {
        let traj = constant_trajectory(42.0, 25);
        let dataset = Dataset::new(vec![traj.clone(), traj]).unwrap();
        let field = NoiseField::init(&dataset, 0.1).unwrap();
        assert_eq!(field.offsets().len(), 2);
        assert_eq!(field.offsets()[0].nrows(), 25);
        assert!(field.offsets().iter().all(|m| m.iter().all(|&v| v == 0.0)));
        assert_eq!(field.scale_reference(), &[42.0, 42.0]);
    }

    #[test]
    fn report_on_standard_normal_offsets() {
        let grid = TimeGrid::uniform(0.0, 1.0, 9999).unwrap();
        let values = DMatrix::zeros(10000, 1);
        let dataset =
            Dataset::new(vec![Trajectory::new(grid, values).unwrap()]).unwrap();
        let mut field = NoiseField::init(&dataset, 1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for s in 0..10000 {
            field.set(0, s, 0, rng.sample(StandardNormal));
        }
        let report = gaussianity_report(&field, 0).unwrap();
        assert!(report.mean.abs() < 0.05, "mean {}", report.mean);
        assert!((0.95..=1.05).contains(&report.std), "std {}", report.std);
        assert!(!report.degenerate);
        assert_eq!(report.bins.len(), 40);
        assert_eq!(report.count, 10000);
    }

    #[test]
    fn report_flags_degenerate_field_and_small_samples() {
        let traj = constant_trajectory(1.0, 50);
        let dataset = Dataset::new(vec![traj]).unwrap();
        let field = NoiseField::init(&dataset, 0.0).unwrap();
        let report = gaussianity_report(&field, 0).unwrap();
        assert!(report.degenerate);
        assert_eq!(report.std, 0.0);

        let tiny = constant_trajectory(1.0, 5);
        let dataset = Dataset::new(vec![tiny]).unwrap();
        let field = NoiseField::init(&dataset, 0.0).unwrap();
        assert!(matches!(
            gaussianity_report(&field, 0),
            Err(Error::InsufficientData(_))
        ));
    }

    #[test]
    fn pearson_basics() {
        let a = [1.0, 2.0, 3.0, 4.0];
        let b = [2.0, 4.0, 6.0, 8.0];
        assert!((pearson(&a, &b) - 1.0).abs() < 1e-12);
        let c = [4.0, 3.0, 2.0, 1.0];
        assert!((pearson(&a, &c) + 1.0).abs() < 1e-12);
    }
}
