//! Observed time-series data.

use crate::error::{Error, Result};
use crate::integrate::TimeGrid;
use nalgebra::DMatrix;

/// One experiment: a time grid (possibly unequal spacing), an (n+1) x d
/// matrix of observations, a per-dimension observation mask, and an optional
/// conserved total. Hidden dimensions carry placeholder values that are
/// never read by fitting code.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub grid: TimeGrid,
    pub values: DMatrix<f64>,
    pub observed: Vec<bool>,
    pub conserved_total: Option<f64>,
}

impl Trajectory {
    pub fn new(grid: TimeGrid, values: DMatrix<f64>) -> Result<Self> {
        let observed = vec![true; values.ncols()];
        Self::with_mask(grid, values, observed, None)
    }

    pub fn with_mask(
        grid: TimeGrid,
        values: DMatrix<f64>,
        observed: Vec<bool>,
        conserved_total: Option<f64>,
    ) -> Result<Self> {
        if values.nrows() != grid.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} samples but {} grid times",
                values.nrows(),
                grid.len()
            )));
        }
        if observed.len() != values.ncols() {
            return Err(Error::ShapeMismatch(
                "observation mask length must equal state dimension".into(),
            ));
        }
        for (r, row) in values.row_iter().enumerate() {
            for (c, &v) in row.iter().enumerate() {
                if observed[c] && !v.is_finite() {
                    return Err(Error::NonFiniteState);
                }
                let _ = r;
            }
        }
        Ok(Self {
            grid,
            values,
            observed,
            conserved_total,
        })
    }

    pub fn len(&self) -> usize {
        self.grid.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn dim(&self) -> usize {
        self.values.ncols()
    }

    pub fn has_hidden(&self) -> bool {
        self.observed.iter().any(|&o| !o)
    }

    /// Per-dimension max |y| over the trajectory (observed dimensions only;
    /// hidden dimensions report 0).
    pub fn sup_norms(&self) -> Vec<f64> {
        (0..self.dim())
            .map(|c| {
                if !self.observed[c] {
                    return 0.0;
                }
                self.values
                    .column(c)
                    .iter()
                    .fold(0.0f64, |m, &v| m.max(v.abs()))
            })
            .collect()
    }

    /// Drop hidden columns, keeping grid and totals.
    pub fn observed_only(&self) -> Trajectory {
        let keep: Vec<usize> = (0..self.dim()).filter(|&c| self.observed[c]).collect();
        let values = DMatrix::from_fn(self.len(), keep.len(), |r, c| self.values[(r, keep[c])]);
        Trajectory {
            grid: self.grid.clone(),
            values,
            observed: vec![true; keep.len()],
            conserved_total: self.conserved_total,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Dataset {
    pub trajectories: Vec<Trajectory>,
}

impl Dataset {
    pub fn new(trajectories: Vec<Trajectory>) -> Result<Self> {
        if trajectories.is_empty() {
            return Err(Error::InsufficientData("dataset has no trajectories".into()));
        }
        let dim = trajectories[0].dim();
        if trajectories.iter().any(|t| t.dim() != dim) {
            return Err(Error::ShapeMismatch(
                "all trajectories must share one state dimension".into(),
            ));
        }
        Ok(Self { trajectories })
    }

    pub fn dim(&self) -> usize {
        self.trajectories[0].dim()
    }

    pub fn has_hidden(&self) -> bool {
        self.trajectories.iter().any(Trajectory::has_hidden)
    }

    /// Per-dimension max |y| over the whole dataset.
    pub fn sup_norms(&self) -> Vec<f64> {
        let mut norms = vec![0.0f64; self.dim()];
        for traj in &self.trajectories {
            for (n, t) in norms.iter_mut().zip(traj.sup_norms()) {
                *n = n.max(t);
            }
        }
        norms
    }

    pub fn observed_only(&self) -> Dataset {
        Dataset {
            trajectories: self.trajectories.iter().map(Trajectory::observed_only).collect(),
        }
    }

    /// Total number of observed scalar samples.
    pub fn observation_count(&self) -> usize {
        self.trajectories
            .iter()
            .map(|t| t.len() * t.observed.iter().filter(|&&o| o).count())
            .sum()
    }
}
