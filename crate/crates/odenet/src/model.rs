//! Candidate ODE systems dx/dt = theta * Lambda(x).
//!
//! A [`CoefficientMatrix`] is a dense d x M matrix with an active-set mask
//! (pruned entries are frozen at exactly zero for the rest of a run) and
//! optional linear ties. A tie declares `target = scale * source` and is
//! implemented as a reparameterization: target entries are never independent
//! optimization variables, so the tied identity holds exactly after every
//! update and every pruning pass.

use crate::basis::PolynomialBasis;
use crate::error::{Error, Result};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

/// Linear coefficient tie: entry at `target` always equals `scale` times the
/// entry at `source`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tie {
    pub target: (usize, usize),
    pub source: (usize, usize),
    pub scale: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefficientMatrix {
    dim: usize,
    n_terms: usize,
    /// Row-major d x M values with ties materialized.
    values: Vec<f64>,
    active: Vec<bool>,
    ties: Vec<Tie>,
}

impl CoefficientMatrix {
    /// All entries active, all values zero, no ties.
    pub fn zeros(dim: usize, n_terms: usize) -> Self {
        Self {
            dim,
            n_terms,
            values: vec![0.0; dim * n_terms],
            active: vec![true; dim * n_terms],
            ties: Vec::new(),
        }
    }

    /// Build from explicit parts. Tie chains are flattened so every stored
    /// source is a free entry; cycles and duplicate targets are rejected.
    pub fn new(
        dim: usize,
        n_terms: usize,
        values: Vec<f64>,
        active: Vec<bool>,
        ties: Vec<Tie>,
    ) -> Result<Self> {
        if values.len() != dim * n_terms || active.len() != dim * n_terms {
            return Err(Error::ShapeMismatch(format!(
                "coefficient storage must be {dim} x {n_terms}"
            )));
        }
        let flat_ties = flatten_ties(dim, n_terms, &ties)?;
        let mut matrix = Self {
            dim,
            n_terms,
            values,
            active,
            ties: flat_ties,
        };
        matrix.enforce_mask();
        matrix.propagate_ties();
        Ok(matrix)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_terms(&self) -> usize {
        self.n_terms
    }

    pub fn ties(&self) -> &[Tie] {
        &self.ties
    }

    #[inline]
    fn idx(&self, row: usize, col: usize) -> usize {
        row * self.n_terms + col
    }

    pub fn value(&self, row: usize, col: usize) -> f64 {
        self.values[self.idx(row, col)]
    }

    pub fn is_active(&self, row: usize, col: usize) -> bool {
        self.active[self.idx(row, col)]
    }

    pub fn is_tie_target(&self, row: usize, col: usize) -> bool {
        self.ties.iter().any(|t| t.target == (row, col))
    }

    /// Active entries that are not tie targets: the independent optimization
    /// variables, in row-major order.
    pub fn free_entries(&self) -> Vec<(usize, usize)> {
        let mut free = Vec::new();
        for row in 0..self.dim {
            for col in 0..self.n_terms {
                if self.active[self.idx(row, col)] && !self.is_tie_target(row, col) {
                    free.push((row, col));
                }
            }
        }
        free
    }

    pub fn active_count(&self) -> usize {
        self.active.iter().filter(|&&a| a).count()
    }

    /// Set a free entry. Tied targets follow immediately.
    pub fn set(&mut self, row: usize, col: usize, value: f64) {
        let i = self.idx(row, col);
        if !self.active[i] {
            return;
        }
        self.values[i] = value;
        let targets: Vec<(usize, usize, f64)> = self
            .ties
            .iter()
            .filter(|t| t.source == (row, col))
            .map(|t| (t.target.0, t.target.1, t.scale))
            .collect();
        for (tr, tc, scale) in targets {
            let ti = self.idx(tr, tc);
            if self.active[ti] {
                self.values[ti] = scale * value;
            }
        }
    }

    /// Prune every active free entry with |value| strictly below `gamma`
    /// (pruning is permanent for the rest of the run); ties propagate so a
    /// pruned source also prunes its targets. Returns how many entries were
    /// newly pruned by this call.
    pub fn apply_threshold(&mut self, gamma: f64) -> usize {
        debug_assert!(gamma > 0.0);
        let before = self.active_count();
        for row in 0..self.dim {
            for col in 0..self.n_terms {
                let i = self.idx(row, col);
                if self.active[i] && !self.is_tie_target(row, col) && self.values[i].abs() < gamma {
                    self.active[i] = false;
                    self.values[i] = 0.0;
                }
            }
        }
        self.propagate_pruning();
        before - self.active_count()
    }

    /// Deactivate an entry directly (and anything tied to it).
    pub fn deactivate(&mut self, row: usize, col: usize) {
        let i = self.idx(row, col);
        self.active[i] = false;
        self.values[i] = 0.0;
        self.propagate_pruning();
    }

    fn propagate_pruning(&mut self) {
        let ties = self.ties.clone();
        for tie in &ties {
            let si = self.idx(tie.source.0, tie.source.1);
            let ti = self.idx(tie.target.0, tie.target.1);
            if !self.active[si] && self.active[ti] {
                self.active[ti] = false;
                self.values[ti] = 0.0;
            }
        }
    }

    fn propagate_ties(&mut self) {
        let ties = self.ties.clone();
        for tie in &ties {
            let si = self.idx(tie.source.0, tie.source.1);
            let ti = self.idx(tie.target.0, tie.target.1);
            if self.active[si] && self.active[ti] {
                self.values[ti] = tie.scale * self.values[si];
            }
        }
        self.propagate_pruning();
    }

    fn enforce_mask(&mut self) {
        for (v, &a) in self.values.iter_mut().zip(&self.active) {
            if !a {
                *v = 0.0;
            }
        }
    }

    pub fn as_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.dim, self.n_terms, |r, c| self.value(r, c))
    }

    /// Indices (row, col) of entries that are active in `self`.
    pub fn active_set(&self) -> Vec<(usize, usize)> {
        let mut set = Vec::new();
        for row in 0..self.dim {
            for col in 0..self.n_terms {
                if self.is_active(row, col) {
                    set.push((row, col));
                }
            }
        }
        set
    }

    /// Entries with nonzero value, the usual notion of ground-truth support.
    pub fn nonzero_set(&self) -> Vec<(usize, usize)> {
        let mut set = Vec::new();
        for row in 0..self.dim {
            for col in 0..self.n_terms {
                if self.value(row, col) != 0.0 {
                    set.push((row, col));
                }
            }
        }
        set
    }
}

/// Rewrite ties so every source is a free entry, following chains; rejects
/// cycles and entries targeted by more than one tie.
fn flatten_ties(dim: usize, n_terms: usize, ties: &[Tie]) -> Result<Vec<Tie>> {
    let mut by_target = std::collections::BTreeMap::new();
    for tie in ties {
        let (tr, tc) = tie.target;
        let (sr, sc) = tie.source;
        if tr >= dim || tc >= n_terms || sr >= dim || sc >= n_terms {
            return Err(Error::ShapeMismatch("tie index out of range".into()));
        }
        if by_target.insert(tie.target, *tie).is_some() {
            return Err(Error::InvalidTies);
        }
    }
    let mut flat = Vec::with_capacity(ties.len());
    for tie in ties {
        let mut source = tie.source;
        let mut scale = tie.scale;
        let mut hops = 0;
        while let Some(upstream) = by_target.get(&source) {
            source = upstream.source;
            scale *= upstream.scale;
            hops += 1;
            if hops > ties.len() {
                return Err(Error::InvalidTies);
            }
        }
        if source == tie.target {
            return Err(Error::InvalidTies);
        }
        flat.push(Tie {
            target: tie.target,
            source,
            scale,
        });
    }
    Ok(flat)
}

/// A polynomial-basis ODE system: `dx/dt = theta * Lambda(x)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OdeModel {
    basis: PolynomialBasis,
    theta: CoefficientMatrix,
}

impl OdeModel {
    pub fn new(basis: PolynomialBasis, theta: CoefficientMatrix) -> Result<Self> {
        if theta.dim() != basis.dim() || theta.n_terms() != basis.len() {
            return Err(Error::ShapeMismatch(format!(
                "coefficients are {} x {}, basis expects {} x {}",
                theta.dim(),
                theta.n_terms(),
                basis.dim(),
                basis.len()
            )));
        }
        Ok(Self { basis, theta })
    }

    pub fn basis(&self) -> &PolynomialBasis {
        &self.basis
    }

    pub fn theta(&self) -> &CoefficientMatrix {
        &self.theta
    }

    pub fn theta_mut(&mut self) -> &mut CoefficientMatrix {
        &mut self.theta
    }

    pub fn dim(&self) -> usize {
        self.basis.dim()
    }

    /// Right-hand side theta * Lambda(x), written into `out`.
    pub fn rhs_into(&self, x: &[f64], lambda: &mut [f64], out: &mut [f64]) -> Result<()> {
        self.basis.evaluate_into(x, lambda)?;
        let m = self.basis.len();
        for (i, slot) in out.iter_mut().enumerate() {
            let mut acc = 0.0;
            let row = &self.theta.values[i * m..(i + 1) * m];
            for (&c, &l) in row.iter().zip(lambda.iter()) {
                acc += c * l;
            }
            *slot = acc;
        }
        Ok(())
    }

    pub fn rhs(&self, x: &[f64]) -> Result<DVector<f64>> {
        let mut lambda = vec![0.0; self.basis.len()];
        let mut out = DVector::zeros(self.dim());
        self.rhs_into(x, &mut lambda, out.as_mut_slice())?;
        Ok(out)
    }

    /// d x d state Jacobian theta * dLambda/dx.
    pub fn rhs_jacobian_state(&self, x: &[f64]) -> Result<DMatrix<f64>> {
        let basis_jac = self.basis.jacobian(x)?;
        Ok(self.theta.as_matrix() * basis_jac)
    }

    /// Gradient structure of the right-hand side with respect to one free
    /// coefficient at `(row, col)`: the direct contribution `Lambda_col(x)`
    /// to component `row`, plus `scale * Lambda_col'(x)` to component `row'`
    /// for every tie target fed by that entry.
    pub fn rhs_gradient_theta(
        &self,
        lambda: &[f64],
        row: usize,
        col: usize,
        out: &mut [f64],
    ) -> Result<()> {
        if row >= self.dim() || col >= self.basis.len() {
            return Err(Error::ShapeMismatch("coefficient index out of range".into()));
        }
        for v in out.iter_mut() {
            *v = 0.0;
        }
        out[row] = lambda[col];
        for tie in self.theta.ties() {
            if tie.source == (row, col) && self.theta.is_active(tie.target.0, tie.target.1) {
                out[tie.target.0] += tie.scale * lambda[tie.target.1];
            }
        }
        Ok(())
    }

    /// One human-readable equation per state dimension, inactive terms
    /// omitted. `precision` controls display rounding only.
    pub fn render_equations(&self, precision: usize) -> Vec<String> {
        let mut lines = Vec::with_capacity(self.dim());
        for row in 0..self.dim() {
            let mut rhs = String::new();
            for col in 0..self.basis.len() {
                if !self.theta.is_active(row, col) {
                    continue;
                }
                let value = self.theta.value(row, col);
                let label = self.basis.term_label(col).expect("index in range");
                let magnitude = format!("{:.*}", precision, value.abs());
                if rhs.is_empty() {
                    if value < 0.0 {
                        rhs.push('-');
                    }
                } else if value < 0.0 {
                    rhs.push_str(" - ");
                } else {
                    rhs.push_str(" + ");
                }
                if label == "1" {
                    rhs.push_str(&magnitude);
                } else {
                    rhs.push_str(&format!("{magnitude}*{label}"));
                }
            }
            if rhs.is_empty() {
                rhs.push('0');
            }
            lines.push(format!("dx{}/dt = {}", row + 1, rhs));
        }
        lines
    }
}
