//! Complete polynomial dictionary in `d` variables up to a given order.
//!
//! Terms are multi-indices ordered graded-lexicographically: by total degree
//! first, then by descending exponent tuple within a degree, so the listing
//! for two variables of order two reads `1, x1, x2, x1^2, x1*x2, x2^2`.
//! The ordering is deterministic, which keeps coefficient indices stable
//! across runs and serialized models.

use crate::error::{Error, Result};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PolynomialBasis {
    dim: usize,
    order: u32,
    terms: Vec<Vec<u32>>,
}

/// Number of monomials of total degree at most `p` in `d` variables,
/// i.e. binomial(p + d, p).
pub fn term_count(dim: usize, order: u32) -> usize {
    let mut count = 1usize;
    // binomial(p+d, d) = prod_{i=1..d} (p+i)/i
    for i in 1..=dim {
        count = count * (order as usize + i) / i;
    }
    count
}

impl PolynomialBasis {
    pub fn new(dim: usize, order: u32) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidDimension);
        }
        let mut terms = Vec::with_capacity(term_count(dim, order));
        let mut scratch = vec![0u32; dim];
        for degree in 0..=order {
            push_terms_of_degree(dim, degree, 0, &mut scratch, &mut terms);
        }
        debug_assert_eq!(terms.len(), term_count(dim, order));
        Ok(Self { dim, order, terms })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn order(&self) -> u32 {
        self.order
    }

    /// Number of terms M.
    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn terms(&self) -> &[Vec<u32>] {
        &self.terms
    }

    pub fn term(&self, j: usize) -> Result<&[u32]> {
        self.terms
            .get(j)
            .map(Vec::as_slice)
            .ok_or(Error::TermIndexOutOfRange {
                index: j,
                count: self.terms.len(),
            })
    }

    /// Evaluate every monomial at `x`, writing into `out` (length M).
    /// Component 0 is the constant term 1.
    pub fn evaluate_into(&self, x: &[f64], out: &mut [f64]) -> Result<()> {
        self.check_state(x)?;
        debug_assert_eq!(out.len(), self.terms.len());
        for (slot, term) in out.iter_mut().zip(&self.terms) {
            let mut value = 1.0;
            for (&xi, &e) in x.iter().zip(term) {
                if e > 0 {
                    value *= xi.powi(e as i32);
                }
            }
            *slot = value;
        }
        Ok(())
    }

    pub fn evaluate(&self, x: &[f64]) -> Result<DVector<f64>> {
        let mut out = DVector::zeros(self.terms.len());
        self.evaluate_into(x, out.as_mut_slice())?;
        Ok(out)
    }

    /// M x d matrix of partial derivatives: entry (j, i) is d(term j)/d(x_i).
    /// Row 0 (constant term) is identically zero.
    pub fn jacobian_into(&self, x: &[f64], out: &mut DMatrix<f64>) -> Result<()> {
        self.check_state(x)?;
        debug_assert_eq!(out.nrows(), self.terms.len());
        debug_assert_eq!(out.ncols(), self.dim);
        for (j, term) in self.terms.iter().enumerate() {
            for i in 0..self.dim {
                let e = term[i];
                if e == 0 {
                    out[(j, i)] = 0.0;
                    continue;
                }
                let mut value = e as f64 * x[i].powi(e as i32 - 1);
                for (k, (&xk, &ek)) in x.iter().zip(term).enumerate() {
                    if k != i && ek > 0 {
                        value *= xk.powi(ek as i32);
                    }
                }
                out[(j, i)] = value;
            }
        }
        Ok(())
    }

    pub fn jacobian(&self, x: &[f64]) -> Result<DMatrix<f64>> {
        let mut out = DMatrix::zeros(self.terms.len(), self.dim);
        self.jacobian_into(x, &mut out)?;
        Ok(out)
    }

    /// Canonical display string for term `j`, e.g. "1", "x1", "x1*x2", "x2^2".
    pub fn term_label(&self, j: usize) -> Result<String> {
        let term = self.term(j)?;
        let mut parts = Vec::new();
        for (i, &e) in term.iter().enumerate() {
            match e {
                0 => {}
                1 => parts.push(format!("x{}", i + 1)),
                _ => parts.push(format!("x{}^{}", i + 1, e)),
            }
        }
        if parts.is_empty() {
            Ok("1".to_string())
        } else {
            Ok(parts.join("*"))
        }
    }

    fn check_state(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim {
            return Err(Error::ShapeMismatch(format!(
                "state has length {}, basis dimension is {}",
                x.len(),
                self.dim
            )));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteState);
        }
        Ok(())
    }
}

/// Enumerate exponent tuples of exact total degree, descending
/// lexicographically, appending to `terms`.
fn push_terms_of_degree(
    dim: usize,
    remaining: u32,
    position: usize,
    scratch: &mut Vec<u32>,
    terms: &mut Vec<Vec<u32>>,
) {
    if position == dim - 1 {
        scratch[position] = remaining;
        terms.push(scratch.clone());
        return;
    }
    for e in (0..=remaining).rev() {
        scratch[position] = e;
        push_terms_of_degree(dim, remaining - e, position + 1, scratch, terms);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::{Rng as _, SeedableRng as _};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn two_vars_order_two_listing() {
        let basis = PolynomialBasis::new(2, 2).unwrap();
        let expected: Vec<Vec<u32>> = vec![
            vec![0, 0],
            vec![1, 0],
            vec![0, 1],
            vec![2, 0],
            vec![1, 1],
            vec![0, 2],
        ];
        assert_eq!(basis.terms(), expected.as_slice());
    }

    #[test]
    fn term_counts() {
        assert_eq!(PolynomialBasis::new(2, 2).unwrap().len(), 6);
        assert_eq!(PolynomialBasis::new(3, 2).unwrap().len(), 10);
        assert_eq!(PolynomialBasis::new(5, 0).unwrap().len(), 1);
    }

    #[test]
    fn zero_dimension_rejected() {
        assert!(matches!(
            PolynomialBasis::new(0, 2),
            Err(Error::InvalidDimension)
        ));
    }

    #[test]
    fn count_matches_brute_force_enumeration() {
        // Independent oracle: count all exponent tuples with sum <= p by
        // exhaustive iteration over [0, p]^d.
        for d in 1..=4usize {
            for p in 0..=5u32 {
                let mut count = 0usize;
                let bound = (p + 1).pow(d as u32);
                for code in 0..bound {
                    let mut c = code;
                    let mut total = 0;
                    for _ in 0..d {
                        total += c % (p + 1);
                        c /= p + 1;
                    }
                    if total <= p {
                        count += 1;
                    }
                }
                assert_eq!(PolynomialBasis::new(d, p).unwrap().len(), count);
                assert_eq!(term_count(d, p), count);
            }
        }
    }

    #[test]
    fn evaluate_at_origin() {
        let basis = PolynomialBasis::new(2, 2).unwrap();
        let v = basis.evaluate(&[0.0, 0.0]).unwrap();
        assert_eq!(v.as_slice(), &[1.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn evaluate_hand_checked_point() {
        let basis = PolynomialBasis::new(2, 2).unwrap();
        let v = basis.evaluate(&[2.0, 3.0]).unwrap();
        assert_eq!(v.as_slice(), &[1.0, 2.0, 3.0, 4.0, 6.0, 9.0]);
    }

    #[test]
    fn evaluate_powers_of_minus_one() {
        let basis = PolynomialBasis::new(1, 3).unwrap();
        let v = basis.evaluate(&[-1.0]).unwrap();
        assert_eq!(v.as_slice(), &[1.0, -1.0, 1.0, -1.0]);
    }

    #[test]
    fn evaluate_rejects_non_finite() {
        let basis = PolynomialBasis::new(2, 2).unwrap();
        assert!(matches!(
            basis.evaluate(&[f64::NAN, 0.0]),
            Err(Error::NonFiniteState)
        ));
        assert!(matches!(
            basis.evaluate(&[1.0, f64::INFINITY]),
            Err(Error::NonFiniteState)
        ));
    }

    #[test]
    fn jacobian_product_rule_row() {
        let basis = PolynomialBasis::new(2, 2).unwrap();
        let jac = basis.jacobian(&[2.0, 3.0]).unwrap();
        // term 4 is x1*x2
        assert_eq!(jac[(4, 0)], 3.0);
        assert_eq!(jac[(4, 1)], 2.0);
        // constant row is zero
        assert_eq!(jac[(0, 0)], 0.0);
        assert_eq!(jac[(0, 1)], 0.0);
    }

    #[test]
    fn jacobian_matches_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let h = 1e-6;
        for _ in 0..100 {
            let d = rng.gen_range(1..=3usize);
            let p = rng.gen_range(0..=3u32);
            let basis = PolynomialBasis::new(d, p).unwrap();
            let x: Vec<f64> = (0..d).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let jac = basis.jacobian(&x).unwrap();
            for i in 0..d {
                let mut xp = x.clone();
                let mut xm = x.clone();
                xp[i] += h;
                xm[i] -= h;
                let vp = basis.evaluate(&xp).unwrap();
                let vm = basis.evaluate(&xm).unwrap();
                for j in 0..basis.len() {
                    let fd = (vp[j] - vm[j]) / (2.0 * h);
                    assert_relative_eq!(jac[(j, i)], fd, epsilon = 1e-6, max_relative = 1e-6);
                }
            }
        }
    }

    #[test]
    fn labels() {
        let basis = PolynomialBasis::new(2, 2).unwrap();
        assert_eq!(basis.term_label(0).unwrap(), "1");
        assert_eq!(basis.term_label(4).unwrap(), "x1*x2");
        assert_eq!(basis.term_label(5).unwrap(), "x2^2");
        let basis3 = PolynomialBasis::new(3, 2).unwrap();
        assert_eq!(basis3.term_label(3).unwrap(), "x3");
        assert!(matches!(
            basis.term_label(6),
            Err(Error::TermIndexOutOfRange { .. })
        ));
    }

    #[test]
    fn construction_is_deterministic() {
        let a = PolynomialBasis::new(4, 3).unwrap();
        let b = PolynomialBasis::new(4, 3).unwrap();
        assert_eq!(a, b);
    }

    proptest! {
        #[test]
        fn univariate_components_are_exact_powers(x in -3.0f64..3.0, p in 0u32..6) {
            let basis = PolynomialBasis::new(1, p).unwrap();
            let v = basis.evaluate(&[x]).unwrap();
            for j in 0..=p as usize {
                prop_assert_eq!(v[j], x.powi(j as i32));
            }
        }
    }
}
