//! Clamped B-spline bases on the unit interval.
//!
//! Every time-varying function in the model is a non-negative combination of
//! these basis functions. The basis is a partition of unity, which is what
//! turns the coefficient-wise constraints into pointwise ones.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A clamped B-spline family on `[0, 1]`.
///
/// The knot vector has `num_basis + degree + 1` entries, with the first and
/// last `degree + 1` knots pinned to 0 and 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BasisSpec {
    degree: usize,
    num_basis: usize,
    knots: Vec<f64>,
}

impl BasisSpec {
    /// Clamped basis with equidistant interior knots.
    pub fn uniform(num_basis: usize, degree: usize) -> Result<Self> {
        if num_basis < degree + 1 {
            return Err(Error::InvalidBasis(format!(
                "num_basis {num_basis} must be at least degree + 1 = {}",
                degree + 1
            )));
        }
        let interior = num_basis - degree - 1;
        let mut knots = Vec::with_capacity(num_basis + degree + 1);
        knots.extend(std::iter::repeat_n(0.0, degree + 1));
        knots.extend((1..=interior).map(|i| i as f64 / (interior + 1) as f64));
        knots.extend(std::iter::repeat_n(1.0, degree + 1));
        Ok(Self {
            degree,
            num_basis,
            knots,
        })
    }

    /// Clamped basis with caller-supplied interior knots, which must be
    /// non-decreasing and lie strictly inside `(0, 1)`.
    pub fn with_interior_knots(degree: usize, interior: &[f64]) -> Result<Self> {
        if interior.iter().any(|k| !(*k > 0.0 && *k < 1.0)) {
            return Err(Error::InvalidBasis(
                "interior knots must lie strictly inside (0, 1)".into(),
            ));
        }
        if interior.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::InvalidBasis("knots must be non-decreasing".into()));
        }
        let mut knots = vec![0.0; degree + 1];
        knots.extend_from_slice(interior);
        knots.extend(std::iter::repeat_n(1.0, degree + 1));
        Ok(Self {
            degree,
            num_basis: interior.len() + degree + 1,
            knots,
        })
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn num_basis(&self) -> usize {
        self.num_basis
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    /// Index `s` of the knot span containing `x`, so that
    /// `knots[s] <= x < knots[s + 1]`. At `x = 1` the last non-empty span is
    /// used, which makes the final basis function equal to one there.
    fn span(&self, x: f64) -> usize {
        let last = self.num_basis - 1;
        if x >= self.knots[last + 1] {
            return last;
        }
        // knots[degree..=last+1] is sorted; find the last knot <= x.
        let upper = self.knots[self.degree..=last + 1].partition_point(|&k| k <= x);
        (self.degree + upper - 1).min(last)
    }

    /// Writes all `num_basis` basis values at `x` into `out`.
    pub fn eval_into(&self, x: f64, out: &mut [f64]) -> Result<()> {
        if !(0.0..=1.0).contains(&x) {
            return Err(Error::OutOfDomain { name: "x", value: x });
        }
        debug_assert_eq!(out.len(), self.num_basis);
        out.iter_mut().for_each(|v| *v = 0.0);

        let p = self.degree;
        let s = self.span(x);
        let u = &self.knots;
        let mut n = vec![0.0; p + 1];
        let mut left = vec![0.0; p + 1];
        let mut right = vec![0.0; p + 1];
        n[0] = 1.0;
        for j in 1..=p {
            left[j] = x - u[s + 1 - j];
            right[j] = u[s + j] - x;
            let mut saved = 0.0;
            for r in 0..j {
                let temp = n[r] / (right[r + 1] + left[j - r]);
                n[r] = saved + right[r + 1] * temp;
                saved = left[j - r] * temp;
            }
            n[j] = saved;
        }
        out[s - p..=s].copy_from_slice(&n);
        Ok(())
    }

    /// Basis values `(B_1(x), ..., B_K(x))`.
    pub fn eval(&self, x: f64) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.num_basis];
        self.eval_into(x, &mut out)?;
        Ok(out)
    }

    /// Row-major `xs.len() x num_basis` matrix of basis values.
    pub fn design_matrix(&self, xs: &[f64]) -> Result<Vec<f64>> {
        let k = self.num_basis;
        let mut out = vec![0.0; xs.len() * k];
        for (row, &x) in out.chunks_exact_mut(k).zip(xs) {
            self.eval_into(x, row)?;
        }
        Ok(out)
    }
}

/// Combines basis values with coefficients: `sum_j coef[j] * basis[j]`.
#[inline]
pub(crate) fn combine(basis_row: &[f64], coef: &[f64]) -> f64 {
    basis_row.iter().zip(coef).map(|(b, c)| b * c).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Textbook Cox–de Boor recursion with the same right-continuous
    /// convention and the `x = 1` boundary rule.
    fn cox_de_boor(knots: &[f64], i: usize, p: usize, x: f64) -> f64 {
        if p == 0 {
            let (a, b) = (knots[i], knots[i + 1]);
            if a <= x && x < b {
                return 1.0;
            }
            // x = 1 belongs to the last non-degenerate span
            if x == 1.0 && b == 1.0 && a < b {
                return 1.0;
            }
            return 0.0;
        }
        let mut v = 0.0;
        let d1 = knots[i + p] - knots[i];
        if d1 > 0.0 {
            v += (x - knots[i]) / d1 * cox_de_boor(knots, i, p - 1, x);
        }
        let d2 = knots[i + p + 1] - knots[i + 1];
        if d2 > 0.0 {
            v += (knots[i + p + 1] - x) / d2 * cox_de_boor(knots, i + 1, p - 1, x);
        }
        v
    }

    #[test]
    fn cubic_six_knots() {
        let b = BasisSpec::uniform(6, 3).unwrap();
        let expected = [0.0, 0.0, 0.0, 0.0, 1.0 / 3.0, 2.0 / 3.0, 1.0, 1.0, 1.0, 1.0];
        assert_eq!(b.knots().len(), expected.len());
        for (k, e) in b.knots().iter().zip(expected) {
            assert!((k - e).abs() < 1e-15);
        }
    }

    #[test]
    fn constant_basis() {
        let b = BasisSpec::uniform(1, 0).unwrap();
        assert_eq!(b.knots(), &[0.0, 1.0]);
        for x in [0.0, 0.3, 1.0] {
            assert_eq!(b.eval(x).unwrap(), vec![1.0]);
        }
    }

    #[test]
    fn linear_four_basis_interior_knots() {
        let b = BasisSpec::uniform(4, 1).unwrap();
        let k = b.knots();
        assert!((k[2] - 1.0 / 3.0).abs() < 1e-15);
        assert!((k[3] - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn rejects_too_few_basis() {
        assert!(matches!(
            BasisSpec::uniform(3, 3),
            Err(Error::InvalidBasis(_))
        ));
    }

    #[test]
    fn rejects_out_of_range_x() {
        let b = BasisSpec::uniform(6, 3).unwrap();
        assert!(b.eval(-0.01).is_err());
        assert!(b.eval(1.0001).is_err());
        assert!(b.eval(f64::NAN).is_err());
    }

    #[test]
    fn endpoints_clamped() {
        let b = BasisSpec::uniform(6, 3).unwrap();
        assert_eq!(b.eval(0.0).unwrap(), vec![1.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        let at_one = b.eval(1.0).unwrap();
        assert_eq!(at_one[5], 1.0);
        assert!(at_one[..5].iter().all(|v| *v == 0.0));
    }

    #[test]
    fn linear_hand_value() {
        // knots [0,0,1/2,1,1]; at x = 1/4 the hat functions split evenly
        let b = BasisSpec::uniform(3, 1).unwrap();
        assert_eq!(b.knots(), &[0.0, 0.0, 0.5, 1.0, 1.0]);
        let v = b.eval(0.25).unwrap();
        assert!((v[0] - 0.5).abs() < 1e-15);
        assert!((v[1] - 0.5).abs() < 1e-15);
        assert_eq!(v[2], 0.0);
    }

    #[test]
    fn custom_knots_validated() {
        assert!(BasisSpec::with_interior_knots(2, &[0.2, 0.1]).is_err());
        assert!(BasisSpec::with_interior_knots(2, &[0.0, 0.5]).is_err());
        let b = BasisSpec::with_interior_knots(2, &[0.2, 0.5, 0.5]).unwrap();
        assert_eq!(b.num_basis(), 6);
    }

    fn arb_spec() -> impl Strategy<Value = BasisSpec> {
        (0usize..=4, 0usize..=8).prop_map(|(deg, extra)| BasisSpec::uniform(deg + 1 + extra, deg).unwrap())
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn partition_of_unity(spec in arb_spec(), x in 0.0f64..=1.0) {
            let v = spec.eval(x).unwrap();
            let s: f64 = v.iter().sum();
            prop_assert!((s - 1.0).abs() < 1e-12);
            prop_assert!(v.iter().all(|b| (0.0..=1.0).contains(b)));
            prop_assert!(v.iter().filter(|b| **b != 0.0).count() <= spec.degree() + 1);
        }

        #[test]
        fn local_support(spec in arb_spec(), x in 0.0f64..=1.0) {
            let v = spec.eval(x).unwrap();
            let k = spec.knots();
            for (j, b) in v.iter().enumerate() {
                if x < k[j] || x > k[j + spec.degree() + 1] {
                    prop_assert_eq!(*b, 0.0);
                }
            }
        }

        #[test]
        fn matches_recursive_oracle(spec in arb_spec(), x in prop_oneof![0.0f64..=1.0, Just(0.0), Just(1.0), Just(0.5)]) {
            let v = spec.eval(x).unwrap();
            for (j, b) in v.iter().enumerate() {
                let o = cox_de_boor(spec.knots(), j, spec.degree(), x);
                prop_assert!((b - o).abs() < 1e-12, "j={} fast={} oracle={}", j, b, o);
            }
        }
    }
}
