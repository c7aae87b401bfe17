//! Weighted inner-product geometry induced by the value matrix `P`.
//!
//! Everything downstream measures states with `<a, b>_P = b' P a` and
//! `||a||_P = sqrt(<a, a>_P)`; the quadratic value function is `V(x) = ||x||_P^2`.

use std::fmt;

use nalgebra::{Cholesky, DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// State vectors are dense column vectors of length `n`.
pub type State = DVector<f64>;
/// Control vectors are dense column vectors of length `m`.
pub type Control = DVector<f64>;

/// Relative tolerance for the symmetry test on weight matrices.
pub const SYMMETRY_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Regime {
    Discrete,
    Continuous,
}

impl fmt::Display for Regime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Regime::Discrete => f.write_str("discrete"),
            Regime::Continuous => f.write_str("continuous"),
        }
    }
}

/// Checks that `x` has length `n` and finite entries.
pub fn check_state(x: &[f64], n: usize) -> Result<()> {
    if x.len() != n {
        return Err(Error::Dimension {
            context: "state",
            expected: n,
            found: x.len(),
        });
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("state"));
    }
    Ok(())
}

/// Largest `|A_ij - A_ji|` relative to the largest entry magnitude.
pub(crate) fn relative_asymmetry(a: &DMatrix<f64>) -> f64 {
    let scale = a.amax();
    if scale == 0.0 {
        return 0.0;
    }
    let mut worst = 0.0f64;
    for i in 0..a.nrows() {
        for j in (i + 1)..a.ncols() {
            worst = worst.max((a[(i, j)] - a[(j, i)]).abs());
        }
    }
    worst / scale
}

/// Symmetric positive-definite matrix `P`.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightMatrix {
    matrix: DMatrix<f64>,
}

impl WeightMatrix {
    /// Validates symmetry (relative tolerance [`SYMMETRY_TOL`]) and positive
    /// definiteness (Cholesky factorization with strictly positive pivots).
    pub fn new(matrix: DMatrix<f64>) -> Result<Self> {
        if !matrix.is_square() {
            return Err(Error::NotSquare {
                rows: matrix.nrows(),
                cols: matrix.ncols(),
            });
        }
        if matrix.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("weight matrix"));
        }
        let asymmetry = relative_asymmetry(&matrix);
        if asymmetry > SYMMETRY_TOL {
            return Err(Error::NotSymmetric { asymmetry });
        }
        if matrix.nrows() == 0 || Cholesky::new(matrix.clone()).is_none() {
            return Err(Error::NotPositiveDefinite);
        }
        Ok(Self { matrix })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        for row in rows {
            if row.len() != n {
                return Err(Error::NotSquare {
                    rows: n,
                    cols: row.len(),
                });
            }
        }
        Self::new(DMatrix::from_fn(n, n, |i, j| rows[i][j]))
    }

    pub fn identity(n: usize) -> Self {
        Self {
            matrix: DMatrix::identity(n, n),
        }
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.matrix
            .row_iter()
            .map(|r| r.iter().copied().collect())
            .collect()
    }

    fn check(&self, v: &DVector<f64>) -> Result<()> {
        if v.len() != self.dim() {
            return Err(Error::Dimension {
                context: "P-inner product",
                expected: self.dim(),
                found: v.len(),
            });
        }
        Ok(())
    }

    /// `<a, b>_P = b' P a`.
    pub fn inner(&self, a: &DVector<f64>, b: &DVector<f64>) -> Result<f64> {
        self.check(a)?;
        self.check(b)?;
        Ok(self.inner_unchecked(a, b))
    }

    pub fn norm(&self, a: &DVector<f64>) -> Result<f64> {
        self.check(a)?;
        Ok(self.norm_squared_unchecked(a).max(0.0).sqrt())
    }

    pub fn norm_squared(&self, a: &DVector<f64>) -> Result<f64> {
        self.check(a)?;
        Ok(self.norm_squared_unchecked(a))
    }

    pub(crate) fn inner_unchecked(&self, a: &DVector<f64>, b: &DVector<f64>) -> f64 {
        b.dot(&(&self.matrix * a))
    }

    pub(crate) fn norm_squared_unchecked(&self, a: &DVector<f64>) -> f64 {
        self.inner_unchecked(a, a)
    }
}

/// Discount factor tagged with its time regime.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiscountFactor {
    value: f64,
    regime: Regime,
}

impl DiscountFactor {
    /// Discrete time needs `0 < gamma <= 1`, continuous time `gamma >= 0`.
    pub fn new(value: f64, regime: Regime) -> Result<Self> {
        let ok = value.is_finite()
            && match regime {
                Regime::Discrete => value > 0.0 && value <= 1.0,
                Regime::Continuous => value >= 0.0,
            };
        if !ok {
            return Err(Error::InvalidDiscount { value, regime });
        }
        Ok(Self { value, regime })
    }

    pub fn value(&self) -> f64 {
        self.value
    }

    pub fn regime(&self) -> Regime {
        self.regime
    }
}

/// `V(x) = x' P x`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticValue {
    weight: WeightMatrix,
}

impl QuadraticValue {
    pub fn new(weight: WeightMatrix) -> Self {
        Self { weight }
    }

    pub fn weight(&self) -> &WeightMatrix {
        &self.weight
    }

    pub fn value(&self, x: &State) -> Result<f64> {
        self.weight.norm_squared(x)
    }

    /// Analytic gradient `2 P x`.
    pub fn gradient(&self, x: &State) -> Result<State> {
        self.weight.check(x)?;
        Ok(self.weight.matrix() * x * 2.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use nalgebra::dmatrix;
    use nalgebra::dvector;

    fn diag21() -> WeightMatrix {
        WeightMatrix::new(dmatrix![2.0, 0.0; 0.0, 1.0]).unwrap()
    }

    #[test]
    fn inner_product_examples() {
        let id = WeightMatrix::identity(2);
        assert_eq!(id.inner(&dvector![1.0, 0.0], &dvector![0.0, 1.0]).unwrap(), 0.0);
        assert_eq!(id.inner(&dvector![3.0, 0.0], &dvector![3.0, 0.0]).unwrap(), 9.0);
        // 2*2*1 + 1*1*2
        assert_eq!(diag21().inner(&dvector![1.0, 2.0], &dvector![2.0, 1.0]).unwrap(), 6.0);
    }

    #[test]
    fn inner_product_rejects_mismatch() {
        let id = WeightMatrix::identity(2);
        assert!(matches!(
            id.inner(&dvector![1.0], &dvector![0.0, 1.0]),
            Err(Error::Dimension { .. })
        ));
    }

    #[test]
    fn norm_examples() {
        let id = WeightMatrix::identity(2);
        assert_eq!(id.norm(&dvector![0.0, 0.0]).unwrap(), 0.0);
        assert_eq!(id.norm(&dvector![3.0, 4.0]).unwrap(), 5.0);
        assert_relative_eq!(diag21().norm(&dvector![1.0, 1.0]).unwrap(), 3f64.sqrt());
    }

    #[test]
    fn value_and_gradient_examples() {
        let v = QuadraticValue::new(diag21());
        assert_eq!(v.value(&dvector![0.0, 0.0]).unwrap(), 0.0);
        assert_eq!(v.value(&dvector![1.0, 2.0]).unwrap(), 6.0);
        assert_eq!(v.gradient(&dvector![1.0, 2.0]).unwrap(), dvector![4.0, 4.0]);
        let id = QuadraticValue::new(WeightMatrix::identity(2));
        assert_eq!(id.value(&dvector![2.0, 0.0]).unwrap(), 4.0);
        assert_eq!(id.gradient(&dvector![1.0, 0.0]).unwrap(), dvector![2.0, 0.0]);
        assert_eq!(id.gradient(&dvector![0.0, 0.0]).unwrap(), dvector![0.0, 0.0]);
    }

    #[test]
    fn weight_validation() {
        assert!(WeightMatrix::new(DMatrix::identity(3, 3)).is_ok());
        // eigenvalues 3 and -1
        assert!(matches!(
            WeightMatrix::new(dmatrix![1.0, 2.0; 2.0, 1.0]),
            Err(Error::NotPositiveDefinite)
        ));
        assert!(matches!(
            WeightMatrix::new(dmatrix![0.0, 1.0; 0.0, 0.0]),
            Err(Error::NotSymmetric { .. })
        ));
        assert!(matches!(
            WeightMatrix::new(DMatrix::zeros(2, 3)),
            Err(Error::NotSquare { .. })
        ));
        // asymmetry at the 1e-14 relative level is tolerated
        assert!(WeightMatrix::new(dmatrix![1.0, 1e-14; 0.0, 1.0]).is_ok());
        assert!(WeightMatrix::new(dmatrix![1.0, 1e-9; 0.0, 1.0]).is_err());
    }

    #[test]
    fn discount_ranges() {
        assert!(DiscountFactor::new(1.0, Regime::Discrete).is_ok());
        assert!(DiscountFactor::new(0.0, Regime::Discrete).is_err());
        assert!(DiscountFactor::new(1.5, Regime::Discrete).is_err());
        assert!(DiscountFactor::new(0.0, Regime::Continuous).is_ok());
        assert!(DiscountFactor::new(7.0, Regime::Continuous).is_ok());
        assert!(DiscountFactor::new(-0.1, Regime::Continuous).is_err());
        assert!(DiscountFactor::new(f64::NAN, Regime::Continuous).is_err());
    }
}
