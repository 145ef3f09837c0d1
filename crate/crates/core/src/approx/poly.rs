use serde::{Deserialize, Serialize};

use super::{ApproxError, TOL_INT};

/// Closed real interval `[lo, hi]` with `lo < hi`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub fn new(lo: f64, hi: f64) -> Result<Self, ApproxError> {
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(ApproxError::EmptyInterval { lo, hi });
        }
        Ok(Self { lo, hi })
    }

    /// `[-a, a]`.
    pub fn symmetric(a: f64) -> Result<Self, ApproxError> {
        if !(a > 0.0 && a.is_finite()) {
            return Err(ApproxError::NonPositiveHalfWidth(a));
        }
        Ok(Self { lo: -a, hi: a })
    }

    pub fn len(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn mid(&self) -> f64 {
        0.5 * (self.lo + self.hi)
    }

    pub fn half_width(&self) -> f64 {
        0.5 * (self.hi - self.lo)
    }

    pub fn contains(&self, x: f64) -> bool {
        self.lo <= x && x <= self.hi
    }

    /// Half-width when the interval is `[-a, a]`.
    pub fn symmetric_half_width(&self) -> Option<f64> {
        (self.lo == -self.hi).then_some(self.hi)
    }

    /// `n` evenly spaced points including both endpoints.
    pub fn grid(&self, n: usize) -> Vec<f64> {
        assert!(n >= 2);
        let step = self.len() / (n - 1) as f64;
        (0..n)
            .map(|i| {
                if i == n - 1 {
                    self.hi
                } else {
                    self.lo + step * i as f64
                }
            })
            .collect()
    }
}

/// Real polynomial `sum coeffs[k] * x^k`. Trailing zero coefficients are trimmed,
/// the zero polynomial keeps a single `0.0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Polynomial {
    coeffs: Vec<f64>,
    #[serde(default = "default_tol_int")]
    tol_int: f64,
}

fn default_tol_int() -> f64 {
    TOL_INT
}

impl Polynomial {
    pub fn new(mut coeffs: Vec<f64>) -> Self {
        while coeffs.len() > 1 && *coeffs.last().unwrap() == 0.0 {
            coeffs.pop();
        }
        if coeffs.is_empty() {
            coeffs.push(0.0);
        }
        Self {
            coeffs,
            tol_int: TOL_INT,
        }
    }

    pub fn with_tol_int(mut self, tol_int: f64) -> Self {
        self.tol_int = tol_int;
        self
    }

    pub fn from_integers(coeffs: &[i64]) -> Self {
        Self::new(coeffs.iter().map(|&c| c as f64).collect())
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn tol_int(&self) -> f64 {
        self.tol_int
    }

    pub fn degree(&self) -> usize {
        self.coeffs.len() - 1
    }

    pub fn leading(&self) -> f64 {
        *self.coeffs.last().unwrap()
    }

    /// Coefficient of `x^k` (zero past the degree).
    pub fn coeff(&self, k: usize) -> f64 {
        self.coeffs.get(k).copied().unwrap_or(0.0)
    }

    pub fn eval(&self, x: f64) -> f64 {
        self.coeffs.iter().rev().fold(0.0, |acc, &c| acc * x + c)
    }

    pub fn is_integer_poly(&self) -> bool {
        self.coeffs
            .iter()
            .all(|c| c.is_finite() && (c - c.round()).abs() <= self.tol_int)
    }

    /// Rounded coefficients when every coefficient is within `tol_int` of an integer.
    pub fn to_integers(&self) -> Option<Vec<i64>> {
        self.is_integer_poly()
            .then(|| self.coeffs.iter().map(|c| c.round() as i64).collect())
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self::new(self.coeffs.iter().map(|c| c * factor).collect()).with_tol_int(self.tol_int)
    }

    /// Same polynomial with the constant term set to zero.
    pub fn without_constant(&self) -> Self {
        let mut coeffs = self.coeffs.clone();
        coeffs[0] = 0.0;
        Self::new(coeffs).with_tol_int(self.tol_int)
    }

    /// Coefficients rounded half away from zero.
    pub fn rounded(&self) -> Self {
        Self::new(self.coeffs.iter().map(|c| c.round()).collect()).with_tol_int(self.tol_int)
    }
}

impl std::fmt::Display for Polynomial {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let mut wrote = false;
        for (k, &c) in self.coeffs.iter().enumerate().rev() {
            if c == 0.0 && (k > 0 || wrote) {
                continue;
            }
            if wrote {
                f.write_str(if c < 0.0 { " - " } else { " + " })?;
            } else if c < 0.0 {
                f.write_str("-")?;
            }
            let a = c.abs();
            match k {
                0 => write!(f, "{a}")?,
                _ if a == 1.0 => {}
                _ => write!(f, "{a}*")?,
            }
            match k {
                0 => {}
                1 => f.write_str("x")?,
                _ => write!(f, "x^{k}")?,
            }
            wrote = true;
        }
        Ok(())
    }
}

/// Solves `a * x = b` in place by Gaussian elimination with partial pivoting.
/// Returns `None` when a pivot is negligible relative to the matrix scale.
pub(crate) fn solve_linear(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    let scale = a
        .iter()
        .flat_map(|row| row.iter())
        .fold(0.0f64, |m, v| m.max(v.abs()));
    if scale == 0.0 || !scale.is_finite() {
        return None;
    }
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))
            .unwrap();
        if a[pivot][col].abs() <= 1e-14 * scale {
            return None;
        }
        a.swap(col, pivot);
        b.swap(col, pivot);
        for row in col + 1..n {
            let factor = a[row][col] / a[col][col];
            if factor == 0.0 {
                continue;
            }
            for k in col..n {
                a[row][k] -= factor * a[col][k];
            }
            b[row] -= factor * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let tail: f64 = (row + 1..n).map(|k| a[row][k] * x[k]).sum();
        x[row] = (b[row] - tail) / a[row][row];
    }
    x.iter().all(|v| v.is_finite()).then_some(x)
}

/// Interpolating polynomial of degree `< points.len()` through `(x_i, y_i)`.
pub fn interpolate(points: &[(f64, f64)]) -> Option<Polynomial> {
    let a = points
        .iter()
        .map(|&(x, _)| {
            std::iter::successors(Some(1.0), |p| Some(p * x))
                .take(points.len())
                .collect()
        })
        .collect();
    let b = points.iter().map(|&(_, y)| y).collect();
    solve_linear(a, b).map(Polynomial::new)
}
