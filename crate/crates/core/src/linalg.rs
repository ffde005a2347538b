//! Small dense linear algebra: Cholesky factorization and least squares via
//! the normal equations.

/// Ridge added to the diagonal of `XᵀX` when the plain normal equations are
/// not numerically positive definite.
pub const RIDGE_FALLBACK: f64 = 1e-10;

/// Lower Cholesky factor of a row-major symmetric `n × n` matrix, or `None`
/// when a pivot is not safely positive.
pub fn cholesky(a: &[f64], n: usize) -> Option<Vec<f64>> {
    debug_assert_eq!(a.len(), n * n);
    let scale = (0..n).map(|i| a[i * n + i].abs()).fold(0.0, f64::max).max(f64::MIN_POSITIVE);
    let tol = scale * n as f64 * f64::EPSILON * 16.0;
    let mut l = vec![0.0; n * n];
    for j in 0..n {
        let mut d = a[j * n + j];
        for k in 0..j {
            d -= l[j * n + k] * l[j * n + k];
        }
        if !(d > tol) {
            return None;
        }
        let d = d.sqrt();
        l[j * n + j] = d;
        for i in j + 1..n {
            let mut s = a[i * n + j];
            for k in 0..j {
                s -= l[i * n + k] * l[j * n + k];
            }
            l[i * n + j] = s / d;
        }
    }
    Some(l)
}

/// Solves `L Lᵀ x = b` given the lower factor.
pub fn cholesky_solve(l: &[f64], n: usize, b: &[f64]) -> Vec<f64> {
    let mut y = b.to_vec();
    for i in 0..n {
        let mut s = y[i];
        for k in 0..i {
            s -= l[i * n + k] * y[k];
        }
        y[i] = s / l[i * n + i];
    }
    for i in (0..n).rev() {
        let mut s = y[i];
        for k in i + 1..n {
            s -= l[k * n + i] * y[k];
        }
        y[i] = s / l[i * n + i];
    }
    y
}

#[derive(Debug, Clone, PartialEq)]
pub struct LeastSquares {
    pub coeffs: Vec<f64>,
    pub ridge_applied: bool,
}

/// Accumulates `XᵀX` and `Xᵀy` row by row.
#[derive(Debug, Clone)]
pub struct NormalEquations {
    dim: usize,
    xtx: Vec<f64>,
    xty: Vec<f64>,
    rows: usize,
}

impl NormalEquations {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            xtx: vec![0.0; dim * dim],
            xty: vec![0.0; dim],
            rows: 0,
        }
    }

    pub fn add_row(&mut self, x: &[f64], y: f64) {
        debug_assert_eq!(x.len(), self.dim);
        let n = self.dim;
        for i in 0..n {
            let xi = x[i];
            self.xty[i] += xi * y;
            for j in 0..=i {
                self.xtx[i * n + j] += xi * x[j];
            }
        }
        self.rows += 1;
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn solve(&self) -> LeastSquares {
        let n = self.dim;
        let mut a = self.xtx.clone();
        for i in 0..n {
            for j in 0..i {
                a[j * n + i] = a[i * n + j];
            }
        }
        if let Some(l) = cholesky(&a, n) {
            return LeastSquares {
                coeffs: cholesky_solve(&l, n, &self.xty),
                ridge_applied: false,
            };
        }
        let mut ridge = RIDGE_FALLBACK;
        loop {
            let mut r = a.clone();
            for i in 0..n {
                r[i * n + i] += ridge;
            }
            if let Some(l) = cholesky(&r, n) {
                return LeastSquares {
                    coeffs: cholesky_solve(&l, n, &self.xty),
                    ridge_applied: true,
                };
            }
            // Only reached when XᵀX is so large that 1e-10 is below its rounding noise.
            ridge *= 10.0;
        }
    }
}
