//! Dense symmetric-matrix helpers for the desk-scale dimensions (d <= 3).

use crate::error::EvoError;
use crate::Result;

/// Symmetric d x d matrix, d <= 3, stored row-major in a fixed buffer.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SymMat {
    d: usize,
    a: [f64; 9],
}

impl SymMat {
    pub fn zeros(d: usize) -> Self {
        assert!((1..=3).contains(&d), "SymMat supports 1 <= d <= 3, got {d}");
        SymMat { d, a: [0.0; 9] }
    }

    pub fn identity(d: usize) -> Self {
        let mut m = Self::zeros(d);
        for i in 0..d {
            m.a[i * 3 + i] = 1.0;
        }
        m
    }

    pub fn scalar(d: usize, v: f64) -> Self {
        let mut m = Self::zeros(d);
        for i in 0..d {
            m.a[i * 3 + i] = v;
        }
        m
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        debug_assert!(i < self.d && j < self.d);
        self.a[i * 3 + j]
    }

    /// Sets entry (i, j) and mirrors it to (j, i).
    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        debug_assert!(i < self.d && j < self.d);
        self.a[i * 3 + j] = v;
        self.a[j * 3 + i] = v;
    }

    pub fn from_rows(d: usize, rows: &[&[f64]]) -> Self {
        let mut m = Self::zeros(d);
        for i in 0..d {
            for j in 0..d {
                m.a[i * 3 + j] = rows[i][j];
            }
        }
        m
    }

    /// Largest relative asymmetry max |a_ij - a_ji| / (1 + max |a|).
    pub fn asymmetry(&self) -> f64 {
        let mut scale: f64 = 0.0;
        let mut worst: f64 = 0.0;
        for i in 0..self.d {
            for j in 0..self.d {
                scale = scale.max(self.a[i * 3 + j].abs());
            }
        }
        for i in 0..self.d {
            for j in (i + 1)..self.d {
                worst = worst.max((self.a[i * 3 + j] - self.a[j * 3 + i]).abs());
            }
        }
        worst / (1.0 + scale)
    }

    pub fn is_finite(&self) -> bool {
        (0..self.d).all(|i| (0..self.d).all(|j| self.a[i * 3 + j].is_finite()))
    }

    /// Quadratic form xi^T A xi.
    pub fn quad_form(&self, xi: &[f64]) -> f64 {
        let mut s = 0.0;
        for i in 0..self.d {
            for j in 0..self.d {
                s += self.a[i * 3 + j] * xi[i] * xi[j];
            }
        }
        s
    }

    /// Frobenius contraction sum_ij A_ij B_ij.
    pub fn contract(&self, other: &SymMat) -> f64 {
        debug_assert_eq!(self.d, other.d);
        let mut s = 0.0;
        for i in 0..self.d {
            for j in 0..self.d {
                s += self.a[i * 3 + j] * other.a[i * 3 + j];
            }
        }
        s
    }

    pub fn scale(&self, c: f64) -> SymMat {
        let mut m = *self;
        for v in m.a.iter_mut() {
            *v *= c;
        }
        m
    }

    /// Lower-triangular Cholesky factor L with A = L L^T.
    ///
    /// Fails when a pivot is not strictly positive, which is the
    /// ellipticity violation the callers care about.
    pub fn cholesky(&self) -> Result<Lower> {
        let d = self.d;
        let mut l = [0.0f64; 9];
        for j in 0..d {
            let mut diag = self.a[j * 3 + j];
            for k in 0..j {
                diag -= l[j * 3 + k] * l[j * 3 + k];
            }
            if !(diag > 0.0) || !diag.is_finite() {
                return Err(EvoError::NotPositiveDefinite {
                    t: f64::NAN,
                    x: vec![],
                    detail: format!("pivot {j} is {diag:e}"),
                });
            }
            let root = diag.sqrt();
            l[j * 3 + j] = root;
            for i in (j + 1)..d {
                let mut v = self.a[i * 3 + j];
                for k in 0..j {
                    v -= l[i * 3 + k] * l[j * 3 + k];
                }
                l[i * 3 + j] = v / root;
            }
        }
        Ok(Lower { d, l })
    }

    /// All eigenvalues by the cyclic Jacobi rotation method.
    ///
    /// Sorted ascending. At d <= 3 a handful of sweeps reaches machine
    /// precision; the loop stops when the off-diagonal mass is below
    /// 1e-30 times the diagonal scale.
    pub fn eigenvalues(&self) -> [f64; 3] {
        let d = self.d;
        let mut a = self.a;
        if d == 1 {
            return [a[0], 0.0, 0.0];
        }
        for _sweep in 0..50 {
            let mut off = 0.0;
            for i in 0..d {
                for j in (i + 1)..d {
                    off += a[i * 3 + j] * a[i * 3 + j];
                }
            }
            let scale: f64 = (0..d).map(|i| a[i * 3 + i] * a[i * 3 + i]).sum::<f64>() + 1e-300;
            if off <= 1e-30 * scale {
                break;
            }
            for p in 0..d {
                for q in (p + 1)..d {
                    let apq = a[p * 3 + q];
                    if apq == 0.0 {
                        continue;
                    }
                    let app = a[p * 3 + p];
                    let aqq = a[q * 3 + q];
                    let theta = (aqq - app) / (2.0 * apq);
                    let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                    let c = 1.0 / (t * t + 1.0).sqrt();
                    let s = t * c;
                    for k in 0..d {
                        let akp = a[k * 3 + p];
                        let akq = a[k * 3 + q];
                        a[k * 3 + p] = c * akp - s * akq;
                        a[k * 3 + q] = s * akp + c * akq;
                    }
                    for k in 0..d {
                        let apk = a[p * 3 + k];
                        let aqk = a[q * 3 + k];
                        a[p * 3 + k] = c * apk - s * aqk;
                        a[q * 3 + k] = s * apk + c * aqk;
                    }
                }
            }
        }
        let mut ev = [0.0f64; 3];
        for i in 0..d {
            ev[i] = a[i * 3 + i];
        }
        ev[..d].sort_by(|x, y| x.partial_cmp(y).unwrap());
        ev
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.eigenvalues()[0]
    }

    pub fn max_eigenvalue(&self) -> f64 {
        let ev = self.eigenvalues();
        ev[..self.d].iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Lower-triangular factor produced by [`SymMat::cholesky`].
#[derive(Clone, Copy, Debug)]
pub struct Lower {
    d: usize,
    l: [f64; 9],
}

impl Lower {
    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.l[i * 3 + j]
    }

    /// out = L * v.
    #[inline]
    pub fn mul_vec(&self, v: &[f64], out: &mut [f64]) {
        for i in 0..self.d {
            let mut s = 0.0;
            for j in 0..=i {
                s += self.l[i * 3 + j] * v[j];
            }
            out[i] = s;
        }
    }
}

/// Solves a tridiagonal system in place by the Thomas algorithm.
///
/// `lower`, `diag`, `upper` are the three bands (lower[0] and
/// upper[n-1] unused); `rhs` becomes the solution. `scratch` must have
/// length n. No pivoting: callers guarantee diagonal dominance, which
/// the Crank-Nicolson matrices satisfy for the step sizes in use.
pub fn thomas_solve(
    lower: &[f64],
    diag: &[f64],
    upper: &[f64],
    rhs: &mut [f64],
    scratch: &mut [f64],
) {
    let n = diag.len();
    debug_assert!(n >= 1);
    scratch[0] = upper[0] / diag[0];
    rhs[0] /= diag[0];
    for i in 1..n {
        let denom = diag[i] - lower[i] * scratch[i - 1];
        scratch[i] = upper[i] / denom;
        rhs[i] = (rhs[i] - lower[i] * rhs[i - 1]) / denom;
    }
    for i in (0..n - 1).rev() {
        rhs[i] -= scratch[i] * rhs[i + 1];
    }
}
