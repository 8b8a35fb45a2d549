//! Gauss-Hermite quadrature, the integration rule behind every
//! measure-weighted norm and entropy in the audits.
//!
//! Nodes and weights come from Newton iteration on the orthonormal
//! Hermite recurrence (weight e^{-y^2}); a rule with n nodes integrates
//! polynomials up to degree 2n - 1 exactly. Gaussian expectations use the
//! affine substitution x = m + sqrt(2) L y per axis, tensorized for d > 1.

use crate::linalg::{Lower, SymMat};
use crate::{EvoError, Result, MAX_DIM};

/// Nodes and weights for integral of e^{-y^2} f(y) dy.
#[derive(Clone, Debug)]
pub struct GaussHermite {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl GaussHermite {
    /// Builds the n-point rule. Accurate to near machine precision for
    /// the desk-scale sizes (n <= 128 tested).
    pub fn new(n: usize) -> Result<Self> {
        if !(1..=256).contains(&n) {
            return Err(EvoError::invalid(format!("Gauss-Hermite size {n} out of range")));
        }
        let mut nodes = vec![0.0f64; n];
        let mut weights = vec![0.0f64; n];
        let pim4 = 0.751_125_544_464_942_8_f64; // pi^(-1/4)
        let m = n.div_ceil(2);
        let nf = n as f64;
        let mut z = 0.0f64;
        for i in 0..m {
            z = match i {
                0 => (2.0 * nf + 1.0).sqrt() - 1.85575 * (2.0 * nf + 1.0).powf(-1.0 / 6.0),
                1 => z - 1.14 * nf.powf(0.426) / z,
                2 => 1.86 * z - 0.86 * nodes[0],
                3 => 1.91 * z - 0.91 * nodes[1],
                _ => 2.0 * z - nodes[i - 2],
            };
            let mut pp = 0.0;
            for _iter in 0..100 {
                // Orthonormal recurrence: p1 holds H~_n(z) when done.
                let mut p1 = pim4;
                let mut p2 = 0.0;
                for j in 0..n {
                    let p3 = p2;
                    p2 = p1;
                    let jf = j as f64;
                    p1 = z * (2.0 / (jf + 1.0)).sqrt() * p2 - (jf / (jf + 1.0)).sqrt() * p3;
                }
                pp = (2.0 * nf).sqrt() * p2;
                let dz = p1 / pp;
                z -= dz;
                if dz.abs() < 1e-15 * (1.0 + z.abs()) {
                    break;
                }
            }
            nodes[i] = z;
            nodes[n - 1 - i] = -z;
            weights[i] = 2.0 / (pp * pp);
            weights[n - 1 - i] = weights[i];
        }
        // ascending node order
        nodes.reverse();
        weights.reverse();
        Ok(GaussHermite { nodes, weights })
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }
}

/// Quadrature for expectations against N(mean, cov), cov given through
/// its Cholesky factor (whitening): x = mean + sqrt(2) L y.
pub struct GaussianRule {
    pub dim: usize,
    pub mean: [f64; MAX_DIM],
    pub chol: Lower,
    rule: GaussHermite,
}

impl GaussianRule {
    pub fn new(mean: &[f64], cov: &SymMat, nodes_per_axis: usize) -> Result<Self> {
        let dim = cov.dim();
        if mean.len() != dim {
            return Err(EvoError::invalid("mean/cov dimension mismatch"));
        }
        let chol = cov.cholesky().map_err(|_| {
            EvoError::invalid("covariance not positive definite in Gaussian quadrature")
        })?;
        let mut m = [0.0f64; MAX_DIM];
        m[..dim].copy_from_slice(mean);
        Ok(GaussianRule { dim, mean: m, chol, rule: GaussHermite::new(nodes_per_axis)? })
    }

    /// Sum over the tensor grid of weight * f(x). Weights sum to one.
    pub fn integrate(&self, mut f: impl FnMut(&[f64]) -> f64) -> f64 {
        let n = self.rule.len();
        let d = self.dim;
        let norm = std::f64::consts::PI.powf(-(d as f64) / 2.0);
        let mut idx = [0usize; MAX_DIM];
        let mut x = [0.0f64; MAX_DIM];
        let mut y = [0.0f64; MAX_DIM];
        let mut ly = [0.0f64; MAX_DIM];
        let mut total = 0.0;
        let mut comp = 0.0; // Kahan compensation
        let cells = n.pow(d as u32);
        for flat in 0..cells {
            let mut rem = flat;
            let mut w = norm;
            for k in 0..d {
                idx[k] = rem % n;
                rem /= n;
                w *= self.rule.weights[idx[k]];
                y[k] = std::f64::consts::SQRT_2 * self.rule.nodes[idx[k]];
            }
            self.chol.mul_vec(&y[..d], &mut ly[..d]);
            for k in 0..d {
                x[k] = self.mean[k] + ly[k];
            }
            let term = w * f(&x[..d]);
            let t = total + term;
            comp += if total.abs() >= term.abs() {
                (total - t) + term
            } else {
                (term - t) + total
            };
            total = t;
        }
        total + comp
    }

    /// Normalized weights in the same tensor order as `points` (sum 1).
    pub fn weights(&self) -> Vec<f64> {
        let n = self.rule.len();
        let d = self.dim;
        let norm = std::f64::consts::PI.powf(-(d as f64) / 2.0);
        let mut ws = Vec::with_capacity(n.pow(d as u32));
        for flat in 0..n.pow(d as u32) {
            let mut rem = flat;
            let mut w = norm;
            for _ in 0..d {
                w *= self.rule.weights[rem % n];
                rem /= n;
            }
            ws.push(w);
        }
        ws
    }

    /// Evaluation abscissas in deterministic tensor order.
    pub fn points(&self) -> Vec<Vec<f64>> {
        let mut pts = Vec::new();
        let n = self.rule.len();
        let d = self.dim;
        let mut y = [0.0f64; MAX_DIM];
        let mut ly = [0.0f64; MAX_DIM];
        for flat in 0..n.pow(d as u32) {
            let mut rem = flat;
            for k in 0..d {
                y[k] = std::f64::consts::SQRT_2 * self.rule.nodes[rem % n];
                rem /= n;
            }
            self.chol.mul_vec(&y[..d], &mut ly[..d]);
            pts.push((0..d).map(|k| self.mean[k] + ly[k]).collect());
        }
        pts
    }
}
