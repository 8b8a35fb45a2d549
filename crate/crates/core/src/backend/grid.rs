//! Crank-Nicolson solver on a truncated 1-d lattice.
//!
//! The parabolic problem is advanced by the theta = 1/2 scheme with
//! coefficients evaluated at the half step (second order in time and
//! space), Dirichlet boundary values frozen at the initial data, and an
//! optional inhomogeneous source integrated by the trapezoid rule. The
//! benchmark drifts confine the diffusion so strongly that the boundary
//! influence on the audited region is far below scheme error.

use crate::error::EvoError;
use crate::linalg::{thomas_solve, SymMat};
use crate::operator::OperatorFamily;
use crate::Result;

use super::mc::step_count;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GridSpec {
    pub radius: f64,
    pub n_cells: usize,
    pub dt: f64,
}

impl GridSpec {
    pub fn h(&self) -> f64 {
        2.0 * self.radius / self.n_cells as f64
    }

    pub fn nodes(&self) -> Vec<f64> {
        let h = self.h();
        (0..=self.n_cells).map(|i| -self.radius + i as f64 * h).collect()
    }

    /// Halved mesh and step, for Richardson error estimates.
    pub fn refined(&self) -> GridSpec {
        GridSpec { radius: self.radius, n_cells: self.n_cells * 2, dt: self.dt / 2.0 }
    }
}

/// One time slice of nodal values on the lattice.
#[derive(Clone, Debug)]
pub struct GridField {
    pub radius: f64,
    pub h: f64,
    pub values: Vec<f64>,
}

impl GridField {
    pub fn from_values(spec: &GridSpec, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), spec.n_cells + 1);
        GridField { radius: spec.radius, h: spec.h(), values }
    }

    fn patch_start(&self, x: f64) -> usize {
        let n = self.values.len() - 1;
        let j = (((x + self.radius) / self.h).floor() as isize).clamp(0, n as isize - 1) as usize;
        j.saturating_sub(1).min(n - 3)
    }

    /// Cubic Lagrange interpolation on the 4-node patch around x.
    /// Out-of-lattice queries clamp to the nearest boundary node.
    pub fn eval(&self, x: f64) -> f64 {
        self.eval_on_patch(x, x)
    }

    /// Interpolates at `x` on the patch selected by `center`. Keeping a
    /// difference stencil on one patch makes the quotient the derivative
    /// of a single polynomial instead of straddling a seam.
    pub fn eval_on_patch(&self, center: f64, x: f64) -> f64 {
        if x <= -self.radius {
            return self.values[0];
        }
        if x >= self.radius {
            return *self.values.last().unwrap();
        }
        let p = self.patch_start(center.clamp(-self.radius, self.radius));
        let xp = -self.radius + p as f64 * self.h;
        let xi = (x - xp) / self.h;
        let l0 = -(xi - 1.0) * (xi - 2.0) * (xi - 3.0) / 6.0;
        let l1 = xi * (xi - 2.0) * (xi - 3.0) / 2.0;
        let l2 = -xi * (xi - 1.0) * (xi - 3.0) / 2.0;
        let l3 = xi * (xi - 1.0) * (xi - 2.0) / 6.0;
        l0 * self.values[p]
            + l1 * self.values[p + 1]
            + l2 * self.values[p + 2]
            + l3 * self.values[p + 3]
    }

    /// Analytic derivative of the local cubic.
    pub fn deriv(&self, x: f64) -> f64 {
        let xc = x.clamp(-self.radius, self.radius);
        let p = self.patch_start(xc);
        let xp = -self.radius + p as f64 * self.h;
        let xi = (xc - xp) / self.h;
        let d0 = -((xi - 2.0) * (xi - 3.0) + (xi - 1.0) * (xi - 3.0) + (xi - 1.0) * (xi - 2.0))
            / 6.0;
        let d1 = ((xi - 2.0) * (xi - 3.0) + xi * (xi - 3.0) + xi * (xi - 2.0)) / 2.0;
        let d2 = -((xi - 1.0) * (xi - 3.0) + xi * (xi - 3.0) + xi * (xi - 1.0)) / 2.0;
        let d3 = ((xi - 1.0) * (xi - 2.0) + xi * (xi - 2.0) + xi * (xi - 1.0)) / 6.0;
        (d0 * self.values[p]
            + d1 * self.values[p + 1]
            + d2 * self.values[p + 2]
            + d3 * self.values[p + 3])
            / self.h
    }

    /// Central-difference gradient at every node (one-sided at the ends).
    pub fn node_gradient(&self) -> Vec<f64> {
        let n = self.values.len();
        let mut g = vec![0.0; n];
        for i in 1..n - 1 {
            g[i] = (self.values[i + 1] - self.values[i - 1]) / (2.0 * self.h);
        }
        g[0] = (self.values[1] - self.values[0]) / self.h;
        g[n - 1] = (self.values[n - 1] - self.values[n - 2]) / self.h;
        g
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }
}

/// Result of one sweep: slices at `times` (every step when `store_all`,
/// otherwise first and last).
pub struct GridSweep {
    pub spec: GridSpec,
    pub times: Vec<f64>,
    pub slices: Vec<GridField>,
}

impl GridSweep {
    pub fn final_slice(&self) -> &GridField {
        self.slices.last().unwrap()
    }
}

/// Source term evaluated on all nodes at a given time.
pub type SourceFn<'a> = dyn Fn(f64, &[f64], &mut [f64]) + Sync + 'a;

/// Advances the lattice data from s to t.
pub(crate) fn sweep(
    op: &OperatorFamily,
    spec: &GridSpec,
    t: f64,
    s: f64,
    init: Vec<f64>,
    source: Option<&SourceFn>,
    store_all: bool,
) -> Result<GridSweep> {
    if op.dim != 1 {
        return Err(EvoError::UnsupportedDimension { dim: op.dim, engine: "grid", max: 1 });
    }
    let n = spec.n_cells;
    if n < 8 {
        return Err(EvoError::invalid("grid needs at least 8 cells"));
    }
    if init.len() != n + 1 {
        return Err(EvoError::invalid(format!(
            "initial data has {} nodes, lattice has {}",
            init.len(),
            n + 1
        )));
    }
    let nodes = spec.nodes();
    let h = spec.h();
    let n_steps = step_count(t - s, spec.dt);
    let dt = (t - s) / n_steps as f64;
    let frozen = (init[0], init[n]);

    let mut u = init;
    let mut times = Vec::with_capacity(if store_all { n_steps + 1 } else { 2 });
    let mut slices = Vec::with_capacity(times.capacity());
    times.push(s);
    slices.push(GridField::from_values(spec, u.clone()));

    let mut lower = vec![0.0f64; n + 1];
    let mut diag = vec![0.0f64; n + 1];
    let mut upper = vec![0.0f64; n + 1];
    let mut rhs = vec![0.0f64; n + 1];
    let mut scratch = vec![0.0f64; n + 1];
    let mut src_a = vec![0.0f64; n + 1];
    let mut src_b = vec![0.0f64; n + 1];
    if let Some(src) = source {
        src(s, &nodes, &mut src_a);
    }
    let mut q = SymMat::zeros(1);
    let mut bvec = [0.0f64; 1];

    for k in 0..n_steps {
        let tn = s + k as f64 * dt;
        let tmid = tn + 0.5 * dt;
        if let Some(src) = source {
            src(tn + dt, &nodes, &mut src_b);
        }
        // boundary rows: identity, frozen value
        diag[0] = 1.0;
        upper[0] = 0.0;
        rhs[0] = frozen.0;
        diag[n] = 1.0;
        lower[n] = 0.0;
        rhs[n] = frozen.1;
        for i in 1..n {
            (op.diffusion)(tmid, &nodes[i..i + 1], &mut q);
            (op.drift)(tmid, &nodes[i..i + 1], &mut bvec);
            let qv = q.get(0, 0);
            if !(qv > 0.0) || !qv.is_finite() || !bvec[0].is_finite() {
                return Err(EvoError::NotPositiveDefinite {
                    t: tmid,
                    x: vec![nodes[i]],
                    detail: format!("q = {qv}, b = {}", bvec[0]),
                });
            }
            let alpha = qv / (h * h);
            let beta = bvec[0] / (2.0 * h);
            if dt * (beta.abs() - alpha) >= 1.0 {
                return Err(EvoError::invalid(format!(
                    "advection-dominated lattice at x = {} (refine mesh or shrink radius)",
                    nodes[i]
                )));
            }
            lower[i] = -0.5 * dt * (alpha - beta);
            diag[i] = 1.0 + dt * alpha;
            upper[i] = -0.5 * dt * (alpha + beta);
            let lap = alpha * (u[i - 1] - 2.0 * u[i] + u[i + 1]) + beta * (u[i + 1] - u[i - 1]);
            rhs[i] = u[i] + 0.5 * dt * lap;
            if source.is_some() {
                rhs[i] += 0.5 * dt * (src_a[i] + src_b[i]);
            }
        }
        thomas_solve(&lower, &diag, &upper, &mut rhs, &mut scratch);
        u.copy_from_slice(&rhs);
        if u.iter().any(|v| !v.is_finite()) {
            return Err(EvoError::NonFinite {
                what: "grid slice",
                t: tn + dt,
                x: vec![],
            });
        }
        std::mem::swap(&mut src_a, &mut src_b);
        if store_all || k == n_steps - 1 {
            times.push(tn + dt);
            slices.push(GridField::from_values(spec, u.clone()));
        }
    }
    // close the last recorded time onto t exactly
    *times.last_mut().unwrap() = t;
    Ok(GridSweep { spec: *spec, times, slices })
}

/// Samples a spatial field on the lattice nodes.
pub fn project(spec: &GridSpec, f: &dyn crate::fields::ScalarField) -> Vec<f64> {
    spec.nodes().iter().map(|&x| f.value(&[x])).collect()
}
