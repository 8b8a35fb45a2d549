//! The nonautonomous second-order operator family
//! `A(t) f = sum_ij q_ij(t,x) D_ij f + sum_i b_i(t,x) D_i f`
//! together with the certificates (ellipticity, Lyapunov function,
//! dissipativity data) that the structural checks sample.

use crate::error::EvoError;
use crate::fields::ScalarField;
use crate::linalg::SymMat;
use crate::rng::labeled_stream;
use crate::{Result, MAX_DIM};
use rand::Rng;
use std::sync::Arc;

/// Relative asymmetry allowed in the diffusion matrix at any evaluation.
pub const Q_ASYMMETRY_TOL: f64 = 1e-12;

pub type DiffusionFn = dyn Fn(f64, &[f64], &mut SymMat) + Send + Sync;
pub type DriftFn = dyn Fn(f64, &[f64], &mut [f64]) + Send + Sync;
/// Jacobian J[i][j] = d b_i / d x_j, written row-major into a d*d slice.
pub type JacobianFn = dyn Fn(f64, &[f64], &mut [f64]) + Send + Sync;
/// Derivative of Q with respect to x_k.
pub type DiffusionGradFn = dyn Fn(f64, &[f64], usize, &mut SymMat) + Send + Sync;

#[derive(Clone)]
pub struct OperatorFamily {
    pub name: String,
    pub dim: usize,
    /// Closed time interval on which the coefficients are defined.
    pub time_interval: (f64, f64),
    pub diffusion: Arc<DiffusionFn>,
    pub drift: Arc<DriftFn>,
    /// Analytic drift Jacobian; finite differences otherwise.
    pub drift_jacobian: Option<Arc<JacobianFn>>,
    /// Analytic x-derivatives of Q; finite differences otherwise.
    pub diffusion_x_grad: Option<Arc<DiffusionGradFn>>,
}

impl OperatorFamily {
    fn check_time(&self, t: f64) -> Result<()> {
        let (lo, hi) = self.time_interval;
        if t < lo || t > hi || !t.is_finite() {
            return Err(EvoError::OutsideTimeInterval { t, lo, hi });
        }
        Ok(())
    }

    /// Q(t,x), validated: finite, symmetric to within `Q_ASYMMETRY_TOL`.
    pub fn q_at(&self, t: f64, x: &[f64]) -> Result<SymMat> {
        self.check_time(t)?;
        let mut q = SymMat::zeros(self.dim);
        (self.diffusion)(t, x, &mut q);
        if !q.is_finite() {
            return Err(EvoError::NonFinite { what: "diffusion", t, x: x.to_vec() });
        }
        if q.asymmetry() > Q_ASYMMETRY_TOL {
            return Err(EvoError::InvalidArgument(format!(
                "diffusion asymmetry {:.3e} at t={t}, x={x:?}",
                q.asymmetry()
            )));
        }
        Ok(q)
    }

    pub fn b_at(&self, t: f64, x: &[f64], out: &mut [f64]) -> Result<()> {
        self.check_time(t)?;
        (self.drift)(t, x, out);
        if out[..self.dim].iter().any(|v| !v.is_finite()) {
            return Err(EvoError::NonFinite { what: "drift", t, x: x.to_vec() });
        }
        Ok(())
    }

    /// Drift Jacobian, analytic when supplied, otherwise central
    /// differences with step 1e-5 (1 + |x|).
    pub fn drift_jacobian_at(&self, t: f64, x: &[f64], out: &mut [f64]) -> Result<()> {
        self.check_time(t)?;
        let d = self.dim;
        if let Some(j) = &self.drift_jacobian {
            j(t, x, out);
            return Ok(());
        }
        let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        let h = 1e-5 * (1.0 + norm);
        let mut xp = [0.0f64; MAX_DIM];
        let mut xm = [0.0f64; MAX_DIM];
        let mut bp = [0.0f64; MAX_DIM];
        let mut bm = [0.0f64; MAX_DIM];
        for k in 0..d {
            xp[..d].copy_from_slice(x);
            xm[..d].copy_from_slice(x);
            xp[k] += h;
            xm[k] -= h;
            (self.drift)(t, &xp[..d], &mut bp[..d]);
            (self.drift)(t, &xm[..d], &mut bm[..d]);
            for i in 0..d {
                out[i * d + k] = (bp[i] - bm[i]) / (2.0 * h);
            }
        }
        Ok(())
    }

    /// d Q / d x_k, analytic when supplied, otherwise central differences.
    pub fn diffusion_x_grad_at(&self, t: f64, x: &[f64], k: usize, out: &mut SymMat) -> Result<()> {
        self.check_time(t)?;
        if let Some(g) = &self.diffusion_x_grad {
            g(t, x, k, out);
            return Ok(());
        }
        let d = self.dim;
        let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        let h = 1e-5 * (1.0 + norm);
        let mut xp = [0.0f64; MAX_DIM];
        let mut xm = [0.0f64; MAX_DIM];
        xp[..d].copy_from_slice(x);
        xm[..d].copy_from_slice(x);
        xp[k] += h;
        xm[k] -= h;
        let mut qp = SymMat::zeros(d);
        let mut qm = SymMat::zeros(d);
        (self.diffusion)(t, &xp[..d], &mut qp);
        (self.diffusion)(t, &xm[..d], &mut qm);
        *out = SymMat::zeros(d);
        for i in 0..d {
            for j in i..d {
                out.set(i, j, (qp.get(i, j) - qm.get(i, j)) / (2.0 * h));
            }
        }
        Ok(())
    }
}

/// kappa with its strictly positive infimum kappa0:
/// kappa(t,x) |xi|^2 <= <Q(t,x) xi, xi> and kappa0 <= kappa everywhere.
#[derive(Clone)]
pub struct EllipticityCertificate {
    pub kappa: Arc<dyn Fn(f64, &[f64]) -> f64 + Send + Sync>,
    pub kappa0: f64,
}

/// phi with A(t) phi <= a - c phi, c > 0, phi >= 1 and radially unbounded.
#[derive(Clone)]
pub struct LyapunovCertificate {
    pub phi: Arc<dyn ScalarField>,
    pub a: f64,
    pub c: f64,
}

/// r(t,x) dominating the symmetrized drift Jacobian, rho(t) dominating
/// the diffusion x-gradient relative to kappa, and the exponent p0 the
/// dissipativity certificate is issued for.
#[derive(Clone)]
pub struct DissipativityData {
    pub r_bound: Arc<dyn Fn(f64, &[f64]) -> f64 + Send + Sync>,
    pub rho: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
    pub p0: f64,
}

/// A(t) f at (t, x): exact contraction of the field's supplied
/// derivatives against the coefficients. No differencing happens here.
pub fn apply_operator(op: &OperatorFamily, f: &dyn ScalarField, t: f64, x: &[f64]) -> Result<f64> {
    let d = op.dim;
    let q = op.q_at(t, x)?;
    let mut b = [0.0f64; MAX_DIM];
    op.b_at(t, x, &mut b[..d])?;
    let mut grad = [0.0f64; MAX_DIM];
    let mut hess = SymMat::zeros(d);
    f.gradient(x, &mut grad[..d]);
    f.hessian(x, &mut hess);
    let mut s = q.contract(&hess);
    for i in 0..d {
        s += b[i] * grad[i];
    }
    if !s.is_finite() {
        return Err(EvoError::NonFinite { what: "operator application", t, x: x.to_vec() });
    }
    Ok(s)
}

/// Deterministic sampling region: a time window crossed with a centered
/// box, sampled on a tensor grid plus seeded uniform draws.
#[derive(Clone, Debug)]
pub struct SampleBox {
    pub t_lo: f64,
    pub t_hi: f64,
    pub radius: f64,
    pub n_time: usize,
    pub n_axis: usize,
    pub n_random: usize,
    pub seed: u64,
}

impl SampleBox {
    pub fn standard(t_lo: f64, t_hi: f64, radius: f64) -> Self {
        SampleBox { t_lo, t_hi, radius, n_time: 13, n_axis: 9, n_random: 200, seed: 0x5eed }
    }

    /// All (t, x) samples, grid first, then the random fill.
    pub fn samples(&self, dim: usize) -> Vec<(f64, Vec<f64>)> {
        let mut out = Vec::new();
        let times: Vec<f64> = if self.n_time <= 1 {
            vec![self.t_lo]
        } else {
            (0..self.n_time)
                .map(|i| {
                    self.t_lo + (self.t_hi - self.t_lo) * i as f64 / (self.n_time - 1) as f64
                })
                .collect()
        };
        let axis: Vec<f64> = (0..self.n_axis)
            .map(|i| -self.radius + 2.0 * self.radius * i as f64 / (self.n_axis - 1) as f64)
            .collect();
        let mut points: Vec<Vec<f64>> = vec![vec![]];
        for _ in 0..dim {
            let mut next = Vec::with_capacity(points.len() * axis.len());
            for p in &points {
                for &a in &axis {
                    let mut q = p.clone();
                    q.push(a);
                    next.push(q);
                }
            }
            points = next;
        }
        for &t in &times {
            for p in &points {
                out.push((t, p.clone()));
            }
        }
        let mut rng = labeled_stream(self.seed, "sample-box");
        for _ in 0..self.n_random {
            let t = rng.gen_range(self.t_lo..=self.t_hi);
            let x: Vec<f64> = (0..dim).map(|_| rng.gen_range(-self.radius..=self.radius)).collect();
            out.push((t, x));
        }
        out
    }
}

/// sigma_p: sampled supremum of
/// `r(t,x) + d^3 rho(t)^2 kappa(t,x) / (4 min(p-1, 1))`.
///
/// p = 1 is admitted only when rho vanishes on the sampled times (the
/// x-independent bounded-diffusion case); the quadratic term is then zero.
pub fn compute_sigma_p(
    op: &OperatorFamily,
    diss: &DissipativityData,
    ell: &EllipticityCertificate,
    p: f64,
    sample: &SampleBox,
) -> Result<f64> {
    if p < 1.0 {
        return Err(EvoError::invalid(format!("sigma_p needs p >= 1, got {p}")));
    }
    let d = op.dim as f64;
    let mut sup = f64::NEG_INFINITY;
    for (t, x) in sample.samples(op.dim) {
        let r = (diss.r_bound)(t, &x);
        let rho = (diss.rho)(t);
        let quad = if rho == 0.0 {
            0.0
        } else {
            if p == 1.0 {
                return Err(EvoError::invalid(
                    "p = 1 requires rho == 0 (x-independent diffusion)",
                ));
            }
            d.powi(3) * rho * rho * (ell.kappa)(t, &x) / (4.0 * (p - 1.0).min(1.0))
        };
        let v = r + quad;
        if !v.is_finite() {
            return Err(EvoError::NonFinite { what: "sigma_p sample", t, x });
        }
        sup = sup.max(v);
    }
    Ok(sup)
}

/// One structural sub-check outcome.
#[derive(Clone, Debug)]
pub struct HypothesisCheck {
    pub name: &'static str,
    pub pass: bool,
    /// Largest violation found (negative or zero means clean).
    pub worst_violation: f64,
    pub witness: Option<(f64, Vec<f64>)>,
    pub note: String,
}

#[derive(Clone, Debug)]
pub struct HypothesisReport {
    pub checks: Vec<HypothesisCheck>,
    pub sigma_p0: f64,
}

impl HypothesisReport {
    pub fn all_pass(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }
}

/// Samples every structural hypothesis on the box and reports
/// per-hypothesis verdicts with worst witnesses.
///
/// Smoothness itself is not machine-checkable from evaluators; its desk
/// surrogate is evaluation purity (bitwise-identical repeats), finiteness
/// and exact symmetry of Q, which is what the first check records.
pub fn verify_hypotheses(
    op: &OperatorFamily,
    ell: &EllipticityCertificate,
    lyap: &LyapunovCertificate,
    diss: &DissipativityData,
    sample: &SampleBox,
) -> Result<HypothesisReport> {
    let d = op.dim;
    let samples = sample.samples(d);
    let mut checks = Vec::new();

    // (1) purity / symmetry / finiteness surrogate.
    {
        let mut pass = true;
        let mut note = String::new();
        let mut witness = None;
        for (t, x) in &samples {
            let q1 = op.q_at(*t, x);
            let q2 = op.q_at(*t, x);
            let mut b1 = [0.0f64; MAX_DIM];
            let mut b2 = [0.0f64; MAX_DIM];
            let ok = match (&q1, &q2) {
                (Ok(a), Ok(b)) => a == b,
                _ => false,
            };
            let okb = op.b_at(*t, x, &mut b1[..d]).is_ok()
                && op.b_at(*t, x, &mut b2[..d]).is_ok()
                && b1[..d]
                    .iter()
                    .zip(&b2[..d])
                    .all(|(u, v)| u.to_bits() == v.to_bits());
            if !ok || !okb {
                pass = false;
                witness = Some((*t, x.clone()));
                note = "evaluation not pure or Q invalid".into();
                break;
            }
        }
        checks.push(HypothesisCheck {
            name: "coefficient-evaluation",
            pass,
            worst_violation: if pass { 0.0 } else { f64::INFINITY },
            witness,
            note,
        });
    }

    // (2) ellipticity: kappa0 <= kappa(t,x) <= lambda_min(Q(t,x)).
    {
        let mut worst = f64::NEG_INFINITY;
        let mut witness = None;
        for (t, x) in &samples {
            let q = op.q_at(*t, x)?;
            let lmin = q.min_eigenvalue();
            let k = (ell.kappa)(*t, x);
            let viol = (k - lmin).max(ell.kappa0 - k);
            if viol > worst {
                worst = viol;
                witness = Some((*t, x.clone()));
            }
        }
        let tol = 1e-12 * (1.0 + ell.kappa0.abs());
        checks.push(HypothesisCheck {
            name: "ellipticity",
            pass: worst <= tol && ell.kappa0 > 0.0,
            worst_violation: worst,
            witness,
            note: format!("kappa0 = {}", ell.kappa0),
        });
    }

    // (3) Lyapunov: phi >= 1, radially increasing witness, and
    //     A(t) phi <= a - c phi with relative slack.
    {
        let mut worst = f64::NEG_INFINITY;
        let mut witness = None;
        let mut positivity_ok = true;
        for (t, x) in &samples {
            let phi = lyap.phi.value(x);
            if phi < 1.0 - 1e-12 {
                positivity_ok = false;
            }
            let aphi = apply_operator(op, lyap.phi.as_ref(), *t, x)?;
            let slack = 1e-9 * (1.0 + lyap.a.abs() + lyap.c * phi);
            let viol = aphi - (lyap.a - lyap.c * phi) - slack;
            if viol > worst {
                worst = viol;
                witness = Some((*t, x.clone()));
            }
        }
        let origin = vec![0.0; d];
        let mut edge = vec![0.0; d];
        edge[0] = sample.radius;
        let grows = lyap.phi.value(&edge) > lyap.phi.value(&origin);
        checks.push(HypothesisCheck {
            name: "lyapunov",
            pass: worst <= 0.0 && positivity_ok && grows && lyap.c > 0.0,
            worst_violation: worst,
            witness,
            note: format!("a = {}, c = {}", lyap.a, lyap.c),
        });
    }

    // (4) |grad_x q_ij| <= rho(t) kappa(t,x).
    {
        let mut worst = f64::NEG_INFINITY;
        let mut witness = None;
        for (t, x) in &samples {
            let rho = (diss.rho)(*t);
            let kap = (ell.kappa)(*t, x);
            let mut grads = vec![SymMat::zeros(d); d];
            for (k, g) in grads.iter_mut().enumerate() {
                op.diffusion_x_grad_at(*t, x, k, g)?;
            }
            for i in 0..d {
                for j in 0..d {
                    let norm: f64 =
                        (0..d).map(|k| grads[k].get(i, j).powi(2)).sum::<f64>().sqrt();
                    let viol = norm - rho * kap - 1e-9 * (1.0 + rho * kap);
                    if viol > worst {
                        worst = viol;
                        witness = Some((*t, x.clone()));
                    }
                }
            }
        }
        checks.push(HypothesisCheck {
            name: "diffusion-gradient",
            pass: worst <= 0.0,
            worst_violation: worst,
            witness,
            note: String::new(),
        });
    }

    // (5) dissipativity: lambda_max((J + J^T)/2) <= r(t,x).
    {
        let mut worst = f64::NEG_INFINITY;
        let mut witness = None;
        let mut jac = vec![0.0f64; d * d];
        for (t, x) in &samples {
            op.drift_jacobian_at(*t, x, &mut jac)?;
            let mut sym = SymMat::zeros(d);
            for i in 0..d {
                for j in i..d {
                    sym.set(i, j, 0.5 * (jac[i * d + j] + jac[j * d + i]));
                }
            }
            let lmax = sym.max_eigenvalue();
            let r = (diss.r_bound)(*t, x);
            // FD Jacobians carry O(h) noise on rapidly growing drifts;
            // the slack scales with the drift curvature through |r|.
            let viol = lmax - r - 1e-6 * (1.0 + r.abs());
            if viol > worst {
                worst = viol;
                witness = Some((*t, x.clone()));
            }
        }
        checks.push(HypothesisCheck {
            name: "dissipativity",
            pass: worst <= 0.0,
            worst_violation: worst,
            witness,
            note: format!("p0 = {}", diss.p0),
        });
    }

    let sigma_p0 = compute_sigma_p(op, diss, ell, diss.p0, sample)?;
    let finite = sigma_p0.is_finite();
    checks.push(HypothesisCheck {
        name: "sigma-p0-finite",
        pass: finite,
        worst_violation: if finite { 0.0 } else { f64::INFINITY },
        witness: None,
        note: format!("sigma_p0 = {sigma_p0}"),
    });

    Ok(HypothesisReport { checks, sigma_p0 })
}
