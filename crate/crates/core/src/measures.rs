//! Evolution systems of measures: per-time probability measures mu_t
//! satisfying int G(t,s)f dmu_t = int f dmu_s.
//!
//! Differentiating that identity at t = s gives the flow the family
//! obeys: d/dt int f dmu_t = -int A(t)f dmu_t, the Fokker-Planck
//! equation with its sign reversed. The tight family is therefore
//! anchored in the far future and integrated down: mu_s(f) =
//! mu_T(G(T,s)f) propagates an anchor at large T to every earlier time,
//! and the anchor state is forgotten at the kernel's contraction rate.
//! (For coefficients constant in time this reduces to the usual
//! invariant measure.)
//!
//! Two constructions. For affine drifts with state-independent diffusion
//! the family is Gaussian, mean and covariance obey closed ODEs (the
//! negated moment equations), integrated here by RK4 from the anchor
//! backward with dense (Hermite) output. For everything else an
//! empirical cloud stands in: kernel paths whose coefficient clock
//! starts `pullback` beyond the query time and descends to it, so the
//! terminal states sample p(t + pullback, t, x0, dy) ~= mu_t.

use crate::backend::mc;
use crate::error::EvoError;
use crate::fields::{ScalarField, TimeField, TimeSlice};
use crate::linalg::{Lower, SymMat};
use crate::operator::{apply_operator, OperatorFamily};
use crate::quadrature::GaussianRule;
use crate::report::{params, AuditRecord};
use crate::rng::substream;
use crate::{Result, MAX_DIM};
use rand::Rng;
use rand_distr::StandardNormal;
use serde_json::json;
use std::collections::HashMap;
use std::sync::{Arc, Mutex};

/// Values of |f| below this are treated as exact zeros by the indicator
/// in the entropy and Dirichlet integrals.
pub const LSI_ZERO_CUTOFF: f64 = 1e-12;

/// Dirichlet-term floor when quoting entropy/Dirichlet ratios.
pub const DIRICHLET_FLOOR: f64 = 1e-14;

#[derive(Clone, Debug, PartialEq)]
pub enum MeasureSpec {
    /// Mean and covariance ODEs for affine drift, RK4 dense output.
    GaussianFlow { pullback: f64, ode_dt: f64, gh_nodes: usize },
    /// Terminal clouds of kernel paths from an anchor `pullback` beyond
    /// the query time, launched at the origin.
    Empirical { pullback: f64, n_particles: usize, dt: f64, seed: u64 },
}

impl MeasureSpec {
    pub fn default_gaussian() -> Self {
        MeasureSpec::GaussianFlow { pullback: 40.0, ode_dt: 1e-2, gh_nodes: 64 }
    }

    pub fn default_empirical(seed: u64) -> Self {
        MeasureSpec::Empirical { pullback: 40.0, n_particles: 4000, dt: 1e-3, seed }
    }

    pub fn label(&self) -> &'static str {
        match self {
            MeasureSpec::GaussianFlow { .. } => "gaussian-flow",
            MeasureSpec::Empirical { .. } => "empirical",
        }
    }
}

/// One stored RK4 node: state and derivative for Hermite interpolation.
struct FlowNode {
    t: f64,
    m: [f64; MAX_DIM],
    cov: SymMat,
    dm: [f64; MAX_DIM],
    dcov: SymMat,
}

pub struct MeasureFamily {
    pub op: OperatorFamily,
    pub spec: MeasureSpec,
    /// Times at which the family may be queried.
    pub window: (f64, f64),
    pub warnings: Vec<String>,
    flow: Option<Vec<FlowNode>>,
    flow_t0: f64,
    flow_dt: f64,
    clouds: Mutex<HashMap<u64, Arc<Vec<Vec<f64>>>>>,
}

/// A single mu_t: either an explicit Gaussian with its quadrature rule
/// or a particle cloud averaged uniformly.
pub enum Measure {
    Gaussian { mean: Vec<f64>, cov: SymMat, gh_nodes: usize },
    Particles { cloud: Arc<Vec<Vec<f64>>> },
}

fn sym_lincomb(terms: &[(f64, &SymMat)]) -> SymMat {
    let d = terms[0].1.dim();
    let mut out = SymMat::zeros(d);
    for i in 0..d {
        for j in i..d {
            let mut v = 0.0;
            for (c, m) in terms {
                v += c * m.get(i, j);
            }
            out.set(i, j, v);
        }
    }
    out
}

/// A Sigma + Sigma A^T for row-major A.
fn sandwich(a: &[f64], s: &SymMat) -> SymMat {
    let d = s.dim();
    let mut out = SymMat::zeros(d);
    for i in 0..d {
        for j in i..d {
            let mut v = 0.0;
            for k in 0..d {
                v += a[i * d + k] * s.get(k, j) + s.get(i, k) * a[j * d + k];
            }
            out.set(i, j, v);
        }
    }
    out
}

impl MeasureFamily {
    /// Builds the family for audits inside `window`. `rate_hint` is the
    /// kernel's contraction exponent when known (negative); it only
    /// drives the insufficient-mixing warning.
    pub fn build(
        op: &OperatorFamily,
        spec: MeasureSpec,
        window: (f64, f64),
        rate_hint: Option<f64>,
    ) -> Result<MeasureFamily> {
        if !(window.0 <= window.1) {
            return Err(EvoError::invalid("empty audit window"));
        }
        let mut warnings = Vec::new();
        let pullback = match &spec {
            MeasureSpec::GaussianFlow { pullback, .. } => *pullback,
            MeasureSpec::Empirical { pullback, .. } => *pullback,
        };
        if pullback <= 0.0 {
            warnings.push(format!(
                "pullback horizon {pullback} gives no room between anchor and audit window; \
                 the family will remember its anchor state"
            ));
        }
        if let Some(rate) = rate_hint {
            if rate < 0.0 && pullback < 5.0 / rate.abs() {
                warnings.push(format!(
                    "pullback horizon {pullback} is under five relaxation times ({:.2})",
                    5.0 / rate.abs()
                ));
            }
        }
        let t_lo = (window.0 - 0.5).max(op.time_interval.0);
        let mut fam = MeasureFamily {
            op: op.clone(),
            spec,
            window,
            warnings,
            flow: None,
            flow_t0: t_lo,
            flow_dt: 0.0,
            clouds: Mutex::new(HashMap::new()),
        };
        if let MeasureSpec::GaussianFlow { ode_dt, .. } = fam.spec {
            fam.check_affine()?;
            let anchor = (window.1 + 1.0 + pullback).min(op.time_interval.1);
            let nodes = fam.integrate_flow(anchor, t_lo, ode_dt)?;
            fam.flow_t0 = nodes[0].t;
            fam.flow = Some(nodes);
            fam.flow_dt = ode_dt;
        }
        Ok(fam)
    }

    /// The Gaussian flow is exact only when the drift is affine in x and
    /// the diffusion does not depend on x; verify both by sampling.
    fn check_affine(&self) -> Result<()> {
        let d = self.op.dim;
        let (lo, hi) = self.window;
        let probes: Vec<f64> = vec![-3.0, -1.0, 0.0, 0.5, 2.0];
        for k in 0..5 {
            let t = lo + (hi - lo) * k as f64 / 4.0;
            let mut j0 = vec![0.0; d * d];
            self.op.drift_jacobian_at(t, &vec![0.0; d], &mut j0)?;
            let q0 = self.op.q_at(t, &vec![0.0; d])?;
            for &p in &probes {
                let x = vec![p; d];
                let mut j = vec![0.0; d * d];
                self.op.drift_jacobian_at(t, &x, &mut j)?;
                for (a, b) in j.iter().zip(&j0) {
                    if (a - b).abs() > 1e-6 * (1.0 + b.abs()) {
                        return Err(EvoError::invalid(
                            "gaussian-flow measure family needs an affine drift; use the \
                             empirical family",
                        ));
                    }
                }
                let q = self.op.q_at(t, &x)?;
                for i in 0..d {
                    for jj in i..d {
                        if (q.get(i, jj) - q0.get(i, jj)).abs() > 1e-10 {
                            return Err(EvoError::invalid(
                                "gaussian-flow measure family needs state-independent \
                                 diffusion; use the empirical family",
                            ));
                        }
                    }
                }
            }
        }
        Ok(())
    }

    /// d/dt of (mean, covariance) along the family: the moment equations
    /// of the Fokker-Planck flow, negated.
    fn flow_rhs(&self, t: f64, m: &[f64], cov: &SymMat) -> Result<([f64; MAX_DIM], SymMat)> {
        let d = self.op.dim;
        let mut dm = [0.0f64; MAX_DIM];
        self.op.b_at(t, &m[..d], &mut dm[..d])?;
        for v in dm[..d].iter_mut() {
            *v = -*v;
        }
        let mut a = vec![0.0; d * d];
        self.op.drift_jacobian_at(t, &m[..d], &mut a)?;
        let q = self.op.q_at(t, &m[..d])?;
        let dcov = sym_lincomb(&[(-1.0, &sandwich(&a, cov)), (-2.0, &q)]);
        Ok((dm, dcov))
    }

    /// Integrates the flow from the anchor at `t0` down to `t1` < t0
    /// (the stable direction) and returns the nodes in ascending time.
    fn integrate_flow(&self, t0: f64, t1: f64, dt: f64) -> Result<Vec<FlowNode>> {
        let d = self.op.dim;
        let n_steps = mc::step_count(t0 - t1, dt);
        let h = (t1 - t0) / n_steps as f64;
        let mut m = [0.0f64; MAX_DIM];
        // any SPD seed works: the flow forgets it across the pullback
        let mut cov = SymMat::scalar(d, 1.0);
        let mut nodes = Vec::with_capacity(n_steps + 1);
        for k in 0..=n_steps {
            let t = t0 + k as f64 * h;
            let (dm, dcov) = self.flow_rhs(t, &m, &cov)?;
            nodes.push(FlowNode { t, m, cov, dm, dcov });
            if k == n_steps {
                break;
            }
            let (k1m, k1c) = (dm, dcov);
            let mut m2 = m;
            for i in 0..d {
                m2[i] += 0.5 * h * k1m[i];
            }
            let c2 = sym_lincomb(&[(1.0, &cov), (0.5 * h, &k1c)]);
            let (k2m, k2c) = self.flow_rhs(t + 0.5 * h, &m2, &c2)?;
            let mut m3 = m;
            for i in 0..d {
                m3[i] += 0.5 * h * k2m[i];
            }
            let c3 = sym_lincomb(&[(1.0, &cov), (0.5 * h, &k2c)]);
            let (k3m, k3c) = self.flow_rhs(t + 0.5 * h, &m3, &c3)?;
            let mut m4 = m;
            for i in 0..d {
                m4[i] += h * k3m[i];
            }
            let c4 = sym_lincomb(&[(1.0, &cov), (h, &k3c)]);
            let (k4m, k4c) = self.flow_rhs(t + h, &m4, &c4)?;
            for i in 0..d {
                m[i] += h / 6.0 * (k1m[i] + 2.0 * k2m[i] + 2.0 * k3m[i] + k4m[i]);
            }
            cov = sym_lincomb(&[
                (1.0, &cov),
                (h / 6.0, &k1c),
                (h / 3.0, &k2c),
                (h / 3.0, &k3c),
                (h / 6.0, &k4c),
            ]);
            if !cov.is_finite() || cov.min_eigenvalue() <= 0.0 {
                return Err(EvoError::NotPositiveDefinite {
                    t,
                    x: vec![],
                    detail: "measure covariance flow left the SPD cone".into(),
                });
            }
        }
        nodes.reverse();
        Ok(nodes)
    }

    fn check_query_time(&self, t: f64) -> Result<()> {
        let (lo, hi) = self.window;
        if t < lo - 0.01 || t > hi + 1.0 {
            return Err(EvoError::OutsideTimeInterval { t, lo, hi });
        }
        Ok(())
    }

    /// mu_t.
    pub fn measure_at(&self, t: f64) -> Result<Measure> {
        self.check_query_time(t)?;
        match &self.spec {
            MeasureSpec::GaussianFlow { gh_nodes, .. } => {
                let nodes = self.flow.as_ref().unwrap();
                let d = self.op.dim;
                let n = nodes.len() - 1;
                let k = (((t - self.flow_t0) / (nodes[1].t - nodes[0].t)).floor() as isize)
                    .clamp(0, n as isize - 1) as usize;
                let (a, b) = (&nodes[k], &nodes[k + 1]);
                let h = b.t - a.t;
                let u = ((t - a.t) / h).clamp(0.0, 1.0);
                // cubic Hermite basis
                let h00 = (1.0 + 2.0 * u) * (1.0 - u) * (1.0 - u);
                let h10 = u * (1.0 - u) * (1.0 - u);
                let h01 = u * u * (3.0 - 2.0 * u);
                let h11 = u * u * (u - 1.0);
                let mean = (0..d)
                    .map(|i| {
                        h00 * a.m[i] + h10 * h * a.dm[i] + h01 * b.m[i] + h11 * h * b.dm[i]
                    })
                    .collect();
                let cov = sym_lincomb(&[
                    (h00, &a.cov),
                    (h10 * h, &a.dcov),
                    (h01, &b.cov),
                    (h11 * h, &b.dcov),
                ]);
                if cov.min_eigenvalue() <= 0.0 {
                    return Err(EvoError::NotPositiveDefinite {
                        t,
                        x: vec![],
                        detail: "interpolated measure covariance".into(),
                    });
                }
                Ok(Measure::Gaussian { mean, cov, gh_nodes: *gh_nodes })
            }
            MeasureSpec::Empirical { pullback, n_particles, dt, seed } => {
                if let Some(c) = self.clouds.lock().unwrap().get(&t.to_bits()) {
                    return Ok(Measure::Particles { cloud: c.clone() });
                }
                let anchor = (t + pullback.max(*dt)).min(self.op.time_interval.1);
                let x0 = vec![0.0; self.op.dim];
                let cloud = Arc::new(mc::terminal_cloud(
                    &self.op,
                    (*n_particles).max(1000),
                    *dt,
                    *seed,
                    anchor.max(t + *dt),
                    t,
                    &x0,
                )?);
                self.clouds.lock().unwrap().insert(t.to_bits(), cloud.clone());
                Ok(Measure::Particles { cloud })
            }
        }
    }
}

impl Measure {
    pub fn dim(&self) -> usize {
        match self {
            Measure::Gaussian { mean, .. } => mean.len(),
            Measure::Particles { cloud } => cloud[0].len(),
        }
    }

    fn rule(&self) -> Result<GaussianRule> {
        match self {
            Measure::Gaussian { mean, cov, gh_nodes } => GaussianRule::new(mean, cov, *gh_nodes),
            Measure::Particles { .. } => Err(EvoError::invalid("particle measure has no rule")),
        }
    }

    /// Integration abscissas: quadrature nodes or every particle.
    pub fn points(&self) -> Result<Vec<Vec<f64>>> {
        match self {
            Measure::Gaussian { .. } => Ok(self.rule()?.points()),
            Measure::Particles { cloud } => Ok(cloud.as_ref().clone()),
        }
    }

    /// int f dmu with an error estimate (half-rule comparison for the
    /// quadrature, standard error for particles).
    pub fn integrate(&self, f: &dyn Fn(&[f64]) -> f64) -> Result<(f64, f64)> {
        match self {
            Measure::Gaussian { mean, cov, gh_nodes } => {
                let full = GaussianRule::new(mean, cov, *gh_nodes)?.integrate(f);
                let half = GaussianRule::new(mean, cov, (*gh_nodes / 2).max(2))?.integrate(f);
                Ok((full, (full - half).abs() + 1e-15 * (1.0 + full.abs())))
            }
            Measure::Particles { cloud } => {
                let n = cloud.len() as f64;
                let mut sum = 0.0;
                let mut sumsq = 0.0;
                for x in cloud.iter() {
                    let v = f(x);
                    sum += v;
                    sumsq += v * v;
                }
                let mean = sum / n;
                let var = ((sumsq - n * mean * mean) / (n - 1.0)).max(0.0);
                Ok((mean, (var / n).sqrt()))
            }
        }
    }

    /// Weighted combination of values tabulated at `points()` order,
    /// with per-value standard errors folded into the estimate error.
    pub fn combine(&self, values: &[f64], ses: &[f64]) -> Result<(f64, f64)> {
        match self {
            Measure::Gaussian { .. } => {
                let ws = self.rule()?.weights();
                if ws.len() != values.len() {
                    return Err(EvoError::invalid("tabulated values do not match the rule"));
                }
                let mut v = 0.0;
                let mut e = 0.0;
                for i in 0..ws.len() {
                    v += ws[i] * values[i];
                    e += ws[i] * ses[i];
                }
                Ok((v, e))
            }
            Measure::Particles { .. } => {
                let n = values.len() as f64;
                let mean = values.iter().sum::<f64>() / n;
                let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>()
                    / (n - 1.0).max(1.0);
                let se_inner = ses.iter().sum::<f64>() / n;
                Ok((mean, (var / n).sqrt() + se_inner))
            }
        }
    }

    pub fn mean_vector(&self) -> Vec<f64> {
        match self {
            Measure::Gaussian { mean, .. } => mean.clone(),
            Measure::Particles { cloud } => {
                let d = self.dim();
                let mut m = vec![0.0; d];
                for x in cloud.iter() {
                    for i in 0..d {
                        m[i] += x[i];
                    }
                }
                for v in &mut m {
                    *v /= cloud.len() as f64;
                }
                m
            }
        }
    }

    pub fn covariance(&self) -> SymMat {
        match self {
            Measure::Gaussian { cov, .. } => *cov,
            Measure::Particles { cloud } => {
                let d = self.dim();
                let m = self.mean_vector();
                let mut c = SymMat::zeros(d);
                for x in cloud.iter() {
                    for i in 0..d {
                        for j in i..d {
                            c.set(i, j, c.get(i, j) + (x[i] - m[i]) * (x[j] - m[j]));
                        }
                    }
                }
                c.scale(1.0 / (cloud.len() as f64 - 1.0))
            }
        }
    }

    /// log density, defined for the Gaussian variant.
    pub fn log_density(&self, x: &[f64]) -> Result<f64> {
        match self {
            Measure::Gaussian { mean, cov, .. } => {
                let d = mean.len();
                let chol = cov
                    .cholesky()
                    .map_err(|_| EvoError::invalid("degenerate covariance"))?;
                let mut z = [0.0f64; MAX_DIM];
                forward_solve(&chol, mean, x, &mut z[..d]);
                let mut logdet = 0.0;
                for i in 0..d {
                    logdet += 2.0 * chol.get(i, i).ln();
                }
                let q: f64 = z[..d].iter().map(|v| v * v).sum();
                Ok(-0.5 * (q + logdet + d as f64 * (2.0 * std::f64::consts::PI).ln()))
            }
            Measure::Particles { .. } => {
                Err(EvoError::invalid("particle measure has no density"))
            }
        }
    }

    /// Deterministic draws: fresh Gaussian samples, or the leading
    /// particles (already an exchangeable sample of the measure).
    pub fn sample_n(&self, seed: u64, count: usize) -> Vec<Vec<f64>> {
        match self {
            Measure::Gaussian { mean, cov, .. } => {
                let d = mean.len();
                let chol = cov.cholesky().expect("SPD checked at construction");
                let mut out = Vec::with_capacity(count);
                for i in 0..count {
                    let mut rng = substream(seed, 1, i as u64);
                    let mut z = [0.0f64; MAX_DIM];
                    for v in z[..d].iter_mut() {
                        *v = rng.sample(StandardNormal);
                    }
                    let mut lz = [0.0f64; MAX_DIM];
                    chol.mul_vec(&z[..d], &mut lz[..d]);
                    out.push((0..d).map(|i| mean[i] + lz[i]).collect());
                }
                out
            }
            Measure::Particles { cloud } => {
                cloud.iter().take(count).cloned().collect()
            }
        }
    }

    /// mu(|x| > r) with an error estimate. In dimension one the Gaussian
    /// tail is exact; in higher dimension a per-axis union bound stands
    /// in (conservative: never understates the tail).
    pub fn tail_mass(&self, r: f64) -> (f64, f64) {
        match self {
            Measure::Gaussian { mean, cov, .. } => {
                let d = mean.len();
                if d == 1 {
                    let sd = cov.get(0, 0).sqrt();
                    let up = 0.5 * libm::erfc((r - mean[0]) / (sd * std::f64::consts::SQRT_2));
                    let lo = 0.5 * libm::erfc((r + mean[0]) / (sd * std::f64::consts::SQRT_2));
                    (up + lo, 1e-14)
                } else {
                    let mut total = 0.0;
                    let rd = r / (d as f64).sqrt();
                    for i in 0..d {
                        let sd = cov.get(i, i).sqrt();
                        total += 0.5
                            * libm::erfc((rd - mean[i]) / (sd * std::f64::consts::SQRT_2))
                            + 0.5 * libm::erfc((rd + mean[i]) / (sd * std::f64::consts::SQRT_2));
                    }
                    (total.min(1.0), 1e-14)
                }
            }
            Measure::Particles { cloud } => {
                let n = cloud.len() as f64;
                let outside = cloud
                    .iter()
                    .filter(|x| x.iter().map(|v| v * v).sum::<f64>().sqrt() > r)
                    .count() as f64;
                let p = outside / n;
                (p, (p * (1.0 - p) / n).sqrt() + 1.0 / n)
            }
        }
    }

    /// Smallest radius whose tail mass is at most `deficit` over this
    /// single measure.
    fn covering_radius(&self, deficit: f64) -> f64 {
        match self {
            Measure::Gaussian { .. } => {
                let mut lo = 0.0f64;
                let mut hi = 1.0f64;
                while self.tail_mass(hi).0 > deficit && hi < 1e6 {
                    hi *= 2.0;
                }
                for _ in 0..80 {
                    let mid = 0.5 * (lo + hi);
                    if self.tail_mass(mid).0 > deficit {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
                hi
            }
            Measure::Particles { cloud } => {
                let mut norms: Vec<f64> = cloud
                    .iter()
                    .map(|x| x.iter().map(|v| v * v).sum::<f64>().sqrt())
                    .collect();
                norms.sort_by(|a, b| a.partial_cmp(b).unwrap());
                let keep = ((1.0 - deficit) * norms.len() as f64).ceil() as usize;
                norms[keep.min(norms.len() - 1)]
            }
        }
    }
}

fn forward_solve(l: &Lower, mean: &[f64], x: &[f64], z: &mut [f64]) {
    for i in 0..z.len() {
        let mut v = x[i] - mean[i];
        for j in 0..i {
            v -= l.get(i, j) * z[j];
        }
        z[i] = v / l.get(i, i);
    }
}

/// (int |f|^p dmu_t)^{1/p}.
pub fn lp_norm(fam: &MeasureFamily, t: f64, f: &dyn ScalarField, p: f64) -> Result<(f64, f64)> {
    if !(p >= 1.0) || !p.is_finite() {
        return Err(EvoError::invalid(format!("lp_norm needs p in [1, inf), got {p}")));
    }
    let mu = fam.measure_at(t)?;
    let (ip, err) = mu.integrate(&|x| f.value(x).abs().powf(p))?;
    let ip = ip.max(0.0);
    let norm = ip.powf(1.0 / p);
    let derr = if ip > 0.0 { err * ip.powf(1.0 / p - 1.0) / p } else { err.powf(1.0 / p) };
    Ok((norm, derr))
}

// ---------------------------------------------------------------------------
// Audits.

/// int G(t,s)f dmu_t = int f dmu_s.
pub fn check_invariance(
    op: &OperatorFamily,
    backend: &crate::backend::EvolutionBackend,
    fam: &MeasureFamily,
    t: f64,
    s: f64,
    field: &crate::fields::NamedField,
) -> Result<AuditRecord> {
    let mu_t = fam.measure_at(t)?;
    let mu_s = fam.measure_at(s)?;
    // Particle measures under the path sampler: integrating G f over
    // every particle would multiply two Monte Carlo costs, so a leading
    // subsample (still an exchangeable draw from mu_t) stands in and the
    // reported error grows accordingly.
    let all_points = mu_t.points()?;
    let subsampled = matches!(
        (&mu_t, backend),
        (Measure::Particles { .. }, crate::backend::EvolutionBackend::MonteCarlo { .. })
    ) && all_points.len() > 256;
    let points: Vec<Vec<f64>> =
        if subsampled { all_points[..256].to_vec() } else { all_points };
    let gf = crate::backend::g_apply(op, backend, t, s, field.field.as_ref(), &points)?;
    let (lhs, lhs_err) = match (&mu_t, subsampled) {
        (Measure::Particles { .. }, true) => {
            let sub = Measure::Particles { cloud: Arc::new(points.clone()) };
            sub.combine(&gf.values, &gf.std_errors)?
        }
        _ => mu_t.combine(&gf.values, &gf.std_errors)?,
    };
    let (rhs, rhs_err) = mu_s.integrate(&|x| field.field.value(x))?;
    // The lattice route carries no per-point error bars; its bias is the
    // scheme truncation, budgeted a priori at the h^2 + dt^2 order.
    let floor = match backend {
        crate::backend::EvolutionBackend::Grid { radius, n_cells, dt, .. } => {
            let h = 2.0 * radius / *n_cells as f64;
            (h * h / 8.0 + dt * dt).max(1e-6)
        }
        _ => 1e-6,
    };
    let slack = 3.0 * (lhs_err + rhs_err) + floor * (1.0 + rhs.abs());
    let mut rec = AuditRecord::inequality(
        "invariance",
        params(&[
            ("backend", json!(backend.label())),
            ("measure", json!(fam.spec.label())),
            ("field", json!(field.name)),
            ("t", json!(t)),
            ("s", json!(s)),
        ]),
        (lhs - rhs).abs(),
        0.0,
        slack,
    );
    if subsampled {
        rec = rec.with_note("outer integral on a 256-particle subsample");
    }
    Ok(rec)
}

/// d/dr int f(r,.) dmu_r = int D_r f dmu_r - int A(r)f dmu_r.
pub fn check_measure_derivative(
    op: &OperatorFamily,
    fam: &MeasureFamily,
    f: &dyn TimeField,
    r_grid: &[f64],
) -> Result<AuditRecord> {
    if r_grid.is_empty() {
        return Err(EvoError::invalid("empty r grid"));
    }
    let h = 1e-4;
    let mut worst: Option<(f64, f64, f64, f64, f64)> = None; // (r, lhs, rhs, qerr, score)
    for &r in r_grid {
        let phi = |u: f64| -> Result<(f64, f64)> {
            let mu = fam.measure_at(u)?;
            mu.integrate(&|x| f.value(u, x))
        };
        let (fp, ep) = phi(r + h)?;
        let (fm, em) = phi(r - h)?;
        let lhs = (fp - fm) / (2.0 * h);
        let mu = fam.measure_at(r)?;
        let (dt_term, e1) = mu.integrate(&|x| f.time_derivative(r, x))?;
        let slice = TimeSlice { f, t: r };
        let (op_term, e2) = mu.integrate(&|x| {
            apply_operator(op, &slice, r, x).unwrap_or(f64::NAN)
        })?;
        if !op_term.is_finite() {
            return Err(EvoError::NonFinite { what: "operator integrand", t: r, x: vec![] });
        }
        let rhs = dt_term - op_term;
        let qerr = (ep + em) / (2.0 * h) + e1 + e2;
        let gap = (lhs - rhs).abs();
        let score = gap - (5.0 * qerr).max(1e-4);
        if worst.map_or(true, |w| score > w.4) {
            worst = Some((r, lhs, rhs, qerr, score));
        }
    }
    let (r, lhs, rhs, qerr, _) = worst.unwrap();
    let slack = (5.0 * qerr).max(1e-4);
    Ok(AuditRecord::inequality(
        "measure-derivative",
        params(&[("measure", json!(fam.spec.label())), ("r", json!(r)), ("n_grid", json!(r_grid.len()))]),
        (lhs - rhs).abs(),
        0.0,
        slack,
    ))
}

struct EntropyParts {
    entropy: f64,
    norm_pow: f64,
    dirichlet: f64,
    err: f64,
}

fn entropy_parts_on_points(
    points: &[Vec<f64>],
    weights: &[f64],
    f: &dyn ScalarField,
    q: f64,
) -> EntropyParts {
    let mut entropy = 0.0;
    let mut norm_pow = 0.0;
    let mut dirichlet = 0.0;
    let mut g = [0.0f64; MAX_DIM];
    for (x, &w) in points.iter().zip(weights) {
        let v = f.value(x);
        if v.abs() < LSI_ZERO_CUTOFF {
            continue;
        }
        let av = v.abs();
        entropy += w * av.powf(q) * av.ln();
        norm_pow += w * av.powf(q);
        f.gradient(x, &mut g[..x.len()]);
        let g2: f64 = g[..x.len()].iter().map(|u| u * u).sum();
        dirichlet += w * av.powf(q - 2.0) * g2;
    }
    EntropyParts { entropy, norm_pow, dirichlet, err: 0.0 }
}

fn entropy_parts(mu: &Measure, f: &dyn ScalarField, q: f64) -> Result<EntropyParts> {
    match mu {
        Measure::Gaussian { mean, cov, gh_nodes } => {
            let full_rule = GaussianRule::new(mean, cov, *gh_nodes)?;
            let mut full =
                entropy_parts_on_points(&full_rule.points(), &full_rule.weights(), f, q);
            let half_rule = GaussianRule::new(mean, cov, (*gh_nodes / 2).max(2))?;
            let half =
                entropy_parts_on_points(&half_rule.points(), &half_rule.weights(), f, q);
            full.err = (full.entropy - half.entropy).abs()
                + (full.norm_pow - half.norm_pow).abs()
                + (full.dirichlet - half.dirichlet).abs()
                + 1e-14;
            Ok(full)
        }
        Measure::Particles { cloud } => {
            let w = 1.0 / cloud.len() as f64;
            let weights = vec![w; cloud.len()];
            let mut parts = entropy_parts_on_points(cloud, &weights, f, q);
            // crude split-half error gauge for the sampled measure
            let hn = cloud.len() / 2;
            let wh = vec![1.0 / hn as f64; hn];
            let half = entropy_parts_on_points(&cloud[..hn], &wh, f, q);
            parts.err = (parts.entropy - half.entropy).abs()
                + (parts.norm_pow - half.norm_pow).abs()
                + (parts.dirichlet - half.dirichlet).abs()
                + 1e-14;
            Ok(parts)
        }
    }
}

/// int |f|^q log|f| dmu <= ||f||_q^q log||f||_q + K q int |f|^{q-2}|grad f|^2.
pub fn check_logsobolev(
    fam: &MeasureFamily,
    t: f64,
    field: &crate::fields::NamedField,
    q: f64,
    big_k: f64,
) -> Result<AuditRecord> {
    if !(q > 1.0) {
        return Err(EvoError::invalid(format!("log-Sobolev exponent must exceed 1, got {q}")));
    }
    let mu = fam.measure_at(t)?;
    let parts = entropy_parts(&mu, field.field.as_ref(), q)?;
    let norm_term =
        if parts.norm_pow > 0.0 { parts.norm_pow * parts.norm_pow.ln() / q } else { 0.0 };
    let rhs = norm_term + big_k * q * parts.dirichlet;
    let slack = 3.0 * (1.0 + big_k * q) * parts.err + 1e-9 * (1.0 + rhs.abs());
    Ok(AuditRecord::inequality(
        "log-sobolev",
        params(&[
            ("measure", json!(fam.spec.label())),
            ("field", json!(field.name)),
            ("t", json!(t)),
            ("q", json!(q)),
            ("K", json!(big_k)),
        ]),
        parts.entropy,
        rhs,
        slack,
    ))
}

/// Largest entropy/Dirichlet ratio over a family of witnesses: a lower
/// bound for any constant K satisfying the inequality.
pub fn estimate_logsobolev_constant(
    fam: &MeasureFamily,
    t: f64,
    witnesses: &[Arc<dyn ScalarField>],
    q: f64,
) -> Result<f64> {
    if witnesses.is_empty() {
        return Err(EvoError::invalid("empty witness family"));
    }
    if !(q > 1.0) {
        return Err(EvoError::invalid("log-Sobolev exponent must exceed 1"));
    }
    let mu = fam.measure_at(t)?;
    let mut best = 0.0f64;
    for f in witnesses {
        let parts = entropy_parts(&mu, f.as_ref(), q)?;
        let norm_term =
            if parts.norm_pow > 0.0 { parts.norm_pow * parts.norm_pow.ln() / q } else { 0.0 };
        let gap = parts.entropy - norm_term;
        // a gap at quadrature rounding scale over a floored Dirichlet
        // term would turn noise into a spurious ratio
        if gap.abs() <= 1e-12 * (1.0 + parts.entropy.abs() + parts.norm_pow.abs()) {
            continue;
        }
        let ratio = gap / (q * parts.dirichlet.max(DIRICHLET_FLOOR));
        best = best.max(ratio);
    }
    Ok(best)
}

/// Entropy <= nu(sigma)/p ||f||_p^p + sigma p Dirichlet, per sigma.
pub fn check_lsi_epsilon(
    fam: &MeasureFamily,
    t: f64,
    field: &crate::fields::NamedField,
    p: f64,
    sigma_grid: &[f64],
    nu: &dyn Fn(f64) -> f64,
) -> Result<AuditRecord> {
    if sigma_grid.is_empty() {
        return Err(EvoError::invalid("empty sigma grid"));
    }
    if sigma_grid.iter().any(|&s| !(s > 0.0)) {
        return Err(EvoError::invalid("sigma must be positive"));
    }
    let mu = fam.measure_at(t)?;
    let parts = entropy_parts(&mu, field.field.as_ref(), p)?;
    let norm_term =
        if parts.norm_pow > 0.0 { parts.norm_pow * parts.norm_pow.ln() / p } else { 0.0 };
    let lhs = parts.entropy - norm_term;
    let mut worst: Option<(f64, f64, f64)> = None; // (sigma, rhs, slack)
    for &sigma in sigma_grid {
        let rhs = nu(sigma) / p * parts.norm_pow + sigma * p * parts.dirichlet;
        let slack = 3.0 * (1.0 + nu(sigma) / p + sigma * p) * parts.err + 1e-9 * (1.0 + rhs.abs());
        if worst.map_or(true, |w| rhs + slack < w.1 + w.2) {
            worst = Some((sigma, rhs, slack));
        }
    }
    let (sigma, rhs, slack) = worst.unwrap();
    Ok(AuditRecord::inequality(
        "lsi-epsilon",
        params(&[
            ("measure", json!(fam.spec.label())),
            ("field", json!(field.name)),
            ("t", json!(t)),
            ("p", json!(p)),
            ("sigma", json!(sigma)),
            ("n_sigma", json!(sigma_grid.len())),
        ]),
        lhs,
        rhs,
        slack,
    ))
}

/// For eps in {0.1, 0.01}: some radius in the grid must hold all masses
/// but eps, uniformly over the time grid.
pub fn check_tightness(
    fam: &MeasureFamily,
    t_grid: &[f64],
    radius_grid: &[f64],
) -> Result<Vec<AuditRecord>> {
    if t_grid.is_empty() || radius_grid.is_empty() {
        return Err(EvoError::invalid("empty tightness grid"));
    }
    let measures: Vec<Measure> =
        t_grid.iter().map(|&t| fam.measure_at(t)).collect::<Result<_>>()?;
    let mut radii: Vec<f64> = radius_grid.to_vec();
    radii.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut out = Vec::new();
    for eps in [0.1, 0.01] {
        let mut found = None;
        let mut best = f64::INFINITY;
        let mut best_err = 0.0;
        for &r in &radii {
            let mut sup = 0.0f64;
            let mut err = 0.0f64;
            for mu in &measures {
                let (tail, e) = mu.tail_mass(r);
                if tail > sup {
                    sup = tail;
                    err = e;
                }
            }
            if sup < best {
                best = sup;
                best_err = err;
            }
            if sup + 3.0 * err < eps {
                found = Some((r, sup, err));
                break;
            }
        }
        let rec = match found {
            Some((r, sup, err)) => AuditRecord::inequality(
                "tightness",
                params(&[
                    ("measure", json!(fam.spec.label())),
                    ("epsilon", json!(eps)),
                    ("radius", json!(r)),
                    ("n_times", json!(t_grid.len())),
                ]),
                sup,
                eps,
                3.0 * err,
            ),
            None => AuditRecord::inequality(
                "tightness",
                params(&[
                    ("measure", json!(fam.spec.label())),
                    ("epsilon", json!(eps)),
                    ("radius", json!(*radii.last().unwrap())),
                    ("n_times", json!(t_grid.len())),
                ]),
                best,
                eps,
                3.0 * best_err,
            ),
        };
        out.push(rec);
    }
    Ok(out)
}

/// Smallest radius r with sup over the time grid of mu_t(|x| > r) at
/// most `deficit`. Feeds the smoothing constants that need a ball
/// carrying most of every measure.
pub fn tightness_radius(fam: &MeasureFamily, t_grid: &[f64], deficit: f64) -> Result<f64> {
    if !(deficit > 0.0 && deficit < 1.0) {
        return Err(EvoError::invalid("deficit must sit in (0,1)"));
    }
    let mut r = 0.0f64;
    for &t in t_grid {
        let mu = fam.measure_at(t)?;
        r = r.max(mu.covering_radius(deficit));
    }
    Ok(r)
}
