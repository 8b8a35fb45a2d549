//! Audits of the regularization and stability estimates for the
//! nonlinear evolution operator: integrability gain along the measure
//! flow with an explicit exponent schedule, the supercontractive variant
//! fed by the epsilon-log-Sobolev family, pointwise Harnack bounds,
//! sup-norm smoothing from L^p data, and exponential decay of the null
//! solution.
//!
//! Every constant that the theory only claims to exist follows one
//! protocol: fit it on a declared calibration run, freeze it, validate
//! on disjoint parameters, and report both in the record. Constants the
//! theory writes out explicitly (exponent schedules, omega rates, the
//! c4..c7 chain) are evaluated verbatim and never fitted.

use std::sync::atomic::{AtomicUsize, Ordering};

use serde_json::json;

use crate::backend::{g_apply, EvolutionBackend};
use crate::error::EvoError;
use crate::fields::ScalarField;
use crate::linalg::SymMat;
use crate::measures::{tightness_radius, MeasureFamily};
use crate::operator::OperatorFamily;
use crate::report::{params, AuditRecord, AuditStatus};
use crate::semilinear::{MildSolution, Nonlinearity};
use crate::Result;

/// Profile growth across the widened point set beyond this factor means
/// the payoff sup is not stabilizing in x.
const GROWTH_LIMIT: f64 = 1.5;

/// Constant pack shared by the integrability and stability audits.
#[derive(Clone, Debug)]
pub struct HyperParams {
    /// Data integrability exponent; at least the benchmark's p0.
    pub p: f64,
    /// Exponent-schedule damping; the schedule grows like
    /// (p-1)/gamma * exp(kappa0 t / K).
    pub gamma: f64,
    /// Ellipticity floor of the diffusion.
    pub kappa0: f64,
    /// Log-Sobolev constant of the measure family.
    pub k_lsi: f64,
    /// Sign-condition coefficients of the reaction term.
    pub xi0: f64,
    pub xi1: f64,
    pub xi2: f64,
    /// p = 1 gradient-estimate exponent; exists when the diffusion is
    /// bounded and x-independent, and drives the Harnack weight.
    pub sigma1: Option<f64>,
}

impl HyperParams {
    pub fn for_benchmark(b: &crate::benchmarks::Benchmark, p: f64, gamma: f64) -> Self {
        HyperParams {
            p,
            gamma,
            kappa0: b.ell.kappa0,
            k_lsi: b.lsi_k,
            xi0: b.nonlinearity.xi0,
            xi1: b.nonlinearity.xi1,
            xi2: b.nonlinearity.xi2,
            sigma1: Some(b.sigma1),
        }
    }
}

/// Exponent the solution has gained by time t when the data sat in L^p
/// at time s: (p-1)(e^{kappa0 (t-s)/K} - 1)/gamma + p.
pub fn hyper_exponent(pr: &HyperParams, t: f64, s: f64) -> f64 {
    let e = ((pr.kappa0 / pr.k_lsi) * (t - s)).exp();
    (pr.p - 1.0) * (e - 1.0) / pr.gamma + pr.p
}

/// Growth rate xi1 + (xi2^+)^2 sigma / ((sigma-1)(p-1) kappa0). A
/// non-positive xi2 kills the quadratic term and any sigma (even 1)
/// is admissible; otherwise the pole at sigma = 1 is fenced with a
/// 1e-6 floor.
pub fn omega_rate(pr: &HyperParams, sigma: f64) -> f64 {
    let xi2p = pr.xi2.max(0.0);
    if xi2p == 0.0 {
        return pr.xi1;
    }
    let s = sigma.max(1.0 + 1e-6);
    pr.xi1 + xi2p * xi2p * s / ((s - 1.0) * (pr.p - 1.0) * pr.kappa0)
}

/// Time shift epsilon with p_{gamma'}(t - epsilon) = p_gamma(t): the
/// schedule reaches the same exponent a little earlier under the
/// smaller damping gamma'.
pub fn epsilon_shift(pr: &HyperParams, t: f64, s: f64) -> f64 {
    let e = ((pr.kappa0 / pr.k_lsi) * (t - s)).exp();
    pr.k_lsi / (2.0 * pr.kappa0) * (pr.gamma * e / (pr.gamma + e - 1.0)).ln()
}

/// The damping gamma' matching the shifted schedule; at least
/// sqrt(gamma) for every horizon.
pub fn gamma_prime(pr: &HyperParams, t: f64, s: f64) -> f64 {
    let rate = pr.kappa0 / pr.k_lsi;
    let e = (rate * (t - s)).exp();
    let eps = epsilon_shift(pr, t, s);
    let e_shift = (rate * (t - s - eps)).exp();
    pr.gamma * (e_shift - 1.0) / (e - 1.0)
}

/// Structural identities of the exponent schedule: the shifted schedule
/// reproduces p_gamma(t) to 1e-12, gamma' dominates sqrt(gamma), the
/// schedule is increasing in t and decreasing in gamma, and the omega
/// rate never increases in sigma.
pub fn check_exponent_chain(kappa0: f64, k_lsi: f64, p: f64) -> AuditRecord {
    let gammas = [1.2, 1.5, 2.0, 4.0, 9.0];
    let taus = [0.05, 0.25, 0.5, 1.0, 2.0, 4.0];
    let mut worst_identity = 0.0f64;
    let mut chain_ok = true;
    let mut note = String::new();

    for &g in &gammas {
        for &tau in &taus {
            let pr = HyperParams {
                p,
                gamma: g,
                kappa0,
                k_lsi,
                xi0: 0.0,
                xi1: 0.0,
                xi2: 1.0,
                sigma1: None,
            };
            let eps = epsilon_shift(&pr, tau, 0.0);
            if !(eps > 0.0 && eps < tau) {
                chain_ok = false;
                note = format!("epsilon = {eps} escapes (0, {tau}) at gamma = {g}");
            }
            let gp = gamma_prime(&pr, tau, 0.0);
            if gp + 1e-9 * (1.0 + gp) < g.sqrt() {
                chain_ok = false;
                note = format!("gamma' = {gp} undershoots sqrt({g})");
            }
            let shifted = HyperParams { gamma: gp, ..pr.clone() };
            let target = hyper_exponent(&pr, tau, 0.0);
            // relative gap: the schedule reaches e^{16}-sized values on
            // this grid, far past what an absolute 1e-12 can resolve.
            let gap = (hyper_exponent(&shifted, tau - eps, 0.0) - target).abs() / target;
            worst_identity = worst_identity.max(gap);

            // schedule monotone in t, decreasing in gamma, anchored at p.
            if hyper_exponent(&pr, tau + 0.1, 0.0) <= hyper_exponent(&pr, tau, 0.0) {
                chain_ok = false;
                note = format!("schedule not increasing at tau = {tau}, gamma = {g}");
            }
            let wider = HyperParams { gamma: g * 2.0, ..pr.clone() };
            if hyper_exponent(&wider, tau, 0.0) >= hyper_exponent(&pr, tau, 0.0) {
                chain_ok = false;
                note = format!("schedule not decreasing in gamma at tau = {tau}");
            }
            if (hyper_exponent(&pr, 0.0, 0.0) - p).abs() > 1e-14 {
                chain_ok = false;
                note = "schedule does not anchor at p".into();
            }
            if omega_rate(&pr, 2.0) + 1e-12 < omega_rate(&pr, 3.0) {
                chain_ok = false;
                note = "omega rate increases in sigma".into();
            }
        }
    }

    let mut rec = AuditRecord::inequality(
        "hyper-exponent-chain",
        params(&[
            ("p", json!(p)),
            ("kappa0", json!(kappa0)),
            ("K", json!(k_lsi)),
            ("n_gamma", json!(gammas.len())),
            ("n_tau", json!(taus.len())),
        ]),
        worst_identity,
        0.0,
        1e-12,
    );
    if !chain_ok {
        rec.pass = false;
        rec.status = AuditStatus::Fail;
        rec = rec.with_note(&note);
    }
    rec
}

/// L^p norm of the solution slice at time t (or of its x-derivative)
/// under mu_t, with the quadrature error propagated through the 1/p
/// root.
fn solution_lp(
    sol: &MildSolution,
    fam: &MeasureFamily,
    t: f64,
    p: f64,
    grad: bool,
) -> Result<(f64, f64)> {
    let mu = fam.measure_at(t)?;
    let eval = |x: &[f64]| {
        let v = if grad { sol.x_deriv(t, x[0]) } else { sol.value(t, x[0]) };
        v.abs().powf(p)
    };
    let (integral, err) = mu.integrate(&eval)?;
    let i = integral.max(0.0);
    let norm = i.powf(1.0 / p);
    let se = if i > err && i > 0.0 { norm * err / (p * i) } else { err.abs().powf(1.0 / p) };
    Ok((norm, se))
}

/// ||N(t,s)f||_{L^{p_gamma(t)}(mu_t)} <= e^{omega_{p,gamma}(t-s)}
/// (||f||_{L^p(mu_s)} + xi0 (t-s)), one record per audit time.
pub fn check_hypercontractivity(
    sol: &MildSolution,
    fam: &MeasureFamily,
    pr: &HyperParams,
    t_grid: &[f64],
) -> Result<Vec<AuditRecord>> {
    if !(pr.gamma > 1.0) {
        return Err(EvoError::invalid("the exponent schedule needs gamma > 1"));
    }
    let omega = omega_rate(pr, pr.gamma);
    let (fnorm, fse) = solution_lp(sol, fam, sol.s, pr.p, false)?;
    let mut out = Vec::new();
    for &t in t_grid {
        if !(t > sol.s) {
            return Err(EvoError::invalid(format!("audit time {t} not past the start {}", sol.s)));
        }
        let tau = t - sol.s;
        let pe = hyper_exponent(pr, t, sol.s);
        let (lhs, lse) = solution_lp(sol, fam, t, pe, false)?;
        let growth = (omega * tau).exp();
        let rhs = growth * (fnorm + pr.xi0 * tau);
        let slack = 3.0 * (lse + growth * fse) + 1e-6 * (1.0 + rhs.abs());
        out.push(AuditRecord::inequality(
            "hypercontractivity",
            params(&[
                ("nonlinearity", json!(sol.nonlinearity.clone())),
                ("f", json!(sol.f_name.clone())),
                ("t", json!(t)),
                ("p", json!(pr.p)),
                ("gamma", json!(pr.gamma)),
                ("p_t", json!(pe)),
                ("omega", json!(omega)),
                ("measure", json!(fam.spec.label())),
            ]),
            lhs,
            rhs,
            slack,
        ));
    }
    Ok(out)
}

/// Gradient companion of the exponent schedule. The rate is the omega
/// at sqrt(gamma) but the constant in front is only claimed to exist
/// with a (t-s)^{-1/2} blow-up, so the audit is structural: fit the
/// single constant c0_hat on the calibration grid, freeze it, and
/// assert the profile on the disjoint validation grid.
pub fn check_gradient_hyper(
    sol: &MildSolution,
    fam: &MeasureFamily,
    pr: &HyperParams,
    calibration: &[f64],
    validation: &[f64],
) -> Result<Vec<AuditRecord>> {
    if calibration.is_empty() || validation.is_empty() {
        return Err(EvoError::invalid("calibration and validation grids must be non-empty"));
    }
    let omega = omega_rate(pr, pr.gamma.sqrt());
    let (fnorm, fse) = solution_lp(sol, fam, sol.s, pr.p, false)?;
    let denom = |tau: f64| {
        let profile = 1.0 + tau.powf(-0.5);
        profile * ((omega * tau).exp() * (fnorm + pr.xi0 * tau) + pr.xi0)
    };

    let mut c0_hat = 0.0f64;
    for &t in calibration {
        let tau = t - sol.s;
        if !(tau > 0.0) {
            return Err(EvoError::invalid("calibration time not past the start"));
        }
        let pe = hyper_exponent(pr, t, sol.s);
        let (lhs, _) = solution_lp(sol, fam, t, pe, true)?;
        c0_hat = c0_hat.max(lhs / denom(tau));
    }

    let mut out = Vec::new();
    for &t in validation {
        let tau = t - sol.s;
        if !(tau > 0.0) {
            return Err(EvoError::invalid("validation time not past the start"));
        }
        let pe = hyper_exponent(pr, t, sol.s);
        let (lhs, lse) = solution_lp(sol, fam, t, pe, true)?;
        let rhs = c0_hat * denom(tau);
        let slack = 3.0 * (lse + c0_hat * (1.0 + tau.powf(-0.5)) * fse) + 1e-6 * (1.0 + rhs.abs());
        out.push(
            AuditRecord::inequality(
                "gradient-hyper",
                params(&[
                    ("f", json!(sol.f_name.clone())),
                    ("t", json!(t)),
                    ("p", json!(pr.p)),
                    ("gamma", json!(pr.gamma)),
                    ("p_t", json!(pe)),
                    ("omega_sqrt_gamma", json!(omega)),
                    ("c0_hat", json!(c0_hat)),
                    ("calibration", json!(calibration)),
                ]),
                lhs,
                rhs,
                slack,
            )
            .with_note("c0_hat frozen on the calibration grid; profile c0 (1 + tau^{-1/2})"),
        );
    }
    Ok(out)
}

/// omega-tilde and the explicit constant of the q-norm bound fed by the
/// epsilon-log-Sobolev family nu.
fn super_c2(pr: &HyperParams, q: f64, nu: &dyn Fn(f64) -> f64, r: f64) -> f64 {
    let omega_t = pr.xi1 + 2.0 * pr.xi2.max(0.0).powi(2) / (pr.kappa0 * (pr.p - 1.0));
    let sigma = pr.kappa0 * r / (2.0 * ((q - 1.0).ln() - (pr.p - 1.0).ln()));
    (omega_t * r + (1.0 / pr.p - 1.0 / q) * nu(sigma)).exp()
}

/// ||N(t,s)f||_{L^q(mu_t)} <= c2(t-s)(||f||_{L^p(mu_s)} + xi0 (t-s))
/// for any q > p, straight from the epsilon-log-Sobolev family.
pub fn check_supercontractivity(
    sol: &MildSolution,
    fam: &MeasureFamily,
    pr: &HyperParams,
    q: f64,
    nu: &dyn Fn(f64) -> f64,
    t_grid: &[f64],
) -> Result<Vec<AuditRecord>> {
    if !(q > pr.p) {
        return Err(EvoError::invalid(format!(
            "the target exponent must exceed the data exponent: q = {q}, p = {}",
            pr.p
        )));
    }
    if !(pr.p > 1.0) {
        return Err(EvoError::invalid("supercontractivity needs p > 1"));
    }
    let (fnorm, fse) = solution_lp(sol, fam, sol.s, pr.p, false)?;
    let mut out = Vec::new();
    for &t in t_grid {
        let tau = t - sol.s;
        if !(tau > 0.0) {
            return Err(EvoError::invalid("audit time not past the start"));
        }
        let c2 = super_c2(pr, q, nu, tau);
        let (lhs, lse) = solution_lp(sol, fam, t, q, false)?;
        let rhs = c2 * (fnorm + pr.xi0 * tau);
        let slack = 3.0 * (lse + c2 * fse) + 1e-6 * (1.0 + rhs.abs());
        out.push(AuditRecord::inequality(
            "supercontractivity",
            params(&[
                ("f", json!(sol.f_name.clone())),
                ("t", json!(t)),
                ("p", json!(pr.p)),
                ("q", json!(q)),
                ("c2", json!(c2)),
                ("measure", json!(fam.spec.label())),
            ]),
            lhs,
            rhs,
            slack,
        ));
    }
    Ok(out)
}

/// Gradient companion: the half-horizon q-norm bound composed with the
/// mixed smoothing constant C_tau = (sqrt(tau)+1) e^{d1 tau^{3/2} + d2}
/// frozen by the L^p fit.
pub fn check_gradient_super(
    sol: &MildSolution,
    fam: &MeasureFamily,
    pr: &HyperParams,
    q: f64,
    nu: &dyn Fn(f64) -> f64,
    d1: f64,
    d2: f64,
    t_grid: &[f64],
) -> Result<Vec<AuditRecord>> {
    if !(q > pr.p) {
        return Err(EvoError::invalid("the target exponent must exceed the data exponent"));
    }
    let (fnorm, fse) = solution_lp(sol, fam, sol.s, pr.p, false)?;
    let c_tau = |tau: f64| (tau.sqrt() + 1.0) * (d1 * tau.powf(1.5) + d2).exp();
    let mut out = Vec::new();
    for &t in t_grid {
        let tau = t - sol.s;
        if !(tau > 0.0) {
            return Err(EvoError::invalid("audit time not past the start"));
        }
        let half = 0.5 * tau;
        let c2h = super_c2(pr, q, nu, half);
        let c = c_tau(half);
        let c3 = (2.0 / tau).sqrt() * c * c2h;
        let c4 = c * (c2h * half.sqrt() + half.sqrt() + (2.0 / tau).sqrt());
        let (lhs, lse) = solution_lp(sol, fam, t, q, true)?;
        let rhs = c3 * fnorm + c4 * pr.xi0;
        let slack = 3.0 * (lse + c3 * fse) + 1e-6 * (1.0 + rhs.abs());
        out.push(AuditRecord::inequality(
            "gradient-super",
            params(&[
                ("f", json!(sol.f_name.clone())),
                ("t", json!(t)),
                ("p", json!(pr.p)),
                ("q", json!(q)),
                ("c3", json!(c3)),
                ("c4", json!(c4)),
                ("d1", json!(d1)),
                ("d2", json!(d2)),
            ]),
            lhs,
            rhs,
            slack,
        ));
    }
    Ok(out)
}

/// Harnack time weight: (e^{2 sigma1 r} - 1)/(2 sigma1) when the
/// gradient exponent is positive, r otherwise (and in the limit).
pub fn harnack_theta(sigma1: f64, r: f64) -> f64 {
    if sigma1 > 0.0 {
        (2.0 * sigma1 * r).exp_m1() / (2.0 * sigma1)
    } else {
        r
    }
}

/// Log of the Harnack prefactor between evaluation points at distance
/// `dist`. At dist = 0 with xi2 <= 0 it reduces exactly to
/// p (1 + xi1^+) tau.
pub fn harnack_exponent(pr: &HyperParams, sigma1: f64, tau: f64, dist: f64) -> f64 {
    let theta = harnack_theta(sigma1, tau);
    let shift = dist + pr.xi2.max(0.0) * tau;
    let quad = if shift == 0.0 {
        0.0
    } else {
        pr.p * theta * shift * shift / (4.0 * pr.kappa0 * tau * tau * (pr.p - 1.0))
    };
    pr.p * (1.0 + pr.xi1.max(0.0)) * tau + quad
}

/// |N(t,s)f(x)|^p <= exp(...) [(G(t,s)|f|^p)(y) + xi0^p] over the grid
/// of (x, y) pairs; the record reports the pair with the thinnest
/// margin.
pub fn check_harnack(
    op: &OperatorFamily,
    backend: &EvolutionBackend,
    sol: &MildSolution,
    pr: &HyperParams,
    f: &dyn ScalarField,
    t: f64,
    x_grid: &[f64],
    y_grid: &[f64],
) -> Result<AuditRecord> {
    let sigma1 = pr.sigma1.ok_or_else(|| {
        EvoError::invalid(
            "the Harnack weight needs the p = 1 gradient exponent; only benchmarks with \
             bounded x-independent diffusion carry one",
        )
    })?;
    if !(pr.p >= 1.1) {
        return Err(EvoError::invalid("the Harnack exponent diverges as p -> 1; need p >= 1.1"));
    }
    let tau = t - sol.s;
    if !(tau > 0.0) {
        return Err(EvoError::invalid("audit time not past the start"));
    }
    if x_grid.is_empty() || y_grid.is_empty() {
        return Err(EvoError::invalid("empty evaluation grid"));
    }

    let p = pr.p;
    let pow_field = crate::fields::FnField(|xv: &[f64]| f.value(xv).abs().powf(p));
    let y_points: Vec<Vec<f64>> = y_grid.iter().map(|&y| vec![y]).collect();
    let g = g_apply(op, backend, t, sol.s, &pow_field, &y_points)?;

    let mut worst: Option<(f64, f64, f64, f64, f64)> = None; // margin, lhs, rhs, x, y
    let mut slack_at_worst = 0.0;
    for &x in x_grid {
        let lhs = sol.value(t, x).abs().powf(p);
        for (j, &y) in y_grid.iter().enumerate() {
            let pref = harnack_exponent(pr, sigma1, tau, (x - y).abs()).exp();
            let rhs = pref * (g.values[j] + pr.xi0.powf(p));
            let slack = 3.0 * pref * g.std_errors[j] + 1e-6 * (1.0 + rhs.abs());
            let margin = rhs + slack - lhs;
            if worst.map_or(true, |w| margin < w.0) {
                worst = Some((margin, lhs, rhs, x, y));
                slack_at_worst = slack;
            }
        }
    }
    let (_, lhs, rhs, x, y) = worst.unwrap();
    Ok(AuditRecord::inequality(
        "harnack",
        params(&[
            ("f", json!(sol.f_name.clone())),
            ("t", json!(t)),
            ("p", json!(p)),
            ("sigma1", json!(sigma1)),
            ("x", json!(x)),
            ("y", json!(y)),
            ("n_pairs", json!(x_grid.len() * y_grid.len())),
            ("backend", json!(backend.label())),
        ]),
        lhs,
        rhs,
        slack_at_worst,
    ))
}

/// Gaussian-type payoff e^{lambda |x|^2} with a hard cap beyond
/// 4 * state_scale; cap hits are counted so the estimate can report
/// that the payoff saturated.
struct ClippedExpSq {
    lambda: f64,
    cap_radius_sq: f64,
    clips: AtomicUsize,
}

impl ScalarField for ClippedExpSq {
    fn value(&self, x: &[f64]) -> f64 {
        let r2: f64 = x.iter().map(|v| v * v).sum();
        if r2 > self.cap_radius_sq {
            self.clips.fetch_add(1, Ordering::Relaxed);
            (self.lambda * self.cap_radius_sq).exp()
        } else {
            (self.lambda * r2).exp()
        }
    }

    fn gradient(&self, x: &[f64], out: &mut [f64]) {
        let r2: f64 = x.iter().map(|v| v * v).sum();
        if r2 > self.cap_radius_sq {
            out.iter_mut().for_each(|g| *g = 0.0);
        } else {
            let v = (self.lambda * r2).exp();
            for (g, xi) in out.iter_mut().zip(x) {
                *g = 2.0 * self.lambda * xi * v;
            }
        }
    }

    fn hessian(&self, x: &[f64], out: &mut SymMat) {
        let d = x.len();
        let r2: f64 = x.iter().map(|v| v * v).sum();
        *out = SymMat::zeros(d);
        if r2 > self.cap_radius_sq {
            return;
        }
        let v = (self.lambda * r2).exp();
        for i in 0..d {
            for j in i..d {
                let base = if i == j { 2.0 * self.lambda } else { 0.0 };
                out.set(i, j, (base + 4.0 * self.lambda * self.lambda * x[i] * x[j]) * v);
            }
        }
    }
}

/// Outcome of the Gaussian-payoff sup estimate.
#[derive(Clone, Debug)]
pub struct MEstimate {
    /// Empirical sup of G(t,s) e^{lambda |.|^2} over the pair and point
    /// grids.
    pub sup: f64,
    /// Payoff evaluations that hit the cap.
    pub clipped: usize,
    /// Worst ratio of the widened-grid sup to the base-grid sup across
    /// pairs; a profile still growing at the edge of the grid.
    pub growth_ratio: f64,
    /// Pairs (s, t) actually audited.
    pub n_pairs: usize,
}

impl MEstimate {
    /// The sup did not stabilize: payoffs saturated the cap or the
    /// profile keeps growing where the grid ends.
    pub fn diverged(&self) -> bool {
        self.clipped > 0 || self.growth_ratio > GROWTH_LIMIT
    }
}

/// Empirical sup over {(s,t) in t_grid^2 : t - s >= delta} and x_grid
/// of the kernel applied to the capped Gaussian payoff. The widened
/// grid (1.5 x, kept inside the trusted lattice region) probes whether
/// the sup is still climbing in x.
pub fn estimate_m_delta_lambda(
    op: &OperatorFamily,
    backend: &EvolutionBackend,
    delta: f64,
    lambda: f64,
    t_grid: &[f64],
    x_grid: &[f64],
    state_scale: f64,
) -> Result<MEstimate> {
    if !(delta > 0.0) || !(lambda >= 0.0) {
        return Err(EvoError::invalid("need delta > 0 and lambda >= 0"));
    }
    if x_grid.is_empty() {
        return Err(EvoError::invalid("empty evaluation grid"));
    }
    let cap = 4.0 * state_scale.max(1e-12);
    let payoff = ClippedExpSq {
        lambda,
        cap_radius_sq: cap * cap,
        clips: AtomicUsize::new(0),
    };

    let trust = backend.grid_spec().map(|g| 0.9 * g.radius).unwrap_or(f64::INFINITY);
    let inner: Vec<Vec<f64>> =
        x_grid.iter().filter(|x| x.abs() <= trust).map(|&x| vec![x]).collect();
    let outer: Vec<Vec<f64>> =
        x_grid.iter().map(|x| 1.5 * x).filter(|x| x.abs() <= trust).map(|x| vec![x]).collect();
    if inner.is_empty() {
        return Err(EvoError::invalid("every evaluation point sits outside the trusted lattice"));
    }

    let mut pairs = Vec::new();
    for (i, &a) in t_grid.iter().enumerate() {
        for &b in &t_grid[i + 1..] {
            if b - a >= delta - 1e-12 {
                pairs.push((a, b));
            }
        }
    }
    if pairs.is_empty() {
        return Err(EvoError::invalid(format!(
            "no pair in the time grid is at least delta = {delta} apart"
        )));
    }

    let mut points = inner.clone();
    points.extend(outer.iter().cloned());
    let mut sup = 0.0f64;
    let mut growth = 0.0f64;
    for &(a, b) in &pairs {
        let sample = g_apply(op, backend, b, a, &payoff, &points)?;
        let max_inner =
            sample.values[..inner.len()].iter().cloned().fold(0.0f64, f64::max);
        let max_outer =
            sample.values[inner.len()..].iter().cloned().fold(0.0f64, f64::max);
        sup = sup.max(max_inner).max(max_outer);
        if !outer.is_empty() && max_inner > 0.0 {
            growth = growth.max(max_outer / max_inner);
        }
    }

    Ok(MEstimate {
        sup,
        clipped: payoff.clips.load(Ordering::Relaxed),
        growth_ratio: growth,
        n_pairs: pairs.len(),
    })
}

/// Record form of the payoff-sup estimate: passes when the profile
/// stabilized (no cap hits, no growth at the grid edge).
pub fn check_m_delta_lambda(
    op: &OperatorFamily,
    backend: &EvolutionBackend,
    delta: f64,
    lambda: f64,
    t_grid: &[f64],
    x_grid: &[f64],
    state_scale: f64,
) -> Result<AuditRecord> {
    let est = estimate_m_delta_lambda(op, backend, delta, lambda, t_grid, x_grid, state_scale)?;
    let mut rec = AuditRecord::inequality(
        "m-delta-lambda",
        params(&[
            ("delta", json!(delta)),
            ("lambda", json!(lambda)),
            ("sup", json!(est.sup)),
            ("clipped", json!(est.clipped)),
            ("n_pairs", json!(est.n_pairs)),
            ("backend", json!(backend.label())),
        ]),
        est.growth_ratio,
        GROWTH_LIMIT,
        0.0,
    );
    if est.clipped > 0 {
        rec.pass = false;
        rec.status = AuditStatus::Fail;
        rec = rec.with_note(&format!(
            "payoff hit the cap {} times; the Gaussian-payoff sup is not finite on this family",
            est.clipped
        ));
    }
    Ok(rec)
}

/// The explicit constants of the sup-norm smoothing bound at horizon r.
struct UltraConstants {
    c4: f64,
    c5: f64,
    m: MEstimate,
    lambda: f64,
}

fn ultra_c45(
    op: &OperatorFamily,
    backend: &EvolutionBackend,
    pr: &HyperParams,
    sigma1: f64,
    big_r: f64,
    s: f64,
    r: f64,
    x_grid: &[f64],
    state_scale: f64,
) -> Result<UltraConstants> {
    let p = pr.p;
    let half = 0.5 * r;
    let theta_r = harnack_theta(sigma1, r);
    let theta_h = harnack_theta(sigma1, half);
    // weight exponent of the Gaussian payoff the half-horizon bound
    // needs; the printed form wraps this in an exp, which does not
    // reproduce the derivation's weight, so the bare quotient is used.
    let lambda_fn = |rr: f64, th: f64| th / (2.0 * pr.kappa0 * rr * rr * (p - 1.0));
    let lambda = 0.5 * p * lambda_fn(r, theta_r);
    let xi2p = pr.xi2.max(0.0);
    let phi = 1.0 + pr.xi1.max(0.0);
    let c_tilde =
        (phi * half + theta_h * (xi2p * half + big_r).powi(2)
            / (2.0 * pr.kappa0 * half * half * (p - 1.0)))
            .exp();
    let t_grid = [s, s + half, s + r, s + 1.5 * r, s + 2.0 * r];
    let m = estimate_m_delta_lambda(op, backend, half, lambda, &t_grid, x_grid, state_scale)?;
    let e_term = ((1.0 + pr.xi1.max(0.0)) * half
        + theta_h * xi2p * xi2p / (4.0 * pr.kappa0 * (p - 1.0)))
        .exp();
    let m_root = m.sup.powf(1.0 / p);
    Ok(UltraConstants {
        c4: 2.0 * c_tilde * m_root * e_term,
        c5: (2.0 * c_tilde * m_root + 1.0) * e_term,
        m,
        lambda,
    })
}

/// ||N(t,s)f||_inf <= c4(t-s) ||f||_{L^p(mu_s)} + c5(t-s) xi0 and the
/// gradient version with c6, c7, all constants evaluated verbatim from
/// the half-horizon chain: R from tightness with mu_t(B_R) >= 2^{-p},
/// the Gaussian-payoff sup, and the C_b smoothing constant
/// 2(1 + 2 c0 + c0 sqrt(tau)) standing in for the mixed-norm constant
/// at sup-norm scale. Skips (with the estimate attached) when the
/// payoff sup did not stabilize.
pub fn check_ultraboundedness(
    op: &OperatorFamily,
    backend: &EvolutionBackend,
    sol: &MildSolution,
    fam: &MeasureFamily,
    pr: &HyperParams,
    c0_cb: f64,
    x_grid: &[f64],
    state_scale: f64,
    t: f64,
) -> Result<Vec<AuditRecord>> {
    let sigma1 = pr.sigma1.ok_or_else(|| {
        EvoError::invalid("the sup-norm smoothing chain needs the p = 1 gradient exponent")
    })?;
    if !(pr.p >= 1.1) {
        return Err(EvoError::invalid("the smoothing constants diverge as p -> 1; need p >= 1.1"));
    }
    let r = t - sol.s;
    if !(r > 0.0) {
        return Err(EvoError::invalid("audit time not past the start"));
    }

    let times = [sol.s, sol.s + 0.25 * r, sol.s + 0.5 * r, sol.s + 0.75 * r, t];
    let big_r = tightness_radius(fam, &times, 1.0 - 0.5f64.powf(pr.p))?;
    let (fnorm, fse) = solution_lp(sol, fam, sol.s, pr.p, false)?;

    let full = ultra_c45(op, backend, pr, sigma1, big_r, sol.s, r, x_grid, state_scale)?;
    let half = ultra_c45(op, backend, pr, sigma1, big_r, sol.s, 0.5 * r, x_grid, state_scale)?;

    let base_params = |extra: &[(&str, serde_json::Value)]| {
        let mut v = vec![
            ("f", json!(sol.f_name.clone())),
            ("t", json!(t)),
            ("p", json!(pr.p)),
            ("R", json!(big_r)),
            ("lambda", json!(full.lambda)),
            ("m_sup", json!(full.m.sup)),
            ("backend", json!(backend.label())),
        ];
        v.extend_from_slice(extra);
        params(&v)
    };

    if full.m.diverged() || half.m.diverged() {
        let worst = if full.m.diverged() { &full.m } else { &half.m };
        let note = format!(
            "the Gaussian-payoff sup did not stabilize (cap hits: {}, edge growth: {:.3}); \
             no finite smoothing constant is certified for this family",
            worst.clipped, worst.growth_ratio
        );
        return Ok(vec![
            AuditRecord::skipped("ultraboundedness", base_params(&[]), &note),
            AuditRecord::skipped("gradient-ultra", base_params(&[]), &note),
        ]);
    }

    let mut out = Vec::new();
    let lhs_sup = sol.interior_sup(t);
    let rhs_sup = full.c4 * fnorm + full.c5 * pr.xi0;
    let slack_sup = 3.0 * full.c4 * fse + 1e-6 * (1.0 + rhs_sup.abs());
    out.push(AuditRecord::inequality(
        "ultraboundedness",
        base_params(&[("c4", json!(full.c4)), ("c5", json!(full.c5))]),
        lhs_sup,
        rhs_sup,
        slack_sup,
    ));

    let cb = |tau: f64| 2.0 * (1.0 + 2.0 * c0_cb + c0_cb * tau.sqrt());
    let c6 = (2.0 / r).sqrt() * cb(0.5 * r) * half.c4;
    let c7 = cb(0.5 * r) * (half.c5 * (2.0 / r).sqrt() + (0.5 * r).sqrt() + (2.0 / r).sqrt());
    let lhs_grad = sol.interior_grad_sup(t);
    let rhs_grad = c6 * fnorm + c7 * pr.xi0;
    let slack_grad = 3.0 * c6 * fse + 1e-6 * (1.0 + rhs_grad.abs());
    out.push(AuditRecord::inequality(
        "gradient-ultra",
        base_params(&[("c6", json!(c6)), ("c7", json!(c7)), ("c0_cb", json!(c0_cb))]),
        lhs_grad,
        rhs_grad,
        slack_grad,
    ));
    Ok(out)
}

/// Least-squares slope of y over t.
fn fit_slope(ts: &[f64], ys: &[f64]) -> f64 {
    let n = ts.len() as f64;
    let tm = ts.iter().sum::<f64>() / n;
    let ym = ys.iter().sum::<f64>() / n;
    let mut num = 0.0;
    let mut den = 0.0;
    for (t, y) in ts.iter().zip(ys) {
        num += (t - tm) * (y - ym);
        den += (t - tm) * (t - tm);
    }
    num / den
}

/// Exponential decay of the null solution in L^p: the fitted log-slope
/// of ||D^j N(t,s)f|| must not exceed omega_p (with a 10% allowance),
/// and the absolute bound holds with K_p frozen at the first grid
/// point. Skips when the structural preconditions fail: the source must
/// vanish at zero and omega_p must be negative.
pub fn check_stability(
    sol: &MildSolution,
    fam: &MeasureFamily,
    nl: &Nonlinearity,
    pr: &HyperParams,
    j: usize,
    t_grid: &[f64],
) -> Result<AuditRecord> {
    if j > 1 {
        return Err(EvoError::invalid("only the value (j = 0) and gradient (j = 1) are audited"));
    }
    let p = pr.p;
    let omega = pr.xi1 + pr.xi2.max(0.0).powi(2) / (4.0 * pr.kappa0 * (p - 1.0));
    let pjson = params(&[
        ("f", json!(sol.f_name.clone())),
        ("p", json!(p)),
        ("j", json!(j)),
        ("omega_p", json!(omega)),
    ]);

    for t in [sol.s, sol.s + 1.0, sol.s + 2.5] {
        for x in [-3.0, -0.5, 0.0, 1.2] {
            if nl.psi_at(t, &[x], 0.0, &[0.0]).abs() > 1e-12 {
                return Ok(AuditRecord::skipped(
                    "stability",
                    pjson.clone(),
                    "the source does not vanish on the null solution; nothing decays",
                ));
            }
        }
    }
    if !(omega < 0.0) {
        return Ok(AuditRecord::skipped(
            "stability",
            pjson.clone(),
            &format!("omega_p = {omega} is not negative; no decay rate is claimed"),
        ));
    }

    let (fnorm, _) = solution_lp(sol, fam, sol.s, p, false)?;
    if fnorm <= 1e-14 {
        return Ok(AuditRecord::skipped("stability", pjson, "null datum decays trivially"));
    }

    let mut ts = Vec::new();
    let mut ys = Vec::new();
    let mut norms = Vec::new();
    for &t in t_grid {
        if !(t > sol.s + j as f64) {
            continue;
        }
        let (n, _) = solution_lp(sol, fam, t, p, j == 1)?;
        if n <= 0.0 {
            continue;
        }
        ts.push(t);
        ys.push(n.ln());
        norms.push(n);
    }
    if ts.len() < 3 {
        return Err(EvoError::invalid(format!(
            "need at least 3 usable audit times past s + {j}, got {}",
            ts.len()
        )));
    }

    let slope = fit_slope(&ts, &ys);
    let k_p = norms[0] / ((omega * (ts[0] - sol.s)).exp() * fnorm);
    let mut frozen_worst = 0.0f64;
    for (t, n) in ts.iter().zip(&norms) {
        let bound = k_p * (omega * (t - sol.s)).exp() * fnorm;
        frozen_worst = frozen_worst.max(n / bound);
    }

    let mut rec = AuditRecord::inequality(
        "stability",
        params(&[
            ("f", json!(sol.f_name.clone())),
            ("p", json!(p)),
            ("j", json!(j)),
            ("omega_p", json!(omega)),
            ("k_p", json!(k_p)),
            ("n_times", json!(ts.len())),
        ]),
        slope,
        omega + 0.1 * omega.abs(),
        0.0,
    );
    rec = rec.with_note(&format!(
        "fitted log-slope {slope:.6}; frozen-constant worst ratio {frozen_worst:.6}"
    ));
    if frozen_worst > 1.0 + 1e-6 {
        rec.pass = false;
        rec.status = AuditStatus::Fail;
    }
    Ok(rec)
}

/// Sup-norm variant: rate xi1, constant frozen at the first grid point.
pub fn check_stability_sup(
    sol: &MildSolution,
    nl: &Nonlinearity,
    pr: &HyperParams,
    t_grid: &[f64],
) -> Result<AuditRecord> {
    let pjson =
        params(&[("f", json!(sol.f_name.clone())), ("rate", json!(pr.xi1))]);
    for t in [sol.s, sol.s + 1.0, sol.s + 2.5] {
        for x in [-3.0, -0.5, 0.0, 1.2] {
            if nl.psi_at(t, &[x], 0.0, &[0.0]).abs() > 1e-12 {
                return Ok(AuditRecord::skipped(
                    "stability-sup",
                    pjson.clone(),
                    "the source does not vanish on the null solution; nothing decays",
                ));
            }
        }
    }
    if !(pr.xi1 < 0.0) {
        return Ok(AuditRecord::skipped(
            "stability-sup",
            pjson.clone(),
            &format!("xi1 = {} is not negative; no sup-norm decay rate is claimed", pr.xi1),
        ));
    }
    let f_sup = sol.interior_sup(sol.s);
    if f_sup <= 1e-14 {
        return Ok(AuditRecord::skipped("stability-sup", pjson, "null datum decays trivially"));
    }

    let mut ts = Vec::new();
    let mut ys = Vec::new();
    let mut sups = Vec::new();
    for &t in t_grid {
        if !(t > sol.s) {
            continue;
        }
        let n = sol.interior_sup(t);
        if n <= 0.0 {
            continue;
        }
        ts.push(t);
        ys.push(n.ln());
        sups.push(n);
    }
    if ts.len() < 3 {
        return Err(EvoError::invalid("need at least 3 usable audit times past s"));
    }
    let slope = fit_slope(&ts, &ys);
    let k = sups[0] / ((pr.xi1 * (ts[0] - sol.s)).exp() * f_sup);
    let mut frozen_worst = 0.0f64;
    for (t, n) in ts.iter().zip(&sups) {
        frozen_worst = frozen_worst.max(n / (k * (pr.xi1 * (t - sol.s)).exp() * f_sup));
    }
    let mut rec = AuditRecord::inequality(
        "stability-sup",
        params(&[
            ("f", json!(sol.f_name.clone())),
            ("rate", json!(pr.xi1)),
            ("k", json!(k)),
            ("n_times", json!(ts.len())),
        ]),
        slope,
        pr.xi1 + 0.1 * pr.xi1.abs(),
        0.0,
    );
    rec = rec.with_note(&format!(
        "fitted log-slope {slope:.6}; frozen-constant worst ratio {frozen_worst:.6}"
    ));
    if frozen_worst > 1.0 + 1e-6 {
        rec.pass = false;
        rec.status = AuditStatus::Fail;
    }
    Ok(rec)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::grid::GridSpec;
    use crate::benchmarks;
    use crate::fields::named_field;
    use crate::semilinear::{evolve, fit_c0, fit_lp_constants, PicardStart};
    use std::sync::Arc;

    fn pr(p: f64, gamma: f64, k: f64) -> HyperParams {
        HyperParams {
            p,
            gamma,
            kappa0: 1.0,
            k_lsi: k,
            xi0: 0.0,
            xi1: 0.0,
            xi2: 0.0,
            sigma1: Some(-1.0),
        }
    }

    #[test]
    fn exponent_schedule_hits_the_hand_values() {
        let params = pr(2.0, 2.0, 1.0);
        assert_eq!(hyper_exponent(&params, 0.0, 0.0), 2.0);
        let v = hyper_exponent(&params, std::f64::consts::LN_2, 0.0);
        assert!((v - 2.5).abs() < 1e-14);
        let wide = pr(2.0, 1e12, 1.0);
        assert!((hyper_exponent(&wide, 5.0, 0.0) - 2.0).abs() < 1e-9);
    }

    #[test]
    fn omega_rate_branches() {
        let mut params = pr(2.0, 2.0, 1.0);
        params.xi1 = -1.0;
        params.xi2 = -1.0;
        assert_eq!(omega_rate(&params, 2.0), -1.0);
        params.xi2 = 1.0;
        assert!((omega_rate(&params, 2.0) - 1.0).abs() < 1e-14);
        // the sigma = 1 pole is fenced, not crossed.
        assert!(omega_rate(&params, 1.0).is_finite());
        assert!(omega_rate(&params, 1.0) > 1e5);
    }

    #[test]
    fn exponent_chain_identities_hold() {
        for k in [0.5, 0.55, 0.9, 2.0] {
            let rec = check_exponent_chain(1.0, k, 2.0);
            assert!(rec.pass, "K = {k}: {:?} lhs {}", rec.note, rec.lhs.0);
        }
        let rec = check_exponent_chain(2.0, 0.5, 1.5);
        assert!(rec.pass);
    }

    #[test]
    fn theta_matches_the_stated_branches() {
        assert_eq!(harnack_theta(-1.0, 0.7), 0.7);
        assert_eq!(harnack_theta(0.0, 0.7), 0.7);
        assert!((harnack_theta(1e-9, 0.7) - 0.7).abs() < 1e-8);
        assert!((harnack_theta(1.0, std::f64::consts::LN_2) - 1.5).abs() < 1e-14);
    }

    #[test]
    fn harnack_prefactor_reduces_exactly_on_the_diagonal() {
        let mut params = pr(2.0, 2.0, 0.55);
        params.xi1 = 0.3;
        params.xi2 = -2.0; // positive part vanishes
        for tau in [0.25, 1.0, 3.0] {
            let e = harnack_exponent(&params, -1.0, tau, 0.0);
            assert_eq!(e, params.p * 1.3 * tau);
        }
    }

    #[test]
    fn supercontractivity_rejects_degenerate_exponents() {
        let b = benchmarks::by_name("ou").unwrap();
        let fam = b.measure_family().unwrap();
        let spec = GridSpec { radius: 8.0, n_cells: 128, dt: 4e-3 };
        let backend = crate::backend::EvolutionBackend::Grid {
            radius: spec.radius,
            n_cells: spec.n_cells,
            dt: spec.dt,
            boundary: crate::backend::BoundaryPolicy::DirichletFrozen,
        };
        let f = named_field("sin").unwrap();
        let sol = evolve(
            &b.op,
            &backend,
            &Nonlinearity::zero(),
            0.0,
            f.field.as_ref(),
            "sin",
            0.5,
        )
        .unwrap();
        let params = HyperParams::for_benchmark(&b, 2.0, 2.0);
        let nu = |s: f64| 1.0 + 1.0 / s;
        let err = check_supercontractivity(&sol, &fam, &params, 2.0, &nu, &[0.5]);
        assert!(err.is_err());
    }

    fn coarse_backend(radius: f64) -> crate::backend::EvolutionBackend {
        crate::backend::EvolutionBackend::Grid {
            radius,
            n_cells: 256,
            dt: 2e-3,
            boundary: crate::backend::BoundaryPolicy::DirichletFrozen,
        }
    }

    /// psi = -u on OU with f(x) = x has the closed form u = x e^{-2 tau},
    /// which exercises every norm-based audit against an oracle.
    fn linear_solution() -> (crate::benchmarks::Benchmark, crate::backend::EvolutionBackend, MildSolution)
    {
        let b = benchmarks::by_name("ou-linear").unwrap();
        let backend = coarse_backend(8.0);
        let f = named_field("coord").unwrap();
        let sol = evolve(&b.op, &backend, &b.nonlinearity, 0.0, f.field.as_ref(), "coord", 2.0)
            .unwrap();
        (b, backend, sol)
    }

    #[test]
    fn hypercontractivity_tracks_the_linear_oracle() {
        let (b, _backend, sol) = linear_solution();
        let fam = b.measure_family().unwrap();
        let params = HyperParams::for_benchmark(&b, 2.0, 2.0);
        let recs = check_hypercontractivity(&sol, &fam, &params, &[0.5, 1.0, 2.0]).unwrap();
        for rec in &recs {
            assert!(rec.pass, "t: {:?} lhs {} rhs {}", rec.params, rec.lhs.0, rec.rhs.0);
        }
        // oracle: ||u(t)||_{L^q} = e^{-2 tau} * q-th absolute Gaussian
        // moment^{1/q}; check the audited lhs against it at tau = 1.
        let tau = 1.0f64;
        let pe = hyper_exponent(&params, tau, 0.0);
        let rec = &recs[1];
        let moment = (2.0f64.powf(pe / 2.0) * libm::tgamma((pe + 1.0) / 2.0)
            / std::f64::consts::PI.sqrt())
        .powf(1.0 / pe);
        let oracle = (-2.0 * tau).exp() * moment;
        assert!(
            (rec.lhs.0 - oracle).abs() < 0.02 * oracle,
            "lhs {} oracle {oracle}",
            rec.lhs.0
        );
    }

    #[test]
    fn gradient_hyper_calibrates_then_validates() {
        let (b, _backend, sol) = linear_solution();
        let fam = b.measure_family().unwrap();
        let params = HyperParams::for_benchmark(&b, 2.0, 2.0);
        let recs =
            check_gradient_hyper(&sol, &fam, &params, &[0.3, 0.6, 1.2], &[0.45, 0.9, 1.8])
                .unwrap();
        assert_eq!(recs.len(), 3);
        for rec in &recs {
            assert!(rec.pass, "{:?}", rec.params);
        }
    }

    #[test]
    fn supercontractivity_holds_on_the_linear_benchmark() {
        let (b, _backend, sol) = linear_solution();
        let fam = b.measure_family().unwrap();
        let params = HyperParams::for_benchmark(&b, 2.0, 2.0);
        let nu = |s: f64| 1.0 + 1.0 / s;
        let recs =
            check_supercontractivity(&sol, &fam, &params, 4.0, &nu, &[0.5, 1.0, 2.0]).unwrap();
        for rec in &recs {
            assert!(rec.pass, "{:?} lhs {} rhs {}", rec.params, rec.lhs.0, rec.rhs.0);
        }
    }

    #[test]
    fn gradient_super_uses_the_frozen_mixed_constants() {
        let (b, backend, sol) = linear_solution();
        let fam = b.measure_family().unwrap();
        let f2 = named_field("sin").unwrap();
        let sol2 =
            evolve(&b.op, &backend, &b.nonlinearity, 0.0, f2.field.as_ref(), "sin", 2.0).unwrap();
        let (d1, d2) = fit_lp_constants(&sol, &sol2, &fam, 4.0).unwrap();
        let params = HyperParams::for_benchmark(&b, 2.0, 2.0);
        let nu = |s: f64| 1.0 + 1.0 / s;
        let recs =
            check_gradient_super(&sol, &fam, &params, 4.0, &nu, d1, d2, &[0.5, 1.0, 2.0])
                .unwrap();
        for rec in &recs {
            assert!(rec.pass, "{:?} lhs {} rhs {}", rec.params, rec.lhs.0, rec.rhs.0);
        }
    }

    #[test]
    fn harnack_holds_on_grid_pairs() {
        let b = benchmarks::by_name("ou-arctan").unwrap();
        let backend = coarse_backend(8.0);
        let f = named_field("sin").unwrap();
        let sol =
            evolve(&b.op, &backend, &b.nonlinearity, 0.0, f.field.as_ref(), "sin", 1.0).unwrap();
        let params = HyperParams::for_benchmark(&b, 2.0, 2.0);
        let grid = [-2.0, -1.0, 0.0, 1.0, 2.0];
        let rec =
            check_harnack(&b.op, &backend, &sol, &params, f.field.as_ref(), 1.0, &grid, &grid)
                .unwrap();
        assert!(rec.pass, "lhs {} rhs {} at {:?}", rec.lhs.0, rec.rhs.0, rec.params);
    }

    #[test]
    fn payoff_sup_matches_the_gaussian_closed_form() {
        // kernel from x at horizon tau is N(x e^{-tau}, 1 - e^{-2 tau});
        // against e^{lambda y^2} the integral is
        // (1 - 2 lambda v)^{-1/2} exp(lambda m^2 / (1 - 2 lambda v)).
        let b = benchmarks::by_name("ou").unwrap();
        let backend = b.grid_backend();
        let lambda = 0.1;
        let est = estimate_m_delta_lambda(
            &b.op,
            &backend,
            0.5,
            lambda,
            &[0.0, 0.5, 1.0, 2.0],
            &[-2.0, -1.0, 0.0, 1.0, 2.0],
            b.state_scale,
        )
        .unwrap();
        let mut oracle = 0.0f64;
        for (s, t) in [(0.0, 0.5), (0.0, 1.0), (0.0, 2.0), (0.5, 1.0), (0.5, 2.0), (1.0, 2.0)] {
            let tau: f64 = t - s;
            let v = 1.0 - (-2.0 * tau).exp();
            for x in [0.0f64, 1.0, 2.0, 3.0] {
                let m = x * (-tau).exp();
                let val = (1.0 - 2.0 * lambda * v).powf(-0.5)
                    * (lambda * m * m / (1.0 - 2.0 * lambda * v)).exp();
                oracle = oracle.max(val);
            }
        }
        assert!(
            (est.sup - oracle).abs() < 0.02 * oracle,
            "estimate {} oracle {oracle}",
            est.sup
        );
        // the lattice reaches past the cap radius, so the projection
        // saturates and the estimate is honestly flagged.
        assert!(est.clipped > 0);
        assert!(est.diverged());
    }

    #[test]
    fn payoff_sup_diverges_past_the_gaussian_threshold() {
        // lambda = 0.6 with kernel variance -> 1 crosses 2 lambda v = 1:
        // the integral itself is infinite, not just the sup.
        let b = benchmarks::by_name("ou").unwrap();
        let backend = b.grid_backend();
        let rec = check_m_delta_lambda(
            &b.op,
            &backend,
            0.5,
            0.6,
            &[0.0, 1.0, 2.0],
            &[-2.0, -1.0, 0.0, 1.0, 2.0],
            b.state_scale,
        )
        .unwrap();
        assert!(!rec.pass);
    }

    #[test]
    fn payoff_sup_stabilizes_under_quartic_confinement() {
        let b = benchmarks::by_name("quartic-arctan").unwrap();
        let backend = b.grid_backend();
        let rec = check_m_delta_lambda(
            &b.op,
            &backend,
            0.5,
            0.5,
            &[0.0, 0.5, 1.0, 2.0],
            &[-2.0, -1.0, 0.0, 1.0, 2.0],
            b.state_scale,
        )
        .unwrap();
        assert!(rec.pass, "lhs {} note {:?}", rec.lhs.0, rec.note);
    }

    #[test]
    fn ultraboundedness_certifies_the_quartic_family() {
        let b = benchmarks::by_name("quartic-arctan").unwrap();
        let backend = crate::backend::EvolutionBackend::Grid {
            radius: 4.0,
            n_cells: 256,
            dt: 2e-3,
            boundary: crate::backend::BoundaryPolicy::DirichletFrozen,
        };
        let fam = b.measure_family().unwrap();
        let f = named_field("sin").unwrap();
        let sol =
            evolve(&b.op, &backend, &b.nonlinearity, 0.0, f.field.as_ref(), "sin", 2.0).unwrap();
        let params = HyperParams::for_benchmark(&b, 2.0, 2.0);
        let taus = [0.25, 0.5, 1.0];
        let witnesses: Vec<crate::fields::NamedField> =
            vec![named_field("sin").unwrap(), named_field("tanh").unwrap()];
        let points = vec![vec![-1.0], vec![0.0], vec![1.0]];
        let c0 = fit_c0(&b.op, &backend, 0.0, &taus, &witnesses, &points).unwrap();
        let recs = check_ultraboundedness(
            &b.op,
            &backend,
            &sol,
            &fam,
            &params,
            c0,
            &[-2.0, -1.0, 0.0, 1.0, 2.0],
            b.state_scale,
            2.0,
        )
        .unwrap();
        assert_eq!(recs.len(), 2);
        for rec in &recs {
            assert_eq!(rec.status, AuditStatus::Pass, "{}: {:?}", rec.check, rec.note);
            assert!(rec.pass, "{}: lhs {} rhs {}", rec.check, rec.lhs.0, rec.rhs.0);
        }
    }

    #[test]
    fn ultraboundedness_skips_where_the_payoff_sup_diverges() {
        let (b, backend, sol) = linear_solution();
        let fam = b.measure_family().unwrap();
        let params = HyperParams::for_benchmark(&b, 2.0, 2.0);
        let recs = check_ultraboundedness(
            &b.op,
            &backend,
            &sol,
            &fam,
            &params,
            1.0,
            &[-2.0, -1.0, 0.0, 1.0, 2.0],
            b.state_scale,
            1.0,
        )
        .unwrap();
        for rec in &recs {
            assert_eq!(rec.status, AuditStatus::Skip, "{}", rec.check);
        }
    }

    #[test]
    fn stability_tracks_the_closed_form_decay() {
        let b = benchmarks::by_name("ou-linear").unwrap();
        let backend = coarse_backend(8.0);
        let f = named_field("coord").unwrap();
        let sol = evolve(&b.op, &backend, &b.nonlinearity, 0.0, f.field.as_ref(), "coord", 4.0)
            .unwrap();
        let fam = b.measure_family().unwrap();
        let params = HyperParams::for_benchmark(&b, 2.0, 2.0);
        let grid: Vec<f64> = (0..7).map(|i| 1.0 + 0.5 * i as f64).collect();
        for j in [0usize, 1] {
            let rec =
                check_stability(&sol, &fam, &b.nonlinearity, &params, j, &grid).unwrap();
            assert_eq!(rec.status, AuditStatus::Pass, "j = {j}: {:?}", rec.note);
            // the solution decays at rate xi1 - 1 = -2, well below
            // omega_p = -1.
            assert!(rec.lhs.0 < -1.5, "j = {j}: slope {}", rec.lhs.0);
            assert!(rec.pass);
        }
        let rec = check_stability_sup(&sol, &b.nonlinearity, &params, &grid).unwrap();
        assert_eq!(rec.status, AuditStatus::Pass);
        assert!(rec.pass, "sup slope {}", rec.lhs.0);
    }

    #[test]
    fn stability_skips_without_a_negative_rate() {
        let b = benchmarks::by_name("ou-arctan").unwrap();
        let backend = coarse_backend(8.0);
        let f = named_field("sin").unwrap();
        let sol =
            evolve(&b.op, &backend, &b.nonlinearity, 0.0, f.field.as_ref(), "sin", 0.5).unwrap();
        let fam = b.measure_family().unwrap();
        let params = HyperParams::for_benchmark(&b, 2.0, 2.0);
        let rec = check_stability(&sol, &fam, &b.nonlinearity, &params, 0, &[0.2, 0.3, 0.4])
            .unwrap();
        assert_eq!(rec.status, AuditStatus::Skip);
        let rec = check_stability_sup(&sol, &b.nonlinearity, &params, &[0.2, 0.3, 0.4]).unwrap();
        assert_eq!(rec.status, AuditStatus::Skip);
    }

    #[test]
    fn stability_skips_a_source_that_feeds_the_null_solution() {
        let b = benchmarks::by_name("ou").unwrap();
        let backend = coarse_backend(8.0);
        let nl = Nonlinearity::new(
            "fed",
            Arc::new(|_t, _x, u: f64, _v: &[f64]| 0.3 - u),
            1.0,
            0.3,
            -1.0,
            0.0,
        );
        let f = named_field("sin").unwrap();
        let sol = evolve(&b.op, &backend, &nl, 0.0, f.field.as_ref(), "sin", 0.5).unwrap();
        let fam = b.measure_family().unwrap();
        let mut params = HyperParams::for_benchmark(&b, 2.0, 2.0);
        params.xi0 = 0.3;
        params.xi1 = -1.0;
        let rec = check_stability(&sol, &fam, &nl, &params, 0, &[0.2, 0.3, 0.4]).unwrap();
        assert_eq!(rec.status, AuditStatus::Skip);
    }

    #[test]
    fn picard_start_is_irrelevant_to_audited_norms() {
        // the audits consume whatever solve they are given; check the
        // two seeds agree to the fixed-point tolerance on a norm the
        // audits read.
        let b = benchmarks::by_name("ou-arctan").unwrap();
        let backend = coarse_backend(8.0);
        let f = named_field("sin").unwrap();
        let a = crate::semilinear::picard_window(
            &b.op,
            &backend,
            &b.nonlinearity,
            0.0,
            f.field.as_ref(),
            "sin",
            0.5,
            PicardStart::LinearPart,
        )
        .unwrap();
        let z = crate::semilinear::picard_window(
            &b.op,
            &backend,
            &b.nonlinearity,
            0.0,
            f.field.as_ref(),
            "sin",
            0.5,
            PicardStart::Zero,
        )
        .unwrap();
        assert!((a.interior_sup(0.5) - z.interior_sup(0.5)).abs() < 1e-6);
    }
}
