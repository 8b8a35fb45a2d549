//! Named benchmark problems.
//!
//! Each entry bundles an operator family with everything an audit run
//! needs: the structural certificates (ellipticity, Lyapunov,
//! dissipativity), a measure construction, a semilinear term with its
//! sign certificates, a log-Sobolev constant, and a lattice sized so the
//! drift stays diffusion-dominated at the boundary. The library itself
//! never fixes a concrete operator family; this catalogue is our choice
//! of desk-scale problems with enough closed-form structure to audit
//! against.
//!
//! All entries are one-dimensional with unit diffusion, so kappa0 = 1
//! across the catalogue and sigma_1 (the p = 1 gradient exponent, which
//! exists because Q is bounded and x-independent) is just the supremum
//! of the drift slope.

use std::sync::Arc;

use crate::backend::grid::GridSpec;
use crate::backend::{BoundaryPolicy, EvolutionBackend};
use crate::error::EvoError;
use crate::fields::OnePlusNormSq;
use crate::linalg::SymMat;
use crate::measures::{MeasureFamily, MeasureSpec};
use crate::operator::{
    DissipativityData, EllipticityCertificate, HypothesisReport, LyapunovCertificate, SampleBox,
    verify_hypotheses,
};
use crate::semilinear::Nonlinearity;
use crate::Result;

/// A catalogued problem: operator family plus certificates, measure
/// construction, semilinear term, and discretization defaults.
pub struct Benchmark {
    pub name: &'static str,
    pub summary: &'static str,
    pub op: crate::operator::OperatorFamily,
    pub ell: EllipticityCertificate,
    pub lyap: LyapunovCertificate,
    pub diss: DissipativityData,
    pub nonlinearity: Nonlinearity,
    pub measure: MeasureSpec,
    /// Time window audits run inside; the measure family anchors its
    /// pullback well before its left end.
    pub window: (f64, f64),
    /// Kernel contraction exponent when known, for the mixing warning.
    pub rate_hint: Option<f64>,
    /// Frozen log-Sobolev constant for the measure family; certificate,
    /// not estimate (dominates the measured witness ratios with margin).
    pub lsi_k: f64,
    /// sup over (t,x) of the drift slope: the p = 1 gradient-estimate
    /// exponent. Present because every entry has bounded x-independent Q.
    pub sigma1: f64,
    /// Lattice for the grid backend, sized so |b| h / q <= 2 up to the
    /// boundary (the sweep rejects advection-dominated rows).
    pub grid: GridSpec,
    /// Spread of the relaxed state, used to clip unbounded payoffs.
    pub state_scale: f64,
}

impl Benchmark {
    pub fn grid_backend(&self) -> EvolutionBackend {
        EvolutionBackend::Grid {
            radius: self.grid.radius,
            n_cells: self.grid.n_cells,
            dt: self.grid.dt,
            boundary: BoundaryPolicy::DirichletFrozen,
        }
    }

    pub fn mc_backend(&self, seed: u64) -> EvolutionBackend {
        EvolutionBackend::default_monte_carlo(seed)
    }

    pub fn measure_family(&self) -> Result<MeasureFamily> {
        MeasureFamily::build(&self.op, self.measure.clone(), self.window, self.rate_hint)
    }

    /// Structural hypothesis verification with the catalogued
    /// certificates on the given sample box.
    pub fn verify(&self, sample: &SampleBox) -> Result<HypothesisReport> {
        verify_hypotheses(&self.op, &self.ell, &self.lyap, &self.diss, sample)
    }

    /// Sample box covering the audit window and the lattice.
    pub fn sample_box(&self) -> SampleBox {
        SampleBox::standard(self.window.0, self.window.1, self.grid.radius)
    }
}

/// Catalogue order: linear families first, then semilinear variants.
pub fn names() -> Vec<&'static str> {
    vec![
        "ou",
        "ou-timevar",
        "ou-periodic",
        "ou-arctan",
        "ou-linear",
        "ou-damped",
        "quartic-arctan",
    ]
}

pub fn all() -> Result<Vec<Benchmark>> {
    names().into_iter().map(by_name).collect()
}

pub fn by_name(name: &str) -> Result<Benchmark> {
    match name {
        "ou" => Ok(ou_entry(
            "ou",
            "Ornstein-Uhlenbeck: b = -x, Q = 1, invariant N(0,1)",
            Nonlinearity::zero(),
        )),
        "ou-timevar" => Ok(ou_timevar()),
        "ou-periodic" => Ok(ou_periodic()),
        "ou-arctan" => Ok(ou_entry(
            "ou-arctan",
            "OU drift with damping source psi = -arctan(u)",
            arctan_term(),
        )),
        "ou-linear" => Ok(ou_entry(
            "ou-linear",
            "OU drift with linear source psi = -u (closed-form solution)",
            Nonlinearity::linear(-1.0),
        )),
        "ou-damped" => Ok(ou_entry(
            "ou-damped",
            "OU drift with psi = -u - arctan(u): strictly negative xi1 for stability audits",
            damped_term(),
        )),
        "quartic-arctan" => Ok(quartic_arctan()),
        other => Err(EvoError::UnknownBenchmark(other.to_string())),
    }
}

fn unit_diffusion() -> EllipticityCertificate {
    EllipticityCertificate { kappa: Arc::new(|_, _| 1.0), kappa0: 1.0 }
}

fn arctan_term() -> Nonlinearity {
    // u * (-arctan u) <= 0, so every sign certificate is zero; the
    // slope of arctan is at most 1.
    Nonlinearity::new("arctan", Arc::new(|_t, _x, u: f64, _v: &[f64]| -u.atan()), 1.0, 0.0, 0.0, 0.0)
}

fn damped_term() -> Nonlinearity {
    // u * (-u - arctan u) = -u^2 - u arctan u <= -u^2.
    Nonlinearity::new(
        "damped-arctan",
        Arc::new(|_t, _x, u: f64, _v: &[f64]| -u - u.atan()),
        2.0,
        0.0,
        -1.0,
        0.0,
    )
}

/// Shared frame for the unit-rate OU entries: only the semilinear term
/// varies. A(1+x^2) = 2 - 2x^2 = 4 - 2(1+x^2), so a = 4, c = 2 exactly.
fn ou_entry(name: &'static str, summary: &'static str, nl: Nonlinearity) -> Benchmark {
    Benchmark {
        name,
        summary,
        op: crate::operator::OperatorFamily {
            name: name.into(),
            dim: 1,
            time_interval: (f64::NEG_INFINITY, f64::INFINITY),
            diffusion: Arc::new(|_t, x, q| *q = SymMat::scalar(x.len(), 1.0)),
            drift: Arc::new(|_t, x, b| b[0] = -x[0]),
            drift_jacobian: Some(Arc::new(|_t, _x, j| j[0] = -1.0)),
            diffusion_x_grad: Some(Arc::new(|_t, x, _k, g| *g = SymMat::zeros(x.len()))),
        },
        ell: unit_diffusion(),
        lyap: LyapunovCertificate { phi: Arc::new(OnePlusNormSq), a: 4.0, c: 2.0 },
        diss: DissipativityData {
            r_bound: Arc::new(|_, _| -1.0),
            rho: Arc::new(|_| 0.0),
            p0: 1.5,
        },
        nonlinearity: nl,
        measure: MeasureSpec::default_gaussian(),
        window: (0.0, 6.0),
        rate_hint: Some(-1.0),
        // kernel variance never exceeds 1, Nelson's constant is 1/2;
        // 0.55 leaves room for the flow integration error.
        lsi_k: 0.55,
        sigma1: -1.0,
        grid: GridSpec { radius: 8.0, n_cells: 512, dt: 1e-3 },
        state_scale: 1.0,
    }
}

fn ou_timevar() -> Benchmark {
    Benchmark {
        name: "ou-timevar",
        summary: "time-modulated OU: b = -(1 + sin(t)/2) x, contraction rate between -3/2 and -1/2",
        op: crate::operator::OperatorFamily {
            name: "ou-timevar".into(),
            dim: 1,
            time_interval: (f64::NEG_INFINITY, f64::INFINITY),
            diffusion: Arc::new(|_t, x, q| *q = SymMat::scalar(x.len(), 1.0)),
            drift: Arc::new(|t, x, b| b[0] = -(1.0 + 0.5 * t.sin()) * x[0]),
            drift_jacobian: Some(Arc::new(|t, _x, j| j[0] = -(1.0 + 0.5 * t.sin()))),
            diffusion_x_grad: Some(Arc::new(|_t, x, _k, g| *g = SymMat::zeros(x.len()))),
        },
        ell: unit_diffusion(),
        // A(1+x^2) = 2 - 2(1 + sin(t)/2) x^2 <= 2 - x^2 = 3 - (1+x^2).
        lyap: LyapunovCertificate { phi: Arc::new(OnePlusNormSq), a: 3.0, c: 1.0 },
        diss: DissipativityData {
            r_bound: Arc::new(|t, _| -(1.0 + 0.5 * t.sin())),
            rho: Arc::new(|_| 0.0),
            p0: 1.5,
        },
        nonlinearity: Nonlinearity::zero(),
        measure: MeasureSpec::default_gaussian(),
        window: (0.0, 6.0),
        rate_hint: Some(-0.5),
        // periodic variance v' = -2(1 + sin(t)/2) v + 2 peaks at 1.709,
        // so the per-time Gaussian constant peaks at 0.855.
        lsi_k: 0.9,
        sigma1: -0.5,
        grid: GridSpec { radius: 8.0, n_cells: 512, dt: 1e-3 },
        state_scale: 1.0,
    }
}

fn ou_periodic() -> Benchmark {
    Benchmark {
        name: "ou-periodic",
        summary: "periodically forced OU: b = -x + sin t, measures N((sin t + cos t)/2, 1)",
        op: crate::operator::OperatorFamily {
            name: "ou-periodic".into(),
            dim: 1,
            time_interval: (f64::NEG_INFINITY, f64::INFINITY),
            diffusion: Arc::new(|_t, x, q| *q = SymMat::scalar(x.len(), 1.0)),
            drift: Arc::new(|t, x, b| b[0] = -x[0] + t.sin()),
            drift_jacobian: Some(Arc::new(|_t, _x, j| j[0] = -1.0)),
            diffusion_x_grad: Some(Arc::new(|_t, x, _k, g| *g = SymMat::zeros(x.len()))),
        },
        ell: unit_diffusion(),
        // A(1+x^2) = 2 - 2x^2 + 2x sin t <= 2 - x^2 + 1 = 4 - (1+x^2).
        lyap: LyapunovCertificate { phi: Arc::new(OnePlusNormSq), a: 4.0, c: 1.0 },
        diss: DissipativityData {
            r_bound: Arc::new(|_, _| -1.0),
            rho: Arc::new(|_| 0.0),
            p0: 1.5,
        },
        nonlinearity: Nonlinearity::zero(),
        measure: MeasureSpec::default_gaussian(),
        window: (0.0, 6.0),
        rate_hint: Some(-1.0),
        // the forcing moves the mean, not the variance: Nelson again.
        lsi_k: 0.55,
        sigma1: -1.0,
        grid: GridSpec { radius: 8.0, n_cells: 512, dt: 1e-3 },
        state_scale: 1.5,
    }
}

fn quartic_arctan() -> Benchmark {
    Benchmark {
        name: "quartic-arctan",
        summary: "quartic confinement b = -x^3 with psi = -arctan(u): superlinear drift, \
                  bounded Gaussian payoffs",
        op: crate::operator::OperatorFamily {
            name: "quartic-arctan".into(),
            dim: 1,
            time_interval: (f64::NEG_INFINITY, f64::INFINITY),
            diffusion: Arc::new(|_t, x, q| *q = SymMat::scalar(x.len(), 1.0)),
            drift: Arc::new(|_t, x, b| b[0] = -x[0] * x[0] * x[0]),
            drift_jacobian: Some(Arc::new(|_t, x, j| j[0] = -3.0 * x[0] * x[0])),
            diffusion_x_grad: Some(Arc::new(|_t, x, _k, g| *g = SymMat::zeros(x.len()))),
        },
        ell: unit_diffusion(),
        // A(1+x^2) = 2 - 2x^4 <= 4.5 - 2(1+x^2): the gap c phi - 2x^4
        // peaks at x^2 = 1/4 with value 2 + 2(1/4) - 2/16 = 2.375 < 2.5.
        lyap: LyapunovCertificate { phi: Arc::new(OnePlusNormSq), a: 4.5, c: 2.0 },
        diss: DissipativityData {
            r_bound: Arc::new(|_, _| 0.0),
            rho: Arc::new(|_| 0.0),
            p0: 1.5,
        },
        nonlinearity: arctan_term(),
        measure: MeasureSpec::default_empirical(0x9a17),
        window: (0.0, 6.0),
        rate_hint: Some(-0.5),
        // invariant density ~ exp(-x^4/2); measured witness ratios stay
        // below 0.23, frozen certificate 0.6.
        lsi_k: 0.6,
        sigma1: 0.0,
        // |b| h / q = 1 at the boundary with radius 4 and 512 cells;
        // the invariant mass beyond |x| = 3 is ~ e^{-40}.
        grid: GridSpec { radius: 4.0, n_cells: 512, dt: 1e-3 },
        state_scale: 1.0,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::{named_field, ScalarField};
    use crate::measures::{check_logsobolev, estimate_logsobolev_constant};
    use crate::operator::compute_sigma_p;

    #[test]
    fn unknown_name_is_an_error() {
        match by_name("ou-cubed") {
            Err(EvoError::UnknownBenchmark(n)) => assert_eq!(n, "ou-cubed"),
            _ => panic!("lookup of a bogus name must fail"),
        }
    }

    #[test]
    fn every_entry_verifies_its_certificates() {
        for b in all().unwrap() {
            let report = b.verify(&b.sample_box()).unwrap();
            for c in &report.checks {
                assert!(c.pass, "{}: {} failed: {}", b.name, c.name, c.note);
            }
        }
    }

    #[test]
    fn every_semilinear_entry_passes_its_sign_certificates() {
        for b in all().unwrap() {
            if b.nonlinearity.is_zero() {
                continue;
            }
            let mut nl = b.nonlinearity.clone();
            let rec = nl.check_certificates(&b.op);
            assert!(rec.pass, "{}: {}", b.name, rec.note);
        }
    }

    #[test]
    fn sigma_p_matches_the_catalogued_rates() {
        // dense one-period sweep as the oracle for the time-modulated
        // drift: sup of -(1 + sin(t)/2) is -1/2.
        let b = by_name("ou-timevar").unwrap();
        let dense = SampleBox {
            t_lo: 0.0,
            t_hi: std::f64::consts::TAU,
            radius: 4.0,
            n_time: 10_000,
            n_axis: 3,
            n_random: 0,
            seed: 1,
        };
        for p in [1.0, 1.5, 2.0] {
            let s = compute_sigma_p(&b.op, &b.diss, &b.ell, p, &dense).unwrap();
            assert!((s - (-0.5)).abs() < 1e-6, "p = {p}: sigma_p = {s}");
        }

        let b = by_name("ou").unwrap();
        let s = compute_sigma_p(&b.op, &b.diss, &b.ell, 2.0, &b.sample_box()).unwrap();
        assert_eq!(s, -1.0);

        let b = by_name("quartic-arctan").unwrap();
        let s = compute_sigma_p(&b.op, &b.diss, &b.ell, 2.0, &b.sample_box()).unwrap();
        assert_eq!(s, 0.0);
    }

    #[test]
    fn sigma1_matches_the_drift_slope_sup() {
        for b in all().unwrap() {
            let mut worst = f64::NEG_INFINITY;
            for (t, x) in b.sample_box().samples(1) {
                let mut j = [0.0];
                b.op.drift_jacobian_at(t, &x, &mut j).unwrap();
                worst = worst.max(j[0]);
            }
            assert!(
                worst <= b.sigma1 + 1e-9,
                "{}: sampled slope {worst} exceeds sigma1 {}",
                b.name,
                b.sigma1
            );
        }
    }

    #[test]
    fn lsi_certificates_dominate_measured_ratios() {
        for name in ["ou", "ou-timevar", "quartic-arctan"] {
            let b = by_name(name).unwrap();
            let fam = b.measure_family().unwrap();
            // exponentials are the sharp Gaussian witnesses: exp(a x)
            // attains the Gaussian log-Sobolev constant as a grows.
            let witnesses: Vec<Arc<dyn ScalarField>> = vec![
                Arc::new(crate::fields::FnField(|x: &[f64]| (0.5 * x[0]).exp())),
                Arc::new(crate::fields::FnField(|x: &[f64]| x[0].exp())),
                Arc::new(crate::fields::FnField(|x: &[f64]| x[0].cosh())),
                Arc::new(crate::fields::FnField(|x: &[f64]| 0.1 + x[0] * x[0])),
            ];
            for t in [1.0, 3.0] {
                let lower = estimate_logsobolev_constant(&fam, t, &witnesses, 2.0).unwrap();
                assert!(
                    lower <= b.lsi_k,
                    "{name}: witness ratio {lower} exceeds certificate {}",
                    b.lsi_k
                );
            }
            let f = named_field("sin").unwrap();
            let rec = check_logsobolev(&fam, 2.0, &f, 2.0, b.lsi_k).unwrap();
            assert!(rec.pass, "{name}: {:?}", rec.note);
        }
    }

    #[test]
    fn quartic_lattice_accepts_the_drift() {
        // the sweep rejects advection-dominated rows at construction
        // time, so a short solve doubles as a guard check.
        let b = by_name("quartic-arctan").unwrap();
        let backend = b.grid_backend();
        let f = named_field("sin").unwrap();
        let out = crate::backend::g_apply(&b.op, &backend, 0.3, 0.0, f.field.as_ref(), &[vec![
            0.5,
        ]])
        .unwrap();
        assert!(out.values[0].is_finite());
    }

    #[test]
    fn catalogue_is_complete_and_distinct() {
        let names = names();
        let all = all().unwrap();
        assert_eq!(names.len(), all.len());
        for (n, b) in names.iter().zip(&all) {
            assert_eq!(*n, b.name);
            assert_eq!(b.op.name, b.name);
        }
    }
}
