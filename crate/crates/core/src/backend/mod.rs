//! Two interchangeable engines for the two-parameter kernel G(t, s):
//! a Monte Carlo sampler of the underlying diffusion and a
//! Crank-Nicolson lattice solver (1-d). Both expose pointwise
//! application, gradients, and the audits that only need the kernel.

pub mod grid;
pub(crate) mod mc;

use crate::error::EvoError;
use crate::fields::{GradNormPow, NamedField, ScalarField};
use crate::format::g17;
use crate::operator::OperatorFamily;
use crate::report::{params, AuditRecord};
use crate::Result;
use serde_json::json;
use std::io::Write;
use std::sync::Arc;

pub use grid::{GridField, GridSpec};

/// Relative spacing of the central-difference stencil used for kernel
/// gradients; the same displaced states ride the path noise.
pub const H_GRAD_REL: f64 = 1e-4;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BoundaryPolicy {
    /// Boundary rows keep the initial data for the whole sweep.
    DirichletFrozen,
}

#[derive(Clone, Debug, PartialEq)]
pub enum EvolutionBackend {
    MonteCarlo { n_paths: usize, dt: f64, seed: u64 },
    Grid { radius: f64, n_cells: usize, dt: f64, boundary: BoundaryPolicy },
}

impl EvolutionBackend {
    pub fn default_monte_carlo(seed: u64) -> Self {
        EvolutionBackend::MonteCarlo { n_paths: 100_000, dt: 1e-3, seed }
    }

    pub fn default_grid() -> Self {
        EvolutionBackend::Grid {
            radius: 8.0,
            n_cells: 512,
            dt: 1e-3,
            boundary: BoundaryPolicy::DirichletFrozen,
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            EvolutionBackend::MonteCarlo { .. } => "monte-carlo",
            EvolutionBackend::Grid { .. } => "grid",
        }
    }

    pub fn grid_spec(&self) -> Option<GridSpec> {
        match self {
            EvolutionBackend::Grid { radius, n_cells, dt, .. } => {
                Some(GridSpec { radius: *radius, n_cells: *n_cells, dt: *dt })
            }
            EvolutionBackend::MonteCarlo { .. } => None,
        }
    }
}

/// Kernel output at a set of points, with statistical errors when the
/// engine is stochastic (the lattice reports zero).
#[derive(Clone, Debug)]
pub struct FieldSample {
    pub points: Vec<Vec<f64>>,
    pub values: Vec<f64>,
    pub std_errors: Vec<f64>,
    pub gradients: Option<Vec<Vec<f64>>>,
    pub gradient_std_errors: Option<Vec<Vec<f64>>>,
    /// Points beyond 90% of the lattice radius, where the frozen
    /// boundary can bleed into the answer.
    pub truncation_warnings: usize,
}

impl FieldSample {
    pub fn dim(&self) -> usize {
        self.points.first().map_or(0, |p| p.len())
    }

    /// Index and magnitude of the largest |value|.
    pub fn max_abs(&self) -> (usize, f64) {
        let mut best = (0usize, 0.0f64);
        for (i, v) in self.values.iter().enumerate() {
            if v.abs() > best.1 {
                best = (i, v.abs());
            }
        }
        best
    }

    pub fn write_csv<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        let d = self.dim();
        let mut header: Vec<String> = (0..d).map(|a| format!("x{a}")).collect();
        header.push("value".into());
        header.push("std_error".into());
        if self.gradients.is_some() {
            for a in 0..d {
                header.push(format!("grad_x{a}"));
            }
            for a in 0..d {
                header.push(format!("grad_se_x{a}"));
            }
        }
        writeln!(w, "{}", header.join(","))?;
        for i in 0..self.points.len() {
            let mut cols: Vec<String> = self.points[i].iter().map(|&v| g17(v)).collect();
            cols.push(g17(self.values[i]));
            cols.push(g17(self.std_errors[i]));
            if let Some(gr) = &self.gradients {
                for &v in &gr[i] {
                    cols.push(g17(v));
                }
                let se = self.gradient_std_errors.as_ref().unwrap();
                for &v in &se[i] {
                    cols.push(g17(v));
                }
            }
            writeln!(w, "{}", cols.join(","))?;
        }
        Ok(())
    }
}

fn validate_window(op: &OperatorFamily, t: f64, s: f64) -> Result<()> {
    let (lo, hi) = op.time_interval;
    for v in [s, t] {
        if !(lo..=hi).contains(&v) {
            return Err(EvoError::OutsideTimeInterval { t: v, lo, hi });
        }
    }
    if !(t >= s) {
        return Err(EvoError::invalid(format!("window must run forward, got s = {s}, t = {t}")));
    }
    Ok(())
}

fn validate_points(op: &OperatorFamily, points: &[Vec<f64>]) -> Result<()> {
    if points.is_empty() {
        return Err(EvoError::invalid("no evaluation points"));
    }
    for p in points {
        if p.len() != op.dim {
            return Err(EvoError::invalid(format!(
                "point has {} coordinates, operator acts in dimension {}",
                p.len(),
                op.dim
            )));
        }
    }
    Ok(())
}

fn truncation_count(spec: &GridSpec, points: &[Vec<f64>]) -> usize {
    points.iter().filter(|p| p[0].abs() > 0.9 * spec.radius).count()
}

/// G(t, s)f evaluated at `points`.
pub fn g_apply(
    op: &OperatorFamily,
    backend: &EvolutionBackend,
    t: f64,
    s: f64,
    f: &dyn ScalarField,
    points: &[Vec<f64>],
) -> Result<FieldSample> {
    Ok(g_apply_batch(op, backend, t, s, &[f], points)?.pop().unwrap())
}

/// Applies the kernel to several fields at once. Under Monte Carlo all
/// fields ride the same path sweep, so a batch costs one field's paths
/// and every field gets bitwise the answer it would get alone.
pub fn g_apply_batch(
    op: &OperatorFamily,
    backend: &EvolutionBackend,
    t: f64,
    s: f64,
    fields: &[&dyn ScalarField],
    points: &[Vec<f64>],
) -> Result<Vec<FieldSample>> {
    validate_window(op, t, s)?;
    validate_points(op, points)?;
    if fields.is_empty() {
        return Err(EvoError::invalid("no fields"));
    }
    if t == s {
        return Ok(fields
            .iter()
            .map(|f| FieldSample {
                points: points.to_vec(),
                values: points.iter().map(|p| f.value(p)).collect(),
                std_errors: vec![0.0; points.len()],
                gradients: None,
                gradient_std_errors: None,
                truncation_warnings: 0,
            })
            .collect());
    }
    match backend {
        EvolutionBackend::MonteCarlo { n_paths, dt, seed } => {
            let raw = mc::apply_points(op, *n_paths, *dt, *seed, t, s, fields, points)?;
            Ok(raw
                .into_iter()
                .map(|per_point| FieldSample {
                    points: points.to_vec(),
                    values: per_point.iter().map(|r| r.0).collect(),
                    std_errors: per_point.iter().map(|r| r.1).collect(),
                    gradients: None,
                    gradient_std_errors: None,
                    truncation_warnings: 0,
                })
                .collect())
        }
        EvolutionBackend::Grid { .. } => {
            let spec = backend.grid_spec().unwrap();
            let warn = truncation_count(&spec, points);
            fields
                .iter()
                .map(|f| {
                    let init = grid::project(&spec, *f);
                    let sw = grid::sweep(op, &spec, t, s, init, None, false)?;
                    let last = sw.final_slice();
                    Ok(FieldSample {
                        points: points.to_vec(),
                        values: points.iter().map(|p| last.eval(p[0])).collect(),
                        std_errors: vec![0.0; points.len()],
                        gradients: None,
                        gradient_std_errors: None,
                        truncation_warnings: warn,
                    })
                })
                .collect()
        }
    }
}

/// G(t, s)f together with its spatial gradient at `points`.
pub fn g_gradient(
    op: &OperatorFamily,
    backend: &EvolutionBackend,
    t: f64,
    s: f64,
    f: &dyn ScalarField,
    points: &[Vec<f64>],
) -> Result<FieldSample> {
    validate_window(op, t, s)?;
    validate_points(op, points)?;
    if t == s {
        return Ok(FieldSample {
            points: points.to_vec(),
            values: points.iter().map(|p| f.value(p)).collect(),
            std_errors: vec![0.0; points.len()],
            gradients: Some(
                points
                    .iter()
                    .map(|p| {
                        let mut g = vec![0.0; op.dim];
                        f.gradient(p, &mut g);
                        g
                    })
                    .collect(),
            ),
            gradient_std_errors: Some(vec![vec![0.0; op.dim]; points.len()]),
            truncation_warnings: 0,
        });
    }
    match backend {
        EvolutionBackend::MonteCarlo { n_paths, dt, seed } => {
            let raw =
                mc::gradient_points(op, *n_paths, *dt, *seed, t, s, f, points, H_GRAD_REL)?;
            Ok(FieldSample {
                points: points.to_vec(),
                values: raw.iter().map(|g| g.value.0).collect(),
                std_errors: raw.iter().map(|g| g.value.1).collect(),
                gradients: Some(
                    raw.iter().map(|g| g.grad.iter().map(|a| a.0).collect()).collect(),
                ),
                gradient_std_errors: Some(
                    raw.iter().map(|g| g.grad.iter().map(|a| a.1).collect()).collect(),
                ),
                truncation_warnings: 0,
            })
        }
        EvolutionBackend::Grid { .. } => {
            let spec = backend.grid_spec().unwrap();
            let init = grid::project(&spec, f);
            let sw = grid::sweep(op, &spec, t, s, init, None, false)?;
            let last = sw.final_slice();
            let mut values = Vec::with_capacity(points.len());
            let mut grads = Vec::with_capacity(points.len());
            for p in points {
                let x = p[0];
                let hg = H_GRAD_REL * (1.0 + x.abs());
                values.push(last.eval(x));
                // difference quotient on the center's patch: the quotient
                // differentiates one polynomial instead of crossing a seam
                let gp = last.eval_on_patch(x, x + hg);
                let gm = last.eval_on_patch(x, x - hg);
                grads.push(vec![(gp - gm) / (2.0 * hg)]);
            }
            Ok(FieldSample {
                points: points.to_vec(),
                values,
                std_errors: vec![0.0; points.len()],
                gradients: Some(grads),
                gradient_std_errors: Some(vec![vec![0.0; 1]; points.len()]),
                truncation_warnings: truncation_count(&spec, points),
            })
        }
    }
}

/// sup |G(t, s)f| <= sup |f| at the sampled points.
pub fn check_contraction(
    op: &OperatorFamily,
    backend: &EvolutionBackend,
    t: f64,
    s: f64,
    field: &NamedField,
    points: &[Vec<f64>],
) -> Result<AuditRecord> {
    let sup = field.sup_norm.ok_or_else(|| {
        EvoError::invalid(format!("field {} has no sup norm, cannot audit contraction", field.name))
    })?;
    let sample = g_apply(op, backend, t, s, field.field.as_ref(), points)?;
    let (wi, lhs) = sample.max_abs();
    let slack = 3.0 * sample.std_errors[wi] + 1e-6 * (1.0 + sup);
    let mut rec = AuditRecord::inequality(
        "contraction",
        params(&[
            ("backend", json!(backend.label())),
            ("field", json!(field.name)),
            ("t", json!(t)),
            ("s", json!(s)),
            ("x", json!(sample.points[wi])),
        ]),
        lhs,
        sup,
        slack,
    );
    if sample.truncation_warnings > 0 {
        rec = rec.with_note(format!(
            "{} of {} points sit beyond 90% of the lattice radius",
            sample.truncation_warnings,
            points.len()
        ));
    }
    Ok(rec)
}

/// |grad G(t, s)f|^p <= e^{p sigma_p (t-s)} G(t, s)|grad f|^p pointwise.
/// Reports the point with the least margin and the tightest observed
/// ratio as a non-vacuity note.
pub fn check_gradient_estimate(
    op: &OperatorFamily,
    backend: &EvolutionBackend,
    p: f64,
    sigma_p: f64,
    t: f64,
    s: f64,
    field: &NamedField,
    points: &[Vec<f64>],
) -> Result<AuditRecord> {
    let lhs_sample = g_gradient(op, backend, t, s, field.field.as_ref(), points)?;
    let grad_pow: Arc<dyn ScalarField> =
        Arc::new(GradNormPow { inner: field.field.clone(), p });
    let rhs_sample = g_apply(op, backend, t, s, grad_pow.as_ref(), points)?;
    let amp = (p * sigma_p * (t - s)).exp();

    let grads = lhs_sample.gradients.as_ref().unwrap();
    let grad_ses = lhs_sample.gradient_std_errors.as_ref().unwrap();
    let mut worst: Option<(usize, f64, f64, f64, f64)> = None; // (i, margin, lhs, rhs, slack)
    let mut max_ratio = 0.0f64;
    for i in 0..points.len() {
        let gnorm = grads[i].iter().map(|v| v * v).sum::<f64>().sqrt();
        let gse = grad_ses[i].iter().map(|v| v * v).sum::<f64>().sqrt();
        let lhs = gnorm.powf(p);
        let rhs = amp * rhs_sample.values[i];
        let slack = 3.0
            * (p * gnorm.powf(p - 1.0).max(1e-300) * gse + amp * rhs_sample.std_errors[i])
            + 1e-6 * (1.0 + rhs.abs());
        if rhs.abs() > 1e-14 {
            max_ratio = max_ratio.max(lhs / rhs);
        }
        let margin = rhs + slack - lhs;
        if worst.map_or(true, |w| margin < w.1) {
            worst = Some((i, margin, lhs, rhs, slack));
        }
    }
    let (wi, _, lhs, rhs, slack) = worst.unwrap();
    let rec = AuditRecord::inequality(
        "gradient-estimate",
        params(&[
            ("backend", json!(backend.label())),
            ("field", json!(field.name)),
            ("p", json!(p)),
            ("sigma_p", json!(sigma_p)),
            ("t", json!(t)),
            ("s", json!(s)),
            ("x", json!(lhs_sample.points[wi])),
        ]),
        lhs,
        rhs,
        slack,
    );
    Ok(rec.with_note(format!("tightest lhs/rhs ratio {:.3} across {} points", max_ratio, points.len())))
}

/// G(t, s) = G(t, r) G(r, s): a chained application must reproduce the
/// direct one up to scheme error (lattice) or statistical error (paths).
pub fn check_evolution_law(
    op: &OperatorFamily,
    backend: &EvolutionBackend,
    t: f64,
    r: f64,
    s: f64,
    field: &NamedField,
) -> Result<AuditRecord> {
    if !(s < r && r < t) {
        return Err(EvoError::invalid("need s < r < t"));
    }
    let f = field.field.as_ref();
    let mut rec = match backend {
        EvolutionBackend::Grid { .. } => {
            let spec = backend.grid_spec().unwrap();
            let direct =
                grid::sweep(op, &spec, t, s, grid::project(&spec, f), None, false)?;
            let first = grid::sweep(op, &spec, r, s, grid::project(&spec, f), None, false)?;
            let chained =
                grid::sweep(op, &spec, t, r, first.final_slice().values.clone(), None, false)?;
            // Richardson gauge of the scheme error bounds the discrepancy
            // budget for both routes.
            let fine = grid::sweep(
                op,
                &spec.refined(),
                t,
                s,
                grid::project(&spec.refined(), f),
                None,
                false,
            )?;
            let nodes = spec.nodes();
            let mut lhs = 0.0f64;
            let mut scheme = 0.0f64;
            for (i, &x) in nodes.iter().enumerate() {
                if x.abs() > 0.9 * spec.radius {
                    continue;
                }
                let dv = direct.final_slice().values[i];
                lhs = lhs.max((dv - chained.final_slice().values[i]).abs());
                scheme = scheme.max((dv - fine.final_slice().eval(x)).abs());
            }
            let slack = 2.0 * (4.0 / 3.0) * scheme + 1e-9 * (1.0 + direct.final_slice().max_abs());
            AuditRecord::inequality(
                "evolution-law",
                params(&[
                    ("backend", json!(backend.label())),
                    ("field", json!(field.name)),
                    ("t", json!(t)),
                    ("r", json!(r)),
                    ("s", json!(s)),
                ]),
                lhs,
                0.0,
                slack,
            )
        }
        EvolutionBackend::MonteCarlo { .. } => {
            if op.dim != 1 {
                return Err(EvoError::UnsupportedDimension {
                    dim: op.dim,
                    engine: "evolution-law interpolant",
                    max: 1,
                });
            }
            // intermediate field G(r, s)f tabulated on a lattice wide
            // enough that paths from the audit points rarely leave it
            let inner_spec = GridSpec { radius: 6.0, n_cells: 64, dt: 1.0 };
            let lattice: Vec<Vec<f64>> = inner_spec.nodes().iter().map(|&x| vec![x]).collect();
            let inner = g_apply(op, backend, r, s, f, &lattice)?;
            let inner_se = inner.std_errors.iter().cloned().fold(0.0f64, f64::max);
            let interp = GridField::from_values(&inner_spec, inner.values.clone());
            let chain_field = crate::fields::FnField(move |x: &[f64]| interp.eval(x[0]));
            let audit_points: Vec<Vec<f64>> =
                (-4..=4).map(|i| vec![i as f64 * 0.5]).collect();
            let outer = g_apply(op, backend, t, r, &chain_field, &audit_points)?;
            let direct = g_apply(op, backend, t, s, f, &audit_points)?;
            let mut lhs = 0.0f64;
            let mut stat = 0.0f64;
            for i in 0..audit_points.len() {
                let diff = (outer.values[i] - direct.values[i]).abs();
                if diff > lhs {
                    lhs = diff;
                    stat = outer.std_errors[i] + direct.std_errors[i];
                }
            }
            let slack = 3.0 * (stat + inner_se) + 1e-4 * (1.0 + field.sup_norm.unwrap_or(1.0));
            AuditRecord::inequality(
                "evolution-law",
                params(&[
                    ("backend", json!(backend.label())),
                    ("field", json!(field.name)),
                    ("t", json!(t)),
                    ("r", json!(r)),
                    ("s", json!(s)),
                ]),
                lhs,
                0.0,
                slack,
            )
        }
    };
    rec = rec.with_note("chained kernel vs direct kernel".to_string());
    Ok(rec)
}
