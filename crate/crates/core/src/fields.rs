//! Scalar fields: the data `G(t,s)` and `N(t,s)` act on.
//!
//! Audits need analytic gradients and Hessians (the operator application
//! contracts them exactly), so the trait requires all three and the
//! built-in test catalogue implements them in closed form. Payoff-style
//! derived fields (|f|^p, |grad f|^p) fall back to finite differences for
//! the derivatives they do not carry analytically.

use crate::linalg::SymMat;
use crate::MAX_DIM;
use std::sync::Arc;

/// Relative finite-difference step used by every fallback derivative.
pub const H_FD_REL: f64 = 1e-5;

pub trait ScalarField: Sync + Send {
    fn value(&self, x: &[f64]) -> f64;
    fn gradient(&self, x: &[f64], out: &mut [f64]);
    fn hessian(&self, x: &[f64], out: &mut SymMat);
}

/// Central-difference gradient with step `H_FD_REL * (1 + |x|)` per axis.
pub fn gradient_fd(f: &dyn Fn(&[f64]) -> f64, x: &[f64], out: &mut [f64]) {
    let d = x.len();
    let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
    let h = H_FD_REL * (1.0 + norm);
    let mut xp = [0.0f64; MAX_DIM];
    let mut xm = [0.0f64; MAX_DIM];
    for i in 0..d {
        xp[..d].copy_from_slice(x);
        xm[..d].copy_from_slice(x);
        xp[i] += h;
        xm[i] -= h;
        out[i] = (f(&xp[..d]) - f(&xm[..d])) / (2.0 * h);
    }
}

/// Central-difference Hessian with the same step policy.
pub fn hessian_fd(f: &dyn Fn(&[f64]) -> f64, x: &[f64], out: &mut SymMat) {
    let d = x.len();
    let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
    let h = H_FD_REL * (1.0 + norm);
    let f0 = f(x);
    let mut xa = [0.0f64; MAX_DIM];
    for i in 0..d {
        xa[..d].copy_from_slice(x);
        xa[i] = x[i] + h;
        let fp = f(&xa[..d]);
        xa[i] = x[i] - h;
        let fm = f(&xa[..d]);
        out.set(i, i, (fp - 2.0 * f0 + fm) / (h * h));
        for j in (i + 1)..d {
            let mut corner = |si: f64, sj: f64| {
                xa[..d].copy_from_slice(x);
                xa[i] = x[i] + si * h;
                xa[j] = x[j] + sj * h;
                f(&xa[..d])
            };
            let v = (corner(1.0, 1.0) - corner(1.0, -1.0) - corner(-1.0, 1.0)
                + corner(-1.0, -1.0))
                / (4.0 * h * h);
            out.set(i, j, v);
        }
    }
}

/// Wraps a plain closure into a field with finite-difference derivatives.
pub struct FnField<F: Fn(&[f64]) -> f64 + Sync + Send>(pub F);

impl<F: Fn(&[f64]) -> f64 + Sync + Send> ScalarField for FnField<F> {
    fn value(&self, x: &[f64]) -> f64 {
        (self.0)(x)
    }
    fn gradient(&self, x: &[f64], out: &mut [f64]) {
        gradient_fd(&|y| (self.0)(y), x, out)
    }
    fn hessian(&self, x: &[f64], out: &mut SymMat) {
        hessian_fd(&|y| (self.0)(y), x, out)
    }
}

// ---------------------------------------------------------------------------
// Analytic test catalogue.

/// Constant 1.
pub struct One;

impl ScalarField for One {
    fn value(&self, _x: &[f64]) -> f64 {
        1.0
    }
    fn gradient(&self, x: &[f64], out: &mut [f64]) {
        out[..x.len()].fill(0.0);
    }
    fn hessian(&self, x: &[f64], out: &mut SymMat) {
        *out = SymMat::zeros(x.len());
    }
}

/// Coordinate projection x_k.
pub struct Coord(pub usize);

impl ScalarField for Coord {
    fn value(&self, x: &[f64]) -> f64 {
        x[self.0]
    }
    fn gradient(&self, x: &[f64], out: &mut [f64]) {
        out[..x.len()].fill(0.0);
        out[self.0] = 1.0;
    }
    fn hessian(&self, x: &[f64], out: &mut SymMat) {
        *out = SymMat::zeros(x.len());
    }
}

/// |x|^2.
pub struct NormSq;

impl ScalarField for NormSq {
    fn value(&self, x: &[f64]) -> f64 {
        x.iter().map(|v| v * v).sum()
    }
    fn gradient(&self, x: &[f64], out: &mut [f64]) {
        for (o, v) in out.iter_mut().zip(x) {
            *o = 2.0 * v;
        }
    }
    fn hessian(&self, x: &[f64], out: &mut SymMat) {
        *out = SymMat::scalar(x.len(), 2.0);
    }
}

/// sin(x_k).
pub struct SinCoord(pub usize);

impl ScalarField for SinCoord {
    fn value(&self, x: &[f64]) -> f64 {
        x[self.0].sin()
    }
    fn gradient(&self, x: &[f64], out: &mut [f64]) {
        out[..x.len()].fill(0.0);
        out[self.0] = x[self.0].cos();
    }
    fn hessian(&self, x: &[f64], out: &mut SymMat) {
        *out = SymMat::zeros(x.len());
        out.set(self.0, self.0, -x[self.0].sin());
    }
}

/// tanh(x_k).
pub struct TanhCoord(pub usize);

impl ScalarField for TanhCoord {
    fn value(&self, x: &[f64]) -> f64 {
        x[self.0].tanh()
    }
    fn gradient(&self, x: &[f64], out: &mut [f64]) {
        out[..x.len()].fill(0.0);
        let t = x[self.0].tanh();
        out[self.0] = 1.0 - t * t;
    }
    fn hessian(&self, x: &[f64], out: &mut SymMat) {
        *out = SymMat::zeros(x.len());
        let t = x[self.0].tanh();
        out.set(self.0, self.0, -2.0 * t * (1.0 - t * t));
    }
}

/// exp(-|x|^2).
pub struct GaussBump;

impl ScalarField for GaussBump {
    fn value(&self, x: &[f64]) -> f64 {
        (-x.iter().map(|v| v * v).sum::<f64>()).exp()
    }
    fn gradient(&self, x: &[f64], out: &mut [f64]) {
        let v = self.value(x);
        for (o, xi) in out.iter_mut().zip(x) {
            *o = -2.0 * xi * v;
        }
    }
    fn hessian(&self, x: &[f64], out: &mut SymMat) {
        let d = x.len();
        let v = self.value(x);
        *out = SymMat::zeros(d);
        for i in 0..d {
            for j in i..d {
                let delta = if i == j { 1.0 } else { 0.0 };
                out.set(i, j, (4.0 * x[i] * x[j] - 2.0 * delta) * v);
            }
        }
    }
}

/// 1 / (1 + |x|^2).
pub struct Cauchy;

impl ScalarField for Cauchy {
    fn value(&self, x: &[f64]) -> f64 {
        1.0 / (1.0 + x.iter().map(|v| v * v).sum::<f64>())
    }
    fn gradient(&self, x: &[f64], out: &mut [f64]) {
        let v = self.value(x);
        for (o, xi) in out.iter_mut().zip(x) {
            *o = -2.0 * xi * v * v;
        }
    }
    fn hessian(&self, x: &[f64], out: &mut SymMat) {
        let d = x.len();
        let v = self.value(x);
        *out = SymMat::zeros(d);
        for i in 0..d {
            for j in i..d {
                let delta = if i == j { 1.0 } else { 0.0 };
                out.set(i, j, 8.0 * x[i] * x[j] * v * v * v - 2.0 * delta * v * v);
            }
        }
    }
}

/// 1 + |x|^2, the Lyapunov witness the benchmarks certify against.
pub struct OnePlusNormSq;

impl ScalarField for OnePlusNormSq {
    fn value(&self, x: &[f64]) -> f64 {
        1.0 + x.iter().map(|v| v * v).sum::<f64>()
    }
    fn gradient(&self, x: &[f64], out: &mut [f64]) {
        NormSq.gradient(x, out)
    }
    fn hessian(&self, x: &[f64], out: &mut SymMat) {
        NormSq.hessian(x, out)
    }
}

// ---------------------------------------------------------------------------
// Derived fields.

/// |f|^p for p >= 1. Gradient is analytic off the zero set of f
/// (p |f|^{p-1} sign(f) grad f); the Hessian falls back to differences.
pub struct AbsPow {
    pub inner: Arc<dyn ScalarField>,
    pub p: f64,
}

impl ScalarField for AbsPow {
    fn value(&self, x: &[f64]) -> f64 {
        self.inner.value(x).abs().powf(self.p)
    }
    fn gradient(&self, x: &[f64], out: &mut [f64]) {
        let v = self.inner.value(x);
        if v == 0.0 {
            out[..x.len()].fill(0.0);
            return;
        }
        self.inner.gradient(x, out);
        let c = self.p * v.abs().powf(self.p - 1.0) * v.signum();
        for o in out[..x.len()].iter_mut() {
            *o *= c;
        }
    }
    fn hessian(&self, x: &[f64], out: &mut SymMat) {
        hessian_fd(&|y| self.value(y), x, out)
    }
}

/// |grad f|^p, the right-hand payoff of the pointwise gradient bound.
pub struct GradNormPow {
    pub inner: Arc<dyn ScalarField>,
    pub p: f64,
}

impl ScalarField for GradNormPow {
    fn value(&self, x: &[f64]) -> f64 {
        let mut g = [0.0f64; MAX_DIM];
        self.inner.gradient(x, &mut g[..x.len()]);
        let n2: f64 = g[..x.len()].iter().map(|v| v * v).sum();
        n2.sqrt().powf(self.p)
    }
    fn gradient(&self, x: &[f64], out: &mut [f64]) {
        gradient_fd(&|y| self.value(y), x, out)
    }
    fn hessian(&self, x: &[f64], out: &mut SymMat) {
        hessian_fd(&|y| self.value(y), x, out)
    }
}

/// c_a * a + c_b * b.
pub struct LinComb {
    pub ca: f64,
    pub a: Arc<dyn ScalarField>,
    pub cb: f64,
    pub b: Arc<dyn ScalarField>,
}

impl ScalarField for LinComb {
    fn value(&self, x: &[f64]) -> f64 {
        self.ca * self.a.value(x) + self.cb * self.b.value(x)
    }
    fn gradient(&self, x: &[f64], out: &mut [f64]) {
        let d = x.len();
        let mut gb = [0.0f64; MAX_DIM];
        self.a.gradient(x, out);
        self.b.gradient(x, &mut gb[..d]);
        for i in 0..d {
            out[i] = self.ca * out[i] + self.cb * gb[i];
        }
    }
    fn hessian(&self, x: &[f64], out: &mut SymMat) {
        let mut hb = SymMat::zeros(x.len());
        self.a.hessian(x, out);
        self.b.hessian(x, &mut hb);
        let d = x.len();
        for i in 0..d {
            for j in i..d {
                out.set(i, j, self.ca * out.get(i, j) + self.cb * hb.get(i, j));
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Time-dependent fields (Duhamel sources, measure-derivative tests).

pub trait TimeField: Sync + Send {
    fn value(&self, t: f64, x: &[f64]) -> f64;
    fn time_derivative(&self, t: f64, x: &[f64]) -> f64;
    fn x_gradient(&self, t: f64, x: &[f64], out: &mut [f64]);
    fn x_hessian(&self, t: f64, x: &[f64], out: &mut SymMat);
}

/// Fixed-time view of a [`TimeField`], usable wherever a spatial field is.
pub struct TimeSlice<'a> {
    pub f: &'a dyn TimeField,
    pub t: f64,
}

impl ScalarField for TimeSlice<'_> {
    fn value(&self, x: &[f64]) -> f64 {
        self.f.value(self.t, x)
    }
    fn gradient(&self, x: &[f64], out: &mut [f64]) {
        self.f.x_gradient(self.t, x, out)
    }
    fn hessian(&self, x: &[f64], out: &mut SymMat) {
        self.f.x_hessian(self.t, x, out)
    }
}

/// Separable a(t) * g(x) with analytic a'.
pub struct Separable {
    pub a: fn(f64) -> f64,
    pub da: fn(f64) -> f64,
    pub g: Arc<dyn ScalarField>,
}

impl TimeField for Separable {
    fn value(&self, t: f64, x: &[f64]) -> f64 {
        (self.a)(t) * self.g.value(x)
    }
    fn time_derivative(&self, t: f64, x: &[f64]) -> f64 {
        (self.da)(t) * self.g.value(x)
    }
    fn x_gradient(&self, t: f64, x: &[f64], out: &mut [f64]) {
        self.g.gradient(x, out);
        let a = (self.a)(t);
        for o in out[..x.len()].iter_mut() {
            *o *= a;
        }
    }
    fn x_hessian(&self, t: f64, x: &[f64], out: &mut SymMat) {
        self.g.hessian(x, out);
        *out = out.scale((self.a)(t));
    }
}

/// Time-independent view of a spatial field.
pub struct Autonomous(pub Arc<dyn ScalarField>);

impl TimeField for Autonomous {
    fn value(&self, _t: f64, x: &[f64]) -> f64 {
        self.0.value(x)
    }
    fn time_derivative(&self, _t: f64, _x: &[f64]) -> f64 {
        0.0
    }
    fn x_gradient(&self, _t: f64, x: &[f64], out: &mut [f64]) {
        self.0.gradient(x, out)
    }
    fn x_hessian(&self, _t: f64, x: &[f64], out: &mut SymMat) {
        self.0.hessian(x, out)
    }
}

// ---------------------------------------------------------------------------
// Named catalogue for configs and audits.

/// A test field with its name and, when bounded, its global sup-norm.
#[derive(Clone)]
pub struct NamedField {
    pub name: &'static str,
    pub sup_norm: Option<f64>,
    pub field: Arc<dyn ScalarField>,
}

/// Looks up a field by catalogue name.
pub fn named_field(name: &str) -> Option<NamedField> {
    let (sup, field): (Option<f64>, Arc<dyn ScalarField>) = match name {
        "one" => (Some(1.0), Arc::new(One)),
        "coord" => (None, Arc::new(Coord(0))),
        "square" => (None, Arc::new(NormSq)),
        "sin" => (Some(1.0), Arc::new(SinCoord(0))),
        "tanh" => (Some(1.0), Arc::new(TanhCoord(0))),
        "bump" => (Some(1.0), Arc::new(GaussBump)),
        "cauchy" => (Some(1.0), Arc::new(Cauchy)),
        _ => return None,
    };
    // Leak-free static names: match again for the canonical spelling.
    let canonical = match name {
        "one" => "one",
        "coord" => "coord",
        "square" => "square",
        "sin" => "sin",
        "tanh" => "tanh",
        "bump" => "bump",
        "cauchy" => "cauchy",
        _ => unreachable!(),
    };
    Some(NamedField { name: canonical, sup_norm: sup, field })
}

/// The bounded members of the catalogue, for contraction-style audits.
pub fn bounded_catalogue() -> Vec<NamedField> {
    ["one", "sin", "tanh", "bump", "cauchy"]
        .iter()
        .map(|n| named_field(n).unwrap())
        .collect()
}
