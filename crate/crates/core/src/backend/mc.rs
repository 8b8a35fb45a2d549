//! Euler-Maruyama sampler for the kernel measures p(t, s, x, dy).
//!
//! The state equation is dX = b dr + sigma dW with sigma sigma^T = 2 Q,
//! run for a horizon of t - s but with the coefficient clock descending
//! from t to s: step k samples b and Q at t - k h. The operator G(t, s)
//! propagates data given at time s forward along D_t u = A(t) u, and for
//! time-dependent coefficients that solution is represented by the
//! diffusion with the coefficient schedule reversed, not by the forward
//! transition law (the two coincide when the coefficients are constant
//! in time). Every path owns the substream keyed by (seed, point index,
//! path index); sums run in fixed 4096-path chunks with Kahan
//! compensation and are combined in chunk order, so results are
//! identical for any worker count.

use crate::error::EvoError;
use crate::fields::ScalarField;
use crate::linalg::SymMat;
use crate::operator::OperatorFamily;
use crate::rng::substream;
use crate::{Result, MAX_DIM};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

pub(crate) const CHUNK: usize = 4096;

/// Splits a horizon into steps of length at most dt (last step may be
/// shorter only through the uniform rescale; all steps are equal).
pub(crate) fn step_count(span: f64, dt: f64) -> usize {
    ((span / dt) - 1e-9).ceil().max(1.0) as usize
}

#[derive(Clone, Copy, Default)]
struct Kahan {
    s: f64,
    c: f64,
}

impl Kahan {
    #[inline]
    fn add(&mut self, v: f64) {
        let t = self.s + v;
        self.c += if self.s.abs() >= v.abs() { (self.s - t) + v } else { (v - t) + self.s };
        self.s = t;
    }
    #[inline]
    fn value(&self) -> f64 {
        self.s + self.c
    }
}

#[derive(Clone, Copy, Default)]
struct Moments {
    sum: Kahan,
    sumsq: Kahan,
}

impl Moments {
    #[inline]
    fn add(&mut self, v: f64) {
        self.sum.add(v);
        self.sumsq.add(v * v);
    }
}

fn mean_se(chunks: &[Moments], n: usize) -> (f64, f64) {
    let mut sum = Kahan::default();
    let mut sumsq = Kahan::default();
    for m in chunks {
        sum.add(m.sum.value());
        sumsq.add(m.sumsq.value());
    }
    let nf = n as f64;
    let mean = sum.value() / nf;
    if n < 2 {
        return (mean, 0.0);
    }
    let var = ((sumsq.value() - nf * mean * mean) / (nf - 1.0)).max(0.0);
    (mean, (var / nf).sqrt())
}

/// One Euler-Maruyama step of every state in `xs` using the shared
/// normal draws `xi` (common random numbers across stencil states).
#[inline]
fn em_step(
    op: &OperatorFamily,
    tk: f64,
    h: f64,
    sqrt_h: f64,
    xs: &mut [[f64; MAX_DIM]],
    xi: &[f64],
) -> Result<()> {
    let d = op.dim;
    for x in xs.iter_mut() {
        let mut b = [0.0f64; MAX_DIM];
        (op.drift)(tk, &x[..d], &mut b[..d]);
        let mut q = SymMat::zeros(d);
        (op.diffusion)(tk, &x[..d], &mut q);
        if d == 1 {
            let qv = q.get(0, 0);
            if !(qv > 0.0) || !qv.is_finite() || !b[0].is_finite() {
                return Err(EvoError::NotPositiveDefinite {
                    t: tk,
                    x: x[..d].to_vec(),
                    detail: format!("q = {qv}, b = {}", b[0]),
                });
            }
            x[0] += b[0] * h + (2.0 * qv).sqrt() * sqrt_h * xi[0];
        } else {
            if q.asymmetry() > crate::operator::Q_ASYMMETRY_TOL {
                return Err(EvoError::invalid(format!("asymmetric diffusion at t={tk}")));
            }
            let chol = q.scale(2.0).cholesky().map_err(|_| EvoError::NotPositiveDefinite {
                t: tk,
                x: x[..d].to_vec(),
                detail: "2Q Cholesky failed".into(),
            })?;
            let mut noise = [0.0f64; MAX_DIM];
            chol.mul_vec(&xi[..d], &mut noise[..d]);
            for i in 0..d {
                if !b[i].is_finite() {
                    return Err(EvoError::NonFinite { what: "drift", t: tk, x: x[..d].to_vec() });
                }
                x[i] += b[i] * h + sqrt_h * noise[i];
            }
        }
        if x[..d].iter().any(|v| !v.is_finite()) {
            return Err(EvoError::NonFinite { what: "path state", t: tk, x: x[..d].to_vec() });
        }
    }
    Ok(())
}

/// Kernel expectations E[f_k(X_t) | X_s = x] for every field and point.
/// Returns `[field][point] -> (mean, std error)`.
pub(crate) fn apply_points(
    op: &OperatorFamily,
    n_paths: usize,
    dt: f64,
    seed: u64,
    t: f64,
    s: f64,
    fields: &[&dyn ScalarField],
    points: &[Vec<f64>],
) -> Result<Vec<Vec<(f64, f64)>>> {
    let d = op.dim;
    let n_steps = step_count(t - s, dt);
    let h = (t - s) / n_steps as f64;
    let sqrt_h = h.sqrt();
    let n_chunks = n_paths.div_ceil(CHUNK);
    let mut out = vec![vec![(0.0, 0.0); points.len()]; fields.len()];

    for (pi, x0) in points.iter().enumerate() {
        let chunk_results: Vec<Result<Vec<Moments>>> = (0..n_chunks)
            .into_par_iter()
            .map(|ci| {
                let lo = ci * CHUNK;
                let hi = ((ci + 1) * CHUNK).min(n_paths);
                let mut acc = vec![Moments::default(); fields.len()];
                let mut state = [[0.0f64; MAX_DIM]; 1];
                let mut xi = [0.0f64; MAX_DIM];
                for path in lo..hi {
                    let mut rng = substream(seed, pi as u64, path as u64);
                    state[0][..d].copy_from_slice(x0);
                    for k in 0..n_steps {
                        let tk = t - k as f64 * h;
                        for v in xi[..d].iter_mut() {
                            *v = rng.sample(StandardNormal);
                        }
                        em_step(op, tk, h, sqrt_h, &mut state, &xi)?;
                    }
                    for (fi, f) in fields.iter().enumerate() {
                        acc[fi].add(f.value(&state[0][..d]));
                    }
                }
                Ok(acc)
            })
            .collect();
        // combine in chunk order; first error wins deterministically
        let mut per_field: Vec<Vec<Moments>> = vec![Vec::with_capacity(n_chunks); fields.len()];
        for cr in chunk_results {
            let acc = cr?;
            for (fi, m) in acc.into_iter().enumerate() {
                per_field[fi].push(m);
            }
        }
        for (fi, chunks) in per_field.iter().enumerate() {
            out[fi][pi] = mean_se(chunks, n_paths);
        }
    }
    Ok(out)
}

/// Terminal states X_t of independent paths launched from (s, x0).
/// Deterministic for a given seed regardless of worker count.
pub(crate) fn terminal_cloud(
    op: &OperatorFamily,
    n_paths: usize,
    dt: f64,
    seed: u64,
    t: f64,
    s: f64,
    x0: &[f64],
) -> Result<Vec<Vec<f64>>> {
    let d = op.dim;
    let n_steps = step_count(t - s, dt);
    let h = (t - s) / n_steps as f64;
    let sqrt_h = h.sqrt();
    let n_chunks = n_paths.div_ceil(CHUNK);
    let chunk_results: Vec<Result<Vec<Vec<f64>>>> = (0..n_chunks)
        .into_par_iter()
        .map(|ci| {
            let lo = ci * CHUNK;
            let hi = ((ci + 1) * CHUNK).min(n_paths);
            let mut states = Vec::with_capacity(hi - lo);
            let mut state = [[0.0f64; MAX_DIM]; 1];
            let mut xi = [0.0f64; MAX_DIM];
            for path in lo..hi {
                let mut rng = substream(seed, 0, path as u64);
                state[0][..d].copy_from_slice(x0);
                for k in 0..n_steps {
                    let tk = t - k as f64 * h;
                    for v in xi[..d].iter_mut() {
                        *v = rng.sample(StandardNormal);
                    }
                    em_step(op, tk, h, sqrt_h, &mut state, &xi)?;
                }
                states.push(state[0][..d].to_vec());
            }
            Ok(states)
        })
        .collect();
    let mut cloud = Vec::with_capacity(n_paths);
    for cr in chunk_results {
        cloud.extend(cr?);
    }
    Ok(cloud)
}

pub(crate) struct GradPoint {
    pub value: (f64, f64),
    pub grad: Vec<(f64, f64)>,
}

/// Kernel value and central-difference gradient per point, the plus and
/// minus stencil paths driven by the same noise as the center path.
pub(crate) fn gradient_points(
    op: &OperatorFamily,
    n_paths: usize,
    dt: f64,
    seed: u64,
    t: f64,
    s: f64,
    f: &dyn ScalarField,
    points: &[Vec<f64>],
    h_rel: f64,
) -> Result<Vec<GradPoint>> {
    let d = op.dim;
    let n_steps = step_count(t - s, dt);
    let h = (t - s) / n_steps as f64;
    let sqrt_h = h.sqrt();
    let n_chunks = n_paths.div_ceil(CHUNK);
    let n_states = 1 + 2 * d;
    let mut out = Vec::with_capacity(points.len());

    for (pi, x0) in points.iter().enumerate() {
        let norm = x0.iter().map(|v| v * v).sum::<f64>().sqrt();
        let hg = h_rel * (1.0 + norm);
        let chunk_results: Vec<Result<Vec<Moments>>> = (0..n_chunks)
            .into_par_iter()
            .map(|ci| {
                let lo = ci * CHUNK;
                let hi = ((ci + 1) * CHUNK).min(n_paths);
                // moments: [center, axis0, axis1, ...]
                let mut acc = vec![Moments::default(); 1 + d];
                let mut states = vec![[0.0f64; MAX_DIM]; n_states];
                let mut xi = [0.0f64; MAX_DIM];
                for path in lo..hi {
                    let mut rng = substream(seed, pi as u64, path as u64);
                    for st in states.iter_mut() {
                        st[..d].copy_from_slice(x0);
                    }
                    for a in 0..d {
                        states[1 + 2 * a][a] += hg;
                        states[2 + 2 * a][a] -= hg;
                    }
                    for k in 0..n_steps {
                        let tk = t - k as f64 * h;
                        for v in xi[..d].iter_mut() {
                            *v = rng.sample(StandardNormal);
                        }
                        em_step(op, tk, h, sqrt_h, &mut states, &xi)?;
                    }
                    acc[0].add(f.value(&states[0][..d]));
                    for a in 0..d {
                        let fp = f.value(&states[1 + 2 * a][..d]);
                        let fm = f.value(&states[2 + 2 * a][..d]);
                        acc[1 + a].add((fp - fm) / (2.0 * hg));
                    }
                }
                Ok(acc)
            })
            .collect();
        let mut per_slot: Vec<Vec<Moments>> = vec![Vec::with_capacity(n_chunks); 1 + d];
        for cr in chunk_results {
            let acc = cr?;
            for (si, m) in acc.into_iter().enumerate() {
                per_slot[si].push(m);
            }
        }
        let value = mean_se(&per_slot[0], n_paths);
        let grad = (0..d).map(|a| mean_se(&per_slot[1 + a], n_paths)).collect();
        out.push(GradPoint { value, grad });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::Coord;
    use std::sync::Arc;

    fn ou() -> OperatorFamily {
        OperatorFamily {
            name: "ou".into(),
            dim: 1,
            time_interval: (-1e9, 1e9),
            diffusion: Arc::new(|_t, x, q| *q = SymMat::scalar(x.len(), 1.0)),
            drift: Arc::new(|_t, x, b| b[0] = -x[0]),
            drift_jacobian: None,
            diffusion_x_grad: None,
        }
    }

    #[test]
    fn step_count_rounds_up() {
        assert_eq!(step_count(1.0, 1e-3), 1000);
        assert_eq!(step_count(0.1, 1e-3), 100);
        assert_eq!(step_count(0.0005, 1e-3), 1);
        assert_eq!(step_count(2.0_f64.ln(), 1e-3), 694);
    }

    #[test]
    fn ou_mean_matches_closed_form() {
        // E[X_t | X_s = 1] = e^{-(t-s)}; 20k paths put the bias and the
        // noise well under 4 standard errors.
        let op = ou();
        let res = apply_points(&op, 20_000, 1e-3, 7, 0.5, 0.0, &[&Coord(0)], &[vec![1.0]]).unwrap();
        let (mean, se) = res[0][0];
        let exact = (-0.5f64).exp();
        assert!((mean - exact).abs() < 4.0 * se + 1e-3, "mean {mean}, exact {exact}, se {se}");
        assert!(se > 0.0 && se < 0.01);
    }

    #[test]
    fn worker_count_does_not_change_bits() {
        let op = ou();
        let run = || {
            apply_points(&op, 10_000, 1e-2, 42, 0.3, 0.0, &[&Coord(0)], &[vec![0.5], vec![-1.0]])
                .unwrap()
        };
        let pool1 = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let pool8 = rayon::ThreadPoolBuilder::new().num_threads(8).build().unwrap();
        let a = pool1.install(run);
        let b = pool8.install(run);
        for (ra, rb) in a[0].iter().zip(&b[0]) {
            assert_eq!(ra.0.to_bits(), rb.0.to_bits());
            assert_eq!(ra.1.to_bits(), rb.1.to_bits());
        }
    }

    #[test]
    fn gradient_common_noise_is_euler_exact() {
        // For linear drift the plus/minus displacement evolves without
        // noise under common random numbers: the difference estimator
        // equals (1 - h)^n exactly, independent of the path draws.
        let op = ou();
        let g = gradient_points(&op, 4_000, 1e-2, 3, 0.5, 0.0, &Coord(0), &[vec![1.0]], 1e-4)
            .unwrap();
        let (gv, gse) = g[0].grad[0];
        assert!((gv - 0.99f64.powi(50)).abs() < 1e-9, "gradient {gv}");
        assert!(gse < 1e-9, "gradient se {gse} should vanish under common noise");
    }
}
