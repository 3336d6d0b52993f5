//! Total-variation image recovery from binary compressive measurements.
//!
//! Solves `min_x sum_i ||D_i x||_p + (mu/2) ||A x - b||^2` subject to `x >= 0`
//! with an augmented-Lagrangian splitting `D_i x = w_i`: closed-form shrinkage
//! for `w`, projected Barzilai-Borwein steps with a nonmonotone line search for
//! `x`, and a multiplier update after every inner loop.

use crate::error::{Error, Result};
use crate::sensing::{ImageRaster, MeasurementMatrix};

/// Per-pixel forward differences, `dx` along rows (horizontal) and `dy` down columns.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientField {
    pub width: usize,
    pub height: usize,
    pub dx: Vec<f64>,
    pub dy: Vec<f64>,
}

impl GradientField {
    pub fn zeros(width: usize, height: usize) -> Self {
        GradientField {
            width,
            height,
            dx: vec![0.0; width * height],
            dy: vec![0.0; width * height],
        }
    }

    pub fn dot(&self, other: &GradientField) -> f64 {
        dot(&self.dx, &other.dx) + dot(&self.dy, &other.dy)
    }
}

/// Forward differences with replicate boundary: the last column/row has zero difference.
pub fn gradient(x: &[f64], width: usize, height: usize) -> GradientField {
    let mut g = GradientField::zeros(width, height);
    gradient_into(x, &mut g);
    g
}

fn gradient_into(x: &[f64], g: &mut GradientField) {
    let (w, h) = (g.width, g.height);
    assert_eq!(x.len(), w * h);
    for r in 0..h {
        let row = &x[r * w..(r + 1) * w];
        let gx = &mut g.dx[r * w..(r + 1) * w];
        for c in 0..w - 1 {
            gx[c] = row[c + 1] - row[c];
        }
        gx[w - 1] = 0.0;
        let gy = &mut g.dy[r * w..(r + 1) * w];
        if r + 1 < h {
            let next = &x[(r + 1) * w..(r + 2) * w];
            for c in 0..w {
                gy[c] = next[c] - row[c];
            }
        } else {
            gy.fill(0.0);
        }
    }
}

/// `D^T g`, the exact adjoint of [`gradient`].
pub fn gradient_adjoint(g: &GradientField) -> Vec<f64> {
    let mut out = vec![0.0; g.width * g.height];
    gradient_adjoint_into(g, &mut out);
    out
}

fn gradient_adjoint_into(g: &GradientField, out: &mut [f64]) {
    let (w, h) = (g.width, g.height);
    out.fill(0.0);
    for r in 0..h {
        for c in 0..w - 1 {
            let v = g.dx[r * w + c];
            out[r * w + c] -= v;
            out[r * w + c + 1] += v;
        }
        if r + 1 < h {
            for c in 0..w {
                let v = g.dy[r * w + c];
                out[r * w + c] -= v;
                out[(r + 1) * w + c] += v;
            }
        }
    }
}

/// Discrete divergence, `-D^T g`.
pub fn divergence(g: &GradientField) -> Vec<f64> {
    gradient_adjoint(g).into_iter().map(|v| -v).collect()
}

/// Which norm groups the two gradient components of a pixel.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TvNorm {
    /// `p = 1`: `|dx| + |dy|`.
    Anisotropic,
    /// `p = 2`: `sqrt(dx^2 + dy^2)`.
    Isotropic,
}

/// Proximal map of `||z||_2` with weight `1/beta`: `argmin_z ||z|| + beta/2 ||z - q||^2`.
pub fn shrink_isotropic(q: [f64; 2], beta: f64) -> [f64; 2] {
    let norm = q[0].hypot(q[1]);
    if norm <= 1.0 / beta {
        [0.0, 0.0]
    } else {
        let s = (norm - 1.0 / beta) / norm;
        [q[0] * s, q[1] * s]
    }
}

/// Scalar soft threshold at `1/beta`.
pub fn shrink_scalar(q: f64, beta: f64) -> f64 {
    q.signum() * (q.abs() - 1.0 / beta).max(0.0)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverParams {
    /// Fidelity weight before the `M / ||b||_1` rescaling.
    pub mu: f64,
    /// Penalty on the splitting constraint, in units where the mean pixel is 1.
    pub beta: f64,
    pub norm: TvNorm,
    pub max_outer: usize,
    pub max_inner: usize,
    /// Stop when the relative change of `x` across one outer iteration falls below this.
    pub tolerance: f64,
}

impl Default for SolverParams {
    fn default() -> Self {
        SolverParams {
            mu: 256.0,
            beta: 32.0,
            norm: TvNorm::Isotropic,
            max_outer: 300,
            max_inner: 10,
            tolerance: 1e-4,
        }
    }
}

impl SolverParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.mu > 0.0 && self.mu.is_finite()) {
            return Err(Error::config(format!("penalty mu must be > 0, got {}", self.mu)));
        }
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return Err(Error::config(format!("beta must be > 0, got {}", self.beta)));
        }
        if !(self.tolerance > 0.0) {
            return Err(Error::config("solver tolerance must be > 0"));
        }
        if self.max_outer == 0 || self.max_inner == 0 {
            return Err(Error::config("solver iteration caps must be at least 1"));
        }
        Ok(())
    }
}

/// Solver output plus diagnostics.
#[derive(Debug, Clone)]
pub struct Reconstruction {
    pub image: ImageRaster,
    pub outer_iterations: usize,
    pub inner_iterations: usize,
    /// TV + fidelity objective at the returned image.
    pub objective: f64,
    /// The same objective at `x = 0`.
    pub zero_objective: f64,
    pub converged: bool,
}

/// `sum_i ||D_i x||_p + (mu/2) ||A x - b||^2`, with `mu` taken as given (no rescaling).
pub fn tv_objective(
    a: &MeasurementMatrix,
    b: &[f64],
    x: &[f64],
    width: usize,
    height: usize,
    mu: f64,
    norm: TvNorm,
) -> f64 {
    let g = gradient(x, width, height);
    let ax = a.apply(x);
    tv_norm(&g, norm) + 0.5 * mu * residual_sq(&ax, b)
}

/// The effective fidelity weight `mu * M / ||b||_1` used by [`tv_reconstruct`].
pub fn effective_mu(params: &SolverParams, b: &[f64]) -> f64 {
    let l1: f64 = b.iter().map(|v| v.abs()).sum();
    if l1 > 0.0 {
        params.mu * b.len() as f64 / l1
    } else {
        params.mu
    }
}

fn tv_norm(g: &GradientField, norm: TvNorm) -> f64 {
    match norm {
        TvNorm::Isotropic => g.dx.iter().zip(&g.dy).map(|(a, b)| a.hypot(*b)).sum(),
        TvNorm::Anisotropic => g.dx.iter().chain(&g.dy).map(|v| v.abs()).sum(),
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn residual_sq(ax: &[f64], b: &[f64]) -> f64 {
    ax.iter().zip(b).map(|(p, q)| (p - q) * (p - q)).sum()
}

/// Rough `||A||_2^2` by power iteration on `A^T A`.
fn operator_norm_sq(a: &MeasurementMatrix) -> f64 {
    let mut v = vec![1.0 / (a.cols() as f64).sqrt(); a.cols()];
    let mut est = 0.0;
    for _ in 0..8 {
        let w = a.apply_transpose(&a.apply(&v));
        est = dot(&w, &w).sqrt();
        if est == 0.0 {
            return 0.0;
        }
        v = w.into_iter().map(|x| x / est).collect();
    }
    est
}

// Weight of past objective values in the nonmonotone line-search reference.
const ETA: f64 = 0.9995;

/// `T = I - (1 - keep) u u^T` with `u` the normalised constant image.
struct DcPreconditioner {
    keep: f64,
}

impl DcPreconditioner {
    /// `T T g` restricted to the variables not pinned at zero.
    ///
    /// A variable is pinned when `x_i = 0` and the direction would push it
    /// negative. The free set is refined until it is consistent with the
    /// direction, which keeps the projected step a descent direction.
    fn direction(&self, x: &[f64], g: &[f64]) -> Vec<f64> {
        let mut free: Vec<bool> = x.iter().zip(g).map(|(&x, &g)| x > 0.0 || g < 0.0).collect();
        let mut d = vec![0.0; g.len()];
        for _ in 0..4 {
            let count = free.iter().filter(|&&f| f).count();
            if count == 0 {
                return d;
            }
            let mean = g
                .iter()
                .zip(&free)
                .filter(|(_, &f)| f)
                .map(|(g, _)| g)
                .sum::<f64>()
                / count as f64;
            let shift = mean * (1.0 - self.keep * self.keep);
            let mut consistent = true;
            for i in 0..g.len() {
                d[i] = if free[i] { g[i] - shift } else { 0.0 };
                if free[i] && x[i] <= 0.0 && d[i] > 0.0 {
                    free[i] = false;
                    consistent = false;
                }
            }
            if consistent {
                return d;
            }
        }
        // Fall back to the plain projected gradient.
        g.to_vec()
    }

    /// `||T^{-1} v||^2`.
    fn inverse_sq_norm(&self, v: &[f64]) -> f64 {
        let n = v.len() as f64;
        let mean = v.iter().sum::<f64>() / n;
        let total = dot(v, v);
        let along = mean * mean * n;
        total - along + along / (self.keep * self.keep)
    }
}

struct State {
    x: Vec<f64>,
    ax: Vec<f64>,
    dx: GradientField,
}

/// Recovers a `width x height` image from `b = A x + e`.
pub fn tv_reconstruct(
    a: &MeasurementMatrix,
    b: &[f64],
    width: usize,
    height: usize,
    params: &SolverParams,
) -> Result<Reconstruction> {
    params.validate()?;
    if b.len() != a.rows() {
        return Err(Error::contract(format!(
            "{} measurements supplied for a matrix with M = {}",
            b.len(),
            a.rows()
        )));
    }
    if width * height != a.cols() {
        return Err(Error::contract(format!(
            "image {width}x{height} does not match N = {}",
            a.cols()
        )));
    }
    if let Some(v) = b.iter().find(|v| !v.is_finite()) {
        return Err(Error::contract(format!("measurement vector contains {v}")));
    }
    let n = a.cols();
    let mu_user = effective_mu(params, b);
    let zero_objective = 0.5 * mu_user * dot(b, b);

    // Work in units where the mean pixel is about 1: x = scale * z.
    let l1: f64 = b.iter().map(|v| v.abs()).sum();
    let scale = if l1 > 0.0 {
        2.0 * l1 / (b.len() as f64 * n as f64)
    } else {
        1.0
    };
    let bs: Vec<f64> = b.iter().map(|v| v / scale).collect();
    let mu = mu_user * scale;
    let beta = params.beta;

    let start = initial_guess(a, b, n);
    let z0: Vec<f64> = start.iter().map(|v| v / scale).collect();

    // A {0,1} matrix puts one huge eigenvalue of A^T A on the constant image.
    // Steps are taken in coordinates x = T z with T = I - tau u u^T, u = 1/sqrt(N),
    // which shrinks that direction down to the bulk of the spectrum.
    let m = a.rows() as f64;
    let dc = mu * m * n as f64 / 4.0 + 1e-12;
    let bulk = mu * m / 4.0 + 2.0 * beta;
    let keep = (bulk / dc).sqrt().min(1.0);
    let precond = DcPreconditioner { keep };

    let lipschitz = beta * 8.0 + mu * operator_norm_sq(a) * keep * keep;
    let mut alpha = 1.0 / lipschitz;

    let mut st = State {
        ax: a.apply(&z0),
        dx: gradient(&z0, width, height),
        x: z0,
    };
    let mut nu = GradientField::zeros(width, height);
    let mut w = GradientField::zeros(width, height);
    let mut g_tmp = GradientField::zeros(width, height);
    let mut grad = vec![0.0; n];
    let mut adj = vec![0.0; n];

    let mut inner_total = 0;
    let mut outer_done = 0;
    let mut converged = false;

    for outer in 0..params.max_outer {
        outer_done = outer + 1;
        let x_outer = st.x.clone();

        shrink_into(&st.dx, &nu, beta, params.norm, &mut w);
        let mut f = lagrangian(&st, &w, &nu, &bs, beta, mu, params.norm);
        gradient_of_lagrangian(a, &st, &w, &nu, &bs, beta, mu, &mut g_tmp, &mut adj, &mut grad);
        // Zhang-Hager nonmonotone reference value.
        let mut c_ref = f;
        let mut q = 1.0;

        for inner in 0..params.max_inner {
            inner_total += 1;
            let mut trial;
            let mut step = alpha;
            let dir = precond.direction(&st.x, &grad);
            let mut tries = 0;
            loop {
                let x_new: Vec<f64> = st
                    .x
                    .iter()
                    .zip(&dir)
                    .map(|(x, d)| (x - step * d).max(0.0))
                    .collect();
                trial = State {
                    ax: a.apply(&x_new),
                    dx: gradient(&x_new, width, height),
                    x: x_new,
                };
                let f_new = lagrangian(&trial, &w, &nu, &bs, beta, mu, params.norm);
                let decrease: f64 = grad
                    .iter()
                    .zip(trial.x.iter().zip(&st.x))
                    .map(|(g, (xn, xo))| g * (xn - xo))
                    .sum();
                if !f_new.is_finite() {
                    return Err(Error::Solver {
                        outer,
                        inner,
                        detail: format!("objective became {f_new} (step {step:e})"),
                    });
                }
                if f_new <= c_ref + 1e-5 * decrease || tries >= 20 {
                    break;
                }
                step *= 0.5;
                tries += 1;
            }

            let grad_old = grad.clone();
            shrink_into(&trial.dx, &nu, beta, params.norm, &mut w);
            f = lagrangian(&trial, &w, &nu, &bs, beta, mu, params.norm);
            gradient_of_lagrangian(a, &trial, &w, &nu, &bs, beta, mu, &mut g_tmp, &mut adj, &mut grad);

            let s: Vec<f64> = trial.x.iter().zip(&st.x).map(|(p, q)| p - q).collect();
            let ss = dot(&s, &s);
            let sy: f64 = s.iter().zip(grad.iter().zip(&grad_old)).map(|(s, (g, h))| s * (g - h)).sum();
            let ss_z = precond.inverse_sq_norm(&s);
            alpha = if sy > 0.0 { ss_z / sy } else { step * 2.0 };
            let q_new = ETA * q + 1.0;
            c_ref = (ETA * q * c_ref + f) / q_new;
            q = q_new;

            let xnorm = dot(&trial.x, &trial.x).sqrt().max(f64::MIN_POSITIVE);
            st = trial;
            if ss.sqrt() / xnorm < params.tolerance {
                break;
            }
        }

        for i in 0..n {
            nu.dx[i] -= beta * (st.dx.dx[i] - w.dx[i]);
            nu.dy[i] -= beta * (st.dx.dy[i] - w.dy[i]);
        }

        let change: f64 = st
            .x
            .iter()
            .zip(&x_outer)
            .map(|(p, q)| (p - q) * (p - q))
            .sum::<f64>()
            .sqrt();
        let xnorm = dot(&st.x, &st.x).sqrt().max(f64::MIN_POSITIVE);
        if change / xnorm < params.tolerance {
            converged = true;
            break;
        }
    }

    let x: Vec<f64> = st.x.iter().map(|v| v * scale).collect();
    let objective = tv_objective(a, b, &x, width, height, mu_user, params.norm);
    if !objective.is_finite() {
        return Err(Error::Solver {
            outer: outer_done,
            inner: inner_total,
            detail: format!("final objective is {objective}"),
        });
    }
    Ok(Reconstruction {
        image: ImageRaster::new(width, height, x)?,
        outer_iterations: outer_done,
        inner_iterations: inner_total,
        objective,
        zero_objective,
        converged,
    })
}

/// `A^T b` rescaled into `[0, 255]`.
fn initial_guess(a: &MeasurementMatrix, b: &[f64], n: usize) -> Vec<f64> {
    let atb = a.apply_transpose(b);
    let (lo, hi) = atb
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    if hi > lo {
        atb.iter().map(|v| (v - lo) / (hi - lo) * 255.0).collect()
    } else {
        vec![0.0; n]
    }
}

fn shrink_into(dx: &GradientField, nu: &GradientField, beta: f64, norm: TvNorm, w: &mut GradientField) {
    for i in 0..dx.dx.len() {
        let q = [dx.dx[i] - nu.dx[i] / beta, dx.dy[i] - nu.dy[i] / beta];
        match norm {
            TvNorm::Isotropic => {
                let z = shrink_isotropic(q, beta);
                w.dx[i] = z[0];
                w.dy[i] = z[1];
            }
            TvNorm::Anisotropic => {
                w.dx[i] = shrink_scalar(q[0], beta);
                w.dy[i] = shrink_scalar(q[1], beta);
            }
        }
    }
}

fn lagrangian(
    st: &State,
    w: &GradientField,
    nu: &GradientField,
    b: &[f64],
    beta: f64,
    mu: f64,
    norm: TvNorm,
) -> f64 {
    let mut acc = tv_norm(w, norm);
    for i in 0..w.dx.len() {
        let rx = st.dx.dx[i] - w.dx[i];
        let ry = st.dx.dy[i] - w.dy[i];
        acc += -nu.dx[i] * rx - nu.dy[i] * ry + 0.5 * beta * (rx * rx + ry * ry);
    }
    acc + 0.5 * mu * residual_sq(&st.ax, b)
}

#[allow(clippy::too_many_arguments)]
fn gradient_of_lagrangian(
    a: &MeasurementMatrix,
    st: &State,
    w: &GradientField,
    nu: &GradientField,
    b: &[f64],
    beta: f64,
    mu: f64,
    tmp: &mut GradientField,
    adj: &mut [f64],
    out: &mut [f64],
) {
    for i in 0..w.dx.len() {
        tmp.dx[i] = beta * (st.dx.dx[i] - w.dx[i]) - nu.dx[i];
        tmp.dy[i] = beta * (st.dx.dy[i] - w.dy[i]) - nu.dy[i];
    }
    gradient_adjoint_into(tmp, adj);
    let r: Vec<f64> = st.ax.iter().zip(b).map(|(p, q)| mu * (p - q)).collect();
    let atr = a.apply_transpose(&r);
    for i in 0..out.len() {
        out[i] = adj[i] + atr[i];
    }
}
