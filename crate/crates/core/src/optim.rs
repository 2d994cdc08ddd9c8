//! Quasi-Newton maximization (BFGS with a strong Wolfe line search) and a
//! finite-difference gradient checker.
//!
//! Maximization is the native orientation; internally the line search works
//! on the negated objective. The inverse-Hessian approximation starts at the
//! identity, is rescaled by `sᵀy / yᵀy` after the first step, and skips the
//! update whenever `sᵀy ≤ 1e-10 ‖s‖ ‖y‖` so it stays positive definite.
//! The cutoff is relative so that small late steps still update.

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OptimError {
    #[error("objective or gradient not finite at {x:?}")]
    NonFinite { x: Vec<f64> },
    #[error("line search failed after {evaluations} evaluations at iteration {iterations} (f = {f})")]
    LineSearch {
        /// Last accepted iterate; never worse than the starting point.
        x: Vec<f64>,
        f: f64,
        iterations: usize,
        evaluations: usize,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimResult {
    pub x_star: Vec<f64>,
    pub f_star: f64,
    /// Infinity norm of the gradient at `x_star`.
    pub grad_norm: f64,
    pub iterations: usize,
    pub converged: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BfgsOptions {
    pub grad_tol: f64,
    pub max_iter: usize,
    pub initial_step: f64,
    /// Sufficient-increase constant.
    pub c1: f64,
    /// Curvature constant.
    pub c2: f64,
    pub max_line_evals: usize,
}

impl Default for BfgsOptions {
    fn default() -> Self {
        Self {
            grad_tol: 1e-6,
            max_iter: 200,
            initial_step: 1.0,
            c1: 1e-4,
            c2: 0.9,
            max_line_evals: 60,
        }
    }
}

const CURVATURE_EPS: f64 = 1e-10;

/// Maximize `objective` (returning value and gradient) from `x0`.
pub fn bfgs_maximize<F>(
    objective: F,
    x0: &[f64],
    grad_tol: f64,
    max_iter: usize,
) -> Result<OptimResult, OptimError>
where
    F: FnMut(&[f64]) -> (f64, Vec<f64>),
{
    BfgsOptions {
        grad_tol,
        max_iter,
        ..BfgsOptions::default()
    }
    .maximize(objective, x0)
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

fn norm(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn finite(f: f64, g: &[f64]) -> bool {
    f.is_finite() && g.iter().all(|v| v.is_finite())
}

/// Negated objective evaluated along a ray.
struct Ray<'a, F> {
    objective: &'a mut F,
    x: &'a [f64],
    dir: &'a [f64],
    evals: usize,
}

struct Probe {
    alpha: f64,
    phi: f64,
    dphi: f64,
    x: Vec<f64>,
    grad: Vec<f64>,
}

impl<F: FnMut(&[f64]) -> (f64, Vec<f64>)> Ray<'_, F> {
    fn eval(&mut self, alpha: f64) -> Option<Probe> {
        self.evals += 1;
        let x: Vec<f64> = self
            .x
            .iter()
            .zip(self.dir)
            .map(|(xi, di)| xi + alpha * di)
            .collect();
        let (f, g) = (self.objective)(&x);
        if !finite(f, &g) {
            return None;
        }
        let grad: Vec<f64> = g.iter().map(|v| -v).collect();
        Some(Probe {
            alpha,
            phi: -f,
            dphi: dot(&grad, self.dir),
            x,
            grad,
        })
    }
}

impl BfgsOptions {
    pub fn maximize<F>(&self, mut objective: F, x0: &[f64]) -> Result<OptimResult, OptimError>
    where
        F: FnMut(&[f64]) -> (f64, Vec<f64>),
    {
        let n = x0.len();
        let mut x = x0.to_vec();
        let (f0, g0) = objective(&x);
        if !finite(f0, &g0) {
            return Err(OptimError::NonFinite { x });
        }
        // Work with h = -f throughout.
        let mut h = -f0;
        let mut g: Vec<f64> = g0.iter().map(|v| -v).collect();
        let mut hinv = identity(n);
        let mut iterations = 0;

        while iterations < self.max_iter {
            if inf_norm(&g) <= self.grad_tol {
                break;
            }
            let mut dir = mat_vec(&hinv, &g);
            dir.iter_mut().for_each(|d| *d = -*d);
            if dot(&dir, &g) >= 0.0 {
                hinv = identity(n);
                dir = g.iter().map(|v| -v).collect();
            }
            let probe = match self.line_search(&mut objective, &x, h, &g, &dir) {
                Ok(p) => p,
                Err(evaluations) => {
                    return Err(OptimError::LineSearch {
                        x,
                        f: -h,
                        iterations,
                        evaluations,
                    })
                }
            };
            let s: Vec<f64> = probe.x.iter().zip(&x).map(|(a, b)| a - b).collect();
            let y: Vec<f64> = probe.grad.iter().zip(&g).map(|(a, b)| a - b).collect();
            let sy = dot(&s, &y);
            if sy > CURVATURE_EPS * norm(&s) * norm(&y) {
                if iterations == 0 {
                    let scale = sy / dot(&y, &y);
                    hinv = identity(n);
                    hinv.iter_mut().for_each(|v| *v *= scale);
                }
                bfgs_update(&mut hinv, &s, &y, sy);
            }
            x = probe.x;
            h = probe.phi;
            g = probe.grad;
            iterations += 1;
        }
        let grad_norm = inf_norm(&g);
        Ok(OptimResult {
            x_star: x,
            f_star: -h,
            grad_norm,
            iterations,
            converged: grad_norm <= self.grad_tol,
        })
    }

    /// Strong Wolfe search on `phi(a) = h(x + a d)`; `Err` carries the
    /// evaluation count on failure.
    fn line_search<F>(
        &self,
        objective: &mut F,
        x: &[f64],
        h0: f64,
        g0: &[f64],
        dir: &[f64],
    ) -> Result<Probe, usize>
    where
        F: FnMut(&[f64]) -> (f64, Vec<f64>),
    {
        let dphi0 = dot(g0, dir);
        let mut ray = Ray {
            objective,
            x,
            dir,
            evals: 0,
        };
        let armijo = |p: &Probe| p.phi > h0 + self.c1 * p.alpha * dphi0;
        let curvature = |p: &Probe| p.dphi.abs() <= -self.c2 * dphi0;

        let mut prev = Probe {
            alpha: 0.0,
            phi: h0,
            dphi: dphi0,
            x: x.to_vec(),
            grad: g0.to_vec(),
        };
        let mut alpha = self.initial_step;
        let mut first = true;
        loop {
            if ray.evals >= self.max_line_evals {
                return Err(ray.evals);
            }
            let Some(cur) = ray.eval(alpha) else {
                // Step left the finite region: treat as overshoot.
                alpha = prev.alpha + 0.5 * (alpha - prev.alpha);
                if (alpha - prev.alpha).abs() < 1e-16 {
                    return Err(ray.evals);
                }
                continue;
            };
            if armijo(&cur) || (!first && cur.phi >= prev.phi) {
                return self.zoom(&mut ray, prev, cur, h0, dphi0);
            }
            if curvature(&cur) {
                return Ok(self.refine(&mut ray, cur, h0, dphi0));
            }
            if cur.dphi >= 0.0 {
                return self.zoom(&mut ray, cur, prev, h0, dphi0);
            }
            first = false;
            alpha = (2.0 * cur.alpha).min(1e10);
            prev = cur;
        }
    }

    /// One secant step on the directional derivative from an accepted
    /// point. Exact along quadratic rays, which restores the finite
    /// termination BFGS has under exact line searches; kept only if it
    /// still satisfies strong Wolfe and improves the objective.
    fn refine<F>(&self, ray: &mut Ray<'_, F>, cur: Probe, h0: f64, dphi0: f64) -> Probe
    where
        F: FnMut(&[f64]) -> (f64, Vec<f64>),
    {
        if cur.dphi.abs() <= 1e-10 * dphi0.abs() || ray.evals >= self.max_line_evals {
            return cur;
        }
        let denom = dphi0 - cur.dphi;
        if !(denom.abs() > 0.0) {
            return cur;
        }
        let alpha = cur.alpha * dphi0 / denom;
        if !(alpha > 0.0) || !alpha.is_finite() || (alpha - cur.alpha).abs() <= 1e-12 * cur.alpha {
            return cur;
        }
        match ray.eval(alpha) {
            Some(p)
                if p.phi < cur.phi
                    && p.phi <= h0 + self.c1 * p.alpha * dphi0
                    && p.dphi.abs() <= -self.c2 * dphi0 =>
            {
                p
            }
            _ => cur,
        }
    }

    fn zoom<F>(
        &self,
        ray: &mut Ray<'_, F>,
        mut lo: Probe,
        mut hi: Probe,
        h0: f64,
        dphi0: f64,
    ) -> Result<Probe, usize>
    where
        F: FnMut(&[f64]) -> (f64, Vec<f64>),
    {
        loop {
            if ray.evals >= self.max_line_evals {
                return Err(ray.evals);
            }
            let width = hi.alpha - lo.alpha;
            if width.abs() <= 1e-14 * lo.alpha.abs().max(1.0) {
                return Err(ray.evals);
            }
            // Quadratic through (lo, phi_lo, dphi_lo) and (hi, phi_hi),
            // safeguarded to the inner 80% of the bracket.
            let denom = 2.0 * (hi.phi - lo.phi - lo.dphi * width);
            let mut alpha = if denom > 0.0 {
                lo.alpha - lo.dphi * width * width / denom
            } else {
                f64::NAN
            };
            let (a, b) = if lo.alpha < hi.alpha {
                (lo.alpha, hi.alpha)
            } else {
                (hi.alpha, lo.alpha)
            };
            let margin = 0.1 * (b - a);
            if !(alpha > a + margin && alpha < b - margin) {
                alpha = 0.5 * (lo.alpha + hi.alpha);
            }
            let Some(cur) = ray.eval(alpha) else {
                hi = Probe {
                    alpha,
                    phi: f64::INFINITY,
                    dphi: f64::NAN,
                    x: Vec::new(),
                    grad: Vec::new(),
                };
                continue;
            };
            if cur.phi > h0 + self.c1 * cur.alpha * dphi0 || cur.phi >= lo.phi {
                hi = cur;
            } else {
                if cur.dphi.abs() <= -self.c2 * dphi0 {
                    return Ok(self.refine(ray, cur, h0, dphi0));
                }
                if cur.dphi * (hi.alpha - lo.alpha) >= 0.0 {
                    hi = lo;
                }
                lo = cur;
            }
        }
    }
}

fn identity(n: usize) -> Vec<f64> {
    let mut m = vec![0.0; n * n];
    for i in 0..n {
        m[i * n + i] = 1.0;
    }
    m
}

fn mat_vec(m: &[f64], v: &[f64]) -> Vec<f64> {
    let n = v.len();
    (0..n).map(|i| dot(&m[i * n..(i + 1) * n], v)).collect()
}

/// `H ← (I − ρ s yᵀ) H (I − ρ y sᵀ) + ρ s sᵀ`, expanded to avoid n³ work.
fn bfgs_update(hinv: &mut [f64], s: &[f64], y: &[f64], sy: f64) {
    let n = s.len();
    let rho = 1.0 / sy;
    let hy = mat_vec(hinv, y);
    let yhy = dot(y, &hy);
    for i in 0..n {
        for j in 0..n {
            hinv[i * n + j] += -rho * (s[i] * hy[j] + hy[i] * s[j])
                + (rho * rho * yhy + rho) * s[i] * s[j];
        }
    }
}

/// Largest `|g_analytic − g_fd| / max(1, |g_fd|)` over coordinates, with
/// central differences of half-width `step`.
pub fn check_gradient<F>(mut objective: F, x: &[f64], step: f64) -> Result<f64, OptimError>
where
    F: FnMut(&[f64]) -> (f64, Vec<f64>),
{
    let (f, g) = objective(x);
    if !finite(f, &g) {
        return Err(OptimError::NonFinite { x: x.to_vec() });
    }
    let mut worst: f64 = 0.0;
    let mut probe = x.to_vec();
    for i in 0..x.len() {
        probe[i] = x[i] + step;
        let (fp, _) = objective(&probe);
        probe[i] = x[i] - step;
        let (fm, _) = objective(&probe);
        probe[i] = x[i];
        if !fp.is_finite() || !fm.is_finite() {
            return Err(OptimError::NonFinite { x: probe });
        }
        let fd = (fp - fm) / (2.0 * step);
        worst = worst.max((g[i] - fd).abs() / fd.abs().max(1.0));
    }
    Ok(worst)
}
