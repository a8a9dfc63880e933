//! Quasi-Newton maximization with finite-difference derivatives.

use nalgebra::{DMatrix, DVector};

#[derive(Debug, Clone, Copy)]
pub(crate) struct BfgsOptions {
    pub max_iter: usize,
    /// Stop when the gradient's largest component falls below this.
    pub grad_tol: f64,
    /// Stop when an accepted step improves the objective by less than this,
    /// relative to `1 + |f|`.
    pub rel_tol: f64,
    /// Coordinates are clamped to `[-bound, bound]` when set.
    pub bound: Option<f64>,
}

impl Default for BfgsOptions {
    fn default() -> Self {
        BfgsOptions {
            max_iter: 200,
            grad_tol: 1e-5,
            rel_tol: 0.0,
            bound: None,
        }
    }
}

#[derive(Debug, Clone)]
pub(crate) struct OptimResult {
    pub x: Vec<f64>,
    pub value: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Objective values after each accepted step, starting with the initial point.
    pub trace: Vec<f64>,
}

/// Central-difference gradient.
pub(crate) fn fd_gradient(f: &mut impl FnMut(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut xp = x.to_vec();
    (0..x.len())
        .map(|k| {
            xp[k] = x[k] + h;
            let up = f(&xp);
            xp[k] = x[k] - h;
            let down = f(&xp);
            xp[k] = x[k];
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// Central-difference Hessian.
pub(crate) fn fd_hessian(f: &mut impl FnMut(&[f64]) -> f64, x: &[f64], h: f64) -> DMatrix<f64> {
    let n = x.len();
    let mut hess = DMatrix::zeros(n, n);
    let f0 = f(x);
    let mut xp = x.to_vec();
    for a in 0..n {
        xp[a] = x[a] + h;
        let up = f(&xp);
        xp[a] = x[a] - h;
        let down = f(&xp);
        xp[a] = x[a];
        hess[(a, a)] = (up - 2.0 * f0 + down) / (h * h);
        for b in 0..a {
            let mut corner = |da: f64, db: f64| {
                xp[a] = x[a] + da;
                xp[b] = x[b] + db;
                let v = f(&xp);
                xp[a] = x[a];
                xp[b] = x[b];
                v
            };
            let v = (corner(h, h) - corner(h, -h) - corner(-h, h) + corner(-h, -h)) / (4.0 * h * h);
            hess[(a, b)] = v;
            hess[(b, a)] = v;
        }
    }
    hess
}

fn clamp_to(x: &mut [f64], bound: Option<f64>) {
    if let Some(b) = bound {
        x.iter_mut().for_each(|v| *v = v.clamp(-b, b));
    }
}

/// Maximizes `f` from `x0` with BFGS and a backtracking line search.
/// Only strictly improving steps are accepted, so the returned value is never
/// below `f(x0)`.
pub(crate) fn maximize_bfgs(
    f: &mut impl FnMut(&[f64]) -> f64,
    grad: &mut impl FnMut(&[f64]) -> Vec<f64>,
    x0: &[f64],
    opts: BfgsOptions,
) -> OptimResult {
    let n = x0.len();
    let mut x = x0.to_vec();
    clamp_to(&mut x, opts.bound);
    let mut fx = f(&x);
    let mut trace = vec![fx];
    if n == 0 || !fx.is_finite() {
        return OptimResult {
            x,
            value: fx,
            iterations: 0,
            converged: n == 0,
            trace,
        };
    }
    let mut g = DVector::from_vec(grad(&x));
    // Inverse Hessian approximation of the negated objective.
    let mut hinv = DMatrix::<f64>::identity(n, n);
    let mut converged = false;
    let mut iterations = 0;
    while iterations < opts.max_iter {
        if g.amax() < opts.grad_tol {
            converged = true;
            break;
        }
        iterations += 1;
        let mut dir = &hinv * &g;
        if dir.dot(&g) <= 0.0 {
            hinv = DMatrix::identity(n, n);
            dir = g.clone();
        }
        let slope = dir.dot(&g);
        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..40 {
            let mut cand: Vec<f64> = x.iter().zip(dir.iter()).map(|(a, d)| a + step * d).collect();
            clamp_to(&mut cand, opts.bound);
            let fc = f(&cand);
            if fc.is_finite() && fc > fx && (fc - fx >= 1e-4 * step * slope || step < 1e-6) {
                accepted = Some((cand, fc));
                break;
            }
            step *= 0.5;
        }
        let Some((xn, fxn)) = accepted else {
            // No ascent along the quasi-Newton direction: retry once along the gradient.
            if hinv != DMatrix::identity(n, n) {
                hinv = DMatrix::identity(n, n);
                continue;
            }
            break;
        };
        let gn = DVector::from_vec(grad(&xn));
        let s = DVector::from_iterator(n, xn.iter().zip(&x).map(|(a, b)| a - b));
        // Ascent on f is descent on -f, whose gradient change is -(gn - g).
        let y = -(&gn - &g);
        let sy = s.dot(&y);
        if sy > 1e-12 {
            let rho = 1.0 / sy;
            let hy = &hinv * &y;
            let yhy = y.dot(&hy);
            hinv += (&s * s.transpose()) * (rho * (1.0 + rho * yhy)) - (&hy * s.transpose() + &s * hy.transpose()) * rho;
        }
        let improvement = fxn - fx;
        x = xn;
        fx = fxn;
        g = gn;
        trace.push(fx);
        if improvement <= opts.rel_tol * (1.0 + fx.abs()) {
            converged = true;
            break;
        }
    }
    if !converged && g.amax() < opts.grad_tol {
        converged = true;
    }
    OptimResult {
        x,
        value: fx,
        iterations,
        converged,
        trace,
    }
}
