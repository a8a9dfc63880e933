//! Fixed latent integration grids and copula-parameter quantile grids.
//!
//! The latent factors are integrated on a uniform grid of `K` points between
//! the 1% and 99% standard normal quantiles. Each point owns the square
//! between the midpoints to its neighbours, with the outer squares running
//! to infinity, and carries the exact normal mass of that square. Bivariate
//! masses are cached for every correlation on the discrete grid.

use gauss_quad::legendre::GaussLegendre;

use crate::copula::squash;
use crate::model::{sigma_index, sigma_value, N_SIGMA};
use crate::normal;
use crate::{Error, Result};

pub const DEFAULT_LATENT_GRID: usize = 21;
pub const DEFAULT_THETA_GRID: usize = 15;

/// Inner absolute accuracy target for the bivariate rectangle masses.
const RECT_TOL: f64 = 1e-11;
/// Where the outer latent squares are cut for numerical integration; the
/// normal mass beyond is below 1e-18.
const TAIL_CUT: f64 = 9.0;
const GL_DEGREE: usize = 16;

/// Distribution over the unconstrained copula coordinate `z`, with
/// `theta = squash(z)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ThetaDist {
    /// The standard normal prior.
    Prior,
    Gaussian { mean: f64, var: f64 },
}

/// Equal-weight quantile grid of copula parameters: `z` quantiles at
/// probabilities `(t - 0.5) / k_theta` mapped through [`squash`].
pub fn theta_grid(dist: ThetaDist, k_theta: usize) -> Result<Vec<(f64, f64)>> {
    if k_theta == 0 {
        return Err(Error::Config("theta grid needs at least one point".into()));
    }
    let (mean, sd) = match dist {
        ThetaDist::Prior => (0.0, 1.0),
        ThetaDist::Gaussian { mean, var } => {
            if !mean.is_finite() || !(var >= 0.0) || !var.is_finite() {
                return Err(Error::Domain(format!("invalid Gaussian ({mean}, {var}) for theta grid")));
            }
            (mean, var.sqrt())
        }
    };
    let w = 1.0 / k_theta as f64;
    (1..=k_theta)
        .map(|t| {
            let q = normal::quantile((t as f64 - 0.5) * w)?;
            Ok((squash(mean + sd * q), w))
        })
        .collect()
}

/// Latent grid with its 1-D masses and bivariate masses for every grid correlation.
#[derive(Debug, Clone)]
pub struct QuadratureCache {
    points: Vec<f64>,
    weights_1d: Vec<f64>,
    /// One row-major `K x K` table per correlation grid index.
    weights_2d: Vec<Vec<f64>>,
    k_theta: usize,
    prior_thetas: Vec<(f64, f64)>,
}

impl QuadratureCache {
    /// Cache with `k` latent points and the default copula-parameter grid.
    pub fn build(k: usize) -> Result<Self> {
        Self::with_theta_grid(k, DEFAULT_THETA_GRID)
    }

    pub fn with_theta_grid(k: usize, k_theta: usize) -> Result<Self> {
        if k < 3 || k % 2 == 0 {
            return Err(Error::Config(format!("latent grid size must be odd and at least 3, got {k}")));
        }
        let prior_thetas = theta_grid(ThetaDist::Prior, k_theta)?;
        let lo = normal::quantile(0.01)?;
        let hi = -lo;
        let step = (hi - lo) / (k - 1) as f64;
        let mut points: Vec<f64> = (0..k).map(|i| lo + step * i as f64).collect();
        points[k / 2] = 0.0;
        for i in 0..k / 2 {
            points[k - 1 - i] = -points[i];
        }
        let mut bounds = Vec::with_capacity(k + 1);
        bounds.push(f64::NEG_INFINITY);
        bounds.extend(points.windows(2).map(|w| 0.5 * (w[0] + w[1])));
        bounds.push(f64::INFINITY);

        let mut weights_1d: Vec<f64> = bounds
            .windows(2)
            .map(|b| upper_tail(b[0]) - upper_tail(b[1]))
            .collect();
        for i in 0..k / 2 {
            weights_1d[k - 1 - i] = weights_1d[i];
        }
        normalize(&mut weights_1d);

        let gl = GaussLegendre::new(GL_DEGREE.try_into().expect("nonzero degree"));
        let mut weights_2d = vec![Vec::new(); N_SIGMA];
        for idx in N_SIGMA / 2..N_SIGMA {
            let w = rectangle_masses(sigma_value(idx), &bounds, &gl);
            weights_2d[N_SIGMA - 1 - idx] = reflect(&w, k);
            weights_2d[idx] = w;
        }
        Ok(QuadratureCache {
            points,
            weights_1d,
            weights_2d,
            k_theta,
            prior_thetas,
        })
    }

    pub fn k(&self) -> usize {
        self.points.len()
    }

    pub fn k_theta(&self) -> usize {
        self.k_theta
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn weights_1d(&self) -> &[f64] {
        &self.weights_1d
    }

    /// Bivariate masses at correlation grid index `idx`, row-major `[k * K + l]`.
    pub fn weights_2d_at(&self, idx: usize) -> &[f64] {
        &self.weights_2d[idx]
    }

    /// Bivariate masses for an on-grid correlation.
    pub fn weights_2d(&self, sigma: f64) -> Result<&[f64]> {
        Ok(&self.weights_2d[sigma_index(sigma)?])
    }

    /// Prior copula-parameter grid with this cache's resolution.
    pub fn prior_thetas(&self) -> &[(f64, f64)] {
        &self.prior_thetas
    }

    /// `sum_{k,l} w_kl(sigma) f(x_k, x_l)`.
    pub fn integrate_pair_latent(&self, mut f: impl FnMut(f64, f64) -> f64, sigma: f64) -> Result<f64> {
        let w = self.weights_2d(sigma)?;
        let k = self.k();
        let mut total = 0.0;
        for (a, &xa) in self.points.iter().enumerate() {
            for (b, &xb) in self.points.iter().enumerate() {
                total += w[a * k + b] * f(xa, xb);
            }
        }
        Ok(total)
    }

    /// `sum_k w_k v_k` for values already evaluated on the grid.
    pub fn integrate_latent_1d_values(&self, values: &[f64]) -> f64 {
        values.iter().zip(&self.weights_1d).map(|(v, w)| v * w).sum()
    }

    /// `sum_k w_k f(x_k)`.
    pub fn integrate_latent_1d(&self, mut f: impl FnMut(f64) -> f64) -> f64 {
        self.points
            .iter()
            .zip(&self.weights_1d)
            .map(|(&x, &w)| w * f(x))
            .sum()
    }
}

/// `P(X > x)` without cancellation in the right tail.
fn upper_tail(x: f64) -> f64 {
    normal::cdf(-x)
}

fn normalize(w: &mut [f64]) {
    let s: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= s);
}

/// Masses at `-sigma` from masses at `sigma`: flip the second coordinate.
fn reflect(w: &[f64], k: usize) -> Vec<f64> {
    let mut out = vec![0.0; k * k];
    for a in 0..k {
        for b in 0..k {
            out[a * k + b] = w[a * k + (k - 1 - b)];
        }
    }
    out
}

/// Bivariate standard normal masses of the grid squares at correlation
/// `sigma`, by integrating the conditional normal over each row strip.
/// The table is symmetrized over the exchange and point-reflection
/// symmetries of the distribution and renormalized.
fn rectangle_masses(sigma: f64, bounds: &[f64], gl: &GaussLegendre) -> Vec<f64> {
    let k = bounds.len() - 1;
    let s = (1.0 - sigma * sigma).sqrt();
    let mut w = vec![0.0; k * k];
    let strip = |x: f64, out: &mut [f64]| {
        let dens = normal::pdf(x);
        let mut prev = 0.0;
        for (l, o) in out.iter_mut().enumerate() {
            let next = if l + 1 == k {
                1.0
            } else {
                normal::cdf((bounds[l + 1] - sigma * x) / s)
            };
            *o = dens * (next - prev);
            prev = next;
        }
    };
    for a in 0..k {
        let lo = bounds[a].max(-TAIL_CUT);
        let hi = bounds[a + 1].min(TAIL_CUT);
        let row = adaptive_vector(&strip, lo, hi, k, gl, RECT_TOL, 0);
        w[a * k..(a + 1) * k].copy_from_slice(&row);
    }
    let mut sym = vec![0.0; k * k];
    for a in 0..k {
        for b in 0..k {
            let (ra, rb) = (k - 1 - a, k - 1 - b);
            sym[a * k + b] =
                0.25 * (w[a * k + b] + w[b * k + a] + w[ra * k + rb] + w[rb * k + ra]);
        }
    }
    normalize(&mut sym);
    sym
}

fn gl_vector(f: &impl Fn(f64, &mut [f64]), a: f64, b: f64, n: usize, gl: &GaussLegendre) -> Vec<f64> {
    let (mid, half) = (0.5 * (a + b), 0.5 * (b - a));
    let mut acc = vec![0.0; n];
    let mut buf = vec![0.0; n];
    for &(x, w) in gl.as_node_weight_pairs() {
        f(mid + half * x, &mut buf);
        for (s, v) in acc.iter_mut().zip(&buf) {
            *s += w * half * v;
        }
    }
    acc
}

/// Adaptive bisection of a vector-valued integral until the whole-interval
/// and two-halves estimates agree in every component.
fn adaptive_vector(
    f: &impl Fn(f64, &mut [f64]),
    a: f64,
    b: f64,
    n: usize,
    gl: &GaussLegendre,
    tol: f64,
    depth: usize,
) -> Vec<f64> {
    let whole = gl_vector(f, a, b, n, gl);
    let m = 0.5 * (a + b);
    let mut left = gl_vector(f, a, m, n, gl);
    let right = gl_vector(f, m, b, n, gl);
    let err = whole
        .iter()
        .zip(left.iter().zip(&right))
        .map(|(w, (l, r))| (w - l - r).abs())
        .fold(0.0, f64::max);
    if err <= tol || depth >= 30 {
        for (l, r) in left.iter_mut().zip(&right) {
            *l += r;
        }
        return left;
    }
    let mut out = adaptive_vector(f, a, m, n, gl, 0.5 * tol, depth + 1);
    let r = adaptive_vector(f, m, b, n, gl, 0.5 * tol, depth + 1);
    for (o, v) in out.iter_mut().zip(&r) {
        *o += v;
    }
    out
}
