//! Frank copula, the theta squashing map and the probit measurement link.

use crate::normal;
use crate::{Error, Result};

/// Half-width of the open interval that copula parameters live in.
pub const THETA_BOUND: f64 = 25.0;

/// Below this magnitude the Frank copula is replaced by its independence limit.
pub const FRANK_EPS: f64 = 1e-6;

/// Frank copula CDF `C(u, v; theta)`.
pub fn frank_cdf(u: f64, v: f64, theta: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&u) || !(0.0..=1.0).contains(&v) {
        return Err(Error::Domain(format!(
            "copula arguments must lie in [0, 1], got ({u}, {v})"
        )));
    }
    if !theta.is_finite() {
        return Err(Error::Domain(format!("non-finite copula parameter {theta}")));
    }
    let k = FrankKernel::new(theta);
    Ok(k.eval(u, k.pre(u), v, k.pre(v)))
}

/// Per-argument values of the Frank copula for a fixed theta.
#[derive(Debug, Clone, Copy, Default)]
pub(crate) struct FrankPre {
    /// `expm1(-theta * u)`.
    em: f64,
    /// `exp(-theta * u)`, only for positive theta.
    e: f64,
    /// `expm1(-theta * (1 - u))`, only for positive theta.
    ec: f64,
}

/// Frank copula with the per-argument transcendental work split out, so that
/// grids of evaluations can reuse it across points.
#[derive(Debug, Clone, Copy)]
pub(crate) struct FrankKernel {
    theta: f64,
    denom: f64,
    independent: bool,
}

impl FrankKernel {
    pub(crate) fn new(theta: f64) -> Self {
        let independent = theta.abs() <= FRANK_EPS;
        FrankKernel {
            theta,
            denom: if independent { 1.0 } else { (-theta).exp_m1() },
            independent,
        }
    }

    #[inline]
    pub(crate) fn pre(&self, u: f64) -> FrankPre {
        if self.independent {
            return FrankPre::default();
        }
        let em = (-self.theta * u).exp_m1();
        if self.theta > 0.0 {
            FrankPre {
                em,
                e: (-self.theta * u).exp(),
                ec: (-self.theta * (1.0 - u)).exp_m1(),
            }
        } else {
            FrankPre { em, e: 0.0, ec: 0.0 }
        }
    }

    /// `u`, `v` are the raw arguments, `pu`, `pv` their [`FrankKernel::pre`] values.
    #[inline]
    pub(crate) fn eval(&self, u: f64, pu: FrankPre, v: f64, pv: FrankPre) -> f64 {
        if self.independent {
            return u * v;
        }
        let r = pu.em * pv.em / self.denom;
        let log_arg = if r > -0.5 {
            r.ln_1p()
        } else {
            // 1 + r = (e_u (1 - e_v) + e_v - e_1) / (1 - e_1), every term non-negative.
            let s = -pu.e * pv.em - pv.e * pv.ec;
            (s / -self.denom).ln()
        };
        let c = -log_arg / self.theta;
        let hi = u.min(v);
        c.clamp((u + v - 1.0).max(0.0).min(hi), hi)
    }
}

/// Maps an unconstrained `z` to a copula parameter in `(-25, 25)`:
/// `theta = 50 / (1 + exp(-z)) - 25`.
#[inline]
pub fn squash(z: f64) -> f64 {
    // 50 * sigmoid(z) - 25 == 25 * tanh(z / 2), the latter without cancellation near 0.
    THETA_BOUND * (0.5 * z).tanh()
}

/// Inverse of [`squash`].
pub fn unsquash(theta: f64) -> Result<f64> {
    if !(theta.abs() < THETA_BOUND) {
        return Err(Error::Domain(format!(
            "copula parameter must lie in (-25, 25), got {theta}"
        )));
    }
    Ok(2.0 * (theta / THETA_BOUND).atanh())
}

/// Argument of a univariate conditional CDF for a binary item. `Below` is the
/// "y - 1 with y = 0" value that inclusion-exclusion produces.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum CdfArg {
    Below,
    Zero,
    One,
    Infinity,
}

impl CdfArg {
    pub fn from_level(y: i8) -> Result<Self> {
        match y {
            -1 => Ok(CdfArg::Below),
            0 => Ok(CdfArg::Zero),
            1 => Ok(CdfArg::One),
            _ => Err(Error::Domain(format!("CDF argument {y} outside {{-1, 0, 1}}"))),
        }
    }
}

/// `P(Y = 0 | x)` under the probit link.
#[inline]
pub fn prob_zero(x: f64, slope: f64, intercept: f64) -> f64 {
    normal::cdf(-(slope * x + intercept))
}

/// Conditional CDF `P(Y <= y | x)` of a probit item.
pub fn probit_cond_cdf(y: CdfArg, x: f64, slope: f64, intercept: f64) -> f64 {
    match y {
        CdfArg::Below => 0.0,
        CdfArg::Zero => prob_zero(x, slope, intercept),
        CdfArg::One | CdfArg::Infinity => 1.0,
    }
}

/// Intercept that makes the marginal `P(Y = 0)` under a standard normal
/// factor equal `p0_hat`.
pub fn intercept_from_marginal(slope: f64, p0_hat: f64) -> Result<f64> {
    if !(p0_hat > 0.0 && p0_hat < 1.0) {
        return Err(Error::Domain(format!(
            "degenerate marginal P(Y=0) = {p0_hat}; need a value in (0, 1)"
        )));
    }
    Ok(-(1.0 + slope * slope).sqrt() * normal::quantile(p0_hat)?)
}

/// Marginal `P(Y = 0)` implied by `(slope, intercept)` under a standard normal factor.
pub fn marginal_prob_zero(slope: f64, intercept: f64) -> f64 {
    normal::cdf(-intercept / (1.0 + slope * slope).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn frank_examples() {
        assert!((frank_cdf(0.3, 1.0, 7.0).unwrap() - 0.3).abs() < 1e-14);
        assert_eq!(frank_cdf(0.5, 0.5, 1e-9).unwrap(), 0.25);
        // -ln(1 + (e^{-1/2} - 1)^2 / (e^{-1} - 1)), evaluated to 30 digits.
        let want = 0.280_929_803_620_161_4;
        assert!((frank_cdf(0.5, 0.5, 1.0).unwrap() - want).abs() < 1e-12);
    }

    #[test]
    fn frank_relative_accuracy_near_the_corners() {
        let cases = [
            (0.999, 0.9995, 24.0, 0.998_511_787_953_283_504_2),
            (1.0 - 2f64.powi(-30), 0.7, 20.0, 0.699_999_999_997_691_439_6),
            (0.9, 0.95, 24.5, 0.892_305_208_707_713_294_4),
            (0.3, 0.4, -24.0, 3.107_082_446_934_161_789_8e-5),
        ];
        for (u, v, t, want) in cases {
            let got = frank_cdf(u, v, t).unwrap();
            assert!(((got - want) / want).abs() < 1e-13, "C({u}, {v}; {t}) = {got}, want {want}");
        }
    }

    #[test]
    fn frank_rejects_out_of_range() {
        assert!(frank_cdf(-0.1, 0.5, 1.0).is_err());
        assert!(frank_cdf(0.5, 1.2, 1.0).is_err());
        assert!(frank_cdf(0.5, 0.5, f64::NAN).is_err());
    }

    #[test]
    fn squash_examples() {
        assert_eq!(squash(0.0), 0.0);
        assert!((squash(3f64.ln()) - 12.5).abs() < 1e-12);
        assert!((squash(30.0) - 25.0).abs() < 1e-10);
        assert!(unsquash(25.0).is_err());
        assert!(unsquash(-25.0).is_err());
        assert_eq!(unsquash(0.0).unwrap(), 0.0);
    }

    #[test]
    fn probit_examples() {
        assert_eq!(probit_cond_cdf(CdfArg::Zero, 0.0, 3.0, 0.0), 0.5);
        let v = probit_cond_cdf(CdfArg::Zero, 1.0, 1.0, 0.0);
        assert!((v - 0.158_655_253_931_457_05).abs() < 1e-14);
        assert_eq!(probit_cond_cdf(CdfArg::One, -4.0, 2.0, 1.0), 1.0);
        assert_eq!(probit_cond_cdf(CdfArg::Below, -4.0, 2.0, 1.0), 0.0);
    }

    #[test]
    fn intercept_examples() {
        assert_eq!(intercept_from_marginal(0.0, 0.5).unwrap(), 0.0);
        assert_eq!(intercept_from_marginal(1.0, 0.5).unwrap(), 0.0);
        let b = intercept_from_marginal(1.0, 0.2).unwrap();
        assert!((b - 1.190_232_162_899_989_7).abs() < 1e-9, "{b}");
        assert!(intercept_from_marginal(1.0, 0.0).is_err());
        assert!(intercept_from_marginal(1.0, 1.0).is_err());
    }

    #[test]
    fn intercept_matches_monte_carlo_marginal() {
        use rand::SeedableRng;
        use rand_distr::{Distribution, StandardNormal};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let (slope, p0) = (1.0, 0.2);
        let b = intercept_from_marginal(slope, p0).unwrap();
        let n = 200_000;
        let vals: Vec<f64> = (0..n)
            .map(|_| {
                let x: f64 = StandardNormal.sample(&mut rng);
                probit_cond_cdf(CdfArg::Zero, x, slope, b)
            })
            .collect();
        let mean = vals.iter().sum::<f64>() / n as f64;
        let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        let se = (var / n as f64).sqrt();
        assert!((mean - p0).abs() < 3.0 * se, "{mean} vs {p0} (se {se})");
    }

    #[test]
    fn probit_decreasing_in_x_for_positive_slope() {
        let mut prev = 1.0;
        for i in -40..=40 {
            let x = i as f64 * 0.1;
            let v = probit_cond_cdf(CdfArg::Zero, x, 0.7, -0.3);
            assert!(v < prev);
            prev = v;
        }
    }

    proptest! {
        #[test]
        fn frank_two_increasing(
            u1 in 0.0f64..1.0, du in 0.0f64..1.0,
            v1 in 0.0f64..1.0, dv in 0.0f64..1.0,
            theta in -24.0f64..24.0,
        ) {
            let u2 = u1 + du * (1.0 - u1);
            let v2 = v1 + dv * (1.0 - v1);
            let c = |u, v| frank_cdf(u, v, theta).unwrap();
            let vol = c(u2, v2) - c(u1, v2) - c(u2, v1) + c(u1, v1);
            prop_assert!(vol >= -1e-12, "volume {vol}");
        }

        #[test]
        fn frank_boundaries(u in 0.0f64..=1.0, theta in -24.0f64..24.0) {
            prop_assert!((frank_cdf(u, 1.0, theta).unwrap() - u).abs() <= 1e-12);
            prop_assert!((frank_cdf(1.0, u, theta).unwrap() - u).abs() <= 1e-12);
            prop_assert!(frank_cdf(u, 0.0, theta).unwrap().abs() <= 1e-12);
            prop_assert!(frank_cdf(0.0, u, theta).unwrap().abs() <= 1e-12);
        }

        #[test]
        fn frank_continuous_at_zero(u in 0.0f64..=1.0, v in 0.0f64..=1.0) {
            for eps in [FRANK_EPS, -FRANK_EPS, 1.001 * FRANK_EPS, -1.001 * FRANK_EPS] {
                prop_assert!((frank_cdf(u, v, eps).unwrap() - u * v).abs() <= 1e-6);
            }
        }

        #[test]
        fn squash_round_trip(z in -10.0f64..10.0) {
            prop_assert!((unsquash(squash(z)).unwrap() - z).abs() <= 1e-10);
        }

        #[test]
        fn squash_increasing(a in -20.0f64..20.0, d in 1e-3f64..5.0) {
            prop_assert!(squash(a + d) > squash(a));
        }
    }
}
