use std::f64::consts::{FRAC_1_SQRT_2, PI, SQRT_2};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use statrs::function::erf::{erfc, erfc_inv};

use crate::error::Error;

/// Linear predictors are clamped to this magnitude before any exponentiation.
pub const PREDICTOR_CLAMP: f64 = 35.0;

const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// Cumulative distribution used to map a linear predictor onto a pass probability.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LinkFunction {
    Logit,
    Probit,
    Cauchit,
    /// Experimental: `F(s) = min(e^s, 1)`.
    Log,
    /// Experimental: complementary log-log.
    Cloglog,
}

pub const ALL_LINKS: [LinkFunction; 5] =
    [LinkFunction::Logit, LinkFunction::Probit, LinkFunction::Cauchit, LinkFunction::Log, LinkFunction::Cloglog];

#[inline]
fn clamp(s: f64) -> f64 {
    s.clamp(-PREDICTOR_CLAMP, PREDICTOR_CLAMP)
}

/// `log(1 + e^x)` without overflow.
#[inline]
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

#[inline]
pub fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Logistic density `e^x / (1 + e^x)^2`.
#[inline]
pub fn logistic_density(x: f64) -> f64 {
    let e = (-x.abs()).exp();
    e / ((1.0 + e) * (1.0 + e))
}

#[inline]
pub fn std_normal_pdf(x: f64) -> f64 {
    INV_SQRT_2PI * (-0.5 * x * x).exp()
}

#[inline]
pub fn std_normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x * FRAC_1_SQRT_2)
}

/// Value and first three derivatives (in the predictor) of one Bernoulli log-likelihood term.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TermDerivatives {
    pub value: f64,
    pub d1: f64,
    pub d2: f64,
    pub d3: f64,
}

impl LinkFunction {
    pub fn is_experimental(self) -> bool {
        matches!(self, LinkFunction::Log | LinkFunction::Cloglog)
    }

    pub fn name(self) -> &'static str {
        match self {
            LinkFunction::Logit => "logit",
            LinkFunction::Probit => "probit",
            LinkFunction::Cauchit => "cauchit",
            LinkFunction::Log => "log",
            LinkFunction::Cloglog => "cloglog",
        }
    }

    pub fn cdf(self, s: f64) -> f64 {
        let s = clamp(s);
        match self {
            LinkFunction::Logit => logistic(s),
            LinkFunction::Probit => std_normal_cdf(s),
            LinkFunction::Cauchit => 0.5 + s.atan() / PI,
            LinkFunction::Log => s.exp().min(1.0),
            LinkFunction::Cloglog => -(-s.exp()).exp_m1(),
        }
    }

    pub fn pdf(self, s: f64) -> f64 {
        let s = clamp(s);
        match self {
            LinkFunction::Logit => logistic_density(s),
            LinkFunction::Probit => std_normal_pdf(s),
            LinkFunction::Cauchit => 1.0 / (PI * (1.0 + s * s)),
            LinkFunction::Log => {
                if s < 0.0 {
                    s.exp()
                } else {
                    0.0
                }
            }
            LinkFunction::Cloglog => {
                let e = s.exp();
                e * (-e).exp()
            }
        }
    }

    /// Derivative of the density.
    pub fn pdf_prime(self, s: f64) -> f64 {
        let s = clamp(s);
        match self {
            LinkFunction::Logit => {
                let f = logistic_density(s);
                f * (1.0 - 2.0 * logistic(s))
            }
            LinkFunction::Probit => -s * std_normal_pdf(s),
            LinkFunction::Cauchit => {
                let q = 1.0 + s * s;
                -2.0 * s / (PI * q * q)
            }
            LinkFunction::Log => {
                if s < 0.0 {
                    s.exp()
                } else {
                    0.0
                }
            }
            LinkFunction::Cloglog => {
                let e = s.exp();
                e * (-e).exp() * (1.0 - e)
            }
        }
    }

    /// `log F(s)`.
    pub fn log_cdf(self, s: f64) -> f64 {
        let s = clamp(s);
        match self {
            LinkFunction::Logit => -softplus(-s),
            LinkFunction::Probit => (0.5 * erfc(-s * FRAC_1_SQRT_2)).ln(),
            LinkFunction::Cauchit => (0.5 + s.atan() / PI).ln(),
            LinkFunction::Log => s.min(0.0),
            LinkFunction::Cloglog => (-(-s.exp()).exp_m1()).ln(),
        }
    }

    /// `log(1 - F(s))`.
    pub fn log_ccdf(self, s: f64) -> f64 {
        let s = clamp(s);
        match self {
            LinkFunction::Logit => -softplus(s),
            LinkFunction::Probit => (0.5 * erfc(s * FRAC_1_SQRT_2)).ln(),
            LinkFunction::Cauchit => (0.5 - s.atan() / PI).ln(),
            LinkFunction::Log => {
                if s < 0.0 {
                    (-s.exp_m1()).ln()
                } else {
                    f64::NEG_INFINITY
                }
            }
            LinkFunction::Cloglog => -s.exp(),
        }
    }

    /// Inverse of the cdf for `p` in `(0, 1)`.
    pub fn quantile(self, p: f64) -> f64 {
        match self {
            LinkFunction::Logit => (p / (1.0 - p)).ln(),
            LinkFunction::Probit => -SQRT_2 * erfc_inv(2.0 * p),
            LinkFunction::Cauchit => (PI * (p - 0.5)).tan(),
            LinkFunction::Log => p.ln(),
            LinkFunction::Cloglog => (-(-p).ln_1p()).ln(),
        }
    }

    /// Log-likelihood of a binary outcome at predictor `s`, with derivatives in `s`.
    pub fn term_derivatives(self, y: bool, s: f64) -> TermDerivatives {
        if self == LinkFunction::Logit {
            let mu = logistic(s);
            let w = mu * (1.0 - mu);
            let value = if y { -softplus(-s) } else { -softplus(s) };
            let target = if y { 1.0 } else { 0.0 };
            return TermDerivatives { value, d1: target - mu, d2: -w, d3: -w * (1.0 - 2.0 * mu) };
        }
        let value = if y { self.log_cdf(s) } else { self.log_ccdf(s) };
        let (d1, d2) = self.generic_score(y, s);
        let h = 1e-4;
        let d3 = (self.generic_score(y, s + h).1 - self.generic_score(y, s - h).1) / (2.0 * h);
        TermDerivatives { value, d1, d2, d3 }
    }

    fn generic_score(self, y: bool, s: f64) -> (f64, f64) {
        let f = self.pdf(s);
        let fp = self.pdf_prime(s);
        if y {
            let big_f = self.cdf(s);
            (f / big_f, (fp * big_f - f * f) / (big_f * big_f))
        } else {
            let q = 1.0 - self.cdf(s);
            (-f / q, -(fp * q + f * f) / (q * q))
        }
    }
}

impl fmt::Display for LinkFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for LinkFunction {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "logit" => Ok(LinkFunction::Logit),
            "probit" => Ok(LinkFunction::Probit),
            "cauchit" => Ok(LinkFunction::Cauchit),
            "log" => Ok(LinkFunction::Log),
            "cloglog" => Ok(LinkFunction::Cloglog),
            other => Err(Error::InvalidInput(format!("unknown link function '{other}'"))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid() -> Vec<f64> {
        (0..1000).map(|k| -10.0 + 20.0 * k as f64 / 999.0).collect()
    }

    #[test]
    fn cdf_limits() {
        for link in ALL_LINKS {
            assert!(link.cdf(-1e6) < 0.01, "{link}");
            assert!(1.0 - link.cdf(1e6) < 0.01, "{link}");
        }
        // The clamp leaves logit essentially exact at the extremes.
        assert!(LinkFunction::Logit.cdf(-1e6) < 1e-15);
    }

    #[test]
    fn cdf_monotone_and_density_matches_derivative() {
        let h = 1e-5;
        for link in ALL_LINKS {
            let g = grid();
            for w in g.windows(2) {
                let (a, b) = (link.cdf(w[0]), link.cdf(w[1]));
                assert!(b >= a, "{link} not monotone at {}", w[0]);
                // Strictness holds wherever the cdf is not saturated in double precision.
                let interior = a > 1e-12 && b < 1.0 - 1e-12;
                let flat_part = link == LinkFunction::Log && w[0] >= 0.0;
                if interior && !flat_part {
                    assert!(b > a, "{link} not strictly increasing at {}", w[0]);
                }
            }
            for &s in &g {
                assert!(link.pdf(s) >= 0.0);
                let fd = (link.cdf(s + h) - link.cdf(s - h)) / (2.0 * h);
                assert!((fd - link.pdf(s)).abs() <= 1e-6, "{link} at {s}: {fd} vs {}", link.pdf(s));
                let fdp = (link.pdf(s + h) - link.pdf(s - h)) / (2.0 * h);
                assert!((fdp - link.pdf_prime(s)).abs() <= 1e-5, "{link} f' at {s}");
            }
        }
    }

    #[test]
    fn symmetric_links() {
        for link in [LinkFunction::Logit, LinkFunction::Probit, LinkFunction::Cauchit] {
            for &s in &grid() {
                assert!((link.cdf(s) + link.cdf(-s) - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn log_forms_agree_with_cdf() {
        for link in ALL_LINKS {
            for &s in &grid() {
                let p = link.cdf(s);
                if p > 1e-300 {
                    assert!((link.log_cdf(s) - p.ln()).abs() < 1e-9, "{link} {s}");
                }
                if p < 1.0 - 1e-9 {
                    let rel = (link.log_ccdf(s) - (1.0 - p).ln()).abs() / (1.0 - p).ln().abs().max(1.0);
                    assert!(rel < 1e-6, "{link} {s}");
                }
            }
        }
    }

    #[test]
    fn quantile_inverts_cdf() {
        for link in ALL_LINKS {
            for p in [0.01, 0.2, 0.5, 0.77, 0.99] {
                let q = link.quantile(p);
                if link == LinkFunction::Log && q >= 0.0 {
                    continue;
                }
                assert!((link.cdf(q) - p).abs() < 1e-10, "{link} {p}");
            }
        }
    }

    #[test]
    fn term_derivatives_match_finite_differences() {
        let h = 1e-4;
        for link in [LinkFunction::Logit, LinkFunction::Probit, LinkFunction::Cauchit, LinkFunction::Cloglog] {
            for y in [true, false] {
                for s in [-3.0, -0.7, 0.0, 0.4, 2.5] {
                    let t = link.term_derivatives(y, s);
                    let up = link.term_derivatives(y, s + h);
                    let dn = link.term_derivatives(y, s - h);
                    assert!(((up.value - dn.value) / (2.0 * h) - t.d1).abs() < 1e-6, "{link} d1");
                    assert!(((up.d1 - dn.d1) / (2.0 * h) - t.d2).abs() < 1e-6, "{link} d2");
                    assert!(((up.d2 - dn.d2) / (2.0 * h) - t.d3).abs() < 1e-5, "{link} d3");
                }
            }
        }
    }

    #[test]
    fn stable_at_clamp() {
        let t = LinkFunction::Logit.term_derivatives(false, 800.0);
        assert!(t.value.is_finite());
        assert!(LinkFunction::Probit.log_cdf(-1e4).is_finite());
        assert!(LinkFunction::Cloglog.log_ccdf(1e4).is_finite());
        assert_eq!(LinkFunction::Log.log_ccdf(0.5), f64::NEG_INFINITY);
    }
}
