//! Rating data, model families and pointwise probability evaluation.
//!
//! Every family maps a (student, rater, item) triple to a pass probability
//! `mu = F(S)`. Abilities enter on the standardized scale `theta'` with the
//! logit-scale ability `sigma * theta'`:
//!
//! | family | predictor `S` |
//! |--------|---------------|
//! | TFM    | `sigma*theta' - eta_r - delta_i + alpha` |
//! | GMF    | `rho_r*sigma*theta' - eta_r - delta_i + alpha` |
//! | PROBIT | `(sigma*theta' - delta_i + alpha) / sigma_r - eta_r` (so `alpha_r = eta_r*sigma_r`) |
//! | HRM    | mixture over a latent true category, see [`hrm_components`] |
//!
//! Derivatives with respect to ability are taken in `theta'`.

mod data;
pub mod link;
mod params;

pub use data::{Observation, RatingDataset, RatingRecord};
pub use link::{LinkFunction, TermDerivatives};
pub(crate) use params::{mean, variance};
pub use params::{HrmLatentSpec, HrmSignConvention, ModelFamily, ModelSpec, ParameterSet};

use crate::error::{Error, Result};
use link::{logistic, logistic_density};

fn check_index(kind: &'static str, index: usize, len: usize) -> Result<()> {
    if index < len {
        Ok(())
    } else {
        Err(Error::IndexOutOfRange { kind, index, len })
    }
}

fn check_indices(params: &ParameterSet, n: usize, r: usize, i: usize) -> Result<()> {
    check_index("student", n, params.theta_prime.len())?;
    check_index("rater", r, params.eta.len())?;
    check_index("item", i, params.delta.len())
}

fn noise_scale(params: &ParameterSet, r: usize) -> Result<f64> {
    let scales = params
        .noise_scale
        .as_ref()
        .ok_or_else(|| Error::ParameterMismatch("probit family needs noise_scale".into()))?;
    let s = *scales.get(r).ok_or(Error::IndexOutOfRange { kind: "rater", index: r, len: scales.len() })?;
    if s > 0.0 {
        Ok(s)
    } else {
        Err(Error::ParameterMismatch(format!("noise scale must be positive, got {s}")))
    }
}

/// Latent-class quantities of the hierarchical rater model for one triple.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HrmComponents {
    /// `P(true category = 1)` from the Rasch level.
    pub latent_pass: f64,
    /// `P(Y = 1 | true category = 0)`.
    pub pass_given_fail: f64,
    /// `P(Y = 1 | true category = 1)`.
    pub pass_given_pass: f64,
}

/// Rater-level predictor of the HRM for a given latent true category.
pub fn hrm_level1_predictor(
    spec: &ModelSpec,
    params: &ParameterSet,
    r: usize,
    i: usize,
    latent_pass: bool,
) -> Result<f64> {
    let hrm =
        params.hrm.as_ref().ok_or_else(|| Error::ParameterMismatch("HRM family needs criteria and slopes".into()))?;
    check_index("rater", r, hrm.criteria.len())?;
    let row = hrm.slopes.get(r).ok_or(Error::IndexOutOfRange { kind: "rater", index: r, len: hrm.slopes.len() })?;
    check_index("item", i, row.len())?;
    let xi = if latent_pass { 1.0 } else { 0.0 };
    let (c, a) = (hrm.criteria[r], row[i]);
    Ok(match spec.hrm_sign_convention {
        HrmSignConvention::AsPrinted => c - a * xi,
        HrmSignConvention::SdtStandard => a * xi - c,
    })
}

pub fn hrm_components(spec: &ModelSpec, params: &ParameterSet, n: usize, r: usize, i: usize) -> Result<HrmComponents> {
    check_indices(params, n, r, i)?;
    hrm_components_at(spec, params, params.theta_prime[n], r, i)
}

pub(crate) fn hrm_components_at(
    spec: &ModelSpec,
    params: &ParameterSet,
    theta_prime: f64,
    r: usize,
    i: usize,
) -> Result<HrmComponents> {
    check_index("item", i, params.delta.len())?;
    let level2 = params.sigma * theta_prime - params.delta[i] + params.alpha;
    Ok(HrmComponents {
        latent_pass: logistic(level2),
        pass_given_fail: spec.link.cdf(hrm_level1_predictor(spec, params, r, i, false)?),
        pass_given_pass: spec.link.cdf(hrm_level1_predictor(spec, params, r, i, true)?),
    })
}

/// Linear predictor `S` for the triple.
///
/// For the HRM this is the Rasch-level predictor `sigma*theta' - delta_i + alpha`
/// of the latent true category; the rater-level predictors come from
/// [`hrm_level1_predictor`].
pub fn linear_predictor(spec: &ModelSpec, params: &ParameterSet, n: usize, r: usize, i: usize) -> Result<f64> {
    check_indices(params, n, r, i)?;
    predictor_at(spec, params, params.theta_prime[n], r, i)
}

/// [`linear_predictor`] at an arbitrary standardized ability.
pub fn predictor_at(spec: &ModelSpec, params: &ParameterSet, theta_prime: f64, r: usize, i: usize) -> Result<f64> {
    check_index("rater", r, params.eta.len())?;
    check_index("item", i, params.delta.len())?;
    let theta = params.sigma * theta_prime;
    let base = -params.delta[i] + params.alpha;
    match spec.family {
        ModelFamily::Tfm => Ok(theta - params.eta[r] + base),
        ModelFamily::Gmf => {
            let rho =
                *params.rho.get(r).ok_or(Error::IndexOutOfRange { kind: "rater", index: r, len: params.rho.len() })?;
            Ok(rho * theta - params.eta[r] + base)
        }
        ModelFamily::Probit => Ok((theta + base) / noise_scale(params, r)? - params.eta[r]),
        ModelFamily::Hrm => Ok(theta + base),
    }
}

/// Pass probability `mu_nri`.
pub fn success_probability(spec: &ModelSpec, params: &ParameterSet, n: usize, r: usize, i: usize) -> Result<f64> {
    check_indices(params, n, r, i)?;
    success_probability_at(spec, params, params.theta_prime[n], r, i)
}

pub fn success_probability_at(
    spec: &ModelSpec,
    params: &ParameterSet,
    theta_prime: f64,
    r: usize,
    i: usize,
) -> Result<f64> {
    match spec.family {
        ModelFamily::Hrm => {
            let c = hrm_components_at(spec, params, theta_prime, r, i)?;
            Ok(c.latent_pass * c.pass_given_pass + (1.0 - c.latent_pass) * c.pass_given_fail)
        }
        _ => Ok(spec.link.cdf(predictor_at(spec, params, theta_prime, r, i)?)),
    }
}

/// `d mu / d theta'` for the triple.
pub fn ability_slope(spec: &ModelSpec, params: &ParameterSet, n: usize, r: usize, i: usize) -> Result<f64> {
    check_indices(params, n, r, i)?;
    ability_slope_at(spec, params, params.theta_prime[n], r, i)
}

pub fn ability_slope_at(spec: &ModelSpec, params: &ParameterSet, theta_prime: f64, r: usize, i: usize) -> Result<f64> {
    let s = predictor_at(spec, params, theta_prime, r, i)?;
    let sigma = params.sigma;
    match spec.family {
        ModelFamily::Tfm => Ok(sigma * spec.link.pdf(s)),
        ModelFamily::Gmf => Ok(params.rho[r] * sigma * spec.link.pdf(s)),
        ModelFamily::Probit => Ok(sigma / noise_scale(params, r)? * spec.link.pdf(s)),
        ModelFamily::Hrm => {
            let c = hrm_components_at(spec, params, theta_prime, r, i)?;
            Ok((c.pass_given_pass - c.pass_given_fail) * sigma * logistic_density(s))
        }
    }
}

/// Bernoulli log-likelihood summed over all records.
///
/// Returns `-inf` only when a link saturates at exactly 0 or 1 against the
/// observed outcome (possible for the `log` link).
pub fn log_likelihood(spec: &ModelSpec, params: &ParameterSet, data: &RatingDataset) -> Result<f64> {
    let mut total = 0.0;
    for obs in data.observations() {
        total += record_log_likelihood(spec, params, obs)?;
    }
    Ok(total)
}

pub(crate) fn record_log_likelihood(spec: &ModelSpec, params: &ParameterSet, obs: &Observation) -> Result<f64> {
    check_index("student", obs.student, params.theta_prime.len())?;
    record_log_likelihood_at(spec, params, obs, params.theta_prime[obs.student])
}

/// Log-likelihood of one observation with the student's ability replaced by `theta_prime`.
pub(crate) fn record_log_likelihood_at(
    spec: &ModelSpec,
    params: &ParameterSet,
    obs: &Observation,
    theta_prime: f64,
) -> Result<f64> {
    let (r, i) = (obs.rater, obs.item);
    if spec.family == ModelFamily::Hrm {
        let mu = success_probability_at(spec, params, theta_prime, r, i)?;
        return Ok(if obs.score { mu.ln() } else { (1.0 - mu).ln() });
    }
    let s = predictor_at(spec, params, theta_prime, r, i)?;
    Ok(if obs.score { spec.link.log_cdf(s) } else { spec.link.log_ccdf(s) })
}

/// Fisher information about `theta'` carried by one rating:
/// `(d mu / d theta')^2 / (mu (1 - mu))`.
pub fn fisher_information(spec: &ModelSpec, params: &ParameterSet, n: usize, r: usize, i: usize) -> Result<f64> {
    let mu = success_probability(spec, params, n, r, i)?;
    if !(mu > 0.0 && mu < 1.0) {
        return Err(Error::DegenerateProbability(mu));
    }
    let slope = ability_slope(spec, params, n, r, i)?;
    Ok(slope * slope / (mu * (1.0 - mu)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn single(theta: f64, rho: f64, eta: f64, delta: f64, alpha: f64) -> ParameterSet {
        ParameterSet {
            theta_prime: vec![theta],
            sigma: 1.0,
            rho: vec![rho],
            eta: vec![eta],
            delta: vec![delta],
            alpha,
            noise_scale: None,
            hrm: None,
        }
    }

    fn hrm_single(theta: f64, c: f64, a: f64) -> ParameterSet {
        let mut p = single(theta, 1.0, 0.0, 0.0, 0.0);
        p.hrm = Some(HrmLatentSpec { criteria: vec![c], slopes: vec![vec![a]] });
        p
    }

    #[test]
    fn predictor_examples() {
        let zero = single(0.0, 1.0, 0.0, 0.0, 0.0);
        assert_eq!(linear_predictor(&ModelSpec::gmf(), &zero, 0, 0, 0).unwrap(), 0.0);

        let tfm = single(1.0, 1.0, 0.3, 0.5, 0.0);
        assert_relative_eq!(linear_predictor(&ModelSpec::tfm(), &tfm, 0, 0, 0).unwrap(), 0.2, epsilon = 1e-12);

        // alpha_r = 1, sigma_r = 2  =>  eta_r = 0.5
        let mut probit = single(0.0, 1.0, 0.5, 0.0, 0.0);
        probit.noise_scale = Some(vec![2.0]);
        assert_relative_eq!(linear_predictor(&ModelSpec::probit(), &probit, 0, 0, 0).unwrap(), -0.5);
    }

    #[test]
    fn predictor_errors() {
        let p = single(0.0, 1.0, 0.0, 0.0, 0.0);
        assert!(matches!(
            linear_predictor(&ModelSpec::gmf(), &p, 3, 0, 0),
            Err(Error::IndexOutOfRange { kind: "student", .. })
        ));
        assert!(matches!(linear_predictor(&ModelSpec::probit(), &p, 0, 0, 0), Err(Error::ParameterMismatch(_))));
        assert!(success_probability(&ModelSpec::hrm(), &p, 0, 0, 0).is_err());
    }

    #[test]
    fn probability_examples() {
        let p = single(0.0, 1.0, 0.0, 0.0, 0.0);
        assert_eq!(success_probability(&ModelSpec::gmf(), &p, 0, 0, 0).unwrap(), 0.5);
        let p = single(2.0, 1.0, 1.0, 0.0, 0.0);
        assert_relative_eq!(
            success_probability(&ModelSpec::gmf(), &p, 0, 0, 0).unwrap(),
            0.731_058_578_630_004_9,
            epsilon = 1e-12
        );
        for theta in [-3.0, 0.0, 2.5] {
            let h = hrm_single(theta, 0.0, 0.0);
            assert_eq!(success_probability(&ModelSpec::hrm(), &h, 0, 0, 0).unwrap(), 0.5);
        }
    }

    #[test]
    fn hrm_sign_conventions() {
        let h = hrm_single(0.0, 0.0, 3.0);
        let sdt = hrm_components(&ModelSpec::hrm(), &h, 0, 0, 0).unwrap();
        assert!(sdt.pass_given_pass > sdt.pass_given_fail);
        let printed = ModelSpec::hrm().with_hrm_convention(HrmSignConvention::AsPrinted);
        let pr = hrm_components(&printed, &h, 0, 0, 0).unwrap();
        assert!(pr.pass_given_pass < pr.pass_given_fail);
    }

    #[test]
    fn hrm_mixture_is_bounded_by_conditionals() {
        for &(c, a) in &[(0.5, 2.0), (-1.0, 4.0), (2.0, -1.5)] {
            for k in 0..41 {
                let theta = -4.0 + 0.2 * k as f64;
                let h = hrm_single(theta, c, a);
                let spec = ModelSpec::hrm();
                let comp = hrm_components(&spec, &h, 0, 0, 0).unwrap();
                let mu = success_probability(&spec, &h, 0, 0, 0).unwrap();
                let lo = comp.pass_given_fail.min(comp.pass_given_pass);
                let hi = comp.pass_given_fail.max(comp.pass_given_pass);
                assert!(mu >= lo - 1e-15 && mu <= hi + 1e-15);
            }
        }
    }

    #[test]
    fn log_likelihood_examples() {
        let p = single(0.0, 1.0, 0.0, 0.0, 0.0);
        let one = RatingDataset::from_records(vec![RatingRecord::new("s", "r", "i", 1)]).unwrap();
        assert_relative_eq!(log_likelihood(&ModelSpec::gmf(), &p, &one).unwrap(), 0.5f64.ln(), epsilon = 1e-12);

        let mut p2 = p.clone();
        p2.theta_prime = vec![0.0, 0.0];
        let two = RatingDataset::from_records(vec![
            RatingRecord::new("s1", "r", "i", 1),
            RatingRecord::new("s2", "r", "i", 0),
        ])
        .unwrap();
        assert_relative_eq!(log_likelihood(&ModelSpec::gmf(), &p2, &two).unwrap(), 2.0 * 0.5f64.ln(), epsilon = 1e-12);
    }

    #[test]
    fn fisher_examples() {
        let p = single(0.0, 1.0, 0.0, 0.0, 0.0);
        assert_relative_eq!(fisher_information(&ModelSpec::tfm(), &p, 0, 0, 0).unwrap(), 0.25, epsilon = 1e-15);
        for theta in [-2.0, 0.0, 3.0] {
            let flat = single(theta, 0.0, 0.4, 0.0, 0.0);
            assert_eq!(fisher_information(&ModelSpec::gmf(), &flat, 0, 0, 0).unwrap(), 0.0);
        }
        let mut probit = single(0.0, 1.0, 0.0, 0.0, 0.0);
        probit.noise_scale = Some(vec![1.0]);
        let phi0 = (2.0 * std::f64::consts::PI).sqrt().recip();
        let expected = phi0 * phi0 / 0.25;
        let got = fisher_information(&ModelSpec::probit(), &probit, 0, 0, 0).unwrap();
        assert_relative_eq!(got, expected, epsilon = 1e-12);
        assert_relative_eq!(got, 0.636_619_772_367_581_4, epsilon = 1e-12);
    }

    #[test]
    fn fisher_rejects_saturated_probability() {
        let mut p = single(0.0, 1.0, 0.0, 0.0, 0.0);
        p.theta_prime = vec![10.0];
        let spec = ModelSpec::gmf().with_link(LinkFunction::Log);
        assert!(matches!(fisher_information(&spec, &p, 0, 0, 0), Err(Error::DegenerateProbability(_))));
    }
}
