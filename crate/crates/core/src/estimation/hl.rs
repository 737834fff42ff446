//! Per-student hierarchical likelihood `h(θ') = Σ ℓ(S) - θ'²/2`.

use serde::{Deserialize, Serialize};

use super::FitConfig;
use crate::error::{Error, Result};
use crate::model::{ModelFamily, ModelSpec, Observation, ParameterSet, RatingDataset};

/// Relative size of `h` changes lost to rounding.
const ROUNDING: f64 = 1e-14;
/// Newton steps this small (relative) end the iteration.
const STEP_TOLERANCE: f64 = 1e-12;

/// Ability slope `a_r = ρ_r σ` of the linear predictor.
#[inline]
pub(crate) fn slope(spec: &ModelSpec, params: &ParameterSet, r: usize) -> f64 {
    match spec.family {
        ModelFamily::Tfm => params.sigma,
        _ => params.rho[r] * params.sigma,
    }
}

#[inline]
pub(crate) fn offset(params: &ParameterSet, obs: &Observation) -> f64 {
    -params.eta[obs.rater] - params.delta[obs.item] + params.alpha
}

pub(crate) fn check_family(spec: &ModelSpec) -> Result<()> {
    match spec.family {
        ModelFamily::Tfm | ModelFamily::Gmf => Ok(()),
        other => Err(Error::InvalidInput(format!("estimation supports the tfm and gmf families, not {other}"))),
    }
}

/// `h` and its first three derivatives at `theta` for one student.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HTerms {
    pub h: f64,
    pub d1: f64,
    pub d2: f64,
    pub d3: f64,
}

/// `h` and its derivatives in `θ` for student `n`.
pub fn student_terms(spec: &ModelSpec, params: &ParameterSet, data: &RatingDataset, n: usize, theta: f64) -> HTerms {
    let obs = data.observations();
    let mut t = HTerms { h: -0.5 * theta * theta, d1: -theta, d2: -1.0, d3: 0.0 };
    for &k in data.student_observations(n) {
        let o = &obs[k];
        let a = slope(spec, params, o.rater);
        let d = spec.link.term_derivatives(o.score, a * theta + offset(params, o));
        t.h += d.value;
        t.d1 += a * d.d1;
        t.d2 += a * a * d.d2;
        t.d3 += a * a * a * d.d3;
    }
    t
}

/// `h(θ)` only.
pub fn student_h(spec: &ModelSpec, params: &ParameterSet, data: &RatingDataset, n: usize, theta: f64) -> f64 {
    let obs = data.observations();
    let mut h = -0.5 * theta * theta;
    for &k in data.student_observations(n) {
        let o = &obs[k];
        let s = slope(spec, params, o.rater) * theta + offset(params, o);
        h += if o.score { spec.link.log_cdf(s) } else { spec.link.log_ccdf(s) };
    }
    h
}

/// Result of maximizing every student's `h`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HlProfile {
    /// Maximizers `θ*_n`.
    pub theta: Vec<f64>,
    /// `h(θ*_n)`.
    pub h: Vec<f64>,
    /// `h''(θ*_n)`.
    pub h2: Vec<f64>,
    /// Largest `|h'(θ*_n)|` at termination.
    pub max_abs_gradient: f64,
    pub newton_steps: usize,
    /// Step halvings used to keep the ascent monotone.
    pub halvings: usize,
}

impl HlProfile {
    /// Laplace log-likelihood `Σ h(θ*) - ½ log|h''(θ*)|`.
    pub fn laplace_loglik(&self) -> f64 {
        self.h.iter().zip(&self.h2).map(|(h, h2)| h - 0.5 * h2.abs().ln()).sum()
    }
}

pub(crate) struct StudentOptimum {
    pub theta: f64,
    pub terms: HTerms,
    pub steps: usize,
    pub halvings: usize,
}

/// Safeguarded Newton ascent on one student's `h`.
///
/// Every accepted step increases `h`; non-concave points fall back to a unit
/// gradient step, and any step that fails to increase `h` is halved.
pub(crate) fn maximize_student(
    spec: &ModelSpec,
    params: &ParameterSet,
    data: &RatingDataset,
    n: usize,
    theta_init: f64,
    config: &FitConfig,
) -> StudentOptimum {
    let mut theta = if theta_init.is_finite() { theta_init } else { 0.0 };
    let mut terms = student_terms(spec, params, data, n, theta);
    let (mut steps, mut halvings) = (0, 0);
    while steps < config.inner_max_steps && terms.d1.abs() > config.inner_newton_tolerance {
        let mut step = if terms.d2 < 0.0 { -terms.d1 / terms.d2 } else { terms.d1.signum() };
        step = step.clamp(-10.0, 10.0);
        // Below this predicted gain `h` cannot resolve the improvement, so a
        // rejected step means the maximizer has been reached.
        let resolvable = terms.d2 >= 0.0 || 0.5 * terms.d1 * step > ROUNDING * (1.0 + terms.h.abs());
        let mut accepted = false;
        for _ in 0..60 {
            let candidate = theta + step;
            let h_new = student_h(spec, params, data, n, candidate);
            if h_new >= terms.h {
                theta = candidate;
                accepted = true;
                break;
            }
            if !resolvable {
                break;
            }
            step *= 0.5;
            halvings += 1;
        }
        steps += 1;
        if !accepted || step.abs() <= STEP_TOLERANCE * (1.0 + theta.abs()) {
            if accepted {
                terms = student_terms(spec, params, data, n, theta);
            }
            break;
        }
        terms = student_terms(spec, params, data, n, theta);
    }
    StudentOptimum { theta, terms, steps, halvings }
}

/// Maximizes `h` independently for every student, starting from `theta_init`.
///
/// Structural parameters in `params` are held fixed; `params.theta_prime` is
/// ignored.
pub fn maximize_h(
    spec: &ModelSpec,
    params: &ParameterSet,
    theta_init: &[f64],
    data: &RatingDataset,
    config: &FitConfig,
) -> Result<HlProfile> {
    check_family(spec)?;
    if theta_init.len() != data.n_students() {
        return Err(Error::ParameterMismatch(format!(
            "{} starting abilities for {} students",
            theta_init.len(),
            data.n_students()
        )));
    }
    let n_students = data.n_students();
    let mut profile = HlProfile {
        theta: Vec::with_capacity(n_students),
        h: Vec::with_capacity(n_students),
        h2: Vec::with_capacity(n_students),
        max_abs_gradient: 0.0,
        newton_steps: 0,
        halvings: 0,
    };
    for (n, &start) in theta_init.iter().enumerate() {
        let opt = maximize_student(spec, params, data, n, start, config);
        profile.theta.push(opt.theta);
        profile.h.push(opt.terms.h);
        profile.h2.push(opt.terms.d2);
        profile.max_abs_gradient = profile.max_abs_gradient.max(opt.terms.d1.abs());
        profile.newton_steps += opt.steps;
        profile.halvings += opt.halvings;
    }
    Ok(profile)
}

/// Records grouped by rater.
pub(crate) fn records_by_rater(data: &RatingDataset) -> Vec<Vec<usize>> {
    let mut by_rater = vec![Vec::new(); data.n_raters()];
    for (k, o) in data.observations().iter().enumerate() {
        by_rater[o.rater].push(k);
    }
    by_rater
}

/// Newton ascent of the h-likelihood in one rater's discrimination with
/// abilities held fixed, projected onto `[0, 1]`. Returns the gain in `h`.
pub(crate) fn update_rho(
    spec: &ModelSpec,
    params: &mut ParameterSet,
    data: &RatingDataset,
    theta: &[f64],
    records: &[usize],
    r: usize,
    config: &FitConfig,
) -> f64 {
    let obs = data.observations();
    let sigma = params.sigma;
    let value = |params: &ParameterSet, rho: f64| -> f64 {
        records
            .iter()
            .map(|&k| {
                let o = &obs[k];
                let s = rho * sigma * theta[o.student] + offset(params, o);
                if o.score {
                    spec.link.log_cdf(s)
                } else {
                    spec.link.log_ccdf(s)
                }
            })
            .sum()
    };
    let start = value(params, params.rho[r]);
    let mut current = start;
    for _ in 0..config.inner_max_steps {
        let rho = params.rho[r];
        let (mut g1, mut g2) = (0.0, 0.0);
        for &k in records {
            let o = &obs[k];
            let x = sigma * theta[o.student];
            let d = spec.link.term_derivatives(o.score, rho * x + offset(params, o));
            g1 += x * d.d1;
            g2 += x * x * d.d2;
        }
        if (rho <= 0.0 && g1 <= 0.0) || (rho >= 1.0 && g1 >= 0.0) || g1.abs() <= config.inner_newton_tolerance {
            break;
        }
        let mut step = if g2 < 0.0 { -g1 / g2 } else { g1.signum() * 0.1 };
        let resolvable = g2 >= 0.0 || 0.5 * g1 * step > ROUNDING * (1.0 + current.abs());
        let mut moved = false;
        for _ in 0..60 {
            let candidate = (rho + step).clamp(0.0, 1.0);
            let v = value(params, candidate);
            if v >= current {
                moved = candidate != rho;
                params.rho[r] = candidate;
                current = v;
                break;
            }
            if !resolvable {
                break;
            }
            step *= 0.5;
        }
        if !moved || (params.rho[r] - rho).abs() < 1e-12 {
            break;
        }
    }
    current - start
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::RatingRecord;

    fn toy() -> (ModelSpec, ParameterSet, RatingDataset) {
        let mut records = Vec::new();
        for s in 0..4 {
            for r in 0..3 {
                for i in 0..2 {
                    let y = ((s * 7 + r * 3 + i) % 5 < 3) as u8;
                    records.push(RatingRecord::new(format!("s{s}"), format!("r{r}"), format!("i{i}"), y));
                }
            }
        }
        records.push(RatingRecord::new("lonely", "r0", "i0", 1));
        let data = RatingDataset::from_records(records).unwrap();
        let mut p = ParameterSet::neutral(data.n_students(), 3, 2);
        p.sigma = 1.3;
        p.rho = vec![1.0, 0.4, 0.7];
        p.eta = vec![0.2, -0.1, -0.1];
        p.delta = vec![0.3, -0.3];
        p.alpha = 0.1;
        (ModelSpec::gmf(), p, data)
    }

    #[test]
    fn derivatives_match_finite_differences() {
        let (spec, p, data) = toy();
        for n in 0..data.n_students() {
            for theta in [-2.0, -0.3, 0.0, 1.7] {
                let t = student_terms(&spec, &p, &data, n, theta);
                let e = 1e-4;
                let tp = student_terms(&spec, &p, &data, n, theta + e);
                let tm = student_terms(&spec, &p, &data, n, theta - e);
                assert!((t.h - student_h(&spec, &p, &data, n, theta)).abs() < 1e-12);
                assert!(((tp.h - tm.h) / (2.0 * e) - t.d1).abs() < 1e-7);
                assert!(((tp.d1 - tm.d1) / (2.0 * e) - t.d2).abs() < 1e-7);
                assert!(((tp.d2 - tm.d2) / (2.0 * e) - t.d3).abs() < 1e-7);
            }
        }
    }

    #[test]
    fn maximizer_is_stationary() {
        let (spec, p, data) = toy();
        let cfg = FitConfig::default();
        let prof = maximize_h(&spec, &p, &vec![3.0; data.n_students()], &data, &cfg).unwrap();
        assert!(prof.max_abs_gradient <= 1e-8);
        for n in 0..data.n_students() {
            let t = student_terms(&spec, &p, &data, n, prof.theta[n]);
            assert!(t.d1.abs() <= 1e-8);
            assert_eq!(t.d2, prof.h2[n]);
        }
    }

    #[test]
    fn zero_discrimination_gives_prior_mode() {
        let (spec, mut p, data) = toy();
        p.rho = vec![0.0; 3];
        let prof = maximize_h(&spec, &p, &vec![1.0; data.n_students()], &data, &FitConfig::default()).unwrap();
        assert!(prof.theta.iter().all(|t| t.abs() < 1e-12));
        assert!(prof.h2.iter().all(|&h2| (h2 + 1.0).abs() < 1e-12));
    }

    #[test]
    fn rejects_unsupported_family() {
        let (_, p, data) = toy();
        let r = maximize_h(&ModelSpec::probit(), &p, &vec![0.0; data.n_students()], &data, &FitConfig::default());
        assert!(r.is_err());
    }

    #[test]
    fn rho_update_increases_h_and_stays_in_bounds() {
        let (spec, mut p, data) = toy();
        let theta: Vec<f64> = (0..data.n_students()).map(|n| n as f64 - 2.0).collect();
        let by_rater = records_by_rater(&data);
        for r in 0..3 {
            let gain = update_rho(&spec, &mut p, &data, &theta, &by_rater[r], r, &FitConfig::default());
            assert!(gain >= 0.0);
            assert!((0.0..=1.0).contains(&p.rho[r]));
        }
    }
}
