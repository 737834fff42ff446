use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::link::LinkFunction;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelFamily {
    /// Three-facet model: additive ability, item difficulty and rater severity.
    Tfm,
    /// Generalized multi-facet model: adds rater discrimination and an ability scale.
    Gmf,
    /// Normal-noise threshold model.
    Probit,
    /// Latent-class hierarchical rater model.
    Hrm,
}

impl ModelFamily {
    pub fn default_link(self) -> LinkFunction {
        match self {
            ModelFamily::Probit => LinkFunction::Probit,
            _ => LinkFunction::Logit,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ModelFamily::Tfm => "tfm",
            ModelFamily::Gmf => "gmf",
            ModelFamily::Probit => "probit",
            ModelFamily::Hrm => "hrm",
        }
    }
}

impl fmt::Display for ModelFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "tfm" => Ok(ModelFamily::Tfm),
            "gmf" => Ok(ModelFamily::Gmf),
            "probit" => Ok(ModelFamily::Probit),
            "hrm" => Ok(ModelFamily::Hrm),
            other => Err(Error::InvalidInput(format!("unknown model family '{other}'"))),
        }
    }
}

/// Orientation of the HRM rater-level predictor.
///
/// `SdtStandard` uses `F(a·ξ − c)`, so a positive slope raises the pass
/// probability for true category 1. `AsPrinted` uses `F(c − a·ξ)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HrmSignConvention {
    AsPrinted,
    #[default]
    SdtStandard,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub family: ModelFamily,
    pub link: LinkFunction,
    pub hrm_sign_convention: HrmSignConvention,
}

impl ModelSpec {
    pub fn new(family: ModelFamily) -> Self {
        ModelSpec { family, link: family.default_link(), hrm_sign_convention: HrmSignConvention::default() }
    }

    pub fn tfm() -> Self {
        Self::new(ModelFamily::Tfm)
    }

    pub fn gmf() -> Self {
        Self::new(ModelFamily::Gmf)
    }

    pub fn probit() -> Self {
        Self::new(ModelFamily::Probit)
    }

    pub fn hrm() -> Self {
        Self::new(ModelFamily::Hrm)
    }

    pub fn with_link(mut self, link: LinkFunction) -> Self {
        self.link = link;
        self
    }

    pub fn with_hrm_convention(mut self, convention: HrmSignConvention) -> Self {
        self.hrm_sign_convention = convention;
        self
    }
}

/// Rater-level parameters of the hierarchical rater model.
///
/// The second (ability) level reuses `alpha` and `delta` from the
/// surrounding [`ParameterSet`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HrmLatentSpec {
    /// Rater criteria `c_r`.
    pub criteria: Vec<f64>,
    /// Rater-by-item slopes `a_ri`, one row per rater.
    pub slopes: Vec<Vec<f64>>,
}

/// All free parameters of a fitted or generating model.
///
/// The logit-scale ability of student `n` is `sigma * theta_prime[n]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterSet {
    pub theta_prime: Vec<f64>,
    pub sigma: f64,
    pub rho: Vec<f64>,
    pub eta: Vec<f64>,
    pub delta: Vec<f64>,
    pub alpha: f64,
    /// Probit noise scale `sigma_r` per rater.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise_scale: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hrm: Option<HrmLatentSpec>,
}

pub(crate) fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        0.0
    } else {
        xs.iter().sum::<f64>() / xs.len() as f64
    }
}

/// Population variance (divides by `n`).
pub(crate) fn variance(xs: &[f64]) -> f64 {
    let m = mean(xs);
    if xs.is_empty() {
        0.0
    } else {
        xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / xs.len() as f64
    }
}

impl ParameterSet {
    /// All-zero abilities and effects, unit scale and unit discrimination.
    pub fn neutral(n_students: usize, n_raters: usize, n_items: usize) -> Self {
        ParameterSet {
            theta_prime: vec![0.0; n_students],
            sigma: 1.0,
            rho: vec![1.0; n_raters],
            eta: vec![0.0; n_raters],
            delta: vec![0.0; n_items],
            alpha: 0.0,
            noise_scale: None,
            hrm: None,
        }
    }

    pub fn n_students(&self) -> usize {
        self.theta_prime.len()
    }

    pub fn n_raters(&self) -> usize {
        self.eta.len()
    }

    pub fn n_items(&self) -> usize {
        self.delta.len()
    }

    /// Logit-scale ability `sigma * theta'`.
    pub fn ability(&self, n: usize) -> f64 {
        self.sigma * self.theta_prime[n]
    }

    /// Probit discrimination `1 / sqrt(1 + sigma_r^2)` per rater.
    pub fn probit_rho(&self) -> Option<Vec<f64>> {
        self.noise_scale.as_ref().map(|s| s.iter().map(|v| 1.0 / (1.0 + v * v).sqrt()).collect())
    }

    /// Shifts severities and difficulties onto their zero-mean / zero-sum
    /// constraints, folding the removed offsets into `alpha`. Predictors are
    /// unchanged.
    pub fn center_effects(&mut self) {
        let m_eta = mean(&self.eta);
        let m_delta = mean(&self.delta);
        self.eta.iter_mut().for_each(|e| *e -= m_eta);
        self.delta.iter_mut().for_each(|d| *d -= m_delta);
        self.alpha -= m_eta + m_delta;
    }

    /// Checks the identification constraints and parameter bounds.
    pub fn check_constraints(&self, spec: &ModelSpec, tol: f64) -> Result<()> {
        let fail = |msg: String| Err(Error::ParameterMismatch(msg));
        if !(self.sigma > 0.0) {
            return fail(format!("sigma must be positive, got {}", self.sigma));
        }
        if self.rho.len() != self.eta.len() {
            return fail("rho and eta lengths differ".into());
        }
        if !self.theta_prime.is_empty() {
            let m = mean(&self.theta_prime);
            let v = variance(&self.theta_prime);
            if m.abs() > tol || (v - 1.0).abs() > tol {
                return fail(format!("theta' mean {m:e} / variance {v} violate standardization"));
            }
        }
        if mean(&self.eta).abs() > tol {
            return fail("severities are not mean-zero".into());
        }
        if self.delta.iter().sum::<f64>().abs() > tol * self.delta.len().max(1) as f64 {
            return fail("difficulties do not sum to zero".into());
        }
        if self.rho.iter().any(|r| !(0.0..=1.0).contains(r)) {
            return fail("discrimination outside [0, 1]".into());
        }
        if spec.family == ModelFamily::Tfm && self.rho.iter().any(|&r| r != 1.0) {
            return fail("TFM requires all discriminations equal to 1".into());
        }
        Ok(())
    }
}
