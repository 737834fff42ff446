//! Rater capability: the normalizer Δ, the pointwise index κ(θ) and the
//! population-averaged index κ̄ for each model family.
//!
//! For TFM, GMF and probit raters `κ(θ') = (∂μ/∂θ') / Δ`, where Δ is the
//! largest value of `E[∂μ/∂θ']` any rater of that family can reach, so a
//! perfectly capable rater has `κ̄ = E[κ(Z)] = 1`. Item terms are dropped:
//! the index describes the rater on a reference item with `δ - α = 0`.
//!
//! HRM raters have the constant index `F(2,1) - F(2,0)`, the gap between the
//! pass probabilities for the two latent categories.

mod appendix;

pub use appendix::{verify_appendix_properties, AppendixCheck, AppendixReport};

use nalgebra::{Matrix3, SymmetricEigen, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::link::{logistic_density, std_normal_pdf};
use crate::model::{HrmSignConvention, LinkFunction, ModelFamily};
use crate::quadrature::{default_rule, integrate_against_normal};

pub const CURVE_POINTS: usize = 201;
pub const CURVE_LIMIT: f64 = 5.0;

const FIXED_POINT_TOL: f64 = 1e-10;
const FIXED_POINT_MAX_ITER: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DeltaSource {
    Analytic,
    Quadrature,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeltaConstant {
    pub family: ModelFamily,
    /// Ability scale the constant was computed for (GMF and HRM).
    pub sigma: Option<f64>,
    pub value: f64,
    pub computed_by: DeltaSource,
    /// Printed closed-form approximation, where one exists.
    pub analytic: Option<f64>,
}

fn check_sigma(sigma: f64) -> Result<()> {
    if sigma > 0.0 && sigma.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidInput(format!("sigma must be positive, got {sigma}")))
    }
}

/// `E[σ·l'(σZ)]`: the GMF normalizer, attained at `ρ = 1, η = 0`.
fn gmf_delta_value(sigma: f64) -> f64 {
    integrate_against_normal(|t| sigma * logistic_density(t), sigma, default_rule())
        .expect("logistic density is finite")
}

/// Printed approximation `¼·sqrt(2σ²/(2+σ²))`.
pub fn delta_gmf_analytic(sigma: f64) -> f64 {
    0.25 * (2.0 * sigma * sigma / (2.0 + sigma * sigma)).sqrt()
}

/// Three-facet normalizer `E[l'(Z)] ≈ 0.2066`.
pub fn delta_tfm() -> DeltaConstant {
    DeltaConstant {
        family: ModelFamily::Tfm,
        sigma: Some(1.0),
        value: gmf_delta_value(1.0),
        computed_by: DeltaSource::Quadrature,
        analytic: Some(delta_gmf_analytic(1.0)),
    }
}

pub fn delta_gmf(sigma: f64) -> Result<DeltaConstant> {
    check_sigma(sigma)?;
    Ok(DeltaConstant {
        family: ModelFamily::Gmf,
        sigma: Some(sigma),
        value: gmf_delta_value(sigma),
        computed_by: DeltaSource::Quadrature,
        analytic: Some(delta_gmf_analytic(sigma)),
    })
}

/// Probit normalizer.
///
/// `E[σ·φ(S)/σ_r]` with `S = (σθ' - α_r)/σ_r` equals `E[φ((α_r + σ_r U)/σ)]`
/// for standard normal `U`; its supremum is at `α_r = 0, σ_r → 0`, which the
/// substituted form evaluates directly.
pub fn delta_probit() -> DeltaConstant {
    let value = default_rule().expectation(|_| std_normal_pdf(0.0)).expect("constant integrand");
    DeltaConstant {
        family: ModelFamily::Probit,
        sigma: None,
        value,
        computed_by: DeltaSource::Quadrature,
        analytic: Some(1.0 / (2.0 * std::f64::consts::PI).sqrt()),
    }
}

/// HRM normalizer `E[∂F_1/∂θ']` for a level-2 offset `α - δ_i`.
///
/// It does not depend on any rater parameter.
pub fn delta_hrm(sigma: f64, offset: f64) -> Result<DeltaConstant> {
    check_sigma(sigma)?;
    let value = integrate_against_normal(|t| sigma * logistic_density(t + offset), sigma, default_rule())?;
    Ok(DeltaConstant {
        family: ModelFamily::Hrm,
        sigma: Some(sigma),
        value,
        computed_by: DeltaSource::Quadrature,
        analytic: None,
    })
}

/// Rater parameters that determine capability.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "lowercase")]
pub enum RaterModel {
    Tfm {
        eta: f64,
    },
    Gmf {
        rho: f64,
        eta: f64,
    },
    /// Noise scale `σ_r ≥ 0` and severity `η_r = α_r / σ_r`.
    Probit {
        noise_scale: f64,
        eta: f64,
    },
    /// One rater-by-item cell of the hierarchical rater model.
    Hrm {
        criterion: f64,
        slope: f64,
        link: LinkFunction,
        convention: HrmSignConvention,
    },
}

impl RaterModel {
    pub fn family(&self) -> ModelFamily {
        match self {
            RaterModel::Tfm { .. } => ModelFamily::Tfm,
            RaterModel::Gmf { .. } => ModelFamily::Gmf,
            RaterModel::Probit { .. } => ModelFamily::Probit,
            RaterModel::Hrm { .. } => ModelFamily::Hrm,
        }
    }

    /// Probit discrimination `σ / sqrt(σ² + σ_r²)` at ability scale `sigma`.
    pub fn probit_rho(noise_scale: f64, sigma: f64) -> f64 {
        sigma / (sigma * sigma + noise_scale * noise_scale).sqrt()
    }

    fn validate(&self) -> Result<()> {
        let ok = match *self {
            RaterModel::Tfm { eta } => eta.is_finite(),
            RaterModel::Gmf { rho, eta } => rho.is_finite() && eta.is_finite(),
            RaterModel::Probit { noise_scale, eta } => noise_scale >= 0.0 && noise_scale.is_finite() && eta.is_finite(),
            RaterModel::Hrm { criterion, slope, .. } => criterion.is_finite() && slope.is_finite(),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidInput(format!("invalid rater parameters {self:?}")))
        }
    }

    /// `(F(2,0), F(2,1))` for an HRM rater.
    pub fn hrm_conditionals(&self) -> Option<(f64, f64)> {
        match *self {
            RaterModel::Hrm { criterion, slope, link, convention } => {
                let pred = |xi: f64| match convention {
                    HrmSignConvention::AsPrinted => criterion - slope * xi,
                    HrmSignConvention::SdtStandard => slope * xi - criterion,
                };
                Some((link.cdf(pred(0.0)), link.cdf(pred(1.0))))
            }
            _ => None,
        }
    }
}

/// How κ̄ is evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KappaMethod {
    /// Printed closed forms (GMF: Laplace approximation at the fixed point
    /// `x*`, combined with the analytic Δ).
    ClosedForm,
    /// Direct Gauss–Hermite integration with the quadrature Δ.
    #[default]
    Quadrature,
}

/// The normalizer used by `rater` at ability scale `sigma`.
pub fn delta_for(rater: &RaterModel, sigma: f64) -> Result<DeltaConstant> {
    match rater {
        RaterModel::Tfm { .. } | RaterModel::Gmf { .. } => delta_gmf(sigma),
        RaterModel::Probit { .. } => Ok(delta_probit()),
        RaterModel::Hrm { .. } => delta_hrm(sigma, 0.0),
    }
}

/// `κ(θ')` at a single standardized ability.
///
/// `delta` must come from [`delta_for`] for the same rater family and scale.
pub fn kappa_at(rater: &RaterModel, sigma: f64, delta: f64, theta_prime: f64) -> f64 {
    match *rater {
        RaterModel::Tfm { eta } => sigma * logistic_density(sigma * theta_prime - eta) / delta,
        RaterModel::Gmf { rho, eta } => rho * sigma * logistic_density(rho * sigma * theta_prime - eta) / delta,
        RaterModel::Probit { noise_scale, eta } => {
            let z = probit_standardized(noise_scale, eta, sigma, theta_prime);
            match z {
                Some((s, scale)) => sigma * std_normal_pdf(s) / scale / delta,
                None => 0.0,
            }
        }
        RaterModel::Hrm { .. } => {
            let (f0, f1) = rater.hrm_conditionals().expect("hrm rater");
            f1 - f0
        }
    }
}

/// Probit predictor `S = (σθ' - α_r)/σ_r` and the scale `σ_r`, or `None`
/// when the rater is noiseless (the derivative is a point mass).
fn probit_standardized(noise_scale: f64, eta: f64, sigma: f64, theta_prime: f64) -> Option<(f64, f64)> {
    if noise_scale > 0.0 {
        Some(((sigma * theta_prime) / noise_scale - eta, noise_scale))
    } else {
        None
    }
}

/// `κ(θ')` sampled on `grid`.
pub fn kappa_curve(rater: &RaterModel, sigma: f64, grid: &[f64]) -> Result<Vec<(f64, f64)>> {
    check_sigma(sigma)?;
    rater.validate()?;
    let delta = delta_for(rater, sigma)?.value;
    Ok(grid.iter().map(|&t| (t, kappa_at(rater, sigma, delta, t))).collect())
}

/// `points` evenly spaced values on `[-limit, limit]`.
pub fn theta_grid(points: usize, limit: f64) -> Vec<f64> {
    match points {
        0 => Vec::new(),
        1 => vec![0.0],
        _ => (0..points).map(|k| -limit + 2.0 * limit * k as f64 / (points - 1) as f64).collect(),
    }
}

pub fn default_theta_grid() -> Vec<f64> {
    theta_grid(CURVE_POINTS, CURVE_LIMIT)
}

/// Root of `x + ρ²σ²·tanh(x/2) - η = 0`, the mode of the GMF κ̄ integrand.
///
/// Newton from `η`, falling back to bisection on `[η - ρ²σ², η + ρ²σ²]`
/// whenever a step leaves the bracket. Returns the root and the iteration
/// count.
pub fn solve_fixed_point(rho: f64, eta: f64, sigma: f64) -> Result<(f64, usize)> {
    let c = rho * rho * sigma * sigma;
    let g = |x: f64| x + c * (0.5 * x).tanh() - eta;
    let (mut lo, mut hi) = (eta - c, eta + c);
    if c == 0.0 {
        return Ok((eta, 0));
    }
    let mut x = eta;
    for iter in 1..=FIXED_POINT_MAX_ITER {
        let gx = g(x);
        if gx.abs() <= FIXED_POINT_TOL {
            return Ok((x, iter));
        }
        if gx > 0.0 {
            hi = hi.min(x);
        } else {
            lo = lo.max(x);
        }
        let sech = 1.0 / (0.5 * x).cosh();
        let slope = 1.0 + 0.5 * c * sech * sech;
        let mut next = x - gx / slope;
        if !(next > lo && next < hi) {
            next = 0.5 * (lo + hi);
        }
        if (next - x).abs() <= FIXED_POINT_TOL * (1.0 + x.abs()) {
            return Ok((next, iter));
        }
        x = next;
    }
    Err(Error::Estimation(format!("fixed point did not converge for rho={rho}, eta={eta}, sigma={sigma}")))
}

/// Printed GMF closed form for κ̄.
pub fn kappa_bar_gmf_closed_form(rho: f64, eta: f64, sigma: f64) -> Result<f64> {
    check_sigma(sigma)?;
    if rho == 0.0 {
        return Ok(0.0);
    }
    let (x, _) = solve_fixed_point(rho, eta, sigma)?;
    let rs = rho * sigma;
    let ex = x.exp();
    let num = 4.0 * rho * ((2.0 + sigma * sigma) / 2.0).sqrt() * (x - 0.5 * ((x - eta) / rs).powi(2)).exp();
    let den = (1.0 + ex) * ((1.0 + ex).powi(2) + 2.0 * rs * rs * ex).sqrt();
    Ok(num / den)
}

/// Probit κ̄ `ρ·exp{-(1-ρ²)η²/2}`.
pub fn kappa_bar_probit_closed_form(rho: f64, eta: f64) -> f64 {
    rho * (-(1.0 - rho * rho) * eta * eta / 2.0).exp()
}

fn kappa_bar_quadrature(rater: &RaterModel, sigma: f64) -> Result<f64> {
    let rule = default_rule();
    match *rater {
        RaterModel::Tfm { eta } => kappa_bar_quadrature(&RaterModel::Gmf { rho: 1.0, eta }, sigma),
        RaterModel::Gmf { rho, eta } => {
            let num = rule.expectation(|z| rho * sigma * logistic_density(rho * sigma * z - eta))?;
            Ok(num / gmf_delta_value(sigma))
        }
        RaterModel::Probit { noise_scale, eta } => {
            let alpha = eta * noise_scale;
            // Integrate over whichever normal is wider so the integrand stays
            // smooth on the node scale.
            let num = if noise_scale <= sigma {
                rule.expectation(|u| std_normal_pdf((alpha + noise_scale * u) / sigma))?
            } else {
                sigma / noise_scale * rule.expectation(|z| std_normal_pdf((sigma * z - alpha) / noise_scale))?
            };
            Ok(num / delta_probit().value)
        }
        RaterModel::Hrm { .. } => {
            let k = kappa_at(rater, sigma, 1.0, 0.0);
            rule.expectation(|_| k)
        }
    }
}

/// Outcome of a κ̄ evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KappaBarValue {
    pub value: f64,
    pub method: KappaMethod,
    /// The closed form was requested but its fixed point failed, so the
    /// quadrature value was returned.
    pub fell_back: bool,
}

/// κ̄ for `rater` at ability scale `sigma`.
pub fn kappa_bar_with(rater: &RaterModel, sigma: f64, method: KappaMethod) -> Result<KappaBarValue> {
    check_sigma(sigma)?;
    rater.validate()?;
    let quad = |fell_back| {
        kappa_bar_quadrature(rater, sigma).map(|value| KappaBarValue {
            value,
            method: KappaMethod::Quadrature,
            fell_back,
        })
    };
    if method == KappaMethod::Quadrature {
        return quad(false);
    }
    let closed = match *rater {
        RaterModel::Tfm { eta } => kappa_bar_gmf_closed_form(1.0, eta, sigma),
        RaterModel::Gmf { rho, eta } => kappa_bar_gmf_closed_form(rho, eta, sigma),
        RaterModel::Probit { noise_scale, eta } => {
            Ok(kappa_bar_probit_closed_form(RaterModel::probit_rho(noise_scale, sigma), eta))
        }
        RaterModel::Hrm { .. } => kappa_bar_quadrature(rater, sigma),
    };
    match closed {
        Ok(value) => Ok(KappaBarValue { value, method: KappaMethod::ClosedForm, fell_back: false }),
        Err(_) => quad(true),
    }
}

/// κ̄ by the default (quadrature) method.
pub fn kappa_bar(rater: &RaterModel, sigma: f64) -> Result<f64> {
    kappa_bar_with(rater, sigma, KappaMethod::default()).map(|v| v.value)
}

/// Replaces the `(ρ, η)` coordinates of a rater, keeping its family.
fn with_coordinates(rater: &RaterModel, sigma: f64, rho: f64, eta: f64) -> RaterModel {
    match *rater {
        RaterModel::Tfm { .. } => RaterModel::Tfm { eta },
        RaterModel::Gmf { .. } => RaterModel::Gmf { rho, eta },
        RaterModel::Probit { .. } => {
            // Invert ρ = σ / sqrt(σ² + σ_r²).
            let r = rho.clamp(1e-12, 1.0);
            RaterModel::Probit { noise_scale: sigma * (1.0 / (r * r) - 1.0).max(0.0).sqrt(), eta }
        }
        hrm @ RaterModel::Hrm { .. } => hrm,
    }
}

fn rho_coordinate(rater: &RaterModel, sigma: f64) -> f64 {
    match *rater {
        RaterModel::Tfm { .. } => 1.0,
        RaterModel::Gmf { rho, .. } => rho,
        RaterModel::Probit { noise_scale, .. } => RaterModel::probit_rho(noise_scale, sigma),
        RaterModel::Hrm { .. } => f64::NAN,
    }
}

fn eta_coordinate(rater: &RaterModel) -> f64 {
    match *rater {
        RaterModel::Tfm { eta } | RaterModel::Gmf { eta, .. } | RaterModel::Probit { eta, .. } => eta,
        RaterModel::Hrm { .. } => f64::NAN,
    }
}

/// `∂κ̄/∂(σ, ρ, η)` by central differences with step `1e-5·max(1, |v|)`.
pub fn kappa_bar_gradient(rater: &RaterModel, sigma: f64, method: KappaMethod) -> Result<Vector3<f64>> {
    if rater.family() == ModelFamily::Hrm {
        return Err(Error::InvalidInput("HRM capability has no (sigma, rho, eta) gradient".into()));
    }
    let base = [sigma, rho_coordinate(rater, sigma), eta_coordinate(rater)];
    let eval = |p: [f64; 3]| -> Result<f64> {
        let r = with_coordinates(rater, p[0], p[1], p[2]);
        Ok(kappa_bar_with(&r, p[0], method)?.value)
    };
    let mut grad = Vector3::zeros();
    for k in 0..3 {
        if rater.family() == ModelFamily::Tfm && k == 1 {
            continue;
        }
        let h = 1e-5 * base[k].abs().max(1.0);
        let (mut up, mut down) = (base, base);
        up[k] += h;
        down[k] -= h;
        grad[k] = (eval(up)? - eval(down)?) / (2.0 * h);
    }
    Ok(grad)
}

/// Checks that `cov` is symmetric positive semidefinite.
pub fn check_psd(cov: &Matrix3<f64>) -> Result<()> {
    let scale = cov.amax().max(1e-300);
    if (cov - cov.transpose()).amax() > 1e-10 * scale {
        return Err(Error::InvalidInput("covariance is not symmetric".into()));
    }
    let min = SymmetricEigen::new(*cov).eigenvalues.min();
    if min < -1e-10 * scale {
        return Err(Error::NotPositiveSemidefinite(min));
    }
    Ok(())
}

/// Delta-method variance `g·Σ·gᵀ` of κ̄ for a covariance over `(σ, ρ_r, η_r)`.
pub fn kappa_bar_variance(rater: &RaterModel, sigma: f64, cov: &Matrix3<f64>) -> Result<f64> {
    check_psd(cov)?;
    if cov.amax() == 0.0 {
        return Ok(0.0);
    }
    let g = kappa_bar_gradient(rater, sigma, KappaMethod::default())?;
    Ok((g.transpose() * cov * g)[(0, 0)].max(0.0))
}

/// Capability summary for one rater.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CapabilityReport {
    pub rater_id: String,
    pub kappa_bar: f64,
    pub kappa_bar_variance: f64,
    pub delta_used: f64,
    pub curve: Vec<(f64, f64)>,
    pub method: KappaMethod,
}

impl CapabilityReport {
    /// Builds a report; `cov` is the `(σ, ρ_r, η_r)` covariance block when
    /// one is available.
    pub fn compute(
        rater_id: impl Into<String>,
        rater: &RaterModel,
        sigma: f64,
        cov: Option<&Matrix3<f64>>,
        grid: &[f64],
        method: KappaMethod,
    ) -> Result<Self> {
        let kb = kappa_bar_with(rater, sigma, method)?;
        let variance = match cov {
            Some(c) if rater.family() != ModelFamily::Hrm => kappa_bar_variance(rater, sigma, c)?,
            _ => 0.0,
        };
        Ok(CapabilityReport {
            rater_id: rater_id.into(),
            kappa_bar: kb.value,
            kappa_bar_variance: variance,
            delta_used: delta_for(rater, sigma)?.value,
            curve: kappa_curve(rater, sigma, grid)?,
            method: kb.method,
        })
    }

    pub fn standard_error(&self) -> f64 {
        self.kappa_bar_variance.sqrt()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gmf(rho: f64, eta: f64) -> RaterModel {
        RaterModel::Gmf { rho, eta }
    }

    fn hrm(c: f64, a: f64) -> RaterModel {
        RaterModel::Hrm {
            criterion: c,
            slope: a,
            link: LinkFunction::Logit,
            convention: HrmSignConvention::SdtStandard,
        }
    }

    #[test]
    fn delta_constants() {
        let d = delta_tfm();
        assert!((d.value - 0.2066).abs() < 5e-4);
        assert!((1.0 / d.value - 4.840).abs() < 0.02);
        assert!((delta_gmf_analytic(1.0) - 0.25 * (2.0f64 / 3.0).sqrt()).abs() < 1e-15);
        assert!((delta_gmf(1.0).unwrap().value - d.value).abs() < 1e-15);
        assert!((delta_gmf_analytic(1e8) - 0.25 * 2f64.sqrt()).abs() < 1e-9);
        assert!((delta_probit().value - 0.3989422804014327).abs() < 1e-12);
        assert!(delta_gmf(0.0).is_err());
        assert!(delta_gmf(-1.0).is_err());
    }

    #[test]
    fn delta_gmf_matches_substituted_integral() {
        // σ·E[l'(σZ)] = ∫ l'(x) φ(x/σ) dx, checked by adaptive Simpson.
        for sigma in [0.5, 1.0, 2.0] {
            let direct = crate::quadrature::adaptive_simpson(
                |x| logistic_density(x) * std_normal_pdf(x / sigma),
                -60.0,
                60.0,
                1e-13,
                50,
            );
            assert!(
                (delta_gmf(sigma).unwrap().value - direct).abs() < 1e-8,
                "sigma {sigma}: {} vs {direct}",
                delta_gmf(sigma).unwrap().value
            );
        }
    }

    #[test]
    fn curve_examples() {
        let curve = kappa_curve(&RaterModel::Tfm { eta: 0.0 }, 1.0, &[-1.0, 0.0, 1.0]).unwrap();
        let peak = 0.25 / delta_tfm().value;
        assert!((curve[1].1 - peak).abs() < 1e-12);
        assert!((peak - 1.210).abs() < 2e-3);
        assert!(curve[0].1 < curve[1].1 && curve[2].1 < curve[1].1);

        let flat = kappa_curve(&gmf(0.0, 0.3), 1.3, &default_theta_grid()).unwrap();
        assert!(flat.iter().all(|&(_, k)| k == 0.0));

        let h = kappa_curve(&hrm(0.0, 3.0), 1.0, &default_theta_grid()).unwrap();
        assert_eq!(h.len(), CURVE_POINTS);
        assert!(h.iter().all(|&(_, k)| (k - 0.45257412).abs() < 1e-8));
    }

    #[test]
    fn curve_peaks_at_severity() {
        let eta = 0.8;
        let grid = theta_grid(1601, 4.0);
        let curve = kappa_curve(&RaterModel::Tfm { eta }, 1.0, &grid).unwrap();
        let best = curve.iter().copied().fold((0.0, f64::MIN), |a, b| if b.1 > a.1 { b } else { a });
        assert!((best.0 - eta).abs() < 0.006);
    }

    #[test]
    fn kappa_bar_examples() {
        assert!((kappa_bar(&RaterModel::Tfm { eta: 0.0 }, 1.0).unwrap() - 1.0).abs() < 1e-12);
        for rho in [0.2, 0.7, 1.0] {
            let r = RaterModel::Probit { noise_scale: (1.0 / (rho * rho) - 1.0f64).sqrt(), eta: 0.0 };
            assert!((kappa_bar(&r, 1.0).unwrap() - rho).abs() < 1e-12, "{rho}: {}", kappa_bar(&r, 1.0).unwrap());
        }
        // Study 1 raters 20 and 1 after severity centering.
        let r20 = kappa_bar(&gmf(1.0, 0.11 - 7.0 / 6.0), 0.5).unwrap();
        let r1 = kappa_bar(&gmf(0.05, 2.22 - 7.0 / 6.0), 0.5).unwrap();
        assert!((r20 - 0.79).abs() < 0.01, "{r20}");
        assert!((r1 - 0.04).abs() < 0.005, "{r1}");
    }

    #[test]
    fn probit_quadrature_confirms_main_text_form() {
        for rho in [0.1, 0.4, 0.8, 0.95] {
            for eta in [-2.0, -0.5, 0.0, 1.0, 2.5] {
                let r = RaterModel::Probit { noise_scale: (1.0 / (rho * rho) - 1.0f64).sqrt(), eta };
                let q = kappa_bar_with(&r, 1.0, KappaMethod::Quadrature).unwrap().value;
                assert!(
                    (q - kappa_bar_probit_closed_form(rho, eta)).abs() < 1e-12,
                    "{rho} {eta}: {q} vs {}",
                    kappa_bar_probit_closed_form(rho, eta)
                );
            }
        }
    }

    #[test]
    fn fixed_point_solves_equation() {
        for &(rho, eta, sigma) in &[(1.0, 0.0, 1.0), (0.25, 2.0, 2.0), (0.8, -1.7, 0.5), (1.0, 3.0, 2.51)] {
            let (x, iters) = solve_fixed_point(rho, eta, sigma).unwrap();
            let c: f64 = rho * rho * sigma * sigma;
            assert!((x - (c * (1.0 - x.exp()) / (1.0 + x.exp()) + eta)).abs() < 1e-9);
            assert!(x >= eta - c && x <= eta + c);
            assert!(iters <= FIXED_POINT_MAX_ITER);
        }
        assert_eq!(solve_fixed_point(0.0, 1.5, 1.0).unwrap().0, 1.5);
    }

    #[test]
    fn closed_form_is_normalized_at_supremum_for_unit_scale() {
        let v = kappa_bar_with(&gmf(1.0, 0.0), 1.0, KappaMethod::ClosedForm).unwrap();
        assert_eq!(v.method, KappaMethod::ClosedForm);
        assert!((v.value - 1.0).abs() < 1e-12);
    }

    #[test]
    fn tfm_symmetry() {
        for eta in [0.3, 1.1, 2.7] {
            let a = kappa_bar(&RaterModel::Tfm { eta }, 1.0).unwrap();
            let b = kappa_bar(&RaterModel::Tfm { eta: -eta }, 1.0).unwrap();
            assert!((a - b).abs() < 1e-8);
        }
    }

    #[test]
    fn variance_special_cases() {
        let r = gmf(0.6, 0.4);
        assert_eq!(kappa_bar_variance(&r, 1.2, &Matrix3::zeros()).unwrap(), 0.0);
        let g = kappa_bar_gradient(&r, 1.2, KappaMethod::Quadrature).unwrap();
        let v = kappa_bar_variance(&r, 1.2, &Matrix3::identity()).unwrap();
        assert!((v - g.norm_squared()).abs() < 1e-12);
        let bad = Matrix3::new(1.0, 0.0, 0.0, 0.0, -1.0, 0.0, 0.0, 0.0, 1.0);
        assert!(matches!(kappa_bar_variance(&r, 1.2, &bad), Err(Error::NotPositiveSemidefinite(_))));
    }

    #[test]
    fn gradient_matches_probit_analytic() {
        // κ̄ = ρ exp(-(1-ρ²)η²/2) at σ = 1 has a closed-form ρ/η gradient.
        let (rho, eta) = (0.6f64, 0.9f64);
        let r = RaterModel::Probit { noise_scale: (1.0 / (rho * rho) - 1.0).sqrt(), eta };
        let g = kappa_bar_gradient(&r, 1.0, KappaMethod::ClosedForm).unwrap();
        let e = (-(1.0 - rho * rho) * eta * eta / 2.0).exp();
        assert!((g[1] - e * (1.0 + rho * rho * eta * eta)).abs() < 1e-7);
        assert!((g[2] - rho * e * (-(1.0 - rho * rho) * eta)).abs() < 1e-7);
    }

    #[test]
    fn report_fields() {
        let rep = CapabilityReport::compute(
            "r1",
            &gmf(0.5, 0.2),
            0.8,
            Some(&(Matrix3::identity() * 1e-3)),
            &default_theta_grid(),
            KappaMethod::Quadrature,
        )
        .unwrap();
        assert_eq!(rep.curve.len(), CURVE_POINTS);
        assert!(rep.kappa_bar > 0.0 && rep.kappa_bar_variance > 0.0);
        assert!((rep.delta_used - delta_gmf(0.8).unwrap().value).abs() < 1e-15);
    }
}
