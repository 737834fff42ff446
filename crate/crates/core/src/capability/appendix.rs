//! Grid checks of the supremum claims behind each family's Δ.

use serde::{Deserialize, Serialize};

use super::{delta_hrm, delta_probit, RaterModel};
use crate::model::link::{logistic_density, std_normal_pdf};
use crate::model::{HrmSignConvention, LinkFunction};
use crate::quadrature::{default_rule, integrate_against_normal};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AppendixCheck {
    pub name: String,
    pub passed: bool,
    /// Worst-case slack of the checked inequality (positive when it holds),
    /// or the largest deviation for equality checks (negated).
    pub margin: f64,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AppendixReport {
    pub checks: Vec<AppendixCheck>,
}

impl AppendixReport {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn get(&self, name: &str) -> Option<&AppendixCheck> {
        self.checks.iter().find(|c| c.name == name)
    }
}

fn grid(lo: f64, hi: f64, step: f64) -> Vec<f64> {
    let n = ((hi - lo) / step).round() as usize;
    (0..=n).map(|k| lo + k as f64 * step).collect()
}

/// `T(z) = E[ρσ·l'(ρσZ - z)]`.
fn logistic_sensitivity(rho: f64, sigma: f64, z: f64) -> f64 {
    default_rule().expectation(|t| rho * sigma * logistic_density(rho * sigma * t - z)).expect("finite integrand")
}

/// `E[σ·φ(S)/σ_r]` written as `E[φ((α_r + σ_r U)/σ)]`.
fn probit_sensitivity(noise_scale: f64, eta: f64) -> f64 {
    let alpha = eta * noise_scale;
    default_rule().expectation(|u| std_normal_pdf(alpha + noise_scale * u)).expect("finite integrand")
}

fn check_tfm() -> AppendixCheck {
    let t0 = logistic_sensitivity(1.0, 1.0, 0.0);
    let worst = grid(-3.0, 3.0, 0.1)
        .into_iter()
        .filter(|z| z.abs() > 1e-9)
        .map(|z| logistic_sensitivity(1.0, 1.0, z))
        .fold(f64::MIN, f64::max);
    let margin = t0 - worst;
    AppendixCheck {
        name: "tfm_supremum_at_zero".into(),
        passed: margin > 0.0,
        margin,
        detail: format!("T(0) = {t0:.7}, max over z != 0 on [-3, 3] = {worst:.7}"),
    }
}

fn check_gmf() -> AppendixCheck {
    let rhos: Vec<f64> = (1..=10).map(|k| k as f64 / 10.0).collect();
    let mut margin = f64::MAX;
    for sigma in [0.5, 1.0, 2.0] {
        let values: Vec<f64> = rhos.iter().map(|&r| logistic_sensitivity(r, sigma, 0.0)).collect();
        for w in values.windows(2) {
            margin = margin.min(w[1] - w[0]);
        }
    }
    AppendixCheck {
        name: "gmf_increasing_in_rho".into(),
        passed: margin > 0.0,
        margin,
        detail: "T(0, rho) on rho = 0.1..1.0, sigma in {0.5, 1, 2}; margin = smallest step increase".into(),
    }
}

fn check_probit_severity() -> AppendixCheck {
    let mut margin = f64::MAX;
    for noise in [0.25, 0.5, 1.0, 2.0] {
        let at_zero = probit_sensitivity(noise, 0.0);
        for eta in grid(-3.0, 3.0, 0.1).into_iter().filter(|e| e.abs() > 1e-9) {
            margin = margin.min(at_zero - probit_sensitivity(noise, eta));
        }
    }
    AppendixCheck {
        name: "probit_supremum_at_zero_severity".into(),
        passed: margin > 0.0,
        margin,
        detail: "eta on [-3, 3] for sigma_r in {0.25, 0.5, 1, 2}".into(),
    }
}

fn check_probit_boundary() -> AppendixCheck {
    let scales = [2.0, 1.0, 0.5, 0.1, 1e-2, 1e-4];
    let values: Vec<f64> = scales.iter().map(|&s| probit_sensitivity(s, 0.0)).collect();
    let increasing = values.windows(2).map(|w| w[1] - w[0]).fold(f64::MAX, f64::min);
    let limit = 1.0 / (2.0 * std::f64::consts::PI).sqrt();
    let gap = (values[values.len() - 1] - limit).abs();
    let delta_gap = (delta_probit().value - limit).abs();
    AppendixCheck {
        name: "probit_noise_to_zero_limit".into(),
        passed: increasing > 0.0 && gap < 1e-6 && delta_gap < 1e-6,
        margin: increasing.min(1e-6 - gap).min(1e-6 - delta_gap),
        detail: format!(
            "sensitivity rises as sigma_r -> 0 and reaches {:.9} (1/sqrt(2 pi) = {limit:.9}); Delta = {:.9}",
            values[values.len() - 1],
            delta_probit().value
        ),
    }
}

fn check_hrm() -> AppendixCheck {
    // E[∂μ/∂θ'] = (F21 - F20)·E[∂F1/∂θ'] for every rater, so the normalizer
    // E[∂F1/∂θ'] is the same whatever the rater parameters.
    let sigma = 1.0;
    let mut worst = 0.0f64;
    let mut best_gap = 0.0f64;
    for offset in [-1.0, 0.0, 0.7] {
        let delta = delta_hrm(sigma, offset).expect("valid sigma").value;
        for c in [-2.0, 0.0, 1.5, 6.0] {
            for a in [0.0, 0.5, 3.0, 12.0] {
                let rater = RaterModel::Hrm {
                    criterion: c,
                    slope: a,
                    link: LinkFunction::Logit,
                    convention: HrmSignConvention::SdtStandard,
                };
                let (f0, f1) = rater.hrm_conditionals().expect("hrm");
                let mu = |t: f64| {
                    let p = crate::model::link::logistic(t + offset);
                    p * f1 + (1.0 - p) * f0
                };
                let h = 1e-4;
                let slope =
                    integrate_against_normal(|t| sigma * (mu(t + h) - mu(t - h)) / (2.0 * h), sigma, default_rule())
                        .expect("finite integrand");
                worst = worst.max((slope - (f1 - f0) * delta).abs());
                best_gap = best_gap.max(f1 - f0);
            }
        }
    }
    AppendixCheck {
        name: "hrm_normalizer_independent_of_rater".into(),
        passed: worst < 1e-8 && best_gap <= 1.0 && best_gap > 0.99,
        margin: -worst,
        detail: format!(
            "max |E[dmu/dtheta] - (F21-F20)*Delta| = {worst:.2e}; largest F21-F20 on grid = {best_gap:.6} (supremum 1)"
        ),
    }
}

/// Runs every supremum check and reports pass/fail with margins.
pub fn verify_appendix_properties() -> AppendixReport {
    AppendixReport {
        checks: vec![check_tfm(), check_gmf(), check_probit_severity(), check_probit_boundary(), check_hrm()],
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_appendix_checks_pass() {
        let report = verify_appendix_properties();
        for c in &report.checks {
            assert!(c.passed, "{}: {}", c.name, c.detail);
        }
        assert!(report.all_passed());
        assert!(report.get("tfm_supremum_at_zero").is_some());
    }
}
