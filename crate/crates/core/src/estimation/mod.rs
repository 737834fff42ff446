//! h-likelihood estimation with a Laplace-approximated marginal likelihood.
//!
//! [`fit`] runs the iterative procedure:
//!
//! 1. additive logistic regression start with `σ = 1`;
//! 2. block ascent of the h-likelihood in abilities and (GMF) discriminations
//!    at `σ = 1`;
//! 3. `σ̂² = mean((θ̂ - mean θ̂)²) + mean(v)` over the logit-scale modes `θ̂`
//!    and their posterior variances `v`, `θ* = (θ̂ - mean θ̂)/σ̂`, and
//!    maximization of the Laplace objective over `(ρ, η, δ, α)` with `θ*`
//!    held fixed;
//! 4. rescaling `ρ` so its maximum is one, then refreshing the abilities by
//!    maximizing the h-likelihood at `σ̂`;
//! 5. repeat steps 3 and 4 until `σ̂` moves by less than the tolerance, the Laplace
//!    log-likelihood stops changing, or the iteration budget runs out.

mod covariance;
mod glm;
mod hl;
mod laplace;
pub mod optimize;

pub use covariance::{laplace_covariance, structural_covariance, CovarianceEstimate};
pub use glm::{check_connected, initialize_glm, GlmInit, EFFECT_CLAMP};
pub use hl::{maximize_h, student_h, student_terms, HTerms, HlProfile};
pub use laplace::{laplace_value, laplace_value_and_gradient, ParamLayout, ThetaMode};

use nalgebra::{DMatrix, Matrix3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{mean, variance, ModelFamily, ModelSpec, ParameterSet, RatingDataset};
use hl::{check_family, records_by_rater, update_rho};
use optimize::{minimize, Constraints, OptimizerOptions};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitConfig {
    pub max_outer_iterations: usize,
    /// Stop once `|σ̂_t - σ̂_{t-1}|` falls below this.
    pub scale_change_tolerance: f64,
    /// Stop once the Laplace log-likelihood changes by less than this.
    pub loglik_tolerance: f64,
    pub inner_newton_tolerance: f64,
    pub inner_max_steps: usize,
    pub ridge: f64,
    /// Recorded with the results; the estimator itself is deterministic.
    pub seed: u64,
    pub max_block_sweeps: usize,
    pub block_tolerance: f64,
    pub optimizer_max_iterations: usize,
    pub compute_covariance: bool,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            max_outer_iterations: 10,
            scale_change_tolerance: 0.01,
            loglik_tolerance: 1e-6,
            inner_newton_tolerance: 1e-8,
            inner_max_steps: 100,
            ridge: 1e-6,
            seed: 0,
            max_block_sweeps: 20,
            block_tolerance: 1e-6,
            optimizer_max_iterations: 500,
            compute_covariance: true,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("scale_change_tolerance", self.scale_change_tolerance),
            ("loglik_tolerance", self.loglik_tolerance),
            ("inner_newton_tolerance", self.inner_newton_tolerance),
            ("block_tolerance", self.block_tolerance),
        ];
        for (name, v) in positive {
            if !(v > 0.0) {
                return Err(Error::InvalidInput(format!("{name} must be positive, got {v}")));
            }
        }
        if self.max_outer_iterations == 0 || self.inner_max_steps == 0 || self.max_block_sweeps == 0 {
            return Err(Error::InvalidInput("iteration limits must be at least 1".into()));
        }
        if !(self.ridge >= 0.0) {
            return Err(Error::InvalidInput("ridge must be nonnegative".into()));
        }
        Ok(())
    }
}

/// One entry of the per-step log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub iteration: usize,
    pub step: String,
    pub sigma: f64,
    pub objective: f64,
    pub detail: String,
}

#[derive(Debug, Clone)]
pub struct FitResult {
    pub spec: ModelSpec,
    pub params: ParameterSet,
    /// Laplace log-likelihood at the final structural parameters with each
    /// student's ability at the maximizer of `h`.
    pub laplace_loglik: f64,
    pub converged: bool,
    pub iterations_used: usize,
    /// Covariance over the full [`ParamLayout`] (zero rows for coordinates
    /// that are fixed or eliminated by constraints).
    pub structural_covariance: Option<DMatrix<f64>>,
    /// The covariance came from a pseudo-inverse of a singular Hessian.
    pub covariance_pseudo_inverse: bool,
    /// The maximum discrimination fell below `1e-3` and was not rescaled.
    pub rho_scaling_skipped: bool,
    pub separated_raters: Vec<usize>,
    pub separated_items: Vec<usize>,
    pub diagnostics: Vec<StepLog>,
}

impl FitResult {
    pub fn layout(&self) -> ParamLayout {
        ParamLayout::of(&self.params)
    }

    /// The `(σ, ρ_r, η_r)` covariance block for rater `r`.
    pub fn rater_block(&self, r: usize) -> Option<Matrix3<f64>> {
        let cov = self.structural_covariance.as_ref()?;
        let l = self.layout();
        let idx = [ParamLayout::SIGMA, l.rho(r), l.eta(r)];
        Some(Matrix3::from_fn(|a, b| cov[(idx[a], idx[b])]))
    }

    /// Logit-scale abilities `σ̂ θ̂'`.
    pub fn abilities(&self) -> Vec<f64> {
        self.params.theta_prime.iter().map(|t| self.params.sigma * t).collect()
    }
}

/// Output of [`maximize_laplace`].
#[derive(Debug, Clone)]
pub struct LaplaceFit {
    pub params: ParameterSet,
    pub objective: f64,
    pub iterations: usize,
    pub converged: bool,
    pub projected_gradient_norm: f64,
}

/// Maximizes the Laplace objective over `(ρ, η, δ, α)` with abilities held
/// at `theta_star` and `σ` fixed.
///
/// `ρ` is kept nonnegative (and at 1 for the TFM); severities and
/// difficulties keep their sums. Entries listed in `fixed_raters` /
/// `fixed_items` do not move.
pub fn maximize_laplace(
    spec: &ModelSpec,
    init: &ParameterSet,
    theta_star: &[f64],
    data: &RatingDataset,
    fixed_raters: &[usize],
    fixed_items: &[usize],
    config: &FitConfig,
) -> Result<LaplaceFit> {
    check_family(spec)?;
    let layout = ParamLayout::of(init);
    let mut cons = Constraints::unconstrained(layout.len());
    cons.fixed[ParamLayout::SIGMA] = true;
    for r in 0..layout.n_raters {
        let k = layout.rho(r);
        if spec.family == ModelFamily::Tfm {
            cons.fixed[k] = true;
        } else {
            cons.lower[k] = 0.0;
        }
    }
    for &r in fixed_raters {
        cons.fixed[layout.eta(r)] = true;
    }
    for &i in fixed_items {
        cons.fixed[layout.delta(i)] = true;
    }
    cons.zero_sum_groups.push((0..layout.n_raters).map(|r| layout.eta(r)).collect());
    cons.zero_sum_groups.push((0..layout.n_items).map(|i| layout.delta(i)).collect());

    let mut work = init.clone();
    let objective = |x: &[f64]| -> Result<(f64, Vec<f64>)> {
        layout.unpack(x, &mut work);
        let (v, g) = laplace_value_and_gradient(spec, &work, data, theta_star, ThetaMode::Fixed)?;
        Ok((-v, g.into_iter().map(|d| -d).collect()))
    };
    let options = OptimizerOptions { max_iterations: config.optimizer_max_iterations, ..OptimizerOptions::default() };
    let res = minimize(objective, &layout.pack(init), &cons, &options)?;
    let mut params = init.clone();
    layout.unpack(&res.x, &mut params);
    Ok(LaplaceFit {
        params,
        objective: -res.value,
        iterations: res.iterations,
        converged: res.converged,
        projected_gradient_norm: res.projected_gradient_norm,
    })
}

fn sd_pop(xs: &[f64]) -> f64 {
    variance(xs).sqrt()
}

/// Step 2: alternate ability and discrimination updates until the summed
/// h-likelihood settles. Returns (sweeps, gain from θ, gain from ρ).
fn block_ascent(
    spec: &ModelSpec,
    params: &mut ParameterSet,
    data: &RatingDataset,
    theta: &mut Vec<f64>,
    by_rater: &[Vec<usize>],
    config: &FitConfig,
) -> Result<(usize, f64, f64)> {
    let total_h = |params: &ParameterSet, theta: &[f64]| -> f64 {
        (0..theta.len()).map(|n| student_h(spec, params, data, n, theta[n])).sum()
    };
    let mut current = total_h(params, theta);
    let (mut theta_gain, mut rho_gain) = (0.0, 0.0);
    let mut sweeps = 0;
    while sweeps < config.max_block_sweeps {
        sweeps += 1;
        let prof = maximize_h(spec, params, theta, data, config)?;
        *theta = prof.theta;
        let after_theta: f64 = prof.h.iter().sum();
        theta_gain += after_theta - current;
        let mut gain = 0.0;
        if spec.family == ModelFamily::Gmf {
            for (r, records) in by_rater.iter().enumerate() {
                gain += update_rho(spec, params, data, theta, records, r, config);
            }
        }
        rho_gain += gain;
        let next = after_theta + gain;
        let change = next - current;
        current = next;
        if change.abs() < config.block_tolerance {
            break;
        }
    }
    Ok((sweeps, theta_gain, rho_gain))
}

/// Fits a TFM or GMF model.
pub fn fit(spec: &ModelSpec, data: &RatingDataset, config: &FitConfig) -> Result<FitResult> {
    check_family(spec)?;
    config.validate()?;
    let glm = initialize_glm(data, config.ridge)?;
    let mut diagnostics = vec![StepLog {
        iteration: 0,
        step: "glm".into(),
        sigma: 1.0,
        objective: f64::NAN,
        detail: format!(
            "IRLS iterations {} (converged {}); separated raters {:?}, items {:?}, students {}",
            glm.iterations,
            glm.converged,
            glm.separated_raters,
            glm.separated_items,
            glm.separated_students.len()
        ),
    }];

    let mut params = ParameterSet::neutral(data.n_students(), data.n_raters(), data.n_items());
    params.eta = glm.eta.clone();
    params.delta = glm.delta.clone();
    params.alpha = glm.alpha;
    let mut theta = glm.theta.clone();
    let by_rater = records_by_rater(data);

    let mut converged = false;
    let mut rho_scaling_skipped = false;
    let mut iterations_used = 0;
    let mut prev_ll: Option<f64> = None;

    let (sweeps, theta_gain, rho_gain) = block_ascent(spec, &mut params, data, &mut theta, &by_rater, config)?;
    diagnostics.push(StepLog {
        iteration: 0,
        step: "hl_block_ascent".into(),
        sigma: params.sigma,
        objective: (0..theta.len()).map(|n| student_h(spec, &params, data, n, theta[n])).sum(),
        detail: format!(
            "{sweeps} sweeps; h gain from theta {theta_gain:.6}, from rho {rho_gain:.6} ({} dominated)",
            if rho_gain > theta_gain { "rho" } else { "theta" }
        ),
    });

    // `theta` holds the ability modes `θ̂'` at the current scale and `h2`
    // their curvatures, so `σ θ̂'` are logit-scale modes with posterior
    // variances `σ² / |h''|`.
    let mut prof = maximize_h(spec, &params, &theta, data, config)?;
    theta = prof.theta.clone();
    for t in 1..=config.max_outer_iterations {
        iterations_used = t;
        let sigma_prev = params.sigma;
        let logit: Vec<f64> = theta.iter().map(|v| v * params.sigma).collect();
        let m = mean(&logit);
        let spread = variance(&logit);
        let posterior =
            mean(&prof.h2.iter().map(|h| params.sigma * params.sigma / h.abs().max(1e-12)).collect::<Vec<_>>());
        let sd = (spread + posterior).sqrt();
        if !(spread.sqrt() > 1e-8) {
            return Err(Error::Estimation("ability estimates have zero spread; scale is not identified".into()));
        }
        params.sigma = sd;
        let theta_star: Vec<f64> = logit.iter().map(|v| (v - m) / sd).collect();
        let lap =
            maximize_laplace(spec, &params, &theta_star, data, &glm.separated_raters, &glm.separated_items, config)?;
        params = lap.params;
        diagnostics.push(StepLog {
            iteration: t,
            step: "laplace".into(),
            sigma: params.sigma,
            objective: lap.objective,
            detail: format!(
                "{} quasi-Newton iterations, converged {}, projected gradient {:.2e}",
                lap.iterations, lap.converged, lap.projected_gradient_norm
            ),
        });

        if spec.family == ModelFamily::Gmf {
            let max_rho = params.rho.iter().copied().fold(0.0, f64::max);
            if max_rho < 1e-3 {
                rho_scaling_skipped = true;
            } else {
                params.rho.iter_mut().for_each(|r| *r /= max_rho);
            }
        }
        prof = maximize_h(spec, &params, &theta_star, data, config)?;
        theta = prof.theta.clone();
        let ll = prof.laplace_loglik();
        diagnostics.push(StepLog {
            iteration: t,
            step: "rescale_refresh".into(),
            sigma: params.sigma,
            objective: ll,
            detail: format!(
                "max |h'| {:.2e}; mode spread {:.6}, posterior variance {:.6}",
                prof.max_abs_gradient,
                spread.sqrt(),
                posterior
            ),
        });

        let scale_done = t > 1 && (params.sigma - sigma_prev).abs() < config.scale_change_tolerance;
        let ll_done = prev_ll.is_some_and(|p| (ll - p).abs() < config.loglik_tolerance);
        prev_ll = Some(ll);
        if scale_done || ll_done {
            converged = true;
            break;
        }
    }

    // Standardize the reported abilities; the mean shift moves into the
    // severities and `σ̂` keeps the population scale.
    let sd = sd_pop(&theta);
    let m = mean(&theta);
    for r in 0..params.n_raters() {
        let rho = if spec.family == ModelFamily::Tfm { 1.0 } else { params.rho[r] };
        params.eta[r] -= rho * params.sigma * m;
    }
    params.theta_prime = theta.iter().map(|v| (v - m) / sd).collect();
    params.center_effects();
    if spec.family == ModelFamily::Tfm {
        params.rho = vec![1.0; params.n_raters()];
    }

    let prof = maximize_h(spec, &params, &params.theta_prime, data, config)?;
    let laplace_loglik = prof.laplace_loglik();
    let mut result = FitResult {
        spec: *spec,
        params,
        laplace_loglik,
        converged,
        iterations_used,
        structural_covariance: None,
        covariance_pseudo_inverse: false,
        rho_scaling_skipped,
        separated_raters: glm.separated_raters,
        separated_items: glm.separated_items,
        diagnostics,
    };
    if config.compute_covariance {
        match structural_covariance(&result, data, config) {
            Ok(cov) => {
                result.covariance_pseudo_inverse = cov.pseudo_inverse;
                result.structural_covariance = Some(cov.matrix);
            }
            Err(e) => result.diagnostics.push(StepLog {
                iteration: iterations_used,
                step: "covariance".into(),
                sigma: result.params.sigma,
                objective: laplace_loglik,
                detail: format!("covariance unavailable: {e}"),
            }),
        }
    }
    Ok(result)
}
