//! Laplace-approximated marginal log-likelihood and its analytic gradient.
//!
//! With `a = ρσ`, the per-student pieces are
//! `h = Σℓ - θ²/2`, `h' = Σaℓ' - θ`, `h'' = Σa²ℓ'' - 1`, `h''' = Σa³ℓ'''`, and
//! for a structural parameter ψ entering through `(∂S, ∂a)`:
//! `∂h = Σℓ'∂S`, `∂h' = Σ(∂a ℓ' + aℓ''∂S)`, `∂h'' = Σ(2a∂a ℓ'' + a²ℓ'''∂S)`.
//! The objective `L = Σ h(θ) - ½log|h''(θ)|` then has gradient
//! `∂h - ½∂h''/h''` at fixed θ, plus `½h'''∂h'/h''²` when θ tracks the
//! maximizer of `h`.

use serde::{Deserialize, Serialize};

use super::hl::{offset, slope, student_terms};
use crate::error::{Error, Result};
use crate::model::{ModelFamily, ModelSpec, ParameterSet, RatingDataset};

/// Flat layout `[σ, ρ_1..ρ_R, η_1..η_R, δ_1..δ_I, α]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamLayout {
    pub n_raters: usize,
    pub n_items: usize,
}

impl ParamLayout {
    pub fn new(n_raters: usize, n_items: usize) -> Self {
        ParamLayout { n_raters, n_items }
    }

    pub fn of(params: &ParameterSet) -> Self {
        Self::new(params.n_raters(), params.n_items())
    }

    pub fn len(&self) -> usize {
        2 + 2 * self.n_raters + self.n_items
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub const SIGMA: usize = 0;

    pub fn rho(&self, r: usize) -> usize {
        1 + r
    }

    pub fn eta(&self, r: usize) -> usize {
        1 + self.n_raters + r
    }

    pub fn delta(&self, i: usize) -> usize {
        1 + 2 * self.n_raters + i
    }

    pub fn alpha(&self) -> usize {
        1 + 2 * self.n_raters + self.n_items
    }

    pub fn pack(&self, params: &ParameterSet) -> Vec<f64> {
        let mut x = Vec::with_capacity(self.len());
        x.push(params.sigma);
        x.extend_from_slice(&params.rho);
        x.extend_from_slice(&params.eta);
        x.extend_from_slice(&params.delta);
        x.push(params.alpha);
        x
    }

    pub fn unpack(&self, x: &[f64], params: &mut ParameterSet) {
        let (r, i) = (self.n_raters, self.n_items);
        params.sigma = x[0];
        params.rho.copy_from_slice(&x[1..1 + r]);
        params.eta.copy_from_slice(&x[1 + r..1 + 2 * r]);
        params.delta.copy_from_slice(&x[1 + 2 * r..1 + 2 * r + i]);
        params.alpha = x[self.alpha()];
    }

    /// Coordinate names in layout order.
    pub fn names(&self, rater_ids: &[String], item_ids: &[String]) -> Vec<String> {
        let mut names = vec!["sigma".to_string()];
        names.extend(rater_ids.iter().map(|r| format!("rho[{r}]")));
        names.extend(rater_ids.iter().map(|r| format!("eta[{r}]")));
        names.extend(item_ids.iter().map(|i| format!("delta[{i}]")));
        names.push("alpha".into());
        names
    }
}

/// Whether abilities are held at the supplied values or are the maximizers
/// of `h` (which changes the gradient).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ThetaMode {
    Fixed,
    Profiled,
}

/// Laplace objective and its gradient over the full [`ParamLayout`].
///
/// In [`ThetaMode::Profiled`] the supplied abilities must maximize each
/// student's `h` under `params`. For the TFM the ρ entries of the gradient
/// are zero.
pub fn laplace_value_and_gradient(
    spec: &ModelSpec,
    params: &ParameterSet,
    data: &RatingDataset,
    theta: &[f64],
    mode: ThetaMode,
) -> Result<(f64, Vec<f64>)> {
    if theta.len() != data.n_students() {
        return Err(Error::ParameterMismatch("ability vector length".into()));
    }
    let layout = ParamLayout::of(params);
    let obs = data.observations();
    let tfm = spec.family == ModelFamily::Tfm;
    let mut grad = vec![0.0; layout.len()];
    let mut total = 0.0;
    for (n, &t) in theta.iter().enumerate() {
        let terms = student_terms(spec, params, data, n, t);
        if !(terms.d2 < 0.0) {
            return Err(Error::Estimation(format!("h'' = {} is not negative for student {n}", terms.d2)));
        }
        total += terms.h - 0.5 * (-terms.d2).ln();
        let c2 = -0.5 / terms.d2;
        let c1 = match mode {
            ThetaMode::Fixed => 0.0,
            ThetaMode::Profiled => 0.5 * terms.d3 / (terms.d2 * terms.d2),
        };
        for &k in data.student_observations(n) {
            let o = &obs[k];
            let a = slope(spec, params, o.rater);
            let d = spec.link.term_derivatives(o.score, a * t + offset(params, o));
            // Contribution for a parameter with predictor derivative ds and
            // slope derivative da.
            let coef = |ds: f64, da: f64| {
                d.d1 * ds + c1 * (da * d.d1 + a * d.d2 * ds) + c2 * (2.0 * a * da * d.d2 + a * a * d.d3 * ds)
            };
            let rho = if tfm { 1.0 } else { params.rho[o.rater] };
            grad[ParamLayout::SIGMA] += coef(rho * t, rho);
            if !tfm {
                grad[layout.rho(o.rater)] += coef(params.sigma * t, params.sigma);
            }
            let shift = coef(1.0, 0.0);
            grad[layout.eta(o.rater)] -= shift;
            grad[layout.delta(o.item)] -= shift;
            grad[layout.alpha()] += shift;
        }
    }
    Ok((total, grad))
}

/// Laplace objective at fixed abilities.
pub fn laplace_value(spec: &ModelSpec, params: &ParameterSet, data: &RatingDataset, theta: &[f64]) -> Result<f64> {
    let mut total = 0.0;
    for (n, &t) in theta.iter().enumerate() {
        let terms = student_terms(spec, params, data, n, t);
        if !(terms.d2 < 0.0) {
            return Err(Error::Estimation(format!("h'' = {} is not negative", terms.d2)));
        }
        total += terms.h - 0.5 * (-terms.d2).ln();
    }
    Ok(total)
}
