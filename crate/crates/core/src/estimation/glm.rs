//! Additive logistic regression used to start the estimator.
//!
//! The predictor is `θ_n - η_r - δ_i + α`. The student block of the normal
//! matrix is diagonal, so each IRLS step eliminates it and solves only the
//! `(R + I + 1)`-sized Schur complement.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::link::{logistic, softplus};
use crate::model::{mean, RatingDataset};

/// Bound applied to every effect while iterating.
pub const EFFECT_CLAMP: f64 = 8.0;
const INTERCEPT_CLAMP: f64 = 35.0;
const MAX_IRLS: usize = 100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlmInit {
    /// Centered student effects on the logit scale.
    pub theta: Vec<f64>,
    pub eta: Vec<f64>,
    pub delta: Vec<f64>,
    pub alpha: f64,
    /// Raters whose scores are all identical.
    pub separated_raters: Vec<usize>,
    pub separated_items: Vec<usize>,
    pub separated_students: Vec<usize>,
    pub iterations: usize,
    pub converged: bool,
}

/// Errors with the facet blocks when the design graph is not connected.
pub fn check_connected(data: &RatingDataset) -> Result<()> {
    let blocks = data.connected_components();
    if blocks.len() > 1 {
        let components = blocks
            .iter()
            .map(|b| {
                let shown: Vec<&str> = b.iter().take(4).map(String::as_str).collect();
                let more = if b.len() > 4 { format!(" (+{} more)", b.len() - 4) } else { String::new() };
                format!("{{{}{more}}}", shown.join(", "))
            })
            .collect();
        return Err(Error::Disconnected { components });
    }
    Ok(())
}

fn constant_groups(totals: &[(usize, usize)]) -> Vec<usize> {
    totals.iter().enumerate().filter(|(_, &(n, s))| n > 0 && (s == 0 || s == n)).map(|(k, _)| k).collect()
}

struct State {
    theta: Vec<f64>,
    eta: Vec<f64>,
    delta: Vec<f64>,
    alpha: f64,
}

impl State {
    fn predictor(&self, n: usize, r: usize, i: usize) -> f64 {
        self.theta[n] - self.eta[r] - self.delta[i] + self.alpha
    }

    fn penalized_loglik(&self, data: &RatingDataset, ridge: f64) -> f64 {
        let ll: f64 = data
            .observations()
            .iter()
            .map(|o| {
                let s = self.predictor(o.student, o.rater, o.item);
                if o.score {
                    -softplus(-s)
                } else {
                    -softplus(s)
                }
            })
            .sum();
        let sq = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>();
        ll - 0.5 * ridge * (sq(&self.theta) + sq(&self.eta) + sq(&self.delta))
    }

    fn clamp(&mut self) {
        for v in self.theta.iter_mut().chain(self.eta.iter_mut()).chain(self.delta.iter_mut()) {
            *v = v.clamp(-EFFECT_CLAMP, EFFECT_CLAMP);
        }
        self.alpha = self.alpha.clamp(-INTERCEPT_CLAMP, INTERCEPT_CLAMP);
    }
}

/// Fits the additive logistic model by ridge-stabilized IRLS and recenters
/// the effects (`mean θ = mean η = Σδ = 0`), folding the offsets into `α`.
pub fn initialize_glm(data: &RatingDataset, ridge: f64) -> Result<GlmInit> {
    if data.is_empty() {
        return Err(Error::InvalidInput("dataset has no records".into()));
    }
    if !(ridge >= 0.0) {
        return Err(Error::InvalidInput(format!("ridge must be nonnegative, got {ridge}")));
    }
    check_connected(data)?;
    let (n_s, n_r, n_i) = (data.n_students(), data.n_raters(), data.n_items());
    let q = n_r + n_i + 1;
    let alpha_idx = n_r + n_i;
    let mut st = State { theta: vec![0.0; n_s], eta: vec![0.0; n_r], delta: vec![0.0; n_i], alpha: 0.0 };
    let ridge_eff = ridge.max(1e-12);
    let mut current = st.penalized_loglik(data, ridge_eff);
    let mut iterations = 0;
    let mut converged = false;

    // Per-student rows of the coupling block, accumulated sparsely.
    let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n_s];
    while iterations < MAX_IRLS {
        iterations += 1;
        let mut d = vec![ridge_eff; n_s];
        let mut g1 = vec![0.0; n_s];
        let mut c = DMatrix::<f64>::zeros(q, q);
        let mut g2 = DVector::<f64>::zeros(q);
        for row in rows.iter_mut() {
            row.clear();
        }
        for o in data.observations() {
            let mu = logistic(st.predictor(o.student, o.rater, o.item));
            let w = (mu * (1.0 - mu)).max(1e-12);
            let res = if o.score { 1.0 - mu } else { -mu };
            // Design row: +1 θ_n, -1 η_r, -1 δ_i, +1 α.
            let cols = [(o.rater, -1.0), (n_r + o.item, -1.0), (alpha_idx, 1.0)];
            d[o.student] += w;
            g1[o.student] += res;
            for &(a, xa) in &cols {
                g2[a] += xa * res;
                rows[o.student].push((a, w * xa));
                for &(b, xb) in &cols {
                    c[(a, b)] += w * xa * xb;
                }
            }
        }
        for n in 0..n_s {
            g1[n] -= ridge_eff * st.theta[n];
        }
        for r in 0..n_r {
            g2[r] -= ridge_eff * st.eta[r];
            c[(r, r)] += ridge_eff;
        }
        for i in 0..n_i {
            g2[n_r + i] -= ridge_eff * st.delta[i];
            c[(n_r + i, n_r + i)] += ridge_eff;
        }
        // Schur complement: (C - Bᵀ D⁻¹ B) x₂ = g₂ - Bᵀ D⁻¹ g₁.
        let mut schur = c;
        let mut rhs = g2;
        let mut dense_row = vec![0.0; q];
        for n in 0..n_s {
            dense_row.iter_mut().for_each(|v| *v = 0.0);
            for &(a, v) in &rows[n] {
                dense_row[a] += v;
            }
            let inv = 1.0 / d[n];
            for a in 0..q {
                if dense_row[a] == 0.0 {
                    continue;
                }
                rhs[a] -= dense_row[a] * inv * g1[n];
                for b in 0..q {
                    schur[(a, b)] -= dense_row[a] * inv * dense_row[b];
                }
            }
        }
        let step2 = match schur.clone().cholesky() {
            Some(ch) => ch.solve(&rhs),
            None => schur
                .lu()
                .solve(&rhs)
                .ok_or_else(|| Error::Estimation("singular normal equations in GLM start".into()))?,
        };
        let step1: Vec<f64> = (0..n_s)
            .map(|n| {
                let coupled: f64 = rows[n].iter().map(|&(a, v)| v * step2[a]).sum();
                (g1[n] - coupled) / d[n]
            })
            .collect();

        let mut t = 1.0;
        let mut accepted = false;
        let mut max_change = 0.0f64;
        for _ in 0..30 {
            let mut trial = State {
                theta: st.theta.iter().zip(&step1).map(|(a, b)| a + t * b).collect(),
                eta: (0..n_r).map(|r| st.eta[r] + t * step2[r]).collect(),
                delta: (0..n_i).map(|i| st.delta[i] + t * step2[n_r + i]).collect(),
                alpha: st.alpha + t * step2[alpha_idx],
            };
            trial.clamp();
            let value = trial.penalized_loglik(data, ridge_eff);
            if value >= current - 1e-12 * current.abs() {
                max_change = trial
                    .theta
                    .iter()
                    .zip(&st.theta)
                    .chain(trial.eta.iter().zip(&st.eta))
                    .chain(trial.delta.iter().zip(&st.delta))
                    .map(|(a, b)| (a - b).abs())
                    .fold((trial.alpha - st.alpha).abs(), f64::max);
                st = trial;
                current = value;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if !accepted || max_change < 1e-8 {
            converged = true;
            break;
        }
    }

    let rater_totals = data.rater_totals();
    let item_totals = data.item_totals();
    let separated_raters = constant_groups(&rater_totals);
    let separated_items = constant_groups(&item_totals);
    let separated_students = constant_groups(&data.student_totals());
    // Separated effects have no finite estimate; pin them at the clamp on the
    // side their scores point to (all passes means lenient / easy).
    for &r in &separated_raters {
        let all_pass = rater_totals[r].1 == rater_totals[r].0;
        st.eta[r] = if all_pass { -EFFECT_CLAMP } else { EFFECT_CLAMP };
    }
    for &i in &separated_items {
        let all_pass = item_totals[i].1 == item_totals[i].0;
        st.delta[i] = if all_pass { -EFFECT_CLAMP } else { EFFECT_CLAMP };
    }

    let (mt, me, md) = (mean(&st.theta), mean(&st.eta), mean(&st.delta));
    st.theta.iter_mut().for_each(|v| *v -= mt);
    st.eta.iter_mut().for_each(|v| *v -= me);
    st.delta.iter_mut().for_each(|v| *v -= md);
    st.alpha += mt - me - md;

    Ok(GlmInit {
        theta: st.theta,
        eta: st.eta,
        delta: st.delta,
        alpha: st.alpha,
        separated_raters,
        separated_items,
        separated_students,
        iterations,
        converged,
    })
}
