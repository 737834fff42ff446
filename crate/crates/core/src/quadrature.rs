//! One-dimensional integration against a normal density.
//!
//! Gauss–Hermite rules here use the probabilists' weight, so the weights sum
//! to one and `sum_k w_k f(x_k)` approximates `E[f(Z)]` for standard normal
//! `Z`. The adaptive Simpson rule integrates the same expectation over the
//! truncated range `[-8, 8]` and serves as an independent cross-check.

use std::cell::Cell;
use std::sync::OnceLock;

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{link::std_normal_pdf, record_log_likelihood_at, ModelSpec, ParameterSet, RatingDataset};

pub const DEFAULT_ORDER: usize = 61;
/// Half-width of the adaptive rule's range in standardized units.
pub const TRUNCATION: f64 = 8.0;
/// Upper bound on `N * R * I * order` for [`marginal_loglik_exact`].
pub const EXACT_WORK_LIMIT: f64 = 1e8;

const ADAPTIVE_TOL: f64 = 1e-12;
const ADAPTIVE_DEPTH: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RuleKind {
    GaussHermite,
    AdaptiveSimpson,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureRule {
    pub kind: RuleKind,
    /// Fixed nodes (empty for the adaptive rule).
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
    /// Number of nodes, or the maximum bisection depth for the adaptive rule.
    pub order: usize,
    /// Absolute tolerance of the adaptive rule; unused by Gauss–Hermite.
    pub tolerance: f64,
}

/// Orthonormal probabilists' Hermite values `p_0..p_{n}` at `x`.
fn orthonormal_hermite(n: usize, x: f64, out: &mut Vec<f64>) {
    out.clear();
    out.push(1.0);
    if n == 0 {
        return;
    }
    out.push(x);
    for k in 1..n {
        let next = (x * out[k] - (k as f64).sqrt() * out[k - 1]) / ((k + 1) as f64).sqrt();
        out.push(next);
    }
}

impl QuadratureRule {
    /// Gauss–Hermite rule of the given order.
    ///
    /// Nodes start from the eigenvalues of the Jacobi matrix and are polished
    /// by Newton steps on the degree-`order` polynomial; weights are the
    /// Christoffel numbers `1 / sum_j p_j(x)^2`.
    pub fn gauss_hermite(order: usize) -> Result<Self> {
        if order == 0 {
            return Err(Error::InvalidInput("quadrature order must be positive".into()));
        }
        let jacobi =
            DMatrix::from_fn(
                order,
                order,
                |i, j| {
                    if i + 1 == j || j + 1 == i {
                        (i.max(j) as f64).sqrt()
                    } else {
                        0.0
                    }
                },
            );
        let mut nodes: Vec<f64> = SymmetricEigen::new(jacobi).eigenvalues.iter().copied().collect();
        nodes.sort_by(|a, b| a.total_cmp(b));

        let mut p = Vec::with_capacity(order + 1);
        for x in nodes.iter_mut() {
            for _ in 0..3 {
                orthonormal_hermite(order, *x, &mut p);
                let step = p[order] / ((order as f64).sqrt() * p[order - 1]);
                if !step.is_finite() {
                    break;
                }
                *x -= step;
            }
        }
        // Exact antisymmetry of the node set.
        for k in 0..order / 2 {
            let m = 0.5 * (nodes[order - 1 - k] - nodes[k]);
            nodes[k] = -m;
            nodes[order - 1 - k] = m;
        }
        if order % 2 == 1 {
            nodes[order / 2] = 0.0;
        }

        let weights: Vec<f64> = nodes
            .iter()
            .map(|&x| {
                orthonormal_hermite(order - 1, x, &mut p);
                1.0 / p.iter().map(|v| v * v).sum::<f64>()
            })
            .collect();
        Ok(QuadratureRule { kind: RuleKind::GaussHermite, nodes, weights, order, tolerance: 0.0 })
    }

    pub fn adaptive_simpson(tolerance: f64) -> Self {
        QuadratureRule {
            kind: RuleKind::AdaptiveSimpson,
            nodes: Vec::new(),
            weights: Vec::new(),
            order: ADAPTIVE_DEPTH,
            tolerance,
        }
    }

    /// `E[f(Z)]` for standard normal `Z`.
    pub fn expectation(&self, f: impl Fn(f64) -> f64) -> Result<f64> {
        integrate_against_normal(f, 1.0, self)
    }
}

/// The cached order-61 Gauss–Hermite rule.
pub fn default_rule() -> &'static QuadratureRule {
    static RULE: OnceLock<QuadratureRule> = OnceLock::new();
    RULE.get_or_init(|| QuadratureRule::gauss_hermite(DEFAULT_ORDER).expect("positive order"))
}

/// A cached order-121 rule used for refinement checks.
pub fn refined_rule() -> &'static QuadratureRule {
    static RULE: OnceLock<QuadratureRule> = OnceLock::new();
    RULE.get_or_init(|| QuadratureRule::gauss_hermite(2 * DEFAULT_ORDER - 1).expect("positive order"))
}

/// The default adaptive Simpson rule.
pub fn default_adaptive() -> QuadratureRule {
    QuadratureRule::adaptive_simpson(ADAPTIVE_TOL)
}

fn simpson_step(
    f: &impl Fn(f64) -> f64,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    depth: usize,
) -> f64 {
    let m = 0.5 * (a + b);
    let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
    let (flm, frm) = (f(lm), f(rm));
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    let diff = left + right - whole;
    if !diff.is_finite() {
        return diff;
    }
    if depth == 0 || diff.abs() <= 15.0 * tol {
        return left + right + diff / 15.0;
    }
    simpson_step(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)
        + simpson_step(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
}

/// Adaptive Simpson quadrature of `f` on `[a, b]` with Richardson correction.
pub fn adaptive_simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, tol: f64, max_depth: usize) -> f64 {
    // Split into panels first so narrow features are not missed by the
    // initial five-point estimate.
    const PANELS: usize = 16;
    let h = (b - a) / PANELS as f64;
    (0..PANELS)
        .map(|k| {
            let (lo, hi) = (a + k as f64 * h, a + (k + 1) as f64 * h);
            let (fa, fm, fb) = (f(lo), f(0.5 * (lo + hi)), f(hi));
            let whole = (hi - lo) / 6.0 * (fa + 4.0 * fm + fb);
            simpson_step(&f, lo, hi, fa, fm, fb, whole, tol / PANELS as f64, max_depth)
        })
        .sum()
}

/// `∫ f(θ) φ(θ/scale)/scale dθ`, i.e. `E[f(scale·Z)]`.
pub fn integrate_against_normal(f: impl Fn(f64) -> f64, scale: f64, rule: &QuadratureRule) -> Result<f64> {
    if !(scale > 0.0) || !scale.is_finite() {
        return Err(Error::InvalidInput(format!("scale must be positive, got {scale}")));
    }
    match rule.kind {
        RuleKind::GaussHermite => {
            let mut total = 0.0;
            for (&x, &w) in rule.nodes.iter().zip(&rule.weights) {
                let node = scale * x;
                let value = f(node);
                if !value.is_finite() {
                    return Err(Error::NonFinite { node, value });
                }
                total += w * value;
            }
            Ok(total)
        }
        RuleKind::AdaptiveSimpson => {
            let bad = Cell::new(None);
            let g = |z: f64| {
                let node = scale * z;
                let value = f(node);
                if !value.is_finite() && bad.get().is_none() {
                    bad.set(Some((node, value)));
                }
                value * std_normal_pdf(z)
            };
            let total = adaptive_simpson(g, -TRUNCATION, TRUNCATION, rule.tolerance, rule.order);
            match bad.get() {
                Some((node, value)) => Err(Error::NonFinite { node, value }),
                None => Ok(total),
            }
        }
    }
}

fn log_sum_exp(terms: impl Iterator<Item = f64>) -> f64 {
    let terms: Vec<f64> = terms.collect();
    let m = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + terms.iter().map(|t| (t - m).exp()).sum::<f64>().ln()
}

/// Marginal log-likelihood `sum_n log M_n` with each student's standardized
/// ability integrated out against `N(0, 1)`.
///
/// `params.theta_prime` is ignored. The integrand is handled in the log
/// domain so students with many records do not underflow.
pub fn marginal_loglik_exact(
    spec: &ModelSpec,
    params: &ParameterSet,
    data: &RatingDataset,
    rule: &QuadratureRule,
) -> Result<f64> {
    let effective_order = match rule.kind {
        RuleKind::GaussHermite => rule.order,
        RuleKind::AdaptiveSimpson => 1000,
    };
    let work = data.n_students() as f64 * data.n_raters() as f64 * data.n_items() as f64 * effective_order as f64;
    if work > EXACT_WORK_LIMIT {
        return Err(Error::QuadratureGuard { work, limit: EXACT_WORK_LIMIT });
    }
    let obs = data.observations();
    let mut total = 0.0;
    for n in 0..data.n_students() {
        let records = data.student_observations(n);
        let log_h = |z: f64| -> Result<f64> {
            let mut s = 0.0;
            for &k in records {
                s += record_log_likelihood_at(spec, params, &obs[k], z)?;
            }
            Ok(s)
        };
        let log_m = match rule.kind {
            RuleKind::GaussHermite => {
                let mut terms = Vec::with_capacity(rule.order);
                for (&x, &w) in rule.nodes.iter().zip(&rule.weights) {
                    terms.push(w.ln() + log_h(x)?);
                }
                log_sum_exp(terms.into_iter())
            }
            RuleKind::AdaptiveSimpson => {
                let mut c = f64::NEG_INFINITY;
                for k in 0..=160 {
                    let z = -TRUNCATION + k as f64 * 0.1;
                    c = c.max(log_h(z)? - 0.5 * z * z);
                }
                let shifted = |z: f64| log_h(z).map(|v| (v - c).exp()).unwrap_or(f64::NAN);
                integrate_against_normal(shifted, 1.0, rule)?.ln() + c
            }
        };
        total += log_m;
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{link::logistic_density, RatingRecord};

    #[test]
    fn weights_are_positive_and_normalized() {
        for order in [1, 2, 5, 20, 61, 121] {
            let rule = QuadratureRule::gauss_hermite(order).unwrap();
            assert_eq!(rule.nodes.len(), order);
            assert!(rule.weights.iter().all(|&w| w > 0.0));
            assert!((rule.weights.iter().sum::<f64>() - 1.0).abs() < 1e-12, "order {order}");
        }
        assert!(QuadratureRule::gauss_hermite(0).is_err());
    }

    #[test]
    fn normal_moments_are_exact() {
        let moments = [1.0, 0.0, 1.0, 0.0, 3.0, 0.0, 15.0];
        for order in [4, 10, 61] {
            let rule = QuadratureRule::gauss_hermite(order).unwrap();
            for (k, &m) in moments.iter().enumerate() {
                let got = rule.expectation(|x| x.powi(k as i32)).unwrap();
                assert!((got - m).abs() < 1e-10, "order {order}, degree {k}: {got}");
            }
        }
    }

    #[test]
    fn three_point_rule_matches_table() {
        let rule = QuadratureRule::gauss_hermite(3).unwrap();
        assert!((rule.nodes[2] - 3f64.sqrt()).abs() < 1e-14);
        assert!((rule.weights[1] - 2.0 / 3.0).abs() < 1e-14);
        assert!((rule.weights[0] - 1.0 / 6.0).abs() < 1e-14);
    }

    #[test]
    fn scale_and_normalization() {
        let rule = default_rule();
        for s in [0.1, 1.0, 2.5] {
            assert!((integrate_against_normal(|_| 1.0, s, rule).unwrap() - 1.0).abs() < 1e-12);
            let var = integrate_against_normal(|t| t * t, s, rule).unwrap();
            assert!((var - s * s).abs() < 1e-10 * s * s);
        }
        assert!(integrate_against_normal(|_| 1.0, 0.0, rule).is_err());
    }

    #[test]
    fn logistic_density_expectation() {
        let gh = default_rule().expectation(logistic_density).unwrap();
        assert!((gh - 0.2066).abs() < 5e-4, "{gh}");
        let fine = refined_rule().expectation(logistic_density).unwrap();
        assert!((gh - fine).abs() < 1e-8);
        let simpson = default_adaptive().expectation(logistic_density).unwrap();
        assert!((gh - simpson).abs() < 1e-6);
    }

    #[test]
    fn adaptive_simpson_plain_integrals() {
        let v = adaptive_simpson(|x: f64| x.sin(), 0.0, std::f64::consts::PI, 1e-12, 40);
        assert!((v - 2.0).abs() < 1e-10);
        let v = adaptive_simpson(|x: f64| x.exp(), 0.0, 1.0, 1e-12, 40);
        assert!((v - (1f64.exp() - 1.0)).abs() < 1e-11);
    }

    #[test]
    fn non_finite_integrand_is_reported() {
        let r = default_rule().expectation(|x| if x > 3.0 { f64::NAN } else { 1.0 });
        assert!(matches!(r, Err(Error::NonFinite { .. })));
        let r = default_adaptive().expectation(|x| 1.0 / (x - 0.5).max(0.0));
        assert!(matches!(r, Err(Error::NonFinite { .. })));
    }

    fn small_instance(n: usize, r: usize, i: usize, seed: u64) -> (ModelSpec, ParameterSet, RatingDataset) {
        // Deterministic pseudo-random values without an RNG dependency.
        let mut state = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        let mut next = move || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (state >> 11) as f64 / (1u64 << 53) as f64
        };
        let mut params = ParameterSet::neutral(n, r, i);
        params.sigma = 0.5 + next();
        params.rho = (0..r).map(|_| 0.2 + 0.8 * next()).collect();
        params.eta = (0..r).map(|_| next() * 2.0 - 1.0).collect();
        params.delta = (0..i).map(|_| next() * 2.0 - 1.0).collect();
        params.alpha = 0.3;
        let mut records = Vec::new();
        for s in 0..n {
            for rr in 0..r {
                for ii in 0..i {
                    records.push(RatingRecord::new(
                        format!("s{s}"),
                        format!("r{rr}"),
                        format!("i{ii}"),
                        (next() < 0.5) as u8,
                    ));
                }
            }
        }
        (ModelSpec::gmf(), params, RatingDataset::from_records(records).unwrap())
    }

    #[test]
    fn empty_dataset_has_zero_marginal() {
        let data = RatingDataset::from_records(Vec::new()).unwrap();
        let params = ParameterSet::neutral(0, 0, 0);
        let v = marginal_loglik_exact(&ModelSpec::gmf(), &params, &data, default_rule()).unwrap();
        assert_eq!(v, 0.0);
    }

    #[test]
    fn zero_discrimination_collapses_integral() {
        let data = RatingDataset::from_records(vec![RatingRecord::new("s", "r", "i", 1)]).unwrap();
        let mut params = ParameterSet::neutral(1, 1, 1);
        params.rho = vec![0.0];
        params.eta = vec![0.4];
        params.delta = vec![-0.2];
        params.alpha = 0.1;
        let expected = crate::model::link::logistic(-0.4 + 0.2 + 0.1).ln();
        let v = marginal_loglik_exact(&ModelSpec::gmf(), &params, &data, default_rule()).unwrap();
        assert!((v - expected).abs() < 1e-13);
    }

    #[test]
    fn rule_refinement_is_stable() {
        let (spec, params, data) = small_instance(5, 3, 4, 11);
        let a = marginal_loglik_exact(&spec, &params, &data, default_rule()).unwrap();
        let b = marginal_loglik_exact(&spec, &params, &data, &QuadratureRule::gauss_hermite(101).unwrap()).unwrap();
        assert!((a - b).abs() < 1e-8, "{a} vs {b}");
        let c = marginal_loglik_exact(&spec, &params, &data, &default_adaptive()).unwrap();
        assert!((a - c).abs() < 1e-6, "{a} vs {c}");
    }

    #[test]
    fn guard_rejects_large_problems() {
        let (spec, params, data) = small_instance(5, 3, 4, 1);
        let huge = QuadratureRule::gauss_hermite(1).map(|mut r| {
            r.order = 10_000_000;
            r
        });
        let r = marginal_loglik_exact(&spec, &params, &data, &huge.unwrap());
        assert!(matches!(r, Err(Error::QuadratureGuard { .. })));
    }
}
