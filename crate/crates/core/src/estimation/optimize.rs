//! Projected limited-memory BFGS for box bounds plus zero-sum groups.
//!
//! Feasibility is kept by construction: search directions are projected so
//! that fixed coordinates never move and each zero-sum group's free members
//! move by amounts that sum to zero, and trial points are clamped onto the
//! box. Box-bounded coordinates must not belong to a zero-sum group.

use std::collections::VecDeque;

use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct Constraints {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    /// Coordinates held at their starting value.
    pub fixed: Vec<bool>,
    /// Index groups whose sum must stay constant.
    pub zero_sum_groups: Vec<Vec<usize>>,
}

impl Constraints {
    pub fn unconstrained(n: usize) -> Self {
        Constraints {
            lower: vec![f64::NEG_INFINITY; n],
            upper: vec![f64::INFINITY; n],
            fixed: vec![false; n],
            zero_sum_groups: Vec::new(),
        }
    }

    fn clamp(&self, x: &mut [f64]) {
        for (k, v) in x.iter_mut().enumerate() {
            *v = v.clamp(self.lower[k], self.upper[k]);
        }
    }

    /// Projects `v` onto the feasible tangent space at `x`. `step_of` maps `v`
    /// to the step it induces: -1 for gradients, 1 for directions.
    fn project(&self, x: &[f64], v: &mut [f64], step_of: f64) {
        for k in 0..v.len() {
            let step = step_of * v[k];
            let blocked =
                self.fixed[k] || (x[k] <= self.lower[k] && step < 0.0) || (x[k] >= self.upper[k] && step > 0.0);
            if blocked {
                v[k] = 0.0;
            }
        }
        for group in &self.zero_sum_groups {
            let free: Vec<usize> = group.iter().copied().filter(|&k| !self.fixed[k]).collect();
            if free.is_empty() {
                continue;
            }
            let m = free.iter().map(|&k| v[k]).sum::<f64>() / free.len() as f64;
            for k in free {
                v[k] -= m;
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct OptimizerOptions {
    pub max_iterations: usize,
    /// Stop when the projected gradient's max-norm falls below this.
    pub gradient_tolerance: f64,
    /// Stop when the relative objective decrease falls below this.
    pub value_tolerance: f64,
    pub memory: usize,
}

impl Default for OptimizerOptions {
    fn default() -> Self {
        OptimizerOptions { max_iterations: 500, gradient_tolerance: 1e-6, value_tolerance: 1e-12, memory: 10 }
    }
}

#[derive(Debug, Clone)]
pub struct OptimizerResult {
    pub x: Vec<f64>,
    pub value: f64,
    pub iterations: usize,
    pub evaluations: usize,
    pub converged: bool,
    pub projected_gradient_norm: f64,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Minimizes `f`, which returns the value and gradient at a point.
pub fn minimize(
    mut f: impl FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
    x0: &[f64],
    constraints: &Constraints,
    options: &OptimizerOptions,
) -> Result<OptimizerResult> {
    let mut x = x0.to_vec();
    constraints.clamp(&mut x);
    let (mut fx, g) = f(&x)?;
    let mut evaluations = 1;
    if !fx.is_finite() {
        return Err(Error::LineSearch(format!("objective is not finite at the start ({fx})")));
    }
    let mut pg = g.clone();
    constraints.project(&x, &mut pg, -1.0);
    let mut history: VecDeque<(Vec<f64>, Vec<f64>)> = VecDeque::new();
    let mut iterations = 0;
    let mut converged = false;
    let mut stalled = 0;

    while iterations < options.max_iterations {
        if max_abs(&pg) <= options.gradient_tolerance {
            converged = true;
            break;
        }
        iterations += 1;

        // Two-loop recursion on the projected gradient.
        let mut d = pg.clone();
        let mut alphas = Vec::with_capacity(history.len());
        for (s, y) in history.iter().rev() {
            let a = dot(s, &d) / dot(y, s);
            for (dk, yk) in d.iter_mut().zip(y) {
                *dk -= a * yk;
            }
            alphas.push(a);
        }
        if let Some((s, y)) = history.back() {
            let gamma = dot(s, y) / dot(y, y);
            d.iter_mut().for_each(|v| *v *= gamma);
        }
        for ((s, y), a) in history.iter().zip(alphas.iter().rev()) {
            let b = dot(y, &d) / dot(y, s);
            for (dk, sk) in d.iter_mut().zip(s) {
                *dk += (a - b) * sk;
            }
        }
        d.iter_mut().for_each(|v| *v = -*v);
        constraints.project(&x, &mut d, 1.0);
        if dot(&d, &pg) >= 0.0 || history.is_empty() {
            history.clear();
            d = pg.iter().map(|v| -v).collect();
            let scale = (1.0 / max_abs(&d)).min(1.0);
            d.iter_mut().for_each(|v| *v *= scale);
        }

        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..50 {
            let mut trial: Vec<f64> = x.iter().zip(&d).map(|(a, b)| a + t * b).collect();
            constraints.clamp(&mut trial);
            let moved: Vec<f64> = trial.iter().zip(&x).map(|(a, b)| a - b).collect();
            let predicted = dot(&pg, &moved);
            if predicted >= 0.0 {
                t *= 0.5;
                continue;
            }
            let (ft, gt) = f(&trial)?;
            evaluations += 1;
            if ft.is_finite() && ft <= fx + 1e-4 * predicted {
                accepted = Some((trial, ft, gt));
                break;
            }
            t *= 0.5;
        }
        let Some((x_new, f_new, g_new)) = accepted else {
            if history.is_empty() {
                break;
            }
            history.clear();
            continue;
        };

        let mut pg_new = g_new.clone();
        constraints.project(&x_new, &mut pg_new, -1.0);
        let s: Vec<f64> = x_new.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = pg_new.iter().zip(&pg).map(|(a, b)| a - b).collect();
        if dot(&s, &y) > 1e-12 * dot(&y, &y).sqrt() * dot(&s, &s).sqrt() {
            history.push_back((s, y));
            if history.len() > options.memory {
                history.pop_front();
            }
        }
        let decrease = fx - f_new;
        x = x_new;
        fx = f_new;
        pg = pg_new;
        // Two stalled steps in a row, so a single short step does not end
        // the search.
        if decrease <= options.value_tolerance * (1.0 + fx.abs()) {
            stalled += 1;
            if stalled >= 2 {
                converged = true;
                break;
            }
        } else {
            stalled = 0;
        }
    }
    Ok(OptimizerResult { projected_gradient_norm: max_abs(&pg), x, value: fx, iterations, evaluations, converged })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rosenbrock(x: &[f64]) -> Result<(f64, Vec<f64>)> {
        let (a, b) = (x[0], x[1]);
        let v = (1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2);
        let g = vec![-2.0 * (1.0 - a) - 400.0 * a * (b - a * a), 200.0 * (b - a * a)];
        Ok((v, g))
    }

    #[test]
    fn unconstrained_rosenbrock() {
        let opts = OptimizerOptions { gradient_tolerance: 1e-8, value_tolerance: 0.0, ..Default::default() };
        let r = minimize(rosenbrock, &[-1.2, 1.0], &Constraints::unconstrained(2), &opts).unwrap();
        assert!(r.converged);
        assert!((r.x[0] - 1.0).abs() < 1e-6 && (r.x[1] - 1.0).abs() < 1e-6, "{:?}", r.x);
    }

    #[test]
    fn box_bound_becomes_active() {
        let mut c = Constraints::unconstrained(2);
        c.upper[0] = 0.5;
        let f =
            |x: &[f64]| Ok(((x[0] - 2.0).powi(2) + (x[1] + 1.0).powi(2), vec![2.0 * (x[0] - 2.0), 2.0 * (x[1] + 1.0)]));
        let r = minimize(f, &[0.0, 0.0], &c, &OptimizerOptions::default()).unwrap();
        assert!((r.x[0] - 0.5).abs() < 1e-12);
        assert!((r.x[1] + 1.0).abs() < 1e-6);
    }

    #[test]
    fn zero_sum_group_is_preserved() {
        // Minimize Σ (x_k - t_k)² subject to Σ x = 0: solution t - mean(t).
        let t = [1.0, 2.0, 6.0, -1.0];
        let mut c = Constraints::unconstrained(4);
        c.zero_sum_groups.push(vec![0, 1, 2, 3]);
        let f = |x: &[f64]| {
            let v = x.iter().zip(&t).map(|(a, b)| (a - b).powi(2)).sum();
            let g = x.iter().zip(&t).map(|(a, b)| 2.0 * (a - b)).collect();
            Ok((v, g))
        };
        let r = minimize(f, &[0.0; 4], &c, &OptimizerOptions::default()).unwrap();
        assert!(r.x.iter().sum::<f64>().abs() < 1e-12);
        for (a, b) in r.x.iter().zip(&t) {
            assert!((a - (b - 2.0)).abs() < 1e-6);
        }
    }

    #[test]
    fn fixed_members_stay_put() {
        let t = [1.0, 2.0, 6.0];
        let mut c = Constraints::unconstrained(3);
        c.zero_sum_groups.push(vec![0, 1, 2]);
        c.fixed[2] = true;
        let f = |x: &[f64]| {
            let v = x.iter().zip(&t).map(|(a, b)| (a - b).powi(2)).sum();
            let g = x.iter().zip(&t).map(|(a, b)| 2.0 * (a - b)).collect();
            Ok((v, g))
        };
        let r = minimize(f, &[1.0, 1.0, -2.0], &c, &OptimizerOptions::default()).unwrap();
        assert_eq!(r.x[2], -2.0);
        assert!((r.x[0] + r.x[1] - 2.0).abs() < 1e-12);
        assert!((r.x[0] - 0.5).abs() < 1e-6);
    }

    #[test]
    fn non_finite_start_is_an_error() {
        let f = |_: &[f64]| Ok((f64::NAN, vec![0.0]));
        assert!(matches!(
            minimize(f, &[0.0], &Constraints::unconstrained(1), &OptimizerOptions::default()),
            Err(Error::LineSearch(_))
        ));
    }
}
