//! Covariance of structural estimates from the curvature of the profiled
//! Laplace log-likelihood.

use nalgebra::{DMatrix, SymmetricEigen};

use super::hl::maximize_h;
use super::laplace::{laplace_value_and_gradient, ParamLayout, ThetaMode};
use super::{FitConfig, FitResult};
use crate::error::{Error, Result};
use crate::model::{ModelFamily, ModelSpec, ParameterSet, RatingDataset};

#[derive(Debug, Clone)]
pub struct CovarianceEstimate {
    /// Covariance over the full [`ParamLayout`].
    pub matrix: DMatrix<f64>,
    /// Free directions (columns, full layout) the Hessian was taken along.
    pub directions: DMatrix<f64>,
    /// Covariance in the free directions.
    pub free: DMatrix<f64>,
    pub pseudo_inverse: bool,
}

/// Profiled Laplace gradient at `params`, warm-starting abilities from
/// `theta0`.
fn profiled_gradient(
    spec: &ModelSpec,
    params: &ParameterSet,
    data: &RatingDataset,
    theta0: &[f64],
    config: &FitConfig,
) -> Result<Vec<f64>> {
    let prof = maximize_h(spec, params, theta0, data, config)?;
    Ok(laplace_value_and_gradient(spec, params, data, &prof.theta, ThetaMode::Profiled)?.1)
}

/// Inverse negative Hessian of the profiled Laplace log-likelihood along
/// the given directions (columns of `directions`, in layout coordinates).
///
/// The Hessian is formed by central differences of the analytic gradient.
/// A Hessian that is not negative definite is inverted on its negative
/// eigenspace only, and `pseudo_inverse` is set.
pub fn laplace_covariance(
    spec: &ModelSpec,
    params: &ParameterSet,
    data: &RatingDataset,
    directions: &DMatrix<f64>,
    config: &FitConfig,
) -> Result<CovarianceEstimate> {
    let layout = ParamLayout::of(params);
    if directions.nrows() != layout.len() {
        return Err(Error::ParameterMismatch("direction length differs from parameter layout".into()));
    }
    let mut tight = config.clone();
    tight.inner_newton_tolerance = tight.inner_newton_tolerance.min(1e-12);
    let x0 = layout.pack(params);
    let theta0 = maximize_h(spec, params, &params.theta_prime, data, &tight)?.theta;
    let m = directions.ncols();
    let mut hess = DMatrix::<f64>::zeros(m, m);
    let mut work = params.clone();
    for b in 0..m {
        let v = directions.column(b);
        let h = 1e-5 * x0.iter().zip(v.iter()).map(|(x, d)| (x * d).abs()).fold(1.0, f64::max);
        let mut shifted = |sign: f64| -> Result<Vec<f64>> {
            let x: Vec<f64> = x0.iter().zip(v.iter()).map(|(x, d)| x + sign * h * d).collect();
            layout.unpack(&x, &mut work);
            profiled_gradient(spec, &work, data, &theta0, &tight)
        };
        let gp = shifted(1.0)?;
        let gm = shifted(-1.0)?;
        for a in 0..m {
            let u = directions.column(a);
            let d: f64 = u.iter().zip(gp.iter().zip(&gm)).map(|(ua, (p, q))| ua * (p - q)).sum();
            hess[(a, b)] = d / (2.0 * h);
        }
    }
    let neg = -(&hess + hess.transpose()) * 0.5;
    let (free, pseudo_inverse) = match neg.clone().cholesky() {
        Some(ch) => (ch.inverse(), false),
        None => {
            let eig = SymmetricEigen::new(neg);
            let tol = eig.eigenvalues.amax() * 1e-10;
            let inv = DMatrix::from_diagonal(&eig.eigenvalues.map(|l| if l > tol { 1.0 / l } else { 0.0 }));
            (&eig.eigenvectors * inv * eig.eigenvectors.transpose(), true)
        }
    };
    let matrix = directions * &free * directions.transpose();
    Ok(CovarianceEstimate { matrix, directions: directions.clone(), free, pseudo_inverse })
}

/// Free directions of a fitted model: `σ`; every `ρ_r` except the one at
/// the maximum (GMF only); severities and difficulties on their zero-sum
/// subspaces (each free member against the last free member); `α`.
/// Separated raters and items are held fixed.
pub fn free_directions(fit: &FitResult) -> DMatrix<f64> {
    let layout = fit.layout();
    let mut cols: Vec<Vec<(usize, f64)>> = vec![vec![(ParamLayout::SIGMA, 1.0)]];
    if fit.spec.family == ModelFamily::Gmf {
        let argmax = fit.params.rho.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).map(|(k, _)| k);
        for r in 0..layout.n_raters {
            if Some(r) != argmax {
                cols.push(vec![(layout.rho(r), 1.0)]);
            }
        }
    }
    let mut zero_sum = |members: Vec<usize>| {
        if let Some((&last, rest)) = members.split_last() {
            for &k in rest {
                cols.push(vec![(k, 1.0), (last, -1.0)]);
            }
        }
    };
    zero_sum((0..layout.n_raters).filter(|r| !fit.separated_raters.contains(r)).map(|r| layout.eta(r)).collect());
    zero_sum((0..layout.n_items).filter(|i| !fit.separated_items.contains(i)).map(|i| layout.delta(i)).collect());
    cols.push(vec![(layout.alpha(), 1.0)]);
    let mut dirs = DMatrix::zeros(layout.len(), cols.len());
    for (c, entries) in cols.iter().enumerate() {
        for &(k, v) in entries {
            dirs[(k, c)] = v;
        }
    }
    dirs
}

/// Covariance of the structural estimates of a fit, over the full layout.
pub fn structural_covariance(fit: &FitResult, data: &RatingDataset, config: &FitConfig) -> Result<CovarianceEstimate> {
    laplace_covariance(&fit.spec, &fit.params, data, &free_directions(fit), config)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::RatingRecord;

    #[test]
    fn binomial_intercept_variance() {
        // With zero discrimination the Laplace objective is the binomial
        // log-likelihood in α, whose inverse information is 1/(N p (1-p)).
        let (n, k) = (40usize, 13usize);
        let records = (0..n).map(|s| RatingRecord::new(format!("s{s}"), "r", "i", (s < k) as u8)).collect();
        let data = RatingDataset::from_records(records).unwrap();
        let mut params = ParameterSet::neutral(n, 1, 1);
        params.rho = vec![0.0];
        let p = k as f64 / n as f64;
        params.alpha = (p / (1.0 - p)).ln();
        let layout = ParamLayout::of(&params);
        let mut dir = DMatrix::zeros(layout.len(), 1);
        dir[(layout.alpha(), 0)] = 1.0;
        let cov = laplace_covariance(&ModelSpec::gmf(), &params, &data, &dir, &FitConfig::default()).unwrap();
        let expected = 1.0 / (n as f64 * p * (1.0 - p));
        assert!(!cov.pseudo_inverse);
        assert!((cov.free[(0, 0)] - expected).abs() < 1e-4 * expected);
        assert!((cov.matrix[(layout.alpha(), layout.alpha())] - expected).abs() < 1e-4 * expected);
    }
}
