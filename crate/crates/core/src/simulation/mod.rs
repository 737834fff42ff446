//! Parameter-recovery and severity-sweep simulations.
//!
//! Randomness is keyed so results do not depend on scheduling: replication
//! `l` draws its ratings from stream `l` of a ChaCha8 generator seeded with
//! the study seed, consuming exactly one 64-bit word per record in record
//! order. True abilities come from a reserved stream and are shared by all
//! replications.

mod designs;

pub use designs::{
    generate_study1_truth, study1_design, study2_design, study2_truth, Study2Cell, STUDY2_CELLS, STUDY2_DIFFICULTIES,
    STUDY2_ITEMS, STUDY2_SIGMA, STUDY2_STUDENTS,
};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::statistics::{Data, OrderStatistics, RankTieBreaker};

use crate::capability::{kappa_bar, RaterModel};
use crate::error::{Error, Result};
use crate::estimation::{fit, FitConfig, FitResult};
use crate::model::{
    mean, success_probability_at, variance, ModelFamily, ModelSpec, ParameterSet, RatingDataset, RatingRecord,
};

/// Stream reserved for the true abilities.
const ABILITY_STREAM: u64 = u64::MAX;

/// Which raters score which students. Every rater scores every item.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Assignment {
    Complete,
    /// Rater indices for each student.
    Incomplete(Vec<Vec<usize>>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyDesign {
    pub n_students: usize,
    pub n_raters: usize,
    pub n_items: usize,
    /// Generating GMF parameters, including the fixed true abilities.
    pub truth: ParameterSet,
    pub assignment: Assignment,
    pub replications: usize,
    pub seed: u64,
    pub fit_families: Vec<ModelFamily>,
    pub rater_ids: Vec<String>,
    pub item_ids: Vec<String>,
}

impl StudyDesign {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidInput(m));
        if self.n_students == 0 || self.n_raters == 0 || self.n_items == 0 {
            return bad("design dimensions must be positive".into());
        }
        let t = &self.truth;
        if t.n_students() != self.n_students || t.n_raters() != self.n_raters || t.n_items() != self.n_items {
            return bad("true parameters do not match the design dimensions".into());
        }
        if t.rho.len() != self.n_raters {
            return bad("true discriminations do not match the number of raters".into());
        }
        if self.rater_ids.len() != self.n_raters || self.item_ids.len() != self.n_items {
            return bad("identifier lists do not match the design dimensions".into());
        }
        if self.replications == 0 {
            return bad("replications must be positive".into());
        }
        if let Assignment::Incomplete(map) = &self.assignment {
            if map.len() != self.n_students {
                return bad(format!("assignment covers {} of {} students", map.len(), self.n_students));
            }
            for (n, raters) in map.iter().enumerate() {
                if raters.is_empty() {
                    return bad(format!("student {n} has no raters"));
                }
                if let Some(&r) = raters.iter().find(|&&r| r >= self.n_raters) {
                    return bad(format!("student {n} assigned to unknown rater {r}"));
                }
            }
        }
        if self.fit_families.iter().any(|f| !matches!(f, ModelFamily::Tfm | ModelFamily::Gmf)) {
            return bad("recovery fits support only TFM and GMF".into());
        }
        Ok(())
    }

    fn raters_of(&self, n: usize) -> Vec<usize> {
        match &self.assignment {
            Assignment::Complete => (0..self.n_raters).collect(),
            Assignment::Incomplete(map) => map[n].clone(),
        }
    }

    pub fn student_id(n: usize) -> String {
        format!("s{:04}", n + 1)
    }
}

/// Standard-normal abilities drawn from the reserved stream and
/// standardized to sample mean 0 and variance 1.
pub fn draw_standardized_abilities(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(ABILITY_STREAM);
    let mut theta: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
    if n > 1 {
        let (m, sd) = (mean(&theta), variance(&theta).sqrt());
        theta.iter_mut().for_each(|t| *t = (*t - m) / sd);
    }
    theta
}

/// Draws one replication's ratings under the GMF model with the design's
/// true parameters (abilities included).
pub fn simulate_dataset(
    truth: &ParameterSet,
    design: &StudyDesign,
    seed: u64,
    replication: u64,
) -> Result<RatingDataset> {
    let spec = ModelSpec::gmf();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(replication);
    let mut records = Vec::new();
    for n in 0..design.n_students {
        let student = StudyDesign::student_id(n);
        for r in design.raters_of(n) {
            for i in 0..design.n_items {
                let p = success_probability_at(&spec, truth, truth.theta_prime[n], r, i)?;
                let u: f64 = rng.random();
                records.push(RatingRecord::new(
                    student.clone(),
                    design.rater_ids[r].clone(),
                    design.item_ids[i].clone(),
                    (u < p) as u8,
                ));
            }
        }
    }
    RatingDataset::from_records(records)
}

/// One replication's estimates, indexed in design order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationEstimate {
    pub rho: Vec<f64>,
    pub eta: Vec<f64>,
    pub delta: Vec<f64>,
    pub sigma: f64,
    pub alpha: f64,
    pub kappa_bar: Vec<f64>,
    /// Logit-scale abilities `σ̂ θ̂'`.
    pub ability: Vec<f64>,
    pub converged: bool,
}

/// κ̄ per rater for a parameter set, using the GMF index (`ρ = 1` for TFM).
pub fn kappa_bars(family: ModelFamily, params: &ParameterSet) -> Result<Vec<f64>> {
    (0..params.n_raters())
        .map(|r| {
            let rho = if family == ModelFamily::Tfm { 1.0 } else { params.rho[r] };
            kappa_bar(&RaterModel::Gmf { rho, eta: params.eta[r] }, params.sigma)
        })
        .collect()
}

fn position(ids: &[String], id: &str) -> Result<usize> {
    ids.iter()
        .position(|x| x == id)
        .ok_or_else(|| Error::ParameterMismatch(format!("identifier {id} missing from fitted data")))
}

impl ReplicationEstimate {
    /// The generating GMF parameters, as if estimated without error. This
    /// is the reference for every fitted family.
    pub fn from_truth(truth: &ParameterSet) -> Result<Self> {
        let p = truth.clone();
        Ok(ReplicationEstimate {
            kappa_bar: kappa_bars(ModelFamily::Gmf, &p)?,
            ability: p.theta_prime.iter().map(|t| p.sigma * t).collect(),
            rho: p.rho,
            eta: p.eta,
            delta: p.delta,
            sigma: p.sigma,
            alpha: p.alpha,
            converged: true,
        })
    }

    /// Reorders a fit from dataset order into design order.
    pub fn from_fit(family: ModelFamily, fit: &FitResult, data: &RatingDataset, design: &StudyDesign) -> Result<Self> {
        let p = &fit.params;
        let kb = kappa_bars(family, p)?;
        let raters: Vec<usize> =
            design.rater_ids.iter().map(|id| position(data.rater_ids(), id)).collect::<Result<_>>()?;
        let items: Vec<usize> =
            design.item_ids.iter().map(|id| position(data.item_ids(), id)).collect::<Result<_>>()?;
        let students: Vec<usize> = (0..design.n_students)
            .map(|n| position(data.student_ids(), &StudyDesign::student_id(n)))
            .collect::<Result<_>>()?;
        Ok(ReplicationEstimate {
            rho: raters.iter().map(|&r| p.rho[r]).collect(),
            eta: raters.iter().map(|&r| p.eta[r]).collect(),
            kappa_bar: raters.iter().map(|&r| kb[r]).collect(),
            delta: items.iter().map(|&i| p.delta[i]).collect(),
            ability: students.iter().map(|&n| p.sigma * p.theta_prime[n]).collect(),
            sigma: p.sigma,
            alpha: p.alpha,
            converged: fit.converged,
        })
    }
}

/// Bias and RMSE of one parameter vector across replications.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterRecovery {
    pub truth: Vec<f64>,
    /// `Σ_l (x̂_l − x) / L`.
    pub bias: Vec<f64>,
    /// Spread about the replication mean, `sqrt(Σ_l (x̂_l − x̄)² / L)`.
    pub rmse: Vec<f64>,
    /// Conventional root mean square error about the truth.
    pub rmse_about_truth: Vec<f64>,
    pub mean: Vec<f64>,
    pub median: Vec<f64>,
}

impl ParameterRecovery {
    pub fn from_samples(truth: &[f64], samples: &[&[f64]]) -> Self {
        let l = samples.len() as f64;
        let k = truth.len();
        let mut out = ParameterRecovery {
            truth: truth.to_vec(),
            bias: vec![f64::NAN; k],
            rmse: vec![f64::NAN; k],
            rmse_about_truth: vec![f64::NAN; k],
            mean: vec![f64::NAN; k],
            median: vec![f64::NAN; k],
        };
        if samples.is_empty() {
            return out;
        }
        for j in 0..k {
            let xs: Vec<f64> = samples.iter().map(|s| s[j]).collect();
            let m = xs.iter().sum::<f64>() / l;
            out.mean[j] = m;
            out.bias[j] = xs.iter().map(|x| x - truth[j]).sum::<f64>() / l;
            out.rmse[j] = (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / l).sqrt();
            out.rmse_about_truth[j] = (xs.iter().map(|x| (x - truth[j]).powi(2)).sum::<f64>() / l).sqrt();
            out.median[j] = Data::new(xs).median();
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FamilyRecovery {
    pub family: ModelFamily,
    /// Absent for TFM, whose discriminations are fixed.
    pub rho: Option<ParameterRecovery>,
    pub eta: ParameterRecovery,
    pub delta: ParameterRecovery,
    pub sigma: ParameterRecovery,
    pub kappa_bar: ParameterRecovery,
    pub ability: ParameterRecovery,
    /// Mean over replications of the least-squares slope of `σ̂θ̂'` on `σθ'`.
    pub ability_slope: f64,
    /// Mean over replications of the Spearman correlation between estimated
    /// and true κ̄.
    pub kappa_spearman_mean: f64,
    /// Spearman correlation between median estimated κ̄ and true κ̄.
    pub kappa_spearman_of_medians: f64,
    pub successes: usize,
    pub nonconverged: usize,
    pub failures: Vec<ReplicationFailure>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationFailure {
    pub replication: usize,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecoveryMetrics {
    pub replications: usize,
    pub families: Vec<FamilyRecovery>,
}

impl RecoveryMetrics {
    pub fn family(&self, family: ModelFamily) -> Option<&FamilyRecovery> {
        self.families.iter().find(|f| f.family == family)
    }
}

/// Pearson correlation; `None` when either side is constant.
pub fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    let (mx, my) = (mean(x), mean(y));
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let syy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    if sxx > 0.0 && syy > 0.0 {
        Some(sxy / (sxx * syy).sqrt())
    } else {
        None
    }
}

/// Spearman rank correlation with average ranks for ties.
pub fn spearman(x: &[f64], y: &[f64]) -> Option<f64> {
    let rx = Data::new(x.to_vec()).ranks(RankTieBreaker::Average);
    let ry = Data::new(y.to_vec()).ranks(RankTieBreaker::Average);
    pearson(&rx, &ry)
}

/// Least-squares slope of `y` on `x`.
pub fn regression_slope(x: &[f64], y: &[f64]) -> f64 {
    let (mx, my) = (mean(x), mean(y));
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    sxy / sxx
}

/// Aggregates replication estimates against the truth. Failed replications
/// are excluded from every summary and listed.
pub fn aggregate(
    family: ModelFamily,
    truth: &ParameterSet,
    outcomes: &[std::result::Result<ReplicationEstimate, String>],
) -> Result<FamilyRecovery> {
    let reference = ReplicationEstimate::from_truth(truth)?;
    let ok: Vec<&ReplicationEstimate> = outcomes.iter().filter_map(|o| o.as_ref().ok()).collect();
    let failures = outcomes
        .iter()
        .enumerate()
        .filter_map(|(l, o)| o.as_ref().err().map(|m| ReplicationFailure { replication: l, message: m.clone() }))
        .collect();
    let collect = |get: fn(&ReplicationEstimate) -> &[f64]| -> ParameterRecovery {
        let samples: Vec<&[f64]> = ok.iter().map(|e| get(e)).collect();
        ParameterRecovery::from_samples(get(&reference), &samples)
    };
    let sigmas: Vec<[f64; 1]> = ok.iter().map(|e| [e.sigma]).collect();
    let sigma_samples: Vec<&[f64]> = sigmas.iter().map(|s| &s[..]).collect();
    let kappa = collect(|e| &e.kappa_bar);
    let finite_mean = |xs: Vec<f64>| if xs.is_empty() { f64::NAN } else { mean(&xs) };
    Ok(FamilyRecovery {
        family,
        rho: (family == ModelFamily::Gmf).then(|| collect(|e| &e.rho)),
        eta: collect(|e| &e.eta),
        delta: collect(|e| &e.delta),
        sigma: ParameterRecovery::from_samples(&[truth.sigma], &sigma_samples),
        ability_slope: finite_mean(ok.iter().map(|e| regression_slope(&reference.ability, &e.ability)).collect()),
        kappa_spearman_mean: finite_mean(
            ok.iter().filter_map(|e| spearman(&e.kappa_bar, &reference.kappa_bar)).collect(),
        ),
        kappa_spearman_of_medians: spearman(&kappa.median, &reference.kappa_bar).unwrap_or(f64::NAN),
        kappa_bar: kappa,
        ability: collect(|e| &e.ability),
        successes: ok.len(),
        nonconverged: ok.iter().filter(|e| !e.converged).count(),
        failures,
    })
}

fn fit_replication(
    family: ModelFamily,
    data: &RatingDataset,
    design: &StudyDesign,
    config: &FitConfig,
) -> std::result::Result<ReplicationEstimate, String> {
    let fitted = fit(&ModelSpec::new(family), data, config).map_err(|e| e.to_string())?;
    ReplicationEstimate::from_fit(family, &fitted, data, design).map_err(|e| e.to_string())
}

/// Generates every replication, fits each requested family and aggregates
/// bias and RMSE. Replications run in parallel; the result is independent
/// of thread count.
pub fn run_recovery(design: &StudyDesign, config: &FitConfig) -> Result<RecoveryMetrics> {
    design.validate()?;
    config.validate()?;
    if design.replications < 2 {
        return Err(Error::InvalidInput("recovery needs at least two replications".into()));
    }
    let mut config = config.clone();
    config.compute_covariance = false;
    let per_rep: Vec<Vec<std::result::Result<ReplicationEstimate, String>>> = (0..design.replications)
        .into_par_iter()
        .map(|l| match simulate_dataset(&design.truth, design, design.seed, l as u64) {
            Ok(data) => design.fit_families.iter().map(|&f| fit_replication(f, &data, design, &config)).collect(),
            Err(e) => design.fit_families.iter().map(|_| Err(e.to_string())).collect(),
        })
        .collect();
    let families = design
        .fit_families
        .iter()
        .enumerate()
        .map(|(k, &family)| {
            let outcomes: Vec<_> = per_rep.iter().map(|rep| rep[k].clone()).collect();
            aggregate(family, &design.truth, &outcomes)
        })
        .collect::<Result<_>>()?;
    Ok(RecoveryMetrics { replications: design.replications, families })
}

/// Severity grid from `min` to `max` inclusive in steps of `step`.
pub fn eta_grid(min: f64, max: f64, step: f64) -> Result<Vec<f64>> {
    if !(step > 0.0) || !(max >= min) || !min.is_finite() || !max.is_finite() {
        return Err(Error::InvalidInput(format!("invalid severity grid [{min}, {max}] step {step}")));
    }
    let count = ((max - min) / step + 1e-9).floor() as usize + 1;
    // Rounded to the step's decimal precision so grid labels are exact.
    Ok((0..count).map(|k| ((min + k as f64 * step) * 1e9).round() / 1e9).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    pub eta_grid: Vec<f64>,
    pub replications: usize,
    pub seed: u64,
    /// Raters to sweep (design indices); all raters when `None`.
    pub raters: Option<Vec<usize>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub rater: usize,
    pub rater_id: String,
    pub eta: f64,
    /// κ̄ at the generating parameters with this severity substituted.
    pub true_kappa_bar: f64,
    pub kappa_bar_median: f64,
    pub kappa_bar_q25: f64,
    pub kappa_bar_q75: f64,
    pub estimates: Vec<f64>,
    pub failures: usize,
}

/// For each swept rater and grid severity, regenerates data with that
/// severity substituted into the truth, refits GMF and summarizes the
/// rater's estimated κ̄ across replications.
pub fn run_severity_sweep(design: &StudyDesign, sweep: &SweepConfig, config: &FitConfig) -> Result<Vec<SweepPoint>> {
    design.validate()?;
    config.validate()?;
    if sweep.eta_grid.is_empty() {
        return Err(Error::InvalidInput("severity grid is empty".into()));
    }
    if sweep.replications == 0 {
        return Err(Error::InvalidInput("replications must be positive".into()));
    }
    let raters = sweep.raters.clone().unwrap_or_else(|| (0..design.n_raters).collect());
    if let Some(&r) = raters.iter().find(|&&r| r >= design.n_raters) {
        return Err(Error::IndexOutOfRange { kind: "rater", index: r, len: design.n_raters });
    }
    let mut config = config.clone();
    config.compute_covariance = false;
    let n_grid = sweep.eta_grid.len() as u64;
    let cells: Vec<(usize, usize, usize)> = raters
        .iter()
        .flat_map(|&r| (0..sweep.eta_grid.len()).flat_map(move |g| (0..sweep.replications).map(move |l| (r, g, l))))
        .collect();
    let results: Vec<std::result::Result<f64, String>> = cells
        .par_iter()
        .map(|&(r, g, l)| {
            let mut truth = design.truth.clone();
            truth.eta[r] = sweep.eta_grid[g];
            let stream = ((r as u64 * n_grid) + g as u64) * sweep.replications as u64 + l as u64;
            let data = simulate_dataset(&truth, design, sweep.seed, stream).map_err(|e| e.to_string())?;
            let est = fit_replication(ModelFamily::Gmf, &data, design, &config)?;
            Ok(est.kappa_bar[r])
        })
        .collect();

    let mut points = Vec::with_capacity(raters.len() * sweep.eta_grid.len());
    let mut chunks = results.chunks(sweep.replications);
    for &r in &raters {
        for &eta in &sweep.eta_grid {
            let chunk = chunks.next().expect("one chunk per rater and grid point");
            let estimates: Vec<f64> = chunk.iter().filter_map(|v| v.as_ref().ok().copied()).collect();
            let failures = chunk.len() - estimates.len();
            let true_kappa_bar = kappa_bar(&RaterModel::Gmf { rho: design.truth.rho[r], eta }, design.truth.sigma)?;
            let (median, q25, q75) = if estimates.is_empty() {
                (f64::NAN, f64::NAN, f64::NAN)
            } else {
                let mut d = Data::new(estimates.clone());
                (d.median(), d.lower_quartile(), d.upper_quartile())
            };
            points.push(SweepPoint {
                rater: r,
                rater_id: design.rater_ids[r].clone(),
                eta,
                true_kappa_bar,
                kappa_bar_median: median,
                kappa_bar_q25: q25,
                kappa_bar_q75: q75,
                estimates,
                failures,
            });
        }
    }
    Ok(points)
}
