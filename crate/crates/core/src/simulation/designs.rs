//! The two simulation designs.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{draw_standardized_abilities, Assignment, StudyDesign};
use crate::error::{Error, Result};
use crate::model::link::logistic;
use crate::model::{ModelFamily, ParameterSet};
use crate::quadrature::default_rule;

/// Stream used to allocate Study 2 students to raters.
const ALLOCATION_STREAM: u64 = u64::MAX - 1;

const STUDY1_RATERS: usize = 20;
const STUDY1_STUDENTS: usize = 50;
const STUDY1_ITEMS: usize = 40;
const STUDY1_SIGMA: f64 = 0.5;
const STUDY1_ALPHA: f64 = 0.5;

/// Study 1 generating parameters: `ρ_r = r/20`, raw severity `(21 − r)/9`,
/// raw difficulty `i/19`, intercept 0.5 and `σ = 0.5`. Severities and
/// difficulties are centered with their means folded into `α`.
pub fn generate_study1_truth(seed: u64) -> ParameterSet {
    let mut p = ParameterSet::neutral(STUDY1_STUDENTS, STUDY1_RATERS, STUDY1_ITEMS);
    p.theta_prime = draw_standardized_abilities(STUDY1_STUDENTS, seed);
    p.sigma = STUDY1_SIGMA;
    p.rho = (1..=STUDY1_RATERS).map(|r| r as f64 / 20.0).collect();
    p.eta = (1..=STUDY1_RATERS).map(|r| (21 - r) as f64 / 9.0).collect();
    p.delta = (1..=STUDY1_ITEMS).map(|i| i as f64 / 19.0).collect();
    p.alpha = STUDY1_ALPHA;
    p.center_effects();
    p
}

/// Complete 50 × 20 × 40 design fitted with both GMF and TFM.
pub fn study1_design(replications: usize, seed: u64) -> StudyDesign {
    StudyDesign {
        n_students: STUDY1_STUDENTS,
        n_raters: STUDY1_RATERS,
        n_items: STUDY1_ITEMS,
        truth: generate_study1_truth(seed),
        assignment: Assignment::Complete,
        replications,
        seed,
        fit_families: vec![ModelFamily::Gmf, ModelFamily::Tfm],
        rater_ids: (1..=STUDY1_RATERS).map(|r| format!("R{r:02}")).collect(),
        item_ids: (1..=STUDY1_ITEMS).map(|i| format!("I{i:02}")).collect(),
    }
}

/// One rater-by-topic cell of the empirical study.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Study2Cell {
    pub rater: &'static str,
    pub topic: &'static str,
    /// Number of item ratings (five per essay).
    pub ratings: usize,
    pub summed_score: usize,
    pub rho: f64,
    pub eta: f64,
    pub kappa_bar: f64,
}

const fn cell(
    rater: &'static str,
    topic: &'static str,
    ratings: usize,
    summed_score: usize,
    rho: f64,
    eta: f64,
    kappa_bar: f64,
) -> Study2Cell {
    Study2Cell { rater, topic, ratings, summed_score, rho, eta, kappa_bar }
}

/// Empirical rater-by-topic counts and estimates.
pub const STUDY2_CELLS: [Study2Cell; 16] = [
    cell("AM", "family", 440, 338, 1.00, -2.24, 0.76),
    cell("AM", "school", 525, 392, 0.50, -1.57, 0.54),
    cell("AM", "sport", 370, 286, 0.48, -1.77, 0.48),
    cell("AM", "work", 455, 335, 0.52, -1.78, 0.51),
    cell("BE", "family", 435, 273, 0.71, -0.88, 0.82),
    cell("BE", "school", 470, 298, 0.61, -1.09, 0.72),
    cell("BE", "sport", 535, 320, 0.71, -1.17, 0.78),
    cell("BE", "work", 380, 233, 0.54, -1.01, 0.68),
    cell("CO", "family", 450, 195, 0.65, 0.85, 0.78),
    cell("CO", "school", 535, 220, 0.88, 0.99, 0.90),
    cell("CO", "sport", 485, 178, 0.76, 1.52, 0.75),
    cell("CO", "work", 440, 183, 0.63, 0.85, 0.77),
    cell("DA", "family", 365, 103, 0.79, 2.04, 0.67),
    cell("DA", "school", 520, 155, 0.66, 1.83, 0.62),
    cell("DA", "sport", 460, 142, 0.55, 1.67, 0.56),
    cell("DA", "work", 395, 106, 0.82, 1.76, 0.74),
];

pub const STUDY2_ITEMS: [&str; 5] = ["specificity", "coherence", "structure", "grammar", "content"];
pub const STUDY2_DIFFICULTIES: [f64; 5] = [-1.54, -1.45, 0.19, 0.76, 2.04];
pub const STUDY2_SIGMA: f64 = 2.51;

impl Study2Cell {
    pub fn id(&self) -> String {
        format!("{}:{}", self.rater, self.topic)
    }

    pub fn essays(&self) -> usize {
        self.ratings / STUDY2_ITEMS.len()
    }
}

/// Expected total score over all cells at intercept `alpha`.
fn expected_total(alpha: f64) -> Result<f64> {
    let rule = default_rule();
    let mut total = 0.0;
    for c in &STUDY2_CELLS {
        for d in STUDY2_DIFFICULTIES {
            let p = rule.expectation(|z| logistic(c.rho * STUDY2_SIGMA * z - c.eta - d + alpha))?;
            total += c.essays() as f64 * p;
        }
    }
    Ok(total)
}

/// Study 2 generating parameters with abilities left empty: one
/// pseudo-rater per rater-by-topic cell, `σ = 2.51`, the empirical
/// difficulties, and the intercept that reproduces the observed total score.
pub fn study2_truth() -> Result<ParameterSet> {
    let observed: usize = STUDY2_CELLS.iter().map(|c| c.summed_score).sum();
    let target = observed as f64;
    let (mut lo, mut hi) = (-10.0, 10.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if expected_total(mid)? < target {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-12 {
            break;
        }
    }
    let mut p = ParameterSet::neutral(0, STUDY2_CELLS.len(), STUDY2_ITEMS.len());
    p.sigma = STUDY2_SIGMA;
    p.rho = STUDY2_CELLS.iter().map(|c| c.rho).collect();
    p.eta = STUDY2_CELLS.iter().map(|c| c.eta).collect();
    p.delta = STUDY2_DIFFICULTIES.to_vec();
    p.alpha = 0.5 * (lo + hi);
    Ok(p)
}

/// Students in the empirical data; each contributes four rated essays.
pub const STUDY2_STUDENTS: usize = 363;

/// Empirical-like incomplete design: every rated essay is one
/// rater-by-topic cell assigned to a student, with the per-cell essay counts
/// from the empirical data. Essays are dealt to the 363 students four at a
/// time in a seeded random order, never giving a student the same cell
/// twice, so cells are linked through shared students.
pub fn study2_design(replications: usize, seed: u64) -> Result<StudyDesign> {
    let mut truth = study2_truth()?;
    let mut slots: Vec<usize> =
        STUDY2_CELLS.iter().enumerate().flat_map(|(r, c)| std::iter::repeat_n(r, c.essays())).collect();
    let n = STUDY2_STUDENTS;
    if slots.len() % n != 0 {
        return Err(Error::InvalidInput(format!("{} essays do not split evenly over {n} students", slots.len())));
    }
    let per_student = slots.len() / n;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(ALLOCATION_STREAM);
    slots.shuffle(&mut rng);
    for _ in 0..1000 {
        let clash = (0..slots.len()).find(|&k| {
            let student = k / per_student;
            (student * per_student..k).any(|j| slots[j] == slots[k])
        });
        let Some(k) = clash else { break };
        let j = rng.random_range(0..slots.len());
        slots.swap(k, j);
    }
    let map: Vec<Vec<usize>> = slots
        .chunks(per_student)
        .map(|c| {
            let mut v = c.to_vec();
            v.sort_unstable();
            v
        })
        .collect();
    if map.iter().any(|v| v.windows(2).any(|w| w[0] == w[1])) {
        return Err(Error::Estimation("could not allocate distinct cells to every student".into()));
    }
    truth.theta_prime = draw_standardized_abilities(n, seed);
    Ok(StudyDesign {
        n_students: n,
        n_raters: STUDY2_CELLS.len(),
        n_items: STUDY2_ITEMS.len(),
        truth,
        assignment: Assignment::Incomplete(map),
        replications,
        seed,
        fit_families: vec![ModelFamily::Gmf],
        rater_ids: STUDY2_CELLS.iter().map(Study2Cell::id).collect(),
        item_ids: STUDY2_ITEMS.iter().map(|s| s.to_string()).collect(),
    })
}
