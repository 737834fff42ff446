//! Empirical pipeline: fit every group, score raters, validate against
//! point-biserial correlations, and write the results.

use std::collections::BTreeMap;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::report::{emit_reports, write_csv, write_json, CurveRow, EstimateTable};
use crate::capability::{default_theta_grid, KappaMethod};
use crate::error::Result;
use crate::estimation::{fit, FitConfig, FitResult, StepLog};
use crate::model::{ModelSpec, RatingDataset, RatingRecord};
use crate::simulation::pearson;

/// Separator between rater (or student) and group in fused identifiers.
const FUSED_SEPARATOR: char = ':';

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum PipelineMode {
    /// An independent fit per group.
    #[default]
    PerGroup,
    /// One joint fit in which each rater-by-group pair is its own rater and
    /// each student-by-group pair its own student; items are shared.
    Fused,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineOptions {
    pub spec: ModelSpec,
    pub fit: FitConfig,
    pub kappa_method: KappaMethod,
    pub mode: PipelineMode,
    pub curve_grid: Vec<f64>,
}

impl Default for PipelineOptions {
    fn default() -> Self {
        PipelineOptions {
            spec: ModelSpec::gmf(),
            fit: FitConfig::default(),
            kappa_method: KappaMethod::default(),
            mode: PipelineMode::default(),
            curve_grid: default_theta_grid(),
        }
    }
}

/// Correlation between one rater's ratings on one item and the estimated
/// abilities of the students rated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointBiserial {
    pub rater: String,
    pub item: String,
    pub n: usize,
    /// Missing when the ratings or abilities are constant.
    pub correlation: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GroupOutcome {
    pub label: String,
    pub table: Option<EstimateTable>,
    #[serde(skip)]
    pub curves: Vec<CurveRow>,
    pub point_biserial: Vec<PointBiserial>,
    pub error: Option<String>,
    pub diagnostics: Vec<StepLog>,
}

impl GroupOutcome {
    pub fn converged(&self) -> bool {
        self.table.as_ref().is_some_and(|t| t.converged)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PipelineOutput {
    pub mode: PipelineMode,
    pub outcomes: Vec<GroupOutcome>,
    /// Mean κ̄ over the raters of each group.
    pub group_mean_kappa_bar: BTreeMap<String, f64>,
}

impl PipelineOutput {
    /// Every group fitted and converged.
    pub fn all_converged(&self) -> bool {
        self.outcomes.iter().all(GroupOutcome::converged)
    }

    /// Writes one subdirectory per group plus `summary.json`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        for o in &self.outcomes {
            let sub = dir.join(directory_name(&o.label));
            if let Some(t) = &o.table {
                emit_reports(&sub, t, &o.curves)?;
                write_csv(&sub.join("point_biserial.csv"), &o.point_biserial)?;
            }
        }
        write_json(&dir.join("summary.json"), self)
    }
}

fn directory_name(label: &str) -> String {
    label.chars().map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' }).collect()
}

/// Pearson correlations between binary ratings and `σ̂θ̂'` for every rater
/// and item.
pub fn point_biserial_validation(data: &RatingDataset, fit: &FitResult) -> Vec<PointBiserial> {
    let ability = fit.abilities();
    let (n_r, n_i) = (data.n_raters(), data.n_items());
    let mut cells: Vec<(Vec<f64>, Vec<f64>)> = vec![(Vec::new(), Vec::new()); n_r * n_i];
    for o in data.observations() {
        let cell = &mut cells[o.rater * n_i + o.item];
        cell.0.push(o.score as u8 as f64);
        cell.1.push(ability[o.student]);
    }
    let mut out = Vec::new();
    for r in 0..n_r {
        for i in 0..n_i {
            let (y, t) = &cells[r * n_i + i];
            if y.is_empty() {
                continue;
            }
            out.push(PointBiserial {
                rater: data.rater_ids()[r].clone(),
                item: data.item_ids()[i].clone(),
                n: y.len(),
                correlation: pearson(y, t),
            });
        }
    }
    out
}

/// Joins groups into one dataset with `rater:group` raters and
/// `student:group` students.
pub fn fuse_groups(groups: &BTreeMap<String, RatingDataset>) -> Result<RatingDataset> {
    let mut records = Vec::new();
    for (label, data) in groups {
        for rec in data.records() {
            records.push(
                RatingRecord::new(
                    format!("{}{FUSED_SEPARATOR}{label}", rec.student_id),
                    format!("{}{FUSED_SEPARATOR}{label}", rec.rater_id),
                    rec.item_id.clone(),
                    rec.score,
                )
                .with_group(label.clone()),
            );
        }
    }
    RatingDataset::from_records(records)
}

fn run_one(label: &str, data: &RatingDataset, options: &PipelineOptions) -> GroupOutcome {
    let mut outcome = GroupOutcome {
        label: label.to_string(),
        table: None,
        curves: Vec::new(),
        point_biserial: Vec::new(),
        error: None,
        diagnostics: Vec::new(),
    };
    let fitted = match fit(&options.spec, data, &options.fit) {
        Ok(f) => f,
        Err(e) => {
            outcome.error = Some(e.to_string());
            return outcome;
        }
    };
    outcome.diagnostics = fitted.diagnostics.clone();
    outcome.point_biserial = point_biserial_validation(data, &fitted);
    match EstimateTable::from_fit(label, &fitted, data, options.kappa_method, &options.curve_grid) {
        Ok((table, curves)) => {
            outcome.table = Some(table);
            outcome.curves = curves;
        }
        Err(e) => outcome.error = Some(e.to_string()),
    }
    outcome
}

/// Fits every group (or the fused dataset) and scores every rater. A failing
/// group is recorded and the others continue.
pub fn run_empirical_pipeline(
    groups: &BTreeMap<String, RatingDataset>,
    options: &PipelineOptions,
) -> Result<PipelineOutput> {
    let (outcomes, group_mean_kappa_bar) = match options.mode {
        PipelineMode::PerGroup => {
            let outcomes: Vec<GroupOutcome> =
                groups.par_iter().map(|(label, data)| run_one(label, data, options)).collect();
            let means =
                outcomes.iter().filter_map(|o| o.table.as_ref().map(|t| (o.label.clone(), t.mean_kappa_bar))).collect();
            (outcomes, means)
        }
        PipelineMode::Fused => {
            let fused = fuse_groups(groups)?;
            let outcome = run_one("fused", &fused, options);
            let mut sums: BTreeMap<String, (f64, usize)> = BTreeMap::new();
            if let Some(t) = &outcome.table {
                for row in &t.raters {
                    if let Some((_, group)) = row.rater.rsplit_once(FUSED_SEPARATOR) {
                        let e = sums.entry(group.to_string()).or_default();
                        e.0 += row.kappa_bar;
                        e.1 += 1;
                    }
                }
            }
            let means = sums.into_iter().map(|(g, (s, n))| (g, s / n as f64)).collect();
            (vec![outcome], means)
        }
    };
    Ok(PipelineOutput { mode: options.mode, outcomes, group_mean_kappa_bar })
}
