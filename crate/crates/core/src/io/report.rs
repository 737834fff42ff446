//! Estimate tables and the files written for each run.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::capability::{CapabilityReport, KappaMethod, RaterModel};
use crate::error::{Error, Result};
use crate::estimation::FitResult;
use crate::model::{ModelFamily, RatingDataset};

/// One rater row of an estimate table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RaterRow {
    pub rater: String,
    pub n_ratings: usize,
    pub sum_score: usize,
    pub rho: f64,
    pub eta: f64,
    pub kappa_bar: f64,
    /// Empty when no covariance was computed.
    pub kappa_bar_se: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemRow {
    pub item: String,
    pub n_ratings: usize,
    pub sum_score: usize,
    pub delta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub rater: String,
    pub theta: f64,
    pub kappa: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub rater: String,
    pub eta: f64,
    pub kappa_bar_median: f64,
    pub q25: f64,
    pub q75: f64,
    pub true_kappa_bar: f64,
}

/// Estimates for one fitted dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateTable {
    pub group: String,
    pub family: ModelFamily,
    pub sigma: f64,
    pub alpha: f64,
    pub laplace_loglik: f64,
    pub converged: bool,
    pub iterations_used: usize,
    pub mean_kappa_bar: f64,
    pub raters: Vec<RaterRow>,
    pub items: Vec<ItemRow>,
}

impl EstimateTable {
    /// Builds the table and the κ(θ) curve samples for every rater.
    pub fn from_fit(
        group: &str,
        fit: &FitResult,
        data: &RatingDataset,
        method: KappaMethod,
        grid: &[f64],
    ) -> Result<(Self, Vec<CurveRow>)> {
        let p = &fit.params;
        let rater_totals = data.rater_totals();
        let item_totals = data.item_totals();
        let mut raters = Vec::with_capacity(p.n_raters());
        let mut curves = Vec::with_capacity(p.n_raters() * grid.len());
        for (r, id) in data.rater_ids().iter().enumerate() {
            let rho = if fit.spec.family == ModelFamily::Tfm { 1.0 } else { p.rho[r] };
            let model = RaterModel::Gmf { rho, eta: p.eta[r] };
            let block = fit.rater_block(r);
            let report = CapabilityReport::compute(id.clone(), &model, p.sigma, block.as_ref(), grid, method)?;
            raters.push(RaterRow {
                rater: id.clone(),
                n_ratings: rater_totals[r].0,
                sum_score: rater_totals[r].1,
                rho,
                eta: p.eta[r],
                kappa_bar: report.kappa_bar,
                kappa_bar_se: block.map(|_| report.standard_error()),
            });
            curves.extend(report.curve.iter().map(|&(theta, kappa)| CurveRow { rater: id.clone(), theta, kappa }));
        }
        let items = data
            .item_ids()
            .iter()
            .enumerate()
            .map(|(i, id)| ItemRow {
                item: id.clone(),
                n_ratings: item_totals[i].0,
                sum_score: item_totals[i].1,
                delta: p.delta[i],
            })
            .collect();
        let mean_kappa_bar = raters.iter().map(|r| r.kappa_bar).sum::<f64>() / raters.len().max(1) as f64;
        Ok((
            EstimateTable {
                group: group.to_string(),
                family: fit.spec.family,
                sigma: p.sigma,
                alpha: p.alpha,
                laplace_loglik: fit.laplace_loglik,
                converged: fit.converged,
                iterations_used: fit.iterations_used,
                mean_kappa_bar,
                raters,
                items,
            },
            curves,
        ))
    }
}

/// Writes `bytes` to `path` through a temporary file in the same directory,
/// so the final path never holds a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d.to_path_buf(),
        _ => PathBuf::from("."),
    };
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let mut tmp = tempfile::NamedTempFile::new_in(&dir).map_err(|e| Error::io(&dir, e))?;
    tmp.write_all(bytes).map_err(|e| Error::io(path, e))?;
    tmp.as_file().sync_all().map_err(|e| Error::io(path, e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let csv_err = |source| Error::Csv { path: path.to_path_buf(), source };
    let mut w = csv::Writer::from_writer(Vec::new());
    for row in rows {
        w.serialize(row).map_err(csv_err)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::io(path, e.into_error()))?;
    write_atomic(path, &bytes)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

fn read_csv<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let csv_err = |source| Error::Csv { path: path.to_path_buf(), source };
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    csv::Reader::from_reader(text.as_bytes()).deserialize().collect::<std::result::Result<Vec<T>, _>>().map_err(csv_err)
}

pub fn read_rater_table(path: &Path) -> Result<Vec<RaterRow>> {
    read_csv(path)
}

pub fn read_item_table(path: &Path) -> Result<Vec<ItemRow>> {
    read_csv(path)
}

/// Writes `estimates.csv`, `items.csv` and `curves.csv` for one table into
/// `dir`.
pub fn emit_reports(dir: &Path, table: &EstimateTable, curves: &[CurveRow]) -> Result<()> {
    write_csv(&dir.join("estimates.csv"), &table.raters)?;
    write_csv(&dir.join("items.csv"), &table.items)?;
    write_csv(&dir.join("curves.csv"), curves)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table() -> EstimateTable {
        EstimateTable {
            group: "all".into(),
            family: ModelFamily::Gmf,
            sigma: 2.5,
            alpha: 0.1,
            laplace_loglik: -10.0,
            converged: true,
            iterations_used: 3,
            mean_kappa_bar: 0.5,
            raters: vec![
                RaterRow {
                    rater: "AM".into(),
                    n_ratings: 10,
                    sum_score: 7,
                    rho: 1.0,
                    eta: -0.25,
                    kappa_bar: 0.8,
                    kappa_bar_se: Some(0.05),
                },
                RaterRow {
                    rater: "BE".into(),
                    n_ratings: 10,
                    sum_score: 3,
                    rho: 0.1 + 0.2,
                    eta: 0.25,
                    kappa_bar: 0.2,
                    kappa_bar_se: None,
                },
            ],
            items: vec![ItemRow { item: "grammar".into(), n_ratings: 20, sum_score: 10, delta: 0.0 }],
        }
    }

    #[test]
    fn tables_round_trip_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let t = table();
        let curves = vec![CurveRow { rater: "AM".into(), theta: -1.0, kappa: 0.3 }];
        emit_reports(dir.path(), &t, &curves).unwrap();
        assert_eq!(read_rater_table(&dir.path().join("estimates.csv")).unwrap(), t.raters);
        assert_eq!(read_item_table(&dir.path().join("items.csv")).unwrap(), t.items);
        let header = fs::read_to_string(dir.path().join("estimates.csv")).unwrap();
        assert!(header.starts_with("rater,n_ratings,sum_score,rho,eta,kappa_bar,kappa_bar_se\n"));
    }

    #[test]
    fn rewriting_is_byte_identical_and_leaves_no_temporaries() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("summary.json");
        write_json(&path, &table()).unwrap();
        let first = fs::read(&path).unwrap();
        write_json(&path, &table()).unwrap();
        assert_eq!(first, fs::read(&path).unwrap());
        assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 1);
    }

    #[test]
    fn unwritable_target_reports_its_path() {
        let dir = tempfile::tempdir().unwrap();
        let blocker = dir.path().join("file");
        fs::write(&blocker, b"x").unwrap();
        let e = write_json(&blocker.join("out.json"), &1).unwrap_err();
        assert!(e.is_io());
        assert!(e.to_string().contains("file"));
    }
}
