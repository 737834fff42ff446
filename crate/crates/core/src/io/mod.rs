//! Rating-file ingestion, report files, the empirical pipeline and run
//! configuration.

mod config;
mod pipeline;
mod report;

pub use config::{CapabilityInput, NamedRater, RunConfig};
pub use pipeline::{
    fuse_groups, point_biserial_validation, run_empirical_pipeline, GroupOutcome, PipelineMode, PipelineOptions,
    PipelineOutput, PointBiserial,
};
pub use report::{
    emit_reports, read_item_table, read_rater_table, write_atomic, write_csv, write_json, CurveRow, EstimateTable,
    ItemRow, RaterRow, SweepRow,
};

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{RatingDataset, RatingRecord};

/// Label of the single dataset produced when no grouping column is given.
pub const UNGROUPED: &str = "all";

#[derive(Debug, Clone, PartialEq)]
pub struct IngestOptions {
    /// Scores `>= threshold` become 1.
    pub threshold: f64,
    /// Column whose values split the file into datasets.
    pub group_by: Option<String>,
    /// Field delimiter; detected from the header when `None`.
    pub delimiter: Option<u8>,
}

impl IngestOptions {
    pub fn new(threshold: f64) -> Self {
        IngestOptions { threshold, group_by: None, delimiter: None }
    }
}

/// Tab when the header has more tabs than commas, comma otherwise.
pub fn detect_delimiter(header: &str) -> u8 {
    let tabs = header.matches('\t').count();
    let commas = header.matches(',').count();
    if tabs > commas {
        b'\t'
    } else {
        b','
    }
}

fn column(headers: &csv::StringRecord, name: &str, path: &Path) -> Result<usize> {
    headers
        .iter()
        .position(|h| h.trim().eq_ignore_ascii_case(name))
        .ok_or_else(|| Error::InvalidInput(format!("{}: missing column '{name}'", path.display())))
}

/// Reads a delimiter-separated rating file with header columns
/// `student, rater, item, score` (plus any grouping column) and returns one
/// binary dataset per group, keyed by group value.
pub fn ingest(path: impl AsRef<Path>, options: &IngestOptions) -> Result<BTreeMap<String, RatingDataset>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    ingest_str(&text, path, options)
}

/// [`ingest`] on in-memory text; `path` is used only in messages.
pub fn ingest_str(text: &str, path: &Path, options: &IngestOptions) -> Result<BTreeMap<String, RatingDataset>> {
    if !options.threshold.is_finite() {
        return Err(Error::InvalidInput(format!("threshold must be finite, got {}", options.threshold)));
    }
    let header_line = text.lines().next().unwrap_or("");
    let delimiter = options.delimiter.unwrap_or_else(|| detect_delimiter(header_line));
    let mut reader = csv::ReaderBuilder::new().delimiter(delimiter).trim(csv::Trim::All).from_reader(text.as_bytes());
    let csv_err = |source| Error::Csv { path: path.to_path_buf(), source };
    let headers = reader.headers().map_err(csv_err)?.clone();
    let (cs, cr, ci, cy) = (
        column(&headers, "student", path)?,
        column(&headers, "rater", path)?,
        column(&headers, "item", path)?,
        column(&headers, "score", path)?,
    );
    let cg = options.group_by.as_deref().map(|g| column(&headers, g, path)).transpose()?;

    let mut raw: Vec<(RatingRecord, f64)> = Vec::new();
    for (k, row) in reader.records().enumerate() {
        let row = row.map_err(csv_err)?;
        let line = k + 2;
        let field = |c: usize, name: &str| -> Result<String> {
            match row.get(c) {
                Some(v) if !v.is_empty() => Ok(v.to_string()),
                _ => Err(Error::InvalidInput(format!("{}:{line}: missing {name}", path.display()))),
            }
        };
        let score_text = field(cy, "score")?;
        let score: f64 = score_text.parse().map_err(|_| {
            Error::InvalidInput(format!("{}:{line}: score '{score_text}' is not numeric", path.display()))
        })?;
        if !score.is_finite() {
            return Err(Error::InvalidInput(format!("{}:{line}: score '{score_text}' is not finite", path.display())));
        }
        let mut record = RatingRecord::new(field(cs, "student")?, field(cr, "rater")?, field(ci, "item")?, 0);
        if let Some(c) = cg {
            record = record.with_group(field(c, options.group_by.as_deref().unwrap_or("group"))?);
        }
        raw.push((record, score));
    }
    if raw.is_empty() {
        return Err(Error::InvalidInput(format!("{}: no rating rows", path.display())));
    }
    let (lo, hi) = raw.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), (_, s)| (a.min(*s), b.max(*s)));
    if options.threshold < lo || options.threshold > hi {
        return Err(Error::InvalidInput(format!(
            "{}: threshold {} outside the observed score range [{lo}, {hi}]",
            path.display(),
            options.threshold
        )));
    }

    let mut groups: BTreeMap<String, Vec<RatingRecord>> = BTreeMap::new();
    for (mut record, score) in raw {
        record.score = (score >= options.threshold) as u8;
        let label = record.group_label.clone().unwrap_or_else(|| UNGROUPED.to_string());
        groups.entry(label).or_default().push(record);
    }
    groups
        .into_iter()
        .map(|(label, records)| {
            let data = RatingDataset::from_records(records)
                .map_err(|e| Error::InvalidInput(format!("{} (group '{label}'): {e}", path.display())))?;
            Ok((label, data))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn load(text: &str, threshold: f64, group: Option<&str>) -> Result<BTreeMap<String, RatingDataset>> {
        let mut o = IngestOptions::new(threshold);
        o.group_by = group.map(str::to_string);
        ingest_str(text, Path::new("ratings.csv"), &o)
    }

    const FILE: &str = "student,rater,item,score,topic\n\
        s1,AM,grammar,3,family\n\
        s1,AM,content,2,family\n\
        s2,BE,grammar,0,school\n\
        s2,BE,content,3,school\n\
        s3,BE,grammar,1,school\n";

    #[test]
    fn threshold_dichotomizes() {
        let g = load(FILE, 3.0, None).unwrap();
        let d = &g[UNGROUPED];
        let scores: Vec<u8> = d.records().iter().map(|r| r.score).collect();
        assert_eq!(scores, [1, 0, 0, 1, 0]);
    }

    #[test]
    fn groups_partition_rows() {
        let g = load(FILE, 3.0, Some("topic")).unwrap();
        assert_eq!(g.len(), 2);
        assert_eq!(g["family"].len() + g["school"].len(), 5);
        assert_eq!(g["school"].records()[0].group_label.as_deref(), Some("school"));
    }

    #[test]
    fn tab_files_are_detected() {
        let g = load(&FILE.replace(',', "\t"), 2.0, None).unwrap();
        assert_eq!(g[UNGROUPED].len(), 5);
        assert_eq!(detect_delimiter("a\tb\tc"), b'\t');
        assert_eq!(detect_delimiter("a,b"), b',');
    }

    #[test]
    fn bad_inputs_are_rejected() {
        let missing_col = "student,rater,score\ns1,AM,1\n";
        assert!(matches!(load(missing_col, 1.0, None), Err(Error::InvalidInput(m)) if m.contains("item")));
        let non_numeric = "student,rater,item,score\ns1,AM,g,high\n";
        assert!(matches!(load(non_numeric, 1.0, None), Err(Error::InvalidInput(m)) if m.contains(":2:")));
        let empty_score = "student,rater,item,score\ns1,AM,g,\n";
        assert!(load(empty_score, 1.0, None).is_err());
        let dup = "student,rater,item,score\ns1,AM,g,1\ns1,AM,g,0\n";
        assert!(matches!(load(dup, 1.0, None), Err(Error::InvalidInput(m)) if m.contains("duplicate")));
        let empty_group = "student,rater,item,score,topic\ns1,AM,g,1,\n";
        assert!(load(empty_group, 1.0, Some("topic")).is_err());
        assert!(load(FILE, 4.0, None).is_err());
        assert!(load("student,rater,item,score\n", 1.0, None).is_err());
    }

    #[test]
    fn missing_file_is_an_io_error() {
        let e = ingest("/nonexistent/ratings.csv", &IngestOptions::new(1.0)).unwrap_err();
        assert!(e.is_io());
        assert!(e.to_string().contains("/nonexistent/ratings.csv"));
    }

    #[test]
    fn raising_threshold_never_raises_sums() {
        let lo = load(FILE, 1.0, None).unwrap();
        let hi = load(FILE, 3.0, None).unwrap();
        let sum =
            |g: &BTreeMap<String, RatingDataset>| g[UNGROUPED].rater_totals().iter().map(|t| t.1).collect::<Vec<_>>();
        for (a, b) in sum(&lo).iter().zip(sum(&hi)) {
            assert!(b <= *a);
        }
    }
}
