use std::collections::{BTreeMap, HashMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One binary rating given by a rater to a student on an item.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RatingRecord {
    pub student_id: String,
    pub rater_id: String,
    pub item_id: String,
    pub score: u8,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub group_label: Option<String>,
}

impl RatingRecord {
    pub fn new(
        student_id: impl Into<String>,
        rater_id: impl Into<String>,
        item_id: impl Into<String>,
        score: u8,
    ) -> Self {
        RatingRecord {
            student_id: student_id.into(),
            rater_id: rater_id.into(),
            item_id: item_id.into(),
            score,
            group_label: None,
        }
    }

    pub fn with_group(mut self, label: impl Into<String>) -> Self {
        self.group_label = Some(label.into());
        self
    }
}

/// A record resolved to contiguous student/rater/item indices.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Observation {
    pub student: usize,
    pub rater: usize,
    pub item: usize,
    pub score: bool,
}

/// Long-format ratings with contiguous indices and per-student rater sets.
#[derive(Debug, Clone)]
pub struct RatingDataset {
    records: Vec<RatingRecord>,
    observations: Vec<Observation>,
    student_ids: Vec<String>,
    rater_ids: Vec<String>,
    item_ids: Vec<String>,
    by_student: Vec<Vec<usize>>,
    rater_sets: Vec<Vec<usize>>,
}

fn intern(map: &mut HashMap<String, usize>, ids: &mut Vec<String>, id: &str) -> usize {
    if let Some(&k) = map.get(id) {
        return k;
    }
    let k = ids.len();
    map.insert(id.to_string(), k);
    ids.push(id.to_string());
    k
}

impl RatingDataset {
    /// Indexes records in first-appearance order.
    pub fn from_records(records: Vec<RatingRecord>) -> Result<Self> {
        let mut students = HashMap::new();
        let mut raters = HashMap::new();
        let mut items = HashMap::new();
        let mut student_ids = Vec::new();
        let mut rater_ids = Vec::new();
        let mut item_ids = Vec::new();
        let mut seen = HashSet::with_capacity(records.len());
        let mut observations = Vec::with_capacity(records.len());

        for (row, rec) in records.iter().enumerate() {
            if rec.student_id.is_empty() || rec.rater_id.is_empty() || rec.item_id.is_empty() {
                return Err(Error::InvalidInput(format!("record {row}: empty identifier")));
            }
            if rec.score > 1 {
                return Err(Error::InvalidInput(format!("record {row}: score {} is not binary", rec.score)));
            }
            let n = intern(&mut students, &mut student_ids, &rec.student_id);
            let r = intern(&mut raters, &mut rater_ids, &rec.rater_id);
            let i = intern(&mut items, &mut item_ids, &rec.item_id);
            if !seen.insert((n, r, i)) {
                return Err(Error::InvalidInput(format!(
                    "duplicate rating for (student {}, rater {}, item {})",
                    rec.student_id, rec.rater_id, rec.item_id
                )));
            }
            observations.push(Observation { student: n, rater: r, item: i, score: rec.score == 1 });
        }

        let mut by_student = vec![Vec::new(); student_ids.len()];
        for (k, obs) in observations.iter().enumerate() {
            by_student[obs.student].push(k);
        }
        let rater_sets = by_student
            .iter()
            .map(|ks| {
                let mut set: Vec<usize> = ks.iter().map(|&k| observations[k].rater).collect();
                set.sort_unstable();
                set.dedup();
                set
            })
            .collect();

        Ok(RatingDataset { records, observations, student_ids, rater_ids, item_ids, by_student, rater_sets })
    }

    pub fn records(&self) -> &[RatingRecord] {
        &self.records
    }

    pub fn observations(&self) -> &[Observation] {
        &self.observations
    }

    pub fn len(&self) -> usize {
        self.observations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }

    pub fn n_students(&self) -> usize {
        self.student_ids.len()
    }

    pub fn n_raters(&self) -> usize {
        self.rater_ids.len()
    }

    pub fn n_items(&self) -> usize {
        self.item_ids.len()
    }

    pub fn student_ids(&self) -> &[String] {
        &self.student_ids
    }

    pub fn rater_ids(&self) -> &[String] {
        &self.rater_ids
    }

    pub fn item_ids(&self) -> &[String] {
        &self.item_ids
    }

    /// Indices into [`observations`](Self::observations) for student `n`.
    pub fn student_observations(&self, n: usize) -> &[usize] {
        &self.by_student[n]
    }

    /// The raters who rated student `n` (sorted).
    pub fn rater_set(&self, n: usize) -> &[usize] {
        &self.rater_sets[n]
    }

    /// Per-rater `(record count, summed score)`.
    pub fn rater_totals(&self) -> Vec<(usize, usize)> {
        let mut totals = vec![(0, 0); self.n_raters()];
        for obs in &self.observations {
            totals[obs.rater].0 += 1;
            totals[obs.rater].1 += obs.score as usize;
        }
        totals
    }

    pub fn item_totals(&self) -> Vec<(usize, usize)> {
        let mut totals = vec![(0, 0); self.n_items()];
        for obs in &self.observations {
            totals[obs.item].0 += 1;
            totals[obs.item].1 += obs.score as usize;
        }
        totals
    }

    pub fn student_totals(&self) -> Vec<(usize, usize)> {
        let mut totals = vec![(0, 0); self.n_students()];
        for obs in &self.observations {
            totals[obs.student].0 += 1;
            totals[obs.student].1 += obs.score as usize;
        }
        totals
    }

    /// Connected blocks of the student/rater/item co-observation graph.
    ///
    /// Each block is listed as its member identifiers prefixed by facet
    /// (`student:`, `rater:`, `item:`). A single block means every effect is
    /// linked to every other through some chain of ratings.
    pub fn connected_components(&self) -> Vec<Vec<String>> {
        let (ns, nr) = (self.n_students(), self.n_raters());
        let total = ns + nr + self.n_items();
        let mut parent: Vec<usize> = (0..total).collect();
        fn find(parent: &mut [usize], mut x: usize) -> usize {
            while parent[x] != x {
                parent[x] = parent[parent[x]];
                x = parent[x];
            }
            x
        }
        let union = |parent: &mut Vec<usize>, a: usize, b: usize| {
            let (ra, rb) = (find(parent, a), find(parent, b));
            if ra != rb {
                parent[ra.max(rb)] = ra.min(rb);
            }
        };
        for obs in &self.observations {
            union(&mut parent, obs.student, ns + obs.rater);
            union(&mut parent, obs.student, ns + nr + obs.item);
        }
        let mut blocks: BTreeMap<usize, Vec<String>> = BTreeMap::new();
        for node in 0..total {
            let root = find(&mut parent, node);
            let label = if node < ns {
                format!("student:{}", self.student_ids[node])
            } else if node < ns + nr {
                format!("rater:{}", self.rater_ids[node - ns])
            } else {
                format!("item:{}", self.item_ids[node - ns - nr])
            };
            blocks.entry(root).or_default().push(label);
        }
        blocks.into_values().collect()
    }

    /// A copy with every student duplicated under a suffixed identifier.
    pub fn with_replicated_students(&self, copies: usize, suffix: &str) -> Result<Self> {
        let mut records = Vec::with_capacity(self.records.len() * copies);
        for c in 0..copies {
            for rec in &self.records {
                let mut rec = rec.clone();
                if c > 0 {
                    rec.student_id = format!("{}{}{}", rec.student_id, suffix, c);
                }
                records.push(rec);
            }
        }
        RatingDataset::from_records(records)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(s: &str, r: &str, i: &str, y: u8) -> RatingRecord {
        RatingRecord::new(s, r, i, y)
    }

    #[test]
    fn indexes_in_first_appearance_order() {
        let ds = RatingDataset::from_records(vec![
            rec("b", "r2", "i1", 1),
            rec("a", "r1", "i1", 0),
            rec("b", "r1", "i2", 1),
        ])
        .unwrap();
        assert_eq!(ds.student_ids(), ["b", "a"]);
        assert_eq!(ds.rater_ids(), ["r2", "r1"]);
        assert_eq!(ds.rater_set(0), [0, 1]);
        assert_eq!(ds.rater_set(1), [1]);
        assert_eq!(ds.student_observations(0), [0, 2]);
        assert_eq!(ds.rater_totals(), vec![(1, 1), (2, 1)]);
    }

    #[test]
    fn rejects_duplicates_and_bad_scores() {
        let dup = RatingDataset::from_records(vec![rec("a", "r", "i", 1), rec("a", "r", "i", 0)]);
        assert!(matches!(dup, Err(Error::InvalidInput(_))));
        let bad = RatingDataset::from_records(vec![rec("a", "r", "i", 2)]);
        assert!(bad.is_err());
        let empty_id = RatingDataset::from_records(vec![rec("", "r", "i", 1)]);
        assert!(empty_id.is_err());
    }

    #[test]
    fn finds_disconnected_blocks() {
        let ds = RatingDataset::from_records(vec![
            rec("a", "r1", "i1", 1),
            rec("b", "r1", "i1", 0),
            rec("c", "r2", "i2", 1),
        ])
        .unwrap();
        let blocks = ds.connected_components();
        assert_eq!(blocks.len(), 2);
        assert!(blocks[1].contains(&"rater:r2".to_string()));
    }

    #[test]
    fn replication_doubles_students() {
        let ds = RatingDataset::from_records(vec![rec("a", "r1", "i1", 1), rec("b", "r1", "i1", 0)]).unwrap();
        let twice = ds.with_replicated_students(2, "#").unwrap();
        assert_eq!(twice.n_students(), 4);
        assert_eq!(twice.len(), 4);
        assert_eq!(twice.n_raters(), 1);
    }
}
