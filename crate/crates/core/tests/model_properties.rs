use std::collections::BTreeMap;
use std::path::Path;

use proptest::prelude::*;
use rater_capability::capability::{kappa_bar, kappa_bar_gmf_closed_form, RaterModel};
use rater_capability::io::{fuse_groups, ingest_str, read_rater_table, write_csv, IngestOptions, RaterRow};
use rater_capability::model::link::ALL_LINKS;
use rater_capability::model::{linear_predictor, LinkFunction, ModelSpec, ParameterSet, RatingDataset, RatingRecord};

const OPEN_LINKS: [LinkFunction; 4] =
    [LinkFunction::Logit, LinkFunction::Probit, LinkFunction::Cauchit, LinkFunction::Cloglog];

fn config() -> ProptestConfig {
    ProptestConfig { cases: 64, ..ProptestConfig::default() }
}

fn rating_text(scores: &[u8]) -> String {
    let mut text = String::from("student,rater,item,score\n");
    for (k, s) in scores.iter().enumerate() {
        text.push_str(&format!("s{},r{},i{},{s}\n", k / 6, k % 3, (k / 3) % 2));
    }
    text
}

proptest! {
    #![proptest_config(config())]

    #[test]
    fn link_cdf_is_monotone_and_bounded(link_index in 0usize..5, a in -40.0f64..40.0, b in -40.0f64..40.0) {
        let link = ALL_LINKS[link_index];
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let (fl, fh) = (link.cdf(lo), link.cdf(hi));
        prop_assert!((0.0..=1.0).contains(&fl) && (0.0..=1.0).contains(&fh));
        prop_assert!(fl <= fh);
    }

    #[test]
    fn moderate_predictors_give_open_probabilities(link_index in 0usize..4, s in -8.0f64..3.0) {
        let p = OPEN_LINKS[link_index].cdf(s);
        prop_assert!(p > 0.0 && p < 1.0, "F({s}) = {p}");
    }

    #[test]
    fn kappa_bar_lies_in_unit_interval(rho in 0.0f64..=1.0, eta in -4.0f64..4.0, sigma in 0.3f64..3.0) {
        let k = kappa_bar(&RaterModel::Gmf { rho, eta }, sigma).unwrap();
        prop_assert!((0.0..=1.0 + 1e-9).contains(&k), "kappa_bar {k}");
        let p = kappa_bar(&RaterModel::Probit { noise_scale: rho * 3.0, eta }, sigma).unwrap();
        prop_assert!((0.0..=1.0 + 1e-9).contains(&p), "probit kappa_bar {p}");
    }

    #[test]
    fn gmf_kappa_bar_is_even_in_severity(rho in 0.05f64..=1.0, eta in 0.0f64..4.0, sigma in 0.3f64..3.0) {
        let up = kappa_bar(&RaterModel::Gmf { rho, eta }, sigma).unwrap();
        let down = kappa_bar(&RaterModel::Gmf { rho, eta: -eta }, sigma).unwrap();
        prop_assert!((up - down).abs() <= 1e-10);
        let cu = kappa_bar_gmf_closed_form(rho, eta, sigma).unwrap();
        let cd = kappa_bar_gmf_closed_form(rho, -eta, sigma).unwrap();
        prop_assert!((cu - cd).abs() <= 1e-10);
    }

    #[test]
    fn centering_preserves_predictors(
        eta in prop::collection::vec(-3.0f64..3.0, 3),
        delta in prop::collection::vec(-3.0f64..3.0, 4),
        rho in prop::collection::vec(0.1f64..=1.0, 3),
        theta in prop::collection::vec(-2.0f64..2.0, 2),
        alpha in -2.0f64..2.0,
        sigma in 0.2f64..3.0,
    ) {
        let spec = ModelSpec::gmf();
        let mut p = ParameterSet::neutral(2, 3, 4);
        p.theta_prime = theta;
        p.sigma = sigma;
        p.rho = rho;
        p.eta = eta;
        p.delta = delta;
        p.alpha = alpha;
        let mut centered = p.clone();
        centered.center_effects();
        prop_assert!(centered.eta.iter().sum::<f64>().abs() <= 1e-10);
        prop_assert!(centered.delta.iter().sum::<f64>().abs() <= 1e-10);
        for n in 0..2 {
            for r in 0..3 {
                for i in 0..4 {
                    let a = linear_predictor(&spec, &p, n, r, i).unwrap();
                    let b = linear_predictor(&spec, &centered, n, r, i).unwrap();
                    prop_assert!((a - b).abs() <= 1e-10);
                }
            }
        }
    }

    #[test]
    fn raising_the_threshold_never_adds_passes(
        scores in prop::collection::vec(0u8..=5, 12..60),
        t1 in 0.0f64..=5.0,
        t2 in 0.0f64..=5.0,
    ) {
        let text = rating_text(&scores);
        let lo_score = f64::from(*scores.iter().min().unwrap());
        let hi_score = f64::from(*scores.iter().max().unwrap());
        let (a, b) = if t1 <= t2 { (t1, t2) } else { (t2, t1) };
        let (a, b) = (a.clamp(lo_score, hi_score), b.clamp(lo_score, hi_score));
        let passes = |t: f64| -> (usize, usize) {
            let groups = ingest_str(&text, Path::new("mem.csv"), &IngestOptions::new(t)).unwrap();
            let data = &groups["all"];
            (data.len(), data.records().iter().map(|r| r.score as usize).sum())
        };
        let (na, pa) = passes(a);
        let (nb, pb) = passes(b);
        prop_assert_eq!(na, scores.len());
        prop_assert_eq!(nb, scores.len());
        prop_assert!(pb <= pa);
        prop_assert_eq!(pa, scores.iter().filter(|&&s| f64::from(s) >= a).count());
    }

    #[test]
    fn rater_table_round_trips(
        rows in prop::collection::vec(
            (0usize..500, 0usize..500, 0.0f64..=1.0, -5.0f64..5.0, 0.0f64..=1.0, prop::option::of(0.0f64..0.5)),
            1..8,
        ),
    ) {
        let rows: Vec<RaterRow> = rows
            .into_iter()
            .enumerate()
            .map(|(k, (n, s, rho, eta, kappa_bar, se))| RaterRow {
                rater: format!("r{k}"),
                n_ratings: n,
                sum_score: s,
                rho,
                eta,
                kappa_bar,
                kappa_bar_se: se,
            })
            .collect();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("estimates.csv");
        write_csv(&path, &rows).unwrap();
        prop_assert_eq!(read_rater_table(&path).unwrap(), rows);
    }

    #[test]
    fn fusing_keeps_every_record(sizes in prop::collection::vec(1usize..20, 1..4)) {
        let mut groups = BTreeMap::new();
        for (g, &size) in sizes.iter().enumerate() {
            let records = (0..size)
                .map(|k| RatingRecord::new(format!("s{}", k / 2), format!("r{}", k % 2), "i0", (k % 3 == 0) as u8))
                .collect();
            groups.insert(format!("g{g}"), RatingDataset::from_records(records).unwrap());
        }
        let fused = fuse_groups(&groups).unwrap();
        prop_assert_eq!(fused.len(), sizes.iter().sum::<usize>());
        let passes: usize = groups.values().map(|d| d.records().iter().map(|r| r.score as usize).sum::<usize>()).sum();
        prop_assert_eq!(fused.records().iter().map(|r| r.score as usize).sum::<usize>(), passes);
        prop_assert!(fused.rater_ids().iter().all(|id| id.contains(':')));
    }
}
