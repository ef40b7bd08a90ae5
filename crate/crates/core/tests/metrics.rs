mod common;

use common::{close, close_opt, oracle_auprc_neg, oracle_auprc_pos, oracle_auroc, oracle_bin, oracle_ece, to_records};
use confcraft::metrics::{
    auprc_negative, auprc_positive, auroc, bin_index, ece, ece_from_bins, reliability_bins, ConfidenceRecord,
    MetricReport, Stage,
};
use proptest::prelude::*;

fn recs(raw: &[(f64, bool)]) -> Vec<ConfidenceRecord> {
    to_records(raw)
}

#[test]
fn edge_table() {
    assert_eq!(ece(&recs(&[(1.0, true)]), 10).unwrap(), 0.0);
    assert_eq!(ece(&recs(&[(0.0, false)]), 10).unwrap(), 0.0);
    assert_eq!(auroc(&recs(&[(0.9, true), (0.8, true), (0.2, false)])), Some(1.0));
    assert_eq!(auroc(&recs(&[(0.5, true), (0.5, false), (0.5, true)])), Some(0.5));
    assert_eq!(auroc(&recs(&[(0.1, true), (0.9, false)])), Some(0.0));
    assert_eq!(auroc(&recs(&[(0.7, true)])), None);
    assert_eq!(auprc_negative(&recs(&[(0.5, true), (0.5, false)])), Some(0.5));
    assert_eq!(auprc_positive(&recs(&[(0.2, false)])), None);
}

#[test]
fn zero_lands_in_the_first_bin_and_edges_close_right() {
    assert_eq!(bin_index(0.0, 10), 1);
    assert_eq!(bin_index(0.1, 10), 1);
    assert_eq!(bin_index(0.1 + 1e-12, 10), 2);
    assert_eq!(bin_index(0.3, 10), 3);
    assert_eq!(bin_index(1.0, 10), 10);
    assert_eq!(bin_index(0.7, 1), 1);
}

#[test]
fn calibrated_bins_score_zero() {
    // 8 of 10 right at 0.8, 3 of 10 right at 0.3
    let mut raw: Vec<(f64, bool)> = (0..10).map(|i| (0.8, i < 8)).collect();
    raw.extend((0..10).map(|i| (0.3, i < 3)));
    assert!(ece(&recs(&raw), 10).unwrap() < 1e-12);
}

#[test]
fn rejects_bad_input() {
    assert!(ece(&[], 10).is_err());
    assert!(ece(&recs(&[(0.5, true)]), 0).is_err());
    assert!(ConfidenceRecord::new(f64::NAN, true, Stage::Action).is_err());
    assert!(serde_json::from_str::<ConfidenceRecord>(r#"{"confidence": 1.5, "correct": true, "stage": "action"}"#).is_err());
}

#[test]
fn report_serializes_absent_ranking_metrics_as_null() {
    let r = MetricReport::compute(&recs(&[(0.6, true), (0.7, true)]), 10).unwrap();
    let v = serde_json::to_value(&r).unwrap();
    assert!(v["auroc"].is_null());
    assert_eq!(v["n"], 2);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(500))]

    #[test]
    fn matches_oracles(raw in common::record_set(120), bins in 1usize..=20) {
        let r = recs(&raw);
        prop_assert!(close(ece(&r, bins).unwrap(), oracle_ece(&raw, bins), 1e-12));
        prop_assert!(close_opt(auroc(&r), oracle_auroc(&raw), 1e-12));
        prop_assert!(close_opt(auprc_positive(&r), oracle_auprc_pos(&raw), 1e-12));
        prop_assert!(close_opt(auprc_negative(&r), oracle_auprc_neg(&raw), 1e-12));
    }

    #[test]
    fn bins_agree_with_edge_scan(c in common::confidence(), bins in 1usize..=50) {
        prop_assert_eq!(bin_index(c, bins), oracle_bin(c, bins));
    }

    #[test]
    fn metrics_stay_in_unit_interval(raw in common::record_set(80)) {
        let m = MetricReport::compute(&recs(&raw), 10).unwrap();
        prop_assert!((0.0..=1.0).contains(&m.ece));
        for v in [m.auroc, m.auprc_pos, m.auprc_neg].into_iter().flatten() {
            prop_assert!((0.0..=1.0).contains(&v));
        }
    }

    #[test]
    fn negative_class_is_positive_class_of_flipped(raw in common::record_set(80)) {
        let r = recs(&raw);
        let flipped: Vec<ConfidenceRecord> = r.iter().map(ConfidenceRecord::flipped).collect();
        prop_assert_eq!(auprc_negative(&r), auprc_positive(&flipped));
        prop_assert!(close_opt(auroc(&r), auroc(&flipped), 1e-12));
    }

    #[test]
    fn order_does_not_change_ece_or_auroc(raw in common::record_set(60), seed in any::<u64>()) {
        let mut shuffled = raw.clone();
        let n = shuffled.len();
        let mut s = seed;
        for i in (1..n).rev() {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            shuffled.swap(i, (s >> 33) as usize % (i + 1));
        }
        prop_assert!(close(ece(&recs(&raw), 10).unwrap(), ece(&recs(&shuffled), 10).unwrap(), 1e-12));
        prop_assert!(close_opt(auroc(&recs(&raw)), auroc(&recs(&shuffled)), 1e-12));
    }

    #[test]
    fn reliability_bins_account_for_every_record(raw in common::record_set(80), bins in 1usize..=15) {
        let summaries = reliability_bins(&recs(&raw), bins).unwrap();
        prop_assert_eq!(summaries.len(), bins);
        prop_assert_eq!(summaries.iter().map(|b| b.count).sum::<usize>(), raw.len());
        prop_assert!(close(ece_from_bins(&summaries), ece(&recs(&raw), bins).unwrap(), 1e-12));
        for b in &summaries {
            prop_assert_eq!(b.mean_confidence.is_some(), b.count > 0);
        }
    }
}
