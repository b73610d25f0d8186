use atst_core::eval::{
    auc, cer, confidence_curve, corpus_cer, curve_for_scores, edit_distance, estimate_portion_cers,
    knn_cer_estimate, portion_size, select_top, DEFAULT_PORTIONS,
};
use atst_core::frames::{CorpusManifest, LineRecord, Origin};
use atst_testkit::naive_edit_distance;
use proptest::prelude::*;

fn short() -> impl Strategy<Value = String> {
    proptest::string::string_regex("[abc]{0,6}").unwrap()
}

fn scored(confidences: &[f64]) -> CorpusManifest {
    let mut m = CorpusManifest::new("a.json", 1);
    for (i, &c) in confidences.iter().enumerate() {
        let mut r = LineRecord::new(
            format!("l{i:04}"),
            format!("l{i}.fpm"),
            Origin::TargetUnannotated,
        );
        r.hypothesis = Some("ab".into());
        r.transcript = Some("ab".into());
        r.confidence = Some(c);
        m.records.push(r);
    }
    m
}

proptest! {
    #[test]
    fn cer_matches_recursive_oracle(r in short(), h in short()) {
        let (rc, hc): (Vec<char>, Vec<char>) = (r.chars().collect(), h.chars().collect());
        prop_assert_eq!(edit_distance(&r, &h), naive_edit_distance(&rc, &hc));
        prop_assert_eq!(cer(&r, &h), naive_edit_distance(&rc, &hc) as f64 / rc.len().max(1) as f64);
        prop_assert_eq!(cer(&r, &h) == 0.0, r == h);
    }

    #[test]
    fn selection_size(confs in proptest::collection::vec(0.0f64..=1.0, 1..60), portion in 0.01f64..=1.0) {
        let m = scored(&confs);
        let sel = select_top(&m, portion).unwrap();
        prop_assert_eq!(sel.len(), portion_size(portion, confs.len()));
        prop_assert!(sel.records.iter().all(|r| r.origin == Origin::MachineAnnotated));
        let min_selected = sel.records.iter().map(|r| r.confidence.unwrap()).fold(f64::INFINITY, f64::min);
        let unselected_max = m.records.iter()
            .filter(|r| !sel.records.iter().any(|s| s.line_id == r.line_id))
            .map(|r| r.confidence.unwrap())
            .fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(min_selected >= unselected_max);
        prop_assert_eq!(select_top(&m, 1.0).unwrap().len(), confs.len());
    }

    #[test]
    fn curve_ends_at_corpus_cer(lines in proptest::collection::vec((short(), short(), 0.0f64..1.0), 1..30)) {
        let mut m = CorpusManifest::new("a.json", 1);
        for (i, (r, h, c)) in lines.iter().enumerate() {
            let mut rec = LineRecord::new(format!("l{i:03}"), "x.fpm", Origin::TargetAnnotated);
            rec.transcript = Some(r.clone());
            rec.hypothesis = Some(h.clone());
            rec.confidence = Some(*c);
            m.records.push(rec);
        }
        let curve = confidence_curve(&m).unwrap();
        let last = curve.points.last().unwrap();
        prop_assert_eq!(last.fraction, 1.0);
        let whole = corpus_cer(lines.iter().map(|(r, h, _)| (r.as_str(), h.as_str())));
        prop_assert!((last.cer_percent - 100.0 * whole).abs() < 1e-9);
        for w in curve.points.windows(2) {
            prop_assert!(w[0].fraction < w[1].fraction);
        }
    }

    /// With equal reference lengths, ranking by true error count is optimal.
    #[test]
    fn oracle_ordering_is_optimal_for_equal_lengths(
        errors in proptest::collection::vec(0usize..10, 1..12),
        scores in proptest::collection::vec(0.0f64..1.0, 12),
    ) {
        let counts: Vec<(usize, usize)> = errors.iter().map(|&e| (e, 10)).collect();
        let oracle: Vec<f64> = errors.iter().map(|&e| -(e as f64)).collect();
        let best = auc(&curve_for_scores(&counts, &oracle));
        let other = auc(&curve_for_scores(&counts, &scores[..counts.len()]));
        prop_assert!(best <= other + 1e-9);
    }
}

#[test]
fn oracle_ordering_can_lose_with_unequal_lengths() {
    // (errors, length): per-line CERs 0.01, 0.05, 0.1.
    let counts = [(1, 100), (50, 1000), (1, 10)];
    let by_line_cer = auc(&curve_for_scores(&counts, &[3.0, 2.0, 1.0]));
    let alternative = auc(&curve_for_scores(&counts, &[3.0, 1.0, 2.0]));
    assert!(alternative < by_line_cer);
}

#[test]
fn knn_estimates_follow_a_monotone_validation_set() {
    // Confidence strictly decreasing in CER.
    let validation: Vec<(f64, f64)> = (0..50)
        .map(|i| (1.0 - i as f64 / 50.0, i as f64 / 100.0))
        .collect();
    let confs: Vec<f64> = (0..200).map(|i| (i as f64 * 0.37) % 1.0).collect();
    let est = estimate_portion_cers(&scored(&confs), &validation, &DEFAULT_PORTIONS, 10).unwrap();
    assert_eq!(est.len(), 6);
    for w in est.windows(2) {
        assert!(w[0].estimated_cer <= w[1].estimated_cer + 1e-12);
    }
    assert_eq!(est[0].lines, 2);
    let single = estimate_portion_cers(&scored(&[0.5]), &validation, &[1.0], 10).unwrap();
    assert_eq!(
        single[0].estimated_cer,
        knn_cer_estimate(&validation, 0.5, 10).unwrap()
    );
}
