use outcode::metrics::{
    auc, auc_micro, mean_recall_at_k, oracle_recall, pooled_counts, recall_at_k, Counts, PredictionRecord,
};
use proptest::prelude::*;

fn record(probs: Vec<f64>, gt_mask: Vec<bool>, unseen: usize) -> PredictionRecord {
    PredictionRecord {
        id: "r".into(),
        gt: gt_mask.iter().enumerate().filter(|(_, &g)| g).map(|(i, _)| i).collect(),
        probs,
        scores: None,
        unseen,
        dept: "d".into(),
        first_visit: false,
        year: 2020,
    }
}

fn arb_record(n: usize) -> impl Strategy<Value = PredictionRecord> {
    (
        proptest::collection::vec(0.0f64..1.0, n),
        proptest::collection::vec(any::<bool>(), n),
        0usize..3,
    )
        .prop_filter("needs a ground-truth code", |(_, g, u)| *u > 0 || g.iter().any(|&b| b))
        .prop_map(|(p, g, u)| record(p, g, u))
}

/// Sorting-free recall: a label is in the top k if fewer than k labels outrank it.
fn brute_recall(r: &PredictionRecord, k: usize) -> f64 {
    let s = &r.probs;
    let outranks = |a: usize, b: usize| s[a] > s[b] || (s[a] == s[b] && a < b);
    let hits = r
        .gt
        .iter()
        .filter(|&&l| (0..s.len()).filter(|&o| outranks(o, l)).count() < k)
        .count();
    hits as f64 / (r.gt.len() + r.unseen) as f64
}

fn brute_auc(scores: &[f64], labels: &[bool]) -> Option<f64> {
    let (mut num, mut den) = (0.0, 0.0);
    for (i, &li) in labels.iter().enumerate() {
        for (j, &lj) in labels.iter().enumerate() {
            if li && !lj {
                den += 1.0;
                num += if scores[i] > scores[j] {
                    1.0
                } else if scores[i] == scores[j] {
                    0.5
                } else {
                    0.0
                };
            }
        }
    }
    (den > 0.0).then(|| num / den)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn recall_matches_brute_force(r in arb_record(12), k in 1usize..14) {
        prop_assert!((recall_at_k(&r, k).unwrap() - brute_recall(&r, k)).abs() < 1e-12);
    }

    #[test]
    fn recall_is_monotone_in_k(r in arb_record(10)) {
        let mut prev = 0.0;
        for k in 1..=12 {
            let v = recall_at_k(&r, k).unwrap();
            prop_assert!(v >= prev);
            prev = v;
        }
        if r.unseen == 0 {
            prop_assert_eq!(prev, 1.0);
        }
    }

    #[test]
    fn ranking_metrics_ignore_monotone_transforms(recs in proptest::collection::vec(arb_record(8), 1..6), k in 1usize..6) {
        let squashed: Vec<_> = recs
            .iter()
            .map(|r| PredictionRecord { probs: r.probs.iter().map(|p| p.powi(3) * 0.5).collect(), ..r.clone() })
            .collect();
        prop_assert_eq!(mean_recall_at_k(&recs, k).unwrap(), mean_recall_at_k(&squashed, k).unwrap());
        let a = auc_micro(&recs).ok();
        let b = auc_micro(&squashed).ok();
        prop_assert_eq!(a.is_some(), b.is_some());
        if let (Some(a), Some(b)) = (a, b) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn auc_matches_pairwise_count(
        scores in proptest::collection::vec(prop_oneof![0.0f64..1.0, Just(0.5)], 2..30),
        seed in any::<u64>(),
    ) {
        let labels: Vec<bool> = (0..scores.len()).map(|i| (seed >> (i % 64)) & 1 == 1).collect();
        let got = auc(&scores, &labels);
        let want = brute_auc(&scores, &labels);
        prop_assert_eq!(got.is_some(), want.is_some());
        if let (Some(g), Some(w)) = (got, want) {
            prop_assert!((g - w).abs() < 1e-12);
        }
    }

    #[test]
    fn pooled_counts_split_additively(recs in proptest::collection::vec(arb_record(6), 2..8), cut in 1usize..7, t in 0.05f64..0.95) {
        let cut = cut.min(recs.len() - 1);
        let mut total = pooled_counts(&recs[..cut], t);
        total.add(pooled_counts(&recs[cut..], t));
        prop_assert_eq!(total, pooled_counts(&recs, t));
    }

    #[test]
    fn oracle_bounds_model_recall(recs in proptest::collection::vec(arb_record(6), 1..6), counts in proptest::collection::vec(0usize..5, 6), k in 1usize..8) {
        // Codes below the training threshold leave the label space and become unseen.
        let filtered: Vec<_> = recs
            .iter()
            .map(|r| {
                let dropped = r.gt.iter().filter(|&&l| counts[l] < 1).count();
                PredictionRecord {
                    gt: r.gt.iter().copied().filter(|&l| counts[l] >= 1).collect(),
                    unseen: r.unseen + dropped,
                    ..r.clone()
                }
            })
            .collect();
        let oracle = oracle_recall(&filtered, &counts, 1, k).unwrap();
        prop_assert!(mean_recall_at_k(&filtered, k).unwrap() <= oracle + 1e-12);
        prop_assert!(mean_recall_at_k(&recs, k).unwrap() <= oracle_recall(&recs, &counts, 0, k).unwrap() + 1e-12);
    }
}

#[test]
fn counts_f1_definition() {
    let c = Counts { tp: 3, fp: 1, fn_: 2 };
    assert!((c.f1().unwrap() - 6.0 / 9.0).abs() < 1e-15);
    assert_eq!(Counts::default().f1(), None);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn micro_f1_matches_single_pass_counter(
        recs in proptest::collection::vec(arb_record(20), 1..100),
        t in 0.05f64..0.95,
    ) {
        let (mut tp, mut fp, mut fn_) = (0usize, 0usize, 0usize);
        for r in &recs {
            fn_ += r.unseen;
            for (l, &p) in r.probs.iter().enumerate() {
                let gt = r.gt.contains(&l);
                match (p > t, gt) {
                    (true, true) => tp += 1,
                    (true, false) => fp += 1,
                    (false, true) => fn_ += 1,
                    _ => {}
                }
            }
        }
        let want = if tp + fp + fn_ == 0 { None } else { Some(2.0 * tp as f64 / (2 * tp + fp + fn_) as f64) };
        prop_assert_eq!(outcode::metrics::micro_f1(&recs, t).ok(), want);
    }
}
