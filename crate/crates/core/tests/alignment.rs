mod common;

use hippo_core::alignment::{align, assign_scores, build_phone_word_map, word_error_rate, EditOp, Provenance};
use proptest::prelude::*;

fn seq() -> impl Strategy<Value = Vec<u8>> {
    prop::collection::vec(0u8..4, 0..10)
}

proptest! {
    #[test]
    fn cost_is_edit_distance(h in seq(), r in seq()) {
        let ops = align(&h, &r);
        prop_assert_eq!(ops.cost(), common::brute_edit_distance(&r, &h));
        prop_assert!(ops.validate(r.len(), h.len()).is_ok());
    }

    #[test]
    fn self_alignment_is_all_matches(r in seq()) {
        let ops = align(&r, &r);
        let all_match = ops.ops.iter().all(|op| matches!(op, EditOp::Match { .. }));
        prop_assert!(all_match);
        prop_assert_eq!(word_error_rate(&r, &r), 0.0);
    }

    #[test]
    fn transfer_follows_rules(h in seq(), r in prop::collection::vec(0u8..4, 1..10)) {
        let scores: Vec<f64> = (0..r.len()).map(|i| i as f64 + 1.0).collect();
        let ops = align(&h, &r);
        let out = assign_scores(&ops, &scores).unwrap();
        prop_assert_eq!(out.scores.len(), h.len());
        prop_assert_eq!(&out.scores, &common::interpret_transfer(&ops, h.len(), &scores));
        for (s, p) in out.scores.iter().zip(&out.provenance) {
            prop_assert_eq!(*s == 0.0, *p == Provenance::ZeroedInsertion);
        }
    }

    #[test]
    fn wer_is_cost_over_reference(h in seq(), r in prop::collection::vec(0u8..4, 1..10)) {
        let wer = word_error_rate(&h, &r);
        prop_assert!((wer - align(&h, &r).cost() as f64 / r.len() as f64).abs() < 1e-15);
    }

    #[test]
    fn phone_word_map_round_trips(counts in prop::collection::vec(1usize..5, 1..8)) {
        let map = build_phone_word_map(&counts).unwrap();
        prop_assert_eq!(map.len(), counts.iter().sum::<usize>());
        for (w, &c) in counts.iter().enumerate() {
            prop_assert_eq!(map.iter().filter(|&&m| m == w).count(), c);
        }
    }
}

#[test]
fn worked_examples() {
    let ops = align(&["A", "C"], &["A", "B", "C"]);
    assert_eq!(
        ops.ops,
        vec![
            EditOp::Match { ref_idx: 0, hyp_idx: 0 },
            EditOp::Delete { ref_idx: 1 },
            EditOp::Match { ref_idx: 2, hyp_idx: 1 },
        ]
    );
    let wer = word_error_rate(&["a", "x", "c", "d"], &["a", "b", "c"]);
    assert!((wer - 2.0 / 3.0).abs() < 1e-12);
    assert!(build_phone_word_map(&[2, 0]).is_err());
}
