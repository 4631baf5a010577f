//! Independent brute-force oracles shared by the integration tests.

#![allow(dead_code)]

use hippo_core::alignment::{AlignmentOps, EditOp};
use rand::Rng;

/// Collapses a CTC path: merge repeats, then drop blanks.
pub fn collapse(path: &[usize], blank: usize) -> Vec<usize> {
    let mut out = Vec::new();
    let mut prev = None;
    for &s in path {
        if Some(s) != prev && s != blank {
            out.push(s);
        }
        prev = Some(s);
    }
    out
}

/// Sum of path probabilities over every length-T path collapsing to
/// `labels`. `probs` rows are linear probabilities with the blank last.
pub fn brute_ctc(probs: &[Vec<f64>], labels: &[usize]) -> f64 {
    let t = probs.len();
    let s = probs[0].len();
    let blank = s - 1;
    let mut total = 0.0;
    let mut path = vec![0usize; t];
    loop {
        if collapse(&path, blank) == labels {
            total += path.iter().enumerate().map(|(i, &k)| probs[i][k]).product::<f64>();
        }
        // odometer increment
        let mut i = 0;
        loop {
            if i == t {
                return total;
            }
            path[i] += 1;
            if path[i] < s {
                break;
            }
            path[i] = 0;
            i += 1;
        }
    }
}

/// Random strictly positive distribution rows.
pub fn random_probs<R: Rng>(rng: &mut R, frames: usize, symbols: usize) -> Vec<Vec<f64>> {
    (0..frames)
        .map(|_| {
            let raw: Vec<f64> = (0..symbols).map(|_| rng.gen_range(0.05..1.0)).collect();
            let z: f64 = raw.iter().sum();
            raw.iter().map(|v| v / z).collect()
        })
        .collect()
}

/// Every sequence over `0..alphabet` of length `0..=max_len`.
pub fn all_sequences(alphabet: usize, max_len: usize) -> Vec<Vec<usize>> {
    let mut out = vec![Vec::new()];
    let mut frontier = vec![Vec::new()];
    for _ in 0..max_len {
        let mut next = Vec::new();
        for seq in &frontier {
            for a in 0..alphabet {
                let mut s: Vec<usize> = seq.clone();
                s.push(a);
                next.push(s);
            }
        }
        out.extend(next.iter().cloned());
        frontier = next;
    }
    out
}

/// Edit distance by memoised recursion over suffixes.
pub fn brute_edit_distance<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    fn go<T: PartialEq>(a: &[T], b: &[T], i: usize, j: usize, memo: &mut Vec<Option<usize>>, w: usize) -> usize {
        if i == a.len() {
            return b.len() - j;
        }
        if j == b.len() {
            return a.len() - i;
        }
        if let Some(v) = memo[i * w + j] {
            return v;
        }
        let v = if a[i] == b[j] {
            go(a, b, i + 1, j + 1, memo, w)
        } else {
            1 + go(a, b, i + 1, j + 1, memo, w)
                .min(go(a, b, i + 1, j, memo, w))
                .min(go(a, b, i, j + 1, memo, w))
        };
        memo[i * w + j] = Some(v);
        v
    }
    let w = b.len() + 1;
    let mut memo = vec![None; (a.len() + 1) * w];
    go(a, b, 0, 0, &mut memo, w)
}

/// Transfer rules applied per hypothesis position: find the operation
/// that produced it and read off the score.
pub fn interpret_transfer(ops: &AlignmentOps, hyp_len: usize, ref_scores: &[f64]) -> Vec<f64> {
    (0..hyp_len)
        .map(|h| {
            let op = ops
                .ops
                .iter()
                .find(|op| match op {
                    EditOp::Match { hyp_idx, .. }
                    | EditOp::Substitute { hyp_idx, .. }
                    | EditOp::Insert { hyp_idx } => *hyp_idx == h,
                    EditOp::Delete { .. } => false,
                })
                .expect("every hypothesis token is produced once");
            match op {
                EditOp::Match { ref_idx, .. } | EditOp::Substitute { ref_idx, .. } => ref_scores[*ref_idx],
                _ => 0.0,
            }
        })
        .collect()
}
