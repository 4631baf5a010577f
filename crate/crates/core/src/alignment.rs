//! Edit-distance alignment of a recognised transcription against its
//! reference, and transfer of reference scores onto the transcription.
//!
//! Transfer rules: matched and substituted tokens inherit the aligned
//! reference score, inserted tokens score zero, deleted reference tokens
//! produce nothing.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum EditOp {
    Match { ref_idx: usize, hyp_idx: usize },
    Substitute { ref_idx: usize, hyp_idx: usize },
    Delete { ref_idx: usize },
    Insert { hyp_idx: usize },
}

/// Ordered edit script turning the reference into the hypothesis.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AlignmentOps {
    pub ops: Vec<EditOp>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct EditCounts {
    pub matches: usize,
    pub substitutions: usize,
    pub deletions: usize,
    pub insertions: usize,
}

impl EditCounts {
    pub fn errors(&self) -> usize {
        self.substitutions + self.deletions + self.insertions
    }
}

impl AlignmentOps {
    pub fn counts(&self) -> EditCounts {
        let mut c = EditCounts::default();
        for op in &self.ops {
            match op {
                EditOp::Match { .. } => c.matches += 1,
                EditOp::Substitute { .. } => c.substitutions += 1,
                EditOp::Delete { .. } => c.deletions += 1,
                EditOp::Insert { .. } => c.insertions += 1,
            }
        }
        c
    }

    /// Unit-cost edit distance of the script.
    pub fn cost(&self) -> usize {
        self.counts().errors()
    }

    /// Checks index monotonicity and coverage against the sequence lengths.
    pub fn validate(&self, ref_len: usize, hyp_len: usize) -> Result<()> {
        let (mut next_ref, mut next_hyp) = (0, 0);
        for op in &self.ops {
            let (r, h) = match *op {
                EditOp::Match { ref_idx, hyp_idx } | EditOp::Substitute { ref_idx, hyp_idx } => {
                    (Some(ref_idx), Some(hyp_idx))
                }
                EditOp::Delete { ref_idx } => (Some(ref_idx), None),
                EditOp::Insert { hyp_idx } => (None, Some(hyp_idx)),
            };
            if let Some(r) = r {
                if r != next_ref {
                    return Err(Error::InvalidArgument(format!(
                        "alignment skips or repeats reference index {r}"
                    )));
                }
                next_ref += 1;
            }
            if let Some(h) = h {
                if h != next_hyp {
                    return Err(Error::InvalidArgument(format!(
                        "alignment skips or repeats hypothesis index {h}"
                    )));
                }
                next_hyp += 1;
            }
        }
        if next_ref != ref_len || next_hyp != hyp_len {
            return Err(Error::InvalidArgument(format!(
                "alignment covers {next_ref}/{ref_len} reference and {next_hyp}/{hyp_len} hypothesis tokens"
            )));
        }
        Ok(())
    }
}

/// Minimal unit-cost Levenshtein alignment of `hyp` against `reference`.
///
/// At equal cost the backtrace prefers Match, then Substitute, then Delete,
/// then Insert.
pub fn align<T: PartialEq>(hyp: &[T], reference: &[T]) -> AlignmentOps {
    let (n, m) = (reference.len(), hyp.len());
    let w = m + 1;
    let mut dp = vec![0usize; (n + 1) * w];
    for j in 0..=m {
        dp[j] = j;
    }
    for i in 1..=n {
        dp[i * w] = i;
        for j in 1..=m {
            let diag = dp[(i - 1) * w + j - 1] + usize::from(reference[i - 1] != hyp[j - 1]);
            let del = dp[(i - 1) * w + j] + 1;
            let ins = dp[i * w + j - 1] + 1;
            dp[i * w + j] = diag.min(del).min(ins);
        }
    }
    let mut ops = Vec::with_capacity(n.max(m));
    let (mut i, mut j) = (n, m);
    while i > 0 || j > 0 {
        let here = dp[i * w + j];
        if i > 0 && j > 0 {
            let same = reference[i - 1] == hyp[j - 1];
            let diag = dp[(i - 1) * w + j - 1];
            if same && here == diag {
                ops.push(EditOp::Match { ref_idx: i - 1, hyp_idx: j - 1 });
                i -= 1;
                j -= 1;
                continue;
            }
            if !same && here == diag + 1 {
                ops.push(EditOp::Substitute { ref_idx: i - 1, hyp_idx: j - 1 });
                i -= 1;
                j -= 1;
                continue;
            }
        }
        if i > 0 && here == dp[(i - 1) * w + j] + 1 {
            ops.push(EditOp::Delete { ref_idx: i - 1 });
            i -= 1;
        } else {
            ops.push(EditOp::Insert { hyp_idx: j - 1 });
            j -= 1;
        }
    }
    ops.reverse();
    AlignmentOps { ops }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    HumanMatched,
    ZeroedInsertion,
}

/// Hypothesis-side scores with where each came from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoredSequence {
    pub scores: Vec<f64>,
    pub provenance: Vec<Provenance>,
}

/// Transfers reference scores onto hypothesis tokens following `ops`.
pub fn assign_scores(ops: &AlignmentOps, ref_scores: &[f64]) -> Result<ScoredSequence> {
    let mut scores = Vec::new();
    let mut provenance = Vec::new();
    for op in &ops.ops {
        match *op {
            EditOp::Match { ref_idx, .. } | EditOp::Substitute { ref_idx, .. } => {
                let s = ref_scores.get(ref_idx).ok_or_else(|| {
                    Error::InvalidArgument(format!(
                        "alignment references score {ref_idx} of {}",
                        ref_scores.len()
                    ))
                })?;
                scores.push(*s);
                provenance.push(Provenance::HumanMatched);
            }
            EditOp::Insert { .. } => {
                scores.push(0.0);
                provenance.push(Provenance::ZeroedInsertion);
            }
            EditOp::Delete { ref_idx } => {
                if ref_idx >= ref_scores.len() {
                    return Err(Error::InvalidArgument(format!(
                        "alignment deletes reference {ref_idx} of {}",
                        ref_scores.len()
                    )));
                }
            }
        }
    }
    let covered = ops
        .ops
        .iter()
        .filter(|op| !matches!(op, EditOp::Insert { .. }))
        .count();
    if covered != ref_scores.len() {
        return Err(Error::InvalidArgument(format!(
            "alignment covers {covered} reference tokens but {} scores were given",
            ref_scores.len()
        )));
    }
    Ok(ScoredSequence { scores, provenance })
}

/// Flat phone-to-word map from per-word phone counts.
pub fn build_phone_word_map(phones_per_word: &[usize]) -> Result<Vec<usize>> {
    let mut map = Vec::with_capacity(phones_per_word.iter().sum());
    for (w, &count) in phones_per_word.iter().enumerate() {
        if count == 0 {
            return Err(Error::InvalidArgument(format!("word {w} has no phones")));
        }
        map.extend(std::iter::repeat_n(w, count));
    }
    Ok(map)
}

/// `(S + D + I) / |ref|`. An empty reference yields `|hyp|` by convention.
pub fn word_error_rate<T: PartialEq>(hyp: &[T], reference: &[T]) -> f64 {
    let cost = align(hyp, reference).cost();
    if reference.is_empty() {
        return hyp.len() as f64;
    }
    cost as f64 / reference.len() as f64
}
