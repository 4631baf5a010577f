//! CTC sequence likelihoods and alignment-free goodness-of-pronunciation
//! features.
//!
//! A canonical phone sequence is scored against every single-phone
//! deviation of itself (each substitution by another inventory phone, and
//! deletion). Each feature is the log-likelihood ratio between the
//! canonical transcript and one deviation, summed over all CTC alignments,
//! so no phone timestamps are needed.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// Magnitude bound on a feature when one side of the ratio is infeasible
/// for the number of frames.
pub const GOP_CAP: f64 = 50.0;

/// Frames x (phones + blank) log-probabilities. The blank is the last symbol.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogPosteriorGrid {
    frames: usize,
    symbols: usize,
    data: Vec<f64>,
}

impl LogPosteriorGrid {
    /// Builds a grid from per-frame log-probability rows. Every row must
    /// exponentiate and sum to one within 1e-9.
    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let frames = rows.len();
        if frames == 0 {
            return Err(Error::InvalidArgument("posterior grid has no frames".into()));
        }
        let symbols = rows[0].len();
        if symbols < 2 {
            return Err(Error::InvalidArgument(
                "posterior grid needs at least one phone and the blank".into(),
            ));
        }
        for (t, row) in rows.iter().enumerate() {
            if row.len() != symbols {
                return Err(Error::Shape(format!("frame {t} has {} symbols", row.len())));
            }
            let mass: f64 = row.iter().map(|v| v.exp()).sum();
            if (mass - 1.0).abs() > 1e-9 || row.iter().any(|v| v.is_nan()) {
                return Err(Error::InvalidArgument(format!(
                    "frame {t} posteriors sum to {mass}"
                )));
            }
        }
        Ok(Self {
            frames,
            symbols,
            data: rows.concat(),
        })
    }

    /// Builds a grid from linear probabilities.
    pub fn from_probs(rows: &[Vec<f64>]) -> Result<Self> {
        Self::from_rows(
            rows.iter()
                .map(|r| r.iter().map(|p| p.ln()).collect())
                .collect(),
        )
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    /// Number of phones, excluding the blank.
    pub fn inventory_size(&self) -> usize {
        self.symbols - 1
    }

    pub fn blank(&self) -> usize {
        self.symbols - 1
    }

    #[inline]
    pub fn log_prob(&self, frame: usize, symbol: usize) -> f64 {
        self.data[frame * self.symbols + symbol]
    }

    pub fn row(&self, frame: usize) -> &[f64] {
        &self.data[frame * self.symbols..(frame + 1) * self.symbols]
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        self.data.chunks(self.symbols).map(<[f64]>::to_vec).collect()
    }

    fn check_labels(&self, labels: &[usize]) -> Result<()> {
        match labels.iter().find(|&&l| l >= self.inventory_size()) {
            Some(&symbol) => Err(Error::UnknownSymbol {
                symbol,
                inventory: self.inventory_size(),
            }),
            None => Ok(()),
        }
    }
}

#[inline]
fn log_add(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let (hi, lo) = if a > b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}

/// Forward table over the blank-augmented label sequence, `frames x (2U+1)`.
///
/// When `prefix` is given as `(table, width, keep)`, states `< keep` are
/// copied from a table computed for a sequence that shares those states.
fn forward_table(
    grid: &LogPosteriorGrid,
    labels: &[usize],
    prefix: Option<(&[f64], usize, usize)>,
) -> (Vec<f64>, usize) {
    let blank = grid.blank();
    let width = 2 * labels.len() + 1;
    let ext = |s: usize| if s % 2 == 0 { blank } else { labels[s / 2] };
    let keep = prefix.map_or(0, |(_, _, k)| k.min(width));
    let mut alpha = vec![f64::NEG_INFINITY; grid.frames() * width];
    if let Some((table, w, _)) = prefix {
        for t in 0..grid.frames() {
            alpha[t * width..t * width + keep].copy_from_slice(&table[t * w..t * w + keep]);
        }
    }
    for s in keep..width.min(2) {
        alpha[s] = grid.log_prob(0, ext(s));
    }
    for t in 1..grid.frames() {
        let (prev, cur) = alpha.split_at_mut(t * width);
        let prev = &prev[(t - 1) * width..];
        for s in keep..width {
            let sym = ext(s);
            let mut acc = prev[s];
            if s >= 1 {
                acc = log_add(acc, prev[s - 1]);
            }
            if s >= 2 && sym != blank && sym != ext(s - 2) {
                acc = log_add(acc, prev[s - 2]);
            }
            cur[s] = if acc == f64::NEG_INFINITY {
                acc
            } else {
                acc + grid.log_prob(t, sym)
            };
        }
    }
    (alpha, width)
}

fn total_from_table(grid: &LogPosteriorGrid, table: &[f64], width: usize) -> f64 {
    let last = &table[(grid.frames() - 1) * width..];
    if width == 1 {
        last[0]
    } else {
        log_add(last[width - 1], last[width - 2])
    }
}

/// Log of the total probability of all CTC alignments that collapse to
/// `labels`. Returns negative infinity when the sequence cannot fit in the
/// available frames.
pub fn ctc_log_likelihood(grid: &LogPosteriorGrid, labels: &[usize]) -> Result<f64> {
    grid.check_labels(labels)?;
    let (table, width) = forward_table(grid, labels, None);
    Ok(total_from_table(grid, &table, width))
}

/// Per-phone likelihood-ratio features, `N x (P + 2)`.
///
/// Column `q < P` holds the ratio against substituting the phone by `q`,
/// column `P` the ratio against deleting it, and column `P + 1` the GOP
/// scalar (ratio against the most likely deviation).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GopFeatureMatrix {
    phones: usize,
    dim: usize,
    data: Vec<f64>,
}

impl GopFeatureMatrix {
    pub fn phones(&self) -> usize {
        self.phones
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, n: usize) -> &[f64] {
        &self.data[n * self.dim..(n + 1) * self.dim]
    }

    pub fn substitution(&self, n: usize, q: usize) -> f64 {
        self.row(n)[q]
    }

    pub fn deletion(&self, n: usize) -> f64 {
        self.row(n)[self.dim - 2]
    }

    pub fn gop(&self, n: usize) -> f64 {
        self.row(n)[self.dim - 1]
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        self.data.chunks(self.dim).map(<[f64]>::to_vec).collect()
    }

    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let phones = rows.len();
        let dim = rows.first().map_or(0, Vec::len);
        if phones == 0 || dim < 3 || rows.iter().any(|r| r.len() != dim) {
            return Err(Error::Shape("malformed GOP feature rows".into()));
        }
        Ok(Self {
            phones,
            dim,
            data: rows.concat(),
        })
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::matrix(self.phones, self.dim, self.data.clone())
    }

    /// Mean of each column over phones.
    pub fn column_means(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        for r in self.data.chunks(self.dim) {
            for (o, v) in out.iter_mut().zip(r) {
                *o += v;
            }
        }
        out.iter_mut().for_each(|v| *v /= self.phones as f64);
        out
    }
}

fn ratio(canonical: f64, deviated: f64) -> f64 {
    match (canonical.is_finite(), deviated.is_finite()) {
        (true, true) => (canonical - deviated).clamp(-GOP_CAP, GOP_CAP),
        (true, false) => GOP_CAP,
        (false, true) => -GOP_CAP,
        (false, false) => 0.0,
    }
}

/// CTC goodness-of-pronunciation features of each canonical phone.
pub fn gop_features(grid: &LogPosteriorGrid, canonical: &[usize]) -> Result<GopFeatureMatrix> {
    if canonical.is_empty() {
        return Err(Error::InvalidArgument("empty canonical phone sequence".into()));
    }
    grid.check_labels(canonical)?;
    let p = grid.inventory_size();
    let dim = p + 2;
    let (table, width) = forward_table(grid, canonical, None);
    let base = total_from_table(grid, &table, width);
    let mut data = Vec::with_capacity(canonical.len() * dim);
    let mut deviated = canonical.to_vec();
    for n in 0..canonical.len() {
        // states up to the blank preceding label n are unaffected by edits at n
        let prefix = Some((table.as_slice(), width, 2 * n + 1));
        let mut row = vec![0.0; dim];
        for q in 0..p {
            if q == canonical[n] {
                continue;
            }
            deviated[n] = q;
            let (t, w) = forward_table(grid, &deviated, prefix);
            row[q] = ratio(base, total_from_table(grid, &t, w));
        }
        deviated[n] = canonical[n];
        let mut removed = canonical.to_vec();
        removed.remove(n);
        let (t, w) = forward_table(grid, &removed, prefix);
        row[p] = ratio(base, total_from_table(grid, &t, w));
        row[p + 1] = (0..=p)
            .filter(|&q| q != canonical[n])
            .map(|q| row[q])
            .fold(f64::INFINITY, f64::min);
        data.extend(row);
    }
    Ok(GopFeatureMatrix {
        phones: canonical.len(),
        dim,
        data,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn grid(rows: &[Vec<f64>]) -> LogPosteriorGrid {
        LogPosteriorGrid::from_probs(rows).unwrap()
    }

    #[test]
    fn single_frame_single_label() {
        let g = grid(&[vec![0.6, 0.4]]);
        assert_abs_diff_eq!(ctc_log_likelihood(&g, &[0]).unwrap(), 0.6f64.ln(), epsilon = 1e-15);
    }

    #[test]
    fn two_frames_three_alignments() {
        let g = grid(&[vec![0.6, 0.4], vec![0.5, 0.5]]);
        assert_abs_diff_eq!(ctc_log_likelihood(&g, &[0]).unwrap(), 0.8f64.ln(), epsilon = 1e-12);
    }

    #[test]
    fn repeat_needs_separating_blank() {
        let g = grid(&[vec![0.6, 0.4], vec![0.5, 0.5]]);
        assert_eq!(ctc_log_likelihood(&g, &[0, 0]).unwrap(), f64::NEG_INFINITY);
        let g3 = grid(&[vec![0.6, 0.4], vec![0.5, 0.5], vec![0.7, 0.3]]);
        let l = ctc_log_likelihood(&g3, &[0, 0]).unwrap();
        assert_abs_diff_eq!(l, (0.6f64 * 0.5 * 0.7).ln(), epsilon = 1e-12);
    }

    #[test]
    fn empty_labels_is_all_blank() {
        let g = grid(&[vec![0.6, 0.4], vec![0.5, 0.5]]);
        assert_abs_diff_eq!(ctc_log_likelihood(&g, &[]).unwrap(), 0.2f64.ln(), epsilon = 1e-12);
    }

    #[test]
    fn unknown_symbol_rejected() {
        let g = grid(&[vec![0.6, 0.4]]);
        assert!(matches!(
            ctc_log_likelihood(&g, &[1]),
            Err(Error::UnknownSymbol { symbol: 1, .. })
        ));
    }

    #[test]
    fn bad_rows_rejected() {
        assert!(LogPosteriorGrid::from_probs(&[vec![0.5, 0.4]]).is_err());
        assert!(LogPosteriorGrid::from_rows(vec![]).is_err());
    }

    #[test]
    fn worked_gop_example() {
        // inventory {a, b}, two frames, p(a)=0.7 p(b)=0.2 p(blank)=0.1
        let g = grid(&[vec![0.7, 0.2, 0.1], vec![0.7, 0.2, 0.1]]);
        let f = gop_features(&g, &[0]).unwrap();
        assert_eq!(f.dim(), 4);
        assert_eq!(f.substitution(0, 0), 0.0);
        assert_abs_diff_eq!(f.substitution(0, 1), (0.63f64 / 0.08).ln(), epsilon = 1e-12);
        assert_abs_diff_eq!(f.deletion(0), (0.63f64 / 0.01).ln(), epsilon = 1e-12);
        assert_abs_diff_eq!(f.gop(0), (0.63f64 / 0.08).ln(), epsilon = 1e-12);
    }

    #[test]
    fn prefix_reuse_matches_full_recompute() {
        let rows: Vec<Vec<f64>> = (0..9)
            .map(|t| {
                let a = 0.1 + 0.05 * (t % 4) as f64;
                let b = 0.2 + 0.03 * (t % 3) as f64;
                let c = 0.15;
                vec![a, b, c, 1.0 - a - b - c]
            })
            .collect();
        let g = grid(&rows);
        let canon = [0, 2, 1, 2];
        let f = gop_features(&g, &canon).unwrap();
        let base = ctc_log_likelihood(&g, &canon).unwrap();
        for n in 0..canon.len() {
            for q in 0..3 {
                let mut dev = canon.to_vec();
                dev[n] = q;
                let expect = ratio(base, ctc_log_likelihood(&g, &dev).unwrap());
                assert_abs_diff_eq!(f.substitution(n, q), expect, epsilon = 1e-10);
            }
            let mut del = canon.to_vec();
            del.remove(n);
            let expect = ratio(base, ctc_log_likelihood(&g, &del).unwrap());
            assert_abs_diff_eq!(f.deletion(n), expect, epsilon = 1e-10);
        }
    }

    #[test]
    fn empty_canonical_rejected() {
        let g = grid(&[vec![0.6, 0.4]]);
        assert!(gop_features(&g, &[]).is_err());
    }
}
