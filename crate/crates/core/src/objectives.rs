//! Multi-task regression loss and the contrastive ordinal regulariser.

use serde::{Deserialize, Serialize};

use crate::aspects::{Aspect, AspectTargets, Granularity};
use crate::error::{Error, Result};
use crate::model::ForwardOutput;
use crate::numerics::{Graph, Tensor, Var};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossWeights {
    /// Phone, word, utterance.
    pub granularity: [f64; 3],
    pub diversity: f64,
    pub tightness: f64,
    pub cono: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            granularity: [1.0; 3],
            diversity: 1.0,
            tightness: 1.0,
            cono: 0.1,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = self
            .granularity
            .iter()
            .chain([&self.diversity, &self.tightness, &self.cono]);
        for w in all {
            if !(w.is_finite() && *w >= 0.0) {
                return Err(Error::Config(format!("loss weights must be nonnegative, got {w}")));
            }
        }
        Ok(())
    }
}

/// Predicted score column with its targets and validity mask.
#[derive(Clone, Debug)]
pub struct ScoredColumn {
    /// `[L, 1]` predictions.
    pub pred: Var,
    pub target: Vec<f64>,
    pub mask: Vec<bool>,
}

impl ScoredColumn {
    pub fn valid(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }
}

/// Per-aspect prediction columns for a batch of utterances.
#[derive(Clone, Debug, Default)]
pub struct AspectPredictions {
    pub columns: [Vec<ScoredColumn>; 9],
}

impl AspectPredictions {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds one utterance; targets cover only its valid positions.
    pub fn push(&mut self, out: &ForwardOutput, targets: &AspectTargets) -> Result<()> {
        for (aspect, pred) in Aspect::ALL.into_iter().zip(out.columns()) {
            let mask = match aspect.granularity() {
                Granularity::Phone => out.phone_mask.flags().to_vec(),
                Granularity::Word => out.word_mask.flags().to_vec(),
                Granularity::Utterance => vec![true],
            };
            let valid = mask.iter().filter(|&&m| m).count();
            let mut target = targets.values(aspect);
            if target.len() != valid {
                return Err(Error::Shape(format!(
                    "{} has {} targets for {valid} positions",
                    aspect.name(),
                    target.len()
                )));
            }
            target.resize(mask.len(), 0.0);
            self.columns[aspect.index()].push(ScoredColumn { pred, target, mask });
        }
        Ok(())
    }
}

/// Multi-task loss plus aspects that had nothing to score.
#[derive(Clone, Debug)]
pub struct ApaLoss {
    pub value: Var,
    pub empty_aspects: Vec<Aspect>,
}

/// Squared error summed over valid positions, and the number of them.
fn masked_sse(g: &mut Graph, col: &ScoredColumn) -> Result<(Option<Var>, usize)> {
    let n = col.valid();
    if n == 0 {
        return Ok((None, 0));
    }
    let rows = col.mask.len();
    let target = g.constant(Tensor::matrix(rows, 1, col.target.clone()));
    let diff = g.sub(col.pred, target)?;
    let diff = if n < rows {
        g.mask_rows(diff, col.mask.clone())?
    } else {
        diff
    };
    let sq = g.mul(diff, diff)?;
    Ok((Some(g.sum(sq)), n))
}

fn add_opt(g: &mut Graph, acc: Option<Var>, v: Var) -> Result<Option<Var>> {
    Ok(Some(match acc {
        Some(a) => g.add(a, v)?,
        None => v,
    }))
}

/// Sum over granularities of `λ_g` times the mean of per-aspect masked MSEs.
pub fn apa_loss(g: &mut Graph, preds: &AspectPredictions, weights: &LossWeights) -> Result<ApaLoss> {
    let mut total = None;
    let mut empty_aspects = Vec::new();
    for gran in Granularity::ALL {
        let aspects = gran.aspects();
        let mut acc = None;
        for &aspect in aspects {
            let mut sse = None;
            let mut count = 0;
            for col in &preds.columns[aspect.index()] {
                let (s, n) = masked_sse(g, col)?;
                if let Some(s) = s {
                    sse = add_opt(g, sse, s)?;
                    count += n;
                }
            }
            match sse {
                Some(s) => {
                    let mse = g.scale(s, 1.0 / count as f64);
                    acc = add_opt(g, acc, mse)?;
                }
                None => empty_aspects.push(aspect),
            }
        }
        if let Some(a) = acc {
            let term = g.scale(a, weights.granularity[gran.index()] / aspects.len() as f64);
            total = add_opt(g, total, term)?;
        }
    }
    let value = match total {
        Some(t) => t,
        None => g.constant(Tensor::scalar(0.0)),
    };
    Ok(ApaLoss { value, empty_aspects })
}

/// Grouping of a batch into score classes, sorted by score.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoreClasses {
    pub values: Vec<f64>,
    pub member_of: Vec<usize>,
}

impl ScoreClasses {
    pub fn new(scores: &[f64]) -> Result<Self> {
        if scores.iter().any(|s| !s.is_finite()) {
            return Err(Error::InvalidArgument("scores must be finite".into()));
        }
        let mut values: Vec<f64> = scores.to_vec();
        values.sort_by(f64::total_cmp);
        values.dedup();
        let member_of = scores
            .iter()
            .map(|s| values.iter().position(|v| v == s).expect("score present"))
            .collect();
        Ok(Self { values, member_of })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

fn check_batch(g: &Graph, z: Var, scores: &[f64]) -> Result<()> {
    let rows = g.value(z).rows();
    if scores.is_empty() || rows != scores.len() {
        return Err(Error::Shape(format!(
            "embedding batch has {rows} rows and {} scores",
            scores.len()
        )));
    }
    Ok(())
}

fn centroids(g: &mut Graph, z: Var, classes: &ScoreClasses) -> Result<Var> {
    let seg = classes.member_of.iter().map(|&c| Some(c)).collect();
    g.segment_mean(z, seg, classes.len())
}

/// Negative score-gap-weighted mean distance between class centroids.
///
/// `z` is `[L, d]`, one embedding per utterance. Returns 0 with fewer than
/// two classes.
pub fn cono_diversity(g: &mut Graph, z: Var, scores: &[f64]) -> Result<Var> {
    check_batch(g, z, scores)?;
    let classes = ScoreClasses::new(scores)?;
    let k = classes.len();
    if k < 2 {
        // keep the dependency on z so gradients are defined (and zero)
        let s = g.sum(z);
        return Ok(g.scale(s, 0.0));
    }
    let (mut left, mut right, mut gaps) = (Vec::new(), Vec::new(), Vec::new());
    for i in 0..k {
        for j in 0..k {
            if i != j {
                left.push(i);
                right.push(j);
                gaps.push((classes.values[i] - classes.values[j]).abs());
            }
        }
    }
    let c = centroids(g, z, &classes)?;
    let a = g.gather_rows(c, left)?;
    let b = g.gather_rows(c, right)?;
    let diff = g.sub(a, b)?;
    let dist = g.row_norms(diff);
    let pairs = gaps.len();
    let gaps = g.constant(Tensor::matrix(pairs, 1, gaps));
    let weighted = g.mul(dist, gaps)?;
    let total = g.sum(weighted);
    Ok(g.scale(total, -1.0 / pairs as f64))
}

/// Mean distance of each embedding to its class centroid.
pub fn cono_tightness(g: &mut Graph, z: Var, scores: &[f64]) -> Result<Var> {
    check_batch(g, z, scores)?;
    let classes = ScoreClasses::new(scores)?;
    let c = centroids(g, z, &classes)?;
    let own = g.gather_rows(c, classes.member_of.clone())?;
    let diff = g.sub(z, own)?;
    let dist = g.row_norms(diff);
    Ok(g.mean(dist))
}

/// Loss terms of one step.
#[derive(Clone, Debug)]
pub struct TotalLoss {
    pub total: Var,
    pub apa: Var,
    pub diversity: Option<Var>,
    pub tightness: Option<Var>,
    pub empty_aspects: Vec<Aspect>,
}

/// `apa + λ_CONO (λ_d diversity + λ_t tightness)`; the regulariser is
/// skipped entirely when `λ_CONO = 0`.
pub fn total_loss(
    g: &mut Graph,
    preds: &AspectPredictions,
    z: Var,
    scores: &[f64],
    weights: &LossWeights,
) -> Result<TotalLoss> {
    weights.validate()?;
    let apa = apa_loss(g, preds, weights)?;
    if weights.cono == 0.0 {
        return Ok(TotalLoss {
            total: apa.value,
            apa: apa.value,
            diversity: None,
            tightness: None,
            empty_aspects: apa.empty_aspects,
        });
    }
    let div = cono_diversity(g, z, scores)?;
    let tight = cono_tightness(g, z, scores)?;
    let d = g.scale(div, weights.diversity);
    let t = g.scale(tight, weights.tightness);
    let reg = g.add(d, t)?;
    let reg = g.scale(reg, weights.cono);
    let total = g.add(apa.value, reg)?;
    Ok(TotalLoss {
        total,
        apa: apa.value,
        diversity: Some(div),
        tightness: Some(tight),
        empty_aspects: apa.empty_aspects,
    })
}
