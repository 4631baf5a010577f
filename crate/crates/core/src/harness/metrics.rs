//! Correlation and error metrics, per-aspect reports and trial aggregation.

use serde::{Deserialize, Serialize};

use crate::aspects::{normalize, raw_max, Aspect, AspectTargets, Granularity};
use crate::error::{Error, Result};
use crate::model::Prediction;
use crate::syncorpus::Scores;

/// Sample Pearson correlation; `None` when either series has no variance
/// or fewer than two points.
pub fn pcc(x: &[f64], y: &[f64]) -> Option<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return None;
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (da, db) = (a - mx, b - my);
        sxy += da * db;
        sxx += da * da;
        syy += db * db;
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

pub fn mse(x: &[f64], y: &[f64]) -> f64 {
    assert_eq!(x.len(), y.len(), "mse needs equal lengths");
    if x.is_empty() {
        return 0.0;
    }
    x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / x.len() as f64
}

/// Validates raw scores and maps them onto the 0-2 training scale.
pub fn normalize_scores(scores: &Scores) -> Result<AspectTargets> {
    let check = |g: Granularity, v: &[f64]| -> Result<()> {
        match v.iter().find(|x| !(0.0..=raw_max(g)).contains(*x)) {
            Some(bad) => Err(Error::InvalidArgument(format!("{g:?} score {bad} out of range"))),
            None => Ok(()),
        }
    };
    check(Granularity::Phone, &scores.phone)?;
    let w = &scores.word;
    for v in [&w.acc, &w.stress, &w.total] {
        check(Granularity::Word, v)?;
    }
    let utt = scores.utt.as_array();
    check(Granularity::Utterance, &utt)?;
    let word = |v: &Vec<f64>| v.iter().map(|&x| normalize(Granularity::Word, x)).collect();
    Ok(AspectTargets {
        phone: scores.phone.clone(),
        word: [word(&w.acc), word(&w.stress), word(&w.total)],
        utt: utt.map(|x| normalize(Granularity::Utterance, x)),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AspectMetric {
    pub aspect: Aspect,
    pub pcc: Option<f64>,
    pub mse: f64,
    pub count: usize,
}

/// Metrics of one model on one evaluation set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub aspects: Vec<AspectMetric>,
}

impl EvalReport {
    /// Scores predictions against targets, pooling positions across the set.
    pub fn from_predictions(preds: &[Prediction], targets: &[AspectTargets]) -> Result<Self> {
        if preds.len() != targets.len() {
            return Err(Error::Shape(format!(
                "{} predictions for {} target sets",
                preds.len(),
                targets.len()
            )));
        }
        let mut aspects = Vec::with_capacity(9);
        for aspect in Aspect::ALL {
            let (mut p, mut t) = (Vec::new(), Vec::new());
            for (pr, tg) in preds.iter().zip(targets) {
                let (a, b) = (pr.values(aspect), tg.values(aspect));
                if a.len() != b.len() {
                    return Err(Error::Shape(format!("{} length mismatch", aspect.name())));
                }
                p.extend(a);
                t.extend(b);
            }
            aspects.push(AspectMetric {
                aspect,
                pcc: pcc(&p, &t),
                mse: mse(&p, &t),
                count: p.len(),
            });
        }
        Ok(Self { aspects })
    }

    pub fn get(&self, aspect: Aspect) -> &AspectMetric {
        &self.aspects[aspect.index()]
    }

    pub fn phone_mse(&self) -> f64 {
        self.get(Aspect::PhoneAccuracy).mse
    }

    /// Aligned plain-text table.
    pub fn to_text(&self) -> String {
        let mut s = format!("{:<18} {:>8} {:>8} {:>7}\n", "aspect", "pcc", "mse", "n");
        for m in &self.aspects {
            let pcc = m.pcc.map_or("-".to_string(), |v| format!("{v:.4}"));
            s += &format!("{:<18} {:>8} {:>8.4} {:>7}\n", m.aspect.name(), pcc, m.mse, m.count);
        }
        s
    }
}

/// Mean and sample standard deviation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub std: f64,
    pub n: usize,
}

impl Summary {
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let n = values.len();
        let mean = values.iter().sum::<f64>() / n as f64;
        let std = if n > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        } else {
            0.0
        };
        Some(Self { mean, std, n })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AspectSummary {
    pub aspect: Aspect,
    pub pcc: Option<Summary>,
    pub mse: Summary,
}

/// Per-aspect results over independent trials (each at its best epoch).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub trials: usize,
    pub best_epochs: Vec<usize>,
    pub aspects: Vec<AspectSummary>,
}

impl MetricReport {
    pub fn aggregate(reports: &[EvalReport], best_epochs: Vec<usize>) -> Result<Self> {
        if reports.is_empty() {
            return Err(Error::InvalidArgument("no trials to aggregate".into()));
        }
        let aspects = Aspect::ALL
            .iter()
            .map(|&aspect| {
                let pccs: Vec<f64> = reports.iter().filter_map(|r| r.get(aspect).pcc).collect();
                let mses: Vec<f64> = reports.iter().map(|r| r.get(aspect).mse).collect();
                AspectSummary {
                    aspect,
                    pcc: Summary::of(&pccs),
                    mse: Summary::of(&mses).expect("at least one trial"),
                }
            })
            .collect();
        Ok(Self {
            trials: reports.len(),
            best_epochs,
            aspects,
        })
    }

    pub fn get(&self, aspect: Aspect) -> &AspectSummary {
        &self.aspects[aspect.index()]
    }

    pub fn to_text(&self) -> String {
        let mut s = format!("{:<18} {:>17} {:>17}\n", "aspect", "pcc", "mse");
        for a in &self.aspects {
            let pcc = a
                .pcc
                .map_or("-".to_string(), |p| format!("{:.4} ± {:.4}", p.mean, p.std));
            let mse = format!("{:.4} ± {:.4}", a.mse.mean, a.mse.std);
            s += &format!("{:<18} {:>17} {:>17}\n", a.aspect.name(), pcc, mse);
        }
        s
    }
}
