//! Easy-to-hard task scheduling between the read-aloud view and the
//! transcription view of each utterance.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::aspects::AspectTargets;
use crate::ctc_gop::gop_features;
use crate::error::{Error, Result};
use crate::model::ModelInputs;
use crate::numerics::Tensor;
use crate::syncorpus::UtteranceRecord;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskView {
    /// Features scored against the reference text.
    Easy,
    /// Features scored against the recognised words.
    Hard,
}

/// Probability of drawing the hard task at iteration `tau` of `total`.
pub fn schedule_prob(tau: usize, total: usize) -> Result<f64> {
    if total == 0 {
        return Err(Error::InvalidArgument("schedule needs at least one iteration".into()));
    }
    if tau > total {
        return Err(Error::InvalidArgument(format!("iteration {tau} beyond {total}")));
    }
    Ok(tau as f64 / total as f64)
}

#[derive(Clone, Debug)]
pub struct CurriculumState {
    tau: usize,
    total: usize,
    rng: ChaCha8Rng,
}

impl CurriculumState {
    pub fn new(total: usize, seed: u64) -> Result<Self> {
        Self::at(0, total, seed)
    }

    /// State positioned at iteration `tau`.
    pub fn at(tau: usize, total: usize, seed: u64) -> Result<Self> {
        schedule_prob(tau, total)?;
        Ok(Self {
            tau,
            total,
            rng: ChaCha8Rng::seed_from_u64(seed),
        })
    }

    pub fn tau(&self) -> usize {
        self.tau
    }

    pub fn total(&self) -> usize {
        self.total
    }

    pub fn hard_prob(&self) -> f64 {
        self.tau as f64 / self.total as f64
    }

    /// Draws the task for the current iteration and advances it (saturating
    /// at `total`).
    pub fn sample_task(&mut self) -> TaskView {
        let p = self.hard_prob();
        let u: f64 = self.rng.gen();
        self.tau = (self.tau + 1).min(self.total);
        if u < p {
            TaskView::Hard
        } else {
            TaskView::Easy
        }
    }
}

/// Model inputs and normalised targets of one utterance under one view.
#[derive(Clone, Debug, PartialEq)]
pub struct ViewSample {
    pub utt_id: String,
    pub view: TaskView,
    pub inputs: ModelInputs,
    pub targets: AspectTargets,
    /// Normalised utterance accuracy, the class label for the ordinal
    /// regulariser.
    pub label: f64,
}

/// Builds model inputs and targets from the requested view of a record.
pub fn select_view(record: &UtteranceRecord, view: TaskView) -> Result<ViewSample> {
    let grid = record.grid()?;
    let (phones, words, map, targets) = match view {
        TaskView::Easy => (
            &record.ref_phones,
            &record.ref_words,
            &record.phone_to_word,
            record.reference_targets(),
        ),
        TaskView::Hard => {
            if record.hyp_words.is_empty() || record.hyp_phones.is_empty() {
                return Err(Error::MissingView(format!("{} has no transcription", record.utt_id)));
            }
            (
                &record.hyp_phones,
                &record.hyp_words,
                &record.hyp_phone_to_word,
                record.transcribed_targets(),
            )
        }
    };
    let gop = gop_features(&grid, phones)?;
    let ssl = record.ssl_concat();
    let inputs = ModelInputs::new(
        gop.to_tensor(),
        phones.clone(),
        words.clone(),
        map.clone(),
        Tensor::matrix(1, ssl.len(), ssl),
    )?;
    Ok(ViewSample {
        utt_id: record.utt_id.clone(),
        view,
        inputs,
        label: targets.utt[0],
        targets,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_endpoints() {
        assert_eq!(schedule_prob(0, 10).unwrap(), 0.0);
        assert_eq!(schedule_prob(10, 10).unwrap(), 1.0);
        assert_eq!(schedule_prob(5, 10).unwrap(), 0.5);
        assert!(schedule_prob(0, 0).is_err());
        assert!(schedule_prob(11, 10).is_err());
    }

    #[test]
    fn extremes_are_deterministic() {
        let mut s = CurriculumState::new(100, 7).unwrap();
        assert_eq!(s.sample_task(), TaskView::Easy);
        let mut s = CurriculumState::at(100, 100, 7).unwrap();
        for _ in 0..50 {
            assert_eq!(s.sample_task(), TaskView::Hard);
        }
        assert_eq!(s.tau(), 100);
    }
}
