//! Training loop, evaluation and multi-trial experiments.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::curriculum::{select_view, CurriculumState, TaskView, ViewSample};
use crate::error::{Error, Result};
use crate::harness::checkpoint;
use crate::harness::config::TrainConfig;
use crate::harness::metrics::{EvalReport, MetricReport};
use crate::harness::optim::Adam;
use crate::model::{HippoModel, Prediction};
use crate::numerics::{Bindings, Graph, Tensor};
use crate::objectives::{total_loss, AspectPredictions, LossWeights, TotalLoss};
use crate::syncorpus::UtteranceRecord;

/// Both views of every utterance, with features precomputed.
#[derive(Clone, Debug, Default)]
pub struct Dataset {
    pub easy: Vec<ViewSample>,
    pub hard: Vec<ViewSample>,
}

impl Dataset {
    pub fn build(records: &[UtteranceRecord]) -> Result<Self> {
        let pairs: Vec<(ViewSample, ViewSample)> = records
            .par_iter()
            .map(|r| Ok((select_view(r, TaskView::Easy)?, select_view(r, TaskView::Hard)?)))
            .collect::<Result<_>>()?;
        let (easy, hard) = pairs.into_iter().unzip();
        Ok(Self { easy, hard })
    }

    pub fn len(&self) -> usize {
        self.easy.len()
    }

    pub fn is_empty(&self) -> bool {
        self.easy.is_empty()
    }

    pub fn view(&self, view: TaskView) -> &[ViewSample] {
        match view {
            TaskView::Easy => &self.easy,
            TaskView::Hard => &self.hard,
        }
    }

    pub fn subset(&self, indices: &[usize]) -> Self {
        Self {
            easy: indices.iter().map(|&i| self.easy[i].clone()).collect(),
            hard: indices.iter().map(|&i| self.hard[i].clone()).collect(),
        }
    }
}

/// Shuffled train / held-out index split.
pub fn split_indices(n: usize, holdout: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let test = ((n as f64) * holdout).round() as usize;
    let train = idx.split_off(test);
    let mut test = idx;
    test.sort_unstable();
    let mut train = train;
    train.sort_unstable();
    (train, test)
}

pub fn predict_all(model: &HippoModel, samples: &[ViewSample]) -> Result<Vec<Prediction>> {
    samples.par_iter().map(|s| model.predict(&s.inputs)).collect()
}

pub fn evaluate_samples(model: &HippoModel, samples: &[ViewSample]) -> Result<EvalReport> {
    let preds = predict_all(model, samples)?;
    let targets: Vec<_> = samples.iter().map(|s| s.targets.clone()).collect();
    EvalReport::from_predictions(&preds, &targets)
}

/// Scores a model on one view of a corpus.
pub fn evaluate(model: &HippoModel, records: &[UtteranceRecord], view: TaskView) -> Result<EvalReport> {
    let samples: Vec<ViewSample> = records
        .par_iter()
        .map(|r| select_view(r, view))
        .collect::<Result<_>>()?;
    evaluate_samples(model, &samples)
}

/// Builds the loss of one batch on `g`. With `unit_embeddings` each
/// utterance embedding is scaled to unit length before the ordinal
/// regulariser sees it.
pub fn batch_loss(
    model: &HippoModel,
    g: &mut Graph,
    p: &Bindings,
    batch: &[&ViewSample],
    weights: &LossWeights,
    unit_embeddings: bool,
) -> Result<TotalLoss> {
    let mut preds = AspectPredictions::new();
    let mut zs = Vec::with_capacity(batch.len());
    let mut labels = Vec::with_capacity(batch.len());
    for s in batch {
        let out = model.forward(g, p, &s.inputs)?;
        preds.push(&out, &s.targets)?;
        zs.push(out.z);
        labels.push(s.label);
    }
    let mut z = g.concat_rows(&zs)?;
    if unit_embeddings && weights.cono > 0.0 {
        let d = model.config.width;
        let gain = g.constant(Tensor::filled(&[d], 1.0 / (d as f64).sqrt()));
        z = g.rms_norm(z, gain)?;
    }
    total_loss(g, &preds, z, &labels, weights)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub epoch: usize,
    pub step: usize,
    pub view: Option<TaskView>,
    pub loss: f64,
    pub apa: f64,
    pub diversity: Option<f64>,
    pub tightness: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_apa: f64,
    pub steps: usize,
    pub hard_fraction: f64,
    pub heldout: Option<EvalReport>,
}

#[derive(Clone, Debug)]
pub struct TrainResult {
    /// Parameters of the selected epoch.
    pub model: HippoModel,
    /// Parameters after the final epoch.
    pub last: HippoModel,
    /// 1-based.
    pub best_epoch: usize,
    pub epochs: Vec<EpochLog>,
}

impl TrainResult {
    pub fn best_report(&self) -> Option<&EvalReport> {
        self.epochs[self.best_epoch - 1].heldout.as_ref()
    }
}

struct Outputs {
    dir: std::path::PathBuf,
    epochs: BufWriter<File>,
    steps: BufWriter<File>,
}

impl Outputs {
    fn open(dir: &Path) -> Result<Self> {
        std::fs::create_dir_all(dir)?;
        Ok(Self {
            dir: dir.to_path_buf(),
            epochs: BufWriter::new(File::create(dir.join("metrics.jsonl"))?),
            steps: BufWriter::new(File::create(dir.join("steps.jsonl"))?),
        })
    }

    fn line<T: Serialize>(w: &mut BufWriter<File>, value: &T) -> Result<()> {
        serde_json::to_writer(&mut *w, value)?;
        w.write_all(b"\n")?;
        Ok(())
    }
}

/// One training run. The best epoch minimises held-out phone MSE; without
/// held-out data the final epoch is kept.
pub fn train(
    config: &TrainConfig,
    data: &Dataset,
    heldout: &[ViewSample],
    seed: u64,
    out_dir: Option<&Path>,
) -> Result<TrainResult> {
    config.validate()?;
    if data.is_empty() {
        return Err(Error::InvalidArgument("no training utterances".into()));
    }
    let weights = config.effective_weights();
    let mut model = HippoModel::new(config.model.clone(), seed)?;
    let mut adam = Adam::new(&model.params, config.learning_rate);
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5EED_0001);
    let n = data.len();
    let b = config.batch_size;
    let steps_per_epoch = if config.curriculum {
        n.div_ceil(b)
    } else {
        (2 * n).div_ceil(b)
    };
    let mut curriculum = CurriculumState::new(config.epochs * steps_per_epoch, seed ^ 0x5EED_0002)?;
    let union: Vec<&ViewSample> = data.easy.iter().chain(&data.hard).collect();

    let mut outputs = out_dir.map(Outputs::open).transpose()?;
    let mut epochs = Vec::with_capacity(config.epochs);
    let mut best: Option<(f64, usize, HippoModel)> = None;

    for epoch in 1..=config.epochs {
        let mut batches: Vec<(Option<TaskView>, Vec<&ViewSample>)> = Vec::with_capacity(steps_per_epoch);
        if config.curriculum {
            let mut order: Vec<usize> = (0..n).collect();
            order.shuffle(&mut shuffle_rng);
            for chunk in order.chunks(b) {
                let view = curriculum.sample_task();
                let samples = data.view(view);
                batches.push((Some(view), chunk.iter().map(|&i| &samples[i]).collect()));
            }
        } else {
            let mut order = union.clone();
            order.shuffle(&mut shuffle_rng);
            for chunk in order.chunks(b) {
                batches.push((None, chunk.to_vec()));
            }
        }

        let (mut loss_sum, mut apa_sum, mut hard) = (0.0, 0.0, 0usize);
        for (step, (view, batch)) in batches.iter().enumerate() {
            let mut g = Graph::new();
            let p = model.params.bind(&mut g);
            let loss = batch_loss(&model, &mut g, &p, batch, &weights, config.unit_embeddings)?;
            let value = g.value(loss.total).item();
            if !value.is_finite() {
                return Err(Error::NonFiniteLoss {
                    epoch,
                    batch: step,
                    utterances: batch.iter().map(|s| s.utt_id.clone()).collect(),
                });
            }
            g.backward(loss.total)?;
            let grads = p.grads(&g, &model.params);
            adam.step(&mut model.params, &grads)?;
            let log = StepLog {
                epoch,
                step,
                view: *view,
                loss: value,
                apa: g.value(loss.apa).item(),
                diversity: loss.diversity.map(|v| g.value(v).item()),
                tightness: loss.tightness.map(|v| g.value(v).item()),
            };
            loss_sum += log.loss;
            apa_sum += log.apa;
            hard += usize::from(*view == Some(TaskView::Hard));
            if let Some(o) = outputs.as_mut() {
                Outputs::line(&mut o.steps, &log)?;
            }
        }

        let heldout_report = if heldout.is_empty() {
            None
        } else {
            Some(evaluate_samples(&model, heldout)?)
        };
        let steps = batches.len();
        let log = EpochLog {
            epoch,
            train_loss: loss_sum / steps as f64,
            train_apa: apa_sum / steps as f64,
            steps,
            hard_fraction: hard as f64 / steps as f64,
            heldout: heldout_report,
        };
        let score = log.heldout.as_ref().map_or(0.0, EvalReport::phone_mse);
        if best.as_ref().is_none_or(|(s, _, _)| heldout.is_empty() || score < *s) {
            best = Some((score, epoch, model.clone()));
        }
        if let Some(o) = outputs.as_mut() {
            Outputs::line(&mut o.epochs, &log)?;
            o.epochs.flush()?;
            if config.checkpoint_every_epoch {
                checkpoint::save(&model, &o.dir.join(format!("checkpoint_epoch{epoch:03}.json")))?;
            }
        }
        epochs.push(log);
    }

    let (_, best_epoch, best_model) = best.expect("at least one epoch");
    if let Some(mut o) = outputs {
        o.steps.flush()?;
        checkpoint::save(&best_model, &o.dir.join("best.json"))?;
    }
    Ok(TrainResult {
        model: best_model,
        last: model,
        best_epoch,
        epochs,
    })
}

#[derive(Clone, Debug)]
pub struct Experiment {
    pub trials: Vec<TrainResult>,
    pub report: MetricReport,
}

/// Splits the corpus once, then trains `config.trials` seeds and
/// aggregates their best-epoch held-out metrics.
pub fn run_experiment(config: &TrainConfig, records: &[UtteranceRecord]) -> Result<Experiment> {
    config.validate()?;
    let data = Dataset::build(records)?;
    let (train_idx, test_idx) = split_indices(data.len(), config.holdout, config.split_seed);
    if test_idx.is_empty() {
        return Err(Error::Config("holdout split is empty".into()));
    }
    let train_set = data.subset(&train_idx);
    let test_set = data.subset(&test_idx);
    let heldout = test_set.view(config.eval_view);
    let mut trials = Vec::with_capacity(config.trials);
    for k in 0..config.trials {
        let dir = config.out_dir.as_ref().map(|d| d.join(format!("trial{k}")));
        trials.push(train(config, &train_set, heldout, config.seed + k as u64, dir.as_deref())?);
    }
    let reports: Vec<EvalReport> = trials
        .iter()
        .map(|t| t.best_report().cloned().expect("held-out data present"))
        .collect();
    let report = MetricReport::aggregate(&reports, trials.iter().map(|t| t.best_epoch).collect())?;
    Ok(Experiment { trials, report })
}
