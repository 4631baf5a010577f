//! Finite-difference verification of every parameter gradient of a small
//! full model under the complete training loss.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::curriculum::{select_view, TaskView, ViewSample};
use crate::error::{Error, Result};
use crate::harness::train::batch_loss;
use crate::model::{HippoModel, ModelConfig};
use crate::numerics::{GradFault, Graph, Tensor};
use crate::objectives::LossWeights;
use crate::syncorpus::{generate_corpus, CorpusConfig};

#[derive(Clone, Debug)]
pub struct GradcheckConfig {
    pub width: usize,
    pub seed: u64,
    pub step: f64,
    pub tolerance: f64,
    /// Groups up to this size are checked exhaustively.
    pub exhaustive_limit: usize,
    /// Random coordinates checked in larger groups (plus the largest).
    pub sampled: usize,
    pub weights: LossWeights,
    pub unit_embeddings: bool,
    pub fault: Option<GradFault>,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        Self {
            width: 8,
            seed: 0,
            step: 1e-5,
            tolerance: 1e-4,
            exhaustive_limit: 64,
            sampled: 32,
            weights: LossWeights::default(),
            unit_embeddings: true,
            fault: None,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct GroupCheck {
    pub name: String,
    pub coordinates: usize,
    pub max_abs_error: f64,
    /// Largest gradient magnitude among the checked coordinates.
    pub scale: f64,
    pub rel_error: f64,
    pub passed: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct GradcheckReport {
    pub groups: Vec<GroupCheck>,
    pub max_rel_error: f64,
    pub tolerance: f64,
    pub passed: bool,
}

impl GradcheckReport {
    pub fn failing(&self) -> Vec<&str> {
        self.groups
            .iter()
            .filter(|g| !g.passed)
            .map(|g| g.name.as_str())
            .collect()
    }
}

/// Three utterances: two sharing an utterance label and one apart, so both
/// regulariser terms are active.
pub fn fixture_batch(seed: u64) -> Result<Vec<ViewSample>> {
    let corpus = CorpusConfig {
        inventory: 5,
        lexicon: 12,
        utterances: 40,
        words_per_utt: (2, 3),
        phones_per_word: (1, 3),
        frames_per_phone: (3, 4),
        target_wer: 0.0,
        ssl_dim: 8,
        seed,
    };
    let samples: Vec<ViewSample> = generate_corpus(&corpus)?
        .iter()
        .map(|r| select_view(r, TaskView::Easy))
        .collect::<Result<_>>()?;
    for i in 0..samples.len() {
        for j in i + 1..samples.len() {
            if samples[i].label != samples[j].label {
                continue;
            }
            if let Some(k) = samples.iter().position(|s| s.label != samples[i].label) {
                return Ok(vec![samples[i].clone(), samples[j].clone(), samples[k].clone()]);
            }
        }
    }
    Err(Error::InvalidArgument("could not assemble a gradient-check batch".into()))
}

pub fn fixture_model(width: usize, seed: u64) -> Result<HippoModel> {
    HippoModel::new(
        ModelConfig {
            width,
            inventory: 5,
            lexicon: 12,
            ssl_dim: 8,
            ..ModelConfig::default()
        },
        seed,
    )
}

fn loss_value(model: &HippoModel, batch: &[&ViewSample], config: &GradcheckConfig) -> Result<f64> {
    let mut g = Graph::new();
    let p = model.params.bind_frozen(&mut g);
    let loss = batch_loss(model, &mut g, &p, batch, &config.weights, config.unit_embeddings)?;
    Ok(g.value(loss.total).item())
}

/// Analytic gradients of the batch loss, one tensor per parameter.
pub fn analytic_gradients(
    model: &HippoModel,
    batch: &[&ViewSample],
    config: &GradcheckConfig,
) -> Result<Vec<Tensor>> {
    let mut g = Graph::new();
    g.set_fault(config.fault);
    let p = model.params.bind(&mut g);
    let loss = batch_loss(model, &mut g, &p, batch, &config.weights, config.unit_embeddings)?;
    g.backward(loss.total)?;
    Ok(p.grads(&g, &model.params))
}

/// Compares analytic and central-difference gradients group by group.
///
/// A group's error is the largest absolute discrepancy over its checked
/// coordinates divided by the largest gradient magnitude among them.
pub fn check_model(
    model: &HippoModel,
    batch: &[&ViewSample],
    config: &GradcheckConfig,
) -> Result<GradcheckReport> {
    let analytic = analytic_gradients(model, batch, config)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x000C_4EC4);
    let mut probe = model.clone();
    let mut groups = Vec::with_capacity(analytic.len());
    let ids: Vec<_> = model.params.ids().collect();
    for (k, id) in ids.into_iter().enumerate() {
        let grad = analytic[k].data();
        let len = grad.len();
        let coords: Vec<usize> = if len <= config.exhaustive_limit {
            (0..len).collect()
        } else {
            let mut c = sample(&mut rng, len, config.sampled).into_vec();
            let argmax = (0..len)
                .max_by(|&a, &b| grad[a].abs().total_cmp(&grad[b].abs()))
                .expect("nonempty tensor");
            if !c.contains(&argmax) {
                c.push(argmax);
            }
            c
        };
        let (mut max_abs, mut scale) = (0.0f64, 0.0f64);
        for &i in &coords {
            let orig = model.params.get(id).data()[i];
            probe.params.get_mut(id).data_mut()[i] = orig + config.step;
            let up = loss_value(&probe, batch, config)?;
            probe.params.get_mut(id).data_mut()[i] = orig - config.step;
            let down = loss_value(&probe, batch, config)?;
            probe.params.get_mut(id).data_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * config.step);
            max_abs = max_abs.max((numeric - grad[i]).abs());
            scale = scale.max(numeric.abs()).max(grad[i].abs());
        }
        let rel_error = max_abs / scale.max(1e-8);
        groups.push(GroupCheck {
            name: model.params.name(id).to_string(),
            coordinates: coords.len(),
            max_abs_error: max_abs,
            scale,
            rel_error,
            passed: rel_error <= config.tolerance,
        });
    }
    let max_rel_error = groups.iter().map(|g| g.rel_error).fold(0.0, f64::max);
    Ok(GradcheckReport {
        passed: groups.iter().all(|g| g.passed),
        groups,
        max_rel_error,
        tolerance: config.tolerance,
    })
}

/// Runs the check on the standard fixture model and batch.
pub fn gradcheck(config: &GradcheckConfig) -> Result<GradcheckReport> {
    let model = fixture_model(config.width, config.seed)?;
    let batch = fixture_batch(config.seed)?;
    let refs: Vec<&ViewSample> = batch.iter().collect();
    check_model(&model, &refs, config)
}
