use std::collections::BTreeSet;
use std::fs;

use hippo_core::aspects::{Aspect, AspectTargets};
use hippo_core::curriculum::{schedule_prob, select_view, TaskView, ViewSample};
use hippo_core::ctc_gop::{ctc_log_likelihood, LogPosteriorGrid};
use hippo_core::harness::checkpoint::{self, Checkpoint};
use hippo_core::harness::gradcheck::{fixture_model, gradcheck, GradcheckConfig};
use hippo_core::harness::metrics::{EvalReport, MetricReport};
use hippo_core::harness::train::{batch_loss, train, Dataset};
use hippo_core::harness::{run_experiment, TrainConfig};
use hippo_core::model::{HippoModel, ModelConfig, Prediction};
use hippo_core::numerics::kernels::softmax_rows;
use hippo_core::numerics::{GradFault, Graph, Tensor};
use hippo_core::syncorpus::{generate_corpus, CorpusConfig, UtteranceRecord};
use hippo_core::Error;

fn tiny_config() -> TrainConfig {
    let mut config = TrainConfig {
        epochs: 4,
        trials: 1,
        batch_size: 8,
        learning_rate: 3e-3,
        ..TrainConfig::default()
    };
    config.corpus = CorpusConfig {
        utterances: 48,
        target_wer: 0.2,
        ssl_dim: 8,
        ..CorpusConfig::default()
    };
    config.model.width = 8;
    config
}

fn tiny_corpus(config: &mut TrainConfig) -> Vec<UtteranceRecord> {
    let records = generate_corpus(&config.corpus).unwrap();
    config.model.fit_corpus(&records).unwrap();
    records
}

#[test]
fn gradcheck_catches_injected_faults() {
    let clean = gradcheck(&GradcheckConfig::default()).unwrap();
    assert!(clean.passed, "{:?}", clean.failing());

    let names: Vec<&str> = clean.groups.iter().map(|g| g.name.as_str()).collect();
    let unique: BTreeSet<&str> = names.iter().copied().collect();
    assert_eq!(unique.len(), names.len());
    let model = fixture_model(8, 0).unwrap();
    let expected: BTreeSet<&str> = model.params.iter().map(|(_, n, _)| n).collect();
    assert_eq!(unique, expected);

    let faulty = gradcheck(&GradcheckConfig {
        fault: Some(GradFault::RmsNormGain),
        ..GradcheckConfig::default()
    })
    .unwrap();
    assert!(!faulty.passed);
    let failing = faulty.failing();
    assert!(!failing.is_empty());
    assert!(failing.iter().all(|n| n.ends_with("_norm")), "{failing:?}");

    let silu = gradcheck(&GradcheckConfig {
        fault: Some(GradFault::SiluShortcut),
        ..GradcheckConfig::default()
    })
    .unwrap();
    assert!(!silu.passed);
}

#[test]
fn training_is_bit_reproducible() {
    let mut config = tiny_config();
    config.epochs = 2;
    let records = tiny_corpus(&mut config);
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    for d in &dirs {
        let c = TrainConfig {
            out_dir: Some(d.path().to_path_buf()),
            ..config.clone()
        };
        run_experiment(&c, &records).unwrap();
    }
    for file in ["trial0/best.json", "trial0/checkpoint_epoch002.json", "trial0/metrics.jsonl"] {
        let a = fs::read(dirs[0].path().join(file)).unwrap();
        let b = fs::read(dirs[1].path().join(file)).unwrap();
        assert!(a == b, "{file} differs");
    }
}

#[test]
fn tiny_run_reduces_loss() {
    let mut config = TrainConfig {
        epochs: 5,
        ..TrainConfig::default()
    };
    config.corpus.utterances = 200;
    config.corpus.target_wer = 0.2;
    config.corpus.ssl_dim = 16;
    config.model.width = 8;
    let records = tiny_corpus(&mut config);
    let data = Dataset::build(&records).unwrap();
    let result = train(&config, &data, &[], 0, None).unwrap();
    let first = result.epochs.first().unwrap().train_loss;
    let last = result.epochs.last().unwrap().train_loss;
    assert!(last < first, "{first} -> {last}");
    assert_eq!(result.best_epoch, 5);
}

#[test]
fn curriculum_off_uses_both_views_and_plain_loss() {
    let mut config = tiny_config();
    config.epochs = 1;
    config.curriculum = false;
    config.cono = false;
    let records = tiny_corpus(&mut config);
    let data = Dataset::build(&records).unwrap();
    let result = train(&config, &data, &[], 0, None).unwrap();
    assert_eq!(result.epochs[0].steps, (2 * data.len()).div_ceil(config.batch_size));
    let log = &result.epochs[0];
    assert_eq!(log.train_loss, log.train_apa);

    let model = HippoModel::new(config.model.clone(), 0).unwrap();
    let batch: Vec<&ViewSample> = data.hard.iter().take(5).collect();
    let mut g = Graph::new();
    let p = model.params.bind_frozen(&mut g);
    let loss = batch_loss(&model, &mut g, &p, &batch, &config.effective_weights(), true).unwrap();
    assert_eq!(g.value(loss.total).item(), g.value(loss.apa).item());
    assert!(loss.diversity.is_none());
}

#[test]
fn checkpoints_round_trip() {
    let model = HippoModel::new(
        ModelConfig {
            width: 8,
            ssl_dim: 8,
            ..ModelConfig::default()
        },
        5,
    )
    .unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.json");
    checkpoint::save(&model, &path).unwrap();
    let back = checkpoint::load(&path).unwrap();
    let records = generate_corpus(&CorpusConfig {
        utterances: 3,
        ssl_dim: 8,
        ..CorpusConfig::default()
    })
    .unwrap();
    for r in &records {
        let s = select_view(r, TaskView::Easy).unwrap();
        assert_eq!(model.predict(&s.inputs).unwrap(), back.predict(&s.inputs).unwrap());
    }

    let mut ck = Checkpoint::from_model(&model);
    ck.params.remove("lin_p.weight");
    assert_eq!(ck.into_model().unwrap_err().kind(), "checkpoint");
    let mut ck = Checkpoint::from_model(&model);
    ck.format_version = 99;
    assert_eq!(ck.into_model().unwrap_err().kind(), "checkpoint");
    fs::write(&path, "{not json").unwrap();
    assert!(checkpoint::load(&path).is_err());
}

fn oracle_predictions(targets: &[AspectTargets]) -> Vec<Prediction> {
    targets
        .iter()
        .map(|t| Prediction {
            phone: t.phone.clone(),
            word: t.word.clone(),
            utt: t.utt,
            z: vec![0.0],
        })
        .collect()
}

#[test]
fn metrics_reward_the_oracle() {
    let records = generate_corpus(&CorpusConfig {
        utterances: 40,
        ssl_dim: 4,
        ..CorpusConfig::default()
    })
    .unwrap();
    let targets: Vec<AspectTargets> = records.iter().map(UtteranceRecord::reference_targets).collect();
    let report = EvalReport::from_predictions(&oracle_predictions(&targets), &targets).unwrap();
    for aspect in Aspect::ALL {
        let m = report.get(aspect);
        assert_eq!(m.mse, 0.0);
        assert!((m.pcc.unwrap() - 1.0).abs() < 1e-12, "{}", aspect.name());
    }
    let mut shifted = oracle_predictions(&targets);
    for p in &mut shifted {
        p.phone.iter_mut().for_each(|v| *v += 0.5);
    }
    let r2 = EvalReport::from_predictions(&shifted, &targets).unwrap();
    assert!((r2.phone_mse() - 0.25).abs() < 1e-12);
    assert!((r2.get(Aspect::PhoneAccuracy).pcc.unwrap() - 1.0).abs() < 1e-12);

    let agg = MetricReport::aggregate(&[report.clone(), r2], vec![3, 4]).unwrap();
    let phone = agg.get(Aspect::PhoneAccuracy);
    assert!((phone.mse.mean - 0.125).abs() < 1e-12);
    assert!(agg.to_text().contains("phone_accuracy"));
}

#[test]
fn every_error_kind_is_reachable() {
    let mut kinds = BTreeSet::new();
    let mut note = |e: Error| {
        kinds.insert(e.kind());
    };
    note(Tensor::new(vec![2, 2], vec![1.0]).unwrap_err());
    note(schedule_prob(0, 0).unwrap_err());
    let mut g = Graph::new();
    let m = g.param(Tensor::matrix(2, 1, vec![1.0, 2.0]));
    note(g.backward(m).unwrap_err());
    note(softmax_rows(&Tensor::matrix(1, 2, vec![0.0, 0.0]), Some(&[false, false])).unwrap_err());
    let grid = LogPosteriorGrid::from_probs(&[vec![0.5, 0.5]]).unwrap();
    note(ctc_log_likelihood(&grid, &[3]).unwrap_err());

    let mut config = tiny_config();
    let mut records = tiny_corpus(&mut config);
    let mut bare = records[0].clone();
    bare.hyp_words.clear();
    bare.hyp_phones.clear();
    note(select_view(&bare, TaskView::Hard).unwrap_err());
    records[0].ssl[0][0] = f64::NAN;
    let data = Dataset::build(&records).unwrap();
    config.epochs = 1;
    note(train(&config, &data, &[], 0, None).unwrap_err());

    let mut ck = Checkpoint::from_model(&HippoModel::new(config.model.clone(), 0).unwrap());
    ck.format_version = 0;
    note(ck.into_model().unwrap_err());
    note(hippo_core::syncorpus::read_jsonl(std::io::Cursor::new("[1]\n")).unwrap_err());
    note(TrainConfig::from_text("epochs = -3").unwrap_err());
    note(checkpoint::load(std::path::Path::new("/nonexistent/ck.json")).unwrap_err());
    note(serde_json::from_str::<serde_json::Value>("{").map(|_| ()).map_err(Error::from).unwrap_err());

    let expected = [
        "checkpoint",
        "config",
        "corpus",
        "empty_attention_row",
        "invalid_argument",
        "io",
        "json",
        "missing_view",
        "non_finite_loss",
        "non_scalar_loss",
        "shape",
        "unknown_symbol",
    ];
    assert_eq!(kinds, expected.into_iter().collect());
}
