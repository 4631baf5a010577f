use hippo_core::aspects::Aspect;
use hippo_core::conv_llama::{ConvLlamaParams, SeqMask};
use hippo_core::curriculum::{select_view, TaskView, ViewSample};
use hippo_core::harness::gradcheck::{analytic_gradients, fixture_batch, fixture_model, GradcheckConfig};
use hippo_core::model::{HippoModel, ModelConfig};
use hippo_core::numerics::{Graph, ParamStore, Tensor};
use hippo_core::syncorpus::{generate_corpus, CorpusConfig};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::sync::OnceLock;

fn corpus() -> &'static (HippoModel, Vec<ViewSample>) {
    static CELL: OnceLock<(HippoModel, Vec<ViewSample>)> = OnceLock::new();
    CELL.get_or_init(|| {
        let config = CorpusConfig {
            utterances: 24,
            target_wer: 0.3,
            ssl_dim: 16,
            ..CorpusConfig::default()
        };
        let samples = generate_corpus(&config)
            .unwrap()
            .iter()
            .flat_map(|r| [select_view(r, TaskView::Easy).unwrap(), select_view(r, TaskView::Hard).unwrap()])
            .collect();
        let model = HippoModel::new(
            ModelConfig {
                width: 12,
                ssl_dim: 16,
                ..ModelConfig::default()
            },
            3,
        )
        .unwrap();
        (model, samples)
    })
}

fn outputs(g: &Graph, out: &hippo_core::model::ForwardOutput) -> Vec<f64> {
    let mut v = Vec::new();
    for (aspect, col) in Aspect::ALL.into_iter().zip(out.columns()) {
        let t = g.value(col);
        let valid = match aspect.granularity() {
            hippo_core::aspects::Granularity::Phone => out.phone_mask.count(),
            hippo_core::aspects::Granularity::Word => out.word_mask.count(),
            hippo_core::aspects::Granularity::Utterance => 1,
        };
        v.extend_from_slice(&t.data()[..valid]);
    }
    v.extend_from_slice(g.value(out.z).data());
    v
}

fn max_gap(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn padding_does_not_change_outputs(i in 0usize..48, extra_p in 0usize..9, extra_w in 0usize..4) {
        let (model, samples) = corpus();
        let inputs = &samples[i].inputs;
        let plain = model.predict(inputs).unwrap();
        let padded = model
            .predict(&inputs.padded(inputs.phones() + extra_p, inputs.words() + extra_w).unwrap())
            .unwrap();
        prop_assert_eq!(plain.phone.len(), padded.phone.len());
        for aspect in Aspect::ALL {
            prop_assert!(max_gap(&plain.values(aspect), &padded.values(aspect)) <= 1e-9);
        }
        prop_assert!(max_gap(&plain.z, &padded.z) <= 1e-9);
    }

    #[test]
    fn batched_forward_matches_single(a in 0usize..48, b in 0usize..48, c in 0usize..48) {
        let (model, samples) = corpus();
        let picked = [a, b, c].map(|i| samples[i].inputs.clone());
        let mut g = Graph::new();
        let p = model.params.bind_frozen(&mut g);
        let batch = model.forward_batch(&mut g, &p, &picked).unwrap();
        for (inputs, out) in picked.iter().zip(&batch) {
            let mut h = Graph::new();
            let q = model.params.bind_frozen(&mut h);
            let single = model.forward(&mut h, &q, inputs).unwrap();
            prop_assert!(max_gap(&outputs(&g, out), &outputs(&h, &single)) <= 1e-9);
        }
    }
}

#[test]
fn batch_of_one_equals_unbatched() {
    let (model, samples) = corpus();
    let inputs = &samples[5].inputs;
    let mut g = Graph::new();
    let p = model.params.bind_frozen(&mut g);
    let batch = model.forward_batch(&mut g, &p, std::slice::from_ref(inputs)).unwrap();
    let single = model.forward(&mut g, &p, inputs).unwrap();
    assert_eq!(outputs(&g, &batch[0]), outputs(&g, &single));
}

#[test]
fn attention_pool_is_local_to_segments() {
    let (model, _) = corpus();
    let pool = &model.layout.word_pool_x;
    let d = model.config.width;
    let segments: Vec<Option<usize>> = [0, 0, 0, 1, 1, 1, 1, 1].map(Some).to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let base = hippo_core::init::normal(&mut rng, &[8, d], 1.0);
    let run = |x: &Tensor| {
        let mut g = Graph::new();
        let p = model.params.bind_frozen(&mut g);
        let xv = g.constant(x.clone());
        let out = pool.forward(&mut g, &p, xv, &segments, 2).unwrap();
        g.value(out).clone()
    };
    let mut changed = base.clone();
    // far enough from the boundary that the convolution cannot carry it over
    for c in 0..d {
        changed.data_mut()[7 * d + c] += 3.0;
    }
    let (a, b) = (run(&base), run(&changed));
    assert_eq!(a.row(0), b.row(0));
    assert!(a.row(1) != b.row(1));
}

#[test]
fn every_parameter_group_receives_gradient() {
    let model = fixture_model(8, 0).unwrap();
    let batch = fixture_batch(0).unwrap();
    let refs: Vec<&ViewSample> = batch.iter().collect();
    let grads = analytic_gradients(&model, &refs, &GradcheckConfig::default()).unwrap();
    for ((_, name, _), grad) in model.params.iter().zip(&grads) {
        assert!(grad.data().iter().any(|v| *v != 0.0), "{name} has no gradient");
    }
}

#[test]
fn initialisation_is_seeded() {
    let config = ModelConfig {
        width: 8,
        ssl_dim: 4,
        ..ModelConfig::default()
    };
    let a = HippoModel::new(config.clone(), 1).unwrap();
    let b = HippoModel::new(config.clone(), 1).unwrap();
    let c = HippoModel::new(config, 2).unwrap();
    let flat = |m: &HippoModel| m.params.iter().flat_map(|(_, _, t)| t.data().to_vec()).collect::<Vec<_>>();
    assert_eq!(flat(&a), flat(&b));
    assert_ne!(flat(&a), flat(&c));
}

#[test]
fn odd_width_is_rejected() {
    let config = ModelConfig {
        width: 7,
        ..ModelConfig::default()
    };
    assert!(HippoModel::new(config, 0).is_err());
}

#[test]
fn block_ignores_padded_rows() {
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let block = ConvLlamaParams::init(&mut store, "b", 6, &mut rng);
    let x = hippo_core::init::normal(&mut rng, &[5, 6], 1.0);
    let mut y = x.clone();
    for v in &mut y.data_mut()[4 * 6..] {
        *v = 100.0;
    }
    let run = |t: &Tensor| {
        let mut g = Graph::new();
        let p = store.bind_frozen(&mut g);
        let v = g.constant(t.clone());
        let out = block.forward(&mut g, &p, v, &SeqMask::prefix(4, 5)).unwrap();
        g.value(out).data()[..4 * 6].to_vec()
    };
    assert!(max_gap(&run(&x), &run(&y)) <= 1e-12);
}
