//! Hierarchical phone -> word -> utterance assessment model.
//!
//! Phone-level GOP features are projected and encoded by a stack of
//! Conv-LLaMA blocks; words are pooled from their phones with segment
//! attention pooling and encoded again; the utterance stage fuses
//! depth-wise filtered phone and word representations, encodes them, and
//! adds the projected SSL vector to each of five attention-pooled aspect
//! vectors. Every aspect has its own two-layer regressor.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::conv_llama::{ConvLlamaParams, SeqMask, KERNEL_WIDTH};
use crate::error::{Error, Result};
use crate::init;
use crate::numerics::{Bindings, Graph, ParamId, ParamStore, Tensor, Var};

/// Number of SSL encoders whose utterance vectors are concatenated.
pub const SSL_STREAMS: usize = 3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    /// Hidden width shared by the phone, word and utterance stages.
    pub width: usize,
    /// Phone inventory size (excluding the CTC blank).
    pub inventory: usize,
    /// Lexicon size for the word embedding table.
    pub lexicon: usize,
    /// Length of each SSL vector.
    pub ssl_dim: usize,
    pub phone_blocks: usize,
    pub word_blocks: usize,
    pub utt_blocks: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            width: 24,
            inventory: 12,
            lexicon: 120,
            ssl_dim: 1024,
            phone_blocks: 3,
            word_blocks: 2,
            utt_blocks: 1,
        }
    }
}

impl ModelConfig {
    /// Width of a GOP feature row.
    pub fn gop_dim(&self) -> usize {
        self.inventory + 2
    }

    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.width % 2 != 0 {
            return Err(Error::Config(format!(
                "model width must be positive and even, got {}",
                self.width
            )));
        }
        if self.inventory < 2 || self.lexicon < 1 || self.ssl_dim == 0 {
            return Err(Error::Config("inventory, lexicon and ssl_dim must be positive".into()));
        }
        Ok(())
    }
}

/// Everything the model reads for one utterance.
///
/// Positions at or beyond `n_valid` phones / `m_valid` words are padding.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelInputs {
    /// `[N, P + 2]` GOP features.
    pub gop: Tensor,
    pub phone_ids: Vec<usize>,
    pub word_ids: Vec<usize>,
    pub phone_to_word: Vec<usize>,
    /// `[1, 3 * ssl_dim]` concatenated SSL vectors.
    pub ssl: Tensor,
    pub n_valid: usize,
    pub m_valid: usize,
}

impl ModelInputs {
    pub fn new(
        gop: Tensor,
        phone_ids: Vec<usize>,
        word_ids: Vec<usize>,
        phone_to_word: Vec<usize>,
        ssl: Tensor,
    ) -> Result<Self> {
        let inputs = Self {
            n_valid: phone_ids.len(),
            m_valid: word_ids.len(),
            gop,
            phone_ids,
            word_ids,
            phone_to_word,
            ssl,
        };
        inputs.check_structure()?;
        Ok(inputs)
    }

    pub fn phones(&self) -> usize {
        self.phone_ids.len()
    }

    pub fn words(&self) -> usize {
        self.word_ids.len()
    }

    pub fn phone_mask(&self) -> SeqMask {
        SeqMask::prefix(self.n_valid, self.phones())
    }

    pub fn word_mask(&self) -> SeqMask {
        SeqMask::prefix(self.m_valid, self.words())
    }

    fn check_structure(&self) -> Result<()> {
        let n = self.phones();
        if n == 0 || self.words() == 0 || self.n_valid == 0 || self.m_valid == 0 {
            return Err(Error::InvalidArgument("utterance needs at least one phone and word".into()));
        }
        if self.gop.rows() != n || self.phone_to_word.len() != n {
            return Err(Error::Shape(format!(
                "{n} phones but {} GOP rows and {} phone-to-word entries",
                self.gop.rows(),
                self.phone_to_word.len()
            )));
        }
        if self.n_valid > n || self.m_valid > self.words() {
            return Err(Error::Shape("valid lengths exceed padded lengths".into()));
        }
        let map = &self.phone_to_word[..self.n_valid];
        if map[0] != 0 || map.windows(2).any(|w| w[1] < w[0] || w[1] > w[0] + 1) {
            return Err(Error::InvalidArgument(
                "phone_to_word must be non-decreasing and cover every word".into(),
            ));
        }
        if map[self.n_valid - 1] + 1 != self.m_valid {
            return Err(Error::InvalidArgument(format!(
                "phone_to_word covers {} words, expected {}",
                map[self.n_valid - 1] + 1,
                self.m_valid
            )));
        }
        Ok(())
    }

    /// Copy padded to `phones` x `words` positions with zero features.
    pub fn padded(&self, phones: usize, words: usize) -> Result<Self> {
        if phones < self.phones() || words < self.words() {
            return Err(Error::Shape("cannot pad to a shorter length".into()));
        }
        let dim = self.gop.cols();
        let mut gop = self.gop.data().to_vec();
        gop.resize(phones * dim, 0.0);
        let mut phone_ids = self.phone_ids.clone();
        phone_ids.resize(phones, 0);
        let mut word_ids = self.word_ids.clone();
        word_ids.resize(words, 0);
        let mut phone_to_word = self.phone_to_word.clone();
        phone_to_word.resize(phones, 0);
        Ok(Self {
            gop: Tensor::matrix(phones, dim, gop),
            phone_ids,
            word_ids,
            phone_to_word,
            ssl: self.ssl.clone(),
            n_valid: self.n_valid,
            m_valid: self.m_valid,
        })
    }

    /// Segment id of each phone position for word pooling.
    fn word_segments(&self) -> Vec<Option<usize>> {
        (0..self.phones())
            .map(|i| (i < self.n_valid).then(|| self.phone_to_word[i]))
            .collect()
    }

    /// A single segment spanning all valid phones.
    fn utterance_segment(&self) -> Vec<Option<usize>> {
        (0..self.phones()).map(|i| (i < self.n_valid).then_some(0)).collect()
    }
}

/// Depth-wise convolution with a per-channel bias.
#[derive(Clone, Debug)]
pub struct DepthwiseConv {
    pub kernel: ParamId,
    pub bias: ParamId,
}

impl DepthwiseConv {
    fn init(store: &mut ParamStore, prefix: &str, width: usize, rng: &mut ChaCha8Rng) -> Self {
        let bound = 1.0 / (KERNEL_WIDTH as f64).sqrt();
        Self {
            kernel: store.add(format!("{prefix}.kernel"), init::uniform(rng, &[width, KERNEL_WIDTH], bound)),
            bias: store.add(format!("{prefix}.bias"), Tensor::zeros(&[width])),
        }
    }

    /// Masked input, convolution, bias, masked output.
    pub fn forward(&self, g: &mut Graph, p: &Bindings, x: Var, mask: &SeqMask) -> Result<Var> {
        let h = mask.apply(g, x)?;
        let h = g.depthwise_conv1d(h, p.var(self.kernel))?;
        let h = g.add_row(h, p.var(self.bias))?;
        mask.apply(g, h)
    }
}

/// Depth-wise convolution, segment-restricted self-attention, segment mean.
#[derive(Clone, Debug)]
pub struct AttentionPool {
    pub conv: DepthwiseConv,
    pub wq: ParamId,
    pub wk: ParamId,
    pub wv: ParamId,
    pub wo: ParamId,
    width: usize,
}

impl AttentionPool {
    fn init(store: &mut ParamStore, prefix: &str, width: usize, rng: &mut ChaCha8Rng) -> Self {
        let conv = DepthwiseConv::init(store, &format!("{prefix}.conv"), width, rng);
        let mut mat = |name: &str| store.add(format!("{prefix}.{name}"), init::uniform_fan_in(rng, width, width));
        let wq = mat("wq");
        let wk = mat("wk");
        let wv = mat("wv");
        let wo = mat("wo");
        Self {
            conv,
            wq,
            wk,
            wv,
            wo,
            width,
        }
    }

    /// Pools `x: [L, d]` into `[n_segments, d]`. `segment[i]` assigns
    /// position `i` to an output row; `None` marks padding.
    pub fn forward(
        &self,
        g: &mut Graph,
        p: &Bindings,
        x: Var,
        segment: &[Option<usize>],
        n_segments: usize,
    ) -> Result<Var> {
        let len = segment.len();
        let mask = SeqMask::from_flags(segment.iter().map(Option::is_some).collect());
        let mut counts = vec![0usize; n_segments];
        for s in segment.iter().flatten() {
            if *s >= n_segments {
                return Err(Error::InvalidArgument(format!("segment {s} out of {n_segments}")));
            }
            counts[*s] += 1;
        }
        let h = self.conv.forward(g, p, x, &mask)?;
        let q = g.matmul(h, p.var(self.wq))?;
        let k = g.matmul(h, p.var(self.wk))?;
        let v = g.matmul(h, p.var(self.wv))?;
        let scores = g.matmul_bt(q, k)?;
        let scores = g.scale(scores, 1.0 / (self.width as f64).sqrt());
        let mut allowed = vec![false; len * len];
        for i in 0..len {
            match segment[i] {
                Some(si) => {
                    for j in 0..len {
                        allowed[i * len + j] = segment[j] == Some(si);
                    }
                }
                // padded rows attend to themselves and are never pooled
                None => allowed[i * len + i] = true,
            }
        }
        let attn = g.softmax_rows(scores, Some(allowed))?;
        let ctx = g.matmul(attn, v)?;
        let o = g.matmul(ctx, p.var(self.wo))?;
        g.segment_mean(o, segment.to_vec(), n_segments)
    }
}

/// Two linear maps with SiLU in between, producing one score per row.
#[derive(Clone, Debug)]
pub struct Regressor {
    pub w1: ParamId,
    pub b1: ParamId,
    pub w2: ParamId,
    pub b2: ParamId,
}

impl Regressor {
    fn init(store: &mut ParamStore, prefix: &str, width: usize, rng: &mut ChaCha8Rng) -> Self {
        Self {
            w1: store.add(format!("{prefix}.w1"), init::uniform_fan_in(rng, width, width)),
            b1: store.add(format!("{prefix}.b1"), Tensor::zeros(&[width])),
            w2: store.add(format!("{prefix}.w2"), init::uniform_fan_in(rng, width, 1)),
            b2: store.add(format!("{prefix}.b2"), Tensor::zeros(&[1])),
        }
    }

    pub fn forward(&self, g: &mut Graph, p: &Bindings, x: Var) -> Result<Var> {
        let h = g.linear(x, p.var(self.w1), p.var(self.b1))?;
        let h = g.silu(h);
        g.linear(h, p.var(self.w2), p.var(self.b2))
    }
}

/// Parameter handles of the whole model.
#[derive(Clone, Debug)]
pub struct HippoLayout {
    pub lin_p: (ParamId, ParamId),
    pub lin_ssl: (ParamId, ParamId),
    pub phone_emb: ParamId,
    pub word_emb: ParamId,
    pub phone_enc: Vec<ConvLlamaParams>,
    pub phone_reg: Regressor,
    pub word_pool_x: AttentionPool,
    pub word_pool_h: AttentionPool,
    pub lin_w: (ParamId, ParamId),
    pub word_enc: Vec<ConvLlamaParams>,
    pub word_aspect: [DepthwiseConv; 3],
    pub word_reg: [Regressor; 3],
    pub word_merge: ParamId,
    pub utt_dc: [DepthwiseConv; 3],
    pub lin_u: (ParamId, ParamId),
    pub utt_enc: Vec<ConvLlamaParams>,
    pub utt_pool: [AttentionPool; 5],
    pub utt_reg: [Regressor; 5],
}

/// Model configuration plus its parameters.
#[derive(Clone, Debug)]
pub struct HippoModel {
    pub config: ModelConfig,
    pub params: ParamStore,
    pub layout: HippoLayout,
}

/// Phone-stage results.
pub struct PhoneStage {
    pub hidden: Var,
    pub scores: Var,
}

/// Word-stage results.
pub struct WordStage {
    pub hidden: Var,
    pub aspects: [Var; 3],
    pub scores: [Var; 3],
}

/// Score columns for one utterance, plus the CONO embedding.
pub struct ForwardOutput {
    /// `[N, 1]` phone accuracy.
    pub phone: Var,
    /// `[M, 1]` word accuracy, stress, total.
    pub word: [Var; 3],
    /// `[1, 1]` accuracy, fluency, completeness, prosody, total.
    pub utt: [Var; 5],
    /// `[1, d]` time-averaged phone encoder output.
    pub z: Var,
    pub phone_mask: SeqMask,
    pub word_mask: SeqMask,
}

impl ForwardOutput {
    pub fn columns(&self) -> [Var; 9] {
        [
            self.phone,
            self.word[0],
            self.word[1],
            self.word[2],
            self.utt[0],
            self.utt[1],
            self.utt[2],
            self.utt[3],
            self.utt[4],
        ]
    }
}

fn array3<T>(mut f: impl FnMut(usize) -> T) -> [T; 3] {
    [f(0), f(1), f(2)]
}

fn array5<T>(mut f: impl FnMut(usize) -> T) -> [T; 5] {
    [f(0), f(1), f(2), f(3), f(4)]
}

impl HippoModel {
    /// Freshly initialised model, deterministic in `seed`.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut s = ParamStore::new();
        let d = config.width;
        let rng = &mut rng;
        let linear = |s: &mut ParamStore, name: &str, fan_in: usize, rng: &mut ChaCha8Rng| {
            (
                s.add(format!("{name}.weight"), init::uniform_fan_in(rng, fan_in, d)),
                s.add(format!("{name}.bias"), Tensor::zeros(&[d])),
            )
        };
        let lin_p = linear(&mut s, "lin_p", config.gop_dim(), rng);
        let lin_ssl = linear(&mut s, "lin_ssl", SSL_STREAMS * config.ssl_dim, rng);
        let phone_emb = s.add("phone_emb", init::normal(rng, &[config.inventory, d], 0.02));
        let word_emb = s.add("word_emb", init::normal(rng, &[config.lexicon, d], 0.02));
        let phone_enc = (0..config.phone_blocks)
            .map(|i| ConvLlamaParams::init(&mut s, &format!("phone_enc.{i}"), d, rng))
            .collect();
        let phone_reg = Regressor::init(&mut s, "reg.phone_accuracy", d, rng);
        let word_pool_x = AttentionPool::init(&mut s, "word_pool_x", d, rng);
        let word_pool_h = AttentionPool::init(&mut s, "word_pool_h", d, rng);
        let lin_w = linear(&mut s, "lin_w", 2 * d, rng);
        let word_enc = (0..config.word_blocks)
            .map(|i| ConvLlamaParams::init(&mut s, &format!("word_enc.{i}"), d, rng))
            .collect();
        let word_aspect = array3(|i| DepthwiseConv::init(&mut s, &format!("word_aspect.{i}"), d, rng));
        let word_names = ["word_accuracy", "word_stress", "word_total"];
        let word_reg = array3(|i| Regressor::init(&mut s, &format!("reg.{}", word_names[i]), d, rng));
        let word_merge = s.add("word_merge_logits", Tensor::zeros(&[3]));
        let utt_dc = array3(|i| DepthwiseConv::init(&mut s, &format!("utt_dc.{i}"), d, rng));
        let lin_u = linear(&mut s, "lin_u", 3 * d, rng);
        let utt_enc = (0..config.utt_blocks)
            .map(|i| ConvLlamaParams::init(&mut s, &format!("utt_enc.{i}"), d, rng))
            .collect();
        let utt_pool = array5(|i| AttentionPool::init(&mut s, &format!("utt_pool.{i}"), d, rng));
        let utt_names = ["utt_accuracy", "utt_fluency", "utt_completeness", "utt_prosody", "utt_total"];
        let utt_reg = array5(|i| Regressor::init(&mut s, &format!("reg.{}", utt_names[i]), d, rng));
        Ok(Self {
            config,
            params: s,
            layout: HippoLayout {
                lin_p,
                lin_ssl,
                phone_emb,
                word_emb,
                phone_enc,
                phone_reg,
                word_pool_x,
                word_pool_h,
                lin_w,
                word_enc,
                word_aspect,
                word_reg,
                word_merge,
                utt_dc,
                lin_u,
                utt_enc,
                utt_pool,
                utt_reg,
            },
        })
    }

    fn check_inputs(&self, inputs: &ModelInputs) -> Result<()> {
        inputs.check_structure()?;
        if inputs.gop.cols() != self.config.gop_dim() {
            return Err(Error::Shape(format!(
                "GOP width {} but model expects {}",
                inputs.gop.cols(),
                self.config.gop_dim()
            )));
        }
        if inputs.ssl.len() != SSL_STREAMS * self.config.ssl_dim {
            return Err(Error::Shape(format!(
                "SSL input of length {} but model expects {}",
                inputs.ssl.len(),
                SSL_STREAMS * self.config.ssl_dim
            )));
        }
        if let Some(&bad) = inputs.phone_ids.iter().find(|&&p| p >= self.config.inventory) {
            return Err(Error::UnknownSymbol {
                symbol: bad,
                inventory: self.config.inventory,
            });
        }
        if let Some(&bad) = inputs.word_ids.iter().find(|&&w| w >= self.config.lexicon) {
            return Err(Error::UnknownSymbol {
                symbol: bad,
                inventory: self.config.lexicon,
            });
        }
        Ok(())
    }

    /// Linear projections of the GOP features and of the concatenated SSL
    /// vectors.
    pub fn project_inputs(&self, g: &mut Graph, p: &Bindings, inputs: &ModelInputs) -> Result<(Var, Var)> {
        self.check_inputs(inputs)?;
        let l = &self.layout;
        let gop = g.constant(inputs.gop.clone());
        let xp = g.linear(gop, p.var(l.lin_p.0), p.var(l.lin_p.1))?;
        let xp = inputs.phone_mask().apply(g, xp)?;
        let ssl = g.constant(inputs.ssl.clone().reshape(vec![1, inputs.ssl.len()])?);
        let xssl = g.linear(ssl, p.var(l.lin_ssl.0), p.var(l.lin_ssl.1))?;
        Ok((xp, xssl))
    }

    pub fn phone_stage(&self, g: &mut Graph, p: &Bindings, xp: Var, inputs: &ModelInputs) -> Result<PhoneStage> {
        let l = &self.layout;
        let mask = inputs.phone_mask();
        let emb = g.gather_rows(p.var(l.phone_emb), inputs.phone_ids.clone())?;
        let mut h = g.add(xp, emb)?;
        for block in &l.phone_enc {
            h = block.forward(g, p, h, &mask)?;
        }
        let scores = l.phone_reg.forward(g, p, h)?;
        Ok(PhoneStage { hidden: h, scores })
    }

    /// Word-level attention pooling over the word segmentation.
    pub fn attention_pool(
        &self,
        g: &mut Graph,
        p: &Bindings,
        pool: &AttentionPool,
        x: Var,
        inputs: &ModelInputs,
    ) -> Result<Var> {
        pool.forward(g, p, x, &inputs.word_segments(), inputs.words())
    }

    pub fn word_stage(
        &self,
        g: &mut Graph,
        p: &Bindings,
        xp: Var,
        hp: Var,
        inputs: &ModelInputs,
    ) -> Result<WordStage> {
        let l = &self.layout;
        let mask = inputs.word_mask();
        let xw_hat = self.attention_pool(g, p, &l.word_pool_x, xp, inputs)?;
        let hw_hat = self.attention_pool(g, p, &l.word_pool_h, hp, inputs)?;
        let cat = g.concat_cols(&[xw_hat, hw_hat])?;
        let xw = g.linear(cat, p.var(l.lin_w.0), p.var(l.lin_w.1))?;
        let emb = g.gather_rows(p.var(l.word_emb), inputs.word_ids.clone())?;
        let mut h = g.add(xw, emb)?;
        for block in &l.word_enc {
            h = block.forward(g, p, h, &mask)?;
        }
        let mut aspects = [h; 3];
        let mut scores = [h; 3];
        for k in 0..3 {
            aspects[k] = l.word_aspect[k].forward(g, p, h, &mask)?;
            scores[k] = l.word_reg[k].forward(g, p, aspects[k])?;
        }
        Ok(WordStage { hidden: h, aspects, scores })
    }

    /// Softmax-weighted average of the three word aspect representations.
    pub fn merge_word_aspects(&self, g: &mut Graph, p: &Bindings, aspects: &[Var; 3]) -> Result<Var> {
        let w = g.softmax_rows(p.var(self.layout.word_merge), None)?;
        let mut acc = g.scale_by(aspects[0], w, 0)?;
        for (k, a) in aspects.iter().enumerate().skip(1) {
            let t = g.scale_by(*a, w, k)?;
            acc = g.add(acc, t)?;
        }
        Ok(acc)
    }

    pub fn utterance_stage(
        &self,
        g: &mut Graph,
        p: &Bindings,
        xp: Var,
        hp: Var,
        word_aspects: &[Var; 3],
        xssl: Var,
        inputs: &ModelInputs,
    ) -> Result<[Var; 5]> {
        let l = &self.layout;
        let mask = inputs.phone_mask();
        let merged = self.merge_word_aspects(g, p, word_aspects)?;
        // word representations duplicated over their phones
        let index = (0..inputs.phones())
            .map(|i| if i < inputs.n_valid { inputs.phone_to_word[i] } else { 0 })
            .collect();
        let expanded = g.gather_rows(merged, index)?;
        let d1 = l.utt_dc[0].forward(g, p, xp, &mask)?;
        let d2 = l.utt_dc[1].forward(g, p, hp, &mask)?;
        let d3 = l.utt_dc[2].forward(g, p, expanded, &mask)?;
        let cat = g.concat_cols(&[d1, d2, d3])?;
        let mut h = g.linear(cat, p.var(l.lin_u.0), p.var(l.lin_u.1))?;
        for block in &l.utt_enc {
            h = block.forward(g, p, h, &mask)?;
        }
        let segment = inputs.utterance_segment();
        let mut out = [h; 5];
        for k in 0..5 {
            let pooled = l.utt_pool[k].forward(g, p, h, &segment, 1)?;
            let r = g.add(pooled, xssl)?;
            out[k] = l.utt_reg[k].forward(g, p, r)?;
        }
        Ok(out)
    }

    /// Full forward pass for one (possibly padded) utterance.
    pub fn forward(&self, g: &mut Graph, p: &Bindings, inputs: &ModelInputs) -> Result<ForwardOutput> {
        let (xp, xssl) = self.project_inputs(g, p, inputs)?;
        let phone = self.phone_stage(g, p, xp, inputs)?;
        let word = self.word_stage(g, p, xp, phone.hidden, inputs)?;
        let utt = self.utterance_stage(g, p, xp, phone.hidden, &word.aspects, xssl, inputs)?;
        let z = g.segment_mean(phone.hidden, inputs.utterance_segment(), 1)?;
        Ok(ForwardOutput {
            phone: phone.scores,
            word: word.scores,
            utt,
            z,
            phone_mask: inputs.phone_mask(),
            word_mask: inputs.word_mask(),
        })
    }

    /// Pads every utterance to the batch maxima and runs them with masks.
    pub fn forward_batch(
        &self,
        g: &mut Graph,
        p: &Bindings,
        batch: &[ModelInputs],
    ) -> Result<Vec<ForwardOutput>> {
        let n = batch.iter().map(ModelInputs::phones).max().unwrap_or(0);
        let m = batch.iter().map(ModelInputs::words).max().unwrap_or(0);
        batch
            .iter()
            .map(|u| self.forward(g, p, &u.padded(n, m)?))
            .collect()
    }

    /// Inference-only forward returning plain score vectors.
    pub fn predict(&self, inputs: &ModelInputs) -> Result<Prediction> {
        let mut g = Graph::new();
        let p = self.params.bind_frozen(&mut g);
        let out = self.forward(&mut g, &p, inputs)?;
        Ok(Prediction::collect(&g, &out))
    }
}

/// Valid-position predictions of one utterance as plain values.
#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    pub phone: Vec<f64>,
    pub word: [Vec<f64>; 3],
    pub utt: [f64; 5],
    pub z: Vec<f64>,
}

impl Prediction {
    pub fn collect(g: &Graph, out: &ForwardOutput) -> Self {
        let n = out.phone_mask.count();
        let m = out.word_mask.count();
        Self {
            phone: g.value(out.phone).data()[..n].to_vec(),
            word: array3(|k| g.value(out.word[k]).data()[..m].to_vec()),
            utt: array5(|k| g.value(out.utt[k]).item()),
            z: g.value(out.z).data().to_vec(),
        }
    }

    /// Predictions of one aspect, one per valid position.
    pub fn values(&self, aspect: crate::aspects::Aspect) -> Vec<f64> {
        use crate::aspects::Granularity;
        match aspect.granularity() {
            Granularity::Phone => self.phone.clone(),
            Granularity::Word => self.word[aspect.index() - 1].clone(),
            Granularity::Utterance => vec![self.utt[aspect.index() - 4]],
        }
    }

    pub fn count(&self) -> usize {
        self.phone.len() + 3 * self.word[0].len() + 5
    }
}
