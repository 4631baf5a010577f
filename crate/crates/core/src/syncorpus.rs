//! Deterministic synthetic learner corpus.
//!
//! Each utterance draws a latent proficiency; phone, word and utterance
//! scores, CTC posteriors and SSL-like utterance vectors are all noisy
//! functions of it. A simulated recogniser then corrupts the word sequence
//! and reference scores are transferred onto the transcription.

use std::io::{BufRead, Write};

use rand::distributions::WeightedIndex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::alignment::{align, assign_scores, build_phone_word_map, Provenance};
use crate::aspects::{normalize, AspectTargets, Granularity};
use crate::ctc_gop::LogPosteriorGrid;
use crate::error::{Error, Result};

pub const SCHEMA_VERSION: u32 = 1;

/// Number of SSL streams per utterance.
pub const SSL_STREAMS: usize = 3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CorpusConfig {
    /// Phone inventory size, excluding the CTC blank.
    pub inventory: usize,
    pub lexicon: usize,
    pub utterances: usize,
    pub words_per_utt: (usize, usize),
    pub phones_per_word: (usize, usize),
    pub frames_per_phone: (usize, usize),
    /// Word error rate the simulated recogniser aims for.
    pub target_wer: f64,
    pub ssl_dim: usize,
    pub seed: u64,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self {
            inventory: 12,
            lexicon: 120,
            utterances: 2000,
            words_per_utt: (2, 6),
            phones_per_word: (1, 4),
            frames_per_phone: (3, 6),
            target_wer: 0.0,
            ssl_dim: 1024,
            seed: 0,
        }
    }
}

impl CorpusConfig {
    pub fn validate(&self) -> Result<()> {
        let ranges = [
            ("words_per_utt", self.words_per_utt),
            ("phones_per_word", self.phones_per_word),
            ("frames_per_phone", self.frames_per_phone),
        ];
        for (name, (lo, hi)) in ranges {
            if lo == 0 || lo > hi {
                return Err(Error::Config(format!("{name} range {lo}..={hi} is empty")));
            }
        }
        if self.inventory < 2 || self.lexicon < 2 {
            return Err(Error::Config("inventory and lexicon need at least two entries".into()));
        }
        if !(0.0..=1.0).contains(&self.target_wer) {
            return Err(Error::Config(format!("target_wer {} outside [0, 1]", self.target_wer)));
        }
        if self.ssl_dim == 0 {
            return Err(Error::Config("ssl_dim must be positive".into()));
        }
        Ok(())
    }
}

/// Word pronunciations plus similarity-weighted confusion candidates.
#[derive(Clone, Debug)]
pub struct Lexicon {
    pub pronunciations: Vec<Vec<usize>>,
    neighbors: Vec<WeightedIndex<f64>>,
}

/// Shared phones (as multisets) over the longer pronunciation length.
pub fn phone_overlap(a: &[usize], b: &[usize]) -> f64 {
    let mut rest = b.to_vec();
    let mut shared = 0;
    for p in a {
        if let Some(i) = rest.iter().position(|q| q == p) {
            rest.swap_remove(i);
            shared += 1;
        }
    }
    shared as f64 / a.len().max(b.len()) as f64
}

impl Lexicon {
    pub fn generate(config: &CorpusConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let (lo, hi) = config.phones_per_word;
        let pronunciations: Vec<Vec<usize>> = (0..config.lexicon)
            .map(|_| {
                let len = rng.gen_range(lo..=hi);
                (0..len).map(|_| rng.gen_range(0..config.inventory)).collect()
            })
            .collect();
        let neighbors = (0..config.lexicon)
            .map(|w| {
                let weights = (0..config.lexicon).map(|v| {
                    if v == w {
                        0.0
                    } else {
                        0.05 + phone_overlap(&pronunciations[w], &pronunciations[v]).powi(2)
                    }
                });
                WeightedIndex::new(weights).expect("lexicon has at least two words")
            })
            .collect();
        Ok(Self {
            pronunciations,
            neighbors,
        })
    }

    pub fn len(&self) -> usize {
        self.pronunciations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pronunciations.is_empty()
    }

    /// A different word, preferring ones that sound alike.
    pub fn confusable<R: Rng>(&self, word: usize, rng: &mut R) -> usize {
        self.neighbors[word].sample(rng)
    }

    pub fn phones_of(&self, words: &[usize]) -> (Vec<usize>, Vec<usize>) {
        let counts: Vec<usize> = words.iter().map(|&w| self.pronunciations[w].len()).collect();
        let phones = words
            .iter()
            .flat_map(|&w| self.pronunciations[w].iter().copied())
            .collect();
        let map = build_phone_word_map(&counts).expect("pronunciations are nonempty");
        (phones, map)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct WordScores {
    pub acc: Vec<f64>,
    pub stress: Vec<f64>,
    pub total: Vec<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct UttScores {
    pub acc: f64,
    pub flu: f64,
    pub comp: f64,
    pub pros: f64,
    pub total: f64,
}

impl UttScores {
    pub fn as_array(&self) -> [f64; 5] {
        [self.acc, self.flu, self.comp, self.pros, self.total]
    }
}

/// Human-style scores: phone 0-2, word and utterance 0-10.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Scores {
    pub phone: Vec<f64>,
    pub word: WordScores,
    pub utt: UttScores,
}

/// Scores carried over to the transcription.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TransferredScores {
    pub phone: Vec<f64>,
    pub word: WordScores,
    pub phone_provenance: Vec<Provenance>,
    pub word_provenance: Vec<Provenance>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UtteranceRecord {
    pub schema: u32,
    pub utt_id: String,
    pub ref_words: Vec<usize>,
    pub ref_phones: Vec<usize>,
    pub phone_to_word: Vec<usize>,
    pub scores: Scores,
    pub hyp_words: Vec<usize>,
    pub hyp_phones: Vec<usize>,
    pub hyp_phone_to_word: Vec<usize>,
    pub hyp_scores: TransferredScores,
    /// Frame-by-symbol log-probabilities, blank last.
    pub posteriors: Vec<Vec<f64>>,
    pub ssl: Vec<Vec<f64>>,
    pub proficiency: f64,
    pub seed: u64,
}

fn check(cond: bool, utt: &str, what: &str) -> Result<()> {
    if cond {
        Ok(())
    } else {
        Err(Error::Corpus(format!("{utt}: {what}")))
    }
}

fn in_range(values: &[f64], hi: f64) -> bool {
    values.iter().all(|v| (0.0..=hi).contains(v) && v.fract() == 0.0)
}

impl UtteranceRecord {
    /// Checks the record's structural and score-range invariants.
    pub fn validate(&self) -> Result<()> {
        let id = self.utt_id.as_str();
        check(self.schema == SCHEMA_VERSION, id, "unsupported schema")?;
        check(!self.ref_words.is_empty() && !self.hyp_words.is_empty(), id, "empty word sequence")?;
        check(self.phone_to_word.len() == self.ref_phones.len(), id, "reference phone map length")?;
        check(self.hyp_phone_to_word.len() == self.hyp_phones.len(), id, "hypothesis phone map length")?;
        check(valid_map(&self.phone_to_word, self.ref_words.len()), id, "reference phone map")?;
        check(valid_map(&self.hyp_phone_to_word, self.hyp_words.len()), id, "hypothesis phone map")?;
        let s = &self.scores;
        check(s.phone.len() == self.ref_phones.len() && in_range(&s.phone, 2.0), id, "phone scores")?;
        for w in [&s.word.acc, &s.word.stress, &s.word.total] {
            check(w.len() == self.ref_words.len() && in_range(w, 10.0), id, "word scores")?;
        }
        check(in_range(&s.utt.as_array(), 10.0), id, "utterance scores")?;
        let h = &self.hyp_scores;
        check(
            h.phone.len() == self.hyp_phones.len() && h.phone_provenance.len() == h.phone.len(),
            id,
            "transferred phone scores",
        )?;
        for w in [&h.word.acc, &h.word.stress, &h.word.total] {
            check(w.len() == self.hyp_words.len(), id, "transferred word scores")?;
        }
        check(h.word_provenance.len() == self.hyp_words.len(), id, "word provenance")?;
        check(self.ssl.len() == SSL_STREAMS, id, "ssl stream count")?;
        check(self.ssl.iter().all(|v| v.len() == self.ssl[0].len()), id, "ssl lengths")?;
        check((0.0..=1.0).contains(&self.proficiency), id, "proficiency")?;
        self.grid()?;
        Ok(())
    }

    pub fn grid(&self) -> Result<LogPosteriorGrid> {
        LogPosteriorGrid::from_rows(self.posteriors.clone())
    }

    /// Reference-view targets normalised to 0-2.
    pub fn reference_targets(&self) -> AspectTargets {
        let w = &self.scores.word;
        AspectTargets {
            phone: self.scores.phone.clone(),
            word: [w.acc.clone(), w.stress.clone(), w.total.clone()].map(|v| scaled(&v)),
            utt: scaled_utt(&self.scores.utt),
        }
    }

    /// Transcription-view targets normalised to 0-2.
    pub fn transcribed_targets(&self) -> AspectTargets {
        let w = &self.hyp_scores.word;
        AspectTargets {
            phone: self.hyp_scores.phone.clone(),
            word: [w.acc.clone(), w.stress.clone(), w.total.clone()].map(|v| scaled(&v)),
            utt: scaled_utt(&self.scores.utt),
        }
    }

    /// Concatenated SSL streams.
    pub fn ssl_concat(&self) -> Vec<f64> {
        self.ssl.concat()
    }

    /// Replaces the transcription and recomputes the transferred scores.
    pub fn set_transcription(&mut self, hyp_words: Vec<usize>, lexicon: &Lexicon) -> Result<()> {
        let (hyp_phones, map) = lexicon.phones_of(&hyp_words);
        self.hyp_words = hyp_words;
        self.hyp_phones = hyp_phones;
        self.hyp_phone_to_word = map;
        self.hyp_scores = transfer_scores(self)?;
        Ok(())
    }
}

fn scaled(v: &[f64]) -> Vec<f64> {
    v.iter().map(|&x| normalize(Granularity::Word, x)).collect()
}

fn scaled_utt(utt: &UttScores) -> [f64; 5] {
    utt.as_array().map(|v| normalize(Granularity::Utterance, v))
}

fn valid_map(map: &[usize], words: usize) -> bool {
    !map.is_empty()
        && map[0] == 0
        && map.windows(2).all(|w| w[1] == w[0] || w[1] == w[0] + 1)
        && map[map.len() - 1] + 1 == words
}

/// Transfers reference scores onto the record's transcription. Words and
/// phones are aligned independently.
pub fn transfer_scores(record: &UtteranceRecord) -> Result<TransferredScores> {
    let word_ops = align(&record.hyp_words, &record.ref_words);
    let phone_ops = align(&record.hyp_phones, &record.ref_phones);
    let w = &record.scores.word;
    let acc = assign_scores(&word_ops, &w.acc)?;
    let stress = assign_scores(&word_ops, &w.stress)?;
    let total = assign_scores(&word_ops, &w.total)?;
    let phone = assign_scores(&phone_ops, &record.scores.phone)?;
    Ok(TransferredScores {
        phone: phone.scores,
        word: WordScores {
            acc: acc.scores,
            stress: stress.scores,
            total: total.scores,
        },
        phone_provenance: phone.provenance,
        word_provenance: acc.provenance,
    })
}

/// Per-utterance seed derived from the corpus seed.
pub fn utterance_seed(master: u64, index: usize) -> u64 {
    // splitmix64 finaliser
    let mut z = master ^ (index as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn utterance_id(index: usize) -> String {
    format!("utt{index:05}")
}

fn score(mean: f64, sd: f64, hi: f64, rng: &mut ChaCha8Rng) -> f64 {
    let noise = Normal::new(0.0, sd).expect("finite sd").sample(rng);
    (mean + noise).round().clamp(0.0, hi)
}

/// Mass on the canonical phone for a phone score.
fn canonical_mass(score: f64) -> f64 {
    match score as u8 {
        2 => 0.85,
        1 => 0.45,
        _ => 0.1,
    }
}

/// Frame posteriors for a phone sequence; higher scores concentrate more
/// mass on the canonical phone.
pub fn simulate_posteriors<R: Rng>(
    phones: &[usize],
    phone_scores: &[f64],
    config: &CorpusConfig,
    rng: &mut R,
) -> Result<LogPosteriorGrid> {
    if phones.is_empty() || phones.len() != phone_scores.len() {
        return Err(Error::InvalidArgument("phones and scores must be nonempty and aligned".into()));
    }
    let p = config.inventory;
    let blank = p;
    let jitter = Normal::new(0.0, 0.3).expect("finite sd");
    let (lo, hi) = config.frames_per_phone;
    let mut rows = Vec::new();
    for (&phone, &s) in phones.iter().zip(phone_scores) {
        if phone >= p {
            return Err(Error::UnknownSymbol {
                symbol: phone,
                inventory: p,
            });
        }
        let mut confusion = rng.gen_range(0..p - 1);
        if confusion >= phone {
            confusion += 1;
        }
        let frames = rng.gen_range(lo..=hi);
        let m = canonical_mass(s);
        for _ in 0..frames {
            let mut row = vec![0.0; p + 1];
            let spare = 1.0 - m - 0.05;
            row[phone] = m;
            row[confusion] = 0.7 * spare;
            row[blank] = 0.05;
            let others = 0.3 * spare / (p - 1) as f64;
            for (q, v) in row.iter_mut().enumerate().take(p) {
                if q != phone {
                    *v += others;
                }
            }
            for v in row.iter_mut() {
                *v *= f64::exp(jitter.sample(rng));
            }
            let z: f64 = row.iter().sum();
            rows.push(row.iter().map(|v| (v / z).ln()).collect());
        }
    }
    LogPosteriorGrid::from_rows(rows)
}

/// Corrupts a word sequence: substitutions, deletions and insertions in a
/// 3:1:1 ratio with combined rate `target_wer`. At least one word survives.
pub fn inject_asr_errors<R: Rng>(
    words: &[usize],
    target_wer: f64,
    lexicon: &Lexicon,
    rng: &mut R,
) -> Vec<usize> {
    if target_wer <= 0.0 {
        return words.to_vec();
    }
    let (sub, del, ins) = (0.6 * target_wer, 0.2 * target_wer, 0.2 * target_wer);
    let mut out = Vec::with_capacity(words.len() + 2);
    for &w in words {
        let u: f64 = rng.gen();
        if u < sub {
            out.push(lexicon.confusable(w, rng));
        } else if u >= sub + del {
            out.push(w);
        }
        if rng.gen::<f64>() < ins {
            out.push(lexicon.confusable(w, rng));
        }
    }
    if out.is_empty() {
        out.push(words[rng.gen_range(0..words.len())]);
    }
    out
}

/// Fixed projections mapping utterance descriptors to SSL-like vectors.
#[derive(Clone, Debug)]
pub struct SslProjector {
    /// `SSL_STREAMS` matrices, each `dim x FEATURES`, row-major.
    maps: Vec<Vec<f64>>,
}

impl SslProjector {
    /// Five utterance scores, length, bias.
    pub const FEATURES: usize = 7;
    const LATENT_NOISE: f64 = 0.15;
    const CHANNEL_NOISE: f64 = 0.3;

    pub fn new(dim: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x55AA_55AA);
        let dist = Normal::new(0.0, 1.0).expect("unit normal");
        let maps = (0..SSL_STREAMS)
            .map(|_| (0..dim * Self::FEATURES).map(|_| dist.sample(&mut rng)).collect())
            .collect();
        Self { maps }
    }

    /// Three vectors linearly related to noisy utterance scores and length.
    pub fn project<R: Rng>(&self, utt: &UttScores, phones: usize, rng: &mut R) -> Vec<Vec<f64>> {
        let latent_noise = Normal::new(0.0, Self::LATENT_NOISE).expect("finite sd");
        let channel = Normal::new(0.0, Self::CHANNEL_NOISE).expect("finite sd");
        let mut f: Vec<f64> = utt
            .as_array()
            .iter()
            .map(|s| s / 10.0 - 0.5 + latent_noise.sample(rng))
            .collect();
        f.push(phones as f64 / 20.0 - 0.5);
        f.push(1.0);
        self.maps
            .iter()
            .map(|a| {
                a.chunks(Self::FEATURES)
                    .map(|row| row.iter().zip(&f).map(|(w, x)| w * x).sum::<f64>() + channel.sample(rng))
                    .collect()
            })
            .collect()
    }
}

/// SSL-like vectors of a record, drawn from `rng`.
pub fn simulate_ssl_vectors<R: Rng>(
    record: &UtteranceRecord,
    projector: &SslProjector,
    rng: &mut R,
) -> Vec<Vec<f64>> {
    projector.project(&record.scores.utt, record.ref_phones.len(), rng)
}

fn generate_one(
    index: usize,
    config: &CorpusConfig,
    lexicon: &Lexicon,
    projector: &SslProjector,
) -> Result<UtteranceRecord> {
    let seed = utterance_seed(config.seed, index);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rho: f64 = rng.gen();
    let (lo, hi) = config.words_per_utt;
    let n_words = rng.gen_range(lo..=hi);
    let ref_words: Vec<usize> = (0..n_words).map(|_| rng.gen_range(0..lexicon.len())).collect();
    let (ref_phones, phone_to_word) = lexicon.phones_of(&ref_words);

    let quality_noise = Normal::new(0.0, 0.2).expect("finite sd");
    let quality: Vec<f64> = ref_phones
        .iter()
        .map(|_| (rho + quality_noise.sample(&mut rng)).clamp(0.0, 1.0))
        .collect();
    let phone: Vec<f64> = quality.iter().map(|q| (2.0 * q).round()).collect();

    let mut word = WordScores::default();
    for w in 0..n_words {
        let q: Vec<f64> = (0..ref_phones.len())
            .filter(|&i| phone_to_word[i] == w)
            .map(|i| quality[i])
            .collect();
        let mean_q = q.iter().sum::<f64>() / q.len() as f64;
        let acc = score(10.0 * mean_q, 0.8, 10.0, &mut rng);
        let stress = score(10.0 * rho, 1.5, 10.0, &mut rng);
        word.acc.push(acc);
        word.stress.push(stress);
        word.total.push((0.7 * acc + 0.3 * stress).round());
    }

    // utterance-level deviation not visible in the phones
    let holistic = Normal::new(0.0, 0.1).expect("finite sd").sample(&mut rng);
    let level = (rho + holistic).clamp(0.0, 1.0);
    let acc = score(10.0 * level, 0.4, 10.0, &mut rng);
    let flu = score(10.0 * rho, 1.0, 10.0, &mut rng);
    let comp = score(10.0 * (0.5 + 0.5 * rho), 0.6, 10.0, &mut rng);
    let pros = score(10.0 * rho, 1.0, 10.0, &mut rng);
    let total = ((acc + flu + pros) / 3.0).round();
    let utt = UttScores {
        acc,
        flu,
        comp,
        pros,
        total,
    };

    let grid = simulate_posteriors(&ref_phones, &phone, config, &mut rng)?;
    let hyp_words = inject_asr_errors(&ref_words, config.target_wer, lexicon, &mut rng);
    let mut record = UtteranceRecord {
        schema: SCHEMA_VERSION,
        utt_id: utterance_id(index),
        ref_words,
        ref_phones,
        phone_to_word,
        scores: Scores { phone, word, utt },
        hyp_words: Vec::new(),
        hyp_phones: Vec::new(),
        hyp_phone_to_word: Vec::new(),
        hyp_scores: TransferredScores::default(),
        posteriors: grid.rows(),
        ssl: Vec::new(),
        proficiency: rho,
        seed,
    };
    record.ssl = simulate_ssl_vectors(&record, projector, &mut rng);
    record.set_transcription(hyp_words, lexicon)?;
    Ok(record)
}

/// Generates `config.utterances` records in utt_id order. Each record
/// depends only on the corpus seed and its index.
pub fn generate_corpus(config: &CorpusConfig) -> Result<Vec<UtteranceRecord>> {
    let lexicon = Lexicon::generate(config)?;
    let projector = SslProjector::new(config.ssl_dim, config.seed);
    (0..config.utterances)
        .into_par_iter()
        .map(|i| generate_one(i, config, &lexicon, &projector))
        .collect()
}

pub fn write_jsonl<W: Write>(mut out: W, records: &[UtteranceRecord]) -> Result<()> {
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_jsonl<R: BufRead>(input: R) -> Result<Vec<UtteranceRecord>> {
    let mut records = Vec::new();
    for (n, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: UtteranceRecord = serde_json::from_str(&line)
            .map_err(|e| Error::Corpus(format!("line {}: {e}", n + 1)))?;
        record.validate()?;
        records.push(record);
    }
    Ok(records)
}
