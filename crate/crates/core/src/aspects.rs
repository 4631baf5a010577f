use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Granularity {
    Phone,
    Word,
    Utterance,
}

impl Granularity {
    pub const ALL: [Granularity; 3] = [Granularity::Phone, Granularity::Word, Granularity::Utterance];

    pub fn aspects(self) -> &'static [Aspect] {
        match self {
            Granularity::Phone => &Aspect::ALL[0..1],
            Granularity::Word => &Aspect::ALL[1..4],
            Granularity::Utterance => &Aspect::ALL[4..9],
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

/// A scored pronunciation dimension at one granularity.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aspect {
    PhoneAccuracy,
    WordAccuracy,
    WordStress,
    WordTotal,
    UttAccuracy,
    UttFluency,
    UttCompleteness,
    UttProsody,
    UttTotal,
}

impl Aspect {
    pub const ALL: [Aspect; 9] = [
        Aspect::PhoneAccuracy,
        Aspect::WordAccuracy,
        Aspect::WordStress,
        Aspect::WordTotal,
        Aspect::UttAccuracy,
        Aspect::UttFluency,
        Aspect::UttCompleteness,
        Aspect::UttProsody,
        Aspect::UttTotal,
    ];

    pub fn granularity(self) -> Granularity {
        match self {
            Aspect::PhoneAccuracy => Granularity::Phone,
            Aspect::WordAccuracy | Aspect::WordStress | Aspect::WordTotal => Granularity::Word,
            _ => Granularity::Utterance,
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Aspect::PhoneAccuracy => "phone_accuracy",
            Aspect::WordAccuracy => "word_accuracy",
            Aspect::WordStress => "word_stress",
            Aspect::WordTotal => "word_total",
            Aspect::UttAccuracy => "utt_accuracy",
            Aspect::UttFluency => "utt_fluency",
            Aspect::UttCompleteness => "utt_completeness",
            Aspect::UttProsody => "utt_prosody",
            Aspect::UttTotal => "utt_total",
        }
    }
}

/// Normalised (0-2) targets for one utterance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AspectTargets {
    pub phone: Vec<f64>,
    pub word: [Vec<f64>; 3],
    pub utt: [f64; 5],
}

impl AspectTargets {
    /// Target values of one aspect, one per position.
    pub fn values(&self, aspect: Aspect) -> Vec<f64> {
        match aspect.granularity() {
            Granularity::Phone => self.phone.clone(),
            Granularity::Word => self.word[aspect.index() - 1].clone(),
            Granularity::Utterance => vec![self.utt[aspect.index() - 4]],
        }
    }
}

/// Largest raw human score at a granularity.
pub fn raw_max(granularity: Granularity) -> f64 {
    match granularity {
        Granularity::Phone => 2.0,
        _ => 10.0,
    }
}

/// Maps a raw score onto the common 0-2 scale.
pub fn normalize(granularity: Granularity, raw: f64) -> f64 {
    match granularity {
        Granularity::Phone => raw,
        _ => raw / 5.0,
    }
}

/// Inverse of [`normalize`].
pub fn denormalize(granularity: Granularity, value: f64) -> f64 {
    match granularity {
        Granularity::Phone => value,
        _ => value * 5.0,
    }
}
