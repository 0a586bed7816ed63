//! Model configuration and the parameter registry for both agents.

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::abot::ABot;
use crate::attention::TextEncoders;
use crate::corpus::{FeatureShape, Vocabulary};
use crate::dialog::HistoryModule;
use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::qbot::QBot;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DialogMode {
    Generative,
    Discriminative,
}

impl FromStr for DialogMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gen" | "generative" => Ok(Self::Generative),
            "disc" | "discriminative" => Ok(Self::Discriminative),
            _ => Err(Error::InvalidArgument(format!("unknown mode `{s}` (expected gen or disc)"))),
        }
    }
}

impl fmt::Display for DialogMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Generative => "gen",
            Self::Discriminative => "disc",
        })
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttentionKind {
    #[default]
    Mm,
    Im,
    None,
}

impl FromStr for AttentionKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mm" => Ok(Self::Mm),
            "im" => Ok(Self::Im),
            "none" => Ok(Self::None),
            _ => Err(Error::InvalidArgument(format!("unknown attention `{s}` (expected mm, im or none)"))),
        }
    }
}

/// Which frames Q-BOT receives.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QbotFrames {
    /// The two semantic-segmented start/end frames.
    #[default]
    Segmented2,
    /// No visual input at all.
    None,
    /// A-BOT's four frames.
    Full,
}

impl FromStr for QbotFrames {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "segmented2" => Ok(Self::Segmented2),
            "none" => Ok(Self::None),
            "full" => Ok(Self::Full),
            _ => Err(Error::InvalidArgument(format!("unknown qbot frames `{s}` (expected segmented2, none or full)"))),
        }
    }
}

/// Architectural switches. The default is the full model.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ablations {
    pub attention: AttentionKind,
    pub av_lstm: bool,
    pub audio: bool,
    pub caption: bool,
    pub history_abot: bool,
    pub qbot_frames: QbotFrames,
    pub dynamic_update: bool,
}

impl Default for Ablations {
    fn default() -> Self {
        Self {
            attention: AttentionKind::Mm,
            av_lstm: true,
            audio: true,
            caption: true,
            history_abot: true,
            qbot_frames: QbotFrames::Segmented2,
            dynamic_update: true,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelDims {
    pub word: usize,
    /// d_H
    pub history: usize,
    /// d_C
    pub caption: usize,
    /// d_q
    pub question: usize,
    /// d_a
    pub answer: usize,
    pub attended_visual: usize,
    pub attended_audio: usize,
    /// Utility space of the attention scores.
    pub attention: usize,
    /// Visual LSTM state; also the question decoder's hidden size.
    pub visual_state: usize,
    pub av_state: usize,
    pub description_hidden: usize,
    pub answer_hidden: usize,
    /// d_p, the width of one new pair in the fused history summary.
    pub pair: usize,
    /// Shared space of the selection inner products.
    pub selection: usize,
}

impl ModelDims {
    pub const FULL: ModelDims = ModelDims {
        word: 128,
        history: 256,
        caption: 256,
        question: 128,
        answer: 128,
        attended_visual: 128,
        attended_audio: 128,
        attention: 128,
        visual_state: 128,
        av_state: 256,
        description_hidden: 256,
        answer_hidden: 640,
        pair: 128,
        selection: 128,
    };

    /// Every width divided by `factor`.
    pub fn scaled_down(factor: usize) -> ModelDims {
        let p = Self::FULL;
        let d = |x: usize| (x / factor).max(1);
        ModelDims {
            word: d(p.word),
            history: d(p.history),
            caption: d(p.caption),
            question: d(p.question),
            answer: d(p.answer),
            attended_visual: d(p.attended_visual),
            attended_audio: d(p.attended_audio),
            attention: d(p.attention),
            visual_state: d(p.visual_state),
            av_state: d(p.av_state),
            description_hidden: d(p.description_hidden),
            answer_hidden: d(p.answer_hidden),
            pair: d(p.pair),
            selection: d(p.selection),
        }
    }

    pub fn toy() -> ModelDims {
        Self::scaled_down(4)
    }

    pub fn validate(&self) -> Result<()> {
        if self.pair * 2 != self.history {
            return Err(Error::InvalidArgument(format!("pair dim {} must be half the history dim {}", self.pair, self.history)));
        }
        if self.attended_audio != self.attended_visual {
            return Err(Error::InvalidArgument("attended audio and visual dims must match".into()));
        }
        if self.av_state != self.attended_audio + self.attended_visual {
            return Err(Error::InvalidArgument("av state must equal attended audio + attended visual".into()));
        }
        Ok(())
    }
}

impl Default for ModelDims {
    fn default() -> Self {
        Self::FULL
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub mode: DialogMode,
    pub dims: ModelDims,
    pub features: FeatureShape,
    pub vocab_size: usize,
    pub ablations: Ablations,
}

impl ModelConfig {
    pub fn full(mode: DialogMode, vocab_size: usize) -> Self {
        Self { mode, dims: ModelDims::FULL, features: FeatureShape::FULL, vocab_size, ablations: Ablations::default() }
    }

    pub fn toy(mode: DialogMode, vocab_size: usize) -> Self {
        Self { mode, dims: ModelDims::toy(), features: FeatureShape::TOY, vocab_size, ablations: Ablations::default() }
    }

    /// Number of frames Q-BOT attends over and their spatial size.
    pub fn qbot_frame_layout(&self) -> (usize, usize) {
        match self.ablations.qbot_frames {
            QbotFrames::Segmented2 => (self.features.qbot_frames, self.features.qbot_locations),
            QbotFrames::None => (0, 0),
            QbotFrames::Full => (self.features.abot_frames, self.features.abot_locations),
        }
    }
}

/// Both agents, the shared encoders and their parameters.
#[derive(Clone, Debug)]
pub struct Model {
    pub config: ModelConfig,
    pub vocab: Vocabulary,
    pub store: ParamStore,
    pub encoders: TextEncoders,
    pub history: HistoryModule,
    pub qbot: QBot,
    pub abot: ABot,
}

impl Model {
    /// Registers every parameter in a fixed order from `seed`. The config's
    /// vocabulary size is taken from `vocab`.
    pub fn new(mut config: ModelConfig, vocab: Vocabulary, seed: u64) -> Result<Self> {
        config.vocab_size = vocab.len();
        config.dims.validate()?;
        if config.vocab_size < 5 {
            return Err(Error::InvalidArgument(format!("vocabulary of {} is too small", config.vocab_size)));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let d = &config.dims;
        let encoders = TextEncoders::new(&mut store, config.vocab_size, d.word, d.history, d.caption, d.question, d.answer, &mut rng);
        let history = HistoryModule::new(&mut store, d, &mut rng);
        let qbot = QBot::new(&mut store, &config, &mut rng);
        let abot = ABot::new(&mut store, &config, &mut rng);
        log::debug!("model with {} parameters in {} tensors", store.scalar_count(), store.len());
        Ok(Self { config, vocab, store, encoders, history, qbot, abot })
    }

    pub fn mode(&self) -> DialogMode {
        self.config.mode
    }

    /// Parameters used by the current mode (the generators of the other
    /// mode are registered but idle).
    pub fn active_parameter_count(&self) -> usize {
        let idle: &[&str] = match self.config.mode {
            DialogMode::Generative => &["qbot.select", "abot.select"],
            DialogMode::Discriminative => &["qbot.question_decoder", "abot.answer_decoder", "abot.answer_init"],
        };
        self.store
            .iter()
            .filter(|(_, p)| !idle.iter().any(|prefix| p.name.starts_with(prefix)))
            .map(|(_, p)| p.value.len())
            .sum()
    }
}
