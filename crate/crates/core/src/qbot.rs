//! The questioner. Q-BOT sees two segmented frames and the dialog history,
//! asks questions, and writes the final description.

use rand::Rng;

use crate::attention::{Attended, ImAttention, MmAttention, PreparedModality};
use crate::corpus::{FeatureShape, VideoFeatures};
use crate::decode::{beam_search, greedy_decode, Decoded, RecurrentDecoder};
use crate::dialog::HistoryNodes;
use crate::error::{Error, Result};
use crate::graph::{Graph, NodeId};
use crate::model::{AttentionKind, Model, ModelConfig, QbotFrames};
use crate::nn::{Linear, Lstm, LstmState};
use crate::params::{ParamId, ParamStore};
use crate::tensor::Tensor;

#[derive(Clone, Debug)]
pub struct QBot {
    /// Modalities: one per frame, then history.
    pub attention: MmAttention,
    pub im: ImAttention,
    pub null_question: ParamId,
    pub visual_lstm: Lstm,
    pub question_decoder: RecurrentDecoder,
    pub select_query: Linear,
    pub select_key: Linear,
    pub description: RecurrentDecoder,
    pub description_init_h: Linear,
    pub description_init_c: Linear,
    pub frames: usize,
}

impl QBot {
    pub fn new<R: Rng>(store: &mut ParamStore, config: &ModelConfig, rng: &mut R) -> Self {
        let d = &config.dims;
        let (frames, _) = config.qbot_frame_layout();
        let names: Vec<String> = (0..frames).map(|i| format!("frame{i}")).collect();
        let mut specs: Vec<(&str, usize, usize)> = names.iter().map(|n| (n.as_str(), config.features.channels, d.attended_visual)).collect();
        specs.push(("history", d.history, d.history));
        let v = config.vocab_size;
        Self {
            attention: MmAttention::new(store, "qbot.mm", &specs, d.attention, rng),
            im: ImAttention::new(store, "qbot.im", d.question, d.history, d.attention, rng),
            null_question: store.add_uniform("qbot.null_question", 1, d.question, d.question, rng),
            visual_lstm: Lstm::new(store, "qbot.visual_lstm", d.attended_visual, d.visual_state, rng),
            question_decoder: RecurrentDecoder::new(store, "qbot.question_decoder", v, d.word, d.history, d.visual_state, rng),
            select_query: Linear::new(store, "qbot.select.query", d.history + d.visual_state, d.selection, true, rng),
            select_key: Linear::new(store, "qbot.select.key", d.question, d.selection, true, rng),
            description: RecurrentDecoder::new(store, "qbot.description", v, d.word, d.history, d.description_hidden, rng),
            description_init_h: Linear::new(store, "qbot.description_init.h", d.visual_state, d.description_hidden, true, rng),
            description_init_c: Linear::new(store, "qbot.description_init.c", d.visual_state, d.description_hidden, true, rng),
            frames,
        }
    }

    fn history_modality(&self) -> usize {
        self.frames
    }
}

/// Something an agent could be handed as input.
#[derive(Clone, Debug)]
pub enum Observation {
    QbotFrames(Vec<Tensor>),
    AbotFrames(Vec<Tensor>),
    Audio(Tensor),
    InputDescription(Vec<usize>),
}

impl Observation {
    fn name(&self) -> &'static str {
        match self {
            Self::QbotFrames(_) => "segmented frames",
            Self::AbotFrames(_) => "full video frames",
            Self::Audio(_) => "audio",
            Self::InputDescription(_) => "input description",
        }
    }
}

/// Everything Q-BOT is allowed to see besides the dialog history.
#[derive(Clone, Debug, Default)]
pub struct QBotView {
    frames: Vec<Tensor>,
}

impl QBotView {
    /// Admits only inputs permitted to Q-BOT under `policy`; audio, the input
    /// description and the full frames (unless `policy` is `Full`) are refused.
    pub fn from_observations(observations: Vec<Observation>, policy: QbotFrames) -> Result<Self> {
        let mut frames = Vec::new();
        for obs in observations {
            match (obs, policy) {
                (Observation::QbotFrames(f), QbotFrames::Segmented2) | (Observation::AbotFrames(f), QbotFrames::Full) => frames = f,
                (Observation::QbotFrames(_), QbotFrames::None) => {}
                (other, _) => {
                    return Err(Error::InvalidArgument(format!("Q-BOT may not observe the {}", other.name())));
                }
            }
        }
        Ok(Self { frames })
    }

    pub fn from_features(features: &VideoFeatures, shape: &FeatureShape, policy: QbotFrames) -> Result<Self> {
        let obs = match policy {
            QbotFrames::Full => Observation::AbotFrames(features.abot_frames(shape)),
            _ => Observation::QbotFrames(features.qbot_frames(shape)),
        };
        Self::from_observations(vec![obs], policy)
    }

    pub fn frames(&self) -> &[Tensor] {
        &self.frames
    }
}

/// Frame inputs placed on a graph, with attention utilities precomputed.
pub struct QBotPrepared {
    pub frames: Vec<NodeId>,
    pub prepared: Vec<PreparedModality>,
}

#[derive(Clone, Debug)]
pub struct QBotContext {
    pub attended_frames: Vec<NodeId>,
    pub visual: LstmState,
    pub attended_history: Attended,
    /// Attended history fused with the running summary, `1 × d_H`.
    pub context: NodeId,
    pub round: usize,
}

impl Model {
    pub fn qbot_prepare(&self, g: &mut Graph, view: &QBotView) -> Result<QBotPrepared> {
        let q = &self.qbot;
        if view.frames.len() != q.frames {
            return Err(Error::InvalidArgument(format!("Q-BOT expects {} frames, got {}", q.frames, view.frames.len())));
        }
        let frames: Vec<NodeId> = view.frames.iter().map(|f| g.constant(f.clone())).collect();
        let prepared = if self.config.ablations.attention == AttentionKind::Mm {
            frames.iter().enumerate().map(|(i, &f)| q.attention.prepare(g, i, f)).collect::<Result<_>>()?
        } else {
            Vec::new()
        };
        Ok(QBotPrepared { frames, prepared })
    }

    /// Recurrent pass over the attended frames in temporal order from a zero state.
    pub fn qbot_visual_state(&self, g: &mut Graph, attended: &[NodeId]) -> LstmState {
        let lstm = &self.qbot.visual_lstm;
        let mut state = lstm.zero_state(g, 1);
        for &a in attended {
            state = lstm.step(g, a, state);
        }
        state
    }

    pub fn qbot_context(&self, g: &mut Graph, prep: &QBotPrepared, hist: &HistoryNodes, round: usize) -> Result<QBotContext> {
        let q = &self.qbot;
        let null = g.param(self.history.null_history);
        let elements = hist.pairs.unwrap_or(null);
        let (attended_frames, attended_history) = match self.config.ablations.attention {
            AttentionKind::Mm => {
                let h = q.attention.prepare(g, q.history_modality(), elements)?;
                let mut inputs: Vec<Option<PreparedModality>> = prep.prepared.iter().copied().map(Some).collect();
                inputs.push(Some(h));
                let out = q.attention.attend(g, &inputs);
                let frames = out[..q.frames].iter().map(|a| a.expect("frame attended").output).collect::<Vec<_>>();
                (frames, out[q.frames].expect("history attended"))
            }
            AttentionKind::Im => {
                let frames = prep.frames.iter().enumerate().map(|(i, &f)| q.attention.pool(g, i, f).output).collect::<Vec<_>>();
                let question = match hist.last_question {
                    Some(qe) => qe,
                    None => g.param(q.null_question),
                };
                (frames, q.im.forward(g, hist.pairs, null, question)?)
            }
            AttentionKind::None => {
                let frames = prep.frames.iter().enumerate().map(|(i, &f)| q.attention.pool(g, i, f).output).collect::<Vec<_>>();
                (frames, q.attention.pool(g, q.history_modality(), elements))
            }
        };
        let visual = self.qbot_visual_state(g, &attended_frames);
        let context = self.history.fuse(g, attended_history.output, hist.summary, self.config.ablations.dynamic_update);
        Ok(QBotContext { attended_frames, visual, attended_history, context, round })
    }

    /// `1 × d_sel` query for question selection.
    pub fn question_query(&self, g: &mut Graph, ctx: &QBotContext) -> NodeId {
        let x = g.concat_cols(&[ctx.context, ctx.visual.hidden]);
        self.qbot.select_query.forward(g, x)
    }

    /// `1 × N` selection logits against projected candidate keys (`N × d_sel`).
    pub fn question_logits(&self, g: &mut Graph, ctx: &QBotContext, keys: NodeId) -> NodeId {
        let query = self.question_query(g, ctx);
        g.matmul_t(query, keys)
    }

    pub fn question_nll(&self, g: &mut Graph, ctx: &QBotContext, target: &[usize]) -> (NodeId, usize) {
        self.qbot.question_decoder.teacher_forced_nll(g, ctx.context, ctx.visual, target)
    }

    pub fn generate_question(&self, g: &Graph, ctx: &QBotContext, max_len: usize) -> Decoded {
        let stepper = self.qbot.question_decoder.stepper(
            &self.store,
            g.value(ctx.context).clone(),
            g.value(ctx.visual.hidden).clone(),
            g.value(ctx.visual.cell).clone(),
        );
        greedy_decode(&stepper, max_len)
    }

    pub fn description_init(&self, g: &mut Graph, ctx: &QBotContext) -> LstmState {
        let q = &self.qbot;
        LstmState {
            hidden: q.description_init_h.forward(g, ctx.visual.hidden),
            cell: q.description_init_c.forward(g, ctx.visual.cell),
        }
    }

    pub fn description_log_probs(&self, g: &mut Graph, ctx: &QBotContext, target: &[usize]) -> NodeId {
        let init = self.description_init(g, ctx);
        self.qbot.description.teacher_forced_log_probs(g, ctx.context, init, target)
    }

    pub fn description_nll(&self, g: &mut Graph, ctx: &QBotContext, target: &[usize]) -> (NodeId, usize) {
        let init = self.description_init(g, ctx);
        self.qbot.description.teacher_forced_nll(g, ctx.context, init, target)
    }

    pub fn generate_description(&self, g: &mut Graph, ctx: &QBotContext, beam_width: usize, max_len: usize) -> Decoded {
        let init = self.description_init(g, ctx);
        let stepper = self.qbot.description.stepper(
            &self.store,
            g.value(ctx.context).clone(),
            g.value(init.hidden).clone(),
            g.value(init.cell).clone(),
        );
        if beam_width <= 1 {
            greedy_decode(&stepper, max_len)
        } else {
            beam_search(&stepper, beam_width, max_len)
        }
    }
}
