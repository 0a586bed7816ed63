//! The answerer. A-BOT sees the full clip, its audio, the input description
//! and the dialog history, and answers Q-BOT's questions.

use rand::Rng;

use crate::attention::{Attended, EncoderRole, ImAttention, MmAttention, PreparedModality};
use crate::candidates::CandidateSet;
use crate::corpus::{FeatureShape, Tokens, VideoFeatures};
use crate::decode::{greedy_decode, Decoded, RecurrentDecoder};
use crate::dialog::HistoryNodes;
use crate::error::{Error, Result};
use crate::graph::{Graph, NodeId};
use crate::model::{AttentionKind, Model, ModelConfig};
use crate::nn::{Linear, Lstm, LstmState};
use crate::params::{ParamId, ParamStore};
use crate::tensor::Tensor;

pub const AUDIO: usize = 0;
pub const FIRST_FRAME: usize = 1;

/// The fallback answer when no ground-truth answer is known.
pub const DONT_KNOW: [&str; 3] = ["i", "don't", "know"];

pub fn dont_know() -> Tokens {
    DONT_KNOW.iter().map(|s| s.to_string()).collect()
}

#[derive(Clone, Debug)]
pub struct ABot {
    /// Modalities: audio, each frame, input description, history.
    pub attention: MmAttention,
    pub im: ImAttention,
    pub null_caption: ParamId,
    pub av_lstm: Lstm,
    pub answer_decoder: RecurrentDecoder,
    pub answer_init_h: Linear,
    pub answer_init_c: Linear,
    pub select_query: Linear,
    pub select_key: Linear,
    pub frames: usize,
}

impl ABot {
    pub fn new<R: Rng>(store: &mut ParamStore, config: &ModelConfig, rng: &mut R) -> Self {
        let d = &config.dims;
        let f = &config.features;
        let names: Vec<String> = (0..f.abot_frames).map(|i| format!("frame{i}")).collect();
        let mut specs: Vec<(&str, usize, usize)> = vec![("audio", f.audio, d.attended_audio)];
        specs.extend(names.iter().map(|n| (n.as_str(), f.channels, d.attended_visual)));
        specs.push(("caption", d.caption, d.caption));
        specs.push(("history", d.history, d.history));
        let context = d.history + d.caption + d.question;
        Self {
            attention: MmAttention::new(store, "abot.mm", &specs, d.attention, rng),
            im: ImAttention::new(store, "abot.im", d.question, d.history, d.attention, rng),
            null_caption: store.add_uniform("abot.null_caption", 1, d.caption, d.caption, rng),
            av_lstm: Lstm::new(store, "abot.av_lstm", d.attended_visual, d.av_state, rng),
            answer_decoder: RecurrentDecoder::new(store, "abot.answer_decoder", config.vocab_size, d.word, context, d.answer_hidden, rng),
            answer_init_h: Linear::new(store, "abot.answer_init.h", d.av_state, d.answer_hidden, true, rng),
            answer_init_c: Linear::new(store, "abot.answer_init.c", d.av_state, d.answer_hidden, true, rng),
            select_query: Linear::new(store, "abot.select.query", context + d.av_state, d.selection, true, rng),
            select_key: Linear::new(store, "abot.select.key", d.answer, d.selection, true, rng),
            frames: f.abot_frames,
        }
    }

    pub fn caption_modality(&self) -> usize {
        FIRST_FRAME + self.frames
    }

    pub fn history_modality(&self) -> usize {
        FIRST_FRAME + self.frames + 1
    }
}

/// A-BOT's inputs: full frames, audio, and the encoded input description.
#[derive(Clone, Debug)]
pub struct ABotView {
    pub frames: Vec<Tensor>,
    pub audio: Tensor,
    pub caption: Vec<usize>,
}

impl ABotView {
    pub fn from_features(features: &VideoFeatures, shape: &FeatureShape, caption: Vec<usize>) -> Self {
        Self { frames: features.abot_frames(shape), audio: features.audio_vector(), caption }
    }
}

pub struct ABotPrepared {
    pub frames: Vec<NodeId>,
    pub audio: NodeId,
    /// Caption encoder states, `T × d_C`.
    pub caption: NodeId,
    /// MM-prepared audio, frames and caption, indexed like the modalities.
    pub prepared: Vec<Option<PreparedModality>>,
}

#[derive(Clone, Debug)]
pub struct ABotContext {
    pub attended_audio: Option<NodeId>,
    pub attended_frames: Vec<NodeId>,
    pub av: LstmState,
    pub attended_caption: NodeId,
    pub attended_history: Attended,
    /// Attended history fused with the running summary, `1 × d_H`.
    pub context: NodeId,
    /// r_q, the current question's encoding.
    pub question: NodeId,
}

impl Model {
    pub fn abot_prepare(&self, g: &mut Graph, view: &ABotView) -> Result<ABotPrepared> {
        let a = &self.abot;
        if view.frames.len() != a.frames {
            return Err(Error::InvalidArgument(format!("A-BOT expects {} frames, got {}", a.frames, view.frames.len())));
        }
        let frames: Vec<NodeId> = view.frames.iter().map(|f| g.constant(f.clone())).collect();
        let audio = g.constant(view.audio.clone());
        let caption_ids: &[usize] = &view.caption;
        if caption_ids.is_empty() {
            return Err(Error::EmptySequence);
        }
        let (_, caption) = self.encoders.caption.encode_one(g, caption_ids);
        let abl = &self.config.ablations;
        let mut prepared = vec![None; a.history_modality() + 1];
        if abl.attention == AttentionKind::Mm {
            if abl.audio {
                prepared[AUDIO] = Some(a.attention.prepare(g, AUDIO, audio)?);
            }
            for (i, &f) in frames.iter().enumerate() {
                prepared[FIRST_FRAME + i] = Some(a.attention.prepare(g, FIRST_FRAME + i, f)?);
            }
            if abl.caption {
                prepared[a.caption_modality()] = Some(a.attention.prepare(g, a.caption_modality(), caption)?);
            }
        }
        Ok(ABotPrepared { frames, audio, caption, prepared })
    }

    /// Recurrent pass: audio first (unless ablated), then frames in order.
    pub fn abot_av_state(&self, g: &mut Graph, audio: Option<NodeId>, frames: &[NodeId]) -> LstmState {
        let lstm = &self.abot.av_lstm;
        let mut state = lstm.zero_state(g, 1);
        for &x in audio.iter().chain(frames) {
            state = lstm.step(g, x, state);
        }
        state
    }

    pub fn abot_context(&self, g: &mut Graph, prep: &ABotPrepared, hist: &HistoryNodes, question: NodeId) -> Result<ABotContext> {
        let a = &self.abot;
        let abl = self.config.ablations;
        let null = g.param(self.history.null_history);
        let pairs = if abl.history_abot { hist.pairs } else { None };
        let elements = pairs.unwrap_or(null);
        let (attended_audio, attended_frames, caption, attended_history) = match abl.attention {
            AttentionKind::Mm => {
                let mut inputs = prep.prepared.clone();
                inputs[a.history_modality()] = Some(a.attention.prepare(g, a.history_modality(), elements)?);
                let out = a.attention.attend(g, &inputs);
                let frames = (0..a.frames).map(|i| out[FIRST_FRAME + i].expect("frame attended").output).collect::<Vec<_>>();
                (
                    out[AUDIO].map(|x| x.output),
                    frames,
                    out[a.caption_modality()].map(|x| x.output),
                    out[a.history_modality()].expect("history attended"),
                )
            }
            kind => {
                let audio = abl.audio.then(|| a.attention.pool(g, AUDIO, prep.audio).output);
                let frames = prep.frames.iter().enumerate().map(|(i, &f)| a.attention.pool(g, FIRST_FRAME + i, f).output).collect::<Vec<_>>();
                let caption = abl.caption.then(|| a.attention.pool(g, a.caption_modality(), prep.caption).output);
                let history = if kind == AttentionKind::Im {
                    a.im.forward(g, pairs, null, question)?
                } else {
                    a.attention.pool(g, a.history_modality(), elements)
                };
                (audio, frames, caption, history)
            }
        };
        let attended_caption = match caption {
            Some(c) => c,
            None => g.param(a.null_caption),
        };
        let av = if abl.av_lstm {
            self.abot_av_state(g, attended_audio, &attended_frames)
        } else {
            let d = &self.config.dims;
            let audio = match attended_audio {
                Some(x) => x,
                None => g.constant(Tensor::zeros(1, d.attended_audio)),
            };
            let stacked = g.stack_rows(&attended_frames);
            let visual = g.mean_rows(stacked);
            LstmState { hidden: g.concat_cols(&[audio, visual]), cell: g.constant(Tensor::zeros(1, d.av_state)) }
        };
        let summary = if abl.history_abot { hist.summary } else { null };
        let context = self.history.fuse(g, attended_history.output, summary, abl.dynamic_update);
        Ok(ABotContext { attended_audio, attended_frames, av, attended_caption, attended_history, context, question })
    }

    /// Encodes question tokens as r_q (`1 × d_q`).
    pub fn encode_question(&self, g: &mut Graph, tokens: &[usize]) -> Result<NodeId> {
        self.encoders.encode(g, EncoderRole::QuestionCandidate, tokens)
    }

    /// concat(a_H, a_c, r_q), the answer decoder's per-step context.
    pub fn answer_decoder_context(&self, g: &mut Graph, ctx: &ABotContext) -> NodeId {
        g.concat_cols(&[ctx.context, ctx.attended_caption, ctx.question])
    }

    pub fn answer_init(&self, g: &mut Graph, ctx: &ABotContext) -> LstmState {
        LstmState {
            hidden: self.abot.answer_init_h.forward(g, ctx.av.hidden),
            cell: self.abot.answer_init_c.forward(g, ctx.av.cell),
        }
    }

    pub fn answer_query(&self, g: &mut Graph, ctx: &ABotContext) -> NodeId {
        let x = g.concat_cols(&[ctx.context, ctx.attended_caption, ctx.question, ctx.av.hidden]);
        self.abot.select_query.forward(g, x)
    }

    pub fn answer_logits(&self, g: &mut Graph, ctx: &ABotContext, keys: NodeId) -> NodeId {
        let query = self.answer_query(g, ctx);
        g.matmul_t(query, keys)
    }

    pub fn answer_nll(&self, g: &mut Graph, ctx: &ABotContext, target: &[usize]) -> (NodeId, usize) {
        let c = self.answer_decoder_context(g, ctx);
        let init = self.answer_init(g, ctx);
        self.abot.answer_decoder.teacher_forced_nll(g, c, init, target)
    }

    pub fn generate_answer(&self, g: &mut Graph, ctx: &ABotContext, max_len: usize) -> Decoded {
        let c = self.answer_decoder_context(g, ctx);
        let init = self.answer_init(g, ctx);
        let stepper = self.abot.answer_decoder.stepper(
            &self.store,
            g.value(c).clone(),
            g.value(init.hidden).clone(),
            g.value(init.cell).clone(),
        );
        greedy_decode(&stepper, max_len)
    }
}

/// The ground-truth answer paired with the picked question, or "i don't know".
pub fn simulated_human_answer(question_index: usize, candidates: &CandidateSet) -> Tokens {
    candidates.paired_answer(question_index).cloned().unwrap_or_else(dont_know)
}
