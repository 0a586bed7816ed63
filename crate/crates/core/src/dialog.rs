//! The cooperative round loop: history maintenance with the dynamic update,
//! episodes, transcripts and evaluation-case enumeration.

use std::fmt;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::abot::{dont_know, simulated_human_answer, ABotView};
use crate::attention::EncoderRole;
use crate::corpus::{tokenize, DialogCase, QaPair, Tokens, VideoFeatures, EOS, ROUNDS};
use crate::error::{Error, Result};
use crate::graph::{Graph, NodeId};
use crate::model::{DialogMode, Model, ModelDims};
use crate::nn::Linear;
use crate::params::{ParamId, ParamStore};
use crate::qbot::QBotView;
use crate::selection::{select_candidate, CandidateBank, Selection};
use crate::tensor::Tensor;

/// Parameters shared by both agents for history handling: the learned
/// null-history vector and the dynamic-update projections.
#[derive(Clone, Debug)]
pub struct HistoryModule {
    pub null_history: ParamId,
    /// d_H → d_p, bias-free so a zero matrix maps the summary to zero.
    pub reduce: Linear,
    /// Pair embedding d_H → d_p.
    pub pair_proj: Linear,
    /// concat(attended history, summary) → d_H.
    pub fuse_proj: Linear,
}

impl HistoryModule {
    pub fn new<R: Rng>(store: &mut ParamStore, d: &ModelDims, rng: &mut R) -> Self {
        Self {
            null_history: store.add_uniform("history.null", 1, d.history, d.history, rng),
            reduce: Linear::new(store, "history.reduce", d.history, d.pair, false, rng),
            pair_proj: Linear::new(store, "history.pair", d.history, d.pair, true, rng),
            fuse_proj: Linear::new(store, "history.fuse", 2 * d.history, d.history, true, rng),
        }
    }

    /// summary' = concat(reduce(summary), pair_proj(pair)).
    pub fn update(&self, g: &mut Graph, summary: NodeId, pair_embedding: NodeId) -> NodeId {
        let old = self.reduce.forward(g, summary);
        let new = self.pair_proj.forward(g, pair_embedding);
        g.concat_cols(&[old, new])
    }

    /// The agents' history context: tanh(W·[attended; summary] + b), or just
    /// the attended history when the dynamic update is off.
    pub fn fuse(&self, g: &mut Graph, attended: NodeId, summary: NodeId, dynamic_update: bool) -> NodeId {
        if !dynamic_update {
            return attended;
        }
        let x = g.concat_cols(&[attended, summary]);
        let y = self.fuse_proj.forward(g, x);
        g.tanh(y)
    }
}

/// History as graph nodes for one round.
#[derive(Clone, Copy, Debug)]
pub struct HistoryNodes {
    /// Pair-level embeddings, `n × d_H`; `None` before the first pair.
    pub pairs: Option<NodeId>,
    /// Fused summary, `1 × d_H`.
    pub summary: NodeId,
    /// Encoding of the latest question, `1 × d_q`.
    pub last_question: Option<NodeId>,
}

/// Token ids for the encoders; an empty sequence is read as a lone EOS.
pub(crate) fn encoder_ids(model: &Model, tokens: &[String]) -> Vec<usize> {
    if tokens.is_empty() {
        vec![EOS]
    } else {
        model.vocab.encode(tokens)
    }
}

pub(crate) fn pair_ids(model: &Model, pair: &QaPair) -> Vec<usize> {
    encoder_ids(model, &pair.joined())
}

/// Realized dialog history with its cached embeddings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HistoryState {
    pub pairs: Vec<QaPair>,
    pub pair_embeddings: Vec<Vec<f64>>,
    pub question_embeddings: Vec<Vec<f64>>,
    pub summary: Vec<f64>,
    pub round: usize,
}

impl HistoryState {
    pub fn new(model: &Model) -> Self {
        Self {
            pairs: Vec::new(),
            pair_embeddings: Vec::new(),
            question_embeddings: Vec::new(),
            summary: model.store.get(model.history.null_history).data().to_vec(),
            round: 0,
        }
    }

    pub fn nodes(&self, g: &mut Graph) -> HistoryNodes {
        let pairs = (!self.pair_embeddings.is_empty()).then(|| g.constant(Tensor::from_rows(&self.pair_embeddings)));
        let summary = g.constant(Tensor::row_vector(self.summary.clone()));
        let last_question = self.question_embeddings.last().map(|q| g.constant(Tensor::row_vector(q.clone())));
        HistoryNodes { pairs, summary, last_question }
    }
}

/// Appends `pair`: encodes it, extends the pair embeddings, and rebuilds the
/// fixed-size summary.
pub fn update_history(model: &Model, state: &HistoryState, pair: &QaPair) -> Result<HistoryState> {
    if state.round >= ROUNDS {
        return Err(Error::HistoryFull(state.round));
    }
    let mut g = Graph::new(&model.store);
    let p = model.encoders.encode(&mut g, EncoderRole::HistoryPair, &pair_ids(model, pair))?;
    let q = model.encoders.encode(&mut g, EncoderRole::QuestionCandidate, &encoder_ids(model, &pair.question))?;
    let summary = g.constant(Tensor::row_vector(state.summary.clone()));
    let next = model.history.update(&mut g, summary, p);
    let mut out = state.clone();
    out.pairs.push(pair.clone());
    out.pair_embeddings.push(g.value(p).data().to_vec());
    out.question_embeddings.push(g.value(q).data().to_vec());
    out.summary = g.value(next).data().to_vec();
    out.round += 1;
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Generated,
    Selected,
    GroundTruth,
    Human,
}

impl fmt::Display for Provenance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Generated => "generated",
            Self::Selected => "selected",
            Self::GroundTruth => "ground_truth",
            Self::Human => "human",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SelectionTrace {
    pub index: usize,
    pub gt_index: Option<usize>,
    pub cluster: Option<usize>,
    pub cluster_logits: Vec<f64>,
    pub scored: Vec<usize>,
    pub logits: Vec<f64>,
}

impl SelectionTrace {
    fn new(sel: &Selection, gt_index: Option<usize>) -> Self {
        Self {
            index: sel.index,
            gt_index,
            cluster: sel.cluster,
            cluster_logits: sel.cluster_logits.clone(),
            scored: sel.scored.clone(),
            logits: sel.logits.clone(),
        }
    }

    pub fn is_gt(&self) -> Option<bool> {
        self.gt_index.map(|g| g == self.index)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TranscriptRound {
    pub round: usize,
    pub question: Tokens,
    pub answer: Tokens,
    pub question_provenance: Provenance,
    pub answer_provenance: Provenance,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub question_selection: Option<SelectionTrace>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub answer_selection: Option<SelectionTrace>,
    #[serde(default)]
    pub question_truncated: bool,
    #[serde(default)]
    pub answer_truncated: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Transcript {
    pub video_id: String,
    pub mode: DialogMode,
    pub start_round: usize,
    pub rounds: Vec<TranscriptRound>,
    pub final_description: Tokens,
    pub description_truncated: bool,
}

impl Transcript {
    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("transcript serializes")
    }

    pub fn from_json_line(line: &str) -> Result<Self> {
        serde_json::from_str(line).map_err(|e| Error::json("<transcript>", e))
    }
}

/// Writes one transcript per line.
pub fn transcripts_to_jsonl(transcripts: &[Transcript]) -> String {
    let mut out = String::new();
    for t in transcripts {
        out.push_str(&t.to_json_line());
        out.push('\n');
    }
    out
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnswerSource {
    #[default]
    ABot,
    SimulatedHuman,
    LiveHuman,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeConfig {
    pub answer_source: AnswerSource,
    pub beam_width: usize,
    pub max_question_len: usize,
    pub max_answer_len: usize,
    pub max_description_len: usize,
}

impl Default for EpisodeConfig {
    fn default() -> Self {
        Self { answer_source: AnswerSource::ABot, beam_width: 3, max_question_len: 20, max_answer_len: 20, max_description_len: 30 }
    }
}

/// What each agent is given for one video.
#[derive(Clone, Debug)]
pub struct EpisodeInputs {
    pub video_id: String,
    pub qbot: QBotView,
    pub abot: ABotView,
}

impl EpisodeInputs {
    pub fn new(model: &Model, case: &DialogCase, features: &VideoFeatures) -> Result<Self> {
        let shape = &model.config.features;
        Ok(Self {
            video_id: case.video_id.clone(),
            qbot: QBotView::from_features(features, shape, model.config.ablations.qbot_frames)?,
            abot: ABotView::from_features(features, shape, encoder_ids(model, &case.input_description)),
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EpisodeStatus {
    Asking,
    AwaitingAnswer,
    Describing,
    Complete,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PendingQuestion {
    pub round: usize,
    pub tokens: Tokens,
    pub provenance: Provenance,
    pub selection: Option<Selection>,
    pub truncated: bool,
}

/// One video's dialog, advanced step by step.
#[derive(Clone, Debug)]
pub struct Episode {
    inputs: EpisodeInputs,
    reference: Option<Vec<QaPair>>,
    history: HistoryState,
    transcript: Transcript,
    pending: Option<PendingQuestion>,
    config: EpisodeConfig,
    target_rounds: usize,
    described: bool,
}

impl Episode {
    /// Seeds rounds `1..start_round` from `reference` (the case's ground
    /// truth). `start_round = 11` gives the full-ground-truth baseline.
    pub fn new(model: &Model, inputs: EpisodeInputs, reference: Option<&[QaPair]>, start_round: usize, config: EpisodeConfig) -> Result<Self> {
        if !(1..=ROUNDS + 1).contains(&start_round) {
            return Err(Error::InvalidArgument(format!("start_round {start_round} outside 1..=10")));
        }
        if start_round > 1 && reference.map_or(true, |r| r.len() < start_round - 1) {
            return Err(Error::InvalidArgument("ground-truth pairs required to seed the history".into()));
        }
        let mut history = HistoryState::new(model);
        let mut rounds = Vec::new();
        for (i, pair) in reference.unwrap_or(&[]).iter().take(start_round - 1).enumerate() {
            history = update_history(model, &history, pair)?;
            rounds.push(TranscriptRound {
                round: i + 1,
                question: pair.question.clone(),
                answer: pair.answer.clone(),
                question_provenance: Provenance::GroundTruth,
                answer_provenance: Provenance::GroundTruth,
                question_selection: None,
                answer_selection: None,
                question_truncated: false,
                answer_truncated: false,
            });
        }
        let transcript = Transcript {
            video_id: inputs.video_id.clone(),
            mode: model.mode(),
            start_round,
            rounds,
            final_description: Vec::new(),
            description_truncated: false,
        };
        Ok(Self { inputs, reference: reference.map(<[QaPair]>::to_vec), history, transcript, pending: None, config, target_rounds: ROUNDS, described: false })
    }

    /// Describes from an empty history, with no dialog at all.
    pub fn without_dialog(model: &Model, inputs: EpisodeInputs, config: EpisodeConfig) -> Result<Self> {
        let mut e = Self::new(model, inputs, None, 1, config)?;
        e.target_rounds = 0;
        Ok(e)
    }

    pub fn status(&self) -> EpisodeStatus {
        if self.described {
            EpisodeStatus::Complete
        } else if self.pending.is_some() {
            EpisodeStatus::AwaitingAnswer
        } else if self.history.round >= self.target_rounds {
            EpisodeStatus::Describing
        } else {
            EpisodeStatus::Asking
        }
    }

    pub fn round(&self) -> usize {
        self.history.round
    }

    pub fn history(&self) -> &HistoryState {
        &self.history
    }

    pub fn pending(&self) -> Option<&PendingQuestion> {
        self.pending.as_ref()
    }

    pub fn transcript(&self) -> &Transcript {
        &self.transcript
    }

    pub fn config(&self) -> &EpisodeConfig {
        &self.config
    }

    fn require(&self, want: EpisodeStatus) -> Result<()> {
        let got = self.status();
        if got != want {
            return Err(Error::InvalidArgument(format!("episode is {got:?}, expected {want:?}")));
        }
        Ok(())
    }

    fn bank<'b>(&self, model: &Model, bank: Option<&'b CandidateBank>) -> Result<Option<&'b CandidateBank>> {
        match (model.mode(), bank) {
            (DialogMode::Discriminative, None) => Err(Error::InvalidArgument("discriminative mode needs a candidate bank".into())),
            (_, b) => Ok(b),
        }
    }

    /// Q-BOT produces the next question.
    pub fn ask(&mut self, model: &Model, bank: Option<&CandidateBank>) -> Result<&PendingQuestion> {
        self.require(EpisodeStatus::Asking)?;
        let bank = self.bank(model, bank)?;
        let round = self.history.round + 1;
        let mut g = Graph::new(&model.store);
        let prep = model.qbot_prepare(&mut g, &self.inputs.qbot)?;
        let hist = self.history.nodes(&mut g);
        let ctx = model.qbot_context(&mut g, &prep, &hist, round)?;
        let pending = match bank {
            Some(bank) if model.mode() == DialogMode::Discriminative => {
                let query = model.question_query(&mut g, &ctx);
                let sel = select_candidate(g.value(query).data(), &bank.question_keys, bank.question_clusters())?;
                PendingQuestion {
                    round,
                    tokens: bank.set.questions[sel.index].clone(),
                    provenance: Provenance::Selected,
                    selection: Some(sel),
                    truncated: false,
                }
            }
            _ => {
                let d = model.generate_question(&g, &ctx, self.config.max_question_len);
                PendingQuestion { round, tokens: model.vocab.decode(&d.tokens), provenance: Provenance::Generated, selection: None, truncated: d.truncated }
            }
        };
        Ok(self.pending.insert(pending))
    }

    fn gt_pair(&self, round: usize) -> Option<&QaPair> {
        self.reference.as_ref().and_then(|r| r.get(round - 1))
    }

    /// Answers the pending question with `source` (A-BOT or simulated human).
    pub fn answer(&mut self, model: &Model, bank: Option<&CandidateBank>, source: AnswerSource) -> Result<()> {
        self.require(EpisodeStatus::AwaitingAnswer)?;
        let bank = self.bank(model, bank)?;
        let pending = self.pending.clone().expect("pending question");
        let (answer, provenance, selection, truncated) = match source {
            AnswerSource::LiveHuman => {
                return Err(Error::InvalidArgument("a live human answer must be submitted as text".into()));
            }
            AnswerSource::SimulatedHuman => {
                let (Some(sel), Some(bank)) = (pending.selection.as_ref(), bank) else {
                    return Err(Error::InvalidArgument("simulated human answers need a selected question".into()));
                };
                (simulated_human_answer(sel.index, &bank.set), Provenance::GroundTruth, None, false)
            }
            AnswerSource::ABot => {
                let mut g = Graph::new(&model.store);
                let prep = model.abot_prepare(&mut g, &self.inputs.abot)?;
                let hist = self.history.nodes(&mut g);
                let r_q = model.encode_question(&mut g, &encoder_ids(model, &pending.tokens))?;
                let ctx = model.abot_context(&mut g, &prep, &hist, r_q)?;
                match bank {
                    Some(bank) if model.mode() == DialogMode::Discriminative => {
                        let query = model.answer_query(&mut g, &ctx);
                        let sel = select_candidate(g.value(query).data(), &bank.answer_keys, bank.answer_clusters())?;
                        (bank.set.answers[sel.index].clone(), Provenance::Selected, Some(sel), false)
                    }
                    _ => {
                        let d = model.generate_answer(&mut g, &ctx, self.config.max_answer_len);
                        (model.vocab.decode(&d.tokens), Provenance::Generated, None, d.truncated)
                    }
                }
            }
        };
        self.record(model, bank, pending, answer, provenance, selection, truncated)
    }

    /// Records a human's answer; an empty answer counts as "i don't know".
    pub fn answer_with_text(&mut self, model: &Model, bank: Option<&CandidateBank>, text: &str) -> Result<()> {
        self.require(EpisodeStatus::AwaitingAnswer)?;
        let pending = self.pending.clone().expect("pending question");
        let mut tokens = tokenize(text);
        if tokens.is_empty() {
            tokens = dont_know();
        }
        self.record(model, bank, pending, tokens, Provenance::Human, None, false)
    }

    #[allow(clippy::too_many_arguments)]
    fn record(
        &mut self,
        model: &Model,
        bank: Option<&CandidateBank>,
        pending: PendingQuestion,
        answer: Tokens,
        answer_provenance: Provenance,
        answer_selection: Option<Selection>,
        answer_truncated: bool,
    ) -> Result<()> {
        let round = pending.round;
        let gt = self.gt_pair(round).cloned();
        let gt_q = |b: &CandidateBank| gt.as_ref().and_then(|p| b.set.question_index(&p.question));
        let gt_a = |b: &CandidateBank| gt.as_ref().and_then(|p| b.set.answer_index(&p.answer));
        let question_selection = pending.selection.as_ref().map(|s| SelectionTrace::new(s, bank.and_then(gt_q)));
        let answer_selection = answer_selection.as_ref().map(|s| SelectionTrace::new(s, bank.and_then(gt_a)));
        let pair = QaPair { question: pending.tokens.clone(), answer: answer.clone() };
        self.history = update_history(model, &self.history, &pair)?;
        self.transcript.rounds.push(TranscriptRound {
            round,
            question: pending.tokens,
            answer,
            question_provenance: pending.provenance,
            answer_provenance,
            question_selection,
            answer_selection,
            question_truncated: pending.truncated,
            answer_truncated,
        });
        self.pending = None;
        Ok(())
    }

    /// One full round with the configured answer source.
    pub fn run_round(&mut self, model: &Model, bank: Option<&CandidateBank>) -> Result<()> {
        self.ask(model, bank)?;
        let source = self.config.answer_source;
        self.answer(model, bank, source)
    }

    /// Q-BOT writes the final description from the full history.
    pub fn describe(&mut self, model: &Model) -> Result<&Transcript> {
        self.require(EpisodeStatus::Describing)?;
        let mut g = Graph::new(&model.store);
        let prep = model.qbot_prepare(&mut g, &self.inputs.qbot)?;
        let hist = self.history.nodes(&mut g);
        let ctx = model.qbot_context(&mut g, &prep, &hist, self.history.round + 1)?;
        let d = model.generate_description(&mut g, &ctx, self.config.beam_width, self.config.max_description_len);
        self.transcript.final_description = model.vocab.decode(&d.tokens);
        self.transcript.description_truncated = d.truncated;
        self.described = true;
        Ok(&self.transcript)
    }

    pub fn into_transcript(self) -> Transcript {
        self.transcript
    }
}

/// Seeds rounds before `start_round` with ground truth, plays the rest with
/// the agents, then describes.
pub fn run_episode(
    model: &Model,
    case: &DialogCase,
    features: &VideoFeatures,
    start_round: usize,
    bank: Option<&CandidateBank>,
    config: &EpisodeConfig,
) -> Result<Transcript> {
    if config.answer_source == AnswerSource::LiveHuman {
        return Err(Error::InvalidArgument("live human episodes run through the session service".into()));
    }
    let inputs = EpisodeInputs::new(model, case, features)?;
    let mut episode = Episode::new(model, inputs, Some(&case.qa_pairs), start_round, config.clone())?;
    while episode.status() == EpisodeStatus::Asking {
        episode.run_round(model, bank)?;
    }
    episode.describe(model)?;
    Ok(episode.into_transcript())
}

/// Evaluation entries: every case at start rounds 1..=10, or once per case
/// with the full ground-truth dialog (start round 11) for the strong baseline.
pub fn enumerate_test_cases(cases: &[DialogCase], strong_baseline: bool) -> Vec<(usize, usize)> {
    if strong_baseline {
        (0..cases.len()).map(|i| (i, ROUNDS + 1)).collect()
    } else {
        (0..cases.len()).flat_map(|i| (1..=ROUNDS).map(move |r| (i, r))).collect()
    }
}

/// A copy with the QA pairs in a seeded random order.
pub fn shuffle_history(case: &DialogCase, seed: u64) -> DialogCase {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = case.clone();
    out.qa_pairs.shuffle(&mut rng);
    out
}
