//! Losses, teacher-forced training graphs and the optimization schedule.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::abot::ABotView;
use crate::attention::EncoderRole;
use crate::candidates::{build_training_candidates, CandidateSet};
use crate::corpus::{DialogCase, FeatureStore, QaPair, PAD, ROUNDS};
use crate::dialog::{encoder_ids, pair_ids, HistoryNodes};
use crate::error::{Error, Result};
use crate::graph::{Graph, NodeId};
use crate::model::{DialogMode, Model};
use crate::params::{Adam, AdamConfig, ParamGrads};
use crate::qbot::QBotView;
use crate::tensor::{argmax, log_softmax, Tensor};

/// Mean negative log-likelihood of `target` under per-step probability
/// distributions, skipping PAD positions.
pub fn description_loss(step_distributions: &[Vec<f64>], target: &[usize]) -> Result<f64> {
    if step_distributions.len() != target.len() {
        return Err(Error::LengthMismatch(format!(
            "{} distributions for {} target tokens",
            step_distributions.len(),
            target.len()
        )));
    }
    let mut total = 0.0;
    let mut count = 0usize;
    for (dist, &tok) in step_distributions.iter().zip(target) {
        if tok == PAD {
            continue;
        }
        let p = *dist.get(tok).ok_or(Error::IndexOutOfRange { index: tok, len: dist.len() })?;
        total -= p.ln();
        count += 1;
    }
    Ok(if count == 0 { 0.0 } else { total / count as f64 })
}

/// One selection made during training.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SelectionRecord {
    pub logits: Vec<f64>,
    pub gt_index: usize,
    pub selected: usize,
}

impl SelectionRecord {
    /// Records an argmax selection over `logits`.
    pub fn new(logits: Vec<f64>, gt_index: usize) -> Self {
        let selected = argmax(&logits);
        Self { logits, gt_index, selected }
    }

    /// 1 when the selection missed the ground truth.
    pub fn y(&self) -> f64 {
        if self.selected != self.gt_index {
            1.0
        } else {
            0.0
        }
    }
}

/// How the gated selection term is read.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InternalLossForm {
    /// y · (−log softmax(logits)[gt]): pushes missed rounds toward the ground truth.
    #[default]
    GatedNll,
    /// y · log softmax(logits)[gt], exactly as printed.
    Literal,
}

/// Gated selection loss averaged over all records.
pub fn internal_selection_loss(records: &[SelectionRecord], form: InternalLossForm) -> Result<f64> {
    if records.is_empty() {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for r in records {
        if r.gt_index >= r.logits.len() {
            return Err(Error::IndexOutOfRange { index: r.gt_index, len: r.logits.len() });
        }
        let lp = log_softmax(&r.logits)[r.gt_index];
        total += r.y()
            * match form {
                InternalLossForm::GatedNll => -lp,
                InternalLossForm::Literal => lp,
            };
    }
    Ok(total / records.len() as f64)
}

pub fn combined_loss(l_internal: f64, l_ce: f64, lambda: f64) -> f64 {
    lambda * l_internal + (1.0 - lambda) * l_ce
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub lambda_internal: f64,
    pub ce_only_tail_epochs: usize,
    /// Consecutive non-improving validation epochs before the tail starts.
    pub patience: usize,
    pub max_epochs: usize,
    pub seed: u64,
    /// Disables the selection loss entirely.
    pub no_reasoning: bool,
    pub internal_form: InternalLossForm,
    /// Teacher-forced question/answer token losses in generative mode.
    pub qa_supervision: bool,
    /// Candidates per list in each training dialog's pool.
    pub n_candidates: usize,
    pub beam_width: usize,
    pub clusters: usize,
    /// Worker threads for per-dialog gradients; 0 picks the machine's count.
    pub threads: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            batch_size: 64,
            lambda_internal: 0.1,
            ce_only_tail_epochs: 3,
            patience: 2,
            max_epochs: 50,
            seed: 0,
            no_reasoning: false,
            internal_form: InternalLossForm::GatedNll,
            qa_supervision: true,
            n_candidates: 100,
            beam_width: 3,
            clusters: 10,
            threads: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.lambda_internal) {
            return Err(Error::InvalidArgument(format!("lambda {} outside [0, 1]", self.lambda_internal)));
        }
        if self.batch_size == 0 || self.learning_rate <= 0.0 || !self.learning_rate.is_finite() {
            return Err(Error::InvalidArgument("batch size and learning rate must be positive".into()));
        }
        Ok(())
    }

    fn worker_threads(&self) -> usize {
        if self.threads > 0 {
            self.threads
        } else {
            std::thread::available_parallelism().map_or(1, |n| n.get())
        }
    }
}

/// A dialog converted to token ids and feature views, ready for graphs.
#[derive(Clone, Debug)]
pub struct PreparedCase {
    pub video_id: String,
    pub qbot: QBotView,
    pub abot: ABotView,
    pub pairs: Vec<Vec<usize>>,
    pub questions: Vec<Vec<usize>>,
    pub answers: Vec<Vec<usize>>,
    pub description: Vec<usize>,
    pub selection: Option<CaseCandidates>,
}

/// Candidate token ids and per-round ground-truth positions.
#[derive(Clone, Debug)]
pub struct CaseCandidates {
    pub questions: Vec<Vec<usize>>,
    pub answers: Vec<Vec<usize>>,
    pub gt_questions: Vec<usize>,
    pub gt_answers: Vec<usize>,
}

impl CaseCandidates {
    pub fn from_set(model: &Model, set: &CandidateSet, case: &DialogCase) -> Result<Self> {
        let mut gt_questions = Vec::with_capacity(ROUNDS);
        let mut gt_answers = Vec::with_capacity(ROUNDS);
        for slot in set.gt_for(case) {
            let missing = || Error::InvalidArgument(format!("candidate pool of {} lacks a ground-truth pair", case.video_id));
            gt_questions.push(slot.question.ok_or_else(missing)?);
            gt_answers.push(slot.answer.ok_or_else(missing)?);
        }
        Ok(Self {
            questions: set.questions.iter().map(|q| encoder_ids(model, q)).collect(),
            answers: set.answers.iter().map(|a| encoder_ids(model, a)).collect(),
            gt_questions,
            gt_answers,
        })
    }
}

impl PreparedCase {
    pub fn new(model: &Model, case: &DialogCase, features: &FeatureStore, candidates: Option<&CandidateSet>) -> Result<Self> {
        case.validate()?;
        let f = features.get(&case.video_id)?;
        let shape = &model.config.features;
        let selection = match (model.mode(), candidates) {
            (DialogMode::Discriminative, Some(set)) => Some(CaseCandidates::from_set(model, set, case)?),
            (DialogMode::Discriminative, None) => {
                return Err(Error::InvalidArgument("discriminative training needs candidate pools".into()));
            }
            (DialogMode::Generative, _) => None,
        };
        Ok(Self {
            video_id: case.video_id.clone(),
            qbot: QBotView::from_features(f, shape, model.config.ablations.qbot_frames)?,
            abot: ABotView::from_features(f, shape, encoder_ids(model, &case.input_description)),
            pairs: case.qa_pairs.iter().map(|p| pair_ids(model, p)).collect(),
            questions: case.qa_pairs.iter().map(|p| encoder_ids(model, &p.question)).collect(),
            answers: case.qa_pairs.iter().map(|p| encoder_ids(model, &p.answer)).collect(),
            description: model.vocab.encode(&case.final_description),
            selection,
        })
    }
}

/// Prepares every case, building its candidate pool in discriminative mode.
pub fn prepare_cases(
    model: &Model,
    cases: &[DialogCase],
    features: &FeatureStore,
    pool: &[QaPair],
    config: &TrainConfig,
) -> Result<Vec<PreparedCase>> {
    cases
        .iter()
        .enumerate()
        .map(|(i, case)| {
            let set = match model.mode() {
                DialogMode::Discriminative => {
                    Some(build_training_candidates(case, pool, config.seed.wrapping_add(i as u64), 1, config.n_candidates)?)
                }
                DialogMode::Generative => None,
            };
            PreparedCase::new(model, case, features, set.as_ref())
        })
        .collect()
}

/// Loss terms of one dialog under teacher forcing.
pub struct CaseGraph {
    /// Summed description NLL.
    pub description_nll: NodeId,
    pub description_tokens: usize,
    /// Summed teacher-forced question and answer NLL (generative mode).
    pub qa_nll: Option<NodeId>,
    pub qa_tokens: usize,
    /// Gated selection terms, one per record (discriminative mode).
    pub internal: Vec<NodeId>,
    pub question_records: Vec<SelectionRecord>,
    pub answer_records: Vec<SelectionRecord>,
}

/// Unrolls both agents over the ground-truth dialog and the description.
/// With `with_rounds` false only the description given the full history is built.
pub fn case_graph(model: &Model, g: &mut Graph, case: &PreparedCase, form: InternalLossForm, with_rounds: bool) -> Result<CaseGraph> {
    let qprep = model.qbot_prepare(g, &case.qbot)?;
    let pair_refs: Vec<&[usize]> = case.pairs.iter().map(Vec::as_slice).collect();
    let pair_emb = model.encoders.encode_batch(g, EncoderRole::HistoryPair, &pair_refs)?;
    let q_refs: Vec<&[usize]> = case.questions.iter().map(Vec::as_slice).collect();
    let q_emb = model.encoders.encode_batch(g, EncoderRole::QuestionCandidate, &q_refs)?;
    let mut summary = g.param(model.history.null_history);
    let mut summaries = vec![summary];
    for i in 0..ROUNDS {
        let p = g.row(pair_emb, i);
        summary = model.history.update(g, summary, p);
        summaries.push(summary);
    }
    let hist_at = |g: &mut Graph, i: usize| HistoryNodes {
        pairs: (i > 0).then(|| g.rows(pair_emb, 0, i)),
        summary: summaries[i],
        last_question: (i > 0).then(|| g.row(q_emb, i - 1)),
    };

    let mut out = CaseGraph {
        description_nll: summary,
        description_tokens: 0,
        qa_nll: None,
        qa_tokens: 0,
        internal: Vec::new(),
        question_records: Vec::new(),
        answer_records: Vec::new(),
    };
    if with_rounds {
        let aprep = model.abot_prepare(g, &case.abot)?;
        let keys = match &case.selection {
            Some(c) => {
                let qs: Vec<&[usize]> = c.questions.iter().map(Vec::as_slice).collect();
                let as_: Vec<&[usize]> = c.answers.iter().map(Vec::as_slice).collect();
                let qe = model.encoders.encode_batch(g, EncoderRole::QuestionCandidate, &qs)?;
                let ae = model.encoders.encode_batch(g, EncoderRole::AnswerCandidate, &as_)?;
                Some((model.qbot.select_key.forward(g, qe), model.abot.select_key.forward(g, ae)))
            }
            None => None,
        };
        let mut qa_terms = Vec::new();
        for i in 0..ROUNDS {
            let hist = hist_at(g, i);
            let qctx = model.qbot_context(g, &qprep, &hist, i + 1)?;
            let r_q = g.row(q_emb, i);
            let actx = model.abot_context(g, &aprep, &hist, r_q)?;
            match (&case.selection, keys) {
                (Some(c), Some((qk, ak))) => {
                    let ql = model.question_logits(g, &qctx, qk);
                    let al = model.answer_logits(g, &actx, ak);
                    for (logits, gt, records) in
                        [(ql, c.gt_questions[i], &mut out.question_records), (al, c.gt_answers[i], &mut out.answer_records)]
                    {
                        let rec = SelectionRecord::new(g.value(logits).data().to_vec(), gt);
                        if rec.y() > 0.0 {
                            let lp = g.log_softmax(logits);
                            let picked = g.pick(lp, 0, gt);
                            let sign = match form {
                                InternalLossForm::GatedNll => -1.0,
                                InternalLossForm::Literal => 1.0,
                            };
                            out.internal.push(g.scale(picked, sign));
                        }
                        records.push(rec);
                    }
                }
                _ => {
                    let (qn, qt) = model.question_nll(g, &qctx, &case.questions[i]);
                    let (an, at) = model.answer_nll(g, &actx, &case.answers[i]);
                    qa_terms.push(qn);
                    qa_terms.push(an);
                    out.qa_tokens += qt + at;
                }
            }
        }
        if !qa_terms.is_empty() {
            out.qa_nll = Some(g.add_all(&qa_terms));
        }
    }
    let hist = hist_at(g, ROUNDS);
    let ctx = model.qbot_context(g, &qprep, &hist, ROUNDS + 1)?;
    let (nll, tokens) = model.description_nll(g, &ctx, &case.description);
    out.description_nll = nll;
    out.description_tokens = tokens;
    Ok(out)
}

/// Batch-level normalizers shared by every dialog's loss.
#[derive(Clone, Copy, Debug)]
struct Normalizers {
    description_tokens: usize,
    qa_tokens: usize,
    records: usize,
}

#[derive(Clone, Debug, Default)]
struct BatchOutcome {
    grads: ParamGrads,
    loss: f64,
    ce: f64,
    internal: f64,
    qa: f64,
    q_hits: usize,
    a_hits: usize,
    records: usize,
}

fn case_step(model: &Model, case: &PreparedCase, config: &TrainConfig, ce_only: bool, norm: Normalizers) -> Result<BatchOutcome> {
    let mut g = Graph::new(&model.store);
    let terms = case_graph(model, &mut g, case, config.internal_form, true)?;
    let disc = model.mode() == DialogMode::Discriminative;
    let use_internal = disc && !config.no_reasoning && !ce_only;
    let lambda = if use_internal { config.lambda_internal } else { 0.0 };
    let ce_weight = (1.0 - lambda) / norm.description_tokens as f64;
    let mut parts = vec![g.scale(terms.description_nll, ce_weight)];
    let mut internal = 0.0;
    if use_internal && !terms.internal.is_empty() {
        let sum = g.add_all(&terms.internal);
        internal = g.scalar(sum);
        parts.push(g.scale(sum, lambda / norm.records as f64));
    }
    let mut qa = 0.0;
    if let (Some(n), true) = (terms.qa_nll, config.qa_supervision) {
        qa = g.scalar(n);
        parts.push(g.scale(n, 1.0 / norm.qa_tokens.max(1) as f64));
    }
    let total = g.add_all(&parts);
    let loss = g.scalar(total);
    let grads = g.backward(total).into_params();
    let hits = |rs: &[SelectionRecord]| rs.iter().filter(|r| r.y() == 0.0).count();
    Ok(BatchOutcome {
        grads,
        loss,
        ce: g.scalar(terms.description_nll),
        internal,
        qa,
        q_hits: hits(&terms.question_records),
        a_hits: hits(&terms.answer_records),
        records: terms.question_records.len(),
    })
}

fn batch_step(model: &Model, batch: &[&PreparedCase], config: &TrainConfig, ce_only: bool) -> Result<BatchOutcome> {
    let norm = Normalizers {
        description_tokens: batch.iter().map(|c| c.description.len() + 1).sum(),
        qa_tokens: batch.iter().map(|c| c.questions.iter().chain(&c.answers).map(|s| s.len() + 1).sum::<usize>()).sum(),
        records: batch.iter().map(|c| if c.selection.is_some() { 2 * ROUNDS } else { 0 }).sum::<usize>().max(1),
    };
    let threads = config.worker_threads().min(batch.len()).max(1);
    let chunk = batch.len().div_ceil(threads);
    let results: Vec<Result<BatchOutcome>> = std::thread::scope(|s| {
        let handles: Vec<_> = batch
            .chunks(chunk)
            .map(|part| {
                s.spawn(move || {
                    part.iter().map(|c| case_step(model, c, config, ce_only, norm)).collect::<Result<Vec<_>>>().map(|outs| {
                        outs.into_iter().fold(BatchOutcome::default(), |mut acc, o| {
                            acc.grads.merge(o.grads);
                            acc.loss += o.loss;
                            acc.ce += o.ce;
                            acc.internal += o.internal;
                            acc.qa += o.qa;
                            acc.q_hits += o.q_hits;
                            acc.a_hits += o.a_hits;
                            acc.records += o.records;
                            acc
                        })
                    })
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("training worker panicked")).collect()
    });
    let mut total = BatchOutcome::default();
    for r in results {
        let o = r?;
        total.grads.merge(o.grads);
        total.loss += o.loss;
        total.ce += o.ce;
        total.internal += o.internal;
        total.qa += o.qa;
        total.q_hits += o.q_hits;
        total.a_hits += o.a_hits;
        total.records += o.records;
    }
    Ok(total)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub ce_only: bool,
    /// Mean combined loss per batch.
    pub loss: f64,
    /// Mean per-token description NLL over the split.
    pub description_ce: f64,
    pub internal_loss: f64,
    pub question_ratio: Option<f64>,
    pub answer_ratio: Option<f64>,
    pub val_perplexity: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochStats>,
    pub best_epoch: usize,
    pub best_val_perplexity: f64,
    pub stopped_early: bool,
    /// Whether validation fell back to the training split.
    pub validated_on_train: bool,
}

/// Applies the stopping rule: true once the last `patience` perplexities
/// all fail to improve on the best before them.
pub fn should_stop(val_perplexities: &[f64], patience: usize) -> bool {
    if patience == 0 || val_perplexities.len() <= patience {
        return false;
    }
    let split = val_perplexities.len() - patience;
    let best = val_perplexities[..split].iter().copied().fold(f64::INFINITY, f64::min);
    val_perplexities[split..].iter().all(|&p| p >= best)
}

/// exp of the mean per-token description NLL under teacher forcing.
pub fn perplexity(model: &Model, cases: &[PreparedCase]) -> Result<f64> {
    if cases.is_empty() {
        return Err(Error::InvalidArgument("perplexity of an empty split".into()));
    }
    let (nll, tokens) = description_nll_total(model, cases)?;
    Ok((nll / tokens as f64).exp())
}

fn description_nll_total(model: &Model, cases: &[PreparedCase]) -> Result<(f64, usize)> {
    let mut nll = 0.0;
    let mut tokens = 0;
    for c in cases {
        let mut g = Graph::new(&model.store);
        let t = case_graph(model, &mut g, c, InternalLossForm::GatedNll, false)?;
        nll += g.scalar(t.description_nll);
        tokens += t.description_tokens;
    }
    Ok((nll, tokens))
}

/// Teacher-forced ground-truth selection ratios over all candidates.
pub fn selection_accuracy(model: &Model, cases: &[PreparedCase]) -> Result<(Option<f64>, Option<f64>)> {
    let mut q = (0, 0);
    let mut a = (0, 0);
    for c in cases {
        let mut g = Graph::new(&model.store);
        let t = case_graph(model, &mut g, c, InternalLossForm::GatedNll, true)?;
        q.0 += t.question_records.iter().filter(|r| r.y() == 0.0).count();
        q.1 += t.question_records.len();
        a.0 += t.answer_records.iter().filter(|r| r.y() == 0.0).count();
        a.1 += t.answer_records.len();
    }
    let ratio = |(h, n): (usize, usize)| (n > 0).then(|| h as f64 / n as f64);
    Ok((ratio(q), ratio(a)))
}

/// Trains `model` in place and leaves it at the best-validation parameters.
/// An empty validation split falls back to the training split.
pub fn train(model: &mut Model, train_cases: &[PreparedCase], val_cases: &[PreparedCase], config: &TrainConfig) -> Result<TrainReport> {
    train_with_observer(model, train_cases, val_cases, config, |_| {})
}

pub fn train_with_observer(
    model: &mut Model,
    train_cases: &[PreparedCase],
    val_cases: &[PreparedCase],
    config: &TrainConfig,
    mut observe: impl FnMut(&EpochStats),
) -> Result<TrainReport> {
    use rand::seq::SliceRandom;
    use rand::SeedableRng;

    config.validate()?;
    if train_cases.is_empty() {
        return Err(Error::InvalidArgument("empty training split".into()));
    }
    let validated_on_train = val_cases.is_empty();
    if validated_on_train {
        log::warn!("no validation dialogs; early stopping uses the training split");
    }
    let val = if validated_on_train { train_cases } else { val_cases };
    log::info!(
        "training {} mode: {} parameters active, {} registered",
        model.mode(),
        model.active_parameter_count(),
        model.store.scalar_count()
    );

    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(config.seed);
    let mut adam = Adam::new(AdamConfig { learning_rate: config.learning_rate, ..AdamConfig::default() });
    let mut epochs = Vec::new();
    let mut perplexities = Vec::new();
    let mut best: Option<(f64, usize, HashMap<String, Tensor>)> = None;
    let mut tail_left: Option<usize> = None;
    let mut stopped_early = false;
    let mut order: Vec<usize> = (0..train_cases.len()).collect();

    for epoch in 1..=config.max_epochs {
        let ce_only = tail_left.is_some();
        order.shuffle(&mut rng);
        let mut loss = 0.0;
        let mut ce = 0.0;
        let mut internal = 0.0;
        let mut q_hits = 0;
        let mut a_hits = 0;
        let mut records = 0;
        let mut batches = 0;
        for (step, idx) in order.chunks(config.batch_size).enumerate() {
            let batch: Vec<&PreparedCase> = idx.iter().map(|&i| &train_cases[i]).collect();
            let out = batch_step(model, &batch, config, ce_only)?;
            if !out.loss.is_finite() || !out.grads.all_finite() {
                return Err(Error::Diverged { epoch, step: step + 1 });
            }
            adam.step(&mut model.store, &out.grads);
            loss += out.loss;
            ce += out.ce;
            internal += out.internal;
            q_hits += out.q_hits;
            a_hits += out.a_hits;
            records += out.records;
            batches += 1;
        }
        if !model.store.all_finite() {
            return Err(Error::Diverged { epoch, step: batches });
        }
        let tokens: usize = train_cases.iter().map(|c| c.description.len() + 1).sum();
        let val_perplexity = perplexity(model, val)?;
        if !val_perplexity.is_finite() {
            return Err(Error::Diverged { epoch, step: batches });
        }
        let ratio = |h: usize| (records > 0).then(|| h as f64 / records as f64);
        let stats = EpochStats {
            epoch,
            ce_only,
            loss: loss / batches as f64,
            description_ce: ce / tokens as f64,
            internal_loss: if records > 0 { internal / (2 * records) as f64 } else { 0.0 },
            question_ratio: ratio(q_hits),
            answer_ratio: ratio(a_hits),
            val_perplexity,
        };
        log::info!(
            "epoch {epoch}{}: loss {:.4} ce {:.4} val ppl {:.4}",
            if ce_only { " (ce only)" } else { "" },
            stats.loss,
            stats.description_ce,
            val_perplexity
        );
        observe(&stats);
        epochs.push(stats);
        perplexities.push(val_perplexity);
        if best.as_ref().map_or(true, |(b, _, _)| val_perplexity < *b) {
            best = Some((val_perplexity, epoch, snapshot(model)));
        }
        if let Some(n) = tail_left.as_mut() {
            *n -= 1;
            if *n == 0 {
                break;
            }
        } else if should_stop(&perplexities, config.patience) {
            stopped_early = true;
            if config.ce_only_tail_epochs == 0 {
                break;
            }
            tail_left = Some(config.ce_only_tail_epochs);
        }
    }
    let (best_val_perplexity, best_epoch, params) = best.ok_or_else(|| Error::InvalidArgument("max_epochs is 0".into()))?;
    restore(model, &params);
    Ok(TrainReport { epochs, best_epoch, best_val_perplexity, stopped_early, validated_on_train })
}

fn snapshot(model: &Model) -> HashMap<String, Tensor> {
    model.store.iter().map(|(_, p)| (p.name.clone(), p.value.clone())).collect()
}

fn restore(model: &mut Model, params: &HashMap<String, Tensor>) {
    let ids: Vec<_> = model.store.iter().map(|(id, p)| (id, p.name.clone())).collect();
    for (id, name) in ids {
        if let Some(v) = params.get(&name) {
            *model.store.get_mut(id) = v.clone();
        }
    }
}
