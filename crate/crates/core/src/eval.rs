//! Evaluation harness: enumerate cases, run episodes in parallel, score.

use serde::{Deserialize, Serialize};

use crate::candidates::{build_inference_candidates, WordVectorTable, DEFAULT_WORD_DIM};
use crate::corpus::{DialogCase, FeatureStore, ROUNDS};
use crate::dialog::{enumerate_test_cases, run_episode, shuffle_history, AnswerSource, Episode, EpisodeConfig, EpisodeInputs, Transcript};
use crate::error::{Error, Result};
use crate::metrics::{score_corpus, selection_ratio, MetricReport};
use crate::model::{DialogMode, Model};
use crate::selection::CandidateBank;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub episode: EpisodeConfig,
    /// Describe from the full ground-truth dialog, once per case.
    pub strong_baseline: bool,
    /// Describe with no dialog at all, once per case.
    pub no_dialog: bool,
    /// Shuffle each case's ground-truth pairs with this seed first.
    pub shuffle_history: Option<u64>,
    /// Evaluate only this start round instead of all ten.
    pub start_round: Option<usize>,
    /// k for two-phase selection; 0 scores all candidates directly.
    pub clusters: usize,
    pub seed: u64,
    /// Worker threads; 0 picks the machine's count.
    pub threads: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            episode: EpisodeConfig::default(),
            strong_baseline: false,
            no_dialog: false,
            shuffle_history: None,
            start_round: None,
            clusters: 10,
            seed: 0,
            threads: 0,
        }
    }
}

impl EvalConfig {
    pub fn simulated_human(mut self) -> Self {
        self.episode.answer_source = AnswerSource::SimulatedHuman;
        self
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalOutput {
    pub report: MetricReport,
    pub question_ratio: Option<f64>,
    pub answer_ratio: Option<f64>,
    pub transcripts: Vec<Transcript>,
}

impl EvalOutput {
    pub fn summary_json(&self) -> serde_json::Value {
        let mut v = self.report.to_json();
        v["question_selection_ratio"] = self.question_ratio.into();
        v["answer_selection_ratio"] = self.answer_ratio.into();
        v
    }
}

/// Candidate bank over every question and answer of `cases`, clustered with
/// `table` (or a seeded random table over the vocabulary when absent).
pub fn build_bank(model: &Model, cases: &[DialogCase], table: Option<&WordVectorTable>, k: usize, seed: u64) -> Result<CandidateBank> {
    let mut set = build_inference_candidates(cases);
    let use_clusters = k > 0;
    if use_clusters {
        let fallback;
        let table = match table {
            Some(t) => t,
            None => {
                fallback = WordVectorTable::random(model.vocab.tokens().iter().map(String::as_str), DEFAULT_WORD_DIM, seed);
                &fallback
            }
        };
        set.cluster(table, k, seed)?;
    }
    CandidateBank::encode(model, set, use_clusters)
}

/// Which episodes to run: `(case index, start round)`.
pub fn plan(cases: &[DialogCase], config: &EvalConfig) -> Result<Vec<(usize, usize)>> {
    if config.strong_baseline && config.no_dialog {
        return Err(Error::InvalidArgument("strong baseline and no-dialog are exclusive".into()));
    }
    if config.no_dialog {
        return Ok((0..cases.len()).map(|i| (i, 0)).collect());
    }
    match config.start_round {
        Some(r) if !(1..=ROUNDS).contains(&r) => Err(Error::InvalidArgument(format!("start round {r} outside 1..=10"))),
        Some(r) if !config.strong_baseline => Ok((0..cases.len()).map(|i| (i, r)).collect()),
        _ => Ok(enumerate_test_cases(cases, config.strong_baseline)),
    }
}

fn run_one(
    model: &Model,
    case: &DialogCase,
    features: &FeatureStore,
    start_round: usize,
    bank: Option<&CandidateBank>,
    config: &EvalConfig,
) -> Result<Transcript> {
    let f = features.get(&case.video_id)?;
    if start_round == 0 {
        let inputs = EpisodeInputs::new(model, case, f)?;
        let mut e = Episode::without_dialog(model, inputs, config.episode.clone())?;
        e.describe(model)?;
        return Ok(e.into_transcript());
    }
    match config.shuffle_history {
        Some(seed) => run_episode(model, &shuffle_history(case, seed), f, start_round, bank, &config.episode),
        None => run_episode(model, case, f, start_round, bank, &config.episode),
    }
}

/// Runs every planned episode and scores the final descriptions against
/// the cases' ground-truth summaries.
pub fn evaluate(model: &Model, cases: &[DialogCase], features: &FeatureStore, bank: Option<&CandidateBank>, config: &EvalConfig) -> Result<EvalOutput> {
    if cases.is_empty() {
        return Err(Error::InvalidArgument("no dialogs to evaluate".into()));
    }
    if model.mode() == DialogMode::Discriminative && bank.is_none() {
        return Err(Error::InvalidArgument("discriminative evaluation needs a candidate bank".into()));
    }
    if config.episode.answer_source == AnswerSource::SimulatedHuman && model.mode() != DialogMode::Discriminative {
        return Err(Error::InvalidArgument("simulated human answers need the discriminative setting".into()));
    }
    features.check_covers(cases)?;
    let jobs = plan(cases, config)?;
    let threads = if config.threads > 0 { config.threads } else { std::thread::available_parallelism().map_or(1, |n| n.get()) };
    let chunk = jobs.len().div_ceil(threads.max(1)).max(1);
    let results: Vec<Result<Vec<Transcript>>> = std::thread::scope(|s| {
        let handles: Vec<_> = jobs
            .chunks(chunk)
            .map(|part| {
                s.spawn(move || part.iter().map(|&(i, r)| run_one(model, &cases[i], features, r, bank, config)).collect())
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("evaluation worker panicked")).collect()
    });
    let mut transcripts = Vec::with_capacity(jobs.len());
    for r in results {
        transcripts.extend(r?);
    }
    let candidates: Vec<Vec<String>> = transcripts.iter().map(|t| t.final_description.clone()).collect();
    let references: Vec<Vec<Vec<String>>> = jobs.iter().map(|&(i, _)| vec![cases[i].final_description.clone()]).collect();
    let report = score_corpus(&candidates, &references)?;
    let (question_ratio, answer_ratio) = selection_ratio(&transcripts);
    Ok(EvalOutput { report, question_ratio, answer_ratio, transcripts })
}
