use qacoop_core::abot::DONT_KNOW;
use qacoop_core::corpus::{synthesize_toy_corpus, DialogCase, FeatureStore, QaPair, Vocabulary, EOS};
use qacoop_core::dialog::{
    enumerate_test_cases, run_episode, shuffle_history, transcripts_to_jsonl, update_history, AnswerSource, Episode, EpisodeConfig,
    EpisodeInputs, EpisodeStatus, HistoryState, Provenance, Transcript,
};
use qacoop_core::eval::build_bank;
use qacoop_core::graph::Graph;
use qacoop_core::model::{DialogMode, Model, ModelConfig, QbotFrames};
use qacoop_core::qbot::{Observation, QBotView};
use qacoop_core::tensor::Tensor;
use qacoop_core::Error;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn toy(mode: DialogMode, seed: u64) -> (Model, Vec<DialogCase>, FeatureStore) {
    let (cases, store) = synthesize_toy_corpus(11, 3, 40);
    let vocab = Vocabulary::build(&cases, 1);
    let model = Model::new(ModelConfig::toy(mode, 0), vocab, seed).unwrap();
    (model, cases, store)
}

fn random_row(rng: &mut ChaCha8Rng, n: usize) -> Tensor {
    Tensor::row_vector((0..n).map(|_| rng.gen_range(-1.0..1.0)).collect())
}

#[test]
fn qbot_refuses_abot_only_inputs() {
    let frame = Tensor::zeros(4, 3);
    let forbidden = [
        Observation::Audio(Tensor::zeros(1, 3)),
        Observation::InputDescription(vec![4, 5]),
        Observation::AbotFrames(vec![frame.clone()]),
    ];
    for obs in forbidden {
        let err = QBotView::from_observations(vec![Observation::QbotFrames(vec![frame.clone()]), obs], QbotFrames::Segmented2).unwrap_err();
        assert!(matches!(err, Error::InvalidArgument(_)), "{err}");
    }
    let view = QBotView::from_observations(vec![Observation::QbotFrames(vec![frame.clone(), frame.clone()])], QbotFrames::Segmented2).unwrap();
    assert_eq!(view.frames().len(), 2);
    // the full-frame ablation admits the full frames but still not audio
    assert!(QBotView::from_observations(vec![Observation::AbotFrames(vec![frame.clone()])], QbotFrames::Full).is_ok());
    assert!(QBotView::from_observations(vec![Observation::Audio(frame)], QbotFrames::Full).is_err());
}

#[test]
fn recurrent_visual_states_depend_on_frame_order() {
    for seed in 0..20u64 {
        let (model, _, _) = toy(DialogMode::Discriminative, seed);
        let d = model.config.dims;
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
        let frames: Vec<Tensor> = (0..2).map(|_| random_row(&mut rng, d.attended_visual)).collect();
        let audio = random_row(&mut rng, d.attended_audio);

        let mut g = Graph::new(&model.store);
        let f: Vec<_> = frames.iter().map(|t| g.constant(t.clone())).collect();
        let rev: Vec<_> = f.iter().rev().copied().collect();
        let fwd = model.qbot_visual_state(&mut g, &f);
        let bwd = model.qbot_visual_state(&mut g, &rev);
        let gap = max_gap(g.value(fwd.hidden), g.value(bwd.hidden));
        assert!(gap > 1e-6, "seed {seed}: Q-BOT state ignores order ({gap})");

        let a = g.constant(audio);
        let fwd = model.abot_av_state(&mut g, Some(a), &f);
        let bwd = model.abot_av_state(&mut g, Some(a), &rev);
        let gap = max_gap(g.value(fwd.hidden), g.value(bwd.hidden));
        assert!(gap > 1e-6, "seed {seed}: A-BOT state ignores order ({gap})");
    }
}

fn max_gap(a: &Tensor, b: &Tensor) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

#[test]
fn zero_reduce_weights_keep_only_the_new_pair() {
    let (mut model, cases, _) = toy(DialogMode::Generative, 3);
    *model.store.get_mut(model.history.reduce.weight) = Tensor::zeros(model.history.reduce.in_dim, model.history.reduce.out_dim);
    let state = HistoryState::new(&model);
    let pair = &cases[0].qa_pairs[0];
    let next = update_history(&model, &state, pair).unwrap();

    let d = model.config.dims;
    assert!(next.summary[..d.pair].iter().all(|&v| v == 0.0));
    let mut g = Graph::new(&model.store);
    let p = g.constant(Tensor::row_vector(next.pair_embeddings[0].clone()));
    let proj = model.history.pair_proj.forward(&mut g, p);
    assert_eq!(&next.summary[d.pair..], g.value(proj).data());
}

#[test]
fn summary_width_is_fixed_and_history_caps_at_ten() {
    let (model, cases, _) = toy(DialogMode::Generative, 4);
    let mut state = HistoryState::new(&model);
    let width = model.config.dims.history;
    assert_eq!(state.summary.len(), width);
    for pair in &cases[0].qa_pairs {
        state = update_history(&model, &state, pair).unwrap();
        assert_eq!(state.summary.len(), width);
    }
    assert_eq!(state.round, 10);
    let err = update_history(&model, &state, &cases[0].qa_pairs[0]).unwrap_err();
    assert!(matches!(err, Error::HistoryFull(10)));
}

#[test]
fn provenance_follows_mode_and_answer_source() {
    let (model, cases, store) = toy(DialogMode::Generative, 5);
    let f = store.get(&cases[0].video_id).unwrap();
    let t = run_episode(&model, &cases[0], f, 1, None, &EpisodeConfig::default()).unwrap();
    assert!(t.rounds.iter().all(|r| r.question_provenance == Provenance::Generated && r.answer_provenance == Provenance::Generated));

    let (model, cases, store) = toy(DialogMode::Discriminative, 5);
    let bank = build_bank(&model, &cases, None, 2, 0).unwrap();
    let config = EpisodeConfig { answer_source: AnswerSource::SimulatedHuman, ..Default::default() };
    let t = run_episode(&model, &cases[0], store.get(&cases[0].video_id).unwrap(), 1, Some(&bank), &config).unwrap();
    for r in &t.rounds {
        assert_eq!(r.question_provenance, Provenance::Selected);
        assert_eq!(r.answer_provenance, Provenance::GroundTruth);
        let q = r.question_selection.as_ref().unwrap();
        let paired = bank.set.paired_answer(q.index).cloned().unwrap_or_else(|| DONT_KNOW.iter().map(|s| s.to_string()).collect());
        assert_eq!(r.answer, paired);
    }
}

#[test]
fn later_start_rounds_seed_ground_truth() {
    let (model, cases, store) = toy(DialogMode::Generative, 6);
    let case = &cases[1];
    let t = run_episode(&model, case, store.get(&case.video_id).unwrap(), 6, None, &EpisodeConfig::default()).unwrap();
    assert_eq!(t.rounds.len(), 10);
    for (r, gt) in t.rounds[..5].iter().zip(&case.qa_pairs) {
        assert_eq!((&r.question, &r.answer), (&gt.question, &gt.answer));
        assert_eq!(r.question_provenance, Provenance::GroundTruth);
    }
    assert!(t.rounds[5..].iter().all(|r| r.question_provenance == Provenance::Generated));
    assert_eq!(t.rounds.iter().map(|r| r.round).collect::<Vec<_>>(), (1..=10).collect::<Vec<_>>());
    assert_eq!(t.start_round, 6);
}

#[test]
fn full_episode_has_ten_rounds_then_a_description() {
    let (model, cases, store) = toy(DialogMode::Generative, 7);
    let inputs = EpisodeInputs::new(&model, &cases[0], store.get(&cases[0].video_id).unwrap()).unwrap();
    let mut e = Episode::new(&model, inputs, Some(&cases[0].qa_pairs), 1, EpisodeConfig::default()).unwrap();
    for round in 1..=10 {
        assert_eq!(e.status(), EpisodeStatus::Asking);
        assert_eq!(e.ask(&model, None).unwrap().round, round);
        assert_eq!(e.status(), EpisodeStatus::AwaitingAnswer);
        assert!(e.describe(&model).is_err());
        e.answer(&model, None, AnswerSource::ABot).unwrap();
    }
    assert_eq!(e.status(), EpisodeStatus::Describing);
    assert!(e.ask(&model, None).is_err());
    e.describe(&model).unwrap();
    assert_eq!(e.status(), EpisodeStatus::Complete);
    assert_eq!(e.transcript().rounds.len(), 10);
}

#[test]
fn harness_enumerates_ten_entries_per_case() {
    let (_, cases, _) = toy(DialogMode::Generative, 0);
    let eight: Vec<DialogCase> = (0..8).map(|i| cases[i % cases.len()].clone()).collect();
    assert_eq!(enumerate_test_cases(&eight, false).len(), 80);
    assert_eq!(enumerate_test_cases(&eight, true).len(), 8);

    let big: Vec<DialogCase> = (0..733).map(|i| cases[i % cases.len()].clone()).collect();
    let standard = enumerate_test_cases(&big, false);
    assert_eq!(standard.len(), 7330);
    assert_eq!(enumerate_test_cases(&big, true).len(), 733);
    assert!(standard.iter().all(|&(_, r)| (1..=10).contains(&r)));
}

fn sorted(pairs: &[QaPair]) -> Vec<QaPair> {
    let mut v = pairs.to_vec();
    v.sort_by(|a, b| a.joined().cmp(&b.joined()));
    v
}

#[test]
fn history_shuffle_is_seeded_and_keeps_pairs() {
    let (_, cases, _) = toy(DialogMode::Generative, 0);
    let case = &cases[0];
    let a = shuffle_history(case, 1);
    assert_eq!(a.qa_pairs, shuffle_history(case, 1).qa_pairs);
    assert_eq!(sorted(&a.qa_pairs), sorted(&case.qa_pairs));
    assert_ne!(a.qa_pairs, case.qa_pairs, "seed 1 leaves the order unchanged");
    assert_ne!(a.qa_pairs, shuffle_history(case, 2).qa_pairs);
    assert_eq!((&a.final_description, &a.input_description), (&case.final_description, &case.input_description));
}

#[test]
fn episodes_are_deterministic_and_transcripts_round_trip() {
    let (model, cases, store) = toy(DialogMode::Discriminative, 8);
    let bank = build_bank(&model, &cases, None, 3, 1).unwrap();
    let f = store.get(&cases[2].video_id).unwrap();
    let a = run_episode(&model, &cases[2], f, 3, Some(&bank), &EpisodeConfig::default()).unwrap();
    let b = run_episode(&model, &cases[2], f, 3, Some(&bank), &EpisodeConfig::default()).unwrap();
    assert_eq!(a.to_json_line(), b.to_json_line());

    let jsonl = transcripts_to_jsonl(&[a.clone(), b]);
    let back: Vec<Transcript> = jsonl.lines().map(|l| Transcript::from_json_line(l).unwrap()).collect();
    assert_eq!(back.len(), 2);
    assert_eq!(back[0], a);
    assert!(a.rounds[2..].iter().all(|r| r.question_selection.is_some() && r.answer_selection.is_some()));
}

#[test]
fn decoder_stuck_on_eos_yields_empty_questions() {
    let (mut model, cases, store) = toy(DialogMode::Generative, 9);
    let out = model.qbot.question_decoder.output.clone();
    *model.store.get_mut(out.weight) = Tensor::zeros(out.in_dim, out.out_dim);
    let mut bias = Tensor::zeros(1, out.out_dim);
    bias.set(0, EOS, 50.0);
    *model.store.get_mut(out.bias.unwrap()) = bias;

    let t = run_episode(&model, &cases[0], store.get(&cases[0].video_id).unwrap(), 1, None, &EpisodeConfig::default()).unwrap();
    assert_eq!(t.rounds.len(), 10);
    assert!(t.rounds.iter().all(|r| r.question.is_empty() && !r.question_truncated));
}

#[test]
fn empty_human_answer_means_dont_know() {
    let (model, cases, store) = toy(DialogMode::Generative, 10);
    let inputs = EpisodeInputs::new(&model, &cases[0], store.get(&cases[0].video_id).unwrap()).unwrap();
    let config = EpisodeConfig { answer_source: AnswerSource::LiveHuman, ..Default::default() };
    let mut e = Episode::new(&model, inputs, None, 1, config).unwrap();
    e.ask(&model, None).unwrap();
    assert!(e.answer(&model, None, AnswerSource::LiveHuman).is_err());
    e.answer_with_text(&model, None, "   ").unwrap();
    let r = &e.transcript().rounds[0];
    assert_eq!(r.answer, DONT_KNOW.iter().map(|s| s.to_string()).collect::<Vec<_>>());
    assert_eq!(r.answer_provenance, Provenance::Human);
}

#[test]
fn discriminative_episode_requires_a_bank() {
    let (model, cases, store) = toy(DialogMode::Discriminative, 11);
    let err = run_episode(&model, &cases[0], store.get(&cases[0].video_id).unwrap(), 1, None, &EpisodeConfig::default()).unwrap_err();
    assert!(matches!(err, Error::InvalidArgument(_)));
}
