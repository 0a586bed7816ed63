use std::collections::HashMap;
use std::fs::OpenOptions;
use std::io::Write;
use std::path::PathBuf;
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant, SystemTime, UNIX_EPOCH};

use qacoop_core::corpus::{detokenize, synthesize_toy_corpus, DialogCase, FeatureStore, ROUNDS};
use qacoop_core::dialog::{AnswerSource, Episode, EpisodeConfig, EpisodeInputs, EpisodeStatus, Transcript, TranscriptRound};
use qacoop_core::model::{DialogMode, Model};
use qacoop_core::selection::CandidateBank;
use serde::Serialize;
use tokio::sync::{Mutex as AsyncMutex, OwnedMutexGuard};

use crate::error::ApiError;

/// A trained model with the videos it may be asked about. Shared read-only
/// by every session.
pub struct Deployment {
    pub model: Model,
    pub bank: Option<CandidateBank>,
    pub cases: HashMap<String, DialogCase>,
    pub features: FeatureStore,
    /// Optional image URLs of Q-BOT's two frames, by video id.
    pub thumbnails: HashMap<String, Vec<String>>,
    pub episode: EpisodeConfig,
}

impl Deployment {
    pub fn new(model: Model, cases: Vec<DialogCase>, features: FeatureStore, bank: Option<CandidateBank>) -> qacoop_core::Result<Self> {
        if model.mode() == DialogMode::Discriminative && bank.is_none() {
            return Err(qacoop_core::Error::InvalidArgument("a discriminative deployment needs a candidate bank".into()));
        }
        features.check_covers(&cases)?;
        Ok(Self {
            model,
            bank,
            cases: cases.into_iter().map(|c| (c.video_id.clone(), c)).collect(),
            features,
            thumbnails: HashMap::new(),
            episode: EpisodeConfig { answer_source: AnswerSource::LiveHuman, ..Default::default() },
        })
    }
}

/// Misbehaviour triggered by a specific answer text, for isolation drills.
#[derive(Clone, Debug)]
pub enum Fault {
    Panic,
    Stall(Duration),
}

#[derive(Clone, Debug)]
pub struct ServiceConfig {
    pub idle_timeout: Duration,
    /// Append-only JSON-lines record of finished and expired sessions.
    pub transcript_log: Option<PathBuf>,
    pub faults: HashMap<String, Fault>,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self { idle_timeout: Duration::from_secs(30 * 60), transcript_log: None, faults: HashMap::new() }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SessionStatus {
    AwaitingAnswer,
    Asking,
    Complete,
}

impl From<EpisodeStatus> for SessionStatus {
    fn from(s: EpisodeStatus) -> Self {
        match s {
            EpisodeStatus::AwaitingAnswer => Self::AwaitingAnswer,
            EpisodeStatus::Complete => Self::Complete,
            EpisodeStatus::Asking | EpisodeStatus::Describing => Self::Asking,
        }
    }
}

pub struct Session {
    pub id: String,
    pub mode: DialogMode,
    pub created_at: u64,
    deployment: Arc<Deployment>,
    episode: Episode,
    last_active: Instant,
    flushed: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct SessionView {
    pub session_id: String,
    pub video_id: String,
    pub mode: DialogMode,
    pub status: SessionStatus,
    /// Round of the pending question, or the number of rounds played.
    pub round: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub question: Option<String>,
    pub rounds: Vec<TranscriptRound>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub description: Option<String>,
    pub created_at: u64,
}

impl Session {
    pub fn status(&self) -> SessionStatus {
        self.episode.status().into()
    }

    pub fn transcript(&self) -> &Transcript {
        self.episode.transcript()
    }

    pub fn pending_question(&self) -> Option<(usize, String)> {
        self.episode.pending().map(|p| (p.round, detokenize(&p.tokens)))
    }

    pub fn view(&self) -> SessionView {
        let pending = self.pending_question();
        let complete = self.status() == SessionStatus::Complete;
        SessionView {
            session_id: self.id.clone(),
            video_id: self.transcript().video_id.clone(),
            mode: self.mode,
            status: self.status(),
            round: pending.as_ref().map_or(self.episode.round(), |p| p.0),
            question: pending.map(|p| p.1),
            rounds: self.transcript().rounds.clone(),
            description: complete.then(|| detokenize(&self.transcript().final_description)),
            created_at: self.created_at,
        }
    }

    pub fn thumbnails(&self) -> Option<Vec<String>> {
        self.deployment.thumbnails.get(&self.transcript().video_id).cloned()
    }
}

type SessionHandle = Arc<AsyncMutex<Session>>;

/// What the video of a new session is.
#[derive(Clone, Debug)]
pub enum VideoRef {
    Id(String),
    ToySeed(u64),
}

/// Result of a submitted answer.
pub enum Advance {
    Next { round: usize, question: String },
    Done { description: String, transcript: Transcript },
}

pub struct Service {
    deployments: HashMap<DialogMode, Arc<Deployment>>,
    sessions: Mutex<HashMap<String, SessionHandle>>,
    log: Mutex<()>,
    pub config: ServiceConfig,
}

impl Service {
    pub fn new(deployments: Vec<Deployment>, config: ServiceConfig) -> Self {
        let deployments = deployments.into_iter().map(|d| (d.model.mode(), Arc::new(d))).collect();
        Self { deployments, sessions: Mutex::new(HashMap::new()), log: Mutex::new(()), config }
    }

    pub fn session_count(&self) -> usize {
        self.sessions.lock().expect("session table").len()
    }

    fn deployment(&self, mode: Option<DialogMode>) -> Result<Arc<Deployment>, ApiError> {
        let found = match mode {
            Some(m) => self.deployments.get(&m),
            None if self.deployments.len() == 1 => self.deployments.values().next(),
            None => return Err(ApiError::bad_request("several models are loaded; pass `mode`")),
        };
        found.cloned().ok_or_else(|| ApiError::bad_request(format!("no {} model is loaded", mode.map_or("".into(), |m| m.to_string()))))
    }

    fn handle(&self, id: &str) -> Result<SessionHandle, ApiError> {
        self.sessions.lock().expect("session table").get(id).cloned().ok_or_else(|| ApiError::unknown_session(id))
    }

    /// Starts a dialog and issues its first question.
    pub async fn create(&self, video: VideoRef, mode: Option<DialogMode>) -> Result<(SessionView, Option<Vec<String>>), ApiError> {
        let deployment = self.deployment(mode)?;
        let d = deployment.clone();
        let episode = run_blocking(move || -> Result<Episode, ApiError> {
            let (case, features) = match &video {
                VideoRef::Id(id) => {
                    let case = d.cases.get(id).ok_or_else(|| ApiError::unknown_video(id))?;
                    (case.clone(), d.features.get(id).map_err(|_| ApiError::unknown_video(id))?.clone())
                }
                VideoRef::ToySeed(seed) => {
                    let (mut cases, store) = synthesize_toy_corpus(*seed, 1, d.model.vocab.len().max(8));
                    let case = cases.remove(0);
                    let f = store.get(&case.video_id)?.clone();
                    (case, f)
                }
            };
            let inputs = EpisodeInputs::new(&d.model, &case, &features)?;
            let mut episode = Episode::new(&d.model, inputs, Some(&case.qa_pairs), 1, d.episode.clone())?;
            episode.ask(&d.model, d.bank.as_ref())?;
            Ok(episode)
        })
        .await??;

        let id = uuid::Uuid::new_v4().simple().to_string();
        let created_at = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs());
        let session =
            Session { id: id.clone(), mode: deployment.model.mode(), created_at, deployment, episode, last_active: Instant::now(), flushed: false };
        let view = session.view();
        let thumbs = session.thumbnails();
        self.sessions.lock().expect("session table").insert(id, Arc::new(AsyncMutex::new(session)));
        Ok((view, thumbs))
    }

    pub async fn view(&self, id: &str) -> Result<SessionView, ApiError> {
        let handle = self.handle(id)?;
        let session = handle.try_lock().map_err(|_| ApiError::busy())?;
        Ok(session.view())
    }

    /// Records the human's answer, then asks the next question or, after the
    /// last round, describes the video. Requests on one session are never
    /// interleaved: a concurrent one is turned away as busy.
    pub async fn answer(&self, id: &str, text: String) -> Result<Advance, ApiError> {
        let handle = self.handle(id)?;
        let mut session: OwnedMutexGuard<Session> = handle.try_lock_owned().map_err(|_| ApiError::busy())?;
        if session.status() == SessionStatus::Complete {
            return Err(ApiError::complete());
        }
        session.last_active = Instant::now();
        let fault = self.config.faults.get(&text).cloned();
        // Work on a copy so a failure leaves the session as it was.
        let d = session.deployment.clone();
        let mut episode = session.episode.clone();
        let result = run_blocking(move || -> Result<Episode, ApiError> {
            match fault {
                Some(Fault::Panic) => panic!("injected fault"),
                Some(Fault::Stall(t)) => std::thread::sleep(t),
                None => {}
            }
            episode.answer_with_text(&d.model, d.bank.as_ref(), &text)?;
            if episode.round() < ROUNDS {
                episode.ask(&d.model, d.bank.as_ref())?;
            } else {
                episode.describe(&d.model)?;
            }
            Ok(episode)
        })
        .await;
        session.episode = result??;
        session.last_active = Instant::now();

        if session.status() == SessionStatus::Complete {
            self.flush(&mut session);
            let transcript = session.transcript().clone();
            return Ok(Advance::Done { description: detokenize(&transcript.final_description), transcript });
        }
        let (round, question) = session.pending_question().expect("next question pending");
        Ok(Advance::Next { round, question })
    }

    fn flush(&self, session: &mut Session) {
        if session.flushed {
            return;
        }
        session.flushed = true;
        let Some(path) = &self.config.transcript_log else { return };
        #[derive(Serialize)]
        struct Line<'a> {
            session_id: &'a str,
            complete: bool,
            transcript: &'a Transcript,
        }
        let line = serde_json::to_string(&Line {
            session_id: &session.id,
            complete: session.status() == SessionStatus::Complete,
            transcript: session.transcript(),
        })
        .expect("transcript serializes");
        let _guard = self.log.lock().expect("log lock");
        let written = OpenOptions::new().create(true).append(true).open(path).and_then(|mut f| writeln!(f, "{line}"));
        if let Err(e) = written {
            log::error!("could not append to {}: {e}", path.display());
        }
    }

    /// Drops sessions idle for longer than the timeout, flushing their
    /// transcripts first. Sessions busy with a request are left alone.
    pub fn collect_idle(&self) -> usize {
        let mut table = self.sessions.lock().expect("session table");
        let mut expired = Vec::new();
        for (id, handle) in table.iter() {
            if let Ok(mut s) = handle.try_lock() {
                if s.last_active.elapsed() >= self.config.idle_timeout {
                    self.flush(&mut s);
                    expired.push(id.clone());
                }
            }
        }
        for id in &expired {
            table.remove(id);
        }
        expired.len()
    }
}

async fn run_blocking<T: Send + 'static>(f: impl FnOnce() -> T + Send + 'static) -> Result<T, ApiError> {
    tokio::task::spawn_blocking(f).await.map_err(|e| {
        log::error!("session task failed: {e}");
        ApiError::internal("the request failed; the session is unchanged")
    })
}
