//! Dialog records, vocabulary, precomputed feature tensors, and the seeded
//! toy corpus used for desk-scale runs.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const ROUNDS: usize = 10;

pub type Tokens = Vec<String>;

/// Lowercases, replaces punctuation with spaces and splits on whitespace.
pub fn tokenize(text: &str) -> Tokens {
    let cleaned: String = text
        .chars()
        .map(|c| if c.is_alphanumeric() || c.is_whitespace() { c.to_lowercase().next().unwrap_or(c) } else { ' ' })
        .collect();
    cleaned.split_whitespace().map(str::to_owned).collect()
}

pub fn detokenize(tokens: &[String]) -> String {
    tokens.join(" ")
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    #[default]
    Train,
    Val,
    Test,
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" | "valid" | "validation" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::InvalidArgument(format!("unknown split {other}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct QaPair {
    pub question: Tokens,
    pub answer: Tokens,
}

impl QaPair {
    /// Question tokens followed by answer tokens.
    pub fn joined(&self) -> Tokens {
        self.question.iter().chain(&self.answer).cloned().collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DialogCase {
    pub video_id: String,
    pub input_description: Tokens,
    pub qa_pairs: Vec<QaPair>,
    pub final_description: Tokens,
    pub split: Split,
}

impl DialogCase {
    pub fn validate(&self) -> Result<()> {
        if self.qa_pairs.len() != ROUNDS {
            return Err(Error::QaCount { video_id: self.video_id.clone(), found: self.qa_pairs.len() });
        }
        let empty = |field: String| Error::EmptyText { video_id: self.video_id.clone(), field };
        if self.input_description.is_empty() {
            return Err(empty("caption".into()));
        }
        if self.final_description.is_empty() {
            return Err(empty("summary".into()));
        }
        for (i, p) in self.qa_pairs.iter().enumerate() {
            if p.question.is_empty() {
                return Err(empty(format!("question {}", i + 1)));
            }
            if p.answer.is_empty() {
                return Err(empty(format!("answer {}", i + 1)));
            }
        }
        Ok(())
    }
}

pub const PAD: usize = 0;
pub const SOS: usize = 1;
pub const EOS: usize = 2;
pub const UNK: usize = 3;
const RESERVED: [&str; 4] = ["<pad>", "<sos>", "<eos>", "<unk>"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Vocabulary {
    tokens: Vec<String>,
    #[serde(skip)]
    index: HashMap<String, usize>,
    pub min_count: usize,
}

impl Vocabulary {
    /// Builds from training cases only. Content tokens are ordered by
    /// descending count, then lexicographically.
    pub fn build<'a>(cases: impl IntoIterator<Item = &'a DialogCase>, min_count: usize) -> Self {
        let mut counts: HashMap<&str, usize> = HashMap::new();
        for case in cases.into_iter().filter(|c| c.split == Split::Train) {
            let texts = std::iter::once(&case.input_description)
                .chain(std::iter::once(&case.final_description))
                .chain(case.qa_pairs.iter().flat_map(|p| [&p.question, &p.answer]));
            for t in texts.flatten() {
                *counts.entry(t.as_str()).or_default() += 1;
            }
        }
        let mut content: Vec<(&str, usize)> = counts.into_iter().filter(|(_, c)| *c >= min_count.max(1)).collect();
        content.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
        let tokens = RESERVED.iter().map(|s| s.to_string()).chain(content.into_iter().map(|(t, _)| t.to_owned())).collect();
        Self::from_tokens(tokens, min_count)
    }

    pub fn from_tokens(tokens: Vec<String>, min_count: usize) -> Self {
        let index = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        Self { tokens, index, min_count }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn content_len(&self) -> usize {
        self.tokens.len() - RESERVED.len()
    }

    pub fn index_of(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(UNK)
    }

    pub fn get(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn token(&self, index: usize) -> &str {
        self.tokens.get(index).map_or(RESERVED[UNK], String::as_str)
    }

    pub fn encode(&self, tokens: &[String]) -> Vec<usize> {
        tokens.iter().map(|t| self.index_of(t)).collect()
    }

    pub fn decode(&self, ids: &[usize]) -> Tokens {
        ids.iter().map(|&i| self.token(i).to_owned()).collect()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// Content hash of the token list, recorded in checkpoints.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        for t in &self.tokens {
            h.update(t.as_bytes());
            h.update([0u8]);
        }
        format!("{:x}", h.finalize())
    }

    pub(crate) fn rebuild_index(&mut self) {
        self.index = self.tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
    }
}

// ---------------------------------------------------------------------------
// dataset file

#[derive(Debug, Serialize, Deserialize)]
struct RawDataset {
    dialogs: Vec<RawDialog>,
}

#[derive(Debug, Serialize, Deserialize)]
struct RawDialog {
    image_id: Option<String>,
    caption: Option<String>,
    summary: Option<String>,
    dialog: Option<Vec<RawTurn>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    split: Option<Split>,
}

#[derive(Debug, Serialize, Deserialize)]
struct RawTurn {
    question: Option<String>,
    answer: Option<String>,
}

/// Parses dataset JSON text. Records without a `split` field go to `default_split`.
pub fn parse_dataset(text: &str, default_split: Split, origin: &Path) -> Result<Vec<DialogCase>> {
    let raw: RawDataset = serde_json::from_str(text).map_err(|e| Error::json(origin, e))?;
    raw.dialogs.into_iter().enumerate().map(|(i, d)| convert_dialog(d, i, default_split)).collect()
}

fn convert_dialog(d: RawDialog, position: usize, default_split: Split) -> Result<DialogCase> {
    let video_id = d.image_id.unwrap_or_else(|| format!("<record {position}>"));
    let missing = |field| Error::MissingField { video_id: video_id.clone(), field };
    let caption = d.caption.ok_or_else(|| missing("caption"))?;
    let summary = d.summary.ok_or_else(|| missing("summary"))?;
    let turns = d.dialog.ok_or_else(|| missing("dialog"))?;
    if turns.len() != ROUNDS {
        return Err(Error::QaCount { video_id, found: turns.len() });
    }
    let mut qa_pairs = Vec::with_capacity(ROUNDS);
    for t in turns {
        let q = t.question.ok_or_else(|| missing("question"))?;
        let a = t.answer.ok_or_else(|| missing("answer"))?;
        qa_pairs.push(QaPair { question: tokenize(&q), answer: tokenize(&a) });
    }
    let case = DialogCase {
        video_id: video_id.clone(),
        input_description: tokenize(&caption),
        qa_pairs,
        final_description: tokenize(&summary),
        split: d.split.unwrap_or(default_split),
    };
    case.validate()?;
    Ok(case)
}

/// Reads a dataset file and builds the vocabulary from its training split.
pub fn ingest_dataset(path: &Path, vocab_min_count: usize) -> Result<(Vec<DialogCase>, Vocabulary)> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let cases = parse_dataset(&text, Split::Train, path)?;
    let vocab = Vocabulary::build(&cases, vocab_min_count);
    Ok((cases, vocab))
}

pub fn serialize_dataset(cases: &[DialogCase]) -> String {
    let dialogs = cases
        .iter()
        .map(|c| RawDialog {
            image_id: Some(c.video_id.clone()),
            caption: Some(detokenize(&c.input_description)),
            summary: Some(detokenize(&c.final_description)),
            dialog: Some(
                c.qa_pairs
                    .iter()
                    .map(|p| RawTurn { question: Some(detokenize(&p.question)), answer: Some(detokenize(&p.answer)) })
                    .collect(),
            ),
            split: Some(c.split),
        })
        .collect();
    serde_json::to_string_pretty(&RawDataset { dialogs }).expect("dataset serializes")
}

pub fn by_split(cases: &[DialogCase], split: Split) -> Vec<DialogCase> {
    cases.iter().filter(|c| c.split == split).cloned().collect()
}

// ---------------------------------------------------------------------------
// features

/// Tensor shapes of the precomputed features.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureShape {
    pub abot_frames: usize,
    pub abot_locations: usize,
    pub qbot_frames: usize,
    pub qbot_locations: usize,
    pub channels: usize,
    pub audio: usize,
}

impl FeatureShape {
    /// VGG19 conv features over 4 frames, two segmented frames, VGGish audio.
    pub const FULL: FeatureShape =
        FeatureShape { abot_frames: 4, abot_locations: 49, qbot_frames: 2, qbot_locations: 28, channels: 512, audio: 256 };

    /// Channel and audio widths divided by four for desk-scale runs.
    pub const TOY: FeatureShape =
        FeatureShape { abot_frames: 4, abot_locations: 49, qbot_frames: 2, qbot_locations: 28, channels: 128, audio: 64 };

    pub fn abot_dims(&self) -> Vec<usize> {
        vec![self.abot_frames, self.abot_locations, self.channels]
    }

    pub fn qbot_dims(&self) -> Vec<usize> {
        vec![self.qbot_frames, self.qbot_locations, self.channels]
    }

    pub fn audio_dims(&self) -> Vec<usize> {
        vec![self.audio]
    }
}

impl Default for FeatureShape {
    fn default() -> Self {
        Self::FULL
    }
}

/// Raw per-video tensors, kept in single precision.
#[derive(Clone, Debug, PartialEq)]
pub struct VideoFeatures {
    pub abot_visual: Vec<f32>,
    pub qbot_visual: Vec<f32>,
    pub audio: Vec<f32>,
}

impl VideoFeatures {
    fn frames(data: &[f32], frames: usize, locations: usize, channels: usize) -> Vec<Tensor> {
        (0..frames)
            .map(|f| {
                let chunk = &data[f * locations * channels..(f + 1) * locations * channels];
                Tensor::from_vec(locations, channels, chunk.iter().map(|&v| v as f64).collect())
            })
            .collect()
    }

    pub fn abot_frames(&self, shape: &FeatureShape) -> Vec<Tensor> {
        Self::frames(&self.abot_visual, shape.abot_frames, shape.abot_locations, shape.channels)
    }

    pub fn qbot_frames(&self, shape: &FeatureShape) -> Vec<Tensor> {
        Self::frames(&self.qbot_visual, shape.qbot_frames, shape.qbot_locations, shape.channels)
    }

    pub fn audio_vector(&self) -> Tensor {
        Tensor::row_vector(self.audio.iter().map(|&v| v as f64).collect())
    }
}

#[derive(Clone, Debug, Default)]
pub struct FeatureStore {
    pub shape: FeatureShape,
    videos: BTreeMap<String, VideoFeatures>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    videos: BTreeMap<String, ManifestEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ManifestEntry {
    abot_visual: TensorRef,
    qbot_visual: TensorRef,
    audio: TensorRef,
}

#[derive(Debug, Serialize, Deserialize)]
struct TensorRef {
    file: PathBuf,
    shape: Vec<usize>,
}

impl FeatureStore {
    pub fn new(shape: FeatureShape) -> Self {
        Self { shape, videos: BTreeMap::new() }
    }

    pub fn insert(&mut self, video_id: impl Into<String>, features: VideoFeatures) -> Result<()> {
        let video_id = video_id.into();
        let shape = self.shape;
        check_len(&video_id, "abot_visual", &features.abot_visual, shape.abot_dims())?;
        check_len(&video_id, "qbot_visual", &features.qbot_visual, shape.qbot_dims())?;
        check_len(&video_id, "audio", &features.audio, shape.audio_dims())?;
        self.videos.insert(video_id, features);
        Ok(())
    }

    pub fn get(&self, video_id: &str) -> Result<&VideoFeatures> {
        self.videos.get(video_id).ok_or_else(|| Error::UnknownVideo(video_id.to_owned()))
    }

    pub fn contains(&self, video_id: &str) -> bool {
        self.videos.contains_key(video_id)
    }

    pub fn len(&self) -> usize {
        self.videos.len()
    }

    pub fn is_empty(&self) -> bool {
        self.videos.is_empty()
    }

    pub fn video_ids(&self) -> impl Iterator<Item = &str> {
        self.videos.keys().map(String::as_str)
    }

    /// Fails on the first dataset video without features.
    pub fn check_covers(&self, cases: &[DialogCase]) -> Result<()> {
        for c in cases {
            self.get(&c.video_id)?;
        }
        Ok(())
    }

    /// Writes headerless little-endian f32 files plus `manifest.json` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<PathBuf> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut manifest = Manifest { videos: BTreeMap::new() };
        for (i, (id, f)) in self.videos.iter().enumerate() {
            let write = |tag: &str, data: &[f32], shape: Vec<usize>| -> Result<TensorRef> {
                let file = PathBuf::from(format!("v{i:05}_{tag}.f32"));
                let bytes: Vec<u8> = data.iter().flat_map(|v| v.to_le_bytes()).collect();
                let path = dir.join(&file);
                fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
                Ok(TensorRef { file, shape })
            };
            let entry = ManifestEntry {
                abot_visual: write("abot", &f.abot_visual, self.shape.abot_dims())?,
                qbot_visual: write("qbot", &f.qbot_visual, self.shape.qbot_dims())?,
                audio: write("audio", &f.audio, self.shape.audio_dims())?,
            };
            manifest.videos.insert(id.clone(), entry);
        }
        let path = dir.join("manifest.json");
        let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }
}

fn check_len(video_id: &str, tensor: &'static str, data: &[f32], shape: Vec<usize>) -> Result<()> {
    let expected: usize = shape.iter().product();
    if data.len() != expected {
        return Err(Error::SizeMismatch { video_id: video_id.to_owned(), tensor, expected, found: data.len() });
    }
    if data.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite { video_id: video_id.to_owned(), tensor });
    }
    Ok(())
}

/// Loads every tensor listed in the manifest, enforcing `shape` exactly.
/// Relative file paths resolve against the manifest's directory.
pub fn load_feature_store(manifest_path: &Path, shape: FeatureShape) -> Result<FeatureStore> {
    let text = fs::read_to_string(manifest_path).map_err(|e| Error::io(manifest_path, e))?;
    let manifest: Manifest = serde_json::from_str(&text).map_err(|e| Error::json(manifest_path, e))?;
    let base = manifest_path.parent().unwrap_or(Path::new("."));
    let mut store = FeatureStore::new(shape);
    for (id, entry) in manifest.videos {
        let abot_visual = read_tensor(base, &id, "abot_visual", &entry.abot_visual, shape.abot_dims())?;
        let qbot_visual = read_tensor(base, &id, "qbot_visual", &entry.qbot_visual, shape.qbot_dims())?;
        let audio = read_tensor(base, &id, "audio", &entry.audio, shape.audio_dims())?;
        store.insert(id, VideoFeatures { abot_visual, qbot_visual, audio })?;
    }
    Ok(store)
}

fn read_tensor(base: &Path, video_id: &str, tensor: &'static str, r: &TensorRef, expected: Vec<usize>) -> Result<Vec<f32>> {
    if r.shape != expected {
        return Err(Error::ShapeMismatch { video_id: video_id.to_owned(), tensor, expected, found: r.shape.clone() });
    }
    let path = if r.file.is_absolute() { r.file.clone() } else { base.join(&r.file) };
    let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
    let want: usize = expected.iter().product();
    if bytes.len() != want * 4 {
        return Err(Error::SizeMismatch { video_id: video_id.to_owned(), tensor, expected: want, found: bytes.len() / 4 });
    }
    let data: Vec<f32> = bytes.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
    if data.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite { video_id: video_id.to_owned(), tensor });
    }
    Ok(data)
}

// ---------------------------------------------------------------------------
// toy corpus

const TOY_WORDS: &[&str] = &[
    "what", "who", "where", "is", "the", "does", "how", "any", "there", "color", "doing", "many", "sound", "room",
    "they", "person", "man", "woman", "dog", "cat", "kitchen", "bedroom", "sofa", "table", "cup", "phone", "book",
    "door", "window", "laptop", "towel", "broom", "chair", "shelf", "blanket", "sandwich", "red", "blue", "green",
    "white", "black", "walks", "sits", "opens", "closes", "holds", "drinks", "eats", "reads", "laughs", "sneezes",
    "cleans", "stands", "sleeps", "watches", "throws", "picks", "puts", "runs", "talks",
];

fn toy_words(budget: usize) -> Vec<String> {
    (0..budget).map(|i| TOY_WORDS.get(i).map_or_else(|| format!("w{i}"), |w| (*w).to_owned())).collect()
}

/// Deterministic synthetic corpus. `vocab_size` counts the four reserved
/// symbols, so a vocabulary built from the result never exceeds it. Every
/// summary token is mentioned in some answer of the same dialog.
pub fn synthesize_toy_corpus(seed: u64, n_cases: usize, vocab_size: usize) -> (Vec<DialogCase>, FeatureStore) {
    assert!(n_cases >= 1, "n_cases must be at least 1");
    assert!(vocab_size >= 8, "vocab_size must be at least 8");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let words = toy_words(vocab_size - RESERVED.len());
    let n_frame = (words.len() / 4).max(2);
    let (frame, facts) = words.split_at(n_frame);

    let shape = FeatureShape::TOY;
    let mut store = FeatureStore::new(shape);
    let mut cases = Vec::with_capacity(n_cases);
    for idx in 0..n_cases {
        let case_facts: Vec<String> = if facts.len() >= 5 {
            facts.choose_multiple(&mut rng, 5).cloned().collect()
        } else {
            (0..5).map(|_| facts.choose(&mut rng).expect("facts").clone()).collect()
        };
        let mut qa_pairs = Vec::with_capacity(ROUNDS);
        for round in 0..ROUNDS {
            let subject = case_facts[round % case_facts.len()].clone();
            let question = vec![frame[round % n_frame].clone(), frame[(round * 3 + 1) % n_frame].clone(), subject.clone()];
            let extra = facts.choose(&mut rng).expect("facts").clone();
            let answer = vec![subject, extra];
            qa_pairs.push(QaPair { question, answer });
        }
        let mut summary = case_facts.clone();
        summary.truncate(4);
        let mut caption = case_facts.clone();
        caption.shuffle(&mut rng);
        caption.push(facts.choose(&mut rng).expect("facts").clone());

        let video_id = format!("toy-{seed}-{idx:04}");
        let mut gen = |n: usize| -> Vec<f32> { (0..n).map(|_| rng.gen_range(-1.0f32..1.0)).collect() };
        let features = VideoFeatures {
            abot_visual: gen(shape.abot_dims().iter().product()),
            qbot_visual: gen(shape.qbot_dims().iter().product()),
            audio: gen(shape.audio),
        };
        store.insert(video_id.clone(), features).expect("toy features have the toy shape");
        cases.push(DialogCase {
            video_id,
            input_description: caption,
            qa_pairs,
            final_description: summary,
            split: Split::Train,
        });
    }
    (cases, store)
}
