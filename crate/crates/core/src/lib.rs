//! Cooperative question/answer agents that describe a video. The questioner
//! (Q-BOT) sees only two segmented frames and the dialog; the answerer (A-BOT)
//! sees the full clip, its audio and a human caption.

pub mod abot;
pub mod attention;
pub mod candidates;
pub mod checkpoint;
pub mod corpus;
pub mod decode;
pub mod dialog;
pub mod error;
pub mod eval;
pub mod graph;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod params;
pub mod qbot;
pub mod selection;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
