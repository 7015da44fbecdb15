//! Data and signal layer for the singing-voice-synthesis workspace: parsing
//! of annotated singing corpora, score math, frame-level feature extraction
//! and the lyric-semantics plumbing the acoustic model builds on.

pub mod config;
pub mod corpus;
pub mod dsp;
pub mod error;
pub mod fixtures;
pub mod lexicon;
pub mod manifest;
pub mod prepare;
pub mod score;
pub mod semantic;

pub use error::{Error, Result};
