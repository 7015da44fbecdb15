//! Acoustic model, losses and training for the svs workspace: a variational
//! singing synthesizer with a semantic lyric encoder, a note-relative pitch
//! ratio predictor and a frame-level energy predictor.

pub mod checkpoint;
pub mod data;
pub mod decoder;
pub mod discriminator;
pub mod error;
pub mod flow;
pub mod losses;
pub mod mel;
pub mod model;
pub mod modules;
pub mod params;
pub mod posterior;
pub mod prior;
pub mod semantic_encoder;
pub mod synth;
pub mod testing;
pub mod trainer;

pub use error::{ModelError, Result};
pub use model::AcousticModel;
