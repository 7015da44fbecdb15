//! The prepared-data manifest (line-delimited JSON, one record per utterance)
//! and the binary frame-feature cache keyed by utterance id + config hash.

use std::io::{BufRead, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::corpus::Utterance;
use crate::dsp::FrameFeatures;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub audio: String,
    pub text: Vec<String>,
    pub phonemes: Vec<String>,
    pub note_pitches: Vec<u8>,
    pub note_durations_sec: Vec<f64>,
    pub phoneme_durations_sec: Vec<f64>,
    pub slur_flags: Vec<u8>,
    pub n_frames: usize,
}

impl ManifestEntry {
    pub fn from_utterance(utt: &Utterance, n_frames: usize) -> Self {
        Self {
            id: utt.id.clone(),
            audio: utt.audio_path.clone(),
            text: utt.text.clone(),
            phonemes: utt.phonemes.clone(),
            note_pitches: utt.note_pitches.clone(),
            note_durations_sec: utt.note_durations_sec.clone(),
            phoneme_durations_sec: utt.phoneme_durations_sec.clone(),
            slur_flags: utt.slur_flags.clone(),
            n_frames,
        }
    }

    pub fn to_utterance(&self) -> Utterance {
        Utterance {
            id: self.id.clone(),
            text: self.text.clone(),
            phonemes: self.phonemes.clone(),
            note_pitches: self.note_pitches.clone(),
            note_durations_sec: self.note_durations_sec.clone(),
            phoneme_durations_sec: self.phoneme_durations_sec.clone(),
            slur_flags: self.slur_flags.clone(),
            audio_path: self.audio.clone(),
        }
    }
}

pub fn write_manifest(path: &Path, entries: &[ManifestEntry]) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut writer = std::io::BufWriter::new(file);
    for entry in entries {
        let line = serde_json::to_string(entry).expect("manifest entry serializes");
        writeln!(writer, "{line}").map_err(|e| Error::io(path, e))?;
    }
    writer.flush().map_err(|e| Error::io(path, e))
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestEntry>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let reader = std::io::BufReader::new(file);
    let mut entries = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let entry: ManifestEntry = serde_json::from_str(&line)
            .map_err(|e| Error::parse(path, format!("line {}: {e}", lineno + 1)))?;
        entries.push(entry);
    }
    Ok(entries)
}

const FEATURE_MAGIC: &[u8; 8] = b"SVSFEAT1";

/// Directory of per-utterance feature blobs. A blob is only served back when
/// its stored key matches, so stale caches miss instead of corrupting a run.
pub struct FeatureCache {
    dir: PathBuf,
    key: String,
}

impl FeatureCache {
    pub fn create(dir: impl Into<PathBuf>, key: impl Into<String>) -> Result<Self> {
        let dir = dir.into();
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        Ok(Self { dir, key: key.into() })
    }

    fn path_of(&self, id: &str) -> PathBuf {
        self.dir.join(format!("{id}.feat"))
    }

    pub fn store(&self, id: &str, features: &FrameFeatures) -> Result<()> {
        features.validate()?;
        let path = self.path_of(id);
        let mut buf: Vec<u8> = Vec::new();
        buf.extend_from_slice(FEATURE_MAGIC);
        write_bytes(&mut buf, self.key.as_bytes());
        for dim in [features.n_frames, features.n_bins, features.n_mels] {
            buf.extend_from_slice(&(dim as u32).to_le_bytes());
        }
        write_f32s(&mut buf, &features.linear_spec);
        write_f32s(&mut buf, &features.mel_spec);
        write_f32s(&mut buf, &features.energy);
        write_f32s(&mut buf, &features.lf0);
        write_bytes(&mut buf, &features.voicing);
        std::fs::write(&path, buf).map_err(|e| Error::io(path, e))
    }

    /// `Ok(None)` when the blob is absent or was written under another key.
    pub fn load(&self, id: &str) -> Result<Option<FrameFeatures>> {
        let path = self.path_of(id);
        let data = match std::fs::read(&path) {
            Ok(d) => d,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(None),
            Err(e) => return Err(Error::io(path, e)),
        };
        let mut cursor = std::io::Cursor::new(data);
        let mut magic = [0u8; 8];
        cursor.read_exact(&mut magic).map_err(|e| Error::io(&path, e))?;
        if &magic != FEATURE_MAGIC {
            return Err(Error::parse(&path, "bad feature magic"));
        }
        let key = read_bytes(&mut cursor, &path)?;
        if key != self.key.as_bytes() {
            return Ok(None);
        }
        let n_frames = read_u32(&mut cursor, &path)? as usize;
        let n_bins = read_u32(&mut cursor, &path)? as usize;
        let n_mels = read_u32(&mut cursor, &path)? as usize;
        let features = FrameFeatures {
            n_frames,
            n_bins,
            n_mels,
            linear_spec: read_f32s(&mut cursor, &path)?,
            mel_spec: read_f32s(&mut cursor, &path)?,
            energy: read_f32s(&mut cursor, &path)?,
            lf0: read_f32s(&mut cursor, &path)?,
            voicing: read_bytes(&mut cursor, &path)?,
        };
        features.validate()?;
        Ok(Some(features))
    }
}

fn write_bytes(buf: &mut Vec<u8>, bytes: &[u8]) {
    buf.extend_from_slice(&(bytes.len() as u32).to_le_bytes());
    buf.extend_from_slice(bytes);
}

fn write_f32s(buf: &mut Vec<u8>, values: &[f32]) {
    buf.extend_from_slice(&(values.len() as u32).to_le_bytes());
    for v in values {
        buf.extend_from_slice(&v.to_le_bytes());
    }
}

fn read_u32(cursor: &mut std::io::Cursor<Vec<u8>>, path: &Path) -> Result<u32> {
    let mut b = [0u8; 4];
    cursor.read_exact(&mut b).map_err(|e| Error::io(path, e))?;
    Ok(u32::from_le_bytes(b))
}

fn read_bytes(cursor: &mut std::io::Cursor<Vec<u8>>, path: &Path) -> Result<Vec<u8>> {
    let len = read_u32(cursor, path)? as usize;
    let mut out = vec![0u8; len];
    cursor.read_exact(&mut out).map_err(|e| Error::io(path, e))?;
    Ok(out)
}

fn read_f32s(cursor: &mut std::io::Cursor<Vec<u8>>, path: &Path) -> Result<Vec<f32>> {
    let len = read_u32(cursor, path)? as usize;
    let mut out = Vec::with_capacity(len);
    let mut b = [0u8; 4];
    for _ in 0..len {
        cursor.read_exact(&mut b).map_err(|e| Error::io(path, e))?;
        out.push(f32::from_le_bytes(b));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_features() -> FrameFeatures {
        FrameFeatures {
            n_frames: 2,
            n_bins: 3,
            n_mels: 2,
            linear_spec: vec![0.0, 1.0, 2.0, 3.0, 4.0, 5.0],
            mel_spec: vec![-1.0, -2.0, -3.0, -4.0],
            energy: vec![0.5, 1.5],
            lf0: vec![6.0, 0.0],
            voicing: vec![1, 0],
        }
    }

    #[test]
    fn cache_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let cache = FeatureCache::create(dir.path(), "k1").unwrap();
        let f = sample_features();
        cache.store("u1", &f).unwrap();
        assert_eq!(cache.load("u1").unwrap(), Some(f));
        assert_eq!(cache.load("missing").unwrap(), None);
    }

    #[test]
    fn stale_key_misses() {
        let dir = tempfile::tempdir().unwrap();
        let old = FeatureCache::create(dir.path(), "old").unwrap();
        old.store("u1", &sample_features()).unwrap();
        let new = FeatureCache::create(dir.path(), "new").unwrap();
        assert_eq!(new.load("u1").unwrap(), None);
    }

    #[test]
    fn manifest_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("manifest.jsonl");
        let entry = ManifestEntry {
            id: "u1".into(),
            audio: "wavs/u1.wav".into(),
            text: vec!["我".into()],
            phonemes: vec!["w".into(), "o".into()],
            note_pitches: vec![60, 60],
            note_durations_sec: vec![0.4, 0.4],
            phoneme_durations_sec: vec![0.1, 0.3],
            slur_flags: vec![0, 0],
            n_frames: 33,
        };
        write_manifest(&path, std::slice::from_ref(&entry)).unwrap();
        let back = read_manifest(&path).unwrap();
        assert_eq!(back, vec![entry]);
    }
}
