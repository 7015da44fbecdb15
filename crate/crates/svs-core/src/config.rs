//! The run configuration shared by data preparation, training, synthesis and
//! evaluation. One TOML file carries every knob so the stages agree; the
//! compatibility-relevant subset is hashed into checkpoints.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dsp::StftConfig;
use crate::error::{Error, Result};
use crate::lexicon::PhonemeVocab;
use crate::score::QuantizerSpec;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SemVariant {
    Standard,
    Reversed,
    Off,
}

impl std::str::FromStr for SemVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "standard" => Ok(Self::Standard),
            "reversed" => Ok(Self::Reversed),
            "off" => Ok(Self::Off),
            other => Err(Error::ConfigInvalid(format!("unknown sem variant {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MelConfig {
    pub n_mels: usize,
    pub fmin: f32,
    pub fmax: f32,
}

impl Default for MelConfig {
    fn default() -> Self {
        Self { n_mels: 80, fmin: 0.0, fmax: 12_000.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct F0Config {
    pub fmin: f32,
    pub fmax: f32,
    pub threshold: f32,
}

impl Default for F0Config {
    fn default() -> Self {
        Self { fmin: 60.0, fmax: 1200.0, threshold: 0.2 }
    }
}

/// Network sizes. Plain data here; the model crate interprets them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelDims {
    pub hidden_dim: usize,
    pub phoneme_encoder_blocks: usize,
    pub attention_heads: usize,
    pub ffn_filter: usize,
    pub ffn_kernel: usize,
    pub semantic_blocks: usize,
    pub semantic_input_dim: usize,
    pub duration_layers: usize,
    pub duration_kernel: usize,
    pub pitch_layers: usize,
    pub pitch_kernel: usize,
    pub energy_layers: usize,
    pub energy_kernel: usize,
    pub predictor_filter: usize,
    pub frame_prior_layers: usize,
    pub latent_dim: usize,
    pub posterior_layers: usize,
    pub posterior_kernel: usize,
    pub flow_layers: usize,
    pub flow_hidden: usize,
    pub decoder_channels: usize,
    pub decoder_upsample: Vec<usize>,
    pub decoder_resblock_kernel: usize,
    pub decoder_resblock_dilations: Vec<usize>,
    pub discriminator_periods: Vec<usize>,
    pub n_pitch_bins: usize,
    pub n_energy_bins: usize,
    pub dropout: f64,
    pub use_energy: bool,
}

impl Default for ModelDims {
    fn default() -> Self {
        Self {
            hidden_dim: 192,
            phoneme_encoder_blocks: 6,
            attention_heads: 2,
            ffn_filter: 768,
            ffn_kernel: 3,
            semantic_blocks: 6,
            semantic_input_dim: 768,
            duration_layers: 3,
            duration_kernel: 3,
            pitch_layers: 5,
            pitch_kernel: 5,
            energy_layers: 2,
            energy_kernel: 3,
            predictor_filter: 256,
            frame_prior_layers: 4,
            latent_dim: 16,
            posterior_layers: 4,
            posterior_kernel: 5,
            flow_layers: 2,
            flow_hidden: 64,
            decoder_channels: 128,
            decoder_upsample: vec![8, 8, 4],
            decoder_resblock_kernel: 3,
            decoder_resblock_dilations: vec![1, 3],
            discriminator_periods: vec![2, 3],
            n_pitch_bins: 256,
            n_energy_bins: 256,
            dropout: 0.1,
            use_energy: true,
        }
    }
}

impl ModelDims {
    /// Minimal dims for gradient checks and shape tests.
    pub fn toy() -> Self {
        Self {
            hidden_dim: 8,
            phoneme_encoder_blocks: 1,
            attention_heads: 2,
            ffn_filter: 16,
            ffn_kernel: 3,
            semantic_blocks: 1,
            semantic_input_dim: 12,
            duration_layers: 2,
            duration_kernel: 3,
            pitch_layers: 2,
            pitch_kernel: 3,
            energy_layers: 2,
            energy_kernel: 3,
            predictor_filter: 8,
            frame_prior_layers: 2,
            latent_dim: 4,
            posterior_layers: 2,
            posterior_kernel: 3,
            flow_layers: 2,
            flow_hidden: 8,
            decoder_channels: 8,
            decoder_upsample: vec![2, 2],
            decoder_resblock_kernel: 3,
            decoder_resblock_dilations: vec![1, 2],
            discriminator_periods: vec![2],
            n_pitch_bins: 16,
            n_energy_bins: 16,
            dropout: 0.0,
            use_energy: true,
        }
    }

    pub fn upsample_product(&self) -> usize {
        self.decoder_upsample.iter().product()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerSchedule {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub lr0: f64,
    pub decay: f64,
    /// Apply the decay every step instead of every epoch.
    pub decay_per_step: bool,
    pub weight_decay: f64,
}

impl Default for OptimizerSchedule {
    fn default() -> Self {
        Self {
            beta1: 0.8,
            beta2: 0.99,
            epsilon: 1e-9,
            lr0: 1e-4,
            decay: 0.999875,
            decay_per_step: false,
            weight_decay: 0.01,
        }
    }
}

impl OptimizerSchedule {
    pub fn lr_at_epoch(&self, epoch: u64) -> f64 {
        self.lr0 * self.decay.powi(epoch as i32)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub mel: f64,
    pub kl: f64,
    pub duration: f64,
    pub pitch: f64,
    pub energy: f64,
    pub feature_matching: f64,
    pub adversarial: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            mel: 45.0,
            kl: 1.0,
            duration: 1.0,
            pitch: 1.0,
            energy: 1.0,
            feature_matching: 2.0,
            adversarial: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingParams {
    pub batch_size: usize,
    /// Decoder and discriminators train on random windows of this many frames.
    pub segment_frames: usize,
    /// Steps during which ground-truth pitch/energy feed the embeddings.
    pub teacher_force_steps: u64,
    pub checkpoint_every: u64,
    pub log_every: u64,
    /// Sampling temperature applied to the prior at inference.
    pub noise_scale: f64,
}

impl Default for TrainingParams {
    fn default() -> Self {
        Self {
            batch_size: 4,
            segment_frames: 32,
            teacher_force_steps: 10_000,
            checkpoint_every: 500,
            log_every: 10,
            noise_scale: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProviderConfig {
    /// "stub" or "cache".
    pub kind: String,
    pub seed: u64,
    pub cache_dir: Option<String>,
}

impl Default for ProviderConfig {
    fn default() -> Self {
        Self { kind: "stub".into(), seed: 1234, cache_dir: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantizerConfig {
    pub pitch: QuantizerSpec,
    pub energy: QuantizerSpec,
}

impl Default for QuantizerConfig {
    fn default() -> Self {
        Self {
            pitch: QuantizerSpec::pitch_default(),
            // placeholder range; prepare-data rewrites it from corpus stats
            energy: QuantizerSpec::new(256, -8.0, 6.0).expect("static range is valid"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub seed: u64,
    pub sem_variant: SemVariant,
    pub stft: StftConfig,
    pub mel: MelConfig,
    pub f0: F0Config,
    pub model: ModelDims,
    pub quantizers: QuantizerConfig,
    pub optimizer: OptimizerSchedule,
    pub loss_weights: LossWeights,
    pub training: TrainingParams,
    pub provider: ProviderConfig,
    /// Waveform vs annotation length slack, in hop lengths, before a corpus
    /// item is excluded.
    pub duration_slack_hops: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 1234,
            sem_variant: SemVariant::Standard,
            stft: StftConfig::default(),
            mel: MelConfig::default(),
            f0: F0Config::default(),
            model: ModelDims::default(),
            quantizers: QuantizerConfig::default(),
            optimizer: OptimizerSchedule::default(),
            loss_weights: LossWeights::default(),
            training: TrainingParams::default(),
            provider: ProviderConfig::default(),
            duration_slack_hops: 2.0,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.stft.validate()?;
        if self.model.upsample_product() != self.stft.hop_length {
            return Err(Error::ConfigInvalid(format!(
                "decoder upsample product {} must equal hop length {}",
                self.model.upsample_product(),
                self.stft.hop_length
            )));
        }
        if self.model.hidden_dim == 0 || self.model.latent_dim == 0 {
            return Err(Error::ConfigInvalid("model dims must be positive".into()));
        }
        if self.model.hidden_dim % self.model.attention_heads != 0 {
            return Err(Error::ConfigInvalid(format!(
                "hidden dim {} must divide into {} attention heads",
                self.model.hidden_dim, self.model.attention_heads
            )));
        }
        if self.model.latent_dim % 2 != 0 {
            return Err(Error::ConfigInvalid("latent dim must be even for the coupling flow".into()));
        }
        if !(0.0..=1.0).contains(&self.optimizer.decay) || self.optimizer.decay == 0.0 {
            return Err(Error::ConfigInvalid("lr decay must be in (0, 1]".into()));
        }
        if self.optimizer.lr0 <= 0.0 {
            return Err(Error::ConfigInvalid("initial lr must be positive".into()));
        }
        Ok(())
    }

    /// Desk-scale smoke configuration: the full architecture with narrower
    /// widths so overfit runs finish in minutes on a two-core CPU. Layer
    /// counts that define the architecture (duration 3, pitch 5, energy 2
    /// convolutions; latent 16; 8x8x4 upsampling; two discriminator periods)
    /// stay at their canonical values.
    pub fn desk_smoke() -> Self {
        let mut cfg = Self::default();
        cfg.model.hidden_dim = 96;
        cfg.model.phoneme_encoder_blocks = 2;
        cfg.model.ffn_filter = 256;
        cfg.model.semantic_blocks = 2;
        cfg.model.predictor_filter = 96;
        cfg.model.frame_prior_layers = 3;
        cfg.model.posterior_layers = 3;
        cfg.model.flow_hidden = 48;
        cfg.model.decoder_channels = 96;
        // smoke runs overfit on purpose; regularization only slows that down
        cfg.model.dropout = 0.0;
        cfg.training.batch_size = 4;
        // the full-scale schedule starts at 1e-4; a handful of overfit steps
        // wants a hotter start
        cfg.optimizer.lr0 = 5e-4;
        cfg
    }

    /// Toy end-to-end config: tiny dims over a 16-sample window at 240 Hz so
    /// tests run in milliseconds.
    pub fn toy() -> Self {
        let mut cfg = Self {
            model: ModelDims::toy(),
            stft: StftConfig {
                sample_rate: 240,
                fft_size: 16,
                window_length: 16,
                hop_length: 4,
                ..StftConfig::default()
            },
            mel: MelConfig { n_mels: 4, fmin: 0.0, fmax: 120.0 },
            f0: F0Config { fmin: 10.0, fmax: 100.0, threshold: 0.2 },
            ..Self::default()
        };
        cfg.quantizers.pitch = QuantizerSpec::new(cfg.model.n_pitch_bins, 3.0, 8.0).unwrap();
        cfg.quantizers.energy = QuantizerSpec::new(cfg.model.n_energy_bins, -8.0, 6.0).unwrap();
        cfg.training.segment_frames = 4;
        cfg
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: Self = toml::from_str(&text).map_err(|e| Error::parse(path, e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = toml::to_string_pretty(self)
            .map_err(|e| Error::ConfigInvalid(format!("serialize config: {e}")))?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    /// Hash of the analysis settings the feature cache depends on.
    pub fn feature_hash(&self) -> String {
        #[derive(Serialize)]
        struct FeatureCompat<'a> {
            stft: &'a StftConfig,
            mel: &'a MelConfig,
            f0: &'a F0Config,
        }
        let json = serde_json::to_vec(&FeatureCompat { stft: &self.stft, mel: &self.mel, f0: &self.f0 })
            .expect("feature subset serializes");
        let digest = Sha256::digest(&json);
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Hash of everything a checkpoint depends on; loading refuses to proceed
    /// when it disagrees.
    pub fn compat_hash(&self, vocab: &PhonemeVocab) -> String {
        #[derive(Serialize)]
        struct Compat<'a> {
            stft: &'a StftConfig,
            mel: &'a MelConfig,
            model: &'a ModelDims,
            quantizers: &'a QuantizerConfig,
            sem_variant: SemVariant,
            vocab: &'a [String],
        }
        let compat = Compat {
            stft: &self.stft,
            mel: &self.mel,
            model: &self.model,
            quantizers: &self.quantizers,
            sem_variant: self.sem_variant,
            vocab: vocab.symbols(),
        };
        let json = serde_json::to_vec(&compat).expect("compat subset serializes");
        let digest = Sha256::digest(&json);
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_is_valid() {
        RunConfig::default().validate().unwrap();
        RunConfig::toy().validate().unwrap();
    }

    #[test]
    fn toml_round_trip() {
        let cfg = RunConfig::default();
        let text = toml::to_string_pretty(&cfg).unwrap();
        let back: RunConfig = toml::from_str(&text).unwrap();
        assert_eq!(cfg, back);
    }

    #[test]
    fn upsample_product_must_match_hop() {
        let mut cfg = RunConfig::default();
        cfg.model.decoder_upsample = vec![8, 8];
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn lr_schedule_closed_form() {
        let sched = OptimizerSchedule::default();
        assert_eq!(sched.lr_at_epoch(0), 1e-4);
        let lr2 = sched.lr_at_epoch(2);
        assert!((lr2 - 1e-4 * 0.999875 * 0.999875).abs() < 1e-18);
    }

    #[test]
    fn compat_hash_tracks_model_changes() {
        let vocab = PhonemeVocab::from_symbols(["a".to_string()]);
        let cfg = RunConfig::default();
        let h1 = cfg.compat_hash(&vocab);
        let mut cfg2 = cfg.clone();
        cfg2.model.latent_dim = 32;
        assert_ne!(h1, cfg2.compat_hash(&vocab));
        // training knobs do not affect compatibility
        let mut cfg3 = cfg.clone();
        cfg3.training.batch_size = 99;
        assert_eq!(h1, cfg3.compat_hash(&vocab));
    }
}
