//! `svs`: prepare an annotated singing corpus, train the acoustic model,
//! synthesize, evaluate and plot.
//!
//! Exit codes: 0 success, 2 configuration error, 3 data error, 1 otherwise.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use svs_cli::pipeline::{
    eval_split, load_model, load_split, synth_to_dir, variant_label,
};
use svs_cli::plot::plot_report;
use svs_core::config::{RunConfig, SemVariant};
use svs_core::corpus::read_wav;
use svs_core::fixtures::generate_fixture_corpus;
use svs_core::prepare::{prepare_corpus, PrepareOptions};
use svs_core::Error as CoreError;
use svs_model::trainer::{train, TrainOptions};
use svs_model::ModelError;

#[derive(Parser)]
#[command(name = "svs", about = "Expressive singing voice synthesis toolkit", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the deterministic synthetic fixture corpus.
    GenFixture {
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long, default_value_t = 50)]
        count: usize,
        #[arg(long, default_value_t = 42)]
        seed: u64,
    },
    /// Parse, resample and featurize a corpus into a run directory.
    PrepareData {
        #[arg(long)]
        corpus_dir: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long, default_value_t = 24_000)]
        sample_rate: u32,
        #[arg(long, default_value_t = 1234)]
        seed: u64,
        /// Training-set size; the rest is held out for evaluation.
        #[arg(long)]
        n_train: Option<usize>,
        /// Character -> pinyin lexicon file (derived from the corpus if absent).
        #[arg(long)]
        lexicon: Option<PathBuf>,
        /// Extra pinyin -> phoneme dictionary entries.
        #[arg(long)]
        phoneme_dict: Option<PathBuf>,
        /// Base run config to start from (built-in defaults if absent).
        #[arg(long)]
        config: Option<PathBuf>,
        /// Built-in starting point when no --config is given.
        #[arg(long, value_enum, default_value_t = Preset::Default)]
        preset: Preset,
        #[arg(long)]
        sem_variant: Option<SemVariantArg>,
    },
    /// Optimize the model on a prepared run directory.
    Train {
        #[arg(long)]
        data_dir: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long)]
        steps: u64,
        /// Run config; defaults to <data-dir>/config.toml.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        resume: Option<PathBuf>,
        #[arg(long)]
        sem_variant: Option<SemVariantArg>,
        /// Disable the energy predictor branch (ablation).
        #[arg(long)]
        no_energy: bool,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Synthesize utterances from a checkpoint.
    Synth {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data_dir: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
        /// Comma-separated utterance ids; defaults to the whole split.
        #[arg(long, value_delimiter = ',')]
        ids: Vec<String>,
        #[arg(long, default_value = "eval")]
        split: String,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[arg(long)]
        noise_scale: Option<f64>,
    },
    /// Objective metrics over a split.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data_dir: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long, default_value = "eval")]
        split: String,
        /// Report label; defaults to a description of the model's ablation axes.
        #[arg(long)]
        variant: Option<String>,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[arg(long)]
        limit: Option<usize>,
        #[arg(long)]
        noise_scale: Option<f64>,
    },
    /// Side-by-side spectrogram/pitch/energy report image for one utterance.
    Plot {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data_dir: PathBuf,
        #[arg(long)]
        id: String,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "eval")]
        split: String,
        #[arg(long, default_value_t = 42)]
        seed: u64,
    },
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum Preset {
    Default,
    /// Narrow widths for fast CPU smoke training.
    DeskSmoke,
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum SemVariantArg {
    Standard,
    Reversed,
    Off,
}

impl From<SemVariantArg> for SemVariant {
    fn from(v: SemVariantArg) -> Self {
        match v {
            SemVariantArg::Standard => SemVariant::Standard,
            SemVariantArg::Reversed => SemVariant::Reversed,
            SemVariantArg::Off => SemVariant::Off,
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(core) = cause.downcast_ref::<CoreError>() {
            return match core {
                CoreError::ConfigInvalid(_) | CoreError::PitchOutOfRange(_) | CoreError::RestPitch => 2,
                _ => 3,
            };
        }
        if let Some(model) = cause.downcast_ref::<ModelError>() {
            return match model {
                ModelError::ConfigHashMismatch { .. } => 2,
                ModelError::Core(core) => match core {
                    CoreError::ConfigInvalid(_) => 2,
                    _ => 3,
                },
                _ => 1,
            };
        }
    }
    1
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::GenFixture { out_dir, count, seed } => {
            let utterances = generate_fixture_corpus(&out_dir, count, seed)?;
            println!("wrote {} fixture utterances under {}", utterances.len(), out_dir.display());
        }
        Command::PrepareData {
            corpus_dir,
            out_dir,
            sample_rate,
            seed,
            n_train,
            lexicon,
            phoneme_dict,
            config,
            preset,
            sem_variant,
        } => {
            std::fs::create_dir_all(&out_dir)?;
            let mut cfg = match (config, preset) {
                (Some(path), _) => RunConfig::load(&path)?,
                (None, Preset::Default) => RunConfig::default(),
                (None, Preset::DeskSmoke) => RunConfig::desk_smoke(),
            };
            cfg.stft.sample_rate = sample_rate;
            cfg.seed = seed;
            if let Some(v) = sem_variant {
                cfg.sem_variant = v.into();
            }
            let summary = prepare_corpus(
                &mut cfg,
                &PrepareOptions {
                    corpus_dir,
                    out_dir: out_dir.clone(),
                    n_train,
                    seed,
                    lexicon_path: lexicon,
                    phoneme_dict_path: phoneme_dict,
                },
            )?;
            println!(
                "prepared {} train / {} eval utterances ({} parse errors, {} excluded); energy range [{:.3}, {:.3}]",
                summary.n_train,
                summary.n_eval,
                summary.n_parse_errors,
                summary.n_excluded,
                summary.energy_lo,
                summary.energy_hi
            );
            println!("run directory: {}", out_dir.display());
        }
        Command::Train { data_dir, out_dir, steps, config, resume, sem_variant, no_energy, seed } => {
            let cfg_path = config.unwrap_or_else(|| data_dir.join("config.toml"));
            let mut cfg = RunConfig::load(&cfg_path)?;
            if let Some(v) = sem_variant {
                cfg.sem_variant = v.into();
            }
            if no_energy {
                cfg.model.use_energy = false;
            }
            if let Some(seed) = seed {
                cfg.seed = seed;
            }
            let reports = train(&cfg, &TrainOptions { steps, data_dir, out_dir: out_dir.clone(), resume })?;
            if let Some(last) = reports.last() {
                println!(
                    "trained {} steps (final mel {:.4}, total_g {:.4}); checkpoint {}",
                    reports.len(),
                    last.l_mel,
                    last.total_g,
                    out_dir.join("model.safetensors").display()
                );
            }
        }
        Command::Synth { checkpoint, data_dir, out_dir, ids, split, seed, noise_scale } => {
            let loaded = load_model(&checkpoint, &data_dir)?;
            let noise = noise_scale.unwrap_or(loaded.cfg.training.noise_scale);
            let id_filter = (!ids.is_empty()).then_some(ids.as_slice());
            let items = load_split(&data_dir, &loaded.cfg, &split, id_filter, None)?;
            anyhow::ensure!(!items.is_empty(), "no matching utterances in split {split}");
            let written = synth_to_dir(&loaded, &items, &out_dir, noise, seed)?;
            for (id, path) in &written {
                println!("{id} -> {}", path.display());
            }
        }
        Command::Eval { checkpoint, data_dir, out_dir, split, variant, seed, limit, noise_scale } => {
            let loaded = load_model(&checkpoint, &data_dir)?;
            let items = load_split(&data_dir, &loaded.cfg, &split, None, limit)?;
            anyhow::ensure!(!items.is_empty(), "split {split} is empty");
            let label = variant.unwrap_or_else(|| variant_label(&loaded.cfg));
            let noise = noise_scale.unwrap_or(loaded.cfg.training.noise_scale);
            let report = eval_split(&loaded, &data_dir, &items, &label, noise, seed)?;
            std::fs::create_dir_all(&out_dir)?;
            let json_path = out_dir.join(format!("metrics_{label}.json"));
            std::fs::write(&json_path, serde_json::to_string_pretty(&report)?)?;
            let table_path = out_dir.join(format!("metrics_{label}.tsv"));
            std::fs::write(&table_path, report.flat_table())?;
            println!("{}", report.flat_table());
            println!("reports: {} and {}", json_path.display(), table_path.display());
        }
        Command::Plot { checkpoint, data_dir, id, out, split, seed } => {
            let loaded = load_model(&checkpoint, &data_dir)?;
            let items = load_split(&data_dir, &loaded.cfg, &split, Some(&[id.clone()]), None)?;
            let item = items
                .first()
                .ok_or_else(|| anyhow::anyhow!("utterance {id} not found in split {split}"))?;
            let synthesis = svs_cli::pipeline::synth_item(&loaded, item, loaded.cfg.training.noise_scale, seed)?;
            let reference = read_wav(&data_dir.join(&item.utterance.audio_path))?;
            plot_report(&reference, &synthesis.waveform, &loaded.cfg, &out)?;
            println!("report image: {}", out.display());
        }
    }
    Ok(())
}
