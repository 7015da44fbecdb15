//! Acceptance suite: every criterion runs in order and prints one PASS/FAIL
//! line; the test fails at the end if any criterion failed. The overfit smoke
//! run and its dependents (flow-after-training, ablation harness,
//! determinism) share one fixture corpus and training directory.
//!
//! Set OPENCPOP_DIR to additionally run the corpus-wide checks against a real
//! Opencpop layout instead of the bundled synthetic fixture.

use std::panic::AssertUnwindSafe;
use std::path::{Path, PathBuf};
use std::time::Instant;

use candle_core::{DType, Device, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use svs_cli::eval::MetricReport;
use svs_cli::pipeline::{eval_split, load_model, load_split, variant_label};
use svs_core::config::{RunConfig, SemVariant};
use svs_core::corpus::parse_transcription;
use svs_core::dsp;
use svs_core::fixtures::generate_fixture_corpus;
use svs_core::lexicon::{PhonemeDict, PinyinLexicon};
use svs_core::prepare::{prepare_corpus, PrepareOptions};
use svs_core::score::frames_for_duration;
use svs_core::semantic::{build_expansion_plan, embed_words, expand_embeddings, StubProvider};
use svs_model::testing::{gradient_check, loss_parameter_needles, toy_setup_f64};
use svs_model::trainer::{train, TrainOptions};

struct Ctx {
    root: tempfile::TempDir,
    smoke_data: PathBuf,
    smoke_ckpt: Option<PathBuf>,
    smoke_cfg: RunConfig,
}

const SMOKE_STEPS: u64 = 900;
const SMOKE_UTTERANCES: usize = 9; // 8 train + 1 held out

fn main_corpus(ctx: &Ctx) -> PathBuf {
    ctx.root.path().join("corpus")
}

#[test]
fn acceptance() {
    let root = tempfile::tempdir().expect("tempdir");
    let mut ctx = Ctx {
        smoke_data: root.path().join("data"),
        root,
        smoke_ckpt: None,
        smoke_cfg: RunConfig::desk_smoke(),
    };

    let mut results: Vec<(String, Result<String, String>)> = Vec::new();
    macro_rules! criterion {
        ($name:expr, $body:expr) => {{
            let started = Instant::now();
            let outcome = std::panic::catch_unwind(AssertUnwindSafe($body))
                .map_err(|p| panic_text(p))
                .and_then(|r| r);
            let elapsed = started.elapsed().as_secs_f64();
            match &outcome {
                Ok(detail) => println!("PASS [{}] ({elapsed:.1}s): {detail}", $name),
                Err(detail) => println!("FAIL [{}] ({elapsed:.1}s): {detail}", $name),
            }
            results.push(($name.to_string(), outcome));
        }};
    }

    criterion!("formula-exactness", formula_exactness);
    criterion!("eq6-oracle", eq6_oracle);
    criterion!("upsample-invariant", upsample_invariant);
    criterion!("energy-ground-truth", energy_ground_truth);
    criterion!("eq3-ratio-identity", eq3_ratio_identity);
    criterion!("gradient-checks", gradient_checks);
    criterion!("flow-invertibility-init", flow_invertibility_init);
    criterion!("overfit-smoke", || overfit_smoke(&mut ctx));
    criterion!("flow-invertibility-trained", || flow_invertibility_trained(&ctx));
    criterion!("ablation-harness", || ablation_harness(&ctx));
    criterion!("determinism", || determinism(&ctx));

    let failures: Vec<&String> = results
        .iter()
        .filter(|(_, r)| r.is_err())
        .map(|(n, _)| n)
        .collect();
    assert!(failures.is_empty(), "failed criteria: {failures:?}");
}

fn panic_text(p: Box<dyn std::any::Any + Send>) -> String {
    p.downcast_ref::<String>()
        .cloned()
        .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
        .unwrap_or_else(|| "panic".to_string())
}

fn formula_exactness() -> Result<String, String> {
    let started = Instant::now();
    let f69 = svs_core::score::pitch_id_to_frequency(69).map_err(|e| e.to_string())?;
    if f69 != 440.0 {
        return Err(format!("p=69 gave {f69}, expected exactly 440"));
    }
    let f57 = svs_core::score::pitch_id_to_frequency(57).map_err(|e| e.to_string())?;
    if f57 != 220.0 {
        return Err(format!("p=57 gave {f57}, expected exactly 220"));
    }
    let mut worst = 0.0f64;
    for p in 0u8..=127 {
        let got = svs_core::score::pitch_id_to_frequency(p).map_err(|e| e.to_string())?;
        let expected = 440.0 * 2f64.powf((p as f64 - 69.0) / 12.0);
        let rel = (got - expected).abs() / expected;
        worst = worst.max(rel);
        if rel > 1e-9 {
            return Err(format!("p={p}: {got} vs {expected} (rel {rel:.2e})"));
        }
    }
    let elapsed = started.elapsed();
    if elapsed.as_secs_f64() >= 1.0 {
        return Err(format!("runtime {елapsed:?} exceeds 1 s", елapsed = elapsed));
    }
    Ok(format!("all 128 pitch ids within 1e-9 (worst {worst:.2e}), 440/220 exact"))
}

fn eq6_oracle() -> Result<String, String> {
    let started = Instant::now();
    // the hand-evaluated exact case: 5120 samples, wl 1024, hl 256 -> 17
    let frames = frames_for_duration(5120.0 / 24_000.0, 24_000, 1024, 256);
    if frames != 17 {
        return Err(format!("exact case gave {frames}, expected 17"));
    }
    // frozen hand-computed companions
    for (samples, sr, wl, hl, expected) in [
        (10_000u64, 24_000u32, 1024usize, 256usize, 36usize), // (8976/256)=35.06 -> 35+1
        (48_000, 24_000, 1024, 256, 184),                     // (46976/256)=183.5 -> 183+1
        (4_096, 16_000, 512, 128, 29),                        // (3584/128)=28 -> 28+1
        (1_024, 24_000, 1024, 256, 1),                        // zero numerator
        (1_000, 24_000, 1024, 256, 1),                        // sub-window clamp
    ] {
        let got = frames_for_duration(samples as f64 / sr as f64, sr, wl, hl);
        if got != expected {
            return Err(format!("{samples} samples wl={wl} hl={hl}: got {got}, expected {expected}"));
        }
    }
    // randomized tuples kept one hop-remainder away from floor boundaries
    let mut rng = ChaCha20Rng::seed_from_u64(606);
    for case in 0..20 {
        let sr = *[16_000u32, 22_050, 24_000, 44_100].get(rng.random_range(0..4)).unwrap();
        let wl = *[256usize, 512, 1024, 2048].get(rng.random_range(0..4)).unwrap();
        let hl = wl / *[2usize, 4].get(rng.random_range(0..2)).unwrap();
        let k = rng.random_range(0..200usize);
        let r = rng.random_range(1..hl - 1);
        let samples = wl + k * hl + r;
        let dur = samples as f64 / sr as f64;
        let got = frames_for_duration(dur, sr, wl, hl);
        let expected = k + 1; // floor((k*hl + r)/hl) + 1 with 0 < r < hl
        if got != expected {
            return Err(format!("case {case}: sr={sr} wl={wl} hl={hl} samples={samples}: got {got}, expected {expected}"));
        }
    }
    let elapsed = started.elapsed();
    if elapsed.as_secs_f64() >= 1.0 {
        return Err(format!("runtime {:?} exceeds 1 s", elapsed));
    }
    Ok("exact case 17 plus 5 frozen and 20 randomized tuples agree".into())
}

fn upsample_invariant() -> Result<String, String> {
    // worked example first: words (sh,i) and (a), utterance [sh,i,i,SP,a]
    let mut lex = PinyinLexicon::new();
    lex.insert("是", "shi");
    lex.insert("啊", "a");
    let dict = PhonemeDict::standard();
    let text: Vec<String> = ["是", "啊"].iter().map(|s| s.to_string()).collect();
    let phonemes: Vec<String> = ["sh", "i", "i", "SP", "a"].iter().map(|s| s.to_string()).collect();
    let plan = build_expansion_plan("worked", &text, &phonemes, &lex, &dict).map_err(|e| e.to_string())?;
    if plan.n1 != vec![2, 1] || plan.n2 != vec![1, 2, 1] || plan.rest_indices != vec![3] {
        return Err(format!("worked example plan wrong: {plan:?}"));
    }
    let provider = StubProvider::new(99);
    let words = embed_words(&provider, &text).map_err(|e| e.to_string())?;
    let expanded = expand_embeddings(&words, &plan).map_err(|e| e.to_string())?;
    let dim = words.dim;
    let v1 = words.vector(0);
    let v2 = words.vector(1);
    for (position, expected) in [(0usize, v1), (1, v1), (2, v1), (4, v2)] {
        if expanded[position * dim..(position + 1) * dim] != *expected {
            return Err(format!("position {position} does not replicate its word vector"));
        }
    }
    if expanded[3 * dim..4 * dim].iter().any(|v| *v != 0.0) {
        return Err("rest position 3 is not the zero vector".into());
    }

    // corpus-wide: real corpus when mounted, bundled fixture otherwise
    let (utterances, lexicon, label) = match std::env::var_os("OPENCPOP_DIR") {
        Some(dir) => {
            let dir = PathBuf::from(dir);
            let text = std::fs::read_to_string(dir.join("transcriptions.txt"))
                .map_err(|e| format!("OPENCPOP_DIR: {e}"))?;
            let mut utts = Vec::new();
            for line in text.lines().filter(|l| !l.trim().is_empty()) {
                utts.push(parse_transcription(line, &dict).map_err(|e| e.to_string())?);
            }
            let lexicon = PinyinLexicon::derive_from_corpus(utts.iter());
            (utts, lexicon, "opencpop")
        }
        None => {
            let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
            let utts = generate_fixture_corpus(dir.path(), 50, 42).map_err(|e| e.to_string())?;
            (utts, PinyinLexicon::bundled(), "fixture-50")
        }
    };

    let mut checked = 0usize;
    let mut align_failures = 0usize;
    for utt in &utterances {
        let plan = match build_expansion_plan(&utt.id, &utt.text, &utt.phonemes, &lexicon, &dict) {
            Ok(p) => p,
            Err(_) if label == "opencpop" => {
                // real corpora carry polyphones the greedy fallback cannot
                // always resolve; count them instead of aborting
                align_failures += 1;
                continue;
            }
            Err(e) => return Err(format!("{}: {e}", utt.id)),
        };
        let words = embed_words(&provider, &utt.text).map_err(|e| format!("{}: {e}", utt.id))?;
        let expanded = expand_embeddings(&words, &plan).map_err(|e| format!("{}: {e}", utt.id))?;
        if expanded.len() != utt.phonemes.len() * words.dim {
            return Err(format!("{}: expanded length mismatch", utt.id));
        }
        for (i, phoneme) in utt.phonemes.iter().enumerate() {
            let all_zero = expanded[i * words.dim..(i + 1) * words.dim].iter().all(|v| *v == 0.0);
            let is_rest = svs_core::lexicon::is_rest(phoneme);
            if all_zero != is_rest {
                return Err(format!("{}: zero-vector placement wrong at {i} ({phoneme})", utt.id));
            }
        }
        checked += 1;
    }
    if label == "opencpop" && align_failures * 100 > utterances.len() {
        return Err(format!("{align_failures} alignment failures over {}", utterances.len()));
    }
    Ok(format!("worked example plus {checked} {label} utterances hold the invariant"))
}

fn energy_ground_truth() -> Result<String, String> {
    let started = Instant::now();
    let cfg = dsp::StftConfig::default();
    let n_frames = 1000usize;
    let samples_len = (n_frames - 1) * cfg.hop_length + cfg.window_length;
    let mut rng = ChaCha20Rng::seed_from_u64(17);
    let samples: Vec<f32> = (0..samples_len).map(|_| rng.random::<f32>() * 1.6 - 0.8).collect();
    let wave = svs_core::corpus::Waveform::new(samples, cfg.sample_rate).map_err(|e| e.to_string())?;
    let spec = dsp::stft(&wave, &cfg).map_err(|e| e.to_string())?;
    if spec.n_frames != n_frames {
        return Err(format!("expected {n_frames} frames, got {}", spec.n_frames));
    }
    let fast = dsp::frame_energy(&spec);
    let mut worst = 0.0f64;
    for t in 0..n_frames {
        let brute: f64 = spec
            .frame(t)
            .iter()
            .map(|c| (c.re as f64).powi(2) + (c.im as f64).powi(2))
            .sum::<f64>()
            .sqrt();
        let rel = (fast[t] as f64 - brute).abs() / brute.max(1e-12);
        worst = worst.max(rel);
        if rel > 1e-6 {
            return Err(format!("frame {t}: {} vs brute {brute} (rel {rel:.2e})", fast[t]));
        }
    }
    let elapsed = started.elapsed();
    if elapsed.as_secs_f64() >= 5.0 {
        return Err(format!("runtime {:?} exceeds 5 s", elapsed));
    }
    Ok(format!("1000 random frames match brute force (worst rel {worst:.2e})"))
}

fn eq3_ratio_identity() -> Result<String, String> {
    let dev = Device::Cpu;
    let t = 300usize;
    let mut rng = ChaCha20Rng::seed_from_u64(23);
    let mut note = Vec::with_capacity(t);
    let mut wav_lf0 = Vec::with_capacity(t);
    for i in 0..t {
        if i % 7 == 3 {
            note.push(0.0f32); // rest frame
            wav_lf0.push(0.0f32);
        } else {
            let n: f32 = 5.0 + rng.random::<f32>() * 2.0;
            note.push(n);
            wav_lf0.push(n + (rng.random::<f32>() - 0.5) * 0.2);
        }
    }
    let note_t = Tensor::from_vec(note.clone(), &[1, t], &dev).map_err(|e| e.to_string())?;
    let wav_t = Tensor::from_vec(wav_lf0.clone(), &[1, t], &dev).map_err(|e| e.to_string())?;

    // r = LF0_wav / LF0_note on voiced frames reconstructs LF0_wav
    let r: Vec<f32> = note
        .iter()
        .zip(&wav_lf0)
        .map(|(n, w)| if *n > 0.0 { w / n } else { 0.0 })
        .collect();
    let r_t = Tensor::from_vec(r, &[1, t], &dev).map_err(|e| e.to_string())?;
    let lf0_hat = (&r_t * &note_t).map_err(|e| e.to_string())?;
    let got: Vec<f32> = lf0_hat.flatten_all().unwrap().to_vec1().unwrap();
    for i in 0..t {
        if note[i] > 0.0 {
            let rel = (got[i] - wav_lf0[i]).abs() / wav_lf0[i].abs().max(1e-9);
            if rel > 1e-6 {
                return Err(format!("frame {i}: reconstruction off by rel {rel:.2e}"));
            }
        } else if got[i] != 0.0 {
            return Err(format!("rest frame {i} must stay zero"));
        }
    }

    // r == 1 returns the note contour bit-exactly
    let ones = Tensor::ones((1, t), DType::F32, &dev).map_err(|e| e.to_string())?;
    let identity = (&ones * &note_t).map_err(|e| e.to_string())?;
    let id_values: Vec<f32> = identity.flatten_all().unwrap().to_vec1().unwrap();
    if id_values != note {
        return Err("r=1 did not reproduce the note LF0 exactly".into());
    }
    Ok("ratio inversion reconstructs within 1e-6; r=1 exact".into())
}

fn gradient_checks() -> Result<String, String> {
    let started = Instant::now();
    let (model, batch) = toy_setup_f64().map_err(|e| e.to_string())?;
    let mut details = Vec::new();
    for loss in ["pitch", "energy", "duration", "kl", "mel"] {
        let outcome = gradient_check(&model, &batch, loss, loss_parameter_needles(loss), 1e-3)
            .map_err(|e| format!("{loss}: {e}"))?;
        details.push(format!("{}={:.1e}", loss, outcome.worst_rel));
    }
    let elapsed = started.elapsed();
    if elapsed.as_secs_f64() >= 60.0 {
        return Err(format!("runtime {:?} exceeds 1 min", elapsed));
    }
    Ok(format!("worst rel errs: {}", details.join(" ")))
}

fn flow_round_trip(model: &svs_model::AcousticModel, seed: u64) -> Result<f64, String> {
    let dev = &model.device;
    let latent = model.cfg.model.latent_dim;
    let hidden = model.cfg.model.hidden_dim;
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let z = svs_model::modules::randn(&[2, latent, 40], &mut rng, dev, model.dtype)
        .map_err(|e| e.to_string())?;
    let cond = svs_model::modules::randn(&[2, hidden, 40], &mut rng, dev, model.dtype)
        .map_err(|e| e.to_string())?;
    let mask = Tensor::ones((2, 1, 40), model.dtype, dev).map_err(|e| e.to_string())?;
    let (u, _) = model.flow.forward(&z, &cond, &mask).map_err(|e| e.to_string())?;
    let back = model.flow.inverse(&u, &cond, &mask).map_err(|e| e.to_string())?;
    (&back - &z)
        .and_then(|d| d.abs())
        .and_then(|d| d.max_all())
        .and_then(|d| d.to_dtype(DType::F64))
        .and_then(|d| d.to_scalar::<f64>())
        .map_err(|e| e.to_string())
}

fn flow_invertibility_init() -> Result<String, String> {
    let cfg = RunConfig::desk_smoke();
    let vocab = svs_model::testing::toy_vocab();
    let model = svs_model::AcousticModel::new(&cfg, &vocab, &Device::Cpu, DType::F32)
        .map_err(|e| e.to_string())?;
    let err = flow_round_trip(&model, 4)?;
    if err > 1e-4 {
        return Err(format!("round-trip error {err:.2e} exceeds 1e-4 at init"));
    }
    Ok(format!("round-trip max abs err {err:.2e} at initialization"))
}

fn overfit_smoke(ctx: &mut Ctx) -> Result<String, String> {
    let started = Instant::now();
    let corpus = main_corpus(ctx);
    generate_fixture_corpus(&corpus, SMOKE_UTTERANCES, 42).map_err(|e| e.to_string())?;
    let mut cfg = RunConfig::desk_smoke();
    prepare_corpus(
        &mut cfg,
        &PrepareOptions {
            corpus_dir: corpus,
            out_dir: ctx.smoke_data.clone(),
            n_train: Some(SMOKE_UTTERANCES - 1),
            seed: 7,
            lexicon_path: None,
            phoneme_dict_path: None,
        },
    )
    .map_err(|e| e.to_string())?;
    ctx.smoke_cfg = cfg.clone();

    let out_dir = ctx.root.path().join("smoke_run");
    let reports = train(
        &cfg,
        &TrainOptions {
            steps: SMOKE_STEPS,
            data_dir: ctx.smoke_data.clone(),
            out_dir: out_dir.clone(),
            resume: None,
        },
    )
    .map_err(|e| e.to_string())?;
    let ckpt = out_dir.join("model.safetensors");
    ctx.smoke_ckpt = Some(ckpt.clone());

    let mel: Vec<f64> = reports.iter().map(|r| r.l_mel).collect();
    let baseline = mel[..10].iter().sum::<f64>() / 10.0;
    let tail = &mel[mel.len() - 10..];
    let final_avg = tail.iter().sum::<f64>() / tail.len() as f64;
    let drop = 1.0 - final_avg / baseline;
    if drop < 0.60 {
        return Err(format!(
            "l_mel fell only {:.1}% (step-10 avg {baseline:.3} -> final avg {final_avg:.3})",
            drop * 100.0
        ));
    }

    // objective scores on the training items through the real synth path
    let loaded = load_model(&ckpt, &ctx.smoke_data).map_err(|e| e.to_string())?;
    let items = load_split(&ctx.smoke_data, &loaded.cfg, "train", None, None).map_err(|e| e.to_string())?;
    let report = eval_split(&loaded, &ctx.smoke_data, &items, "smoke-train", 0.0, 42)
        .map_err(|e| e.to_string())?;
    let f0 = report
        .f0_mae_hz
        .ok_or_else(|| "no mutually voiced frames on any training item".to_string())?;
    if report.n_missing_f0 > 0 {
        return Err(format!("{} items had no mutually voiced frames", report.n_missing_f0));
    }
    if f0 >= 30.0 {
        return Err(format!("F0 MAE {f0:.2} Hz >= 30 Hz"));
    }
    if report.dur_mae_frames >= 10.0 {
        return Err(format!("Dur MAE {:.2} frames >= 10", report.dur_mae_frames));
    }
    let elapsed = started.elapsed();
    if elapsed.as_secs_f64() >= 3600.0 {
        return Err(format!("runtime {:?} exceeds 1 h", elapsed));
    }
    Ok(format!(
        "{SMOKE_STEPS} steps: mel {:.2}->{:.2} ({:.0}% drop), F0 MAE {f0:.2} Hz, Dur MAE {:.2} frames, Energy MAE {:.2}",
        baseline,
        final_avg,
        drop * 100.0,
        report.dur_mae_frames,
        report.energy_mae
    ))
}

fn flow_invertibility_trained(ctx: &Ctx) -> Result<String, String> {
    let ckpt = ctx.smoke_ckpt.as_ref().ok_or("smoke run did not produce a checkpoint")?;
    let loaded = load_model(ckpt, &ctx.smoke_data).map_err(|e| e.to_string())?;
    let err = flow_round_trip(&loaded.model, 11)?;
    if err > 1e-4 {
        return Err(format!("round-trip error {err:.2e} exceeds 1e-4 after training"));
    }
    Ok(format!("round-trip max abs err {err:.2e} after the smoke run"))
}

fn ablation_harness(ctx: &Ctx) -> Result<String, String> {
    let variants: [(&str, SemVariant, bool); 4] = [
        ("proposed", SemVariant::Standard, true),
        ("no-energy", SemVariant::Standard, false),
        ("no-sem", SemVariant::Off, true),
        ("reversed-sem", SemVariant::Reversed, true),
    ];
    let mut reports: Vec<MetricReport> = Vec::new();
    for (label, sem, energy) in variants {
        let mut cfg = ctx.smoke_cfg.clone();
        cfg.sem_variant = sem;
        cfg.model.use_energy = energy;
        let out_dir = ctx.root.path().join(format!("ablation_{label}"));
        train(
            &cfg,
            &TrainOptions {
                steps: 20,
                data_dir: ctx.smoke_data.clone(),
                out_dir: out_dir.clone(),
                resume: None,
            },
        )
        .map_err(|e| format!("{label}: {e}"))?;
        let ckpt = out_dir.join("model.safetensors");
        let loaded = load_model(&ckpt, &ctx.smoke_data).map_err(|e| format!("{label}: {e}"))?;
        if variant_label(&loaded.cfg) == variant_label(&ctx.smoke_cfg) && label != "proposed" {
            return Err(format!("{label}: variant did not change the configuration"));
        }
        let items = load_split(&ctx.smoke_data, &loaded.cfg, "eval", None, None)
            .map_err(|e| format!("{label}: {e}"))?;
        let report = eval_split(&loaded, &ctx.smoke_data, &items, label, 0.0, 42)
            .map_err(|e| format!("{label}: {e}"))?;
        if report.n_utterances == 0 {
            return Err(format!("{label}: empty report"));
        }
        if !report.dur_mae_frames.is_finite() || !report.energy_mae.is_finite() {
            return Err(format!("{label}: non-finite metrics"));
        }
        reports.push(report);
    }
    // comparable: same utterance set and the same metric fields everywhere.
    // Table-1 orderings are out of desk-scale reach by design; only harness
    // parity is asserted.
    let n = reports[0].n_utterances;
    if reports.iter().any(|r| r.n_utterances != n) {
        return Err("reports cover different utterance sets".into());
    }
    Ok(format!(
        "4 variants evaluated over {n} held-out utterance(s): {}",
        reports
            .iter()
            .map(|r| format!("{}(dur {:.2}, energy {:.2})", r.variant, r.dur_mae_frames, r.energy_mae))
            .collect::<Vec<_>>()
            .join(", ")
    ))
}

fn determinism(ctx: &Ctx) -> Result<String, String> {
    let bin = env!("CARGO_BIN_EXE_svs");
    let run = |out: &Path| -> Result<(), String> {
        let status = std::process::Command::new(bin)
            .args([
                "train",
                "--data-dir",
                ctx.smoke_data.to_str().unwrap(),
                "--out-dir",
                out.to_str().unwrap(),
                "--steps",
                "50",
            ])
            .stdout(std::process::Stdio::null())
            .stderr(std::process::Stdio::inherit())
            .status()
            .map_err(|e| e.to_string())?;
        if !status.success() {
            return Err(format!("train exited with {status}"));
        }
        Ok(())
    };
    let out_a = ctx.root.path().join("det_a");
    let out_b = ctx.root.path().join("det_b");
    run(&out_a)?;
    run(&out_b)?;
    let log_a = std::fs::read(out_a.join("loss_log.jsonl")).map_err(|e| e.to_string())?;
    let log_b = std::fs::read(out_b.join("loss_log.jsonl")).map_err(|e| e.to_string())?;
    if log_a != log_b {
        return Err("loss logs differ between identical runs".into());
    }
    let lines = log_a.split(|b| *b == b'\n').filter(|l| !l.is_empty()).count();
    Ok(format!("two 50-step runs produced byte-identical loss logs ({lines} lines)"))
}
