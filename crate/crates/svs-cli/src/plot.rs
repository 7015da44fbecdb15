//! Report images: reference and synthesis spectrograms side by side with the
//! pitch contour drawn in blue and the energy contour in yellow, plus a JSON
//! sidecar carrying the exact contour arrays that were plotted.

use std::io::BufWriter;
use std::path::Path;

use serde::{Deserialize, Serialize};

use svs_core::config::RunConfig;
use svs_core::corpus::Waveform;
use svs_core::dsp::{self, F0Params};
use svs_core::Error;

const SEPARATOR_PX: usize = 4;

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ContourSidecar {
    pub f0_ref_hz: Vec<f32>,
    pub energy_ref: Vec<f32>,
    pub f0_syn_hz: Vec<f32>,
    pub energy_syn: Vec<f32>,
}

struct Panel {
    frames: usize,
    bins: usize,
    /// dB magnitudes, frame-major.
    level: Vec<f32>,
    f0_hz: Vec<f32>,
    energy: Vec<f32>,
}

fn analyze(wave: &Waveform, cfg: &RunConfig) -> svs_core::Result<Panel> {
    let spec = dsp::stft(wave, &cfg.stft)?;
    let mags = spec.magnitudes();
    let level: Vec<f32> = mags.iter().map(|m| 20.0 * m.max(1e-5).log10()).collect();
    let energy = dsp::frame_energy(&spec);
    let params = F0Params {
        fmin: cfg.f0.fmin,
        fmax: cfg.f0.fmax,
        threshold: cfg.f0.threshold,
        ..F0Params::default()
    };
    let (lf0, voicing) = dsp::extract_f0(wave, &cfg.stft, &params)?;
    let f0_hz = lf0
        .iter()
        .zip(&voicing)
        .map(|(l, v)| if *v == 1 { l.exp() } else { 0.0 })
        .collect();
    Ok(Panel { frames: spec.n_frames, bins: spec.n_bins, level, f0_hz, energy })
}

fn draw_panel(panel: &Panel, cfg: &RunConfig, rgb: &mut [u8], width: usize, height: usize, x0: usize) {
    let lo = -100.0f32;
    let hi = panel.level.iter().fold(-100.0f32, |m, v| m.max(*v));
    let span = (hi - lo).max(1.0);
    let bin_hz = cfg.stft.sample_rate as f32 / cfg.stft.fft_size as f32;
    let e_max = panel.energy.iter().fold(1e-6f32, |m, v| m.max(*v));

    for t in 0..panel.frames {
        for row in 0..height {
            // row 0 is the top of the image = highest bin
            let bin = (height - 1 - row) * panel.bins / height;
            let v = panel.level[t * panel.bins + bin];
            let g = (((v - lo) / span).clamp(0.0, 1.0) * 255.0) as u8;
            let px = (row * width + x0 + t) * 3;
            rgb[px] = g;
            rgb[px + 1] = g;
            rgb[px + 2] = g;
        }
        // pitch contour in blue
        let f0 = panel.f0_hz[t];
        if f0 > 0.0 {
            let bin = (f0 / bin_hz) as usize;
            if bin < panel.bins {
                let row = height - 1 - (bin * height / panel.bins).min(height - 1);
                for dr in row.saturating_sub(1)..=(row + 1).min(height - 1) {
                    let px = (dr * width + x0 + t) * 3;
                    rgb[px] = 40;
                    rgb[px + 1] = 90;
                    rgb[px + 2] = 255;
                }
            }
        }
        // energy contour in yellow, scaled into the panel
        let row = height
            - 1
            - ((panel.energy[t] / e_max).clamp(0.0, 1.0) * (height - 1) as f32) as usize;
        let px = (row * width + x0 + t) * 3;
        rgb[px] = 255;
        rgb[px + 1] = 220;
        rgb[px + 2] = 40;
    }
}

/// Write the side-by-side report PNG plus the contour sidecar
/// (`<image>.sidecar.json`). Returns the sidecar that was written.
pub fn plot_report(
    reference: &Waveform,
    synthesis: &Waveform,
    cfg: &RunConfig,
    image_path: &Path,
) -> svs_core::Result<ContourSidecar> {
    let ref_panel = analyze(reference, cfg)?;
    let syn_panel = analyze(synthesis, cfg)?;

    let height = 256usize;
    let width = ref_panel.frames + SEPARATOR_PX + syn_panel.frames;
    let mut rgb = vec![0u8; width * height * 3];
    draw_panel(&ref_panel, cfg, &mut rgb, width, height, 0);
    draw_panel(&syn_panel, cfg, &mut rgb, width, height, ref_panel.frames + SEPARATOR_PX);

    let file = std::fs::File::create(image_path).map_err(|e| Error::io(image_path, e))?;
    let mut encoder = png::Encoder::new(BufWriter::new(file), width as u32, height as u32);
    encoder.set_color(png::ColorType::Rgb);
    encoder.set_depth(png::BitDepth::Eight);
    let mut writer = encoder
        .write_header()
        .map_err(|e| Error::parse(image_path, format!("png header: {e}")))?;
    writer
        .write_image_data(&rgb)
        .map_err(|e| Error::parse(image_path, format!("png data: {e}")))?;
    writer
        .finish()
        .map_err(|e| Error::parse(image_path, format!("png finish: {e}")))?;

    let sidecar = ContourSidecar {
        f0_ref_hz: ref_panel.f0_hz,
        energy_ref: ref_panel.energy,
        f0_syn_hz: syn_panel.f0_hz,
        energy_syn: syn_panel.energy,
    };
    let sidecar_path = sidecar_path_for(image_path);
    let text = serde_json::to_string_pretty(&sidecar).expect("sidecar serializes");
    std::fs::write(&sidecar_path, text).map_err(|e| Error::io(&sidecar_path, e))?;
    Ok(sidecar)
}

pub fn sidecar_path_for(image_path: &Path) -> std::path::PathBuf {
    let mut os = image_path.as_os_str().to_os_string();
    os.push(".sidecar.json");
    std::path::PathBuf::from(os)
}
