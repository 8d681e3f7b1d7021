use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::net::{SslConfig, SslInput, SslModel};
use super::SslError;
use crate::numerics::Tensor;
use crate::protocol::{CueDirection, Side};
use crate::rng::{self, tag};
use crate::stimulus::capture::{audio_chunk, capture_audio, scene_frames, window_indices, CAPTURE_FRAMES};
use crate::stimulus::{write_wav, write_xfmp, AudioConfig, AudioDegradation, BinauralClip, SceneGeometry};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SslDatasetConfig {
    pub trials: usize,
    /// Capture frame (1-based) the audio chunk and video window end with.
    pub end_frame: usize,
    /// SD of additive pixel noise on the video frames.
    pub noise_sigma: f64,
    /// Capture noise on the training audio. The robot always hears noise, so
    /// a model trained on clean clips would meet it out of distribution.
    pub audio: AudioDegradation,
}

impl Default for SslDatasetConfig {
    fn default() -> Self {
        Self {
            trials: 500,
            end_frame: CAPTURE_FRAMES,
            noise_sigma: 0.05,
            audio: AudioDegradation {
                snr_db: Some(20.0),
                gain_jitter_db: 0.0,
            },
        }
    }
}

/// Scene geometry matching the network's output size.
pub fn scene_geometry(config: &SslConfig) -> SceneGeometry {
    SceneGeometry::default().with_size(config.out_w, config.out_h)
}

/// One rendered trial: the one-second chunk and the noise-free frames.
#[derive(Debug, Clone)]
pub struct SslTrial {
    pub trial_id: u32,
    pub cue: CueDirection,
    pub side: Side,
    pub clip: BinauralClip,
    pub frames: Vec<Tensor>,
}

/// Prepared network input and label.
#[derive(Debug, Clone)]
pub struct SslSample {
    pub trial_id: u32,
    pub side: Side,
    pub input: SslInput,
}

fn draw_design(seed: u64, trial_id: u32) -> (CueDirection, Side) {
    let mut r = rng::stream(seed, &[tag::DATASET, trial_id as u64]);
    let side = if r.random::<bool>() { Side::Left } else { Side::Right };
    let cue = [CueDirection::Left, CueDirection::Center, CueDirection::Right][r.random_range(0..3)];
    (cue, side)
}

fn audio_config(config: &SslConfig) -> AudioConfig {
    AudioConfig {
        sample_rate: config.sample_rate,
        ..AudioConfig::default()
    }
}

/// Renders trial `trial_id`; cue and target side are drawn independently
/// from `(seed, trial_id)`.
pub fn render_ssl_trial(model: &SslModel, ds: &SslDatasetConfig, seed: u64, trial_id: u32) -> Result<SslTrial, SslError> {
    let (cue, side) = draw_design(seed, trial_id);
    let audio_seed = rng::derive_seed(seed, &[tag::AUDIO, trial_id as u64]);
    let capture = capture_audio(side, &audio_config(&model.config), &ds.audio, audio_seed)?;
    let clip = audio_chunk(&capture, ds.end_frame, model.frontend().hop());
    let all = scene_frames(&scene_geometry(&model.config), cue);
    let frames = window_indices(ds.end_frame, model.config.video_frames)
        .into_iter()
        .map(|i| all[i].clone())
        .collect();
    Ok(SslTrial {
        trial_id,
        cue,
        side,
        clip,
        frames,
    })
}

/// Network-ready samples for trial ids `first..first + count`. Pixel noise
/// is added after pooling with its SD divided by the pool factor, which has
/// the same distribution as pooling full-resolution noise.
pub fn build_ssl_samples(
    model: &SslModel,
    ds: &SslDatasetConfig,
    seed: u64,
    first: u32,
    count: usize,
) -> Result<Vec<SslSample>, SslError> {
    let geom = scene_geometry(&model.config);
    let mut pooled: [Option<Tensor>; 3] = [None, None, None];
    let sd = ds.noise_sigma / model.config.pool as f64;
    (first..first + count as u32)
        .map(|id| {
            let (cue, side) = draw_design(seed, id);
            let audio_seed = rng::derive_seed(seed, &[tag::AUDIO, id as u64]);
            let capture = capture_audio(side, &audio_config(&model.config), &ds.audio, audio_seed)?;
            let clip = audio_chunk(&capture, ds.end_frame, model.frontend().hop());
            let slot = &mut pooled[cue_index(cue)];
            if slot.is_none() {
                let all = scene_frames(&geom, cue);
                let window: Vec<Tensor> = window_indices(ds.end_frame, model.config.video_frames)
                    .into_iter()
                    .map(|i| all[i].clone())
                    .collect();
                *slot = Some(model.video_input(&window)?);
            }
            let mut video = slot.clone().expect("filled above");
            if sd > 0.0 {
                let noise = Normal::new(0.0, sd).expect("finite SD");
                let mut r = rng::stream(seed, &[tag::FRAMES, id as u64]);
                video.data_mut().iter_mut().for_each(|v| *v += noise.sample(&mut r));
            }
            Ok(SslSample {
                trial_id: id,
                side,
                input: SslInput {
                    left: model.audio_features(&clip.left)?,
                    right: model.audio_features(&clip.right)?,
                    video,
                },
            })
        })
        .collect()
}

fn cue_index(c: CueDirection) -> usize {
    match c {
        CueDirection::Left => 0,
        CueDirection::Center => 1,
        CueDirection::Right => 2,
    }
}

pub const MANIFEST_HEADER: [&str; 4] = ["trial_id", "wav_path", "frames_path", "gt_side"];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestRow {
    pub trial_id: u32,
    pub wav_path: String,
    pub frames_path: String,
    pub gt_side: String,
}

/// Writes `count` trials as WAV chunks and XFMP frame stacks under `dir`,
/// plus `manifest.csv` with paths relative to `dir`.
pub fn export_ssl_dataset(
    model: &SslModel,
    ds: &SslDatasetConfig,
    seed: u64,
    count: usize,
    dir: &Path,
) -> Result<PathBuf, SslError> {
    fs::create_dir_all(dir.join("wav"))?;
    fs::create_dir_all(dir.join("frames"))?;
    let manifest = dir.join("manifest.csv");
    let mut w = csv::Writer::from_path(&manifest)?;
    w.write_record(MANIFEST_HEADER)?;
    for id in 0..count as u32 {
        let t = render_ssl_trial(model, ds, seed, id)?;
        let wav = format!("wav/trial_{id:04}.wav");
        let frames = format!("frames/trial_{id:04}.xfmp");
        write_wav(&t.clip, BufWriter::new(fs::File::create(dir.join(&wav))?))?;
        write_xfmp(&t.frames, BufWriter::new(fs::File::create(dir.join(&frames))?))?;
        w.write_record([id.to_string(), wav, frames, t.side.code().to_string()])?;
    }
    w.flush()?;
    Ok(manifest)
}

pub fn read_ssl_manifest(path: &Path) -> Result<Vec<ManifestRow>, SslError> {
    let mut r = csv::Reader::from_path(path)?;
    if r.headers()?.iter().ne(MANIFEST_HEADER) {
        return Err(SslError::Config(format!("{}: unexpected manifest header", path.display())));
    }
    let rows = r.deserialize().collect::<Result<Vec<ManifestRow>, _>>()?;
    if let Some(bad) = rows.iter().find(|row| Side::from_code(&row.gt_side).is_none()) {
        return Err(SslError::Config(format!("trial {}: gt_side `{}`", bad.trial_id, bad.gt_side)));
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stimulus::{read_wav, read_xfmp};

    #[test]
    fn exported_trials_round_trip() {
        let model = SslModel::init(SslConfig::default(), 0).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let ds = SslDatasetConfig::default();
        let path = export_ssl_dataset(&model, &ds, 9, 3, dir.path()).unwrap();
        let rows = read_ssl_manifest(&path).unwrap();
        assert_eq!(rows.len(), 3);
        for row in &rows {
            let t = render_ssl_trial(&model, &ds, 9, row.trial_id).unwrap();
            assert_eq!(row.gt_side, t.side.code());
            let clip = read_wav(fs::File::open(dir.path().join(&row.wav_path)).unwrap()).unwrap();
            assert_eq!(clip.len(), 44_100);
            let frames = read_xfmp(fs::File::open(dir.path().join(&row.frames_path)).unwrap()).unwrap();
            assert_eq!(frames.len(), 16);
        }
    }

    #[test]
    fn samples_match_the_rendered_trials() {
        let model = SslModel::init(SslConfig::default(), 0).unwrap();
        let ds = SslDatasetConfig {
            noise_sigma: 0.0,
            ..Default::default()
        };
        let s = build_ssl_samples(&model, &ds, 4, 10, 2).unwrap();
        for sample in &s {
            let t = render_ssl_trial(&model, &ds, 4, sample.trial_id).unwrap();
            assert_eq!(sample.side, t.side);
            let direct = model.prepare(&t.clip, &t.frames).unwrap();
            assert!(direct.left.max_abs_diff(&sample.input.left) < 1e-12);
            assert!(direct.video.max_abs_diff(&sample.input.video) < 1e-12);
        }
    }
}
