//! The robot's 30-frame capture of one trial: frames 1 to 12 show the cue,
//! frames 13 to 30 the target period. Audio runs on the same clock with one
//! second of pre-roll so every frame has a full second of sound behind it.

use super::{render_capture_audio, render_scene_frame, AudioConfig, AudioDegradation, BinauralClip, SceneGeometry, StimulusError};
use crate::numerics::Tensor;
use crate::protocol::{CueDirection, Side};

pub const CAPTURE_FRAMES: usize = 30;
pub const CAPTURE_FPS: u32 = 30;
pub const CUE_FRAMES: usize = 12;
pub const AUDIO_PREROLL_MS: u32 = 1000;
/// Length of the audio chunk behind one frame.
pub const CHUNK_MS: u32 = 1000;

/// Audio of a capture: pre-roll, then the cue period, then the target.
pub fn capture_audio(side: Side, config: &AudioConfig, deg: &AudioDegradation, seed: u64) -> Result<BinauralClip, StimulusError> {
    let cue_ms = (CUE_FRAMES as u32 * 1000) / CAPTURE_FPS;
    let capture_ms = (CAPTURE_FRAMES as u32 * 1000) / CAPTURE_FPS;
    render_capture_audio(side, config, deg, AUDIO_PREROLL_MS + cue_ms, AUDIO_PREROLL_MS + capture_ms, seed)
}

/// First sample of the chunk ending with frame `end_frame` (1-based),
/// snapped to a multiple of `align` samples.
pub fn chunk_start(end_frame: usize, sample_rate: u32, align: usize) -> usize {
    let sr = sample_rate as f64;
    let end = AUDIO_PREROLL_MS as f64 / 1000.0 * sr + end_frame as f64 * sr / CAPTURE_FPS as f64;
    let start = (end - CHUNK_MS as f64 / 1000.0 * sr).max(0.0);
    let align = align.max(1);
    (start / align as f64).round() as usize * align
}

/// The one-second chunk ending with frame `end_frame`.
pub fn audio_chunk(capture: &BinauralClip, end_frame: usize, align: usize) -> BinauralClip {
    let start = chunk_start(end_frame, capture.sample_rate, align);
    let len = (capture.sample_rate as u64 * CHUNK_MS as u64 / 1000) as usize;
    let take = |ch: &[f64]| {
        let mut v: Vec<f64> = ch.iter().skip(start).take(len).copied().collect();
        v.resize(len, 0.0);
        v
    };
    BinauralClip {
        left: take(&capture.left),
        right: take(&capture.right),
        duration_ms: CHUNK_MS,
        ..*capture
    }
}

/// 0-based frame indices of a `len`-frame window ending with frame
/// `end_frame` (1-based); positions before the first frame repeat it.
pub fn window_indices(end_frame: usize, len: usize) -> Vec<usize> {
    (0..len)
        .map(|k| (end_frame + k + 1).saturating_sub(len + 1))
        .collect()
}

/// Noise-free scene frames of a capture.
pub fn scene_frames(geom: &SceneGeometry, cue: CueDirection) -> Vec<Tensor> {
    (0..CAPTURE_FRAMES)
        .map(|i| render_scene_frame(geom, cue, i, CUE_FRAMES, None))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn windows_pad_by_repeating_the_first_frame() {
        assert_eq!(window_indices(3, 5), [0, 0, 0, 1, 2]);
        assert_eq!(window_indices(30, 3), [27, 28, 29]);
        assert_eq!(window_indices(16, 16), (0..16).collect::<Vec<_>>());
    }

    #[test]
    fn chunk_geometry() {
        assert_eq!(chunk_start(30, 44_100, 1), 44_100);
        assert_eq!(chunk_start(30, 44_100, 441), 44_100);
        assert_eq!(chunk_start(3, 44_100, 441) % 441, 0);
        let cap = capture_audio(Side::Right, &AudioConfig::default(), &AudioDegradation::default(), 1).unwrap();
        assert_eq!(cap.len(), 88_200);
        let early = audio_chunk(&cap, 12, 441);
        assert!(early.left.iter().all(|v| *v == 0.0));
        let late = audio_chunk(&cap, 30, 441);
        assert_eq!(late.len(), 44_100);
        assert!(BinauralClip::rms(&late.right) > BinauralClip::rms(&late.left));
    }
}
