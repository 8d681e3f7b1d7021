//! Trial stimuli: lateralized target audio, synthetic gaze-cue detector maps,
//! ground-truth fixation maps and schematic scene frames.

mod audio;
pub mod capture;
mod io;
mod maps;

pub use audio::{
    degrade, noise_sd, render_capture_audio, render_target_audio, render_target_audio_with, spatialize,
    synth_utterance, AudioConfig,
    AudioDegradation, BinauralClip,
};
pub use io::{read_mono_wav, read_wav, read_xfmp, wav_bytes, write_wav, write_xfmp, XFMP_MAGIC};
pub use maps::{
    drift_progress, ground_truth_tensor, render_cue_frame, render_cue_maps, render_cue_maps_with,
    render_ground_truth_fdm, render_scene_frame, Anchor, CueChannel, CueFrameSeq, SceneGeometry,
};

#[derive(Debug, thiserror::Error)]
pub enum StimulusError {
    #[error("unsupported sample rate {0} Hz (minimum 8000 Hz)")]
    SampleRate(u32),
    #[error("stimulus file: {0}")]
    Format(String),
    #[error("WAV: {0}")]
    Wav(#[from] hound::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
