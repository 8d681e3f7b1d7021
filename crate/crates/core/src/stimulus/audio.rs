use std::f64::consts::PI;

use rand::Rng;
use serde::{Deserialize, Serialize};
use rand_distr::{Distribution, Normal};

use super::StimulusError;
use crate::protocol::Side;
use crate::rng::{self, tag};

/// Two-channel clip; both channels have the same length and samples lie in
/// `[-1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct BinauralClip {
    pub sample_rate: u32,
    pub left: Vec<f64>,
    pub right: Vec<f64>,
    pub duration_ms: u32,
    /// Negative is left.
    pub azimuth_deg: f64,
}

impl BinauralClip {
    pub fn len(&self) -> usize {
        self.left.len()
    }

    pub fn is_empty(&self) -> bool {
        self.left.is_empty()
    }

    /// Channels exchanged; azimuth negated.
    pub fn swapped(&self) -> Self {
        Self {
            left: self.right.clone(),
            right: self.left.clone(),
            azimuth_deg: -self.azimuth_deg,
            ..*self
        }
    }

    pub fn rms(channel: &[f64]) -> f64 {
        (channel.iter().map(|v| v * v).sum::<f64>() / channel.len().max(1) as f64).sqrt()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AudioConfig {
    pub sample_rate: u32,
    pub duration_ms: u32,
    pub utterance_ms: u32,
    pub f0_hz: f64,
    pub harmonics: usize,
    pub ramp_ms: f64,
    /// Peak amplitude of the dry utterance.
    pub level: f64,
    pub azimuth_deg: f64,
    pub head_width_m: f64,
    pub speed_of_sound: f64,
    pub ild_db: f64,
}

impl Default for AudioConfig {
    fn default() -> Self {
        Self {
            sample_rate: 44_100,
            duration_ms: 1000,
            utterance_ms: 700,
            f0_hz: 140.0,
            harmonics: 3,
            ramp_ms: 10.0,
            level: 0.5,
            azimuth_deg: 60.0,
            head_width_m: 0.15,
            speed_of_sound: 343.0,
            ild_db: 6.0,
        }
    }
}

impl AudioConfig {
    pub const MIN_SAMPLE_RATE: u32 = 8_000;

    pub fn clip_len(&self) -> usize {
        (self.sample_rate as u64 * self.duration_ms as u64 / 1000) as usize
    }

    /// Interaural delay in whole samples for an azimuth: `round(sr·(d/c)·sin|az|)`.
    pub fn itd_samples(&self, azimuth_deg: f64) -> usize {
        (self.sample_rate as f64 * self.head_width_m / self.speed_of_sound * azimuth_deg.to_radians().sin().abs())
            .round() as usize
    }

    fn check(&self) -> Result<(), StimulusError> {
        if self.sample_rate < Self::MIN_SAMPLE_RATE {
            return Err(StimulusError::SampleRate(self.sample_rate));
        }
        Ok(())
    }
}

/// The dry utterance: a harmonic vowel on `f0` with raised-cosine ramps,
/// starting at sample 0. Harmonic phases are drawn from `seed`.
pub fn synth_utterance(config: &AudioConfig, seed: u64) -> Result<Vec<f64>, StimulusError> {
    config.check()?;
    let sr = config.sample_rate as f64;
    let n = (sr * config.utterance_ms as f64 / 1000.0) as usize;
    let ramp = (sr * config.ramp_ms / 1000.0) as usize;
    let mut rng = rng::stream(seed, &[tag::AUDIO]);
    let phases: Vec<f64> = (0..config.harmonics).map(|_| rng.random::<f64>() * 2.0 * PI).collect();
    let mut out: Vec<f64> = (0..n)
        .map(|i| {
            let t = i as f64 / sr;
            phases
                .iter()
                .enumerate()
                .map(|(h, ph)| (2.0 * PI * config.f0_hz * (h + 1) as f64 * t + ph).sin() / (h + 1) as f64)
                .sum()
        })
        .collect();
    for i in 0..ramp.min(n / 2) {
        let g = 0.5 * (1.0 - (PI * i as f64 / ramp as f64).cos());
        out[i] *= g;
        out[n - 1 - i] *= g;
    }
    let peak = out.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if peak > 0.0 {
        for v in &mut out {
            *v *= config.level / peak;
        }
    }
    Ok(out)
}

/// Lateralizes a mono signal: the contralateral ear is delayed by the ITD
/// and attenuated by the ILD. The clip is zero-padded or truncated to
/// `duration_ms`.
pub fn spatialize(mono: &[f64], azimuth_deg: f64, config: &AudioConfig) -> Result<BinauralClip, StimulusError> {
    config.check()?;
    let len = config.clip_len();
    let delay = config.itd_samples(azimuth_deg);
    let (gain_ipsi, gain_contra) = if azimuth_deg == 0.0 {
        (1.0, 1.0)
    } else {
        (1.0, 10f64.powf(-config.ild_db / 20.0))
    };
    let mut ipsi = vec![0.0; len];
    let mut contra = vec![0.0; len];
    for (i, &v) in mono.iter().enumerate() {
        if i < len {
            ipsi[i] = (v * gain_ipsi).clamp(-1.0, 1.0);
        }
        if i + delay < len {
            contra[i + delay] = (v * gain_contra).clamp(-1.0, 1.0);
        }
    }
    let (left, right) = if azimuth_deg <= 0.0 { (ipsi, contra) } else { (contra, ipsi) };
    Ok(BinauralClip {
        sample_rate: config.sample_rate,
        left,
        right,
        duration_ms: config.duration_ms,
        azimuth_deg,
    })
}

/// Target sound for a trial at `∓config.azimuth_deg`.
pub fn render_target_audio(side: Side, sample_rate: u32, seed: u64) -> Result<BinauralClip, StimulusError> {
    let config = AudioConfig {
        sample_rate,
        ..AudioConfig::default()
    };
    render_target_audio_with(side, &config, None, seed)
}

/// As [`render_target_audio`] with explicit settings; `mono` replaces the
/// synthetic utterance when given.
pub fn render_target_audio_with(
    side: Side,
    config: &AudioConfig,
    mono: Option<&[f64]>,
    seed: u64,
) -> Result<BinauralClip, StimulusError> {
    let azimuth = side.sign() * config.azimuth_deg.abs();
    match mono {
        Some(m) => spatialize(m, azimuth, config),
        None => spatialize(&synth_utterance(config, seed)?, azimuth, config),
    }
}

/// Capture degradations applied to a rendered clip.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AudioDegradation {
    /// White noise relative to the clip's mean signal power.
    pub snr_db: Option<f64>,
    /// SD of a per-trial interaural gain offset in dB (left gains +j/2,
    /// right −j/2).
    pub gain_jitter_db: f64,
}

impl Default for AudioDegradation {
    fn default() -> Self {
        Self {
            snr_db: None,
            gain_jitter_db: 0.0,
        }
    }
}

/// Applies `deg` with noise drawn from `rng`; samples are clipped to `[-1, 1]`.
pub fn degrade(clip: &BinauralClip, deg: &AudioDegradation, rng: &mut impl Rng) -> BinauralClip {
    let mut out = clip.clone();
    if deg.gain_jitter_db > 0.0 {
        let j = deg.gain_jitter_db * Normal::new(0.0, 1.0).expect("unit normal").sample(rng);
        let (gl, gr) = (10f64.powf(j / 40.0), 10f64.powf(-j / 40.0));
        out.left.iter_mut().for_each(|v| *v *= gl);
        out.right.iter_mut().for_each(|v| *v *= gr);
    }
    if let Some(snr) = deg.snr_db {
        add_noise(&mut out, noise_sd(clip, snr), rng);
    }
    for v in out.left.iter_mut().chain(out.right.iter_mut()) {
        *v = v.clamp(-1.0, 1.0);
    }
    out
}

/// White-noise SD giving `snr_db` against the clip's mean power over both
/// channels.
pub fn noise_sd(clip: &BinauralClip, snr_db: f64) -> f64 {
    let power = clip.left.iter().chain(&clip.right).map(|v| v * v).sum::<f64>() / (2 * clip.len().max(1)) as f64;
    (power / 10f64.powf(snr_db / 10.0)).sqrt()
}

fn add_noise(clip: &mut BinauralClip, sd: f64, rng: &mut impl Rng) {
    if sd <= 0.0 || !sd.is_finite() {
        return;
    }
    let noise = Normal::new(0.0, sd).expect("finite noise scale");
    for v in clip.left.iter_mut().chain(clip.right.iter_mut()) {
        *v += noise.sample(rng);
    }
}

/// Audio heard over a capture: `total_ms` of signal in which the target clip
/// (gain jitter applied) starts at `onset_ms`. Noise at the clip's SNR covers
/// the whole span, silence included, so the level of the background does
/// not depend on where the clip sits.
pub fn render_capture_audio(
    side: Side,
    config: &AudioConfig,
    deg: &AudioDegradation,
    onset_ms: u32,
    total_ms: u32,
    seed: u64,
) -> Result<BinauralClip, StimulusError> {
    let clip = render_target_audio_with(side, config, None, seed)?;
    let mut rng = rng::stream(seed, &[tag::CAPTURE]);
    let jittered = degrade(
        &clip,
        &AudioDegradation {
            snr_db: None,
            ..*deg
        },
        &mut rng,
    );
    let sr = config.sample_rate as u64;
    let total = (sr * total_ms as u64 / 1000) as usize;
    let onset = (sr * onset_ms as u64 / 1000) as usize;
    let mut out = BinauralClip {
        sample_rate: config.sample_rate,
        left: vec![0.0; total],
        right: vec![0.0; total],
        duration_ms: total_ms,
        azimuth_deg: clip.azimuth_deg,
    };
    for (dst, src) in [(&mut out.left, &jittered.left), (&mut out.right, &jittered.right)] {
        for (d, s) in dst.iter_mut().skip(onset).zip(src) {
            *d = *s;
        }
    }
    if let Some(snr) = deg.snr_db {
        add_noise(&mut out, noise_sd(&clip, snr), &mut rng);
    }
    for v in out.left.iter_mut().chain(out.right.iter_mut()) {
        *v = v.clamp(-1.0, 1.0);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn onset(ch: &[f64]) -> usize {
        ch.iter().position(|v| v.abs() > 0.0).unwrap()
    }

    #[test]
    fn left_channel_leads_by_itd() {
        let c = render_target_audio(Side::Left, 44_100, 1).unwrap();
        assert_eq!(c.len(), 44_100);
        assert_eq!(onset(&c.right) - onset(&c.left), 17);
        assert_eq!(AudioConfig::default().itd_samples(60.0), 17);
        assert_eq!(c.azimuth_deg, -60.0);
    }

    #[test]
    fn ild_ratio() {
        let c = render_target_audio(Side::Right, 44_100, 2).unwrap();
        let ratio = BinauralClip::rms(&c.right) / BinauralClip::rms(&c.left);
        assert!((ratio - 10f64.powf(0.3)).abs() < 1e-9, "{ratio}");
    }

    #[test]
    fn mirror_and_midline() {
        let l = render_target_audio(Side::Left, 44_100, 9).unwrap();
        let r = render_target_audio(Side::Right, 44_100, 9).unwrap();
        assert_eq!(l.swapped(), r);
        let cfg = AudioConfig::default();
        let c = spatialize(&synth_utterance(&cfg, 3).unwrap(), 0.0, &cfg).unwrap();
        assert_eq!(c.left, c.right);
    }

    #[test]
    fn low_sample_rate_rejected() {
        assert!(matches!(render_target_audio(Side::Left, 4000, 0), Err(StimulusError::SampleRate(4000))));
    }

    #[test]
    fn capture_places_the_clip_at_onset() {
        let cfg = AudioConfig::default();
        let c = render_capture_audio(Side::Left, &cfg, &AudioDegradation::default(), 1400, 2000, 5).unwrap();
        assert_eq!(c.len(), 88_200);
        let clip = render_target_audio(Side::Left, 44_100, 5).unwrap();
        assert_eq!(onset(&c.left), 61_740 + onset(&clip.left));
        assert_eq!(&c.left[61_740..], &clip.left[..88_200 - 61_740]);
    }

    #[test]
    fn samples_stay_in_range() {
        let c = render_target_audio(Side::Left, 16_000, 4).unwrap();
        let d = degrade(
            &c,
            &AudioDegradation {
                snr_db: Some(-10.0),
                gain_jitter_db: 3.0,
            },
            &mut rng::stream(1, &[]),
        );
        assert!(d.left.iter().chain(&d.right).all(|v| (-1.0..=1.0).contains(v)));
    }
}
