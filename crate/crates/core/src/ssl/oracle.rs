use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use super::SslError;
use crate::stimulus::{AudioConfig, BinauralClip};

/// Classical interaural-cue estimate of one clip.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InterauralEstimate {
    /// Positive when the left channel leads.
    pub itd_s: f64,
    /// `20·log10(rms_L / rms_R)`.
    pub ild_db: f64,
    /// Negative (left) exactly when `itd_s > 0`.
    pub azimuth_deg: f64,
    /// Correlation peak over the mean absolute correlation in the lag window; ≥ 1.
    pub confidence: f64,
}

pub const DEFAULT_MAX_LAG_S: f64 = 1e-3;
/// Shortest accepted clip.
pub const MIN_CLIP_MS: f64 = 64.0;
/// RMS below which both channels count as silent.
pub const SILENCE_RMS: f64 = 1e-6;
/// Cross-spectrum bins weaker than this fraction of the strongest bin are
/// dropped before the phase transform. Whitening every bin lets broadband
/// noise swamp a sparse harmonic source; this keeps only bins that carry it.
const PHAT_FLOOR: f64 = 1e-4;

/// GCC-PHAT time difference plus level difference, with head width and
/// speed of sound taken from the default renderer settings.
pub fn gcc_phat(clip: &BinauralClip, max_lag_s: f64) -> Result<InterauralEstimate, SslError> {
    let cfg = AudioConfig::default();
    gcc_phat_with(clip, max_lag_s, cfg.head_width_m, cfg.speed_of_sound)
}

pub fn gcc_phat_with(
    clip: &BinauralClip,
    max_lag_s: f64,
    head_width_m: f64,
    speed_of_sound: f64,
) -> Result<InterauralEstimate, SslError> {
    let sr = clip.sample_rate as f64;
    let n = clip.len();
    if (n as f64) < MIN_CLIP_MS * sr / 1000.0 || clip.right.len() != n {
        return Err(SslError::ClipTooShort {
            samples: n,
            needed: (MIN_CLIP_MS * sr / 1000.0).ceil() as usize,
        });
    }
    let (rl, rr) = (BinauralClip::rms(&clip.left), BinauralClip::rms(&clip.right));
    if rl < SILENCE_RMS && rr < SILENCE_RMS {
        return Err(SslError::NoSignal);
    }

    let size = (2 * n).next_power_of_two();
    let mut planner = FftPlanner::<f64>::new();
    let fwd = planner.plan_fft_forward(size);
    let inv = planner.plan_fft_inverse(size);
    let spectrum = |x: &[f64]| {
        let mut buf: Vec<Complex<f64>> = x.iter().map(|&v| Complex::new(v, 0.0)).collect();
        buf.resize(size, Complex::new(0.0, 0.0));
        fwd.process(&mut buf);
        buf
    };
    let xl = spectrum(&clip.left);
    let xr = spectrum(&clip.right);
    // r[τ] = Σ right[n+τ]·left[n] peaks at τ = D when the right ear lags by D.
    let mut cross: Vec<Complex<f64>> = xr.iter().zip(&xl).map(|(r, l)| r * l.conj()).collect();
    let strongest = cross.iter().fold(0.0f64, |m, c| m.max(c.norm()));
    for c in &mut cross {
        let mag = c.norm();
        *c = if mag > PHAT_FLOOR * strongest { *c / mag } else { Complex::new(0.0, 0.0) };
    }
    inv.process(&mut cross);

    let max_lag = ((max_lag_s * sr).round() as usize).min(n - 1);
    let at = |lag: isize| -> f64 {
        let idx = if lag >= 0 { lag as usize } else { size - lag.unsigned_abs() };
        cross[idx].re
    };
    // Scan symmetric pairs outward from zero so ties resolve to the smaller
    // |lag| and channel swaps mirror exactly.
    let mut best = (0isize, at(0));
    let mut abs_sum = at(0).abs();
    for k in 1..=max_lag as isize {
        for lag in [k, -k] {
            let v = at(lag);
            abs_sum += v.abs();
            if v > best.1 {
                best = (lag, v);
            }
        }
    }
    let mean_abs = abs_sum / (2 * max_lag + 1) as f64;
    let confidence = if mean_abs > 0.0 { (best.1.abs() / mean_abs).max(1.0) } else { 1.0 };

    let itd_s = best.0 as f64 / sr;
    let s = (itd_s * speed_of_sound / head_width_m).clamp(-1.0, 1.0);
    let azimuth_deg = -s.asin().to_degrees();
    let ild_db = 20.0 * (rl.max(f64::MIN_POSITIVE) / rr.max(f64::MIN_POSITIVE)).log10();
    Ok(InterauralEstimate {
        itd_s,
        ild_db,
        azimuth_deg,
        confidence,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::protocol::Side;
    use crate::rng;
    use crate::stimulus::{degrade, render_target_audio, AudioDegradation};

    #[test]
    fn clean_left_clip_recovers_the_rendered_delay() {
        let c = render_target_audio(Side::Left, 44_100, 11).unwrap();
        let e = gcc_phat(&c, DEFAULT_MAX_LAG_S).unwrap();
        assert!((e.itd_s * 44_100.0 - 17.0).abs() <= 1.0, "{e:?}");
        assert!((e.azimuth_deg + 60.0).abs() <= 4.0, "{e:?}");
        assert!(e.ild_db > 5.9 && e.confidence >= 1.0);
    }

    #[test]
    fn identical_channels_are_centered() {
        let c = render_target_audio(Side::Left, 16_000, 2).unwrap();
        let mono = BinauralClip {
            right: c.left.clone(),
            ..c
        };
        let e = gcc_phat(&mono, DEFAULT_MAX_LAG_S).unwrap();
        assert_eq!((e.itd_s, e.azimuth_deg, e.ild_db), (0.0, 0.0, 0.0));
    }

    #[test]
    fn swapping_channels_mirrors_the_estimate() {
        for seed in 0..5 {
            let c = render_target_audio(Side::Right, 44_100, seed).unwrap();
            let noisy = degrade(
                &c,
                &AudioDegradation {
                    snr_db: Some(10.0),
                    gain_jitter_db: 1.0,
                },
                &mut rng::stream(seed, &[7]),
            );
            let a = gcc_phat(&noisy, DEFAULT_MAX_LAG_S).unwrap();
            let b = gcc_phat(&noisy.swapped(), DEFAULT_MAX_LAG_S).unwrap();
            assert!((a.itd_s + b.itd_s).abs() < 1e-9);
            assert!((a.azimuth_deg + b.azimuth_deg).abs() < 1e-9);
            assert!((a.ild_db + b.ild_db).abs() < 1e-9);
        }
    }

    #[test]
    fn silence_and_short_clips_are_rejected() {
        let mut c = render_target_audio(Side::Left, 16_000, 1).unwrap();
        c.left.iter_mut().chain(c.right.iter_mut()).for_each(|v| *v = 0.0);
        assert!(matches!(gcc_phat(&c, DEFAULT_MAX_LAG_S), Err(SslError::NoSignal)));
        c.left.truncate(100);
        c.right.truncate(100);
        assert!(matches!(gcc_phat(&c, DEFAULT_MAX_LAG_S), Err(SslError::ClipTooShort { .. })));
    }
}
