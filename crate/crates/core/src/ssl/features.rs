use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use super::SslError;
use crate::numerics::Tensor;

/// Mel energy of the capture noise floor for a peak-normalized utterance
/// at 20 dB SNR. Energies well below it map to about 0.
const LOG_FLOOR: f64 = 1.0;
/// Applied to `ln(1 + mel / floor)` to keep inputs near unit scale. Silence
/// maps to 0, the same value the convolutions pad with.
const LOG_SCALE: f64 = 0.25;

/// Log-mel spectrogram front end (Hann window, HTK mel scale).
#[derive(Clone)]
pub struct LogMel {
    sample_rate: u32,
    n_mels: usize,
    win: usize,
    hop: usize,
    n_fft: usize,
    window: Vec<f64>,
    /// `n_mels` rows of `n_fft / 2 + 1` weights.
    filters: Vec<Vec<(usize, f64)>>,
    fft: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for LogMel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("LogMel")
            .field("sample_rate", &self.sample_rate)
            .field("n_mels", &self.n_mels)
            .field("win", &self.win)
            .field("hop", &self.hop)
            .field("n_fft", &self.n_fft)
            .finish()
    }
}

fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

impl LogMel {
    /// 25 ms window, 10 ms hop, FFT size the next power of two.
    pub fn new(sample_rate: u32, n_mels: usize) -> Self {
        let sr = sample_rate as f64;
        let win = (sample_rate as usize * 25) / 1000;
        let hop = (sample_rate as usize * 10) / 1000;
        let n_fft = win.next_power_of_two();
        let window = (0..win)
            .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / win as f64).cos())
            .collect();
        let bins = n_fft / 2 + 1;
        let (lo, hi) = (hz_to_mel(0.0), hz_to_mel(sr / 2.0));
        let edges: Vec<f64> = (0..n_mels + 2)
            .map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / (n_mels + 1) as f64))
            .collect();
        let bin_hz = sr / n_fft as f64;
        let filters = (0..n_mels)
            .map(|m| {
                let (a, b, c) = (edges[m], edges[m + 1], edges[m + 2]);
                (0..bins)
                    .filter_map(|k| {
                        let f = k as f64 * bin_hz;
                        let w = if f > a && f <= b {
                            (f - a) / (b - a)
                        } else if f > b && f < c {
                            (c - f) / (c - b)
                        } else {
                            0.0
                        };
                        (w > 0.0).then_some((k, w))
                    })
                    .collect()
            })
            .collect();
        let fft = FftPlanner::new().plan_fft_forward(n_fft);
        Self {
            sample_rate,
            n_mels,
            win,
            hop,
            n_fft,
            window,
            filters,
            fft,
        }
    }

    pub fn n_mels(&self) -> usize {
        self.n_mels
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn hop(&self) -> usize {
        self.hop
    }

    pub fn frames_for(&self, samples: usize) -> usize {
        if samples < self.win {
            0
        } else {
            1 + (samples - self.win) / self.hop
        }
    }

    /// `[1, n_mels, frames]` scaled log-mel energies of one channel.
    pub fn compute(&self, signal: &[f64]) -> Result<Tensor, SslError> {
        let frames = self.frames_for(signal.len());
        if frames == 0 {
            return Err(SslError::ClipTooShort {
                samples: signal.len(),
                needed: self.win,
            });
        }
        let mut out = vec![0.0; self.n_mels * frames];
        let mut buf = vec![Complex::new(0.0, 0.0); self.n_fft];
        let mut scratch = vec![Complex::new(0.0, 0.0); self.fft.get_inplace_scratch_len()];
        let mut power = vec![0.0; self.n_fft / 2 + 1];
        for t in 0..frames {
            let start = t * self.hop;
            for (i, b) in buf.iter_mut().enumerate() {
                *b = if i < self.win {
                    Complex::new(signal[start + i] * self.window[i], 0.0)
                } else {
                    Complex::new(0.0, 0.0)
                };
            }
            self.fft.process_with_scratch(&mut buf, &mut scratch);
            for (p, c) in power.iter_mut().zip(&buf) {
                *p = c.norm_sqr();
            }
            for (m, filt) in self.filters.iter().enumerate() {
                let e: f64 = filt.iter().map(|&(k, w)| w * power[k]).sum();
                out[m * frames + t] = LOG_SCALE * (e / LOG_FLOOR).ln_1p();
            }
        }
        Ok(Tensor::new(vec![1, self.n_mels, frames], out).expect("finite log-mel"))
    }
}
