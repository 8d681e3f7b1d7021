use super::FusionError;
use crate::numerics::Tensor;

/// Input streams of the integrator, in stream order.
pub const STREAMS: [&str; 4] = ["raw", "ge", "gf", "ssl"];
/// Streams that take part in channel weighting.
pub const CUE_STREAMS: [usize; 3] = [1, 2, 3];
pub const SSL_STREAM: usize = 3;
pub const SSL_WINDOW: usize = 16;
pub const CUE_WINDOW: usize = 7;

/// Maps of one timestep, each `[1, h, w]` and nonnegative.
#[derive(Debug, Clone, PartialEq)]
pub struct StackEntry {
    pub raw: Tensor,
    pub ge: Tensor,
    pub gf: Tensor,
    pub ssl: Tensor,
}

impl StackEntry {
    pub fn stream(&self, k: usize) -> &Tensor {
        match k {
            0 => &self.raw,
            1 => &self.ge,
            2 => &self.gf,
            _ => &self.ssl,
        }
    }

    fn stream_mut(&mut self, k: usize) -> &mut Tensor {
        match k {
            0 => &mut self.raw,
            1 => &mut self.ge,
            2 => &mut self.gf,
            _ => &mut self.ssl,
        }
    }
}

/// Per-timestep social-cue maps plus the raw frame. The SSL map of an entry
/// summarizes the 16 frames ending at its timestep, the cue maps the last 7.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMapStack {
    entries: Vec<StackEntry>,
}

impl FeatureMapStack {
    pub fn new(entries: Vec<StackEntry>) -> Result<Self, FusionError> {
        let first = entries.first().ok_or(FusionError::Timesteps { expected: 1, got: 0 })?;
        let shape = first.raw.shape().to_vec();
        if shape.len() != 3 || shape[0] != 1 {
            return Err(FusionError::Shape(format!("maps must be [1, h, w], got {shape:?}")));
        }
        for (t, e) in entries.iter().enumerate() {
            for (k, name) in STREAMS.iter().enumerate() {
                let m = e.stream(k);
                if m.shape() != shape.as_slice() {
                    return Err(FusionError::Shape(format!(
                        "timestep {t} {name} map is {:?}, expected {shape:?}",
                        m.shape()
                    )));
                }
                if let Some(i) = m.data().iter().position(|v| !v.is_finite() || *v < 0.0) {
                    return Err(FusionError::Shape(format!(
                        "timestep {t} {name} map has value {} at {i}",
                        m.data()[i]
                    )));
                }
            }
        }
        Ok(Self { entries })
    }

    pub fn entries(&self) -> &[StackEntry] {
        &self.entries
    }

    pub fn timesteps(&self) -> usize {
        self.entries.len()
    }

    /// `(h, w)` of every map.
    pub fn grid(&self) -> (usize, usize) {
        let s = self.entries[0].raw.shape();
        (s[1], s[2])
    }

    /// Copy with every map of stream `k` multiplied by `factor`.
    pub fn with_stream_scaled(&self, k: usize, factor: f64) -> Self {
        let mut out = self.clone();
        for e in &mut out.entries {
            e.stream_mut(k).scale(factor);
        }
        out
    }

    /// Copy with the SSL stream set to zero.
    pub fn with_ssl_zeroed(&self) -> Self {
        self.with_stream_scaled(SSL_STREAM, 0.0)
    }
}

/// `m / Σm`, or uniform when the map is all zero.
fn normalized(m: &[f64]) -> Vec<f64> {
    let s: f64 = m.iter().sum();
    if s > 0.0 {
        m.iter().map(|v| v / s).collect()
    } else {
        vec![1.0 / m.len() as f64; m.len()]
    }
}

/// Channel weights over (GE, GF, SSL): each channel's time-mean map is
/// normalized, scored by its KL divergence from the mean of the normalized
/// maps, and the scores pass through a softmax at temperature `tau`. The
/// more a channel departs from the consensus, the more weight it gets.
pub fn dam_weights(stack: &FeatureMapStack, tau: f64) -> Result<[f64; 3], FusionError> {
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(FusionError::Config(format!("DAM temperature must be positive, got {tau}")));
    }
    let n = stack.entries[0].raw.len();
    let t = stack.timesteps() as f64;
    let p: Vec<Vec<f64>> = CUE_STREAMS
        .iter()
        .map(|&k| {
            let mut mean = vec![0.0; n];
            for e in &stack.entries {
                for (m, v) in mean.iter_mut().zip(e.stream(k).data()) {
                    *m += v / t;
                }
            }
            normalized(&mean)
        })
        .collect();
    let q: Vec<f64> = (0..n).map(|i| p.iter().map(|pc| pc[i]).sum::<f64>() / 3.0).collect();
    let u: Vec<f64> = p
        .iter()
        .map(|pc| {
            pc.iter()
                .zip(&q)
                .filter(|(a, _)| **a > 0.0)
                .map(|(a, b)| a * (a / b).ln())
                .sum::<f64>()
        })
        .collect();
    let top = u.iter().fold(f64::NEG_INFINITY, |m, v| m.max(*v / tau));
    let e: Vec<f64> = u.iter().map(|v| (v / tau - top).exp()).collect();
    let z: f64 = e.iter().sum();
    Ok([e[0] / z, e[1] / z, e[2] / z])
}
