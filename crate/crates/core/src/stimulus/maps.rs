use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::actuation::FixationDensityMap;
use crate::numerics::Tensor;
use crate::protocol::{CueDirection, Side};
use crate::rng::{self, tag};

/// Canvas and avatar layout. Blob centers are continuous pixel coordinates
/// (cell `i` spans `[i, i+1)`), so maps of mirrored scenes are exact mirror
/// images.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SceneGeometry {
    pub width: usize,
    pub height: usize,
    /// Normalized x of the left, center and right avatars.
    pub anchor_x: [f64; 3],
    pub anchor_y: f64,
    pub blob_sigma_px: f64,
    pub marker_sigma_px: f64,
}

impl Default for SceneGeometry {
    fn default() -> Self {
        Self {
            width: 320,
            height: 200,
            anchor_x: [-0.6, 0.0, 0.6],
            anchor_y: -0.1,
            blob_sigma_px: 12.0,
            marker_sigma_px: 6.0,
        }
    }
}

/// Avatar slot.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Anchor {
    Left,
    Center,
    Right,
}

impl From<CueDirection> for Anchor {
    fn from(c: CueDirection) -> Self {
        match c {
            CueDirection::Left => Anchor::Left,
            CueDirection::Center => Anchor::Center,
            CueDirection::Right => Anchor::Right,
        }
    }
}

impl From<Side> for Anchor {
    fn from(s: Side) -> Self {
        match s {
            Side::Left => Anchor::Left,
            Side::Right => Anchor::Right,
        }
    }
}

impl SceneGeometry {
    pub fn anchor_normalized(&self, a: Anchor) -> (f64, f64) {
        let i = match a {
            Anchor::Left => 0,
            Anchor::Center => 1,
            Anchor::Right => 2,
        };
        (self.anchor_x[i], self.anchor_y)
    }

    /// Continuous pixel position of an anchor.
    pub fn anchor_px(&self, a: Anchor) -> (f64, f64) {
        let (x, y) = self.anchor_normalized(a);
        self.to_px(x, y)
    }

    pub fn to_px(&self, x_hat: f64, y_hat: f64) -> (f64, f64) {
        ((x_hat + 1.0) / 2.0 * self.width as f64, (y_hat + 1.0) / 2.0 * self.height as f64)
    }

    /// Shrinks the canvas by an integer factor, scaling blob sizes alike.
    pub fn downscaled(&self, factor: usize) -> Self {
        let f = factor as f64;
        Self {
            width: self.width / factor,
            height: self.height / factor,
            blob_sigma_px: self.blob_sigma_px / f,
            marker_sigma_px: self.marker_sigma_px / f,
            ..*self
        }
    }

    /// Same layout on a `width × height` canvas; blob sizes follow the width.
    pub fn with_size(&self, width: usize, height: usize) -> Self {
        let k = width as f64 / self.width as f64;
        Self {
            width,
            height,
            blob_sigma_px: self.blob_sigma_px * k,
            marker_sigma_px: self.marker_sigma_px * k,
            ..*self
        }
    }

    pub fn blank(&self) -> Vec<f64> {
        vec![0.0; self.width * self.height]
    }

    /// Adds `amp · exp(−r²/2σ²)` centered at `(cx, cy)`, evaluated at cell centers.
    pub fn stamp_gaussian(&self, buf: &mut [f64], cx: f64, cy: f64, sigma: f64, amp: f64) {
        let g = |n: usize, c: f64| -> Vec<f64> {
            (0..n)
                .map(|i| {
                    let d = i as f64 + 0.5 - c;
                    (-d * d / (2.0 * sigma * sigma)).exp()
                })
                .collect()
        };
        let gx = g(self.width, cx);
        let gy = g(self.height, cy);
        for (row, &wy) in buf.chunks_mut(self.width).zip(&gy) {
            let a = amp * wy;
            if a == 0.0 {
                continue;
            }
            for (v, &wx) in row.iter_mut().zip(&gx) {
                *v += a * wx;
            }
        }
    }

    pub fn tensor(&self, buf: Vec<f64>) -> Tensor {
        Tensor::new(vec![1, self.height, self.width], buf).expect("finite map")
    }
}

/// Which social-cue detector a map stands in for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CueChannel {
    /// Gaze estimation.
    Ge,
    /// Gaze following.
    Gf,
}

impl CueChannel {
    fn tag(self) -> u64 {
        match self {
            CueChannel::Ge => 0x6E,
            CueChannel::Gf => 0x6F,
        }
    }
}

/// Synthetic cue-detector frames; all values are nonnegative.
#[derive(Debug, Clone, PartialEq)]
pub struct CueFrameSeq {
    /// Each `[1, H, W]`.
    pub frames: Vec<Tensor>,
    pub channel: CueChannel,
    pub cue_direction: CueDirection,
    pub noise_sigma: f64,
}

/// Fraction of the center-to-cued-anchor shift reached at frame `i` of a
/// `window`-frame sequence: the shift completes over the first 40%.
pub fn drift_progress(cue: CueDirection, i: usize, window: usize) -> f64 {
    if cue == CueDirection::Center {
        return 1.0;
    }
    ((i + 1) as f64 / (0.4 * window as f64)).min(1.0)
}

/// One cue frame `i` of a `window`-frame timeline. Noise depends only on
/// `(seed, channel, i)`, so any subset of frames can be rendered alone.
pub fn render_cue_frame(
    geom: &SceneGeometry,
    cue: CueDirection,
    channel: CueChannel,
    i: usize,
    window: usize,
    noise_sigma: f64,
    seed: u64,
) -> Tensor {
    let (cx, cy) = geom.anchor_px(Anchor::Center);
    let (tx, ty) = geom.anchor_px(cue.into());
    let p = drift_progress(cue, i, window);
    let mut buf = geom.blank();
    geom.stamp_gaussian(&mut buf, cx + p * (tx - cx), cy + p * (ty - cy), geom.blob_sigma_px, 1.0);
    if noise_sigma > 0.0 {
        let mut r = rng::stream(seed, &[tag::CUE_MAPS, channel.tag(), i as u64]);
        for v in &mut buf {
            let z: f64 = StandardNormal.sample(&mut r);
            *v = (*v + noise_sigma * z).max(0.0);
        }
    }
    geom.tensor(buf)
}

pub fn render_cue_maps(
    cue: CueDirection,
    channel: CueChannel,
    window_len: usize,
    noise_sigma: f64,
    seed: u64,
) -> CueFrameSeq {
    render_cue_maps_with(&SceneGeometry::default(), cue, channel, window_len, noise_sigma, seed)
}

pub fn render_cue_maps_with(
    geom: &SceneGeometry,
    cue: CueDirection,
    channel: CueChannel,
    window_len: usize,
    noise_sigma: f64,
    seed: u64,
) -> CueFrameSeq {
    let window_len = window_len.max(1);
    CueFrameSeq {
        frames: (0..window_len)
            .map(|i| render_cue_frame(geom, cue, channel, i, window_len, noise_sigma, seed))
            .collect(),
        channel,
        cue_direction: cue,
        noise_sigma,
    }
}

/// Unit-sum Gaussian at the speaking avatar.
pub fn render_ground_truth_fdm(target: Side) -> FixationDensityMap {
    let geom = SceneGeometry::default();
    let t = ground_truth_tensor(&geom, target);
    FixationDensityMap::from_tensor(&t).expect("valid map")
}

pub fn ground_truth_tensor(geom: &SceneGeometry, target: Side) -> Tensor {
    let (x, y) = geom.anchor_px(target.into());
    let mut buf = geom.blank();
    geom.stamp_gaussian(&mut buf, x, y, geom.blob_sigma_px, 1.0);
    let s: f64 = buf.iter().sum();
    buf.iter_mut().for_each(|v| *v /= s);
    geom.tensor(buf)
}

/// Horizontal gaze offset of the central avatar's cue glyph at full shift,
/// in units of the blob sigma.
const CUE_GLYPH_SHIFT: f64 = 2.0;

/// Luminance of the schematic scene at frame `i`: three avatar blobs, the
/// central avatar's cue glyph shifted toward the cued side over the first
/// `cue_frames` frames, and an optional prior-fixation marker.
pub fn render_scene_frame(
    geom: &SceneGeometry,
    cue: CueDirection,
    i: usize,
    cue_frames: usize,
    marker: Option<(f64, f64)>,
) -> Tensor {
    let mut buf = geom.blank();
    for a in [Anchor::Left, Anchor::Center, Anchor::Right] {
        let (x, y) = geom.anchor_px(a);
        geom.stamp_gaussian(&mut buf, x, y, 1.5 * geom.blob_sigma_px, 0.5);
    }
    let (cx, cy) = geom.anchor_px(Anchor::Center);
    let p = ((i + 1) as f64 / cue_frames.max(1) as f64).min(1.0);
    let dir = cue.side().map_or(0.0, Side::sign);
    geom.stamp_gaussian(
        &mut buf,
        cx + dir * p * CUE_GLYPH_SHIFT * geom.blob_sigma_px,
        cy,
        geom.marker_sigma_px,
        0.5,
    );
    if let Some((mx, my)) = marker {
        geom.stamp_gaussian(&mut buf, mx, my, geom.marker_sigma_px, 1.0);
    }
    geom.tensor(buf)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::actuation::fdm_peak;

    /// Cell whose center is nearest to `(x, y)`; ties go to the smaller index.
    fn nearest_cell(x: f64, y: f64, w: usize, h: usize) -> (usize, usize) {
        let mut best = (0, 0, f64::INFINITY);
        for cy in 0..h {
            for cx in 0..w {
                let d = (cx as f64 + 0.5 - x).powi(2) + (cy as f64 + 0.5 - y).powi(2);
                if d < best.2 {
                    best = (cx, cy, d);
                }
            }
        }
        (best.0, best.1)
    }

    fn peak_of(t: &Tensor) -> (usize, usize) {
        let p = fdm_peak(&FixationDensityMap::from_tensor(t).unwrap());
        (p.x, p.y)
    }

    #[test]
    fn left_cue_ends_on_left_anchor() {
        let s = render_cue_maps(CueDirection::Left, CueChannel::Gf, 7, 0.0, 5);
        assert_eq!(s.frames.len(), 7);
        let g = SceneGeometry::default();
        let (x, y) = g.to_px(-0.6, -0.1);
        assert_eq!(peak_of(s.frames.last().unwrap()), nearest_cell(x, y, 320, 200));
    }

    #[test]
    fn center_cue_never_drifts() {
        let s = render_cue_maps(CueDirection::Center, CueChannel::Ge, 7, 0.0, 5);
        let g = SceneGeometry::default();
        let (x, y) = g.anchor_px(Anchor::Center);
        for f in &s.frames {
            assert_eq!(peak_of(f), nearest_cell(x, y, 320, 200));
        }
    }

    #[test]
    fn noisy_maps_are_seeded_and_nonnegative() {
        let a = render_cue_maps(CueDirection::Right, CueChannel::Ge, 4, 0.2, 11);
        let b = render_cue_maps(CueDirection::Right, CueChannel::Ge, 4, 0.2, 11);
        assert_eq!(a, b);
        assert!(a.frames.iter().all(|f| f.min() >= 0.0));
        let c = render_cue_maps(CueDirection::Right, CueChannel::Gf, 4, 0.2, 11);
        assert_ne!(a.frames[0], c.frames[0]);
    }

    #[test]
    fn ground_truth_is_normalized_and_mirrored() {
        let l = render_ground_truth_fdm(Side::Left);
        let r = render_ground_truth_fdm(Side::Right);
        assert!((l.sum() - 1.0).abs() < 1e-9);
        let g = SceneGeometry::default();
        let (x, y) = g.anchor_px(Anchor::Left);
        let p = fdm_peak(&l);
        assert_eq!((p.x, p.y), nearest_cell(x, y, 320, 200));
        assert!(l
            .mirrored()
            .values()
            .iter()
            .zip(r.values())
            .all(|(a, b)| (a - b).abs() < 1e-15));
    }

    #[test]
    fn drift_reaches_anchor_at_forty_percent() {
        assert!(drift_progress(CueDirection::Left, 0, 30) < 1.0);
        assert_eq!(drift_progress(CueDirection::Left, 11, 30), 1.0);
        assert_eq!(drift_progress(CueDirection::Center, 0, 30), 1.0);
    }
}
