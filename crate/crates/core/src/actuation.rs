//! Fixation density map to eye command: peak, normalization, yaw/pitch,
//! clamping and the left/right decision.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::analysis::Response;
use crate::numerics::Tensor;

#[derive(Debug, thiserror::Error)]
pub enum ActuationError {
    #[error("fixation map: {0}")]
    InvalidMap(String),
    #[error("pixel ({x}, {y}) outside a {l_x}x{l_y} map")]
    OutOfRange { x: f64, y: f64, l_x: usize, l_y: usize },
    #[error("CSV: {0}")]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Nonnegative map over the scene, row-major with `values[y * width + x]`.
#[derive(Debug, Clone, PartialEq)]
pub struct FixationDensityMap {
    width: usize,
    height: usize,
    values: Vec<f64>,
}

impl FixationDensityMap {
    pub fn new(width: usize, height: usize, values: Vec<f64>) -> Result<Self, ActuationError> {
        if width < 2 || height < 2 {
            return Err(ActuationError::InvalidMap(format!("{width}x{height} is smaller than 2x2")));
        }
        if values.len() != width * height {
            return Err(ActuationError::InvalidMap(format!(
                "{} values for a {width}x{height} map",
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite() || *v < 0.0) {
            return Err(ActuationError::InvalidMap(format!("value {} at flat index {i}", values[i])));
        }
        Ok(Self { width, height, values })
    }

    /// From a `[1, H, W]` or `[H, W]` tensor.
    pub fn from_tensor(t: &Tensor) -> Result<Self, ActuationError> {
        let (h, w) = match t.shape() {
            [1, h, w] | [h, w] => (*h, *w),
            s => return Err(ActuationError::InvalidMap(format!("tensor shape {s:?} is not a single map"))),
        };
        Self::new(w, h, t.data().to_vec())
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(vec![1, self.height, self.width], self.values.clone()).expect("validated map")
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn at(&self, x: usize, y: usize) -> f64 {
        self.values[y * self.width + x]
    }

    pub fn sum(&self) -> f64 {
        self.values.iter().sum()
    }

    /// Left-right mirror image.
    pub fn mirrored(&self) -> Self {
        let mut values = Vec::with_capacity(self.values.len());
        for row in self.values.chunks(self.width) {
            values.extend(row.iter().rev());
        }
        Self { values, ..*self }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Peak {
    pub x: usize,
    pub y: usize,
    /// Every cell holds the same value; `(x, y)` is then `(0, 0)`.
    pub degenerate: bool,
}

/// Argmax with ties resolved to the smallest row-major index.
pub fn fdm_peak(map: &FixationDensityMap) -> Peak {
    let mut best = 0;
    for (i, &v) in map.values.iter().enumerate() {
        if v > map.values[best] {
            best = i;
        }
    }
    let first = map.values[0];
    if map.values.iter().all(|&v| v == first) {
        return Peak { x: 0, y: 0, degenerate: true };
    }
    Peak {
        x: best % map.width,
        y: best / map.width,
        degenerate: false,
    }
}

/// `x̂ = 2x/l_x − 1`, `ŷ = 2y/l_y − 1`, for continuous pixel coordinates in
/// `[0, l_x] × [0, l_y]`. `ŷ = −1` is the top edge.
pub fn normalize_peak(x: f64, y: f64, l_x: usize, l_y: usize) -> Result<(f64, f64), ActuationError> {
    if !(0.0..=l_x as f64).contains(&x) || !(0.0..=l_y as f64).contains(&y) {
        return Err(ActuationError::OutOfRange { x, y, l_x, l_y });
    }
    Ok((2.0 * x / l_x as f64 - 1.0, 2.0 * y / l_y as f64 - 1.0))
}

/// Normalized coordinates of a peak cell's center (`index + 0.5`).
pub fn peak_to_normalized(peak: Peak, map: &FixationDensityMap) -> (f64, f64) {
    normalize_peak(peak.x as f64 + 0.5, peak.y as f64 + 0.5, map.width, map.height).expect("cell centers lie inside the map")
}

/// Viewing distance in the yaw formula, in metres.
pub const VIEW_DISTANCE_M: f64 = 0.3;
pub const DEFAULT_SCALE: f64 = 0.3;
pub const PAN_LIMIT_DEG: f64 = 27.0;
pub const TILT_LIMIT_DEG: f64 = 24.0;
pub const HW_PAN_RANGE_DEG: f64 = 45.0;
pub const HW_TILT_RANGE_DEG: f64 = 40.0;

/// Yaw and pitch in degrees before clamping. Both coordinates are scaled by
/// `scale` first; then `θ = atan(x′ / (0.3·√(1 + y′²)))` and `φ = atan(y′)`.
pub fn gaze_angles(x_hat: f64, y_hat: f64, scale: f64) -> (f64, f64) {
    let (x, y) = (scale * x_hat, scale * y_hat);
    let theta = (x / (VIEW_DISTANCE_M * (1.0 + y * y).sqrt())).atan();
    (theta.to_degrees(), y.atan().to_degrees())
}

/// Eye command inside the pan/tilt caps.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GazeCommand {
    pub theta_deg: f64,
    pub phi_deg: f64,
}

pub fn clamp_command(theta_deg: f64, phi_deg: f64) -> GazeCommand {
    GazeCommand {
        theta_deg: theta_deg.clamp(-PAN_LIMIT_DEG, PAN_LIMIT_DEG),
        phi_deg: phi_deg.clamp(-TILT_LIMIT_DEG, TILT_LIMIT_DEG),
    }
}

pub const DEFAULT_DEAD_ZONE_DEG: f64 = 1.0;

/// Negative yaw is a left response; `|θ| ≤ dead_zone` is no response.
pub fn decide_side(command: &GazeCommand, dead_zone_deg: f64) -> Response {
    if command.theta_deg < -dead_zone_deg {
        Response::Left
    } else if command.theta_deg > dead_zone_deg {
        Response::Right
    } else {
        Response::NoResponse
    }
}

/// The full map-to-decision chain.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Actuation {
    pub peak: Peak,
    pub normalized: (f64, f64),
    pub command: GazeCommand,
    pub decision: Response,
}

pub fn actuate(map: &FixationDensityMap, scale: f64, dead_zone_deg: f64) -> Actuation {
    let peak = fdm_peak(map);
    let normalized = peak_to_normalized(peak, map);
    let (theta, phi) = gaze_angles(normalized.0, normalized.1, scale);
    let command = clamp_command(theta, phi);
    let decision = if peak.degenerate {
        Response::NoResponse
    } else {
        decide_side(&command, dead_zone_deg)
    };
    Actuation {
        peak,
        normalized,
        command,
        decision,
    }
}

pub const GAZE_CSV_HEADER: [&str; 5] = ["trial_id", "theta_deg", "phi_deg", "decision", "degenerate_flag"];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GazeTraceRow {
    pub trial_id: u32,
    pub command: GazeCommand,
    pub decision: Response,
    pub degenerate: bool,
}

pub fn write_gaze_trace<W: Write>(rows: &[GazeTraceRow], w: W) -> Result<(), ActuationError> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(GAZE_CSV_HEADER)?;
    for r in rows {
        wtr.write_record([
            r.trial_id.to_string(),
            format!("{:.6}", r.command.theta_deg),
            format!("{:.6}", r.command.phi_deg),
            r.decision.code().to_string(),
            u8::from(r.degenerate).to_string(),
        ])?;
    }
    wtr.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn map_with(w: usize, h: usize, points: &[(usize, usize, f64)]) -> FixationDensityMap {
        let mut v = vec![0.0; w * h];
        for &(x, y, val) in points {
            v[y * w + x] = val;
        }
        FixationDensityMap::new(w, h, v).unwrap()
    }

    #[test]
    fn peak_examples() {
        assert_eq!(fdm_peak(&map_with(10, 10, &[(5, 7, 1.0)])), Peak { x: 5, y: 7, degenerate: false });
        assert_eq!(
            fdm_peak(&map_with(4, 4, &[(1, 1, 2.0), (2, 2, 2.0)])),
            Peak { x: 1, y: 1, degenerate: false }
        );
        let uniform = FixationDensityMap::new(3, 3, vec![0.5; 9]).unwrap();
        assert_eq!(fdm_peak(&uniform), Peak { x: 0, y: 0, degenerate: true });
    }

    #[test]
    fn normalization_examples() {
        assert_eq!(normalize_peak(160.0, 100.0, 320, 200).unwrap(), (0.0, 0.0));
        assert_eq!(normalize_peak(0.0, 0.0, 320, 200).unwrap(), (-1.0, -1.0));
        assert_eq!(normalize_peak(240.0, 150.0, 320, 200).unwrap(), (0.5, 0.5));
        assert!(normalize_peak(321.0, 0.0, 320, 200).is_err());
        assert!(normalize_peak(-0.5, 0.0, 320, 200).is_err());
    }

    #[test]
    fn angle_examples() {
        assert_eq!(gaze_angles(0.0, 0.0, 0.3), (0.0, 0.0));
        let (t, _) = gaze_angles(1.0, 0.0, 0.3);
        assert!((t - 45.0).abs() < 1e-12);
        let (_, p) = gaze_angles(0.0, 1.0, 0.3);
        assert!((p - 0.3f64.atan().to_degrees()).abs() < 1e-12);
        assert!((p - 16.70).abs() < 5e-3);
    }

    #[test]
    fn clamp_and_decide() {
        assert_eq!(clamp_command(45.0, 0.0), GazeCommand { theta_deg: 27.0, phi_deg: 0.0 });
        assert_eq!(clamp_command(10.0, -10.0), GazeCommand { theta_deg: 10.0, phi_deg: -10.0 });
        assert_eq!(clamp_command(-45.0, 30.0), GazeCommand { theta_deg: -27.0, phi_deg: 24.0 });
        let d = |t| decide_side(&GazeCommand { theta_deg: t, phi_deg: 0.0 }, 1.0);
        assert_eq!(d(-20.0), Response::Left);
        assert_eq!(d(0.5), Response::NoResponse);
        assert_eq!(d(27.0), Response::Right);
    }

    #[test]
    fn mirrored_map_flips_decision() {
        let m = map_with(32, 20, &[(3, 9, 1.0)]);
        let a = actuate(&m, DEFAULT_SCALE, 1.0);
        let b = actuate(&m.mirrored(), DEFAULT_SCALE, 1.0);
        assert_eq!(a.decision, Response::Left);
        assert_eq!(b.decision, Response::Right);
        assert_eq!(a.command.theta_deg, -b.command.theta_deg);
    }

    #[test]
    fn invalid_maps() {
        assert!(FixationDensityMap::new(1, 5, vec![0.0; 5]).is_err());
        assert!(FixationDensityMap::new(2, 2, vec![0.0, -1.0, 0.0, 0.0]).is_err());
        assert!(FixationDensityMap::new(2, 2, vec![0.0; 3]).is_err());
    }
}
