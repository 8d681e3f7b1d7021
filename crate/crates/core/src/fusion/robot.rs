use rand::Rng;
use serde::{Deserialize, Serialize};

use super::model::{largmu_forward, FusionConfig, FusionModel};
use super::stack::{FeatureMapStack, StackEntry, CUE_WINDOW, SSL_WINDOW};
use super::FusionError;
use crate::actuation::{actuate, Actuation, FixationDensityMap, GazeTraceRow, DEFAULT_DEAD_ZONE_DEG, DEFAULT_SCALE};
use crate::analysis::{Agent, ResponseRecord};
use crate::numerics::ops::avg_pool;
use crate::numerics::Tensor;
use crate::protocol::{generate_session, Congruence, CueDirection, ProtocolConfig, Side, TrialSpec};
use crate::rng::{self, tag};
use crate::ssl::{scene_geometry, SslModel};
use crate::stimulus::capture::{capture_audio, chunk_start, scene_frames, window_indices, CAPTURE_FRAMES, CUE_FRAMES};
use crate::stimulus::{render_cue_frame, render_scene_frame, AudioConfig, AudioDegradation, CueChannel, SceneGeometry};

/// Sensor noise of the robot's capture.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CaptureNoise {
    /// SD of per-cell noise on the gaze cue maps.
    pub cue_sigma: f64,
    pub audio: AudioDegradation,
}

impl Default for CaptureNoise {
    fn default() -> Self {
        Self {
            cue_sigma: 0.05,
            audio: AudioDegradation::default(),
        }
    }
}

impl CaptureNoise {
    pub fn clean() -> Self {
        Self {
            cue_sigma: 0.0,
            audio: AudioDegradation::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct RobotModels {
    pub ssl: SslModel,
    pub fusion: FusionModel,
}

/// Fixation carried from one trial to the next, in output-map pixels.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct FixationState {
    pub prior: Option<(f64, f64)>,
}

/// Capture frame (1-based) each timestep ends with; the last timestep ends
/// the capture.
pub fn timestep_frames(timesteps: usize) -> Vec<usize> {
    (1..=timesteps).map(|t| t * CAPTURE_FRAMES / timesteps).collect()
}

fn max_normalized(mut t: Tensor) -> Tensor {
    let m = t.max();
    if m > 0.0 {
        t.scale(1.0 / m);
    }
    t
}

fn cue_index(c: CueDirection) -> usize {
    match c {
        CueDirection::Left => 0,
        CueDirection::Center => 1,
        CueDirection::Right => 2,
    }
}

/// Frames `start..start + len` of a `[1, M, T]` spectrogram.
fn time_slice(mel: &Tensor, start: usize, len: usize) -> Result<Tensor, FusionError> {
    let (m, frames) = (mel.dim(1), mel.dim(2));
    if start + len > frames {
        return Err(FusionError::Shape(format!(
            "spectrogram of {frames} frames has no slice {start}..{}",
            start + len
        )));
    }
    let mut data = Vec::with_capacity(m * len);
    for row in mel.data().chunks(frames) {
        data.extend_from_slice(&row[start..start + len]);
    }
    Ok(Tensor::new(vec![1, m, len], data)?)
}

/// Turns a trial's capture into the integrator's input. The video branch of
/// the SSL network sees noise-free frames, so its features are computed once
/// per cue direction and timestep.
#[derive(Debug, Clone)]
pub struct StackBuilder<'a> {
    ssl: &'a SslModel,
    fusion: FusionConfig,
    grid: SceneGeometry,
    frames: Vec<usize>,
    /// Indexed by cue, then timestep.
    vfeat: [Vec<Tensor>; 3],
    chunk_frames: usize,
}

impl<'a> StackBuilder<'a> {
    pub fn new(ssl: &'a SslModel, fusion: FusionConfig) -> Result<Self, FusionError> {
        let sc = &ssl.config;
        if (sc.out_h, sc.out_w) != (fusion.out_h, fusion.out_w) {
            return Err(FusionError::Config(format!(
                "SSL map {}x{} and fusion map {}x{} differ",
                sc.out_w, sc.out_h, fusion.out_w, fusion.out_h
            )));
        }
        if fusion.timesteps == 0 || fusion.timesteps > CAPTURE_FRAMES {
            return Err(FusionError::Config(format!(
                "{} timesteps over a {CAPTURE_FRAMES}-frame capture",
                fusion.timesteps
            )));
        }
        if sc.video_frames != SSL_WINDOW {
            return Err(FusionError::Config(format!(
                "SSL video window of {} frames, expected {SSL_WINDOW}",
                sc.video_frames
            )));
        }
        let full = scene_geometry(sc);
        let frames = timestep_frames(fusion.timesteps);
        let mut vfeat: [Vec<Tensor>; 3] = Default::default();
        for cue in [CueDirection::Left, CueDirection::Center, CueDirection::Right] {
            let all = scene_frames(&full, cue);
            vfeat[cue_index(cue)] = frames
                .iter()
                .map(|&f| {
                    let window: Vec<Tensor> = window_indices(f, SSL_WINDOW).into_iter().map(|i| all[i].clone()).collect();
                    Ok(ssl.video_forward(&ssl.video_input(&window)?)?.1)
                })
                .collect::<Result<_, FusionError>>()?;
        }
        let chunk_samples = sc.sample_rate as usize;
        let chunk_frames = ssl.frontend().frames_for(chunk_samples) & !1;
        Ok(Self {
            ssl,
            fusion,
            grid: full.downscaled(fusion.pool),
            frames,
            vfeat,
            chunk_frames,
        })
    }

    pub fn fusion_config(&self) -> &FusionConfig {
        &self.fusion
    }

    /// Stack of one trial. `prior` is in output-map pixels and is stamped
    /// into the first raw frame; `seed` fixes all capture noise.
    pub fn build(
        &self,
        cue: CueDirection,
        side: Side,
        prior: Option<(f64, f64)>,
        noise: &CaptureNoise,
        seed: u64,
    ) -> Result<FeatureMapStack, FusionError> {
        let sc = &self.ssl.config;
        let audio_cfg = AudioConfig {
            sample_rate: sc.sample_rate,
            ..AudioConfig::default()
        };
        let capture = capture_audio(side, &audio_cfg, &noise.audio, rng::derive_seed(seed, &[tag::AUDIO]))?;
        let front = self.ssl.frontend();
        let mel_l = front.compute(&capture.left)?;
        let mel_r = front.compute(&capture.right)?;

        let cue_maps = |channel: CueChannel| -> Vec<Tensor> {
            (0..CAPTURE_FRAMES)
                .map(|i| render_cue_frame(&self.grid, cue, channel, i, CAPTURE_FRAMES, noise.cue_sigma, seed))
                .collect()
        };
        let window_mean = |maps: &[Tensor], f: usize| {
            let idx = window_indices(f, CUE_WINDOW);
            let mut acc = Tensor::zeros(maps[0].shape());
            for i in &idx {
                acc.add_assign(&maps[*i]);
            }
            acc.scale(1.0 / idx.len() as f64);
            max_normalized(acc)
        };
        let ge = cue_maps(CueChannel::Ge);
        let gf = cue_maps(CueChannel::Gf);
        let pool = self.fusion.pool as f64;
        let marker = prior.map(|(x, y)| (x / pool, y / pool));

        let mut entries = Vec::with_capacity(self.frames.len());
        for (t, &f) in self.frames.iter().enumerate() {
            let start = chunk_start(f, sc.sample_rate, front.hop()) / front.hop();
            let left = time_slice(&mel_l, start, self.chunk_frames)?;
            let right = time_slice(&mel_r, start, self.chunk_frames)?;
            let map = self.ssl.map_from_features(&left, &right, &self.vfeat[cue_index(cue)][t])?;
            entries.push(StackEntry {
                raw: render_scene_frame(&self.grid, cue, f - 1, CUE_FRAMES, if t == 0 { marker } else { None }),
                ge: window_mean(&ge, f),
                gf: window_mean(&gf, f),
                ssl: max_normalized(avg_pool(&map, self.fusion.pool)?),
            });
        }
        FeatureMapStack::new(entries)
    }
}

/// Both trained models plus the capture noise they run under.
#[derive(Debug, Clone)]
pub struct RobotRunner<'a> {
    models: &'a RobotModels,
    builder: StackBuilder<'a>,
    pub noise: CaptureNoise,
}

/// Everything one robot trial produces.
#[derive(Debug, Clone, PartialEq)]
pub struct RobotTrialOutcome {
    pub fdm: FixationDensityMap,
    pub record: ResponseRecord,
    pub state: FixationState,
    pub actuation: Actuation,
}

impl<'a> RobotRunner<'a> {
    pub fn new(models: &'a RobotModels, noise: CaptureNoise) -> Result<Self, FusionError> {
        if !models.ssl.is_trained() {
            return Err(FusionError::Untrained("ssl"));
        }
        if !models.fusion.is_trained() {
            return Err(FusionError::Untrained("fusion"));
        }
        Ok(Self {
            models,
            builder: StackBuilder::new(&models.ssl, models.fusion.config)?,
            noise,
        })
    }

    pub fn builder(&self) -> &StackBuilder<'a> {
        &self.builder
    }
}

/// One trial: capture, integrate, actuate. The next state holds the center
/// of the map's peak cell.
pub fn run_robot_trial(
    runner: &RobotRunner<'_>,
    trial: &TrialSpec,
    state: &FixationState,
    participant_id: &str,
    seed: u64,
) -> Result<RobotTrialOutcome, FusionError> {
    let trial_seed = rng::derive_seed(seed, &[tag::TRIAL, trial.trial_id as u64]);
    let stack = runner
        .builder
        .build(trial.cue_direction, trial.target_side, state.prior, &runner.noise, trial_seed)?;
    let fdm = largmu_forward(&stack, &runner.models.fusion)?;
    let actuation = actuate(&fdm, DEFAULT_SCALE, DEFAULT_DEAD_ZONE_DEG);
    let record = ResponseRecord::new(participant_id, Agent::Robot, trial, actuation.decision, None);
    let state = FixationState {
        prior: Some((actuation.peak.x as f64 + 0.5, actuation.peak.y as f64 + 0.5)),
    };
    Ok(RobotTrialOutcome {
        fdm,
        record,
        state,
        actuation,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct RobotSession {
    pub seed: u64,
    pub records: Vec<ResponseRecord>,
    pub gaze: Vec<GazeTraceRow>,
}

pub fn robot_participant_id(seed: u64) -> String {
    format!("robot-{seed:03}")
}

/// A full session from `seed`; fixation carries over from trial to trial,
/// starting with none.
pub fn simulate_robot_session(
    runner: &RobotRunner<'_>,
    protocol: &ProtocolConfig,
    seed: u64,
) -> Result<RobotSession, FusionError> {
    let plan = generate_session(seed, protocol)?;
    let pid = robot_participant_id(seed);
    let mut state = FixationState::default();
    let mut records = Vec::with_capacity(plan.trials.len());
    let mut gaze = Vec::with_capacity(plan.trials.len());
    for trial in &plan.trials {
        let out = run_robot_trial(runner, trial, &state, &pid, seed)?;
        gaze.push(GazeTraceRow {
            trial_id: trial.trial_id,
            command: out.actuation.command,
            decision: out.actuation.decision,
            degenerate: out.actuation.peak.degenerate,
        });
        records.push(out.record);
        state = out.state;
    }
    Ok(RobotSession { seed, records, gaze })
}

/// Fusion training trials: the cue is neutral with probability
/// `neutral_fraction` and otherwise points at the target with probability
/// `cue_validity`. Each trial starts from no prior fixation or from one on
/// either outer avatar.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FusionDatasetConfig {
    pub trials: usize,
    pub cue_validity: f64,
    pub neutral_fraction: f64,
    pub noise: CaptureNoise,
}

impl Default for FusionDatasetConfig {
    fn default() -> Self {
        Self {
            trials: 300,
            cue_validity: 0.75,
            neutral_fraction: 1.0 / 3.0,
            noise: CaptureNoise::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct FusionSample {
    pub trial_id: u32,
    pub side: Side,
    pub congruence: Congruence,
    pub stack: FeatureMapStack,
}

/// Cue, target and prior of training trial `trial_id`.
pub fn draw_fusion_design(
    ds: &FusionDatasetConfig,
    geom: &SceneGeometry,
    seed: u64,
    trial_id: u32,
) -> (CueDirection, Side, Option<(f64, f64)>) {
    let mut r = rng::stream(seed, &[tag::DATASET, 0xF0, trial_id as u64]);
    let side = if r.random::<bool>() { Side::Left } else { Side::Right };
    let cue = if r.random::<f64>() < ds.neutral_fraction {
        CueDirection::Center
    } else if r.random::<f64>() < ds.cue_validity {
        Congruence::Congruent.cue_for(side)
    } else {
        Congruence::Incongruent.cue_for(side)
    };
    let prior = match r.random_range(0..3) {
        0 => None,
        1 => Some(geom.anchor_px(Side::Left.into())),
        _ => Some(geom.anchor_px(Side::Right.into())),
    };
    (cue, side, prior)
}

pub fn build_fusion_samples(
    builder: &StackBuilder<'_>,
    ds: &FusionDatasetConfig,
    seed: u64,
    first: u32,
    count: usize,
) -> Result<Vec<FusionSample>, FusionError> {
    let geom = scene_geometry(&builder.ssl.config);
    (first..first + count as u32)
        .map(|id| {
            let (cue, side, prior) = draw_fusion_design(ds, &geom, seed, id);
            let trial_seed = rng::derive_seed(seed, &[tag::TRIAL, id as u64]);
            Ok(FusionSample {
                trial_id: id,
                side,
                congruence: Congruence::of(cue, side),
                stack: builder.build(cue, side, prior, &ds.noise, trial_seed)?,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ssl::SslConfig;

    #[test]
    fn timesteps_end_every_third_frame() {
        assert_eq!(timestep_frames(10), [3, 6, 9, 12, 15, 18, 21, 24, 27, 30]);
        assert_eq!(timestep_frames(1), [30]);
    }

    #[test]
    fn sliced_spectrogram_matches_the_chunk() {
        use crate::stimulus::capture::audio_chunk;
        let ssl = SslModel::init(SslConfig::default(), 0).unwrap();
        let cfg = AudioConfig::default();
        let cap = capture_audio(Side::Left, &cfg, &AudioDegradation::default(), 3).unwrap();
        let front = ssl.frontend();
        let mel = front.compute(&cap.left).unwrap();
        for f in [3, 17, 30] {
            let chunk = audio_chunk(&cap, f, front.hop());
            let direct = ssl.audio_features(&chunk.left).unwrap();
            let start = chunk_start(f, cfg.sample_rate, front.hop()) / front.hop();
            let sliced = time_slice(&mel, start, direct.dim(2)).unwrap();
            assert!(direct.max_abs_diff(&sliced) < 1e-12, "frame {f}");
        }
    }

    #[test]
    fn stacks_are_valid_and_deterministic() {
        let ssl = SslModel::init(SslConfig::default(), 0).unwrap();
        let b = StackBuilder::new(&ssl, FusionConfig::default()).unwrap();
        let noise = CaptureNoise::default();
        let s1 = b.build(CueDirection::Left, Side::Right, Some((60.0, 90.0)), &noise, 5).unwrap();
        let s2 = b.build(CueDirection::Left, Side::Right, Some((60.0, 90.0)), &noise, 5).unwrap();
        assert_eq!(s1, s2);
        assert_eq!(s1.timesteps(), 10);
        assert_eq!(s1.grid(), (10, 16));
        let e = &s1.entries()[9];
        assert!((e.ge.max() - 1.0).abs() < 1e-12 && (e.ssl.max() - 1.0).abs() < 1e-12);
        // the left-cued gaze maps peak in the left half once the cue is done
        let peak = e.ge.data().iter().enumerate().fold((0, 0.0), |m, (i, v)| if *v > m.1 { (i, *v) } else { m });
        assert!(peak.0 % 16 < 8);
        let none = b.build(CueDirection::Left, Side::Right, None, &noise, 5).unwrap();
        assert_ne!(none.entries()[0].raw, s1.entries()[0].raw);
        assert_eq!(none.entries()[1].raw, s1.entries()[1].raw);
    }

    #[test]
    fn untrained_models_are_refused() {
        let models = RobotModels {
            ssl: SslModel::init(SslConfig::default(), 0).unwrap(),
            fusion: FusionModel::init(FusionConfig::default(), 0).unwrap(),
        };
        assert!(matches!(
            RobotRunner::new(&models, CaptureNoise::default()),
            Err(FusionError::Untrained("ssl"))
        ));
    }

    #[test]
    fn design_respects_the_neutral_fraction_and_validity() {
        let ds = FusionDatasetConfig::default();
        let geom = SceneGeometry::default();
        let mut counts = [0usize; 3];
        for id in 0..3000 {
            let (cue, side, _) = draw_fusion_design(&ds, &geom, 1, id);
            counts[Congruence::of(cue, side).index()] += 1;
        }
        let neutral = counts[Congruence::Neutral.index()] as f64 / 3000.0;
        let valid = counts[Congruence::Congruent.index()] as f64
            / (counts[Congruence::Congruent.index()] + counts[Congruence::Incongruent.index()]) as f64;
        assert!((neutral - 1.0 / 3.0).abs() < 0.03, "{counts:?}");
        assert!((valid - 0.75).abs() < 0.03, "{counts:?}");
    }
}
