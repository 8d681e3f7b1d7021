use super::HarnessError;
use crate::fusion::{CaptureNoise, FusionConfig, FusionDatasetConfig};
use crate::kv::KvMap;
use crate::numerics::TrainConfig;
use crate::protocol::ProtocolConfig;
use crate::ssl::{SslConfig, SslDatasetConfig};
use crate::stimulus::AudioDegradation;

/// Robot sessions simulated by default, one per seed.
pub const DEFAULT_SESSIONS: usize = 37;

/// Everything a run depends on besides its seed. Read from `key=value`
/// files; absent keys keep their defaults.
#[derive(Debug, Clone, PartialEq)]
pub struct HarnessConfig {
    pub protocol: ProtocolConfig,
    pub ssl: SslConfig,
    pub ssl_data: SslDatasetConfig,
    pub ssl_val_trials: usize,
    pub ssl_train: TrainConfig,
    pub fusion: FusionConfig,
    pub fusion_data: FusionDatasetConfig,
    pub fusion_val_trials: usize,
    pub fusion_train: TrainConfig,
    /// Capture noise of simulated sessions; fusion training uses it too.
    pub noise: CaptureNoise,
    pub sessions: usize,
}

/// Robot capture noise. At this level the trained stack localizes most
/// targets from sound, yet an incongruent cue still pulls it off target.
fn calibrated_noise() -> CaptureNoise {
    CaptureNoise {
        cue_sigma: 0.05,
        audio: AudioDegradation {
            snr_db: Some(20.0),
            gain_jitter_db: 6.0,
        },
    }
}

impl Default for HarnessConfig {
    fn default() -> Self {
        let noise = calibrated_noise();
        Self {
            protocol: ProtocolConfig::default(),
            ssl: SslConfig::default(),
            ssl_data: SslDatasetConfig::default(),
            ssl_val_trials: 100,
            ssl_train: TrainConfig::ssl_default(0),
            fusion: FusionConfig::default(),
            fusion_data: FusionDatasetConfig {
                noise,
                ..FusionDatasetConfig::default()
            },
            fusion_val_trials: 100,
            fusion_train: TrainConfig::fusion_default(0),
            noise,
            sessions: DEFAULT_SESSIONS,
        }
    }
}

fn read_snr(kv: &KvMap, key: &str, slot: &mut Option<f64>) -> Result<(), HarnessError> {
    match kv.get_str(key) {
        None => {}
        Some("none") => *slot = None,
        Some(_) => {
            let mut v = 0.0;
            kv.read(key, &mut v)?;
            *slot = Some(v);
        }
    }
    Ok(())
}

impl HarnessConfig {
    pub fn from_kv(kv: &KvMap) -> Result<Self, HarnessError> {
        let mut c = Self {
            protocol: ProtocolConfig::from_kv(kv)?,
            ..Self::default()
        };
        kv.read("ssl.trials", &mut c.ssl_data.trials)?;
        kv.read("ssl.val_trials", &mut c.ssl_val_trials)?;
        kv.read("ssl.noise_sigma", &mut c.ssl_data.noise_sigma)?;
        read_snr(kv, "ssl.snr_db", &mut c.ssl_data.audio.snr_db)?;
        kv.read("ssl.epochs", &mut c.ssl_train.epochs)?;
        kv.read("ssl.batch", &mut c.ssl_train.batch)?;
        kv.read("ssl.lr", &mut c.ssl_train.lr)?;
        kv.read("fusion.tau", &mut c.fusion.tau)?;
        kv.read("fusion.trials", &mut c.fusion_data.trials)?;
        kv.read("fusion.val_trials", &mut c.fusion_val_trials)?;
        kv.read("fusion.cue_validity", &mut c.fusion_data.cue_validity)?;
        kv.read("fusion.neutral_fraction", &mut c.fusion_data.neutral_fraction)?;
        kv.read("fusion.epochs", &mut c.fusion_train.epochs)?;
        kv.read("fusion.batch", &mut c.fusion_train.batch)?;
        kv.read("fusion.lr", &mut c.fusion_train.lr)?;
        kv.read("noise.cue_sigma", &mut c.noise.cue_sigma)?;
        read_snr(kv, "noise.snr_db", &mut c.noise.audio.snr_db)?;
        kv.read("noise.gain_jitter_db", &mut c.noise.audio.gain_jitter_db)?;
        kv.read("simulate.sessions", &mut c.sessions)?;
        c.fusion_data.noise = c.noise;
        c.validate()?;
        Ok(c)
    }

    pub fn parse(text: &str) -> Result<Self, HarnessError> {
        Self::from_kv(&KvMap::parse(text)?)
    }

    pub fn to_kv(&self) -> KvMap {
        let mut kv = KvMap::default();
        self.protocol.to_kv(&mut kv);
        kv.insert("ssl.trials", self.ssl_data.trials);
        kv.insert("ssl.val_trials", self.ssl_val_trials);
        kv.insert("ssl.noise_sigma", self.ssl_data.noise_sigma);
        kv.insert("ssl.snr_db", self.ssl_data.audio.snr_db.map_or("none".to_string(), |v| v.to_string()));
        kv.insert("ssl.epochs", self.ssl_train.epochs);
        kv.insert("ssl.batch", self.ssl_train.batch);
        kv.insert("ssl.lr", self.ssl_train.lr);
        kv.insert("fusion.tau", self.fusion.tau);
        kv.insert("fusion.trials", self.fusion_data.trials);
        kv.insert("fusion.val_trials", self.fusion_val_trials);
        kv.insert("fusion.cue_validity", self.fusion_data.cue_validity);
        kv.insert("fusion.neutral_fraction", self.fusion_data.neutral_fraction);
        kv.insert("fusion.epochs", self.fusion_train.epochs);
        kv.insert("fusion.batch", self.fusion_train.batch);
        kv.insert("fusion.lr", self.fusion_train.lr);
        kv.insert("noise.cue_sigma", self.noise.cue_sigma);
        kv.insert(
            "noise.snr_db",
            self.noise.audio.snr_db.map_or("none".to_string(), |v| v.to_string()),
        );
        kv.insert("noise.gain_jitter_db", self.noise.audio.gain_jitter_db);
        kv.insert("simulate.sessions", self.sessions);
        kv
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: String| Err(HarnessError::BadRequest(m));
        if self.ssl_data.trials == 0 || self.fusion_data.trials == 0 {
            return bad("training sets must not be empty".into());
        }
        if self.ssl_train.batch == 0 || self.fusion_train.batch == 0 {
            return bad("batch sizes must be positive".into());
        }
        if !(self.ssl_train.lr > 0.0 && self.fusion_train.lr > 0.0) {
            return bad("learning rates must be positive".into());
        }
        if !(self.fusion.tau > 0.0 && self.fusion.tau.is_finite()) {
            return bad(format!("fusion.tau must be positive, got {}", self.fusion.tau));
        }
        for (k, v) in [
            ("fusion.cue_validity", self.fusion_data.cue_validity),
            ("fusion.neutral_fraction", self.fusion_data.neutral_fraction),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return bad(format!("{k} must lie in [0, 1], got {v}"));
            }
        }
        if !(self.noise.cue_sigma >= 0.0 && self.noise.audio.gain_jitter_db >= 0.0 && self.ssl_data.noise_sigma >= 0.0) {
            return bad("noise levels must be nonnegative".into());
        }
        if self.sessions == 0 {
            return bad("simulate.sessions must be positive".into());
        }
        Ok(())
    }

    /// Session seeds `base, base + 1, ...`.
    pub fn session_seeds(&self, base: u64) -> Vec<u64> {
        (0..self.sessions as u64).map(|i| base + i).collect()
    }
}
