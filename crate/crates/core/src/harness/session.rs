use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::analysis::{write_records_csv, Agent, Response, ResponseRecord};
use crate::protocol::{
    check_practice_gate, generate_practice, generate_session, Congruence, CueDirection, PracticePlan, ProtocolConfig,
    SessionPlan, Side, TrialSpec,
};
use crate::rng::{self, tag};
use crate::stimulus::{render_target_audio, wav_bytes};

/// Wall-clock source in integer microseconds; injectable for tests.
pub type Clock = Arc<dyn Fn() -> i64 + Send + Sync>;

/// Sample rate of served target audio.
const AUDIO_RATE: u32 = 44_100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Practice,
    Formal,
    Done,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CreateSession {
    pub participant_id: String,
    #[serde(default)]
    pub seed: Option<u64>,
}

/// The practice plan as announced at creation: its size and pass mark only,
/// so no trial condition is visible before that trial starts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionCreated {
    pub session_id: String,
    pub participant_id: String,
    pub phase: Phase,
    pub practice_trials: usize,
    pub practice_threshold: f64,
    pub formal_trials: usize,
}

/// One trial as the runner needs it; durations in microseconds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialDescriptor {
    pub session_id: String,
    pub phase: Phase,
    /// Position within the phase, from 0.
    pub index: usize,
    pub total: usize,
    pub trial_id: u32,
    pub block: u8,
    pub cue_direction: CueDirection,
    pub target_side: Side,
    pub congruence: Congruence,
    pub fixation1_us: u64,
    pub cue_us: u64,
    pub target_us: u64,
    pub fixation2_us: u64,
    /// Audio onset from trial start.
    pub audio_onset_us: u64,
    /// A rest screen precedes this trial.
    pub rest_before: bool,
    pub audio_url: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResponseSubmission {
    pub trial_id: u32,
    pub response: Response,
    /// Keypress minus audio onset, measured by the client.
    #[serde(default)]
    pub rt_us: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResponseAck {
    pub trial_id: u32,
    pub correct: bool,
    /// Server receipt time; audit only, never used as RT.
    pub received_at_us: i64,
    pub phase: Phase,
    pub remaining: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdvanceOutcome {
    pub pass: bool,
    pub accuracy: f64,
    pub phase: Phase,
    pub practice_attempts: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionStatus {
    pub session_id: String,
    pub participant_id: String,
    pub phase: Phase,
    pub next_index: usize,
    pub formal_responses: usize,
    pub practice_attempts: u32,
    pub receipts_us: Vec<i64>,
}

#[derive(Debug, Clone)]
struct SessionState {
    participant_id: String,
    seed: u64,
    practice: PracticePlan,
    plan: SessionPlan,
    phase: Phase,
    next: usize,
    attempts: u32,
    practice_responses: Vec<ResponseRecord>,
    responses: Vec<ResponseRecord>,
    receipts_us: Vec<i64>,
}

impl SessionState {
    fn trials(&self) -> &[TrialSpec] {
        match self.phase {
            Phase::Practice => &self.practice.trials,
            Phase::Formal | Phase::Done => &self.plan.trials,
        }
    }

    fn current(&self) -> Option<&TrialSpec> {
        match self.phase {
            Phase::Done => None,
            _ => self.trials().get(self.next),
        }
    }
}

/// In-memory sessions. Callers serialize access; every method leaves the
/// state consistent on error.
pub struct SessionService {
    protocol: ProtocolConfig,
    base_seed: u64,
    clock: Clock,
    counter: u64,
    sessions: BTreeMap<String, SessionState>,
}

fn wall_clock_us() -> i64 {
    chrono::Utc::now().timestamp_micros()
}

fn us(ms: u32) -> u64 {
    ms as u64 * 1000
}

impl SessionService {
    pub fn new(protocol: ProtocolConfig, base_seed: u64) -> Result<Self, HarnessError> {
        Self::with_clock(protocol, base_seed, Arc::new(wall_clock_us))
    }

    pub fn with_clock(protocol: ProtocolConfig, base_seed: u64, clock: Clock) -> Result<Self, HarnessError> {
        protocol.validate()?;
        Ok(Self {
            protocol,
            base_seed,
            clock,
            counter: 0,
            sessions: BTreeMap::new(),
        })
    }

    fn get(&self, id: &str) -> Result<&SessionState, HarnessError> {
        self.sessions.get(id).ok_or_else(|| HarnessError::NotFound(id.to_string()))
    }

    fn get_mut(&mut self, id: &str) -> Result<&mut SessionState, HarnessError> {
        self.sessions.get_mut(id).ok_or_else(|| HarnessError::NotFound(id.to_string()))
    }

    pub fn create(&mut self, req: &CreateSession) -> Result<SessionCreated, HarnessError> {
        let pid = req.participant_id.trim();
        if pid.is_empty() || pid.contains([',', '"', '\n', '\r']) {
            return Err(HarnessError::BadRequest(format!("participant id {:?}", req.participant_id)));
        }
        if self.sessions.values().any(|s| s.participant_id == pid && s.phase != Phase::Done) {
            return Err(HarnessError::Conflict(format!("participant `{pid}` already has an active session")));
        }
        self.counter += 1;
        let seed = req
            .seed
            .unwrap_or_else(|| rng::derive_seed(self.base_seed, &[tag::SESSION, self.counter]));
        let id = format!("s{:04}-{:08x}", self.counter, seed as u32);
        let state = SessionState {
            participant_id: pid.to_string(),
            seed,
            practice: generate_practice(seed, &self.protocol)?,
            plan: generate_session(seed, &self.protocol)?,
            phase: Phase::Practice,
            next: 0,
            attempts: 1,
            practice_responses: Vec::new(),
            responses: Vec::new(),
            receipts_us: Vec::new(),
        };
        let created = SessionCreated {
            session_id: id.clone(),
            participant_id: state.participant_id.clone(),
            phase: state.phase,
            practice_trials: state.practice.trials.len(),
            practice_threshold: state.practice.pass_threshold,
            formal_trials: state.plan.trials.len(),
        };
        self.sessions.insert(id, state);
        Ok(created)
    }

    pub fn next_trial(&self, id: &str) -> Result<TrialDescriptor, HarnessError> {
        let s = self.get(id)?;
        let Some(t) = s.current() else {
            return Err(HarnessError::Conflict(match s.phase {
                Phase::Practice => "practice complete; advance to check the gate".into(),
                _ => "session complete".into(),
            }));
        };
        let rest_before = s.phase == Phase::Formal && s.next > 0 && s.plan.rest_after(s.next - 1);
        Ok(TrialDescriptor {
            session_id: id.to_string(),
            phase: s.phase,
            index: s.next,
            total: s.trials().len(),
            trial_id: t.trial_id,
            block: t.block,
            cue_direction: t.cue_direction,
            target_side: t.target_side,
            congruence: t.congruence,
            fixation1_us: us(t.fixation1_ms),
            cue_us: us(t.cue_ms),
            target_us: us(t.target_ms),
            fixation2_us: us(t.fixation2_ms),
            audio_onset_us: us(t.fixation1_ms + t.cue_ms),
            rest_before,
            audio_url: format!("/sessions/{id}/trials/{}/audio.wav", t.trial_id),
        })
    }

    /// Accepts a response for the current trial only.
    pub fn submit(&mut self, id: &str, sub: &ResponseSubmission) -> Result<ResponseAck, HarnessError> {
        let now = (self.clock)();
        let s = self.get_mut(id)?;
        let Some(t) = s.current().copied() else {
            return Err(HarnessError::Conflict("no trial is awaiting a response".into()));
        };
        if sub.trial_id != t.trial_id {
            return Err(HarnessError::Conflict(format!(
                "response for trial {} but trial {} is current",
                sub.trial_id, t.trial_id
            )));
        }
        let rt_ms = match (sub.response, sub.rt_us) {
            (Response::NoResponse, _) => None,
            (_, Some(v)) => Some(v as f64 / 1000.0),
            (_, None) => return Err(HarnessError::BadRequest("a key response needs rt_us".into())),
        };
        let record = ResponseRecord::new(s.participant_id.clone(), Agent::Human, &t, sub.response, rt_ms);
        let correct = record.correct;
        match s.phase {
            Phase::Practice => s.practice_responses.push(record),
            _ => s.responses.push(record),
        }
        s.receipts_us.push(now);
        s.next += 1;
        if s.phase == Phase::Formal && s.next == s.plan.trials.len() {
            s.phase = Phase::Done;
        }
        let remaining = match s.phase {
            Phase::Done => 0,
            _ => s.trials().len() - s.next,
        };
        Ok(ResponseAck {
            trial_id: t.trial_id,
            correct,
            received_at_us: now,
            phase: s.phase,
            remaining,
        })
    }

    /// Scores a finished practice run. A pass opens the formal session; a
    /// failure starts a fresh practice run.
    pub fn advance(&mut self, id: &str) -> Result<AdvanceOutcome, HarnessError> {
        let protocol = self.protocol.clone();
        let s = self.get_mut(id)?;
        if s.phase != Phase::Practice {
            return Err(HarnessError::Conflict("session is past practice".into()));
        }
        if s.next < s.practice.trials.len() {
            return Err(HarnessError::Conflict(format!(
                "practice incomplete: {} of {} trials answered",
                s.next,
                s.practice.trials.len()
            )));
        }
        let gate = check_practice_gate(&s.practice, &s.practice_responses)?;
        if gate.pass {
            s.phase = Phase::Formal;
        } else {
            s.attempts += 1;
            let seed = rng::derive_seed(s.seed, &[tag::PRACTICE, s.attempts as u64]);
            s.practice = generate_practice(seed, &protocol)?;
            s.practice_responses.clear();
        }
        s.next = 0;
        Ok(AdvanceOutcome {
            pass: gate.pass,
            accuracy: gate.accuracy,
            phase: s.phase,
            practice_attempts: s.attempts,
        })
    }

    /// Formal responses so far in the analysis CSV schema.
    pub fn export_csv(&self, id: &str) -> Result<String, HarnessError> {
        let s = self.get(id)?;
        let mut buf = Vec::new();
        write_records_csv(&s.responses, &mut buf)?;
        Ok(String::from_utf8(buf).expect("CSV writer emits UTF-8"))
    }

    /// Target audio of the current trial as a WAV file.
    pub fn audio_wav(&self, id: &str, trial_id: u32) -> Result<Vec<u8>, HarnessError> {
        let s = self.get(id)?;
        let t = s
            .current()
            .filter(|t| t.trial_id == trial_id)
            .ok_or_else(|| HarnessError::Conflict(format!("trial {trial_id} is not the current trial")))?;
        let phase_tag = if s.phase == Phase::Practice { tag::PRACTICE } else { tag::SESSION };
        let seed = rng::derive_seed(s.seed, &[tag::AUDIO, phase_tag, s.attempts as u64, trial_id as u64]);
        Ok(wav_bytes(&render_target_audio(t.target_side, AUDIO_RATE, seed)?)?)
    }

    pub fn status(&self, id: &str) -> Result<SessionStatus, HarnessError> {
        let s = self.get(id)?;
        Ok(SessionStatus {
            session_id: id.to_string(),
            participant_id: s.participant_id.clone(),
            phase: s.phase,
            next_index: s.next,
            formal_responses: s.responses.len(),
            practice_attempts: s.attempts,
            receipts_us: s.receipts_us.clone(),
        })
    }
}
