//! Gaze-cueing trial protocol: balanced, seeded session and practice plans.
//!
//! A trial is a fixation cross (100/200/300 ms), a 400 ms gaze cue from the
//! central avatar, a 700 ms lateralized auditory target and a second
//! fixation (700/800/900 ms). A formal session holds 288 trials in 4 blocks
//! of 72; every block contains 24 trials of each congruence condition, and
//! each condition splits its 96 trials into 48 left and 48 right targets.

use std::collections::BTreeSet;
use std::fmt;
use std::io::{Read, Write};

use rand::seq::{IndexedRandom, SliceRandom};
use serde::{Deserialize, Serialize};

use crate::analysis::ResponseRecord;
use crate::kv::{KvError, KvMap};
use crate::rng::{self, tag};

#[derive(Debug, thiserror::Error)]
pub enum ProtocolError {
    #[error("invalid protocol configuration: {0}")]
    Config(String),
    #[error("practice incomplete: no response for trial(s) {missing:?}")]
    IncompletePractice { missing: Vec<u32> },
    #[error("duplicate response for practice trial {0}")]
    DuplicateResponse(u32),
    #[error("plan CSV: {0}")]
    Csv(String),
    #[error(transparent)]
    Kv(#[from] KvError),
}

impl From<csv::Error> for ProtocolError {
    fn from(e: csv::Error) -> Self {
        ProtocolError::Csv(e.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    Left,
    Right,
}

impl Side {
    pub fn opposite(self) -> Side {
        match self {
            Side::Left => Side::Right,
            Side::Right => Side::Left,
        }
    }

    pub fn code(self) -> &'static str {
        match self {
            Side::Left => "L",
            Side::Right => "R",
        }
    }

    pub fn from_code(s: &str) -> Option<Side> {
        match s {
            "L" => Some(Side::Left),
            "R" => Some(Side::Right),
            _ => None,
        }
    }

    /// -1 for left, +1 for right.
    pub fn sign(self) -> f64 {
        match self {
            Side::Left => -1.0,
            Side::Right => 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CueDirection {
    Left,
    Right,
    Center,
}

impl CueDirection {
    pub fn code(self) -> &'static str {
        match self {
            CueDirection::Left => "L",
            CueDirection::Right => "R",
            CueDirection::Center => "C",
        }
    }

    pub fn from_code(s: &str) -> Option<CueDirection> {
        match s {
            "L" => Some(CueDirection::Left),
            "R" => Some(CueDirection::Right),
            "C" => Some(CueDirection::Center),
            _ => None,
        }
    }

    pub fn side(self) -> Option<Side> {
        match self {
            CueDirection::Left => Some(Side::Left),
            CueDirection::Right => Some(Side::Right),
            CueDirection::Center => None,
        }
    }

    pub fn mirrored(self) -> CueDirection {
        match self {
            CueDirection::Left => CueDirection::Right,
            CueDirection::Right => CueDirection::Left,
            CueDirection::Center => CueDirection::Center,
        }
    }
}

impl From<Side> for CueDirection {
    fn from(s: Side) -> Self {
        match s {
            Side::Left => CueDirection::Left,
            Side::Right => CueDirection::Right,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Congruence {
    Congruent,
    Incongruent,
    Neutral,
}

impl Congruence {
    pub const ALL: [Congruence; 3] = [
        Congruence::Congruent,
        Congruence::Incongruent,
        Congruence::Neutral,
    ];

    pub fn of(cue: CueDirection, target: Side) -> Congruence {
        match cue.side() {
            None => Congruence::Neutral,
            Some(s) if s == target => Congruence::Congruent,
            Some(_) => Congruence::Incongruent,
        }
    }

    /// The cue direction that realizes this condition for `target`.
    pub fn cue_for(self, target: Side) -> CueDirection {
        match self {
            Congruence::Congruent => target.into(),
            Congruence::Incongruent => target.opposite().into(),
            Congruence::Neutral => CueDirection::Center,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Congruence::Congruent => "congruent",
            Congruence::Incongruent => "incongruent",
            Congruence::Neutral => "neutral",
        }
    }

    pub fn from_name(s: &str) -> Option<Congruence> {
        match s {
            "congruent" => Some(Congruence::Congruent),
            "incongruent" => Some(Congruence::Incongruent),
            "neutral" => Some(Congruence::Neutral),
            _ => None,
        }
    }

    pub fn index(self) -> usize {
        match self {
            Congruence::Congruent => 0,
            Congruence::Incongruent => 1,
            Congruence::Neutral => 2,
        }
    }
}

impl fmt::Display for Congruence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TrialSpec {
    pub trial_id: u32,
    pub block: u8,
    pub cue_direction: CueDirection,
    pub target_side: Side,
    pub congruence: Congruence,
    pub fixation1_ms: u32,
    pub cue_ms: u32,
    pub target_ms: u32,
    pub fixation2_ms: u32,
}

impl TrialSpec {
    pub fn total_ms(&self) -> u32 {
        self.fixation1_ms + self.cue_ms + self.target_ms + self.fixation2_ms
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProtocolConfig {
    pub trials_per_condition: usize,
    pub blocks: usize,
    pub fixation1_ms: Vec<u32>,
    pub cue_ms: u32,
    pub target_ms: u32,
    pub fixation2_ms: Vec<u32>,
    pub practice_trials: usize,
    pub practice_threshold: f64,
}

impl Default for ProtocolConfig {
    fn default() -> Self {
        Self {
            trials_per_condition: 96,
            blocks: 4,
            fixation1_ms: vec![100, 200, 300],
            cue_ms: 400,
            target_ms: 700,
            fixation2_ms: vec![700, 800, 900],
            practice_trials: 30,
            practice_threshold: 0.90,
        }
    }
}

impl ProtocolConfig {
    /// Reads `protocol.*` keys, keeping defaults for anything absent.
    pub fn from_kv(kv: &KvMap) -> Result<Self, ProtocolError> {
        let mut c = Self::default();
        kv.read("protocol.trials_per_condition", &mut c.trials_per_condition)?;
        kv.read("protocol.blocks", &mut c.blocks)?;
        kv.read_list("protocol.fixation1_ms", &mut c.fixation1_ms)?;
        kv.read("protocol.cue_ms", &mut c.cue_ms)?;
        kv.read("protocol.target_ms", &mut c.target_ms)?;
        kv.read_list("protocol.fixation2_ms", &mut c.fixation2_ms)?;
        kv.read("protocol.practice_trials", &mut c.practice_trials)?;
        kv.read("protocol.practice_threshold", &mut c.practice_threshold)?;
        c.validate()?;
        Ok(c)
    }

    pub fn to_kv(&self, kv: &mut KvMap) {
        let join = |v: &[u32]| {
            v.iter()
                .map(u32::to_string)
                .collect::<Vec<_>>()
                .join(",")
        };
        kv.insert("protocol.trials_per_condition", self.trials_per_condition);
        kv.insert("protocol.blocks", self.blocks);
        kv.insert("protocol.fixation1_ms", join(&self.fixation1_ms));
        kv.insert("protocol.cue_ms", self.cue_ms);
        kv.insert("protocol.target_ms", self.target_ms);
        kv.insert("protocol.fixation2_ms", join(&self.fixation2_ms));
        kv.insert("protocol.practice_trials", self.practice_trials);
        kv.insert("protocol.practice_threshold", self.practice_threshold);
    }

    pub fn validate(&self) -> Result<(), ProtocolError> {
        if self.blocks == 0 || self.trials_per_condition == 0 {
            return Err(ProtocolError::Config(
                "blocks and trials_per_condition must be positive".into(),
            ));
        }
        if self.trials_per_condition % self.blocks != 0 {
            return Err(ProtocolError::Config(format!(
                "block balance: {} trials per condition cannot be split evenly over {} blocks",
                self.trials_per_condition, self.blocks
            )));
        }
        if self.trials_per_condition % 2 != 0 {
            return Err(ProtocolError::Config(format!(
                "side balance: {} trials per condition cannot be split evenly into left and right targets",
                self.trials_per_condition
            )));
        }
        if self.fixation1_ms.is_empty() || self.fixation2_ms.is_empty() {
            return Err(ProtocolError::Config(
                "fixation duration choices must not be empty".into(),
            ));
        }
        if self.practice_trials == 0 || self.practice_trials % 3 != 0 {
            return Err(ProtocolError::Config(format!(
                "practice balance: {} practice trials cannot be split evenly over 3 conditions",
                self.practice_trials
            )));
        }
        if !(0.0..=1.0).contains(&self.practice_threshold) {
            return Err(ProtocolError::Config(
                "practice_threshold must lie in [0, 1]".into(),
            ));
        }
        Ok(())
    }

    pub fn total_trials(&self) -> usize {
        3 * self.trials_per_condition
    }

    pub fn trials_per_block(&self) -> usize {
        self.total_trials() / self.blocks
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SessionPlan {
    pub seed: u64,
    pub trials: Vec<TrialSpec>,
    pub blocks: usize,
}

impl SessionPlan {
    /// True when a rest screen follows the trial at `index`.
    pub fn rest_after(&self, index: usize) -> bool {
        match (self.trials.get(index), self.trials.get(index + 1)) {
            (Some(a), Some(b)) => a.block != b.block,
            (Some(_), None) => true,
            _ => false,
        }
    }

    pub fn block(&self, b: u8) -> impl Iterator<Item = &TrialSpec> {
        self.trials.iter().filter(move |t| t.block == b)
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<(), ProtocolError> {
        write_trials_csv(&self.trials, w)
    }

    pub fn read_csv<R: Read>(seed: u64, r: R) -> Result<Self, ProtocolError> {
        let trials = read_trials_csv(r)?;
        let blocks = trials
            .iter()
            .map(|t| t.block)
            .collect::<BTreeSet<_>>()
            .len();
        Ok(Self {
            seed,
            trials,
            blocks,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PracticePlan {
    pub seed: u64,
    pub trials: Vec<TrialSpec>,
    pub pass_threshold: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GateOutcome {
    pub pass: bool,
    pub accuracy: f64,
}

fn pick_fixations(config: &ProtocolConfig, rng: &mut rng::SeededRng) -> (u32, u32) {
    let f1 = *config.fixation1_ms.choose(rng).expect("validated non-empty");
    let f2 = *config.fixation2_ms.choose(rng).expect("validated non-empty");
    (f1, f2)
}

fn make_trial(
    trial_id: u32,
    block: u8,
    condition: Congruence,
    target: Side,
    config: &ProtocolConfig,
    rng: &mut rng::SeededRng,
) -> TrialSpec {
    let (f1, f2) = pick_fixations(config, rng);
    TrialSpec {
        trial_id,
        block,
        cue_direction: condition.cue_for(target),
        target_side: target,
        congruence: condition,
        fixation1_ms: f1,
        cue_ms: config.cue_ms,
        target_ms: config.target_ms,
        fixation2_ms: f2,
    }
}

/// Builds a balanced formal session.
///
/// Each condition's targets (half left, half right) are shuffled and dealt
/// evenly into the blocks; each block is then shuffled as a whole.
pub fn generate_session(seed: u64, config: &ProtocolConfig) -> Result<SessionPlan, ProtocolError> {
    config.validate()?;
    let mut rng = rng::stream(seed, &[tag::SESSION]);
    let per_block = config.trials_per_condition / config.blocks;
    let mut blocks: Vec<Vec<(Congruence, Side)>> = vec![Vec::new(); config.blocks];
    for condition in Congruence::ALL {
        let half = config.trials_per_condition / 2;
        let mut targets: Vec<Side> = std::iter::repeat_n(Side::Left, half)
            .chain(std::iter::repeat_n(Side::Right, half))
            .collect();
        targets.shuffle(&mut rng);
        for (b, chunk) in targets.chunks(per_block).enumerate() {
            blocks[b].extend(chunk.iter().map(|&s| (condition, s)));
        }
    }
    let mut trials = Vec::with_capacity(config.total_trials());
    for (b, mut cells) in blocks.into_iter().enumerate() {
        cells.shuffle(&mut rng);
        for (condition, target) in cells {
            let id = trials.len() as u32;
            trials.push(make_trial(id, b as u8, condition, target, config, &mut rng));
        }
    }
    Ok(SessionPlan {
        seed,
        trials,
        blocks: config.blocks,
    })
}

/// Builds the practice set: an equal share per condition, sides alternating
/// within each condition before shuffling.
pub fn generate_practice(seed: u64, config: &ProtocolConfig) -> Result<PracticePlan, ProtocolError> {
    config.validate()?;
    let mut rng = rng::stream(seed, &[tag::PRACTICE]);
    let per_condition = config.practice_trials / 3;
    let mut cells = Vec::with_capacity(config.practice_trials);
    for condition in Congruence::ALL {
        for i in 0..per_condition {
            let side = if i % 2 == 0 { Side::Left } else { Side::Right };
            cells.push((condition, side));
        }
    }
    cells.shuffle(&mut rng);
    let trials = cells
        .into_iter()
        .enumerate()
        .map(|(i, (c, s))| make_trial(i as u32, 0, c, s, config, &mut rng))
        .collect();
    Ok(PracticePlan {
        seed,
        trials,
        pass_threshold: config.practice_threshold,
    })
}

/// Scores a completed practice run against the plan's threshold.
pub fn check_practice_gate(
    plan: &PracticePlan,
    responses: &[ResponseRecord],
) -> Result<GateOutcome, ProtocolError> {
    let mut seen = BTreeSet::new();
    let mut correct = 0usize;
    for r in responses {
        if !seen.insert(r.trial_id) {
            return Err(ProtocolError::DuplicateResponse(r.trial_id));
        }
        if r.correct {
            correct += 1;
        }
    }
    let missing: Vec<u32> = plan
        .trials
        .iter()
        .map(|t| t.trial_id)
        .filter(|id| !seen.contains(id))
        .collect();
    if !missing.is_empty() {
        return Err(ProtocolError::IncompletePractice { missing });
    }
    let accuracy = correct as f64 / plan.trials.len() as f64;
    Ok(GateOutcome {
        pass: accuracy >= plan.pass_threshold,
        accuracy,
    })
}

pub const PLAN_CSV_HEADER: [&str; 9] = [
    "trial_id",
    "block",
    "cue",
    "target",
    "congruence",
    "fix1_ms",
    "cue_ms",
    "target_ms",
    "fix2_ms",
];

pub fn write_trials_csv<W: Write>(trials: &[TrialSpec], w: W) -> Result<(), ProtocolError> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(PLAN_CSV_HEADER)?;
    for t in trials {
        wtr.write_record([
            t.trial_id.to_string(),
            t.block.to_string(),
            t.cue_direction.code().to_string(),
            t.target_side.code().to_string(),
            t.congruence.name().to_string(),
            t.fixation1_ms.to_string(),
            t.cue_ms.to_string(),
            t.target_ms.to_string(),
            t.fixation2_ms.to_string(),
        ])?;
    }
    wtr.flush().map_err(|e| ProtocolError::Csv(e.to_string()))?;
    Ok(())
}

pub fn read_trials_csv<R: Read>(r: R) -> Result<Vec<TrialSpec>, ProtocolError> {
    let mut rdr = csv::Reader::from_reader(r);
    let header = rdr.headers()?.clone();
    if header.iter().ne(PLAN_CSV_HEADER.iter().copied()) {
        return Err(ProtocolError::Csv(format!(
            "unexpected header {:?}",
            header.iter().collect::<Vec<_>>()
        )));
    }
    let mut trials = Vec::new();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let bad = |what: &str| ProtocolError::Csv(format!("row {}: bad {what}", line + 1));
        let num = |i: usize, what: &str| -> Result<u32, ProtocolError> {
            rec[i].parse().map_err(|_| bad(what))
        };
        let cue = CueDirection::from_code(&rec[2]).ok_or_else(|| bad("cue"))?;
        let target = Side::from_code(&rec[3]).ok_or_else(|| bad("target"))?;
        let congruence = Congruence::from_name(&rec[4]).ok_or_else(|| bad("congruence"))?;
        if congruence != Congruence::of(cue, target) {
            return Err(bad("congruence (inconsistent with cue/target)"));
        }
        trials.push(TrialSpec {
            trial_id: num(0, "trial_id")?,
            block: rec[1].parse().map_err(|_| bad("block"))?,
            cue_direction: cue,
            target_side: target,
            congruence,
            fixation1_ms: num(5, "fix1_ms")?,
            cue_ms: num(6, "cue_ms")?,
            target_ms: num(7, "target_ms")?,
            fixation2_ms: num(8, "fix2_ms")?,
        });
    }
    Ok(trials)
}
