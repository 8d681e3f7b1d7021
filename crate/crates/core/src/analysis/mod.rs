//! Behavioural statistics: response records, reaction-time exclusion,
//! repeated-measures ANOVA with Greenhouse–Geisser correction, Bonferroni
//! post hoc tests and the between-group comparison of SRC effects.
//!
//! Condition columns are always ordered congruent, incongruent, neutral.
//! The SRC effect is incongruent minus congruent, per participant.

mod report;
pub mod special;
mod stats;

use std::collections::BTreeMap;
use std::fmt;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::protocol::{Congruence, Side, TrialSpec};

pub use report::{analyze, AgentReport, AnalysisReport, MetricReport, REPORT_CSV_HEADER};
pub use stats::{
    bonferroni_pairwise, greenhouse_geisser_epsilon, independent_ttest, rm_anova_gg, AnovaResult, PairwiseResult,
    TTestResult,
};

#[derive(Debug, thiserror::Error)]
pub enum AnalysisError {
    #[error("empty input: {0}")]
    Empty(String),
    #[error("incomplete design: {0}")]
    IncompleteDesign(String),
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("response CSV line {line}: {detail}")]
    Schema { line: usize, detail: String },
    #[error("CSV: {0}")]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Agent {
    Human,
    Robot,
}

impl Agent {
    pub fn name(self) -> &'static str {
        match self {
            Agent::Human => "human",
            Agent::Robot => "robot",
        }
    }

    pub fn from_name(s: &str) -> Option<Agent> {
        match s {
            "human" => Some(Agent::Human),
            "robot" => Some(Agent::Robot),
            _ => None,
        }
    }
}

impl fmt::Display for Agent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Response {
    Left,
    Right,
    NoResponse,
}

impl Response {
    pub fn code(self) -> &'static str {
        match self {
            Response::Left => "L",
            Response::Right => "R",
            Response::NoResponse => "N",
        }
    }

    pub fn from_code(s: &str) -> Option<Response> {
        match s {
            "L" => Some(Response::Left),
            "R" => Some(Response::Right),
            "N" => Some(Response::NoResponse),
            _ => None,
        }
    }

    pub fn side(self) -> Option<Side> {
        match self {
            Response::Left => Some(Side::Left),
            Response::Right => Some(Side::Right),
            Response::NoResponse => None,
        }
    }
}

impl From<Side> for Response {
    fn from(s: Side) -> Self {
        match s {
            Side::Left => Response::Left,
            Side::Right => Response::Right,
        }
    }
}

/// One scored trial. `correct` always equals `response == target_side`, and
/// robot records never carry a reaction time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResponseRecord {
    pub participant_id: String,
    pub agent: Agent,
    pub trial_id: u32,
    pub block: u8,
    pub congruence: Congruence,
    pub target_side: Side,
    pub response: Response,
    pub correct: bool,
    pub rt_ms: Option<f64>,
}

impl ResponseRecord {
    /// Scores `response` against `trial`. Any `rt_ms` is dropped for robots.
    pub fn new(
        participant_id: impl Into<String>,
        agent: Agent,
        trial: &TrialSpec,
        response: Response,
        rt_ms: Option<f64>,
    ) -> Self {
        Self {
            participant_id: participant_id.into(),
            agent,
            trial_id: trial.trial_id,
            block: trial.block,
            congruence: trial.congruence,
            target_side: trial.target_side,
            response,
            correct: response.side() == Some(trial.target_side),
            rt_ms: if agent == Agent::Robot { None } else { rt_ms },
        }
    }

    fn validate(&self) -> Result<(), String> {
        if self.correct != (self.response.side() == Some(self.target_side)) {
            return Err("correct flag disagrees with response and target".into());
        }
        match (self.agent, self.rt_ms) {
            (Agent::Robot, Some(_)) => Err("robot records must leave rt_ms empty".into()),
            (_, Some(rt)) if !(rt.is_finite() && rt >= 0.0) => Err(format!("rt_ms {rt} is not a finite value ≥ 0")),
            _ => Ok(()),
        }
    }
}

pub const RESPONSE_CSV_HEADER: [&str; 9] = [
    "participant_id",
    "agent",
    "trial_id",
    "block",
    "congruence",
    "target",
    "response",
    "correct",
    "rt_ms",
];

pub fn write_records_csv<W: Write>(records: &[ResponseRecord], w: W) -> Result<(), AnalysisError> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(RESPONSE_CSV_HEADER)?;
    for r in records {
        wtr.write_record([
            r.participant_id.as_str(),
            r.agent.name(),
            &r.trial_id.to_string(),
            &r.block.to_string(),
            r.congruence.name(),
            r.target_side.code(),
            r.response.code(),
            if r.correct { "1" } else { "0" },
            &r.rt_ms.map(|v| v.to_string()).unwrap_or_default(),
        ])?;
    }
    wtr.flush()?;
    Ok(())
}

/// Parses and validates a response CSV. Line numbers in errors count the
/// header as line 1.
pub fn read_records_csv<R: Read>(r: R) -> Result<Vec<ResponseRecord>, AnalysisError> {
    let mut rdr = csv::Reader::from_reader(r);
    let header = rdr.headers()?.clone();
    if header.iter().ne(RESPONSE_CSV_HEADER.iter().copied()) {
        return Err(AnalysisError::Schema {
            line: 1,
            detail: format!("expected header {}", RESPONSE_CSV_HEADER.join(",")),
        });
    }
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let line = i + 2;
        let rec = rec?;
        let bad = |field: &str, value: &str| AnalysisError::Schema {
            line,
            detail: format!("invalid {field} `{value}`"),
        };
        let record = ResponseRecord {
            participant_id: rec[0].to_string(),
            agent: Agent::from_name(&rec[1]).ok_or_else(|| bad("agent", &rec[1]))?,
            trial_id: rec[2].parse().map_err(|_| bad("trial_id", &rec[2]))?,
            block: rec[3].parse().map_err(|_| bad("block", &rec[3]))?,
            congruence: Congruence::from_name(&rec[4]).ok_or_else(|| bad("congruence", &rec[4]))?,
            target_side: Side::from_code(&rec[5]).ok_or_else(|| bad("target", &rec[5]))?,
            response: Response::from_code(&rec[6]).ok_or_else(|| bad("response", &rec[6]))?,
            correct: match &rec[7] {
                "1" => true,
                "0" => false,
                v => return Err(bad("correct", v)),
            },
            rt_ms: match &rec[8] {
                "" => None,
                v => Some(v.parse().map_err(|_| bad("rt_ms", v))?),
            },
        };
        if record.participant_id.is_empty() {
            return Err(bad("participant_id", ""));
        }
        record.validate().map_err(|detail| AnalysisError::Schema { line, detail })?;
        out.push(record);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Rt,
    Er,
}

impl Metric {
    pub fn name(self) -> &'static str {
        match self {
            Metric::Rt => "rt",
            Metric::Er => "er",
        }
    }
}

/// Which trials share the mean and SD of the outlier window.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrimScope {
    Participant,
    ParticipantCondition,
    Pooled,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FilterOptions {
    pub min_rt_ms: f64,
    pub sd_window: f64,
    pub scope: TrimScope,
    /// Repeat trimming until no trial leaves the window.
    pub iterate: bool,
}

impl Default for FilterOptions {
    fn default() -> Self {
        Self {
            min_rt_ms: 200.0,
            sd_window: 3.0,
            scope: TrimScope::Participant,
            iterate: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct ExclusionReport {
    pub total: usize,
    pub errors: usize,
    pub missing_rt: usize,
    pub too_fast: usize,
    pub outliers: usize,
    pub kept: usize,
}

impl ExclusionReport {
    /// Share of all records removed for any reason.
    pub fn removed_fraction(&self) -> f64 {
        (self.total - self.kept) as f64 / self.total as f64
    }

    /// Share of correct trials removed by the RT rules (too fast or outside
    /// the SD window).
    pub fn rt_trim_fraction(&self) -> f64 {
        let correct = self.total - self.errors;
        if correct == 0 {
            return 0.0;
        }
        (self.too_fast + self.outliers + self.missing_rt) as f64 / correct as f64
    }
}

/// RT exclusion with the default rules: drop errors, drop RT < 200 ms, then
/// trim RTs beyond 3 SD of each participant's mean until stable.
///
/// Iterating to a fixed point makes the filter idempotent.
pub fn filter_rt(records: &[ResponseRecord]) -> Result<(Vec<ResponseRecord>, ExclusionReport), AnalysisError> {
    filter_rt_with(records, &FilterOptions::default())
}

pub fn filter_rt_with(
    records: &[ResponseRecord],
    opts: &FilterOptions,
) -> Result<(Vec<ResponseRecord>, ExclusionReport), AnalysisError> {
    if records.is_empty() {
        return Err(AnalysisError::Empty("no records to filter".into()));
    }
    let mut report = ExclusionReport {
        total: records.len(),
        ..Default::default()
    };
    let mut kept: Vec<&ResponseRecord> = Vec::with_capacity(records.len());
    for r in records {
        if !r.correct {
            report.errors += 1;
        } else {
            match r.rt_ms {
                None => report.missing_rt += 1,
                Some(rt) if rt < opts.min_rt_ms => report.too_fast += 1,
                Some(_) => kept.push(r),
            }
        }
    }
    loop {
        let mut groups: BTreeMap<(&str, Option<Congruence>), Vec<f64>> = BTreeMap::new();
        for r in &kept {
            groups.entry(trim_key(opts.scope, r)).or_default().push(r.rt_ms.expect("kept records have RTs"));
        }
        let windows: BTreeMap<_, (f64, f64)> = groups
            .into_iter()
            .map(|(k, v)| {
                let n = v.len() as f64;
                let m = v.iter().sum::<f64>() / n;
                let sd = if v.len() < 2 {
                    f64::INFINITY
                } else {
                    (v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0)).sqrt()
                };
                (k, (m, sd))
            })
            .collect();
        let before = kept.len();
        kept.retain(|r| {
            let (m, sd) = windows[&trim_key(opts.scope, r)];
            (r.rt_ms.unwrap() - m).abs() <= opts.sd_window * sd
        });
        report.outliers += before - kept.len();
        if before == kept.len() || !opts.iterate {
            break;
        }
    }
    report.kept = kept.len();
    Ok((kept.into_iter().cloned().collect(), report))
}

fn trim_key(scope: TrimScope, r: &ResponseRecord) -> (&str, Option<Congruence>) {
    match scope {
        TrimScope::Participant => (r.participant_id.as_str(), None),
        TrimScope::ParticipantCondition => (r.participant_id.as_str(), Some(r.congruence)),
        TrimScope::Pooled => ("", None),
    }
}

/// Participant × condition matrix of per-cell means.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConditionMatrix {
    pub participants: Vec<String>,
    /// `values[i][c.index()]`.
    pub values: Vec<Vec<f64>>,
}

impl ConditionMatrix {
    /// Per-participant incongruent minus congruent.
    pub fn src(&self) -> Vec<f64> {
        self.values
            .iter()
            .map(|r| r[Congruence::Incongruent.index()] - r[Congruence::Congruent.index()])
            .collect()
    }
}

/// Mean RT (over the given records) or error rate per participant and
/// condition. NoResponse counts as an error.
pub fn condition_matrix(records: &[ResponseRecord], metric: Metric) -> Result<ConditionMatrix, AnalysisError> {
    if records.is_empty() {
        return Err(AnalysisError::Empty("no records".into()));
    }
    let mut cells: BTreeMap<&str, [(f64, usize); 3]> = BTreeMap::new();
    for r in records {
        let value = match metric {
            Metric::Er => f64::from(u8::from(!r.correct)),
            Metric::Rt => match r.rt_ms {
                Some(v) => v,
                None => continue,
            },
        };
        let cell = &mut cells.entry(r.participant_id.as_str()).or_default()[r.congruence.index()];
        cell.0 += value;
        cell.1 += 1;
    }
    let mut participants = Vec::new();
    let mut values = Vec::new();
    for (p, row) in cells {
        if let Some(c) = Congruence::ALL.iter().find(|c| row[c.index()].1 == 0) {
            return Err(AnalysisError::IncompleteDesign(format!(
                "participant `{p}` has no {} data for the {c} condition",
                metric.name()
            )));
        }
        participants.push(p.to_string());
        values.push(row.iter().map(|(s, n)| s / *n as f64).collect());
    }
    if participants.is_empty() {
        return Err(AnalysisError::Empty(format!("no {} values", metric.name())));
    }
    Ok(ConditionMatrix { participants, values })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MeanSe {
    pub mean: f64,
    pub se: f64,
    pub n: usize,
}

impl MeanSe {
    /// Mean and `SD/√n` (sample SD; SE is 0 for a single value).
    pub fn of(v: &[f64]) -> MeanSe {
        let n = v.len();
        let mean = v.iter().sum::<f64>() / n as f64;
        let se = if n < 2 {
            0.0
        } else {
            let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n as f64 - 1.0);
            (var / n as f64).sqrt()
        };
        MeanSe { mean, se, n }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Summary {
    pub metric: Metric,
    /// Indexed by [`Congruence::index`].
    pub conditions: [MeanSe; 3],
    pub src: MeanSe,
    pub matrix: ConditionMatrix,
}

/// Per-condition mean ± SE over participant means, plus the SRC effect.
///
/// For RT the default exclusion rules are applied first; because
/// [`filter_rt`] is idempotent, already-filtered input is accepted unchanged.
pub fn summarize(records: &[ResponseRecord], metric: Metric) -> Result<Summary, AnalysisError> {
    let filtered;
    let used = match metric {
        Metric::Er => records,
        Metric::Rt => {
            filtered = filter_rt(records)?.0;
            &filtered[..]
        }
    };
    let matrix = condition_matrix(used, metric)?;
    let column = |c: Congruence| MeanSe::of(&matrix.values.iter().map(|r| r[c.index()]).collect::<Vec<_>>());
    Ok(Summary {
        metric,
        conditions: Congruence::ALL.map(column),
        src: MeanSe::of(&matrix.src()),
        matrix,
    })
}
