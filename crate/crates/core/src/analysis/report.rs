use std::fmt::Write as _;
use std::io::Write;

use serde::Serialize;

use super::{
    bonferroni_pairwise, filter_rt, independent_ttest, rm_anova_gg, summarize, Agent, AnalysisError, AnovaResult,
    ExclusionReport, Metric, PairwiseResult, ResponseRecord, Summary, TTestResult,
};
use crate::protocol::Congruence;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricReport {
    pub summary: Summary,
    pub anova: AnovaResult,
    pub pairwise: Vec<PairwiseResult>,
}

impl MetricReport {
    fn build(records: &[ResponseRecord], metric: Metric) -> Result<Self, AnalysisError> {
        let summary = summarize(records, metric)?;
        let anova = rm_anova_gg(&summary.matrix.values)?;
        let pairwise = bonferroni_pairwise(&summary.matrix.values)?;
        Ok(Self {
            summary,
            anova,
            pairwise,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AgentReport {
    pub agent: Agent,
    pub participants: usize,
    pub records: usize,
    pub er: Option<MetricReport>,
    /// Human data only; robot RTs are never recorded.
    pub rt: Option<MetricReport>,
    pub exclusion: Option<ExclusionReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AnalysisReport {
    pub agents: Vec<AgentReport>,
    /// Human SRC (ER) against robot SRC (ER), when both are present.
    pub src_comparison: Option<TTestResult>,
}

/// Runs every requested statistic per agent found in `records`.
pub fn analyze(records: &[ResponseRecord], metrics: &[Metric]) -> Result<AnalysisReport, AnalysisError> {
    if records.is_empty() {
        return Err(AnalysisError::Empty("no response records to analyze".into()));
    }
    let mut agents = Vec::new();
    for agent in [Agent::Human, Agent::Robot] {
        let subset: Vec<ResponseRecord> = records.iter().filter(|r| r.agent == agent).cloned().collect();
        if subset.is_empty() {
            continue;
        }
        let mut participants: Vec<&str> = subset.iter().map(|r| r.participant_id.as_str()).collect();
        participants.sort_unstable();
        participants.dedup();
        let er = if metrics.contains(&Metric::Er) {
            Some(MetricReport::build(&subset, Metric::Er)?)
        } else {
            None
        };
        let (rt, exclusion) = if agent == Agent::Human && metrics.contains(&Metric::Rt) {
            let (_, exclusion) = filter_rt(&subset)?;
            (Some(MetricReport::build(&subset, Metric::Rt)?), Some(exclusion))
        } else {
            (None, None)
        };
        agents.push(AgentReport {
            agent,
            participants: participants.len(),
            records: subset.len(),
            er,
            rt,
            exclusion,
        });
    }
    let src = |a: Agent| {
        agents
            .iter()
            .find(|r| r.agent == a)
            .and_then(|r| r.er.as_ref())
            .map(|m| m.summary.matrix.src())
    };
    let src_comparison = match (src(Agent::Human), src(Agent::Robot)) {
        (Some(h), Some(r)) => Some(independent_ttest(&r, &h)?),
        _ => None,
    };
    Ok(AnalysisReport { agents, src_comparison })
}

pub const REPORT_CSV_HEADER: [&str; 5] = ["agent", "metric", "statistic", "condition", "value"];

fn pair_name(p: &PairwiseResult) -> String {
    format!("{}-{}", Congruence::ALL[p.a].name(), Congruence::ALL[p.b].name())
}

impl AnalysisReport {
    /// One row per statistic: `agent,metric,statistic,condition,value`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<(), AnalysisError> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(REPORT_CSV_HEADER)?;
        let mut row = |agent: &str, metric: &str, stat: &str, cond: &str, v: f64| {
            wtr.write_record([agent, metric, stat, cond, &v.to_string()])
        };
        for a in &self.agents {
            let name = a.agent.name();
            row(name, "", "participants", "", a.participants as f64)?;
            row(name, "", "records", "", a.records as f64)?;
            if let Some(e) = &a.exclusion {
                row(name, "rt", "excluded_fraction", "", e.removed_fraction())?;
                row(name, "rt", "rt_trim_fraction", "", e.rt_trim_fraction())?;
            }
            for m in [&a.er, &a.rt].into_iter().flatten() {
                let metric = m.summary.metric.name();
                for c in Congruence::ALL {
                    let s = m.summary.conditions[c.index()];
                    row(name, metric, "mean", c.name(), s.mean)?;
                    row(name, metric, "se", c.name(), s.se)?;
                }
                row(name, metric, "src_mean", "", m.summary.src.mean)?;
                row(name, metric, "src_se", "", m.summary.src.se)?;
                let an = &m.anova;
                for (stat, v) in [
                    ("F", an.f),
                    ("df1", an.df1),
                    ("df2", an.df2),
                    ("p", an.p),
                    ("eta_p_sq", an.eta_p_sq),
                    ("epsilon_gg", an.epsilon_gg),
                    ("df1_uncorrected", an.df1_uncorrected),
                    ("df2_uncorrected", an.df2_uncorrected),
                    ("p_uncorrected", an.p_uncorrected),
                ] {
                    row(name, metric, stat, "", v)?;
                }
                for p in &m.pairwise {
                    let pair = pair_name(p);
                    row(name, metric, "pair_t", &pair, p.t)?;
                    row(name, metric, "pair_df", &pair, p.df)?;
                    row(name, metric, "pair_p_bonferroni", &pair, p.p_corrected)?;
                }
            }
        }
        if let Some(t) = &self.src_comparison {
            row("robot-human", "er", "src_t", "", t.t)?;
            row("robot-human", "er", "src_df", "", t.df)?;
            row("robot-human", "er", "src_p", "", t.p)?;
        }
        wtr.flush()?;
        Ok(())
    }

    /// Plain-text results in the conventional APA-like style.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for a in &self.agents {
            let _ = writeln!(s, "== {} ({} participants, {} records) ==", a.agent, a.participants, a.records);
            if let Some(e) = &a.exclusion {
                let _ = writeln!(
                    s,
                    "RT exclusion: {} of {} records removed ({:.2}%); RT rules removed {:.2}% of correct trials.",
                    e.total - e.kept,
                    e.total,
                    100.0 * e.removed_fraction(),
                    100.0 * e.rt_trim_fraction()
                );
            }
            for m in [&a.rt, &a.er].into_iter().flatten() {
                let label = match m.summary.metric {
                    Metric::Rt => "RT",
                    Metric::Er => "ER",
                };
                let an = &m.anova;
                let _ = writeln!(
                    s,
                    "{label}: Greenhouse-Geisser corrected RM-ANOVA F({:.2}, {:.2}) = {:.2}, p = {}, eta_p^2 = {:.2} (epsilon = {:.3}; uncorrected df {}, {}).",
                    an.df1,
                    an.df2,
                    an.f,
                    fmt_p(an.p),
                    an.eta_p_sq,
                    an.epsilon_gg,
                    an.df1_uncorrected,
                    an.df2_uncorrected
                );
                for c in Congruence::ALL {
                    let v = m.summary.conditions[c.index()];
                    let _ = match m.summary.metric {
                        Metric::Rt => writeln!(s, "  {c}: mean ± SE = {:.2} ± {:.2} ms", v.mean, v.se),
                        Metric::Er => writeln!(s, "  {c}: mean ± SE = {:.3} ± {:.3}", v.mean, v.se),
                    };
                }
                for p in &m.pairwise {
                    let _ = writeln!(
                        s,
                        "  post hoc {}: t({}) = {:.2}, Bonferroni p = {}",
                        pair_name(p),
                        p.df,
                        p.t,
                        fmt_p(p.p_corrected)
                    );
                }
                let _ = writeln!(
                    s,
                    "  SRC (incongruent - congruent): {:.3} ± {:.3}",
                    m.summary.src.mean, m.summary.src.se
                );
            }
        }
        if let Some(t) = &self.src_comparison {
            let _ = writeln!(
                s,
                "SRC (ER) robot vs human: t({}) = {:.2}, p = {} (robot {:.3}, human {:.3})",
                t.df,
                t.t,
                fmt_p(t.p),
                t.mean_a,
                t.mean_b
            );
        }
        s
    }
}

fn fmt_p(p: f64) -> String {
    if p < 0.001 {
        "< .001".into()
    } else {
        format!("{p:.3}")
    }
}
