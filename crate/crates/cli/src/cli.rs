use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use xmod_core::analysis::Metric;
use xmod_core::harness::{
    self, HarnessConfig, HarnessError, HeldOut, SessionService, TrainTarget,
};

/// Fallback when neither `--out` nor `XMOD_DATA_DIR` is given.
pub const DEFAULT_DATA_DIR: &str = "xmod-data";

#[derive(Debug, Parser)]
#[command(name = "xmod", version, about = "Gaze-cued audio-visual attention harness")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// Key-value config file; unset keys keep their defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output directory.
    #[arg(long, env = "XMOD_DATA_DIR")]
    pub out: Option<PathBuf>,
}

impl Common {
    pub fn out_dir(&self) -> PathBuf {
        self.out.clone().unwrap_or_else(|| PathBuf::from(DEFAULT_DATA_DIR))
    }

    pub fn load_config(&self) -> Result<HarnessConfig, HarnessError> {
        match &self.config {
            None => Ok(HarnessConfig::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| HarnessError::File {
                    path: p.display().to_string(),
                    source: e,
                })?;
                HarnessConfig::parse(&text)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TargetArg {
    Ssl,
    Fusion,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MetricArg {
    Rt,
    Er,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run seeded robot sessions with trained checkpoints.
    Simulate {
        #[command(flatten)]
        common: Common,
        /// Number of sessions; overrides `simulate.sessions`.
        #[arg(long)]
        sessions: Option<usize>,
        /// Checkpoint directory; defaults to the output directory.
        #[arg(long)]
        models: Option<PathBuf>,
    },
    /// Train one model and write its checkpoint.
    Train {
        target: TargetArg,
        #[command(flatten)]
        common: Common,
    },
    /// Statistics over one or more response CSVs.
    Analyze {
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        /// Metrics to report; both when omitted.
        #[arg(long = "metric", value_enum)]
        metrics: Vec<MetricArg>,
        #[command(flatten)]
        common: Common,
    },
    /// Session service for the browser runner.
    Serve {
        #[arg(long, default_value = "127.0.0.1:8080")]
        bind: String,
        #[command(flatten)]
        common: Common,
    },
    /// Write the session plan, practice plan and an SSL dataset sample.
    ExportStimuli {
        #[arg(long, default_value_t = 16)]
        count: usize,
        #[command(flatten)]
        common: Common,
    },
}

fn held_out_line(h: &HeldOut) -> String {
    match h {
        HeldOut::Ssl(e) => format!("held-out KL {:.4}, side accuracy {:.3}", e.mean_kl, e.side_accuracy),
        HeldOut::Fusion(e) => format!(
            "held-out KL {:.4}, side accuracy {:.3} (congruent {:.3}, incongruent {:.3}, neutral {:.3})",
            e.mean_kl,
            e.side_accuracy,
            e.accuracy_by_condition[0],
            e.accuracy_by_condition[1],
            e.accuracy_by_condition[2]
        ),
    }
}

fn shown(p: &Path) -> String {
    p.display().to_string()
}

/// Runs one subcommand and returns the summary to print.
pub fn run(cli: Cli) -> Result<String, HarnessError> {
    match cli.command {
        Command::Simulate { common, sessions, models } => {
            let mut config = common.load_config()?;
            if let Some(n) = sessions {
                config.sessions = n;
            }
            config.validate()?;
            let out = common.out_dir();
            let models = models.unwrap_or_else(|| out.clone());
            let seeds = config.session_seeds(common.seed);
            let o = harness::simulate(&config, &seeds, &models, &out)?;
            Ok(format!(
                "{} records from {} sessions -> {}",
                o.records.len(),
                seeds.len(),
                shown(&o.responses_csv)
            ))
        }
        Command::Train { target, common } => {
            let config = common.load_config()?;
            config.validate()?;
            let target = match target {
                TargetArg::Ssl => TrainTarget::Ssl,
                TargetArg::Fusion => TrainTarget::Fusion,
            };
            let o = harness::train(target, &config, common.seed, &common.out_dir())?;
            Ok(format!("{} -> {}; {}", target.name(), shown(&o.checkpoint), held_out_line(&o.held_out)))
        }
        Command::Analyze { inputs, metrics, common } => {
            let mut ms: Vec<Metric> = metrics
                .iter()
                .map(|m| match m {
                    MetricArg::Rt => Metric::Rt,
                    MetricArg::Er => Metric::Er,
                })
                .collect();
            if ms.is_empty() {
                ms = vec![Metric::Rt, Metric::Er];
            }
            ms.dedup();
            let report = harness::analyze_files(&inputs, &ms, &common.out_dir())?;
            Ok(report.to_text())
        }
        Command::Serve { bind, common } => {
            let config = common.load_config()?;
            config.validate()?;
            let service = SessionService::new(config.protocol, common.seed)?;
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(crate::server::serve(service, &bind))?;
            Ok("stopped".into())
        }
        Command::ExportStimuli { count, common } => {
            let config = common.load_config()?;
            config.validate()?;
            let o = harness::export_stimuli(&config, common.seed, count, &common.out_dir())?;
            Ok(format!(
                "plan {}, practice {}, dataset {}",
                shown(&o.plan_csv),
                shown(&o.practice_csv),
                shown(&o.dataset_manifest)
            ))
        }
    }
}
