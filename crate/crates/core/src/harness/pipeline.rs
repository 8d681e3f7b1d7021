use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use super::config::HarnessConfig;
use super::manifest::RunManifest;
use super::HarnessError;
use crate::actuation::write_gaze_trace;
use crate::analysis::{analyze, read_records_csv, write_records_csv, AnalysisReport, Metric, ResponseRecord};
use crate::fusion::{
    build_fusion_samples, evaluate_fusion, robot_participant_id, simulate_robot_session, train_fusion, FusionError,
    FusionEval, FusionModel, RobotModels, RobotRunner, RobotSession, StackBuilder,
};
use crate::numerics::{load_params, save_params, TrainConfig, TrainHistory};
use crate::protocol::{generate_practice, generate_session, write_trials_csv};
use crate::rng::{self, tag};
use crate::ssl::{build_ssl_samples, evaluate_ssl, export_ssl_dataset, train_ssl, SslEval, SslModel};

pub const SSL_CHECKPOINT: &str = "ssl.ckpt";
pub const FUSION_CHECKPOINT: &str = "fusion.ckpt";
pub const ROBOT_CSV: &str = "robot_responses.csv";
/// One gaze trace per simulated session, named after its participant id.
pub const GAZE_DIR: &str = "gaze";
pub const REPORT_CSV: &str = "report.csv";
pub const REPORT_TXT: &str = "report.txt";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrainTarget {
    Ssl,
    Fusion,
}

impl TrainTarget {
    pub fn name(self) -> &'static str {
        match self {
            TrainTarget::Ssl => "ssl",
            TrainTarget::Fusion => "fusion",
        }
    }

    fn checkpoint(self) -> &'static str {
        match self {
            TrainTarget::Ssl => SSL_CHECKPOINT,
            TrainTarget::Fusion => FUSION_CHECKPOINT,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum HeldOut {
    Ssl(SslEval),
    Fusion(FusionEval),
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub checkpoint: PathBuf,
    pub loss_csv: PathBuf,
    pub history: TrainHistory,
    pub held_out: HeldOut,
}

fn create_dir(dir: &Path) -> Result<(), HarnessError> {
    fs::create_dir_all(dir).map_err(|e| HarnessError::file(dir, e))
}

fn checkpoint_path(dir: &Path, target: TrainTarget) -> Result<PathBuf, HarnessError> {
    let path = dir.join(target.checkpoint());
    if !path.is_file() {
        return Err(HarnessError::MissingCheckpoint {
            path: path.display().to_string(),
            command: format!("xmod train {} --out {}", target.name(), dir.display()),
        });
    }
    Ok(path)
}

fn load_ssl(config: &HarnessConfig, dir: &Path) -> Result<SslModel, HarnessError> {
    let params = load_params(&checkpoint_path(dir, TrainTarget::Ssl)?)?;
    Ok(SslModel::from_params(config.ssl, params, true)?)
}

/// Trained models from the checkpoints in `dir`.
pub fn load_models(config: &HarnessConfig, dir: &Path) -> Result<RobotModels, HarnessError> {
    let ssl = load_ssl(config, dir)?;
    let params = load_params(&checkpoint_path(dir, TrainTarget::Fusion)?)?;
    Ok(RobotModels {
        ssl,
        fusion: FusionModel::from_params(config.fusion, params, true)?,
    })
}

/// Trains one model and writes its checkpoint and `<target>_loss.csv` into
/// `out`. Fusion training needs the SSL checkpoint there already.
pub fn train(target: TrainTarget, config: &HarnessConfig, seed: u64, out: &Path) -> Result<TrainOutcome, HarnessError> {
    create_dir(out)?;
    let mut manifest = RunManifest::new(&format!("train {}", target.name()), vec![seed], &config.to_kv());
    let (params, history, held_out) = match target {
        TrainTarget::Ssl => {
            let model = SslModel::init(config.ssl, seed)?;
            let n = config.ssl_data.trials;
            let train_set = build_ssl_samples(&model, &config.ssl_data, seed, 0, n)?;
            let val = build_ssl_samples(&model, &config.ssl_data, seed, n as u32, config.ssl_val_trials)?;
            let tc = TrainConfig { seed, ..config.ssl_train };
            let (model, history) = train_ssl(model, &train_set, &val, &tc)?;
            let eval = if val.is_empty() { None } else { Some(evaluate_ssl(&model, &val)?) };
            (model.params, history, eval.map(HeldOut::Ssl))
        }
        TrainTarget::Fusion => {
            let ssl_path = checkpoint_path(out, TrainTarget::Ssl)?;
            manifest.add_input(out, &ssl_path)?;
            let ssl = load_ssl(config, out)?;
            let builder = StackBuilder::new(&ssl, config.fusion)?;
            let data_seed = rng::derive_seed(seed, &[tag::DATASET]);
            let n = config.fusion_data.trials;
            let train_set = build_fusion_samples(&builder, &config.fusion_data, data_seed, 0, n)?;
            let val = build_fusion_samples(&builder, &config.fusion_data, data_seed, n as u32, config.fusion_val_trials)?;
            let tc = TrainConfig { seed, ..config.fusion_train };
            let (model, history) = train_fusion(FusionModel::init(config.fusion, seed)?, &train_set, &val, &tc)?;
            let eval = if val.is_empty() { None } else { Some(evaluate_fusion(&model, &val)?) };
            (model.params, history, eval.map(HeldOut::Fusion))
        }
    };
    let checkpoint = out.join(target.checkpoint());
    save_params(&params, &checkpoint)?;
    let loss_csv = out.join(format!("{}_loss.csv", target.name()));
    fs::write(&loss_csv, history.to_csv()).map_err(|e| HarnessError::file(&loss_csv, e))?;
    manifest.add_checkpoint(out, &checkpoint)?;
    manifest.add_output(out, &loss_csv)?;
    manifest.append(out)?;
    Ok(TrainOutcome {
        checkpoint,
        loss_csv,
        history,
        held_out: held_out.ok_or_else(|| HarnessError::BadRequest("held-out set is empty".into()))?,
    })
}

#[derive(Debug, Clone)]
pub struct SimulateOutcome {
    pub records: Vec<ResponseRecord>,
    pub responses_csv: PathBuf,
    pub gaze_csvs: Vec<PathBuf>,
}

/// Sessions are independent, so seeds are split across threads; results
/// come back in seed order.
fn run_sessions(
    runner: &RobotRunner<'_>,
    config: &HarnessConfig,
    seeds: &[u64],
) -> Vec<Result<RobotSession, FusionError>> {
    let threads = std::thread::available_parallelism().map_or(1, |n| n.get()).min(seeds.len()).max(1);
    let per = seeds.len().div_ceil(threads);
    std::thread::scope(|s| {
        let handles: Vec<_> = seeds
            .chunks(per.max(1))
            .map(|chunk| {
                s.spawn(move || {
                    chunk
                        .iter()
                        .map(|&seed| simulate_robot_session(runner, &config.protocol, seed))
                        .collect::<Vec<_>>()
                })
            })
            .collect();
        handles
            .into_iter()
            .flat_map(|h| h.join().expect("session thread panicked"))
            .collect()
    })
}

/// One robot session per seed with the checkpoints in `models_dir`; writes
/// the response CSV and gaze traces into `out`.
pub fn simulate(
    config: &HarnessConfig,
    seeds: &[u64],
    models_dir: &Path,
    out: &Path,
) -> Result<SimulateOutcome, HarnessError> {
    let models = load_models(config, models_dir)?;
    let runner = RobotRunner::new(&models, config.noise)?;
    create_dir(&out.join(GAZE_DIR))?;
    let mut manifest = RunManifest::new("simulate", seeds.to_vec(), &config.to_kv());
    for name in [SSL_CHECKPOINT, FUSION_CHECKPOINT] {
        let p = models_dir.join(name);
        manifest.checkpoints.push(p.display().to_string());
        manifest.add_input(out, &p)?;
    }
    let mut records = Vec::with_capacity(seeds.len() * config.protocol.total_trials());
    let mut gaze_csvs = Vec::with_capacity(seeds.len());
    for (&seed, session) in seeds.iter().zip(run_sessions(&runner, config, seeds)) {
        let session = session?;
        let path = out.join(GAZE_DIR).join(format!("{}.csv", robot_participant_id(seed)));
        let f = fs::File::create(&path).map_err(|e| HarnessError::file(&path, e))?;
        write_gaze_trace(&session.gaze, BufWriter::new(f))?;
        gaze_csvs.push(path);
        records.extend(session.records);
    }
    let responses_csv = out.join(ROBOT_CSV);
    let f = fs::File::create(&responses_csv).map_err(|e| HarnessError::file(&responses_csv, e))?;
    write_records_csv(&records, BufWriter::new(f))?;
    manifest.add_output(out, &responses_csv)?;
    for p in &gaze_csvs {
        manifest.add_output(out, p)?;
    }
    manifest.append(out)?;
    Ok(SimulateOutcome {
        records,
        responses_csv,
        gaze_csvs,
    })
}

/// Reads every CSV, runs the statistics for `metrics`, and writes the CSV
/// and text reports into `out`.
pub fn analyze_files(inputs: &[PathBuf], metrics: &[Metric], out: &Path) -> Result<AnalysisReport, HarnessError> {
    if inputs.is_empty() {
        return Err(HarnessError::BadRequest("no input CSVs given".into()));
    }
    create_dir(out)?;
    let mut manifest = RunManifest::new("analyze", Vec::new(), &Default::default());
    let mut records = Vec::new();
    for p in inputs {
        let f = fs::File::open(p).map_err(|e| HarnessError::file(p, e))?;
        records.extend(read_records_csv(f)?);
        manifest.add_input(out, p)?;
    }
    let report = analyze(&records, metrics)?;
    let csv_path = out.join(REPORT_CSV);
    let f = fs::File::create(&csv_path).map_err(|e| HarnessError::file(&csv_path, e))?;
    report.write_csv(BufWriter::new(f))?;
    let txt_path = out.join(REPORT_TXT);
    fs::write(&txt_path, report.to_text()).map_err(|e| HarnessError::file(&txt_path, e))?;
    manifest.add_output(out, &csv_path)?;
    manifest.add_output(out, &txt_path)?;
    manifest.append(out)?;
    Ok(report)
}

#[derive(Debug, Clone)]
pub struct ExportOutcome {
    pub dataset_manifest: PathBuf,
    pub plan_csv: PathBuf,
    pub practice_csv: PathBuf,
}

/// Writes the session plan, the practice plan and `count` SSL training
/// trials (WAV chunks plus frame stacks) for `seed`.
pub fn export_stimuli(config: &HarnessConfig, seed: u64, count: usize, out: &Path) -> Result<ExportOutcome, HarnessError> {
    create_dir(out)?;
    let mut manifest = RunManifest::new("export-stimuli", vec![seed], &config.to_kv());
    let plan_csv = out.join("plan.csv");
    let f = fs::File::create(&plan_csv).map_err(|e| HarnessError::file(&plan_csv, e))?;
    write_trials_csv(&generate_session(seed, &config.protocol)?.trials, BufWriter::new(f))?;
    let practice_csv = out.join("practice.csv");
    let f = fs::File::create(&practice_csv).map_err(|e| HarnessError::file(&practice_csv, e))?;
    write_trials_csv(&generate_practice(seed, &config.protocol)?.trials, BufWriter::new(f))?;
    let model = SslModel::init(config.ssl, seed)?;
    let dataset_manifest = export_ssl_dataset(&model, &config.ssl_data, seed, count, &out.join("ssl"))?;
    manifest.add_output(out, &plan_csv)?;
    manifest.add_output(out, &practice_csv)?;
    manifest.add_output(out, &dataset_manifest)?;
    manifest.append(out)?;
    Ok(ExportOutcome {
        dataset_manifest,
        plan_csv,
        practice_csv,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn missing_checkpoint_names_the_training_command() {
        let dir = tempfile::tempdir().unwrap();
        let err = simulate(&HarnessConfig::default(), &[1], dir.path(), dir.path()).unwrap_err();
        let msg = err.to_string();
        assert!(matches!(err, HarnessError::MissingCheckpoint { .. }));
        assert!(msg.contains("xmod train ssl"), "{msg}");
        let err = train(TrainTarget::Fusion, &HarnessConfig::default(), 0, dir.path()).unwrap_err();
        assert!(err.to_string().contains("xmod train ssl"));
    }

    #[test]
    fn empty_analysis_input_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("empty.csv");
        fs::write(&p, "participant_id,agent,trial_id,block,congruence,target,response,correct,rt_ms\n").unwrap();
        assert!(matches!(
            analyze_files(&[p], &[Metric::Er], dir.path()),
            Err(HarnessError::Analysis(_))
        ));
        assert!(analyze_files(&[], &[Metric::Er], dir.path()).is_err());
    }

    #[test]
    fn export_writes_plans_and_dataset() {
        let dir = tempfile::tempdir().unwrap();
        let o = export_stimuli(&HarnessConfig::default(), 5, 2, dir.path()).unwrap();
        let plan = crate::protocol::read_trials_csv(fs::File::open(&o.plan_csv).unwrap()).unwrap();
        assert_eq!(plan.len(), 288);
        let m = super::super::read_manifests(dir.path()).unwrap();
        m[0].verify(dir.path()).unwrap();
    }
}
