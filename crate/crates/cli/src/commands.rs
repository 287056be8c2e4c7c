//! Pipelines behind the subcommands. Each one writes its artifacts under the
//! configured output directory and returns a summary for printing.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use msk_balance::env::{
    self, worker_pool, write_log, write_trace, ComState, Env, EpisodeOutcome, Method, RolloutOptions, RsiConfig,
    Status, TrainLogRow,
};
use msk_balance::nnet::Checkpoint;
use msk_balance::region::{
    self, build_br, build_pbr, compare_regions, LipBounds, RegionReport, Trial, REPORT_SCHEMA_VERSION,
};
use msk_balance::rng::{self, domain};
use msk_balance::{Error, Result};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::config::{HoldCriterion, RunConfig};
use crate::scenario::Scenario;

pub const SUMMARY_SCHEMA_VERSION: u32 = 1;

/// Episodes launched together by the lean test.
const LEAN_BATCH: usize = 64;

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)
        .map_err(|e| Error::Config(format!("cannot create output directory {}: {e}", dir.display())))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(value)? + "\n")?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    if !path.is_file() {
        return Err(Error::Config(format!("checkpoint {} does not exist", path.display())));
    }
    Checkpoint::load(path)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageSummary {
    /// Directory relative to the run directory.
    pub dir: String,
    pub method: Method,
    pub iterations: usize,
    pub best_iteration: usize,
    pub best_reward: f64,
    pub final_reward: f64,
    pub initial_cpn_hash: String,
    pub best_cpn_hash: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub schema_version: u32,
    pub method: Method,
    pub scenario: Scenario,
    pub seed: u64,
    pub target_ankle_deg: f64,
    pub upright_com_height: f64,
    pub omega: f64,
    pub stages: Vec<StageSummary>,
    pub notes: Vec<String>,
}

fn write_snapshot(config: &RunConfig, dir: &Path, env: &Env) -> Result<()> {
    config.save(dir.join("config_snapshot.json"))?;
    env.model.save(dir.join("model_effective.json"))
}

/// Trains and writes logs, checkpoints and a summary. M3 runs write one
/// subdirectory per stage; the run directory's `checkpoint_best.json` is always
/// the final stage's best.
pub fn cmd_train(config: &RunConfig, progress: &mut dyn FnMut(usize, &TrainLogRow)) -> Result<TrainSummary> {
    let prepared = config.prepare()?;
    let env = &prepared.env;
    let out = &config.output_dir;
    create_dir(out)?;
    write_snapshot(config, out, env)?;

    let result = env::train(env, &config.train, progress)?;
    let multi = result.stages.len() > 1;
    let mut stages = Vec::new();
    for (k, stage) in result.stages.iter().enumerate() {
        let rel = if multi { format!("stage{}_{}", k + 1, format!("{:?}", stage.method).to_lowercase()) } else { ".".into() };
        let dir = out.join(&rel);
        create_dir(&dir)?;
        write_log(dir.join("train_log.csv"), &stage.log)?;
        stage.best.save(dir.join("checkpoint_best.json"))?;
        stage.last.save(dir.join("checkpoint_last.json"))?;
        stages.push(StageSummary {
            dir: rel,
            method: stage.method,
            iterations: stage.log.len(),
            best_iteration: stage.best_iteration,
            best_reward: stage.best_reward,
            final_reward: stage.log.last().map_or(f64::NAN, |r| r.reward),
            initial_cpn_hash: stage.initial_hash.clone(),
            best_cpn_hash: stage.best.get("cpn")?.param_hash(),
        });
    }
    if multi {
        result.best().save(out.join("checkpoint_best.json"))?;
    }
    let summary = TrainSummary {
        schema_version: SUMMARY_SCHEMA_VERSION,
        method: config.train.method,
        scenario: config.scenario,
        seed: config.train.seed,
        target_ankle_deg: env.target_ankle().to_degrees(),
        upright_com_height: env.upright_com_height(),
        omega: env.omega(),
        stages,
        notes: prepared.notes,
    };
    write_json(&out.join("summary.json"), &summary)?;
    Ok(summary)
}

/// One classified test episode.
#[derive(Debug, Clone)]
pub struct TestEpisode {
    pub index: usize,
    pub ankle: f64,
    pub ankle_velocity: f64,
    pub outcome: EpisodeOutcome,
    pub success: bool,
}

/// Success means surviving the full episode and, with a hold criterion,
/// keeping every ankle within tolerance of its target from `hold.after` on.
pub fn classify(env: &Env, outcome: &EpisodeOutcome, hold: Option<&HoldCriterion>) -> bool {
    if !outcome.success() {
        return false;
    }
    let Some(hold) = hold else { return true };
    let actuated = env.model.actuated_coords();
    let tol = hold.tolerance_deg.to_radians();
    let ankles: Vec<usize> = (0..actuated.len()).filter(|&k| env.ankle_coords().contains(&actuated[k])).collect();
    let within = |q: &[f64]| ankles.iter().all(|&k| (q[k] - env.target_q()[k]).abs() <= tol);
    let final_q: Vec<f64> = actuated.iter().map(|&c| outcome.final_q[c]).collect();
    outcome.times.iter().zip(&outcome.joint_angles).filter(|(t, _)| **t >= hold.after).all(|(_, q)| within(q))
        && within(&final_q)
}

#[allow(clippy::too_many_arguments)]
fn run_indexed(
    env: &Env,
    ck: &Checkpoint,
    indices: std::ops::Range<usize>,
    start: &(dyn Fn(usize) -> Result<(f64, f64)> + Sync),
    rsi: &RsiConfig,
    hold: Option<&HoldCriterion>,
    seed: u64,
    dom: u64,
    workers: usize,
) -> Result<Vec<TestEpisode>> {
    let (policy, _) = env::networks_from(ck)?;
    let pool = worker_pool(workers)?;
    pool.install(|| {
        indices
            .into_par_iter()
            .map(|i| {
                let (ankle, ankle_velocity) = start(i)?;
                let sample = env.initial_state(ankle, ankle_velocity, rsi)?;
                let mut rng = rng::stream(seed, dom, 0, i as u64);
                let outcome = env.run_episode(&policy, &sample.state, RolloutOptions::EVALUATE, &mut rng)?.outcome;
                let success = classify(env, &outcome, hold);
                Ok(TestEpisode { index: i, ankle, ankle_velocity, outcome, success })
            })
            .collect()
    })
}

/// Randomized test episodes: initial states drawn with `rsi` from per-episode
/// streams, deterministic mean actions.
pub fn run_tests(
    env: &Env,
    ck: &Checkpoint,
    rsi: &RsiConfig,
    n: usize,
    hold: Option<&HoldCriterion>,
    seed: u64,
    workers: usize,
) -> Result<Vec<TestEpisode>> {
    let start = |i: usize| {
        let mut rng = rng::stream(seed, domain::TEST, 1, i as u64);
        let s = env.randomize_initial_state(rsi, &mut rng)?;
        Ok((s.ankle, s.ankle_velocity))
    };
    run_indexed(env, ck, 0..n, &start, rsi, hold, seed, domain::TEST, workers)
}

/// Test episodes from given `(ankle, ankle velocity)` starts.
pub fn run_from_starts(
    env: &Env,
    ck: &Checkpoint,
    starts: &[(f64, f64)],
    rsi: &RsiConfig,
    hold: Option<&HoldCriterion>,
    seed: u64,
    workers: usize,
) -> Result<Vec<TestEpisode>> {
    let start = |i: usize| Ok(starts[i]);
    run_indexed(env, ck, 0..starts.len(), &start, rsi, hold, seed, domain::TEST, workers)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutcomeRow {
    pub index: usize,
    pub x: f64,
    pub v: f64,
    pub ankle: f64,
    pub ankle_velocity: f64,
    pub status: String,
    pub success: u8,
    pub numeric_failure: u8,
    pub duration: f64,
}

fn write_outcomes(path: &Path, episodes: &[TestEpisode]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for e in episodes {
        w.serialize(OutcomeRow {
            index: e.index,
            x: e.outcome.initial.x,
            v: e.outcome.initial.v,
            ankle: e.ankle,
            ankle_velocity: e.ankle_velocity,
            status: e.outcome.status.as_str().into(),
            success: e.success as u8,
            numeric_failure: e.outcome.numeric_failure as u8,
            duration: e.outcome.duration,
        })?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_outcomes(path: &Path) -> Result<Vec<OutcomeRow>> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}

/// Region report from already-classified trials. Too few successes give a
/// report with the `degenerate` flag instead of an error.
pub fn region_report<R: rand::Rng + ?Sized>(
    trials: &[Trial],
    lip: LipBounds,
    alpha: f64,
    n_internal: usize,
    rng: &mut R,
) -> Result<RegionReport> {
    let mut report = RegionReport {
        schema_version: REPORT_SCHEMA_VERSION,
        n_trials: trials.len(),
        pbr: None,
        br: None,
        degenerate: None,
        lip,
        pbr_vs_lip: None,
        br_vs_lip: None,
        notes: BTreeMap::new(),
    };
    match build_pbr(trials, alpha) {
        Ok(pbr) => {
            let br = build_br(&pbr, trials, n_internal, alpha, rng)?;
            report.pbr_vs_lip = Some(compare_regions(&pbr, &lip));
            report.br_vs_lip = Some(compare_regions(&br, &lip));
            report.pbr = Some(pbr);
            report.br = Some(br);
        }
        Err(Error::Degenerate(msg)) => report.degenerate = Some(msg),
        Err(e) => return Err(e),
    }
    Ok(report)
}

pub struct RegionOutput {
    pub report: RegionReport,
    pub episodes: Vec<TestEpisode>,
    pub overall_rate: f64,
}

/// Runs the test episodes, builds both regions and writes the report, the
/// per-episode outcomes and plot data.
pub fn cmd_region(config: &RunConfig, ck: &Checkpoint) -> Result<RegionOutput> {
    let prepared = config.prepare()?;
    let env = config.test_env(&prepared.env)?;
    let out = &config.output_dir;
    create_dir(out)?;
    write_snapshot(config, out, &env)?;

    let rsi = config.test_rsi(&env);
    let seed = config.train.seed;
    let hold = config.test.hold.as_ref();
    let episodes = run_tests(&env, ck, &rsi, config.test.episodes, hold, seed, config.train.workers)?;
    let trials: Vec<Trial> = episodes
        .iter()
        .map(|e| Trial { initial: e.outcome.initial, success: e.success, trajectory: e.outcome.com.clone() })
        .collect();
    let lip = LipBounds::from_env(&env)?;
    let mut rng = rng::stream(seed, domain::REGION, 0, 0);
    let mut report = region_report(&trials, lip, config.test.alpha, config.test.n_internal, &mut rng)?;

    let n_success = episodes.iter().filter(|e| e.success).count();
    let overall_rate = n_success as f64 / episodes.len() as f64;
    let numeric = episodes.iter().filter(|e| e.outcome.numeric_failure).count();
    let statuses = [Status::Success, Status::Fall, Status::FootSlide, Status::FootLift]
        .map(|s| (s.as_str(), episodes.iter().filter(|e| e.outcome.status == s).count()));
    let notes = &mut report.notes;
    notes.insert("overall_rate".into(), json!(overall_rate));
    notes.insert("status_counts".into(), json!(BTreeMap::from(statuses)));
    notes.insert("numeric_failures".into(), json!(numeric));
    notes.insert("scenario".into(), json!(config.scenario));
    notes.insert("test_rsi".into(), json!(rsi));
    notes.insert("hold".into(), json!(hold));
    notes.insert("checkpoint_meta".into(), json!(ck.meta));
    notes.insert("alpha_units".into(), json!("alpha applies to raw (x [m], v [m/s]) coordinates without normalization"));
    if !prepared.notes.is_empty() {
        notes.insert("deviations".into(), json!(prepared.notes));
    }

    region::write_report(out.join("region_report.json"), &report)?;
    write_outcomes(&out.join("outcomes.csv"), &episodes)?;
    region::write_plot_data(out, &trials, &report)?;
    Ok(RegionOutput { report, episodes, overall_rate })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeanReport {
    pub schema_version: u32,
    pub mu_deg: f64,
    pub sigma_deg: f64,
    pub requested: usize,
    pub collected: usize,
    pub attempted: usize,
    /// Fewer successes than requested within the attempt budget.
    pub partial: bool,
    pub success_indices: Vec<usize>,
}

/// Forward-lean preset ankle angle, deg.
pub const LEAN_FORWARD_DEG: f64 = 8.0;
/// Backward-lean preset ankle angle, deg.
pub const LEAN_BACKWARD_DEG: f64 = -1.45;

/// Collects successful recoveries from a fixed lean with zero initial velocity
/// and writes their mean and standard deviation over time.
pub fn cmd_lean_test(config: &RunConfig, ck: &Checkpoint, mu_deg: f64, sigma_deg: f64) -> Result<LeanReport> {
    if !(sigma_deg >= 0.0 && mu_deg.is_finite()) {
        return Err(Error::Config("lean angle must be finite and its spread non-negative".into()));
    }
    let prepared = config.prepare()?;
    let env = config.test_env(&prepared.env)?;
    let out = &config.output_dir;
    create_dir(out)?;
    write_snapshot(config, out, &env)?;

    let rsi = RsiConfig {
        mu_p: Some(mu_deg.to_radians()),
        sigma_p: sigma_deg.to_radians(),
        slope: 0.0,
        sigma_v: 0.0,
        ..config.train.rsi.clone()
    };
    let requested = config.lean.successes;
    let seed = config.train.seed;
    let mut successes: Vec<TestEpisode> = Vec::new();
    let mut attempted = 0;
    while successes.len() < requested && attempted < config.lean.max_episodes {
        let n = LEAN_BATCH.min(config.lean.max_episodes - attempted);
        let start = |i: usize| {
            let mut rng = rng::stream(seed, domain::LEAN, 1, i as u64);
            let s = env.randomize_initial_state(&rsi, &mut rng)?;
            Ok((s.ankle, s.ankle_velocity))
        };
        let batch = run_indexed(&env, ck, attempted..attempted + n, &start, &rsi, None, seed, domain::LEAN, config.train.workers)?;
        attempted += n;
        successes.extend(batch.into_iter().filter(|e| e.success));
    }
    successes.truncate(requested);

    write_mean_sd(&out.join("lean_mean_sd.csv"), &env, &successes)?;
    if let Some(first) = successes.first() {
        write_trace(out.join("lean_example_trace.csv"), &env, &first.outcome)?;
    }
    let report = LeanReport {
        schema_version: SUMMARY_SCHEMA_VERSION,
        mu_deg,
        sigma_deg,
        requested,
        collected: successes.len(),
        attempted,
        partial: successes.len() < requested,
        success_indices: successes.iter().map(|e| e.index).collect(),
    };
    write_json(&out.join("lean_report.json"), &report)?;
    Ok(report)
}

/// Mean and sample standard deviation per policy tick across episodes.
fn write_mean_sd(path: &Path, env: &Env, episodes: &[TestEpisode]) -> Result<()> {
    let model = &env.model;
    let mut names = vec!["com_x".to_string(), "com_vx".to_string()];
    names.extend(model.actuated_coords().iter().map(|&c| model.coords()[c].name.clone()));
    names.extend(model.muscles().map(|m| format!("a_{}", m.name)));
    let mut header = vec!["t".to_string()];
    for n in &names {
        header.push(format!("{n}_mean"));
        header.push(format!("{n}_sd"));
    }
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(&header)?;
    let ticks = episodes.iter().map(|e| e.outcome.times.len()).min().unwrap_or(0);
    for k in 0..ticks {
        let rows: Vec<Vec<f64>> = episodes
            .iter()
            .map(|e| {
                let o = &e.outcome;
                let mut r = vec![o.com[k].x, o.com[k].v];
                r.extend(&o.joint_angles[k]);
                r.extend(&o.activations[k]);
                r
            })
            .collect();
        let mut rec = vec![episodes[0].outcome.times[k].to_string()];
        for j in 0..names.len() {
            let n = rows.len() as f64;
            let mean = rows.iter().map(|r| r[j]).sum::<f64>() / n;
            let var = if rows.len() > 1 { rows.iter().map(|r| (r[j] - mean).powi(2)).sum::<f64>() / (n - 1.0) } else { 0.0 };
            rec.push(mean.to_string());
            rec.push(var.sqrt().to_string());
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub struct ScenarioOutput {
    pub train: TrainSummary,
    pub region: RegionOutput,
}

/// Trains under `scenario` into `<out>/train`, then builds its regions from
/// the best checkpoint into `<out>/region`.
pub fn cmd_scenario(
    config: &RunConfig,
    scenario: Scenario,
    progress: &mut dyn FnMut(usize, &TrainLogRow),
) -> Result<ScenarioOutput> {
    let mut c = config.clone();
    c.scenario = scenario;
    let root = config.output_dir.clone();
    c.output_dir = root.join("train");
    let train = cmd_train(&c, progress)?;
    let ck = load_checkpoint(c.output_dir.join("checkpoint_best.json"))?;
    c.output_dir = root.join("region");
    let region = cmd_region(&c, &ck)?;
    Ok(ScenarioOutput { train, region })
}

/// Regenerates plot CSVs from a region run (report plus outcomes) and reward
/// curves from a training run. Returns the files written.
pub fn cmd_export_plots(run: &Path, out: &Path) -> Result<Vec<PathBuf>> {
    create_dir(out)?;
    let mut written = Vec::new();
    let report_path = run.join("region_report.json");
    if report_path.is_file() {
        let report: RegionReport = serde_json::from_str(&std::fs::read_to_string(&report_path)?)?;
        let rows = read_outcomes(&run.join("outcomes.csv"))?;
        let trials: Vec<Trial> = rows
            .iter()
            .map(|r| Trial { initial: ComState { x: r.x, v: r.v }, success: r.success == 1, trajectory: Vec::new() })
            .collect();
        region::write_plot_data(out, &trials, &report)?;
        written.extend(["points.csv", "pbr_rings.csv", "br_rings.csv", "lip_lines.csv"].map(|f| out.join(f)));
    }

    let mut logs: Vec<(String, PathBuf)> = Vec::new();
    if run.join("train_log.csv").is_file() {
        logs.push((".".into(), run.join("train_log.csv")));
    }
    let mut stage_dirs: Vec<PathBuf> = std::fs::read_dir(run)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir() && p.file_name().is_some_and(|n| n.to_string_lossy().starts_with("stage")))
        .collect();
    stage_dirs.sort();
    for d in stage_dirs {
        if d.join("train_log.csv").is_file() {
            logs.push((d.file_name().unwrap().to_string_lossy().into_owned(), d.join("train_log.csv")));
        }
    }
    if !logs.is_empty() {
        let path = out.join("reward_curve.csv");
        let mut w = csv::Writer::from_path(&path)?;
        w.write_record(["stage", "iteration", "reward", "smoothed_reward_5pt"])?;
        for (stage, log) in &logs {
            let mut r = csv::Reader::from_path(log)?;
            for row in r.deserialize::<TrainLogRow>() {
                let row = row?;
                w.write_record([stage.clone(), row.iteration.to_string(), row.reward.to_string(), row.smoothed_reward_5pt.to_string()])?;
            }
        }
        w.flush()?;
        written.push(path);
    }
    if written.is_empty() {
        return Err(Error::Config(format!("{} holds no region report or training log", run.display())));
    }
    Ok(written)
}

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;
pub const EXIT_PARTIAL: i32 = 4;

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) | Error::ModelConfig(_) | Error::Io(_) | Error::Json(_) | Error::Csv(_) => EXIT_CONFIG,
        Error::Numeric(_) => EXIT_NUMERIC,
        _ => EXIT_FAILURE,
    }
}
