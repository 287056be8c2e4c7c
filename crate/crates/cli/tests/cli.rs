use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::Command;

use msk_balance::env::Method;
use msk_balance::muscle::{muscle_force, MuscleState};
use msk_balance::plant::{presets, Side};
use msk_balance::Error;
use msk_balance_cli::commands::{self, exit_code, EXIT_CONFIG, EXIT_PARTIAL};
use msk_balance_cli::config::HoldCriterion;
use msk_balance_cli::{apply_scenario, RunConfig, Scenario};

const BIN: &str = env!("CARGO_BIN_EXE_msk-balance");

fn tiny(out: &Path) -> RunConfig {
    let mut c = RunConfig::toy();
    c.output_dir = out.to_path_buf();
    c.train.iterations = 2;
    c.train.seed = 5;
    c.train.env.episode_len = 0.5;
    c.train.networks.cpn_hidden = vec![8];
    c.train.networks.value_hidden = vec![8];
    c.train.networks.mcn_hidden = vec![8];
    c.train.ppo.buffer_size = 64;
    c.train.ppo.batch_size = 32;
    c.train.ppo.epochs = 2;
    c.train.episodes_per_batch = 2;
    c.train.mcn_stride = 10;
    c.test.episodes = 40;
    c.test.episode_len = Some(0.5);
    c.test.hold = Some(HoldCriterion { tolerance_deg: 2.0, after: 0.1 });
    c.lean.max_episodes = 200;
    c
}

/// The ankle plant with falling disabled: every episode survives.
fn never_falls(out: &Path) -> RunConfig {
    let mut c = tiny(out);
    c.train.env.fall_pelvis_height = 1e-3;
    c.test.hold = None;
    c
}

fn files(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    for e in std::fs::read_dir(dir).unwrap() {
        let p = e.unwrap().path();
        if p.is_dir() {
            out.extend(files(&p));
        } else {
            out.insert(p.clone(), std::fs::read(&p).unwrap());
        }
    }
    out
}

fn relative(dir: &Path, map: BTreeMap<PathBuf, Vec<u8>>) -> BTreeMap<PathBuf, Vec<u8>> {
    map.into_iter().map(|(k, v)| (k.strip_prefix(dir).unwrap().to_path_buf(), v)).collect()
}

#[test]
fn scenario_parsing() {
    assert_eq!("baseline".parse::<Scenario>().unwrap(), Scenario::Baseline);
    assert_eq!("global:0.7".parse::<Scenario>().unwrap(), Scenario::GlobalWeakness { scale: 0.7 });
    assert_eq!(
        "unilateral:left:0.7".parse::<Scenario>().unwrap(),
        Scenario::UnilateralWeakness { side: Side::Left, scale: 0.7 }
    );
    assert_eq!("delay:1.5".parse::<Scenario>().unwrap(), Scenario::NeuralDelay { factor: 1.5 });
    for bad in ["unilateral:middle:0.7", "global:1.5", "delay:0", "delay:x", "weak"] {
        assert!(matches!(bad.parse::<Scenario>(), Err(Error::Config(_))), "{bad}");
    }
    let s = Scenario::UnilateralWeakness { side: Side::Right, scale: 0.3 };
    assert_eq!(s.to_string().parse::<Scenario>().unwrap(), s);
    let json = serde_json::to_string(&s).unwrap();
    assert_eq!(serde_json::from_str::<Scenario>(&json).unwrap(), s);
    assert!(serde_json::from_str::<Scenario>(r#"{"kind":"unilateral_weakness","side":"middle","scale":0.5}"#).is_err());
}

#[test]
fn baseline_is_identity() {
    let def = presets::default_human();
    assert_eq!(apply_scenario(&def, &Scenario::Baseline).unwrap(), def);
}

#[test]
fn neural_delay_sets_time_constants() {
    let def = apply_scenario(&presets::default_human(), &Scenario::NeuralDelay { factor: 1.5 }).unwrap();
    for m in &def.muscles {
        assert!((m.params.tau_act - 0.015).abs() < 1e-15);
        assert!((m.params.tau_deact - 0.06).abs() < 1e-15);
    }
}

#[test]
fn weakness_sets_rather_than_multiplies() {
    let base = presets::default_human();
    let s = Scenario::GlobalWeakness { scale: 0.7 };
    let once = apply_scenario(&base, &s).unwrap();
    let twice = apply_scenario(&once, &s).unwrap();
    assert_eq!(once, twice);
    assert!(once.muscles.iter().all(|m| m.params.strength_scale == 0.7));

    let state = MuscleState { activation: 0.6, excitation: 0.6, l_norm: 1.1, v_norm: -0.2 };
    for (w, b) in once.muscles.iter().zip(&base.muscles) {
        let fw = muscle_force(&w.params, &state).unwrap();
        let fb = muscle_force(&b.params, &state).unwrap();
        assert!((fw - 0.7 * fb).abs() <= 1e-12 * fb.abs());
    }
}

#[test]
fn unilateral_weakness_touches_one_side() {
    let base = presets::default_human();
    let def = apply_scenario(&base, &Scenario::UnilateralWeakness { side: Side::Left, scale: 0.7 }).unwrap();
    let mut left = 0;
    for m in &def.muscles {
        match m.side {
            Some(Side::Left) => {
                left += 1;
                assert_eq!(m.params.strength_scale, 0.7);
            }
            _ => assert_eq!(m.params.strength_scale, 1.0),
        }
    }
    assert!(left > 0);
    let toy = presets::ankle_pendulum();
    let err = apply_scenario(&toy, &Scenario::UnilateralWeakness { side: Side::Right, scale: 0.5 });
    assert!(matches!(err, Err(Error::Config(_))));
}

#[test]
fn unilateral_runs_carry_deviation_note() {
    let mut c = RunConfig::default();
    c.scenario = Scenario::UnilateralWeakness { side: Side::Left, scale: 0.7 };
    let p = c.prepare().unwrap();
    assert!(!p.env.config.symmetric_action);
    assert_eq!(p.env.n_actions(), 6);
    assert!(p.notes.iter().any(|n| n.starts_with("DEVIATION")));
    assert!(RunConfig::default().prepare().unwrap().notes.is_empty());
}

#[test]
fn config_defaults_and_roundtrip() {
    let dir = tempfile::tempdir().unwrap();
    let c = RunConfig::default();
    assert_eq!(c.test.episodes, 10_000);
    assert_eq!(c.test.alpha, 15.0);
    assert_eq!(c.test.n_internal, 100);
    assert_eq!(c.lean.successes, 100);
    let path = dir.path().join("c.json");
    c.save(&path).unwrap();
    assert_eq!(RunConfig::load(&path).unwrap(), c);
    std::fs::write(&path, r#"{"model": "preset:ankle_pendulum", "train": {"iterations": 7}}"#).unwrap();
    let partial = RunConfig::load(&path).unwrap();
    assert_eq!(partial.train.iterations, 7);
    assert_eq!(partial.train.ppo, RunConfig::default().train.ppo);
}

#[test]
fn missing_model_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = tiny(dir.path());
    c.model = dir.path().join("nope.json").to_string_lossy().into_owned();
    let err = commands::cmd_train(&c, &mut |_, _| {}).unwrap_err();
    assert_eq!(exit_code(&err), EXIT_CONFIG);

    let cfg = dir.path().join("c.json");
    c.save(&cfg).unwrap();
    let status = Command::new(BIN).args(["train", "--config"]).arg(&cfg).output().unwrap();
    assert_eq!(status.status.code(), Some(EXIT_CONFIG));
    assert!(String::from_utf8_lossy(&status.stderr).contains("does not exist"));

    let status = Command::new(BIN).args(["train", "--config"]).arg(dir.path().join("absent.json")).output().unwrap();
    assert_eq!(status.status.code(), Some(EXIT_CONFIG));
}

#[test]
fn init_writes_loadable_config() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("toy.json");
    let out = Command::new(BIN).args(["init", "--preset", "toy", "--out"]).arg(&path).output().unwrap();
    assert!(out.status.success());
    assert_eq!(RunConfig::load(&path).unwrap(), RunConfig::toy());
}

#[test]
fn curriculum_run_writes_two_stages() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = tiny(dir.path());
    c.train.method = Method::M3;
    let s = commands::cmd_train(&c, &mut |_, _| {}).unwrap();
    assert_eq!(s.stages.len(), 2);
    assert_eq!(s.stages[0].dir, "stage1_m1");
    assert_eq!(s.stages[1].dir, "stage2_m2");
    assert_eq!(s.stages[1].initial_cpn_hash, s.stages[0].best_cpn_hash);
    for st in &s.stages {
        for f in ["train_log.csv", "checkpoint_best.json", "checkpoint_last.json"] {
            assert!(dir.path().join(&st.dir).join(f).is_file());
        }
    }
    for f in ["config_snapshot.json", "model_effective.json", "summary.json", "checkpoint_best.json"] {
        assert!(dir.path().join(f).is_file(), "{f}");
    }
    let snap = RunConfig::load(dir.path().join("config_snapshot.json")).unwrap();
    assert_eq!(snap, c);
}

#[test]
fn training_is_byte_identical_across_reruns() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for d in [&a, &b] {
        let mut c = tiny(d.path());
        c.output_dir = d.path().join("run");
        commands::cmd_train(&c, &mut |_, _| {}).unwrap();
    }
    let fa = relative(&a.path().join("run"), files(&a.path().join("run")));
    let fb = relative(&b.path().join("run"), files(&b.path().join("run")));
    // The snapshot records the output directory, which differs by construction.
    let strip = |m: BTreeMap<PathBuf, Vec<u8>>| -> BTreeMap<PathBuf, Vec<u8>> {
        m.into_iter().filter(|(k, _)| k != Path::new("config_snapshot.json")).collect()
    };
    assert_eq!(strip(fa), strip(fb));
}

fn trained(dir: &Path, c: &RunConfig) -> msk_balance::nnet::Checkpoint {
    let mut t = c.clone();
    t.output_dir = dir.join("train");
    commands::cmd_train(&t, &mut |_, _| {}).unwrap();
    commands::load_checkpoint(dir.join("train/checkpoint_best.json")).unwrap()
}

#[test]
fn region_smoke_run() {
    let dir = tempfile::tempdir().unwrap();
    let c = tiny(&dir.path().join("region"));
    let ck = trained(dir.path(), &c);
    let out = commands::cmd_region(&c, &ck).unwrap();
    let r = &out.report;
    assert_eq!(r.n_trials, 40);
    assert!((0.0..=1.0).contains(&out.overall_rate));
    match (&r.pbr, &r.degenerate) {
        (Some(pbr), None) => {
            assert!((0.0..=1.0).contains(&pbr.internal_rate));
            assert!(pbr.area >= 0.0);
        }
        (None, Some(_)) => {}
        other => panic!("inconsistent report {other:?}"),
    }
    for f in ["region_report.json", "outcomes.csv", "points.csv", "pbr_rings.csv", "br_rings.csv", "lip_lines.csv"] {
        assert!(c.output_dir.join(f).is_file(), "{f}");
    }
    let rows = commands::read_outcomes(&c.output_dir.join("outcomes.csv")).unwrap();
    assert_eq!(rows.len(), 40);
}

#[test]
fn always_succeeding_stub_has_unit_rate() {
    let dir = tempfile::tempdir().unwrap();
    let c = never_falls(&dir.path().join("region"));
    let ck = trained(dir.path(), &c);
    let out = commands::cmd_region(&c, &ck).unwrap();
    assert_eq!(out.overall_rate, 1.0);
    let pbr = out.report.pbr.as_ref().unwrap();
    assert_eq!(pbr.overall_rate, 1.0);
    assert_eq!(pbr.internal_rate, 1.0);
    assert_eq!(pbr.n_fail, 0);
}

#[test]
fn region_output_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let base = tiny(&dir.path().join("unused"));
    let ck = trained(dir.path(), &base);
    let mut maps = Vec::new();
    for name in ["a", "b"] {
        let mut c = base.clone();
        c.output_dir = dir.path().join(name);
        commands::cmd_region(&c, &ck).unwrap();
        let m = relative(&c.output_dir, files(&c.output_dir));
        maps.push(m.into_iter().filter(|(k, _)| k != Path::new("config_snapshot.json")).collect::<BTreeMap<_, _>>());
    }
    assert_eq!(maps[0], maps[1]);
}

#[test]
fn lean_test_collects_requested_successes() {
    let dir = tempfile::tempdir().unwrap();
    let c = never_falls(&dir.path().join("lean"));
    let ck = trained(dir.path(), &c);
    let r = commands::cmd_lean_test(&c, &ck, commands::LEAN_FORWARD_DEG, 0.1).unwrap();
    assert_eq!(r.collected, 100);
    assert_eq!(r.success_indices.len(), 100);
    assert!(!r.partial);
    let mut rd = csv::Reader::from_path(c.output_dir.join("lean_mean_sd.csv")).unwrap();
    let headers = rd.headers().unwrap().clone();
    assert!(headers.iter().any(|h| h == "com_x_mean") && headers.iter().any(|h| h == "a_plantarflexor_sd"));
    assert_eq!(rd.records().count(), 15);
}

#[test]
fn lean_test_reports_partial_results() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = tiny(&dir.path().join("lean"));
    c.scenario = Scenario::GlobalWeakness { scale: 0.0 };
    c.train.env.episode_len = 3.0;
    c.test.episode_len = Some(3.0);
    c.lean.max_episodes = 20;
    let ck = trained(dir.path(), &tiny(dir.path()));
    let r = commands::cmd_lean_test(&c, &ck, 20.0, 0.1).unwrap();
    assert!(r.partial);
    assert_eq!(r.attempted, 20);
    assert_eq!(r.collected, 0);

    let cfg = dir.path().join("c.json");
    c.save(&cfg).unwrap();
    let out = Command::new(BIN)
        .args(["lean-test", "--mu-deg", "20", "--config"])
        .arg(&cfg)
        .arg("--checkpoint")
        .arg(dir.path().join("train/checkpoint_best.json"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(EXIT_PARTIAL), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn export_plots_from_runs() {
    let dir = tempfile::tempdir().unwrap();
    let c = tiny(&dir.path().join("region"));
    let ck = trained(dir.path(), &c);
    commands::cmd_region(&c, &ck).unwrap();
    let plots = dir.path().join("plots");
    let written = commands::cmd_export_plots(&c.output_dir, &plots).unwrap();
    assert_eq!(written.len(), 4);
    assert_eq!(std::fs::read(plots.join("points.csv")).unwrap(), std::fs::read(c.output_dir.join("points.csv")).unwrap());

    let curve = commands::cmd_export_plots(&dir.path().join("train"), &plots).unwrap();
    assert_eq!(curve, vec![plots.join("reward_curve.csv")]);
    assert!(matches!(commands::cmd_export_plots(&plots, &dir.path().join("x")), Err(Error::Config(_))));
}

#[test]
fn scenario_command_trains_then_maps() {
    let dir = tempfile::tempdir().unwrap();
    let c = tiny(dir.path());
    let out = commands::cmd_scenario(&c, Scenario::GlobalWeakness { scale: 0.7 }, &mut |_, _| {}).unwrap();
    assert_eq!(out.train.scenario, Scenario::GlobalWeakness { scale: 0.7 });
    assert!(dir.path().join("train/checkpoint_best.json").is_file());
    assert!(dir.path().join("region/region_report.json").is_file());
    let model: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("train/model_effective.json")).unwrap()).unwrap();
    assert!(model["muscles"].as_array().unwrap().iter().all(|m| m["strength_scale"] == 0.7));
}
