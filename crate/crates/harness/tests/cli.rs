use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use vrank_core::learners::EpochRecord;
use vrank_core::log::read_sessions;
use vrank_core::{Algo, Checkpoint, Error, Featurizer, LearnerState, VRConfig};
use vrank_harness::commands::{self, Manifest, CHECKPOINT_FILE, MANIFEST_FILE, SESSIONS_FILE, TRACE_FILE};
use vrank_harness::data::dataset;
use vrank_harness::ExperimentConfig;

const SMALL: &str = r#"
seeds = [1]
[world]
catalog_size = 20
num_categories = 5
[data]
sessions = 150
[train]
epochs = 2
[learner]
pretrain_epochs = 2
[eval]
online_steps = 500
"#;

fn vrank(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_vrank")).args(args).output().expect("binary runs")
}

fn small_config(dir: &Path) -> PathBuf {
    let path = dir.join("small.toml");
    fs::write(&path, SMALL).unwrap();
    path
}

fn run_ok(args: &[&str]) -> String {
    let out = vrank(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn trace_lines(path: &Path) -> Vec<EpochRecord> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

#[test]
fn simulate_manifest_matches_log_and_is_seeded() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let cfg = cfg.to_str().unwrap();
    let out_a = dir.path().join("a");
    let out_b = dir.path().join("b");
    run_ok(&["simulate", "--config", cfg, "--seed", "4", "--out", out_a.to_str().unwrap()]);
    run_ok(&["simulate", "--config", cfg, "--seed", "4", "--out", out_b.to_str().unwrap()]);
    run_ok(&["simulate", "--config", cfg, "--seed", "5", "--out", out_b.to_str().unwrap()]);

    let seed_dir = out_a.join("seed_4");
    let manifest: Manifest = serde_json::from_str(&fs::read_to_string(seed_dir.join(MANIFEST_FILE)).unwrap()).unwrap();
    let sessions = read_sessions(&seed_dir.join(SESSIONS_FILE)).unwrap();
    let events: Vec<_> = sessions.iter().flatten().collect();
    assert_eq!(manifest.sessions, sessions.len());
    assert_eq!(manifest.transitions, events.len());
    assert_eq!(manifest.clicks + manifest.purchases, events.len());

    let a = fs::read(seed_dir.join(SESSIONS_FILE)).unwrap();
    assert_eq!(a, fs::read(out_b.join("seed_4").join(SESSIONS_FILE)).unwrap());
    assert_eq!(
        fs::read(seed_dir.join(MANIFEST_FILE)).unwrap(),
        fs::read(out_b.join("seed_4").join(MANIFEST_FILE)).unwrap()
    );
    assert_ne!(a, fs::read(out_b.join("seed_5").join(SESSIONS_FILE)).unwrap());

    let mut config = ExperimentConfig::load(Path::new(cfg)).unwrap();
    let original = dataset(&config, 4).unwrap();
    config.data.path = Some(seed_dir.join(SESSIONS_FILE));
    assert_eq!(dataset(&config, 4).unwrap(), original);
}

#[test]
fn train_traces_and_resume() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let cfg = cfg.to_str().unwrap();

    let mle_out = dir.path().join("mle");
    run_ok(&["train", "--config", cfg, "--algo", "mle", "--out", mle_out.to_str().unwrap()]);
    let trace = trace_lines(&commands::run_dir(&mle_out, Algo::Mle, 1).join(TRACE_FILE));
    assert_eq!(trace.len(), 2);
    assert!(trace.iter().all(|r| r.loss_policy.is_some() && r.loss_q.is_none()));

    // Four epochs straight through versus two, then resumed to four.
    let full = dir.path().join("full");
    let config_4 = dir.path().join("four.toml");
    fs::write(&config_4, SMALL.replace("[train]\nepochs = 2", "[train]\nepochs = 4")).unwrap();
    let config_4 = config_4.to_str().unwrap();
    run_ok(&["train", "--config", config_4, "--algo", "vr", "--out", full.to_str().unwrap()]);
    let split = dir.path().join("split");
    run_ok(&["train", "--config", cfg, "--algo", "vr", "--out", split.to_str().unwrap()]);
    let split_dir = commands::run_dir(&split, Algo::Vr, 1);
    let ckpt = split_dir.join(CHECKPOINT_FILE);
    run_ok(&["train", "--config", config_4, "--out", split.to_str().unwrap(), "--checkpoint", ckpt.to_str().unwrap()]);

    let full_dir = commands::run_dir(&full, Algo::Vr, 1);
    let full_trace = fs::read_to_string(full_dir.join(TRACE_FILE)).unwrap();
    assert_eq!(full_trace, fs::read_to_string(split_dir.join(TRACE_FILE)).unwrap());
    assert_eq!(
        fs::read(full_dir.join(CHECKPOINT_FILE)).unwrap(),
        fs::read(split_dir.join(CHECKPOINT_FILE)).unwrap()
    );
    let vr = trace_lines(&full_dir.join(TRACE_FILE));
    assert_eq!(vr.len(), 4);
    assert!(vr.iter().all(|r| r.loss_q.is_some() && r.bias.is_some()));
}

#[test]
fn uniform_checkpoint_hits_top_five_by_chance() {
    let dir = tempfile::tempdir().unwrap();
    let config = ExperimentConfig {
        seeds: vec![1],
        out: dir.path().join("eval"),
        ..ExperimentConfig::default()
    };
    let learner = VRConfig::default();
    let state = LearnerState::init(Algo::Mle, Featurizer::new(100, learner.decay).unwrap(), &learner, 1);
    let path = dir.path().join("uniform.json");
    Checkpoint::new(state, 0, 1, learner).save(&path).unwrap();
    let record = commands::eval(&config, &path).unwrap();
    assert!((record.hr[&5] - 0.05).abs() < 0.02, "hr@5 {}", record.hr[&5]);
    assert!(config.out.join("eval.json").exists());
}

#[test]
fn eval_reports_file_and_validation_errors() {
    let dir = tempfile::tempdir().unwrap();
    let mut config = ExperimentConfig::parse(SMALL).unwrap();
    config.out = dir.path().to_path_buf();
    let missing = dir.path().join("nope.json");
    let err = commands::eval(&config, &missing).unwrap_err();
    assert!(matches!(err.downcast_ref::<Error>(), Some(Error::Io { .. })), "{err:#}");
    let out = vrank(&["eval", "--checkpoint", missing.to_str().unwrap()]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("nope.json"));

    let learner = VRConfig::default();
    let state = LearnerState::init(Algo::Mle, Featurizer::new(20, learner.decay).unwrap(), &learner, 1);
    let ckpt = dir.path().join("c.json");
    Checkpoint::new(state, 0, 1, learner).save(&ckpt).unwrap();
    config.data.split = [0.98, 0.01, 0.01];
    config.data.sessions = 20;
    let err = commands::eval(&config, &ckpt).unwrap_err();
    assert!(matches!(err.downcast_ref::<Error>(), Some(Error::Validation(_))), "{err:#}");
}

#[test]
fn sweep_emits_one_row_per_value_and_seed() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("sweep.toml");
    fs::write(&path, format!("{SMALL}\n[sweep]\nparam = \"gamma\"\nvalues = [0.0, 0.3, 0.5, 0.7, 0.9]\n")).unwrap();
    let out = dir.path().join("out");
    run_ok(&["sweep", "--config", path.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    let curve = fs::read_to_string(out.join("sweep_gamma.csv")).unwrap();
    let mut lines = curve.lines();
    assert_eq!(lines.next().unwrap(), "algo,gamma,seed,hr@5,ndcg@5,hr@20,ndcg@20,bias");
    assert_eq!(lines.filter(|l| l.contains(",1,")).count(), 5);
    let summary = fs::read_to_string(out.join("sweep_gamma_summary.csv")).unwrap();
    assert!(summary.starts_with("algo,gamma,metric,mean,std,n"));
}

#[test]
fn online_and_bias_summaries() {
    let dir = tempfile::tempdir().unwrap();
    let mut config = ExperimentConfig::parse(SMALL).unwrap();
    config.seeds = vec![1, 2];
    config.out = dir.path().to_path_buf();
    config.train.algo = Algo::Dqn;
    let online = commands::online(&config, None).unwrap();
    assert_eq!(online.per_seed.len(), 2);
    assert_eq!(online.ctr.n, 2);
    assert!((0.0..=1.0).contains(&online.ctr.mean));
    let bias = commands::bias(&config).unwrap();
    assert!(bias.bias.mean >= 0.0 && bias.bias.n == 2);
    config.train.algo = Algo::Mle;
    assert!(commands::bias(&config).is_err());
    assert!(dir.path().join("online_dqn.json").exists());
}

#[test]
fn verify_reports_each_check() {
    let stdout = run_ok(&["verify"]);
    let lines: Vec<&str> = stdout.lines().collect();
    assert_eq!(lines.len(), 6);
    assert!(lines.iter().all(|l| l.starts_with("PASS")), "{stdout}");
}
