//! One function per CLI subcommand. Each writes its artifacts under the
//! configured output directory and returns the record it wrote.

use std::collections::BTreeMap;
use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use vrank_core::learners::EpochRecord;
use vrank_core::log::write_session_log;
use vrank_core::{Algo, Checkpoint, Error, Feedback, RewardSpec, Trainer, VRConfig, WorldConfig};

use crate::config::{DataConfig, ExperimentConfig};
use crate::data::{dataset, split, splits};
use crate::experiments::{behavior_rollout, measure, rollout, train_and_test};
use crate::stats::Summary;

pub const SESSIONS_FILE: &str = "sessions.csv";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const TRACE_FILE: &str = "trace.jsonl";
pub const CHECKPOINT_FILE: &str = "checkpoint.json";

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
}

pub fn run_dir(out: &Path, algo: Algo, seed: u64) -> PathBuf {
    out.join(algo.name()).join(format!("seed_{seed}"))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub seed: u64,
    pub sessions_file: String,
    pub catalog_size: usize,
    pub sessions: usize,
    pub transitions: usize,
    pub clicks: usize,
    pub purchases: usize,
    pub reward_spec: RewardSpec,
    pub world: WorldConfig,
    pub data: DataConfig,
}

/// Simulates one logged dataset per seed into `out/seed_<seed>/`.
pub fn simulate(config: &ExperimentConfig) -> Result<Vec<Manifest>> {
    config
        .seeds
        .iter()
        .map(|&seed| {
            let data = dataset(config, seed)?;
            let dir = config.out.join(format!("seed_{seed}"));
            create_dir(&dir)?;
            write_session_log(&dir.join(SESSIONS_FILE), &data)?;
            let manifest = Manifest {
                seed,
                sessions_file: SESSIONS_FILE.into(),
                catalog_size: data.catalog_size(),
                sessions: data.num_sessions(),
                transitions: data.num_transitions(),
                clicks: data.count_feedback(Feedback::Click),
                purchases: data.count_feedback(Feedback::Purchase),
                reward_spec: *data.reward_spec(),
                world: config.world_for(seed),
                data: config.data.clone(),
            };
            write_json(&dir.join(MANIFEST_FILE), &manifest)?;
            Ok(manifest)
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub algo: Algo,
    pub seed: u64,
    pub dir: PathBuf,
    pub epochs: usize,
    pub last: Option<EpochRecord>,
}

/// Trains `config.train.algo` for each seed, appending one trace line and
/// refreshing the checkpoint after every epoch. With `resume`, continues
/// that checkpoint (its seed, algorithm and learner settings win) up to
/// `config.train.epochs` epochs in total.
pub fn train(config: &ExperimentConfig, resume: Option<&Path>) -> Result<Vec<TrainSummary>> {
    if let Some(path) = resume {
        let ckpt = Checkpoint::load(path)?;
        let data = splits(config, ckpt.seed)?;
        let trainer = Trainer::resume(
            ckpt.state,
            ckpt.epochs_done,
            &data.train,
            Some(&data.valid),
            &ckpt.config,
            ckpt.seed,
        )?;
        return Ok(vec![drive(config, trainer, &ckpt.config, ckpt.seed, true)?]);
    }
    let algo = config.train.algo;
    config
        .seeds
        .par_iter()
        .map(|&seed| {
            let data = splits(config, seed)?;
            let trainer = Trainer::new(algo, &data.train, Some(&data.valid), &config.learner, seed)?;
            drive(config, trainer, &config.learner, seed, false)
        })
        .collect()
}

fn drive(config: &ExperimentConfig, mut trainer: Trainer, learner: &VRConfig, seed: u64, append: bool) -> Result<TrainSummary> {
    let algo = trainer.algo();
    let dir = run_dir(&config.out, algo, seed);
    create_dir(&dir)?;
    let trace_path = dir.join(TRACE_FILE);
    let mut trace = OpenOptions::new()
        .create(true)
        .write(true)
        .append(append)
        .truncate(!append)
        .open(&trace_path)
        .with_context(|| format!("opening {}", trace_path.display()))?;
    let mut last = None;
    while trainer.epochs_done() < config.train.epochs {
        let record = trainer.run_epoch()?;
        writeln!(trace, "{}", serde_json::to_string(&record)?)?;
        trace.flush()?;
        Checkpoint::new(trainer.state().clone(), trainer.epochs_done(), seed, learner.clone())
            .save(dir.join(CHECKPOINT_FILE))?;
        last = Some(record);
    }
    Ok(TrainSummary {
        algo,
        seed,
        dir,
        epochs: trainer.epochs_done(),
        last,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub algo: Algo,
    pub seed: u64,
    pub count: usize,
    pub hr: BTreeMap<usize, f64>,
    pub ndcg: BTreeMap<usize, f64>,
    pub bias: Option<f64>,
}

/// Offline metrics of a checkpoint on the test split of its seed's data.
pub fn eval(config: &ExperimentConfig, checkpoint: &Path) -> Result<EvalRecord> {
    let ckpt = Checkpoint::load(checkpoint)?;
    let data = dataset(config, ckpt.seed)?;
    if data.catalog_size() != ckpt.state.catalog_size() {
        return Err(Error::Validation(format!(
            "checkpoint catalog {} differs from data catalog {}",
            ckpt.state.catalog_size(),
            data.catalog_size()
        ))
        .into());
    }
    let test = split(config, &data, ckpt.seed)?.test;
    if test.num_transitions() == 0 {
        return Err(Error::Validation("test split is empty".into()).into());
    }
    let (ranking, bias) = measure(&ckpt.state, &test, &config.ks(), &ckpt.config)?;
    let record = EvalRecord {
        algo: ckpt.state.algo,
        seed: ckpt.seed,
        count: ranking.count,
        hr: ranking.hr,
        ndcg: ranking.ndcg,
        bias,
    };
    create_dir(&config.out)?;
    write_json(&config.out.join("eval.json"), &record)?;
    Ok(record)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OnlineSeed {
    pub seed: u64,
    pub ctr: f64,
    pub coverage: f64,
    pub behavior_ctr: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OnlineRecord {
    pub algo: Algo,
    pub steps: usize,
    pub k: usize,
    pub ctr: Summary,
    pub coverage: Summary,
    pub behavior_ctr: Summary,
    pub per_seed: Vec<OnlineSeed>,
}

/// Online CTR on fresh simulated users. With a checkpoint that state is
/// rolled out for every seed; otherwise each seed trains its own.
pub fn online(config: &ExperimentConfig, checkpoint: Option<&Path>) -> Result<OnlineRecord> {
    let fixed = checkpoint.map(Checkpoint::load).transpose()?;
    let algo = fixed.as_ref().map_or(config.train.algo, |c| c.state.algo);
    let per_seed: Vec<OnlineSeed> = config
        .seeds
        .par_iter()
        .map(|&seed| {
            let report = match &fixed {
                Some(c) => rollout(config, &c.state, seed)?,
                None => {
                    let run = train_and_test(config, algo, &config.learner, seed)?;
                    rollout(config, &run.state, seed)?
                }
            };
            Ok(OnlineSeed {
                seed,
                ctr: report.ctr,
                coverage: report.coverage,
                behavior_ctr: behavior_rollout(config, seed)?.ctr,
            })
        })
        .collect::<Result<_>>()?;
    let pick = |f: fn(&OnlineSeed) -> f64| Summary::of(&per_seed.iter().map(f).collect::<Vec<_>>());
    let record = OnlineRecord {
        algo,
        steps: config.eval.online_steps,
        k: config.eval.online_k,
        ctr: pick(|s| s.ctr),
        coverage: pick(|s| s.coverage),
        behavior_ctr: pick(|s| s.behavior_ctr),
        per_seed,
    };
    create_dir(&config.out)?;
    write_json(&config.out.join(format!("online_{algo}.json")), &record)?;
    Ok(record)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BiasRecord {
    pub algo: Algo,
    pub gamma: f64,
    pub bias: Summary,
    pub per_seed: Vec<(u64, f64)>,
}

/// Test-split overestimation bias of a value-based learner across seeds.
pub fn bias(config: &ExperimentConfig) -> Result<BiasRecord> {
    let algo = config.train.algo;
    if !algo.has_q() {
        return Err(Error::Config(format!("{algo} has no value head to measure")).into());
    }
    let per_seed: Vec<(u64, f64)> = config
        .seeds
        .par_iter()
        .map(|&seed| {
            let run = train_and_test(config, algo, &config.learner, seed)?;
            Ok((seed, run.bias.unwrap_or(f64::NAN)))
        })
        .collect::<Result<_>>()?;
    let record = BiasRecord {
        algo,
        gamma: config.learner.gamma,
        bias: Summary::of(&per_seed.iter().map(|s| s.1).collect::<Vec<_>>()),
        per_seed,
    };
    create_dir(&config.out)?;
    write_json(&config.out.join(format!("bias_{algo}.json")), &record)?;
    Ok(record)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub algo: Algo,
    pub value: f64,
    pub seed: u64,
    pub hr: BTreeMap<usize, f64>,
    pub ndcg: BTreeMap<usize, f64>,
    pub bias: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepOutput {
    pub rows: Vec<SweepRow>,
    pub curve: PathBuf,
    pub summary: PathBuf,
}

/// Trains every configured algorithm at every grid value and seed. Writes a
/// per-seed curve CSV and a mean/std summary CSV, both with header rows.
pub fn sweep(config: &ExperimentConfig) -> Result<SweepOutput> {
    let param = config.sweep.param;
    let mut jobs = Vec::new();
    for &algo in &config.sweep.algos {
        for value in config.sweep.grid() {
            for &seed in &config.seeds {
                jobs.push((algo, value, seed));
            }
        }
    }
    let rows: Vec<SweepRow> = jobs
        .par_iter()
        .map(|&(algo, value, seed)| {
            let mut learner = config.learner.clone();
            param.apply(&mut learner, value);
            let run = train_and_test(config, algo, &learner, seed)?;
            Ok(SweepRow {
                algo,
                value,
                seed,
                hr: run.ranking.hr,
                ndcg: run.ranking.ndcg,
                bias: run.bias,
            })
        })
        .collect::<Result<_>>()?;

    create_dir(&config.out)?;
    let ks = config.ks();
    let name = param.name();
    let curve = config.out.join(format!("sweep_{name}.csv"));
    let mut w = csv::Writer::from_path(&curve).with_context(|| format!("writing {}", curve.display()))?;
    let mut header = vec!["algo".to_string(), name.to_string(), "seed".into()];
    for k in &ks {
        header.push(format!("hr@{k}"));
        header.push(format!("ndcg@{k}"));
    }
    header.push("bias".into());
    w.write_record(&header)?;
    for r in &rows {
        let mut rec = vec![r.algo.to_string(), r.value.to_string(), r.seed.to_string()];
        for k in &ks {
            rec.push(r.hr[k].to_string());
            rec.push(r.ndcg[k].to_string());
        }
        rec.push(r.bias.map_or(String::new(), |b| b.to_string()));
        w.write_record(&rec)?;
    }
    w.flush()?;

    let summary = config.out.join(format!("sweep_{name}_summary.csv"));
    let mut w = csv::Writer::from_path(&summary).with_context(|| format!("writing {}", summary.display()))?;
    w.write_record(["algo", name, "metric", "mean", "std", "n"])?;
    for &algo in &config.sweep.algos {
        for value in config.sweep.grid() {
            let group: Vec<&SweepRow> = rows.iter().filter(|r| r.algo == algo && r.value == value).collect();
            let mut metrics: Vec<(String, Vec<f64>)> = Vec::new();
            for k in &ks {
                metrics.push((format!("hr@{k}"), group.iter().map(|r| r.hr[k]).collect()));
                metrics.push((format!("ndcg@{k}"), group.iter().map(|r| r.ndcg[k]).collect()));
            }
            if algo.has_q() {
                metrics.push(("bias".into(), group.iter().filter_map(|r| r.bias).collect()));
            }
            for (metric, values) in metrics {
                let s = Summary::of(&values);
                w.write_record([
                    algo.to_string(),
                    value.to_string(),
                    metric,
                    s.mean.to_string(),
                    s.std.to_string(),
                    s.n.to_string(),
                ])?;
            }
        }
    }
    w.flush()?;
    Ok(SweepOutput { rows, curve, summary })
}
