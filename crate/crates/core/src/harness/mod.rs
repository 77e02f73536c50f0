//! Config-driven experiment runs: training with checkpoints and metrics,
//! evaluation, and export of the controller's decisions for analysis.

mod checkpoint;
mod config;
mod report;

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::architecture::Model;
use crate::autodiff::ParamStore;
use crate::controller::ControllerPolicy;
use crate::error::{Error, Result};
use crate::tasks::{Split, Suite};
use crate::trainer::{evaluate, fine_tune_all, metric_name, EpochRecord, TrainState, Trainer};

pub use checkpoint::{Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use config::{ExperimentConfig, SuiteConfig};
pub use report::{
    cmd_export_embeddings, cmd_export_selection_coords, cmd_search_report, embeddings_csv, search_report,
    selection_coords_csv, shared_prefix_len, SearchReport, TaskDecision,
};

pub const METRICS_FILE: &str = "metrics.csv";
pub const RESULTS_FILE: &str = "results.csv";
pub const BEST_CHECKPOINT: &str = "best.ckpt";
pub const LAST_CHECKPOINT: &str = "last.ckpt";

/// Writes `contents` to a sibling temporary file, then renames it over `path`.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    let name = path
        .file_name()
        .ok_or_else(|| Error::Contract(format!("{} is not a file path", path.display())))?;
    let tmp = path.with_file_name(format!(".{}.tmp", name.to_string_lossy()));
    fs::write(&tmp, contents)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

/// A built experiment: data, layers, controller, parameters and training
/// progress.
#[derive(Clone, Debug)]
pub struct Experiment {
    pub config: ExperimentConfig,
    /// Directory that relative data paths resolve against.
    pub base_dir: PathBuf,
    pub suite: Suite,
    pub model: Model,
    pub policy: Option<ControllerPolicy>,
    pub store: ParamStore,
    pub state: TrainState,
}

impl Experiment {
    pub fn build(config: ExperimentConfig, base_dir: &Path) -> Result<Self> {
        config.validate()?;
        let suite = config.suite.load(base_dir)?;
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(1);
        let model = Model::build(&mut store, &suite, &config.model, &mut rng)?;
        let policy = if config.model.scheme.uses_controller() {
            Some(ControllerPolicy::new(
                &mut store,
                suite.tasks.len(),
                config.model.pool_size,
                config.train.max_depth,
                &config.controller,
                &mut rng,
            )?)
        } else {
            None
        };
        let state = TrainState::new(config.seed);
        Ok(Experiment {
            config,
            base_dir: base_dir.to_path_buf(),
            suite,
            model,
            policy,
            store,
            state,
        })
    }

    pub fn trainer(&self) -> Result<Trainer<'_>> {
        Trainer::new(&self.suite, &self.model, self.policy.as_ref(), &self.config.train)
    }

    /// Runs up to `limit` epochs (all remaining when `None`).
    pub fn train(&mut self, limit: Option<usize>) -> Result<()> {
        let trainer = Trainer::new(&self.suite, &self.model, self.policy.as_ref(), &self.config.train)?;
        trainer.train(&mut self.store, &mut self.state, limit)
    }

    pub fn run_epoch(&mut self) -> Result<EpochRecord> {
        let trainer = Trainer::new(&self.suite, &self.model, self.policy.as_ref(), &self.config.train)?;
        trainer.run_epoch(&mut self.store, &mut self.state)
    }

    pub fn finished(&self) -> bool {
        self.state.finished(&self.config.train)
    }

    pub fn restore_best(&mut self) -> Result<()> {
        if let Some(values) = &self.state.best_params {
            self.store.restore(values)?;
        }
        Ok(())
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            version: CHECKPOINT_VERSION,
            config: self.config.clone(),
            base_dir: self.base_dir.clone(),
            store: self.store.clone(),
            state: self.state.clone(),
        }
    }

    /// Rebuilds the experiment from its configuration and installs the saved
    /// parameters and training state.
    pub fn from_checkpoint(ckpt: Checkpoint) -> Result<Self> {
        let mut exp = Experiment::build(ckpt.config, &ckpt.base_dir)?;
        if exp.store.len() != ckpt.store.len()
            || exp
                .store
                .ids()
                .zip(ckpt.store.ids())
                .any(|(a, b)| exp.store.name(a) != ckpt.store.name(b) || exp.store.value(a).shape() != ckpt.store.value(b).shape())
        {
            return Err(Error::Checkpoint("parameters do not match the configured model".into()));
        }
        exp.store = ckpt.store;
        exp.state = ckpt.state;
        Ok(exp)
    }

    /// Current metric of every task on `split`.
    pub fn evaluate_split(&self, split: Split) -> Result<Vec<f64>> {
        let trainer = self.trainer()?;
        trainer
            .networks(&self.store)?
            .iter()
            .zip(&self.suite.tasks)
            .map(|(net, task)| evaluate(net, &self.store, task.split(split), self.config.train.batch_size))
            .collect()
    }
}

/// `epoch,task,split,metric,reward_mean`, one row per epoch and task.
pub fn metrics_csv(history: &[EpochRecord]) -> String {
    let mut out = String::from("epoch,task,split,metric,reward_mean\n");
    for rec in history {
        for t in &rec.tasks {
            let _ = writeln!(out, "{},{},dev,{},{}", rec.epoch, t.task, t.dev_metric, t.reward_mean);
        }
    }
    out
}

/// Final per-task outcome of a run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskResult {
    pub task_id: usize,
    pub name: String,
    pub actions: Vec<usize>,
    pub metric: String,
    pub dev_before: f64,
    pub dev_after: f64,
    pub test: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub out_dir: PathBuf,
    pub epochs: usize,
    pub best_epoch: Option<usize>,
    pub tasks: Vec<TaskResult>,
    pub mean_test: f64,
}

fn actions_str(actions: &[usize]) -> String {
    actions.iter().map(usize::to_string).collect::<Vec<_>>().join(" ")
}

pub fn results_csv(results: &[TaskResult]) -> String {
    let mut out = String::from("task_id,name,actions,metric,dev_before_finetune,dev_after_finetune,test\n");
    for r in results {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.task_id,
            r.name,
            actions_str(&r.actions),
            r.metric,
            r.dev_before,
            r.dev_after,
            r.test
        );
    }
    out
}

/// Trains `exp` to completion, writing metrics and checkpoints after every
/// epoch, then restores the best epoch, fine-tunes each task's private
/// parameters and writes the test results.
pub fn run_training(exp: &mut Experiment, out_dir: &Path) -> Result<RunSummary> {
    fs::create_dir_all(out_dir)?;
    write_atomic(&out_dir.join("config.toml"), exp.config.to_toml()?.as_bytes())?;
    while !exp.finished() {
        exp.run_epoch()?;
        write_atomic(&out_dir.join(METRICS_FILE), metrics_csv(&exp.state.history).as_bytes())?;
        let ckpt = exp.checkpoint();
        ckpt.save(&out_dir.join(LAST_CHECKPOINT))?;
        if exp.state.best_epoch == Some(exp.state.epochs_done) {
            ckpt.save(&out_dir.join(BEST_CHECKPOINT))?;
        }
    }
    write_atomic(&out_dir.join(METRICS_FILE), metrics_csv(&exp.state.history).as_bytes())?;
    exp.restore_best()?;

    let trainer = Trainer::new(&exp.suite, &exp.model, exp.policy.as_ref(), &exp.config.train)?;
    let archs = trainer.architectures(&exp.store)?;
    let tuned = fine_tune_all(&trainer, &exp.store, &mut exp.state.rng)?;
    let mut tasks = Vec::new();
    for ((task, ft), actions) in exp.suite.tasks.iter().zip(&tuned).zip(archs) {
        let test = evaluate(&ft.network, &ft.store, &task.test, exp.config.train.batch_size)?;
        tasks.push(TaskResult {
            task_id: task.id,
            name: task.name.clone(),
            actions,
            metric: metric_name(task.kind).to_string(),
            dev_before: ft.dev_before,
            dev_after: ft.dev_after,
            test,
        });
    }
    write_atomic(&out_dir.join(RESULTS_FILE), results_csv(&tasks).as_bytes())?;
    let mean_test = tasks.iter().map(|t| t.test).sum::<f64>() / tasks.len() as f64;
    Ok(RunSummary {
        out_dir: out_dir.to_path_buf(),
        epochs: exp.state.epochs_done,
        best_epoch: exp.state.best_epoch,
        tasks,
        mean_test,
    })
}

/// Validates the configuration, then trains a fresh experiment into
/// `out_dir`. Nothing is written when the configuration is invalid.
pub fn cmd_train(config: ExperimentConfig, base_dir: &Path, out_dir: &Path) -> Result<RunSummary> {
    config.validate()?;
    let mut exp = Experiment::build(config, base_dir)?;
    run_training(&mut exp, out_dir)
}

/// Continues a run from a checkpoint into `out_dir`.
pub fn cmd_resume(checkpoint: &Path, out_dir: &Path) -> Result<RunSummary> {
    let mut exp = Experiment::from_checkpoint(Checkpoint::load(checkpoint)?)?;
    run_training(&mut exp, out_dir)
}

/// Metric of every task on `split` under the checkpoint's parameters, as
/// `task_id,name,split,metric,value` CSV.
pub fn cmd_eval(checkpoint: &Path, split: Split) -> Result<String> {
    let exp = Experiment::from_checkpoint(Checkpoint::load(checkpoint)?)?;
    let values = exp.evaluate_split(split)?;
    let mut out = String::from("task_id,name,split,metric,value\n");
    for (task, v) in exp.suite.tasks.iter().zip(values) {
        let _ = writeln!(out, "{},{},{},{},{}", task.id, task.name, split.as_str(), metric_name(task.kind), v);
    }
    Ok(out)
}
