use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::checkpoint::Checkpoint;
use super::{write_atomic, Experiment};
use crate::controller::ControllerPolicy;
use crate::error::{Error, Result};

/// The controller's greedy choice for one task and the distribution behind
/// every step of it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskDecision {
    pub task_id: usize,
    pub name: String,
    pub cluster: Option<usize>,
    pub level: Option<usize>,
    pub actions: Vec<usize>,
    pub probabilities: Vec<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchReport {
    pub tasks: Vec<TaskDecision>,
    /// `shared_prefix[i][j]`: length of the common leading module sequence of
    /// tasks `i` and `j`.
    pub shared_prefix: Vec<Vec<usize>>,
}

pub fn shared_prefix_len(a: &[usize], b: &[usize]) -> usize {
    a.iter().zip(b).take_while(|(x, y)| x == y).count()
}

fn policy(exp: &Experiment) -> Result<&ControllerPolicy> {
    exp.policy
        .as_ref()
        .ok_or_else(|| Error::Contract(format!("scheme {} has no controller", exp.config.model.scheme.as_str())))
}

pub fn search_report(exp: &Experiment) -> Result<SearchReport> {
    let policy = policy(exp)?;
    let mut tasks = Vec::new();
    for task in &exp.suite.tasks {
        tasks.push(TaskDecision {
            task_id: task.id,
            name: task.name.clone(),
            cluster: task.cluster,
            level: task.level,
            actions: policy.greedy_decode(&exp.store, task.id)?.actions,
            probabilities: policy.action_distribution_trace(&exp.store, task.id)?,
        });
    }
    let shared_prefix = tasks
        .iter()
        .map(|a| tasks.iter().map(|b| shared_prefix_len(&a.actions, &b.actions)).collect())
        .collect();
    Ok(SearchReport { tasks, shared_prefix })
}

/// `task_id,name,cluster_id,e_1..e_S`; `cluster_id` is empty for tasks
/// without a known cluster.
pub fn embeddings_csv(exp: &Experiment) -> Result<String> {
    let policy = policy(exp)?;
    let table = exp.store.value(policy.task_embeddings.weights);
    let dim = policy.task_embeddings.dim;
    let mut out = String::from("task_id,name,cluster_id");
    for i in 1..=dim {
        let _ = write!(out, ",e_{i}");
    }
    out.push('\n');
    for task in &exp.suite.tasks {
        let cluster = task.cluster.map(|c| c.to_string()).unwrap_or_default();
        let _ = write!(out, "{},{},{}", task.id, task.name, cluster);
        for v in table.row(task.id) {
            let _ = write!(out, ",{v}");
        }
        out.push('\n');
    }
    Ok(out)
}

/// `task_id,step1..step{max_depth}` with the greedy module indices, padded
/// with -1 after Stop.
pub fn selection_coords_csv(exp: &Experiment) -> Result<String> {
    let policy = policy(exp)?;
    let depth = policy.max_depth;
    let mut out = String::from("task_id");
    for i in 1..=depth {
        let _ = write!(out, ",step{i}");
    }
    out.push('\n');
    for task in &exp.suite.tasks {
        let actions = policy.greedy_decode(&exp.store, task.id)?.actions;
        let _ = write!(out, "{}", task.id);
        for i in 0..depth {
            match actions.get(i) {
                Some(a) => {
                    let _ = write!(out, ",{a}");
                }
                None => out.push_str(",-1"),
            }
        }
        out.push('\n');
    }
    Ok(out)
}

/// Writes `search_report.json` and `shared_prefix.csv` into `out_dir`.
pub fn cmd_search_report(checkpoint: &Path, out_dir: &Path) -> Result<SearchReport> {
    let exp = Experiment::from_checkpoint(Checkpoint::load(checkpoint)?)?;
    let report = search_report(&exp)?;
    std::fs::create_dir_all(out_dir)?;
    let json = serde_json::to_string_pretty(&report).map_err(|e| Error::Checkpoint(e.to_string()))?;
    write_atomic(&out_dir.join("search_report.json"), json.as_bytes())?;
    let mut csv = String::from("task_id");
    for t in &report.tasks {
        let _ = write!(csv, ",{}", t.task_id);
    }
    csv.push('\n');
    for (t, row) in report.tasks.iter().zip(&report.shared_prefix) {
        let _ = write!(csv, "{}", t.task_id);
        for v in row {
            let _ = write!(csv, ",{v}");
        }
        csv.push('\n');
    }
    write_atomic(&out_dir.join("shared_prefix.csv"), csv.as_bytes())?;
    Ok(report)
}

pub fn cmd_export_embeddings(checkpoint: &Path, out: &Path) -> Result<()> {
    let exp = Experiment::from_checkpoint(Checkpoint::load(checkpoint)?)?;
    write_atomic(out, embeddings_csv(&exp)?.as_bytes())
}

pub fn cmd_export_selection_coords(checkpoint: &Path, out: &Path) -> Result<()> {
    let exp = Experiment::from_checkpoint(Checkpoint::load(checkpoint)?)?;
    write_atomic(out, selection_coords_csv(&exp)?.as_bytes())
}
