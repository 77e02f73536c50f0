//! Recurrent policy that emits, per task, a sequence of pool modules ended by
//! a Stop action.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::architecture::ActionSequence;
use crate::autodiff::{ParamId, ParamStore, Tape, Var};
use crate::error::{Error, Result};
use crate::layers::{EmbeddingTable, Linear, LstmCell, INIT_SCALE};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControllerConfig {
    /// Width `S` of the task embeddings (also used for action embeddings).
    #[serde(default = "default_task_embed_dim")]
    pub task_embed_dim: usize,
    /// Hidden width of the policy LSTM.
    #[serde(default = "default_hidden")]
    pub hidden: usize,
    /// Half-width of the uniform initializer; 0 gives an all-zero policy.
    #[serde(default = "default_init_scale")]
    pub init_scale: f64,
}

fn default_task_embed_dim() -> usize {
    15
}

fn default_hidden() -> usize {
    50
}

fn default_init_scale() -> f64 {
    INIT_SCALE
}

impl Default for ControllerConfig {
    fn default() -> Self {
        ControllerConfig {
            task_embed_dim: default_task_embed_dim(),
            hidden: default_hidden(),
            init_scale: default_init_scale(),
        }
    }
}

/// LSTM policy over `L + 1` actions (module indices, then Stop at index `L`).
/// The first step reads the task's embedding, later steps the embedding of
/// the previous action.
#[derive(Clone, Debug, PartialEq)]
pub struct ControllerPolicy {
    pub task_embeddings: EmbeddingTable,
    pub action_embeddings: EmbeddingTable,
    pub cell: LstmCell,
    pub output: Linear,
    pub modules: usize,
    pub max_depth: usize,
}

type State = Option<(Var, Var)>;

impl ControllerPolicy {
    pub fn new(
        store: &mut ParamStore,
        tasks: usize,
        modules: usize,
        max_depth: usize,
        cfg: &ControllerConfig,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if modules == 0 || tasks == 0 {
            return Err(Error::Config("controller needs at least one task and one module".into()));
        }
        if max_depth == 0 {
            return Err(Error::Config("max_depth must be at least 1".into()));
        }
        if cfg.task_embed_dim == 0 || cfg.hidden == 0 {
            return Err(Error::Config("controller widths must be positive".into()));
        }
        let s = cfg.task_embed_dim;
        let scale = cfg.init_scale;
        Ok(ControllerPolicy {
            task_embeddings: EmbeddingTable::new(store, "controller.task_embed", tasks, s, scale, rng)?,
            action_embeddings: EmbeddingTable::new(store, "controller.action_embed", modules + 1, s, scale, rng)?,
            cell: LstmCell::new(store, "controller.cell", s, cfg.hidden, scale, rng)?,
            output: Linear::new(store, "controller.out", cfg.hidden, modules + 1, scale, rng)?,
            modules,
            max_depth,
        })
    }

    /// Index of the Stop action.
    pub fn stop(&self) -> usize {
        self.modules
    }

    pub fn tasks(&self) -> usize {
        self.task_embeddings.rows
    }

    pub fn params(&self) -> Vec<ParamId> {
        let mut p = vec![self.task_embeddings.weights, self.action_embeddings.weights];
        p.extend(self.cell.params());
        p.extend(self.output.params());
        p
    }

    fn check_task(&self, task: usize) -> Result<()> {
        if task >= self.tasks() {
            return Err(Error::bounds("controller task", task, self.tasks()));
        }
        Ok(())
    }

    /// Log-probabilities (`1 x (L+1)`) of the next action given the previous
    /// one (`None` at the first step).
    fn step(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        task: usize,
        prev: Option<usize>,
        state: State,
    ) -> Result<(Var, State)> {
        let x = match prev {
            None => self.task_embeddings.lookup(tape, store, &[task])?,
            Some(a) => self.action_embeddings.lookup(tape, store, &[a])?,
        };
        let (h, c) = self.cell.step(tape, store, x, state)?;
        let logits = self.output.forward(tape, store, h)?;
        Ok((tape.log_softmax(logits), Some((h, c))))
    }

    /// Walks the policy, letting `choose` pick each action from the step's
    /// log-probabilities. Returns the actions, the chosen log-probabilities
    /// and every step's distribution.
    fn rollout(
        &self,
        store: &ParamStore,
        task: usize,
        mut choose: impl FnMut(&[f64]) -> usize,
    ) -> Result<(ActionSequence, Vec<Vec<f64>>)> {
        self.check_task(task)?;
        let mut tape = Tape::inference();
        let mut seq = ActionSequence::default();
        let mut trace = Vec::new();
        let mut state = None;
        let mut prev = None;
        while seq.actions.len() < self.max_depth {
            let (lp, next) = self.step(&mut tape, store, task, prev, state)?;
            state = next;
            let lp = tape.value(lp).data().to_vec();
            let a = choose(&lp);
            seq.log_probs.push(lp[a]);
            trace.push(lp);
            if a == self.stop() {
                break;
            }
            seq.actions.push(a);
            prev = Some(a);
        }
        Ok((seq, trace))
    }

    /// Draws an action sequence. At every step, with probability `epsilon` the
    /// action is uniform over all `L + 1` choices, otherwise it follows the
    /// policy; the recorded log-probabilities are always the policy's own.
    pub fn sample_architecture(
        &self,
        store: &ParamStore,
        task: usize,
        epsilon: f64,
        rng: &mut impl Rng,
    ) -> Result<ActionSequence> {
        if !(0.0..=1.0).contains(&epsilon) {
            return Err(Error::Config(format!("exploration probability {epsilon} outside [0, 1]")));
        }
        let n = self.modules + 1;
        let (seq, _) = self.rollout(store, task, |lp| {
            if rng.gen_bool(epsilon) {
                return rng.gen_range(0..n);
            }
            let u: f64 = rng.gen();
            let mut acc = 0.0;
            for (i, &l) in lp.iter().enumerate() {
                acc += l.exp();
                if u < acc {
                    return i;
                }
            }
            n - 1
        })?;
        Ok(seq)
    }

    /// Per-step argmax, ties to the lower index.
    pub fn greedy_decode(&self, store: &ParamStore, task: usize) -> Result<ActionSequence> {
        Ok(self.rollout(store, task, argmax)?.0)
    }

    /// Probability vectors along the greedy path, one per decision taken.
    pub fn action_distribution_trace(&self, store: &ParamStore, task: usize) -> Result<Vec<Vec<f64>>> {
        let (_, trace) = self.rollout(store, task, argmax)?;
        Ok(trace
            .into_iter()
            .map(|lp| lp.into_iter().map(f64::exp).collect())
            .collect())
    }

    /// Differentiable `log pi(actions)`, including the terminal Stop unless
    /// the sequence reached the depth cap.
    pub fn log_prob_of(&self, tape: &mut Tape, store: &ParamStore, task: usize, actions: &[usize]) -> Result<Var> {
        self.check_task(task)?;
        if let Some(&bad) = actions.iter().find(|&&a| a >= self.modules) {
            return Err(Error::bounds("action", bad, self.modules));
        }
        if actions.len() > self.max_depth {
            return Err(Error::Contract(format!(
                "{} actions exceed the depth cap {}",
                actions.len(),
                self.max_depth
            )));
        }
        let mut terms = Vec::new();
        let mut state = None;
        let mut prev = None;
        let stop = self.stop();
        let decisions = actions
            .iter()
            .copied()
            .chain((actions.len() < self.max_depth).then_some(stop));
        for a in decisions {
            let (lp, next) = self.step(tape, store, task, prev, state)?;
            state = next;
            terms.push(tape.pick(lp, &[a])?);
            prev = Some(a);
        }
        let mut total = terms[0];
        for &t in &terms[1..] {
            total = tape.add(total, t)?;
        }
        Ok(tape.sum(total))
    }
}

fn argmax(xs: &[f64]) -> usize {
    crate::architecture::argmax(xs)
}
